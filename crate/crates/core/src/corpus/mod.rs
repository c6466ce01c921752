//! Dialogs, slot schema and ontology, plus the passage/label derivation used
//! by every model.

mod flatten;
mod labels;
mod tokenize;

pub use flatten::{flatten, FlattenedDialog, Marker, Speaker, TokenOrigin};
pub use labels::{
    build_examples, derivability, derive_carryover_label, derive_type_label, find_gold_span,
    find_last_occurrence, CarryoverLabel, ExampleStats, SlotType, TrainingExample,
};
pub use tokenize::{detokenize, normalize_value, tokenize, tokenize_spanned, SpannedToken, DONTCARE};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A slot identifier of the form `domain.category.name`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotId {
    pub domain: String,
    pub category: String,
    pub name: String,
}

impl SlotId {
    pub fn new(domain: &str, category: &str, name: &str) -> Result<Self> {
        let id = SlotId {
            domain: domain.to_string(),
            category: category.to_string(),
            name: name.to_string(),
        };
        let valid = |s: &str| !s.is_empty() && !s.contains('.') && !s.contains(char::is_whitespace);
        if valid(domain) && valid(category) && valid(name) {
            Ok(id)
        } else {
            Err(Error::InvalidSlotId(id.to_string()))
        }
    }
}

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.domain, self.category, self.name)
    }
}

impl FromStr for SlotId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('.').collect();
        match parts.as_slice() {
            [d, c, n] => SlotId::new(d, c, n),
            _ => Err(Error::InvalidSlotId(s.to_string())),
        }
    }
}

/// The ordered slot inventory. Slot indices are positions in this list and
/// are used throughout for states, question vectors and head columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    slots: Vec<SlotId>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    slots: Vec<String>,
}

impl Schema {
    pub fn new(slots: Vec<SlotId>) -> Result<Self> {
        let mut index = HashMap::with_capacity(slots.len());
        for (i, s) in slots.iter().enumerate() {
            if index.insert(s.to_string(), i).is_some() {
                return Err(Error::DuplicateSlot(s.to_string()));
            }
        }
        Ok(Schema { slots, index })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let slots = names
            .iter()
            .map(|n| n.as_ref().parse())
            .collect::<Result<Vec<SlotId>>>()?;
        Schema::new(slots)
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let file: SchemaFile = parse_json(text, origin)?;
        Schema::from_names(&file.slots)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Schema::from_json_str(&text, &path.display().to_string())
    }

    pub fn to_json_string(&self) -> String {
        let file = SchemaFile {
            slots: self.names(),
        };
        serde_json::to_string_pretty(&file).expect("schema serializes")
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[SlotId] {
        &self.slots
    }

    pub fn slot(&self, index: usize) -> &SlotId {
        &self.slots[index]
    }

    pub fn names(&self) -> Vec<String> {
        self.slots.iter().map(|s| s.to_string()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownSlot(name.to_string()))
    }
}

/// A dialog state: one optional normalized value per schema slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DialogState {
    values: Vec<Option<String>>,
}

impl DialogState {
    pub fn empty(slot_count: usize) -> Self {
        DialogState {
            values: vec![None; slot_count],
        }
    }

    /// Values are normalized on the way in.
    pub fn from_values(values: Vec<Option<String>>) -> Self {
        DialogState {
            values: values
                .into_iter()
                .map(|v| v.map(|s| normalize_value(&s)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, slot: usize) -> Option<&str> {
        self.values[slot].as_deref()
    }

    pub fn set(&mut self, slot: usize, value: Option<String>) {
        self.values[slot] = value.map(|v| normalize_value(&v));
    }

    pub fn values(&self) -> &[Option<String>] {
        &self.values
    }

    /// Sparse map view keyed by rendered slot id; `None` entries included.
    pub fn to_map(&self, schema: &Schema) -> BTreeMap<String, Option<String>> {
        schema
            .slots()
            .iter()
            .zip(&self.values)
            .map(|(s, v)| (s.to_string(), v.clone()))
            .collect()
    }

    /// Missing keys mean `None`; unknown keys are an error.
    pub fn from_map(map: &BTreeMap<String, Option<String>>, schema: &Schema) -> Result<Self> {
        let mut state = DialogState::empty(schema.len());
        for (k, v) in map {
            let i = schema.index_of(k)?;
            state.set(i, v.clone());
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub agent: Option<String>,
    pub user: String,
    pub state: DialogState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialog {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialog {
    /// Gold state before turn `t` (1-based); the empty state for `t == 1`.
    pub fn previous_state(&self, t: usize) -> DialogState {
        if t <= 1 {
            DialogState::empty(self.turns[0].state.len())
        } else {
            self.turns[t - 2].state.clone()
        }
    }

    /// Key used to look up pretrained embedding records for sub-dialog `t`.
    pub fn passage_key(&self, t: usize) -> String {
        passage_key(&self.id, t)
    }
}

pub fn passage_key(dialog_id: &str, t: usize) -> String {
    format!("{dialog_id}#{t}")
}

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    dialogs: Vec<DialogRecord>,
}

#[derive(Serialize, Deserialize)]
struct DialogRecord {
    id: String,
    turns: Vec<TurnRecord>,
}

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    agent: Option<String>,
    user: String,
    #[serde(default)]
    state: BTreeMap<String, Option<String>>,
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn parse_corpus(text: &str, origin: &str, schema: &Schema) -> Result<Vec<Dialog>> {
    let file: CorpusFile = parse_json(text, origin)?;
    file.dialogs
        .into_iter()
        .map(|d| {
            if d.turns.is_empty() {
                return Err(Error::EmptyDialog(d.id));
            }
            let turns = d
                .turns
                .into_iter()
                .enumerate()
                .map(|(i, t)| {
                    let agent = t.agent.filter(|a| !a.trim().is_empty());
                    if tokenize(&t.user).is_empty() {
                        return Err(Error::InvalidDialog {
                            dialog: d.id.clone(),
                            message: format!("turn {} has an empty user utterance", i + 1),
                        });
                    }
                    if i == 0 && agent.is_some() {
                        return Err(Error::InvalidDialog {
                            dialog: d.id.clone(),
                            message: "the first turn cannot have an agent utterance".into(),
                        });
                    }
                    Ok(Turn {
                        agent,
                        user: t.user,
                        state: DialogState::from_map(&t.state, schema)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Dialog { id: d.id, turns })
        })
        .collect()
}

pub fn load_corpus(path: impl AsRef<Path>, schema: &Schema) -> Result<Vec<Dialog>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, &path.display().to_string(), schema)
}

/// Serializes dialogs in the corpus JSON format. `None` state entries are
/// omitted.
pub fn corpus_to_json(dialogs: &[Dialog], schema: &Schema) -> String {
    let file = CorpusFile {
        dialogs: dialogs
            .iter()
            .map(|d| DialogRecord {
                id: d.id.clone(),
                turns: d
                    .turns
                    .iter()
                    .map(|t| TurnRecord {
                        agent: t.agent.clone(),
                        user: t.user.clone(),
                        state: t
                            .state
                            .to_map(schema)
                            .into_iter()
                            .filter(|(_, v)| v.is_some())
                            .collect(),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("corpus serializes")
}

/// Known values per slot, normalized, deduplicated and sorted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Ontology {
    values: BTreeMap<SlotId, Vec<String>>,
}

impl Ontology {
    pub fn new(raw: BTreeMap<SlotId, Vec<String>>) -> Self {
        let values = raw
            .into_iter()
            .map(|(slot, vals)| {
                let set: BTreeSet<String> = vals.iter().map(|v| normalize_value(v)).collect();
                (slot, set.into_iter().collect())
            })
            .collect();
        Ontology { values }
    }

    /// Collects every value appearing in the gold states of `dialogs`.
    pub fn from_dialogs(dialogs: &[Dialog], schema: &Schema) -> Self {
        let mut raw: BTreeMap<SlotId, Vec<String>> = schema
            .slots()
            .iter()
            .map(|s| (s.clone(), Vec::new()))
            .collect();
        for turn in dialogs.iter().flat_map(|d| &d.turns) {
            for (i, v) in turn.state.values().iter().enumerate() {
                if let Some(v) = v {
                    raw.get_mut(schema.slot(i)).unwrap().push(v.clone());
                }
            }
        }
        Ontology::new(raw)
    }

    pub fn from_json_str(text: &str, origin: &str, schema: &Schema) -> Result<Self> {
        let file: BTreeMap<String, Vec<String>> = parse_json(text, origin)?;
        let mut raw = BTreeMap::new();
        for (k, v) in file {
            schema.index_of(&k)?;
            raw.insert(k.parse()?, v);
        }
        Ok(Ontology::new(raw))
    }

    pub fn load(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ontology::from_json_str(&text, &path.display().to_string(), schema)
    }

    pub fn to_json_string(&self) -> String {
        let file: BTreeMap<String, &Vec<String>> =
            self.values.iter().map(|(k, v)| (k.to_string(), v)).collect();
        serde_json::to_string_pretty(&file).expect("ontology serializes")
    }

    /// Values for `slot`; empty when the ontology does not list the slot.
    pub fn values(&self, slot: &SlotId) -> &[String] {
        self.values.get(slot).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::from_names(&["hotel.semi.area", "hotel.semi.stars"]).unwrap()
    }

    #[test]
    fn slot_id_round_trips_and_rejects_bad_forms() {
        let id: SlotId = "bus.book.people".parse().unwrap();
        assert_eq!(id.domain, "bus");
        assert_eq!(id.to_string(), "bus.book.people");
        assert!("bus.people".parse::<SlotId>().is_err());
        assert!("bus..people".parse::<SlotId>().is_err());
        assert!("a.b.c.d".parse::<SlotId>().is_err());
    }

    #[test]
    fn schema_rejects_duplicates() {
        let err = Schema::from_names(&["a.b.c", "a.b.c"]).unwrap_err();
        assert!(matches!(err, Error::DuplicateSlot(_)));
    }

    #[test]
    fn empty_corpus_parses() {
        let d = parse_corpus(r#"{"dialogs": []}"#, "mem", &schema()).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn unknown_slot_is_named() {
        let text = r#"{"dialogs": [{"id": "d", "turns": [
            {"agent": null, "user": "hi", "state": {"hotel.semi.colour": "red"}}]}]}"#;
        let err = parse_corpus(text, "mem", &schema()).unwrap_err();
        assert!(err.to_string().contains("hotel.semi.colour"), "{err}");
    }

    #[test]
    fn empty_dialog_is_an_error() {
        let text = r#"{"dialogs": [{"id": "d0", "turns": []}]}"#;
        assert!(matches!(
            parse_corpus(text, "mem", &schema()),
            Err(Error::EmptyDialog(id)) if id == "d0"
        ));
    }

    #[test]
    fn parse_error_carries_line() {
        let text = "{\"dialogs\": [\n  {\"id\": 3}\n]}";
        match parse_corpus(text, "c.json", &schema()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn first_turn_agent_rejected_but_empty_allowed() {
        let ok = r#"{"dialogs": [{"id": "d", "turns": [{"agent": "", "user": "hi", "state": {}}]}]}"#;
        assert!(parse_corpus(ok, "mem", &schema()).unwrap()[0].turns[0].agent.is_none());
        let bad = r#"{"dialogs": [{"id": "d", "turns": [{"agent": "hello", "user": "hi", "state": {}}]}]}"#;
        assert!(parse_corpus(bad, "mem", &schema()).is_err());
    }

    #[test]
    fn ontology_normalizes_and_sorts() {
        let s = schema();
        let o = Ontology::from_json_str(
            r#"{"hotel.semi.area": ["West", "east", "EAST", "centre"]}"#,
            "mem",
            &s,
        )
        .unwrap();
        assert_eq!(o.values(s.slot(0)), ["centre", "east", "west"]);
        assert!(o.values(s.slot(1)).is_empty());
        assert!(Ontology::from_json_str(r#"{"x.y.z": []}"#, "mem", &s).is_err());
    }

    #[test]
    fn corpus_json_round_trip() {
        let s = schema();
        let text = r#"{"dialogs": [{"id": "d", "turns": [
            {"agent": null, "user": "east please", "state": {"hotel.semi.area": "East"}},
            {"agent": "ok", "user": "4 stars", "state": {"hotel.semi.area": "east", "hotel.semi.stars": "4"}}]}]}"#;
        let dialogs = parse_corpus(text, "mem", &s).unwrap();
        let again = parse_corpus(&corpus_to_json(&dialogs, &s), "mem", &s).unwrap();
        assert_eq!(dialogs, again);
        assert_eq!(dialogs[0].turns[0].state.get(0), Some("east"));
    }
}
