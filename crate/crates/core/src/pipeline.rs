//! Turn-level inference: carryover, then type, then span, per slot; dialog
//! rollout; ensembles; oracle substitution; and the per-slot hybrid with
//! the closed-vocabulary baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    derive_carryover_label, derive_type_label, detokenize, find_gold_span, flatten, normalize_value, Dialog,
    DialogState, FlattenedDialog, Schema, SlotType,
};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::heads::{decode_span, decode_span_excluding};
use crate::jst::jst_decode;
use crate::models::{Model, ModelKind, SpanDistributions};

/// Value produced by the span oracle when the gold value does not occur in
/// the passage; it never equals a real gold value.
pub const ORACLE_MISS: &str = "< no span in context >";

/// Which stages are replaced by ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleMask {
    pub carryover: bool,
    pub slot_type: bool,
    pub span: bool,
}

impl OracleMask {
    pub const NONE: OracleMask = OracleMask {
        carryover: false,
        slot_type: false,
        span: false,
    };
    pub const ALL: OracleMask = OracleMask {
        carryover: true,
        slot_type: true,
        span: true,
    };

    pub fn any(&self) -> bool {
        self.carryover || self.slot_type || self.span
    }

    /// Parses a comma-separated list of `carryover`, `type`, `span` or `all`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut mask = OracleMask::NONE;
        for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "carryover" => mask.carryover = true,
                "type" => mask.slot_type = true,
                "span" => mask.span = true,
                "all" => mask = OracleMask::ALL,
                "none" => {}
                other => return Err(Error::Config(format!("unknown oracle stage `{other}`"))),
            }
        }
        Ok(mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Previous value kept.
    Carried,
    /// yes / no / dontcare from the type model.
    Type,
    Span,
    Jst,
    /// Substituted from ground truth.
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanChoice {
    pub start: usize,
    pub end: usize,
    pub probs: SpanDistributions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotPrediction {
    /// Averaged change probability; `None` for the closed-vocabulary
    /// baseline.
    pub change_prob: Option<f64>,
    pub change: bool,
    pub type_probs: Option<[f64; 4]>,
    pub span: Option<SpanChoice>,
    pub value: Option<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnPrediction {
    pub dialog_id: String,
    pub turn: usize,
    pub slots: Vec<SlotPrediction>,
    pub state: DialogState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Change when the change probability is at least this.
    pub threshold: f64,
    pub max_span_len: Option<usize>,
    /// Feed the gold previous state instead of the predicted one.
    pub gold_previous_state: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            threshold: 0.5,
            max_span_len: None,
            gold_previous_state: false,
        }
    }
}

/// Gold states around one turn, needed by oracles.
#[derive(Debug, Clone, Copy)]
pub struct GoldTurn<'a> {
    pub previous: &'a DialogState,
    pub current: &'a DialogState,
}

/// Arithmetic mean accumulated as `m += (x - m) / k`: one member returns
/// its own values, and identical members reproduce them exactly.
fn mean_into(acc: &mut [f64], x: &[f64], k: usize) {
    for (m, v) in acc.iter_mut().zip(x) {
        *m += (v - *m) / k as f64;
    }
}

fn check_members(kind: ModelKind, members: &[Model]) -> Result<()> {
    let first = members
        .first()
        .ok_or_else(|| Error::ArchitectureMismatch(format!("no {kind} checkpoints")))?;
    for m in members {
        if m.kind() != kind {
            return Err(Error::ArchitectureMismatch(format!("expected a {kind} model, found {}", m.kind())));
        }
        if !m.same_architecture(first) {
            return Err(Error::ArchitectureMismatch(format!("{kind} checkpoints differ in architecture")));
        }
    }
    Ok(())
}

/// The three reading-comprehension models, each possibly an ensemble of
/// same-architecture checkpoints whose probabilities are averaged.
#[derive(Debug, Clone)]
pub struct Tracker {
    carryover: Vec<Model>,
    slot_type: Vec<Model>,
    span: Vec<Model>,
    slots: usize,
}

impl Tracker {
    pub fn new(carryover: Vec<Model>, slot_type: Vec<Model>, span: Vec<Model>) -> Result<Self> {
        check_members(ModelKind::Carryover, &carryover)?;
        check_members(ModelKind::Type, &slot_type)?;
        check_members(ModelKind::Span, &span)?;
        let slots = carryover[0].meta.slots.clone();
        if slot_type[0].meta.slots != slots || span[0].meta.slots != slots {
            return Err(Error::ArchitectureMismatch("models were trained on different schemas".into()));
        }
        Ok(Tracker {
            slots: slots.len(),
            carryover,
            slot_type,
            span,
        })
    }

    pub fn single(carryover: Model, slot_type: Model, span: Model) -> Result<Self> {
        Tracker::new(vec![carryover], vec![slot_type], vec![span])
    }

    pub fn slot_count(&self) -> usize {
        self.slots
    }

    fn change_probs(&self, flat: &FlattenedDialog, store: Option<&EmbeddingStore>) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.slots];
        for (k, m) in self.carryover.iter().enumerate() {
            let p = m.as_carryover()?.change_probs(&m.features(flat, store)?)?;
            mean_into(&mut acc, &p, k + 1);
        }
        Ok(acc)
    }

    fn type_probs(&self, flat: &FlattenedDialog, store: Option<&EmbeddingStore>, slots: &[usize]) -> Result<Vec<[f64; 4]>> {
        let mut acc = vec![[0.0; 4]; slots.len()];
        for (k, m) in self.slot_type.iter().enumerate() {
            let p = m.as_type()?.type_probs(&m.features(flat, store)?, slots)?;
            for (a, x) in acc.iter_mut().zip(&p) {
                mean_into(a, x, k + 1);
            }
        }
        Ok(acc)
    }

    fn span_probs(&self, flat: &FlattenedDialog, store: Option<&EmbeddingStore>, slots: &[usize]) -> Result<Vec<SpanDistributions>> {
        let empty = SpanDistributions {
            start: vec![0.0; flat.len()],
            end: vec![0.0; flat.len()],
        };
        let mut acc = vec![empty; slots.len()];
        for (k, m) in self.span.iter().enumerate() {
            let p = m.as_span()?.span_probs(&m.features(flat, store)?, slots)?;
            for (a, x) in acc.iter_mut().zip(&p) {
                mean_into(&mut a.start, &x.start, k + 1);
                mean_into(&mut a.end, &x.end, k + 1);
            }
        }
        Ok(acc)
    }
}

/// Best marker-free span, falling back to the unconstrained decode.
fn choose_span(flat: &FlattenedDialog, probs: SpanDistributions, max_len: Option<usize>) -> SpanChoice {
    let blocked: Vec<bool> = flat.markers.iter().map(Option::is_some).collect();
    let (start, end) = decode_span_excluding(&probs.start, &probs.end, max_len, &blocked)
        .unwrap_or_else(|| decode_span(&probs.start, &probs.end, max_len));
    SpanChoice { start, end, probs }
}

/// Predicts the state after one turn from the previous state.
pub fn predict_turn(
    tracker: &Tracker,
    previous: &DialogState,
    flat: &FlattenedDialog,
    gold: Option<GoldTurn<'_>>,
    mask: OracleMask,
    config: &RolloutConfig,
    store: Option<&EmbeddingStore>,
) -> Result<TurnPrediction> {
    let m = tracker.slot_count();
    if previous.len() != m {
        return Err(Error::shape("predict_turn", m, previous.len()));
    }
    if mask.any() && gold.is_none() {
        return Err(Error::Config("oracle stages need the gold states".into()));
    }
    let gold_value = |i: usize| gold.and_then(|g| g.current.get(i));

    let (change_probs, change): (Vec<Option<f64>>, Vec<bool>) = if mask.carryover {
        let g = gold.expect("checked above");
        (0..m)
            .map(|i| {
                let c = derive_carryover_label(g.previous, g.current, i).is_change();
                (Some(if c { 1.0 } else { 0.0 }), c)
            })
            .unzip()
    } else {
        tracker
            .change_probs(flat, store)?
            .into_iter()
            .map(|p| (Some(p), p >= config.threshold))
            .unzip()
    };

    let mut slots: Vec<SlotPrediction> = (0..m)
        .map(|i| SlotPrediction {
            change_prob: change_probs[i],
            change: change[i],
            type_probs: None,
            span: None,
            value: previous.get(i).map(String::from),
            provenance: Provenance::Carried,
        })
        .collect();

    // type stage
    let changed: Vec<usize> = (0..m).filter(|&i| change[i]).collect();
    let mut needs_span = Vec::new();
    if mask.slot_type {
        for &i in &changed {
            match gold_value(i) {
                None => {
                    slots[i].value = None;
                    slots[i].provenance = Provenance::Oracle;
                }
                Some(v) => match derive_type_label(v) {
                    SlotType::Span => needs_span.push(i),
                    t => {
                        slots[i].value = t.literal().map(String::from);
                        slots[i].provenance = Provenance::Oracle;
                    }
                },
            }
        }
    } else if !changed.is_empty() {
        let probs = tracker.type_probs(flat, store, &changed)?;
        for (&i, p) in changed.iter().zip(probs) {
            let best = (0..4).fold(0, |b, k| if p[k] > p[b] { k } else { b });
            let t = SlotType::from_index(best).expect("four classes");
            slots[i].type_probs = Some(p);
            match t.literal() {
                Some(lit) => {
                    slots[i].value = Some(lit.to_string());
                    slots[i].provenance = Provenance::Type;
                }
                None => needs_span.push(i),
            }
        }
    }

    // span stage
    if mask.span {
        for &i in &needs_span {
            let value = gold_value(i).and_then(|v| find_gold_span(flat, v).map(|_| v.to_string()));
            slots[i].value = Some(value.unwrap_or_else(|| normalize_value(ORACLE_MISS)));
            slots[i].provenance = Provenance::Oracle;
        }
    } else if !needs_span.is_empty() {
        let probs = tracker.span_probs(flat, store, &needs_span)?;
        for (&i, p) in needs_span.iter().zip(probs) {
            let choice = choose_span(flat, p, config.max_span_len);
            slots[i].value = Some(detokenize(&flat.tokens[choice.start..=choice.end]));
            slots[i].provenance = Provenance::Span;
            slots[i].span = Some(choice);
        }
    }

    let state = DialogState::from_values(slots.iter().map(|s| s.value.clone()).collect());
    for (s, v) in slots.iter_mut().zip(state.values()) {
        s.value = v.clone();
    }
    Ok(TurnPrediction {
        dialog_id: flat.dialog_id.clone(),
        turn: flat.turn,
        slots,
        state,
    })
}

/// Rolls the tracker through a dialog, feeding each prediction forward as
/// the next turn's previous state (or the gold one when configured).
pub fn track_dialog(
    tracker: &Tracker,
    dialog: &Dialog,
    mask: OracleMask,
    config: &RolloutConfig,
    store: Option<&EmbeddingStore>,
) -> Result<Vec<TurnPrediction>> {
    let mut previous = DialogState::empty(tracker.slot_count());
    let mut out = Vec::with_capacity(dialog.turns.len());
    for t in 1..=dialog.turns.len() {
        let flat = flatten(dialog, t)?;
        let gold_prev = dialog.previous_state(t);
        let gold = GoldTurn {
            previous: &gold_prev,
            current: &dialog.turns[t - 1].state,
        };
        let prev = if config.gold_previous_state { &gold_prev } else { &previous };
        let pred = predict_turn(tracker, prev, &flat, Some(gold), mask, config, store)?;
        previous = pred.state.clone();
        out.push(pred);
    }
    Ok(out)
}

/// Closed-vocabulary predictions for every slot of every turn. Several
/// checkpoints are averaged like the reading-comprehension ensemble.
pub fn jst_track_dialog(members: &[Model], dialog: &Dialog, store: Option<&EmbeddingStore>) -> Result<Vec<TurnPrediction>> {
    check_members(ModelKind::Jst, members)?;
    let head = &members[0].as_jst()?.head;
    let m = head.slot_count();
    let mut previous = DialogState::empty(m);
    let mut out = Vec::with_capacity(dialog.turns.len());
    for t in 1..=dialog.turns.len() {
        let flat = flatten(dialog, t)?;
        let mut acc: Vec<Vec<f64>> = Vec::new();
        for (k, member) in members.iter().enumerate() {
            let probs = member.as_jst()?.class_probs(&member.features(&flat, store)?)?;
            if acc.is_empty() {
                acc = probs.iter().map(|p| vec![0.0; p.len()]).collect();
            }
            for (a, p) in acc.iter_mut().zip(&probs) {
                mean_into(a, p, k + 1);
            }
        }
        let values: Vec<Option<String>> = acc
            .iter()
            .enumerate()
            .map(|(i, p)| Ok(jst_decode(p, head.classes(i)?)))
            .collect::<Result<_>>()?;
        let state = DialogState::from_values(values);
        let slots = (0..m)
            .map(|i| SlotPrediction {
                change_prob: None,
                change: state.get(i) != previous.get(i),
                type_probs: None,
                span: None,
                value: state.get(i).map(String::from),
                provenance: Provenance::Jst,
            })
            .collect();
        out.push(TurnPrediction {
            dialog_id: dialog.id.clone(),
            turn: t,
            slots,
            state: state.clone(),
        });
        previous = state;
    }
    Ok(out)
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialog_id: String,
    /// 1-based user turn.
    pub turn: usize,
    /// Slots with a value; absent slots are `None`.
    pub state: BTreeMap<String, String>,
    pub provenance: BTreeMap<String, Provenance>,
    /// Per-slot change decisions, when the system makes them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change: Option<BTreeMap<String, bool>>,
}

impl PredictionRecord {
    pub fn from_prediction(pred: &TurnPrediction, schema: &Schema) -> Self {
        let names = schema.names();
        let state = names
            .iter()
            .zip(pred.state.values())
            .filter_map(|(n, v)| v.clone().map(|v| (n.clone(), v)))
            .collect();
        let provenance = names.iter().cloned().zip(pred.slots.iter().map(|s| s.provenance)).collect();
        let change = pred
            .slots
            .iter()
            .all(|s| s.change_prob.is_some())
            .then(|| names.iter().cloned().zip(pred.slots.iter().map(|s| s.change)).collect());
        PredictionRecord {
            dialog_id: pred.dialog_id.clone(),
            turn: pred.turn,
            state,
            provenance,
            change,
        }
    }

    pub fn dialog_state(&self, schema: &Schema) -> Result<DialogState> {
        let mut state = DialogState::empty(schema.len());
        for (k, v) in &self.state {
            state.set(schema.index_of(k)?, Some(v.clone()));
        }
        Ok(state)
    }

    /// Change decisions in schema order, if recorded.
    pub fn change_decisions(&self, schema: &Schema) -> Result<Option<Vec<bool>>> {
        let Some(map) = &self.change else { return Ok(None) };
        let mut out = vec![false; schema.len()];
        for (k, v) in map {
            out[schema.index_of(k)?] = *v;
        }
        Ok(Some(out))
    }

    pub fn key(&self) -> (&str, usize) {
        (&self.dialog_id, self.turn)
    }
}

pub fn predictions_to_jsonl(records: &[PredictionRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn predictions_from_jsonl(text: &str, origin: &str) -> Result<Vec<PredictionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                column: e.column(),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_predictions(path: impl AsRef<std::path::Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    predictions_from_jsonl(&text, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    ReadingComprehension,
    Jst,
}

/// Per slot, takes every turn's value from the system with the higher dev
/// accuracy on that slot; ties go to the reading-comprehension system.
pub fn hybrid_combine(
    rc: &[PredictionRecord],
    jst: &[PredictionRecord],
    rc_accuracy: &BTreeMap<String, f64>,
    jst_accuracy: &BTreeMap<String, f64>,
    schema: &Schema,
) -> Result<(Vec<PredictionRecord>, BTreeMap<String, System>)> {
    if rc.len() != jst.len() {
        return Err(Error::CoverageMismatch(format!("{} vs {} turns", rc.len(), jst.len())));
    }
    let mut choice = BTreeMap::new();
    for name in schema.names() {
        let (Some(a), Some(b)) = (rc_accuracy.get(&name), jst_accuracy.get(&name)) else {
            return Err(Error::CoverageMismatch(format!("no dev accuracy for slot `{name}`")));
        };
        let system = if b > a { System::Jst } else { System::ReadingComprehension };
        choice.insert(name, system);
    }
    let mut out = Vec::with_capacity(rc.len());
    for (r, j) in rc.iter().zip(jst) {
        if r.key() != j.key() {
            return Err(Error::CoverageMismatch(format!(
                "turn {}#{} vs {}#{}",
                r.dialog_id, r.turn, j.dialog_id, j.turn
            )));
        }
        let mut state = BTreeMap::new();
        let mut provenance = BTreeMap::new();
        for (name, system) in &choice {
            let src = match system {
                System::ReadingComprehension => r,
                System::Jst => j,
            };
            if let Some(v) = src.state.get(name) {
                state.insert(name.clone(), v.clone());
            }
            if let Some(p) = src.provenance.get(name) {
                provenance.insert(name.clone(), *p);
            }
        }
        out.push(PredictionRecord {
            dialog_id: r.dialog_id.clone(),
            turn: r.turn,
            state,
            provenance,
            change: None,
        });
    }
    Ok((out, choice))
}
