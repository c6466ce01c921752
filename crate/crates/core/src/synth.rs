//! Small templated dialog corpus for desk-scale experiments, plus an
//! informative stand-in for contextual token embeddings.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{flatten, tokenize, Dialog, DialogState, Ontology, Schema, Speaker, Turn, DONTCARE};
use crate::embeddings::EmbeddingStore;
use crate::error::Result;

pub const SLOTS: [&str; 8] = [
    "hotel.semi.area",
    "hotel.semi.stars",
    "hotel.semi.parking",
    "hotel.semi.pricerange",
    "hotel.book.people",
    "restaurant.semi.food",
    "restaurant.semi.name",
    "taxi.semi.leaveAt",
];

const AREA: usize = 0;
const STARS: usize = 1;
const PARKING: usize = 2;
const PRICE: usize = 3;
const PEOPLE: usize = 4;
const FOOD: usize = 5;
const NAME: usize = 6;
const LEAVE: usize = 7;

const AREAS: &[&str] = &["east", "west", "north", "south", "centre"];
const STAR_VALUES: &[&str] = &["2", "3", "4", "5"];
const PRICES: &[&str] = &["cheap", "moderate", "expensive"];
const PEOPLE_VALUES: &[&str] = &["1", "2", "3", "4", "5", "6"];
const FOODS: &[&str] = &["italian", "chinese", "indian", "british", "thai"];
const NAMES: &[&str] = &["golden wok", "pizza hut", "gardenia cafe", "curry king", "bangkok city", "the eagle"];
const TIMES: &[&str] = &["09:00", "10:30", "12:15", "14:45", "17:30", "19:00"];

const AGENT_GENERIC: &[&str] = &[
    "ok . anything else ?",
    "sure , what else do you need ?",
    "i can help with that .",
    "got it . is there anything else ?",
    "no problem . what else ?",
];

/// Dialog count and seed for one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub dialogs: usize,
    pub max_turns: usize,
    pub seed: u64,
    /// Prefix for dialog ids.
    pub split: &'static str,
}

pub fn schema() -> Schema {
    Schema::from_names(&SLOTS).expect("built-in slot names are valid")
}

/// Every value the generator can emit, per slot.
pub fn ontology() -> Ontology {
    let schema = schema();
    let lists: [Vec<&str>; 8] = [
        AREAS.to_vec(),
        STAR_VALUES.to_vec(),
        vec!["yes", "no"],
        PRICES.iter().copied().chain([DONTCARE]).collect(),
        PEOPLE_VALUES.to_vec(),
        FOODS.to_vec(),
        NAMES.to_vec(),
        TIMES.to_vec(),
    ];
    Ontology::new(
        schema
            .slots()
            .iter()
            .cloned()
            .zip(lists.iter().map(|l| l.iter().map(|v| v.to_string()).collect()))
            .collect(),
    )
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items.choose(rng).copied().expect("non-empty list")
}

fn pick_other<'a>(rng: &mut ChaCha8Rng, items: &[&'a str], current: &str) -> &'a str {
    let rest: Vec<&str> = items.iter().copied().filter(|v| *v != current).collect();
    pick(rng, &rest)
}

fn inform(rng: &mut ChaCha8Rng, slot: usize, value: &str) -> String {
    let templates: &[&str] = match slot {
        AREA => &["i want a hotel in the {}", "somewhere in the {} please", "it should be in the {}"],
        STARS => &["it should have {} stars", "a {} star hotel", "i need {} stars"],
        PARKING if value == "yes" => &["i need free parking", "it must have parking"],
        PARKING => &["parking is not needed", "i do not need parking"],
        PRICE if value == DONTCARE => &["i don't care about the price", "any price is fine"],
        PRICE => &["something {} please", "a {} place", "it should be {}"],
        PEOPLE => &["book it for {} people", "for {} people please", "there are {} of us"],
        FOOD => &["i want {} food", "a {} restaurant please", "i am craving {} food"],
        NAME => &["i am looking for {}", "can you find {} for me"],
        _ => &["i need a taxi at {}", "the taxi should leave at {}", "pick me up at {}"],
    };
    pick(rng, templates).replace("{}", value)
}

fn correct(rng: &mut ChaCha8Rng, value: &str) -> String {
    pick(rng, &["actually make it {} instead", "sorry , change that to {}", "no wait , {} please"]).replace("{}", value)
}

/// Generates one split. Every span value is stated verbatim in the passage
/// at the turn it is set, so full-state coverage is 100%.
pub fn generate(config: SynthConfig) -> Vec<Dialog> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.dialogs)
        .map(|i| generate_dialog(&mut rng, format!("{}-{:03}", config.split, i), config.max_turns))
        .collect()
}

fn generate_dialog(rng: &mut ChaCha8Rng, id: String, max_turns: usize) -> Dialog {
    let n = rng.gen_range(1..=max_turns.max(1));
    let mut state: Vec<Option<String>> = vec![None; SLOTS.len()];
    let mut turns = Vec::with_capacity(n);
    let mut recommended: Option<&str> = None;
    for t in 0..n {
        let agent = if t == 0 {
            None
        } else if state[NAME].is_none() && recommended.is_none() && rng.gen_bool(0.35) {
            let name = pick(rng, NAMES);
            recommended = Some(name);
            Some(format!("how about {name} ?"))
        } else {
            Some(pick(rng, AGENT_GENERIC).to_string())
        };

        let mut phrases = Vec::new();
        if let Some(name) = recommended.take() {
            phrases.push(pick(rng, &["that sounds good", "yes , book that one", "great , i will take it"]).to_string());
            state[NAME] = Some(name.to_string());
        }
        let want = if phrases.is_empty() { rng.gen_range(1..=2) } else { rng.gen_range(0..=1) };
        let mut used = Vec::new();
        for _ in 0..want {
            let open: Vec<usize> = (0..SLOTS.len())
                .filter(|s| state[*s].is_none() && !used.contains(s))
                .collect();
            let correctable: Vec<usize> = [AREA, STARS, PEOPLE, LEAVE]
                .into_iter()
                .filter(|s| state[*s].is_some() && !used.contains(s))
                .collect();
            let fix = !correctable.is_empty() && (open.is_empty() || rng.gen_bool(0.2));
            if fix {
                let slot = *correctable.choose(rng).unwrap();
                let old = state[slot].clone().unwrap();
                let value = pick_other(rng, values_for(slot), &old);
                phrases.push(correct(rng, value));
                state[slot] = Some(value.to_string());
                used.push(slot);
            } else if let Some(&slot) = open.choose(rng) {
                let value = match slot {
                    PARKING => pick(rng, &["yes", "no"]),
                    PRICE if rng.gen_bool(0.25) => DONTCARE,
                    _ => pick(rng, values_for(slot)),
                };
                phrases.push(inform(rng, slot, value));
                state[slot] = Some(value.to_string());
                used.push(slot);
            }
        }
        if phrases.is_empty() {
            phrases.push("thank you".to_string());
        }
        turns.push(Turn {
            agent,
            user: phrases.join(" and "),
            state: DialogState::from_values(state.clone()),
        });
    }
    Dialog { id, turns }
}

fn values_for(slot: usize) -> &'static [&'static str] {
    match slot {
        AREA => AREAS,
        STARS => STAR_VALUES,
        PRICE => PRICES,
        PEOPLE => PEOPLE_VALUES,
        FOOD => FOODS,
        NAME => NAMES,
        _ => TIMES,
    }
}

/// The bundled splits: 50 training and 20 development dialogs.
pub fn bundled() -> (Vec<Dialog>, Vec<Dialog>) {
    let train = generate(SynthConfig {
        dialogs: 50,
        max_turns: 5,
        seed: 2019,
        split: "train",
    });
    let dev = generate(SynthConfig {
        dialogs: 20,
        max_turns: 5,
        seed: 2020,
        split: "dev",
    });
    (train, dev)
}

/// Contextual embeddings covering every passage of [`bundled`].
pub fn bundled_embeddings() -> Result<EmbeddingStore> {
    let (mut dialogs, dev) = bundled();
    dialogs.extend(dev);
    contextual_embeddings(&dialogs, &schema(), &ontology(), EMBEDDING_SEED)
}

/// Seed of the bundled embedding file.
pub const EMBEDDING_SEED: u64 = 7;

/// Width of [`contextual_embeddings`] rows.
pub const CONTEXT_DIM: usize = 100;
const IDENTITY_DIM: usize = CONTEXT_DIM - 5 - 2 * SLOTS.len();
/// Amplitude of the identity code.
const IDENTITY_SCALE: f64 = 1.0;
/// Tokens on either side that count as a token's local context.
const WINDOW: usize = 4;

/// Words that name each slot, in [`SLOTS`] order.
const CUES: [&[&str]; 8] = [
    &["area", "somewhere"],
    &["star", "stars"],
    &["parking"],
    &["price"],
    &["people", "us"],
    &["food", "restaurant"],
    &["looking", "find", "about"],
    &["taxi", "leave", "pick"],
];
const CORRECTION_CUES: &[&str] = &["actually", "instead", "change", "wait"];

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic per-passage token vectors that carry what a contextual
/// encoder would supply, computed from the text alone: a token identity
/// code, speaker and recency flags, which slots the token can be a value of,
/// which of those its local context points to, and whether it sits in a
/// correction.
pub fn contextual_embeddings(dialogs: &[Dialog], schema: &Schema, ontology: &Ontology, seed: u64) -> Result<EmbeddingStore> {
    let slot_count = SLOTS.len().min(schema.len());
    let mut value_slots: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, slot) in schema.slots().iter().enumerate().take(slot_count) {
        for v in ontology.values(slot) {
            for tok in tokenize(v) {
                let list = value_slots.entry(tok).or_default();
                if !list.contains(&i) {
                    list.push(i);
                }
            }
        }
    }
    let mut store = EmbeddingStore::new(CONTEXT_DIM);
    for dialog in dialogs {
        for t in 1..=dialog.turns.len() {
            let flat = flatten(dialog, t)?;
            // utterance index of every token; markers start a new utterance
            let mut utterance = Vec::with_capacity(flat.len());
            let mut u = 0;
            for k in 0..flat.len() {
                if flat.is_marker(k) {
                    u += 1;
                }
                utterance.push(u);
            }
            let near = |k: usize, words: &[&str]| {
                let lo = k.saturating_sub(WINDOW);
                let hi = (k + WINDOW).min(flat.len() - 1);
                (lo..=hi).any(|j| utterance[j] == utterance[k] && words.contains(&flat.tokens[j].as_str()))
            };

            let mut rows = Vec::with_capacity(flat.len() * CONTEXT_DIM);
            for (k, (tok, origin)) in flat.tokens.iter().zip(&flat.origins).enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(tok.as_bytes()));
                let mut row: Vec<f64> = (0..IDENTITY_DIM)
                    .map(|_| IDENTITY_SCALE * rng.gen_range(-1.0..1.0))
                    .collect();
                let (user, latest_user, latest_agent) = match origin {
                    Some(o) => (
                        o.speaker == Speaker::User,
                        o.speaker == Speaker::User && o.turn == t,
                        o.speaker == Speaker::Agent && o.turn == t,
                    ),
                    None => (false, false, false),
                };
                let flag = |b: bool| if b { 1.0 } else { 0.0 };
                row.extend([flag(user), flag(!user && origin.is_some()), flag(latest_user), flag(latest_agent)]);

                let member = value_slots.get(tok).map(Vec::as_slice).unwrap_or(&[]);
                let mut slots = vec![0.0; SLOTS.len()];
                let mut context = vec![0.0; SLOTS.len()];
                for &s in member {
                    slots[s] = 1.0;
                    if member.len() == 1 || near(k, CUES[s]) {
                        context[s] = 1.0;
                    }
                }
                row.extend(slots);
                row.extend(context);
                row.push(flag(origin.is_some() && near(k, CORRECTION_CUES)));
                rows.extend(row);
            }
            store.insert(flat.key(), rows)?;
        }
    }
    Ok(store)
}
