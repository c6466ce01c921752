//! Supervision labels for the carryover, slot-type and span models.

use serde::{Deserialize, Serialize};

use super::flatten::{flatten, FlattenedDialog};
use super::tokenize::{normalize_value, tokenize, DONTCARE};
use super::{Dialog, DialogState, Schema, SlotId};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CarryoverLabel {
    Keep,
    Change,
}

impl CarryoverLabel {
    pub fn is_change(self) -> bool {
        self == CarryoverLabel::Change
    }
}

/// Slot type classes, in the fixed order used by the type head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SlotType {
    Yes,
    No,
    DontCare,
    Span,
}

impl SlotType {
    pub const ALL: [SlotType; 4] = [SlotType::Yes, SlotType::No, SlotType::DontCare, SlotType::Span];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<SlotType> {
        SlotType::ALL.get(i).copied()
    }

    /// The literal state value of a non-span type.
    pub fn literal(self) -> Option<&'static str> {
        match self {
            SlotType::Yes => Some("yes"),
            SlotType::No => Some("no"),
            SlotType::DontCare => Some(DONTCARE),
            SlotType::Span => None,
        }
    }
}

pub fn derive_carryover_label(prev: &DialogState, cur: &DialogState, slot: usize) -> CarryoverLabel {
    // States hold normalized values already.
    if prev.get(slot) == cur.get(slot) {
        CarryoverLabel::Keep
    } else {
        CarryoverLabel::Change
    }
}

pub fn derive_type_label(value: &str) -> SlotType {
    match normalize_value(value).as_str() {
        "yes" => SlotType::Yes,
        "no" => SlotType::No,
        DONTCARE => SlotType::DontCare,
        _ => SlotType::Span,
    }
}

/// Start index of the last occurrence of `needle` in `haystack`.
pub fn find_last_occurrence<S: AsRef<str>>(haystack: &[S], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    (0..=haystack.len() - needle.len()).rev().find(|&start| {
        needle
            .iter()
            .zip(&haystack[start..])
            .all(|(n, h)| n == h.as_ref())
    })
}

/// Inclusive token span of the last occurrence of `value` in the passage.
pub fn find_gold_span(flat: &FlattenedDialog, value: &str) -> Option<(usize, usize)> {
    let needle = tokenize(&normalize_value(value));
    find_last_occurrence(&flat.tokens, &needle).map(|s| (s, s + needle.len() - 1))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub dialog_id: String,
    /// 1-based user turn.
    pub turn: usize,
    pub slot: SlotId,
    pub slot_index: usize,
    pub carryover: CarryoverLabel,
    pub slot_type: Option<SlotType>,
    pub span: Option<(usize, usize)>,
    /// False only for span-typed values with no occurrence in the passage.
    pub answerable: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExampleStats {
    pub examples: usize,
    pub changes: usize,
    pub deletions: usize,
    pub typed: usize,
    pub span_typed: usize,
    pub answerable_spans: usize,
    pub unanswerable_spans: usize,
}

/// One example per (dialog, turn, slot), in dialog, turn, schema order.
pub fn build_examples(dialogs: &[Dialog], schema: &Schema) -> Result<(Vec<TrainingExample>, ExampleStats)> {
    let mut examples = Vec::with_capacity(dialogs.iter().map(|d| d.turns.len()).sum::<usize>() * schema.len());
    let mut stats = ExampleStats::default();
    for dialog in dialogs {
        let mut prev = DialogState::empty(schema.len());
        for (k, turn) in dialog.turns.iter().enumerate() {
            let t = k + 1;
            let flat = flatten(dialog, t)?;
            for (slot_index, slot) in schema.slots().iter().enumerate() {
                let carryover = derive_carryover_label(&prev, &turn.state, slot_index);
                let value = turn.state.get(slot_index);
                let slot_type = match (carryover, value) {
                    (CarryoverLabel::Change, Some(v)) => Some(derive_type_label(v)),
                    _ => None,
                };
                let span = match (slot_type, value) {
                    (Some(SlotType::Span), Some(v)) => find_gold_span(&flat, v),
                    _ => None,
                };
                let answerable = slot_type != Some(SlotType::Span) || span.is_some();

                stats.examples += 1;
                if carryover.is_change() {
                    stats.changes += 1;
                    if value.is_none() {
                        stats.deletions += 1;
                    }
                }
                if slot_type.is_some() {
                    stats.typed += 1;
                }
                if slot_type == Some(SlotType::Span) {
                    stats.span_typed += 1;
                    if answerable {
                        stats.answerable_spans += 1;
                    } else {
                        stats.unanswerable_spans += 1;
                    }
                }
                examples.push(TrainingExample {
                    dialog_id: dialog.id.clone(),
                    turn: t,
                    slot: slot.clone(),
                    slot_index,
                    carryover,
                    slot_type,
                    span,
                    answerable,
                });
            }
            prev = turn.state.clone();
        }
    }
    Ok((examples, stats))
}

/// Per turn, whether the whole gold state can be produced from the passage:
/// every slot is `None`, a yes/no/dontcare literal, or a value found in the
/// passage of the turn at which the slot last changed to it.
pub fn derivability(dialog: &Dialog) -> Result<Vec<bool>> {
    let slots = dialog.turns[0].state.len();
    let mut prev = DialogState::empty(slots);
    let mut slot_ok = vec![true; slots];
    let mut out = Vec::with_capacity(dialog.turns.len());
    for (k, turn) in dialog.turns.iter().enumerate() {
        let flat = flatten(dialog, k + 1)?;
        for (i, ok) in slot_ok.iter_mut().enumerate() {
            if derive_carryover_label(&prev, &turn.state, i).is_change() {
                *ok = match turn.state.get(i) {
                    None => true,
                    Some(v) => derive_type_label(v) != SlotType::Span || find_gold_span(&flat, v).is_some(),
                };
            }
        }
        out.push(slot_ok.iter().all(|&b| b));
        prev = turn.state.clone();
    }
    Ok(out)
}
