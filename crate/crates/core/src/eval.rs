//! Metrics over predicted and gold dialog states: joint goal accuracy,
//! per-slot accuracy, carryover turn accuracy, accuracy by depth and the
//! error taxonomy.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    derivability, derive_carryover_label, find_gold_span, find_last_occurrence, flatten, tokenize, Dialog, DialogState,
    FlattenedDialog, Schema,
};
use crate::error::{Error, Result};
use crate::pipeline::PredictionRecord;

/// One evaluated user turn with predicted and gold states side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedTurn {
    pub dialog_id: String,
    pub turn: usize,
    pub predicted: DialogState,
    pub gold: DialogState,
    pub change: Option<Vec<bool>>,
    pub gold_change: Vec<bool>,
}

/// Matches prediction records to gold turns, in corpus order. Every gold
/// turn needs exactly one record and every record a gold turn.
pub fn align(records: &[PredictionRecord], dialogs: &[Dialog], schema: &Schema) -> Result<Vec<AlignedTurn>> {
    let mut by_key: HashMap<(&str, usize), &PredictionRecord> = HashMap::with_capacity(records.len());
    for r in records {
        if by_key.insert(r.key(), r).is_some() {
            return Err(Error::MisalignedTurns(format!("duplicate prediction for {}#{}", r.dialog_id, r.turn)));
        }
    }
    let mut out = Vec::with_capacity(records.len());
    for d in dialogs {
        for (i, turn) in d.turns.iter().enumerate() {
            let t = i + 1;
            let r = by_key
                .remove(&(d.id.as_str(), t))
                .ok_or_else(|| Error::MisalignedTurns(format!("no prediction for {}#{t}", d.id)))?;
            let previous = d.previous_state(t);
            out.push(AlignedTurn {
                dialog_id: d.id.clone(),
                turn: t,
                predicted: r.dialog_state(schema)?,
                gold: turn.state.clone(),
                change: r.change_decisions(schema)?,
                gold_change: gold_change_labels(&previous, &turn.state),
            });
        }
    }
    if let Some((id, t)) = by_key.into_keys().min() {
        return Err(Error::MisalignedTurns(format!("prediction for unknown turn {id}#{t}")));
    }
    Ok(out)
}

/// Gold change decisions for one turn, in slot order.
pub fn gold_change_labels(previous: &DialogState, current: &DialogState) -> Vec<bool> {
    (0..current.len())
        .map(|i| derive_carryover_label(previous, current, i).is_change())
        .collect()
}

fn check_pairs(predicted: &[DialogState], gold: &[DialogState]) -> Result<()> {
    if predicted.len() != gold.len() {
        return Err(Error::MisalignedTurns(format!("{} predicted turns, {} gold", predicted.len(), gold.len())));
    }
    for (p, g) in predicted.iter().zip(gold) {
        if p.len() != g.len() {
            return Err(Error::shape("state", g.len(), p.len()));
        }
    }
    Ok(())
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Fraction of turns whose whole predicted state equals gold.
pub fn joint_goal_accuracy(predicted: &[DialogState], gold: &[DialogState]) -> Result<f64> {
    check_pairs(predicted, gold)?;
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(fraction(hits, gold.len()))
}

/// Per slot, the fraction of turns with the exact value; `None` is a value.
pub fn per_slot_accuracy(predicted: &[DialogState], gold: &[DialogState]) -> Result<Vec<f64>> {
    check_pairs(predicted, gold)?;
    let m = gold.first().map_or(0, DialogState::len);
    Ok((0..m)
        .map(|i| {
            let hits = predicted.iter().zip(gold).filter(|(p, g)| p.get(i) == g.get(i)).count();
            fraction(hits, gold.len())
        })
        .collect())
}

/// A turn counts as correct when every slot's keep/change decision matches.
pub fn carryover_turn_accuracy(decisions: &[Vec<bool>], gold: &[Vec<bool>]) -> Result<f64> {
    if decisions.len() != gold.len() {
        return Err(Error::MisalignedTurns(format!("{} decided turns, {} gold", decisions.len(), gold.len())));
    }
    let hits = decisions.iter().zip(gold).filter(|(d, g)| d == g).count();
    Ok(fraction(hits, gold.len()))
}

/// Fraction of user turns whose whole gold state is derivable from the
/// passages.
pub fn derivability_coverage(dialogs: &[Dialog]) -> Result<f64> {
    let mut hits = 0;
    let mut total = 0;
    for d in dialogs {
        let flags = derivability(d)?;
        total += flags.len();
        hits += flags.iter().filter(|&&b| b).count();
    }
    Ok(fraction(hits, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub depth: usize,
    pub total: usize,
    pub incorrect: usize,
    pub percent_incorrect: f64,
}

/// Turn-level error rate grouped by 1-based turn index.
pub fn depth_breakdown(turns: &[AlignedTurn]) -> Vec<DepthRow> {
    let mut rows: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for t in turns {
        let row = rows.entry(t.turn).or_default();
        row.0 += 1;
        if t.predicted != t.gold {
            row.1 += 1;
        }
    }
    rows.into_iter()
        .map(|(depth, (total, incorrect))| DepthRow {
            depth,
            total,
            incorrect,
            percent_incorrect: 100.0 * fraction(incorrect, total),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    /// Predicted a value where gold has none.
    UnanswerableSpurious,
    /// Predicted nothing where gold has a value.
    UnanswerableMissed,
    /// One value's tokens strictly contain the other's; both occur in the
    /// passage.
    Boundary,
    /// The gold value does not occur in the passage.
    Resolution,
    /// Any other wrong value.
    Reference,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::UnanswerableSpurious,
        ErrorCategory::UnanswerableMissed,
        ErrorCategory::Boundary,
        ErrorCategory::Resolution,
        ErrorCategory::Reference,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ErrorCategory::UnanswerableSpurious => "Unanswerable slot (predicted value, gold none)",
            ErrorCategory::UnanswerableMissed => "Unanswerable slot (predicted none, gold value)",
            ErrorCategory::Boundary => "Imprecise slot boundary",
            ErrorCategory::Resolution => "Imprecise slot resolution",
            ErrorCategory::Reference => "Imprecise slot reference",
        }
    }
}

fn strictly_contains(outer: &[String], inner: &[String]) -> bool {
    outer.len() > inner.len() && find_last_occurrence(outer, inner).is_some()
}

/// Category of one slot error, or `None` when the prediction is right.
pub fn categorize_error(predicted: Option<&str>, gold: Option<&str>, context: &FlattenedDialog) -> Option<ErrorCategory> {
    let (p, g) = match (predicted, gold) {
        (p, g) if p == g => return None,
        (Some(_), None) => return Some(ErrorCategory::UnanswerableSpurious),
        (None, Some(_)) => return Some(ErrorCategory::UnanswerableMissed),
        (Some(p), Some(g)) => (p, g),
        (None, None) => unreachable!(),
    };
    let gold_found = find_gold_span(context, g).is_some();
    let pred_found = find_gold_span(context, p).is_some();
    let (pt, gt) = (tokenize(p), tokenize(g));
    if gold_found && pred_found && (strictly_contains(&pt, &gt) || strictly_contains(&gt, &pt)) {
        Some(ErrorCategory::Boundary)
    } else if !gold_found {
        Some(ErrorCategory::Resolution)
    } else {
        Some(ErrorCategory::Reference)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub counts: BTreeMap<ErrorCategory, usize>,
    pub total: usize,
}

impl ErrorCounts {
    pub fn count(&self, c: ErrorCategory) -> usize {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    pub fn percent(&self, c: ErrorCategory) -> f64 {
        100.0 * fraction(self.count(c), self.total)
    }
}

/// Categorizes every wrong (turn, slot); `contexts[k]` is turn `k`'s passage.
pub fn categorize_errors(turns: &[AlignedTurn], contexts: &[FlattenedDialog]) -> Result<ErrorCounts> {
    if turns.len() != contexts.len() {
        return Err(Error::MisalignedTurns(format!("{} turns, {} contexts", turns.len(), contexts.len())));
    }
    let mut out = ErrorCounts::default();
    for (t, ctx) in turns.iter().zip(contexts) {
        for i in 0..t.gold.len() {
            if let Some(c) = categorize_error(t.predicted.get(i), t.gold.get(i), ctx) {
                *out.counts.entry(c).or_default() += 1;
                out.total += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub category: ErrorCategory,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub turns: usize,
    pub joint_goal_accuracy: f64,
    pub per_slot_accuracy: BTreeMap<String, f64>,
    /// Present when the predictions record change decisions.
    pub carryover_turn_accuracy: Option<f64>,
    pub depth: Vec<DepthRow>,
    pub errors: Vec<ErrorRow>,
    pub total_errors: usize,
}

/// Full report for a prediction file against a gold corpus.
pub fn evaluate(records: &[PredictionRecord], dialogs: &[Dialog], schema: &Schema) -> Result<MetricsReport> {
    let turns = align(records, dialogs, schema)?;
    let predicted: Vec<DialogState> = turns.iter().map(|t| t.predicted.clone()).collect();
    let gold: Vec<DialogState> = turns.iter().map(|t| t.gold.clone()).collect();
    let slot_acc = per_slot_accuracy(&predicted, &gold)?;
    let carryover = match turns.iter().map(|t| t.change.clone()).collect::<Option<Vec<_>>>() {
        Some(decisions) if !turns.is_empty() => {
            let gold_change: Vec<Vec<bool>> = turns.iter().map(|t| t.gold_change.clone()).collect();
            Some(carryover_turn_accuracy(&decisions, &gold_change)?)
        }
        _ => None,
    };
    let mut contexts = Vec::with_capacity(turns.len());
    for d in dialogs {
        for t in 1..=d.turns.len() {
            contexts.push(flatten(d, t)?);
        }
    }
    let errors = categorize_errors(&turns, &contexts)?;
    Ok(MetricsReport {
        turns: turns.len(),
        joint_goal_accuracy: joint_goal_accuracy(&predicted, &gold)?,
        per_slot_accuracy: schema.names().into_iter().zip(slot_acc).collect(),
        carryover_turn_accuracy: carryover,
        depth: depth_breakdown(&turns),
        errors: ErrorCategory::ALL
            .iter()
            .map(|&c| ErrorRow {
                category: c,
                count: errors.count(c),
                percent: errors.percent(c),
            })
            .collect(),
        total_errors: errors.total,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Plain-text tables for the terminal.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "turns evaluated        {}", self.turns);
        let _ = writeln!(s, "joint goal accuracy    {:.2}%", 100.0 * self.joint_goal_accuracy);
        if let Some(c) = self.carryover_turn_accuracy {
            let _ = writeln!(s, "carryover turn acc.    {:.2}%", 100.0 * c);
        }
        let width = self.per_slot_accuracy.keys().map(String::len).max().unwrap_or(4).max(4);
        let _ = writeln!(s, "\n{:<width$}  accuracy", "slot");
        for (slot, acc) in &self.per_slot_accuracy {
            let _ = writeln!(s, "{slot:<width$}  {acc:.4}");
        }
        let _ = writeln!(s, "\ndepth  turns  % incorrect");
        for r in &self.depth {
            let _ = writeln!(s, "{:>5}  {:>5}  {:>11.2}", r.depth, r.total, r.percent_incorrect);
        }
        let _ = writeln!(s, "\n{:<48}  {:>6}  {:>7}", "error category", "count", "%");
        for r in &self.errors {
            let _ = writeln!(s, "{:<48}  {:>6}  {:>7.2}", r.category.label(), r.count, r.percent);
        }
        let _ = writeln!(s, "{:<48}  {:>6}", "total slot errors", self.total_errors);
        s
    }
}
