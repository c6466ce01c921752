use std::ops::Range;

use super::tokenize::tokenize_spanned;
use super::Dialog;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Marker {
    User,
    Agent,
}

impl Marker {
    pub const fn token(self) -> &'static str {
        match self {
            Marker::User => "[U]",
            Marker::Agent => "[A]",
        }
    }

    pub fn from_token(token: &str) -> Option<Marker> {
        match token {
            "[U]" => Some(Marker::User),
            "[A]" => Some(Marker::Agent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Speaker {
    User,
    Agent,
}

/// Where a non-marker token came from: 1-based turn, speaker, byte range in
/// that utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenOrigin {
    pub turn: usize,
    pub speaker: Speaker,
    pub chars: Range<usize>,
}

/// The sub-dialog ending at user turn `turn`, as one token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlattenedDialog {
    pub dialog_id: String,
    pub turn: usize,
    pub tokens: Vec<String>,
    /// `Some` at marker positions.
    pub markers: Vec<Option<Marker>>,
    /// `Some` at every non-marker position.
    pub origins: Vec<Option<TokenOrigin>>,
}

impl FlattenedDialog {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_marker(&self, position: usize) -> bool {
        self.markers[position].is_some()
    }

    pub fn marker_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_marker(i)).collect()
    }

    pub fn key(&self) -> String {
        super::passage_key(&self.dialog_id, self.turn)
    }

    fn push_marker(&mut self, marker: Marker) {
        self.tokens.push(marker.token().to_string());
        self.markers.push(Some(marker));
        self.origins.push(None);
    }

    fn push_utterance(&mut self, text: &str, turn: usize, speaker: Speaker) {
        for tok in tokenize_spanned(text) {
            self.tokens.push(tok.text);
            self.markers.push(None);
            self.origins.push(Some(TokenOrigin {
                turn,
                speaker,
                chars: tok.span,
            }));
        }
    }
}

/// Flattens `u_1, a_1, u_2, ..., u_t` with `[U]`/`[A]` markers. In the corpus
/// each turn pairs a user utterance with the agent utterance *preceding* it,
/// so agent text of turn `k` is emitted right before user text of turn `k`.
pub fn flatten(dialog: &Dialog, t: usize) -> Result<FlattenedDialog> {
    if t == 0 || t > dialog.turns.len() {
        return Err(Error::TurnOutOfRange {
            turn: t,
            turns: dialog.turns.len(),
        });
    }
    let mut flat = FlattenedDialog {
        dialog_id: dialog.id.clone(),
        turn: t,
        tokens: Vec::new(),
        markers: Vec::new(),
        origins: Vec::new(),
    };
    for (k, turn) in dialog.turns[..t].iter().enumerate() {
        if let Some(agent) = &turn.agent {
            flat.push_marker(Marker::Agent);
            flat.push_utterance(agent, k + 1, Speaker::Agent);
        }
        flat.push_marker(Marker::User);
        flat.push_utterance(&turn.user, k + 1, Speaker::User);
    }
    Ok(flat)
}
