//! Passage encoder: token features → affine projection → bidirectional LSTM.
//!
//! Each position gets `d_i = (backward_i ; forward_i)` and the passage gets
//! the dialog embedding `e = (backward_1 ; forward_L)`. The encoder also owns
//! one learned question vector per slot.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{flatten, Dialog, FlattenedDialog, Marker};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::nn::{add_assign, Affine, HasParams, Initializer, LstmCell, LstmStep, Parameter};

pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Width of trainable token embeddings.
    pub embed_dim: usize,
    /// Width of the affine layer between embeddings and the LSTM.
    pub proj_dim: usize,
    /// LSTM units per direction.
    pub hidden: usize,
    pub question_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 100,
            proj_dim: 200,
            hidden: 50,
            question_dim: 100,
        }
    }
}

impl EncoderConfig {
    /// Width of `d_i` and `e`.
    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.proj_dim == 0 || self.hidden == 0 || self.question_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EmbeddingMode {
    Trainable,
    /// Frozen rows from an [`EmbeddingStore`] of width `dim`.
    Pretrained { dim: usize },
}

/// Token inventory for trainable embeddings. Ids 0–2 are `<unk>`, `[U]`,
/// `[A]`; the rest are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(tokens: impl IntoIterator<Item = String>) -> Self {
        let rest: BTreeSet<String> = tokens
            .into_iter()
            .filter(|t| t != UNK && Marker::from_token(t).is_none())
            .collect();
        let tokens: Vec<String> = [UNK, Marker::User.token(), Marker::Agent.token()]
            .into_iter()
            .map(String::from)
            .chain(rest)
            .collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    /// Every token of every utterance, minimum frequency 1.
    pub fn from_dialogs(dialogs: &[Dialog]) -> Result<Self> {
        let mut tokens = BTreeSet::new();
        for d in dialogs {
            tokens.extend(flatten(d, d.turns.len())?.tokens);
        }
        Ok(Vocab::new(tokens))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }
}

/// Encoder input for one passage.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenFeatures {
    /// Vocabulary ids (trainable mode).
    Ids(Vec<usize>),
    /// Frozen vectors; marker positions use learned marker vectors instead.
    Dense {
        rows: Vec<Vec<f64>>,
        markers: Vec<Option<Marker>>,
    },
}

impl TokenFeatures {
    pub fn len(&self) -> usize {
        match self {
            TokenFeatures::Ids(ids) => ids.len(),
            TokenFeatures::Dense { rows, .. } => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reversed sequence, used to check direction symmetry.
    pub fn reversed(&self) -> TokenFeatures {
        match self {
            TokenFeatures::Ids(ids) => TokenFeatures::Ids(ids.iter().rev().copied().collect()),
            TokenFeatures::Dense { rows, markers } => TokenFeatures::Dense {
                rows: rows.iter().rev().cloned().collect(),
                markers: markers.iter().rev().copied().collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogEncoding {
    /// `d_1 … d_L`, each `2·hidden` wide, backward half first.
    pub tokens: Vec<Vec<f64>>,
    /// `e = (backward_1 ; forward_L)`.
    pub embedding: Vec<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    inputs: Vec<Vec<f64>>,
    projected: Vec<Vec<f64>>,
    forward: Vec<LstmStep>,
    backward: Vec<LstmStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub mode: EmbeddingMode,
    vocab: Option<Vocab>,
    /// `[vocab × embed_dim]` when trainable, `[2 × dim]` marker rows when
    /// pretrained.
    pub embedding: Parameter,
    pub projection: Affine,
    pub lstm_forward: LstmCell,
    pub lstm_backward: LstmCell,
    /// `[slots × question_dim]`
    pub questions: Parameter,
}

impl Encoder {
    /// Trainable-embedding encoder over `vocab`.
    pub fn trainable(config: EncoderConfig, vocab: Vocab, slots: usize, init: &mut Initializer) -> Result<Self> {
        config.validate()?;
        let embedding = init.uniform("encoder.embedding", &[vocab.len(), config.embed_dim]);
        Ok(Self::assemble(config, EmbeddingMode::Trainable, Some(vocab), embedding, config.embed_dim, slots, init))
    }

    /// Encoder over frozen `dim`-wide input vectors.
    pub fn pretrained(config: EncoderConfig, dim: usize, slots: usize, init: &mut Initializer) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::Config("pretrained embedding dimension must be positive".into()));
        }
        let markers = init.uniform("encoder.markers", &[2, dim]);
        Ok(Self::assemble(config, EmbeddingMode::Pretrained { dim }, None, markers, dim, slots, init))
    }

    fn assemble(
        config: EncoderConfig,
        mode: EmbeddingMode,
        vocab: Option<Vocab>,
        embedding: Parameter,
        input_dim: usize,
        slots: usize,
        init: &mut Initializer,
    ) -> Self {
        let projection = Affine::new("encoder.projection", input_dim, config.proj_dim, init);
        let lstm_forward = LstmCell::new("encoder.lstm_forward", config.proj_dim, config.hidden, init);
        let lstm_backward = LstmCell::new("encoder.lstm_backward", config.proj_dim, config.hidden, init);
        let questions = init.uniform("encoder.questions", &[slots, config.question_dim]);
        Encoder {
            config,
            mode,
            vocab,
            embedding,
            projection,
            lstm_forward,
            lstm_backward,
            questions,
        }
    }

    pub fn vocab(&self) -> Option<&Vocab> {
        self.vocab.as_ref()
    }

    pub fn slot_count(&self) -> usize {
        self.questions.value.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Builds the encoder input for a passage. Pretrained mode needs the
    /// store holding the passage's record.
    pub fn features(&self, flat: &FlattenedDialog, store: Option<&EmbeddingStore>) -> Result<TokenFeatures> {
        match self.mode {
            EmbeddingMode::Trainable => {
                let vocab = self.vocab.as_ref().expect("trainable encoder has a vocabulary");
                Ok(TokenFeatures::Ids(flat.tokens.iter().map(|t| vocab.id(t)).collect()))
            }
            EmbeddingMode::Pretrained { dim } => {
                let store = store.ok_or_else(|| Error::MissingEmbedding(flat.key()))?;
                if store.dim() != dim {
                    return Err(Error::EmbeddingDimension {
                        expected: dim,
                        found: store.dim(),
                    });
                }
                let rows = store.rows(&flat.key(), flat.len())?;
                Ok(TokenFeatures::Dense {
                    rows: rows.into_iter().map(<[f64]>::to_vec).collect(),
                    markers: flat.markers.clone(),
                })
            }
        }
    }

    /// Input vectors `p_i`.
    pub fn embed(&self, features: &TokenFeatures) -> Result<Vec<Vec<f64>>> {
        match (features, self.mode) {
            (TokenFeatures::Ids(ids), EmbeddingMode::Trainable) => ids
                .iter()
                .map(|&id| {
                    if id < self.embedding.value.shape()[0] {
                        Ok(self.embedding.value.row(id).to_vec())
                    } else {
                        Err(Error::shape("embed_tokens", "a vocabulary id", id))
                    }
                })
                .collect(),
            (TokenFeatures::Dense { rows, markers }, EmbeddingMode::Pretrained { dim }) => rows
                .iter()
                .zip(markers)
                .map(|(row, marker)| match marker {
                    Some(m) => Ok(self.embedding.value.row(marker_row(*m)).to_vec()),
                    None if row.len() == dim => Ok(row.clone()),
                    None => Err(Error::EmbeddingDimension {
                        expected: dim,
                        found: row.len(),
                    }),
                })
                .collect(),
            _ => Err(Error::Config("token features do not match the embedding mode".into())),
        }
    }

    pub fn encode(&self, features: &TokenFeatures) -> Result<(DialogEncoding, EncoderCache)> {
        if features.is_empty() {
            return Err(Error::shape("encode", "at least one token", 0));
        }
        let inputs = self.embed(features)?;
        let projected = self.projection.forward_many(&inputs)?;
        let forward = self.lstm_forward.run(projected.iter().map(Vec::as_slice))?;
        let backward = self.lstm_backward.run(projected.iter().rev().map(Vec::as_slice))?;

        let len = projected.len();
        let tokens: Vec<Vec<f64>> = (0..len)
            .map(|i| {
                let mut d = backward[len - 1 - i].h.clone();
                d.extend_from_slice(&forward[i].h);
                d
            })
            .collect();
        let mut embedding = backward[len - 1].h.clone();
        embedding.extend_from_slice(&forward[len - 1].h);
        Ok((
            DialogEncoding { tokens, embedding },
            EncoderCache {
                inputs,
                projected,
                forward,
                backward,
            },
        ))
    }

    /// Backward pass. `grad_tokens` (if any) holds `dL/dd_i`; `grad_embedding`
    /// holds `dL/de`. Gradients accumulate into the encoder parameters;
    /// frozen pretrained rows receive none.
    pub fn backward(
        &mut self,
        features: &TokenFeatures,
        cache: &EncoderCache,
        grad_tokens: Option<Vec<Vec<f64>>>,
        grad_embedding: Option<&[f64]>,
    ) -> Result<()> {
        let len = cache.projected.len();
        let hs = self.config.hidden;
        let mut grads = grad_tokens.unwrap_or_else(|| vec![vec![0.0; 2 * hs]; len]);
        if grads.len() != len || grads.iter().any(|g| g.len() != 2 * hs) {
            return Err(Error::shape("encoder_backward", format!("{len} × {}", 2 * hs), grads.len()));
        }
        if let Some(ge) = grad_embedding {
            if ge.len() != 2 * hs {
                return Err(Error::shape("encoder_backward", 2 * hs, ge.len()));
            }
            add_assign(&mut grads[0][..hs], &ge[..hs]);
            add_assign(&mut grads[len - 1][hs..], &ge[hs..]);
        }

        let dh_forward: Vec<Vec<f64>> = grads.iter().map(|g| g[hs..].to_vec()).collect();
        let dh_backward: Vec<Vec<f64>> = grads.iter().rev().map(|g| g[..hs].to_vec()).collect();
        let mut dx = self.lstm_forward.run_backward(&cache.forward, &dh_forward);
        let dx_back = self.lstm_backward.run_backward(&cache.backward, &dh_backward);
        for (i, d) in dx_back.iter().enumerate() {
            add_assign(&mut dx[len - 1 - i], d);
        }

        let dps = self.projection.backward_many(&cache.inputs, &dx)?;
        for (i, dp) in dps.iter().enumerate() {
            let row = match features {
                TokenFeatures::Ids(ids) => Some(ids[i]),
                TokenFeatures::Dense { markers, .. } => markers[i].map(marker_row),
            };
            if let Some(r) = row {
                add_assign(self.embedding.grad.row_mut(r), dp);
            }
        }
        Ok(())
    }

    pub fn question_vector(&self, slot: usize) -> Result<&[f64]> {
        if slot >= self.slot_count() {
            return Err(Error::UnknownSlot(format!("slot index {slot}")));
        }
        Ok(self.questions.value.row(slot))
    }

    pub(crate) fn question_grad_mut(&mut self, slot: usize) -> &mut [f64] {
        self.questions.grad.row_mut(slot)
    }
}

fn marker_row(marker: Marker) -> usize {
    match marker {
        Marker::User => 0,
        Marker::Agent => 1,
    }
}

impl HasParams for Encoder {
    fn params(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.embedding, &self.projection.weight, &self.projection.bias];
        out.extend(self.lstm_forward.params());
        out.extend(self.lstm_backward.params());
        out.push(&self.questions);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.embedding, &mut self.projection.weight, &mut self.projection.bias];
        out.extend(self.lstm_forward.params_mut());
        out.extend(self.lstm_backward.params_mut());
        out.push(&mut self.questions);
        out
    }
}
