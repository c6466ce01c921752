//! The four trainable models. Each owns its own encoder and one head.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{FlattenedDialog, Schema};
use crate::embeddings::EmbeddingStore;
use crate::encoder::{EmbeddingMode, Encoder, EncoderConfig, TokenFeatures, Vocab};
use crate::error::{Error, Result};
use crate::heads::{CarryoverHead, SpanEdge, SpanHead, TypeHead};
use crate::jst::JstHead;
use crate::nn::{add_assign, sigmoid_bce_loss, softmax_ce_loss, HasParams, Initializer, Parameter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Carryover,
    Type,
    Span,
    Jst,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Carryover, ModelKind::Type, ModelKind::Span, ModelKind::Jst];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Carryover => "carryover",
            ModelKind::Type => "type",
            ModelKind::Span => "span",
            ModelKind::Jst => "jst",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

/// One supervised target on a passage.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// 0/1 change label for every slot.
    Carryover(Vec<f64>),
    Type { slot: usize, class: usize },
    /// Inclusive token positions.
    Span { slot: usize, start: usize, end: usize },
    /// Class index per slot; `None` skips the slot.
    Jst(Vec<Option<usize>>),
}

/// Everything needed to rebuild a model's architecture. Stored as the
/// checkpoint's metadata block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    pub embedding: EmbeddingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vec<String>>,
    pub slots: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<Vec<Option<String>>>>,
}

impl ModelMeta {
    pub fn schema(&self) -> Result<Schema> {
        Schema::from_names(&self.slots)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metadata serializes")
    }
}

fn build_encoder(meta: &ModelMeta, slots: usize, init: &mut Initializer) -> Result<Encoder> {
    match meta.embedding {
        EmbeddingMode::Trainable => {
            let tokens = meta
                .vocab
                .clone()
                .ok_or_else(|| Error::Config("trainable embeddings need a vocabulary".into()))?;
            Encoder::trainable(meta.encoder, Vocab::new(tokens), slots, init)
        }
        EmbeddingMode::Pretrained { dim } => Encoder::pretrained(meta.encoder, dim, slots, init),
    }
}

fn encoder_params<'a>(encoder: &'a Encoder, head: Vec<&'a Parameter>) -> Vec<&'a Parameter> {
    let mut out = encoder.params();
    out.extend(head);
    out
}

fn expect_target<'a>(kind: ModelKind, target: &'a Target) -> Result<&'a Target> {
    let ok = matches!(
        (kind, target),
        (ModelKind::Carryover, Target::Carryover(_))
            | (ModelKind::Type, Target::Type { .. })
            | (ModelKind::Span, Target::Span { .. })
            | (ModelKind::Jst, Target::Jst(_))
    );
    if ok {
        Ok(target)
    } else {
        Err(Error::Config(format!("target {target:?} does not belong to the {kind} model")))
    }
}

fn scaled(mut g: Vec<f64>, scale: f64) -> Vec<f64> {
    for v in &mut g {
        *v *= scale;
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarryoverModel {
    pub encoder: Encoder,
    pub head: CarryoverHead,
}

impl CarryoverModel {
    /// Change probability for every slot.
    pub fn change_probs(&self, features: &TokenFeatures) -> Result<Vec<f64>> {
        let (enc, _) = self.encoder.encode(features)?;
        self.head.probs(&enc.embedding)
    }

    fn forward_loss(&self, features: &TokenFeatures, targets: &[Target]) -> Result<f64> {
        let (enc, _) = self.encoder.encode(features)?;
        let logits = self.head.logits(&enc.embedding)?;
        let mut total = 0.0;
        for t in targets {
            let Target::Carryover(labels) = expect_target(ModelKind::Carryover, t)? else { unreachable!() };
            total += sigmoid_bce_loss(&logits, labels)?.0;
        }
        Ok(total)
    }

    fn objective(&mut self, features: &TokenFeatures, targets: &[Target], scale: f64) -> Result<f64> {
        let (enc, cache) = self.encoder.encode(features)?;
        let logits = self.head.logits(&enc.embedding)?;
        let mut total = 0.0;
        let mut de = vec![0.0; enc.embedding.len()];
        for t in targets {
            let Target::Carryover(labels) = expect_target(ModelKind::Carryover, t)? else { unreachable!() };
            let (loss, g) = sigmoid_bce_loss(&logits, labels)?;
            total += loss;
            add_assign(&mut de, &self.head.backward(&enc.embedding, &scaled(g, scale)));
        }
        self.encoder.backward(features, &cache, None, Some(&de))?;
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeModel {
    pub encoder: Encoder,
    pub head: TypeHead,
}

impl TypeModel {
    /// Type distribution for each requested slot, encoding the passage once.
    pub fn type_probs(&self, features: &TokenFeatures, slots: &[usize]) -> Result<Vec<[f64; 4]>> {
        let (enc, _) = self.encoder.encode(features)?;
        slots
            .iter()
            .map(|&s| self.head.probs(&enc.embedding, self.encoder.question_vector(s)?))
            .collect()
    }

    fn forward_loss(&self, features: &TokenFeatures, targets: &[Target]) -> Result<f64> {
        let (enc, _) = self.encoder.encode(features)?;
        let mut total = 0.0;
        for t in targets {
            let Target::Type { slot, class } = *expect_target(ModelKind::Type, t)? else { unreachable!() };
            let q = self.encoder.question_vector(slot)?;
            total += softmax_ce_loss(&self.head.logits(&enc.embedding, q)?, class)?.0;
        }
        Ok(total)
    }

    fn objective(&mut self, features: &TokenFeatures, targets: &[Target], scale: f64) -> Result<f64> {
        let (enc, cache) = self.encoder.encode(features)?;
        let mut total = 0.0;
        let mut de = vec![0.0; enc.embedding.len()];
        for t in targets {
            let Target::Type { slot, class } = *expect_target(ModelKind::Type, t)? else { unreachable!() };
            let q = self.encoder.question_vector(slot)?.to_vec();
            let (loss, g) = softmax_ce_loss(&self.head.logits(&enc.embedding, &q)?, class)?;
            total += loss;
            let (de_t, dq) = self.head.backward(&enc.embedding, &q, &scaled(g, scale))?;
            add_assign(&mut de, &de_t);
            add_assign(self.encoder.question_grad_mut(slot), &dq);
        }
        self.encoder.backward(features, &cache, None, Some(&de))?;
        Ok(total)
    }
}

/// Start and end distributions of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanDistributions {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanModel {
    pub encoder: Encoder,
    pub head: SpanHead,
}

impl SpanModel {
    pub fn span_probs(&self, features: &TokenFeatures, slots: &[usize]) -> Result<Vec<SpanDistributions>> {
        let (enc, _) = self.encoder.encode(features)?;
        slots
            .iter()
            .map(|&s| {
                let (start, end) = self.head.distributions(&enc.tokens, self.encoder.question_vector(s)?)?;
                Ok(SpanDistributions { start, end })
            })
            .collect()
    }

    fn forward_loss(&self, features: &TokenFeatures, targets: &[Target]) -> Result<f64> {
        let (enc, _) = self.encoder.encode(features)?;
        let len = enc.tokens.len();
        let mut total = 0.0;
        for t in targets {
            let Target::Span { slot, start, end } = *expect_target(ModelKind::Span, t)? else { unreachable!() };
            if start > end || end >= len {
                return Err(Error::InvalidLabel(format!("span ({start}, {end}) outside a passage of {len} tokens")));
            }
            let q = self.encoder.question_vector(slot)?;
            total += softmax_ce_loss(&self.head.scores(&enc.tokens, q, SpanEdge::Start)?, start)?.0;
            total += softmax_ce_loss(&self.head.scores(&enc.tokens, q, SpanEdge::End)?, end)?.0;
        }
        Ok(total)
    }

    fn objective(&mut self, features: &TokenFeatures, targets: &[Target], scale: f64) -> Result<f64> {
        let (enc, cache) = self.encoder.encode(features)?;
        let len = enc.tokens.len();
        let mut total = 0.0;
        let mut dtokens = vec![vec![0.0; self.encoder.output_dim()]; len];
        for t in targets {
            let Target::Span { slot, start, end } = *expect_target(ModelKind::Span, t)? else { unreachable!() };
            if start > end || end >= len {
                return Err(Error::InvalidLabel(format!("span ({start}, {end}) outside a passage of {len} tokens")));
            }
            let q = self.encoder.question_vector(slot)?.to_vec();
            let mut dq = vec![0.0; q.len()];
            for (edge, gold) in [(SpanEdge::Start, start), (SpanEdge::End, end)] {
                let scores = self.head.scores(&enc.tokens, &q, edge)?;
                let (loss, g) = softmax_ce_loss(&scores, gold)?;
                total += loss;
                self.head
                    .backward(&enc.tokens, &q, edge, &scaled(g, scale), &mut dtokens, &mut dq);
            }
            add_assign(self.encoder.question_grad_mut(slot), &dq);
        }
        self.encoder.backward(features, &cache, Some(dtokens), None)?;
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JstModel {
    pub encoder: Encoder,
    pub head: JstHead,
}

impl JstModel {
    /// Class distribution for every slot.
    pub fn class_probs(&self, features: &TokenFeatures) -> Result<Vec<Vec<f64>>> {
        let (enc, _) = self.encoder.encode(features)?;
        (0..self.head.slot_count())
            .map(|s| self.head.probs(&enc.embedding, s))
            .collect()
    }

    fn forward_loss(&self, features: &TokenFeatures, targets: &[Target]) -> Result<f64> {
        let (enc, _) = self.encoder.encode(features)?;
        let mut total = 0.0;
        for t in targets {
            let Target::Jst(labels) = expect_target(ModelKind::Jst, t)? else { unreachable!() };
            if labels.len() != self.head.slot_count() {
                return Err(Error::shape("jst_loss", self.head.slot_count(), labels.len()));
            }
            for (slot, label) in labels.iter().enumerate() {
                if let Some(class) = *label {
                    total += softmax_ce_loss(&self.head.logits(&enc.embedding, slot)?, class)?.0;
                }
            }
        }
        Ok(total)
    }

    fn objective(&mut self, features: &TokenFeatures, targets: &[Target], scale: f64) -> Result<f64> {
        let (enc, cache) = self.encoder.encode(features)?;
        let mut total = 0.0;
        let mut de = vec![0.0; enc.embedding.len()];
        for t in targets {
            let Target::Jst(labels) = expect_target(ModelKind::Jst, t)? else { unreachable!() };
            if labels.len() != self.head.slot_count() {
                return Err(Error::shape("jst_loss", self.head.slot_count(), labels.len()));
            }
            for (slot, label) in labels.iter().enumerate() {
                let Some(class) = *label else { continue };
                let (loss, g) = softmax_ce_loss(&self.head.logits(&enc.embedding, slot)?, class)?;
                total += loss;
                add_assign(&mut de, &self.head.backward(&enc.embedding, slot, &scaled(g, scale))?);
            }
        }
        self.encoder.backward(features, &cache, None, Some(&de))?;
        Ok(total)
    }
}

/// Any of the four models, with shared metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub meta: ModelMeta,
    pub net: Net,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Net {
    Carryover(CarryoverModel),
    Type(TypeModel),
    Span(SpanModel),
    Jst(JstModel),
}

impl Model {
    /// Fresh model with parameters drawn from `init`, encoder first.
    pub fn new(meta: ModelMeta, init: &mut Initializer) -> Result<Self> {
        let schema = meta.schema()?;
        let m = schema.len();
        let encoder = build_encoder(&meta, m, init)?;
        let dim = meta.encoder.output_dim();
        let q = meta.encoder.question_dim;
        let net = match meta.kind {
            ModelKind::Carryover => Net::Carryover(CarryoverModel {
                head: CarryoverHead::new(dim, m, init),
                encoder,
            }),
            ModelKind::Type => Net::Type(TypeModel {
                head: TypeHead::new(dim, q, init),
                encoder,
            }),
            ModelKind::Span => Net::Span(SpanModel {
                head: SpanHead::new(dim, q, init),
                encoder,
            }),
            ModelKind::Jst => {
                let classes = meta
                    .classes
                    .clone()
                    .ok_or_else(|| Error::Config("the jst model needs class lists".into()))?;
                Net::Jst(JstModel {
                    head: JstHead::new(dim, &schema, classes, init)?,
                    encoder,
                })
            }
        };
        Ok(Model { meta, net })
    }

    pub fn kind(&self) -> ModelKind {
        self.meta.kind
    }

    pub fn encoder(&self) -> &Encoder {
        match &self.net {
            Net::Carryover(m) => &m.encoder,
            Net::Type(m) => &m.encoder,
            Net::Span(m) => &m.encoder,
            Net::Jst(m) => &m.encoder,
        }
    }

    pub fn features(&self, flat: &FlattenedDialog, store: Option<&EmbeddingStore>) -> Result<TokenFeatures> {
        self.encoder().features(flat, store)
    }

    /// Sum of per-target losses on one passage; accumulates gradients
    /// multiplied by `scale`.
    pub fn loss_backward(&mut self, features: &TokenFeatures, targets: &[Target], scale: f64) -> Result<f64> {
        match &mut self.net {
            Net::Carryover(m) => m.objective(features, targets, scale),
            Net::Type(m) => m.objective(features, targets, scale),
            Net::Span(m) => m.objective(features, targets, scale),
            Net::Jst(m) => m.objective(features, targets, scale),
        }
    }

    /// Sum of per-target losses on one passage, no gradients.
    pub fn loss(&self, features: &TokenFeatures, targets: &[Target]) -> Result<f64> {
        match &self.net {
            Net::Carryover(m) => m.forward_loss(features, targets),
            Net::Type(m) => m.forward_loss(features, targets),
            Net::Span(m) => m.forward_loss(features, targets),
            Net::Jst(m) => m.forward_loss(features, targets),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self.meta.to_json(), self)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_str(&ckpt.metadata)
            .map_err(|e| Error::format("checkpoint", format!("metadata: {e}")))?;
        let mut model = Model::new(meta, &mut Initializer::new(0))?;
        ckpt.restore_into(&mut model)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Model::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Same kind, metadata and parameter shapes.
    pub fn same_architecture(&self, other: &Model) -> bool {
        self.meta == other.meta
            && self
                .params()
                .iter()
                .zip(other.params())
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }

    pub fn as_carryover(&self) -> Result<&CarryoverModel> {
        match &self.net {
            Net::Carryover(m) => Ok(m),
            _ => Err(self.wrong_kind(ModelKind::Carryover)),
        }
    }

    pub fn as_type(&self) -> Result<&TypeModel> {
        match &self.net {
            Net::Type(m) => Ok(m),
            _ => Err(self.wrong_kind(ModelKind::Type)),
        }
    }

    pub fn as_span(&self) -> Result<&SpanModel> {
        match &self.net {
            Net::Span(m) => Ok(m),
            _ => Err(self.wrong_kind(ModelKind::Span)),
        }
    }

    pub fn as_jst(&self) -> Result<&JstModel> {
        match &self.net {
            Net::Jst(m) => Ok(m),
            _ => Err(self.wrong_kind(ModelKind::Jst)),
        }
    }

    fn wrong_kind(&self, wanted: ModelKind) -> Error {
        Error::ArchitectureMismatch(format!("expected a {wanted} model, found {}", self.kind()))
    }
}

impl HasParams for Model {
    fn params(&self) -> Vec<&Parameter> {
        match &self.net {
            Net::Carryover(m) => encoder_params(&m.encoder, m.head.params()),
            Net::Type(m) => encoder_params(&m.encoder, m.head.params()),
            Net::Span(m) => encoder_params(&m.encoder, m.head.params()),
            Net::Jst(m) => encoder_params(&m.encoder, m.head.params()),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        fn join<'a>(mut a: Vec<&'a mut Parameter>, b: Vec<&'a mut Parameter>) -> Vec<&'a mut Parameter> {
            a.extend(b);
            a
        }
        match &mut self.net {
            Net::Carryover(m) => join(m.encoder.params_mut(), m.head.params_mut()),
            Net::Type(m) => join(m.encoder.params_mut(), m.head.params_mut()),
            Net::Span(m) => join(m.encoder.params_mut(), m.head.params_mut()),
            Net::Jst(m) => join(m.encoder.params_mut(), m.head.params_mut()),
        }
    }
}
