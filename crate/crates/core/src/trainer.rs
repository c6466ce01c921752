//! Independent training of each model with Adam, mini-batches and
//! dev-loss early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{build_examples, flatten, CarryoverLabel, Dialog, FlattenedDialog, Ontology, Schema, SlotType};
use crate::embeddings::EmbeddingStore;
use crate::encoder::{EmbeddingMode, EncoderConfig, TokenFeatures, Vocab};
use crate::error::{Error, Result};
use crate::jst::class_lists;
use crate::models::{Model, ModelKind, ModelMeta, Target};
use crate::nn::{Adam, AdamConfig, HasParams, Initializer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub embedding: EmbeddingMode,
}

impl TrainConfig {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        TrainConfig {
            kind,
            learning_rate: 0.001,
            batch_size: 32,
            patience: 10,
            max_epochs: 200,
            seed,
            encoder: EncoderConfig::default(),
            embedding: EmbeddingMode::Trainable,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size, patience and max epochs must be at least 1".into()));
        }
        self.encoder.validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub elapsed_seconds: f64,
}

pub fn log_to_jsonl(log: &[EpochLog]) -> String {
    log.iter()
        .map(|l| serde_json::to_string(l).expect("log line serializes") + "\n")
        .collect()
}

/// Stops once the monitored loss has not decreased for `patience`
/// consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// A passage with its supervised targets for one model kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub flat: FlattenedDialog,
    pub features: TokenFeatures,
    pub targets: Vec<Target>,
}

/// Targets per passage for `kind`, in dialog and turn order. Passages
/// without targets are dropped.
///
/// Type targets cover changed slots with a new value; span targets cover
/// those typed Span whose value occurs in the passage; JST targets cover
/// every slot whose gold value is in the class list.
pub fn passage_targets(
    kind: ModelKind,
    dialogs: &[Dialog],
    schema: &Schema,
    classes: Option<&[Vec<Option<String>>]>,
) -> Result<Vec<(FlattenedDialog, Vec<Target>)>> {
    let (examples, _) = build_examples(dialogs, schema)?;
    let m = schema.len();
    let mut out = Vec::new();
    let mut k = 0;
    for dialog in dialogs {
        for (ti, turn) in dialog.turns.iter().enumerate() {
            let group = &examples[k..k + m];
            k += m;
            let targets = match kind {
                ModelKind::Carryover => vec![Target::Carryover(
                    group
                        .iter()
                        .map(|e| if e.carryover == CarryoverLabel::Change { 1.0 } else { 0.0 })
                        .collect(),
                )],
                ModelKind::Type => group
                    .iter()
                    .filter_map(|e| e.slot_type.map(|t| Target::Type {
                        slot: e.slot_index,
                        class: t.index(),
                    }))
                    .collect(),
                ModelKind::Span => group
                    .iter()
                    .filter(|e| e.slot_type == Some(SlotType::Span))
                    .filter_map(|e| e.span.map(|(start, end)| Target::Span {
                        slot: e.slot_index,
                        start,
                        end,
                    }))
                    .collect(),
                ModelKind::Jst => {
                    let classes = classes.ok_or_else(|| Error::Config("jst targets need class lists".into()))?;
                    let labels: Vec<Option<usize>> = turn
                        .state
                        .values()
                        .iter()
                        .zip(classes)
                        .map(|(v, c)| c.iter().position(|x| x == v))
                        .collect();
                    vec![Target::Jst(labels)]
                }
            };
            if !targets.is_empty() {
                out.push((flatten(dialog, ti + 1)?, targets));
            }
        }
    }
    Ok(out)
}

/// Builds encoder features for every passage with targets.
pub fn prepare(model: &Model, dialogs: &[Dialog], store: Option<&EmbeddingStore>) -> Result<Vec<Prepared>> {
    let schema = model.meta.schema()?;
    passage_targets(model.kind(), dialogs, &schema, model.meta.classes.as_deref())?
        .into_iter()
        .map(|(flat, targets)| {
            Ok(Prepared {
                features: model.features(&flat, store)?,
                flat,
                targets,
            })
        })
        .collect()
}

/// Mean per-target loss, summed in passage order.
pub fn mean_loss(model: &Model, data: &[Prepared]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for p in data {
        total += model.loss(&p.features, &p.targets)?;
        count += p.targets.len();
    }
    Ok(if count == 0 { f64::NAN } else { total / count as f64 })
}

/// Architecture description for a fresh model trained on `train`.
pub fn model_meta(
    config: &TrainConfig,
    train: &[Dialog],
    schema: &Schema,
    ontology: Option<&Ontology>,
) -> Result<ModelMeta> {
    let vocab = match config.embedding {
        EmbeddingMode::Trainable => Some(Vocab::from_dialogs(train)?.tokens().to_vec()),
        EmbeddingMode::Pretrained { .. } => None,
    };
    let classes = match config.kind {
        ModelKind::Jst => Some(match ontology {
            Some(o) => class_lists(schema, o),
            None => class_lists(schema, &Ontology::from_dialogs(train, schema)),
        }),
        _ => None,
    };
    Ok(ModelMeta {
        kind: config.kind,
        encoder: config.encoder,
        embedding: config.embedding,
        vocab,
        slots: schema.names(),
        classes,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest monitored loss.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Trains one model. Dev loss drives early stopping; with an empty dev set
/// the training loss is monitored instead.
pub fn train(
    config: &TrainConfig,
    train: &[Dialog],
    dev: &[Dialog],
    schema: &Schema,
    ontology: Option<&Ontology>,
    store: Option<&EmbeddingStore>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let meta = model_meta(config, train, schema, ontology)?;
    let mut model = Model::new(meta, &mut Initializer::new(config.seed))?;
    let train_set = prepare(&model, train, store)?;
    if train_set.is_empty() {
        return Err(Error::EmptyTrainingSet(config.kind.to_string()));
    }
    let dev_set = prepare(&model, dev, store)?;
    let total_targets: usize = train_set.iter().map(|p| p.targets.len()).sum();

    let mut optimizer = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = Checkpoint::capture(String::new(), &model);
    let mut log = Vec::new();
    let started = Instant::now();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in batches(&train_set, &order, config.batch_size) {
            let size: usize = batch.iter().map(|(_, r)| r.len()).sum();
            model.zero_grad();
            for (p, range) in &batch {
                let p = &train_set[*p];
                epoch_loss += model.loss_backward(&p.features, &p.targets[range.clone()], 1.0 / size as f64)?;
            }
            optimizer.step(&mut model)?;
        }
        let train_loss = epoch_loss / total_targets as f64;
        let dev_loss = if dev_set.is_empty() {
            train_loss
        } else {
            mean_loss(&model, &dev_set)?
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            dev_loss,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        });
        let decision = stopper.observe(epoch, dev_loss);
        if decision.improved {
            best = Checkpoint::capture(String::new(), &model);
        }
        if decision.stop {
            break;
        }
    }
    best.restore_into(&mut model)?;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch: stopper.best_epoch(),
    })
}

type BatchPiece = (usize, std::ops::Range<usize>);

/// Fills batches of `size` targets walking passages in `order`; a passage
/// may be split across two batches.
fn batches(data: &[Prepared], order: &[usize], size: usize) -> Vec<Vec<BatchPiece>> {
    let mut out = Vec::new();
    let mut current: Vec<BatchPiece> = Vec::new();
    let mut room = size;
    for &p in order {
        let n = data[p].targets.len();
        let mut from = 0;
        while from < n {
            let take = room.min(n - from);
            current.push((p, from..from + take));
            from += take;
            room -= take;
            if room == 0 {
                out.push(std::mem::take(&mut current));
                room = size;
            }
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}
