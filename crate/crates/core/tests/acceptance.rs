//! Acceptance suite. Runs without the libtest harness so every criterion
//! runs in sequence, the timed ones are measured without other tests
//! competing for the CPU, and the PASS / FAIL / REPORT / SKIP lines are
//! always printed. Exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rcdst::checkpoint::Checkpoint;
use rcdst::corpus::{flatten, tokenize, Dialog, DialogState, Marker, Schema, Turn};
use rcdst::embeddings::EmbeddingStore;
use rcdst::encoder::{EmbeddingMode, Encoder, EncoderConfig, TokenFeatures, Vocab};
use rcdst::eval::{derivability_coverage, evaluate, per_slot_accuracy, align};
use rcdst::heads::{decode_span, CarryoverHead, SpanEdge, SpanHead, TypeHead};
use rcdst::jst::JstHead;
use rcdst::models::{Model, ModelKind, ModelMeta, Target};
use rcdst::nn::{
    bilinear, bilinear_backward, grad_check, sigmoid_bce_loss, softmax_ce_loss, Affine, GradCheckConfig, HasParams,
    Initializer, LstmCell, Parameter, Tensor,
};
use rcdst::pipeline::{
    hybrid_combine, jst_track_dialog, predictions_to_jsonl, track_dialog, OracleMask, PredictionRecord, Provenance,
    RolloutConfig, Tracker, TurnPrediction,
};
use rcdst::synth;
use rcdst::trainer::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    /// Within noise; informative only.
    Report,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: impl Into<String>) -> Self {
        Outcome {
            status: if ok { Status::Pass } else { Status::Fail },
            detail: detail.into(),
        }
    }
}

fn line(id: u32, name: &str, o: &Outcome) {
    let tag = match o.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Report => "REPORT",
        Status::Skip => "SKIP",
    };
    println!("{tag} [{id}] {name}: {}", o.detail);
}

// ---------------------------------------------------------------- shared

struct Trained {
    tracker: Tracker,
    /// Carryover, type and span models, in that order.
    members: Vec<Model>,
}

fn train_tracker(train_set: &[Dialog], dev: &[Dialog], seed: u64, store: Option<&EmbeddingStore>, max_epochs: usize) -> Trained {
    let schema = synth::schema();
    let mut models = Vec::new();
    for kind in [ModelKind::Carryover, ModelKind::Type, ModelKind::Span] {
        let mut config = TrainConfig::new(kind, seed);
        config.max_epochs = max_epochs;
        if let Some(s) = store {
            config.embedding = EmbeddingMode::Pretrained { dim: s.dim() };
        }
        models.push(train(&config, train_set, dev, &schema, None, store).unwrap().model);
    }
    let tracker = Tracker::single(models[0].clone(), models[1].clone(), models[2].clone()).unwrap();
    Trained { tracker, members: models }
}

fn records(tracker: &Tracker, dialogs: &[Dialog], mask: OracleMask, store: Option<&EmbeddingStore>) -> Vec<PredictionRecord> {
    let schema = synth::schema();
    let mut out = Vec::new();
    for d in dialogs {
        for p in track_dialog(tracker, d, mask, &RolloutConfig::default(), store).unwrap() {
            out.push(PredictionRecord::from_prediction(&p, &schema));
        }
    }
    out
}

fn jga(tracker: &Tracker, dialogs: &[Dialog], mask: OracleMask, store: Option<&EmbeddingStore>) -> f64 {
    evaluate(&records(tracker, dialogs, mask, store), dialogs, &synth::schema())
        .unwrap()
        .joint_goal_accuracy
}

// ------------------------------------------------------------ criterion 1

/// Parameters plus a closure-free loss for finite-difference checks.
trait Probe: HasParams {
    fn loss(&mut self) -> f64;
}

fn check_probe<P: Probe>(probe: &mut P, tolerance: f64) -> (bool, f64) {
    let report = grad_check(
        probe,
        |p: &mut P| {
            p.zero_grad();
            p.loss()
        },
        GradCheckConfig::with_tolerance(tolerance),
    );
    (report.passed(), report.max_rel_error)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn param(name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Parameter {
    let n = shape.iter().product();
    Parameter::new(name, Tensor::from_vec(shape, random_vec(rng, n)).unwrap())
}

fn add_into(p: &mut Parameter, g: &[f64]) {
    for (a, b) in p.grad.data_mut().iter_mut().zip(g) {
        *a += b;
    }
}

struct AffineProbe {
    layer: Affine,
    x: Parameter,
    c: Vec<f64>,
}

impl HasParams for AffineProbe {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.layer.weight, &self.layer.bias, &self.x]
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.layer.weight, &mut self.layer.bias, &mut self.x]
    }
}

impl Probe for AffineProbe {
    fn loss(&mut self) -> f64 {
        let x = self.x.value.data().to_vec();
        let y = self.layer.forward(&x).unwrap();
        let dx = self.layer.backward(&x, &self.c).unwrap();
        add_into(&mut self.x, &dx);
        y.iter().zip(&self.c).map(|(a, b)| a * b).sum()
    }
}

struct BilinearProbe {
    d: Parameter,
    theta: Parameter,
    q: Parameter,
    c: f64,
}

impl HasParams for BilinearProbe {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.d, &self.theta, &self.q]
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.d, &mut self.theta, &mut self.q]
    }
}

impl Probe for BilinearProbe {
    fn loss(&mut self) -> f64 {
        let y = bilinear(&self.d.value, &self.theta.value, &self.q.value).unwrap();
        let g = bilinear_backward(&self.d.value, &self.theta.value, &self.q.value, self.c).unwrap();
        add_into(&mut self.d, g.dd.data());
        add_into(&mut self.theta, g.dtheta.data());
        add_into(&mut self.q, g.dq.data());
        self.c * y
    }
}

struct LstmStepProbe {
    cell: LstmCell,
    x: Parameter,
    h: Parameter,
    c: Parameter,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl HasParams for LstmStepProbe {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.cell.params();
        v.extend([&self.x, &self.h, &self.c]);
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.cell.params_mut();
        v.extend([&mut self.x, &mut self.h, &mut self.c]);
        v
    }
}

impl Probe for LstmStepProbe {
    fn loss(&mut self) -> f64 {
        let step = self
            .cell
            .step(self.x.value.data(), self.h.value.data(), self.c.value.data())
            .unwrap();
        let (dx, dh, dc) = self.cell.step_backward(&step, &self.a, &self.b);
        add_into(&mut self.x, &dx);
        add_into(&mut self.h, &dh);
        add_into(&mut self.c, &dc);
        dot(&step.h, &self.a) + dot(&step.c, &self.b)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct LstmSeqProbe {
    cell: LstmCell,
    xs: Parameter,
    weights: Vec<Vec<f64>>,
}

impl HasParams for LstmSeqProbe {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.cell.params();
        v.push(&self.xs);
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.cell.params_mut();
        v.push(&mut self.xs);
        v
    }
}

impl Probe for LstmSeqProbe {
    fn loss(&mut self) -> f64 {
        let n = self.xs.value.shape()[1];
        let rows: Vec<Vec<f64>> = self.xs.value.data().chunks(n).map(<[f64]>::to_vec).collect();
        let steps = self.cell.run(rows.iter().map(Vec::as_slice)).unwrap();
        let loss = steps.iter().zip(&self.weights).map(|(s, w)| dot(&s.h, w)).sum();
        let dxs = self.cell.run_backward(&steps, &self.weights);
        add_into(&mut self.xs, &dxs.concat());
        loss
    }
}

struct EncoderProbe {
    encoder: Encoder,
    features: TokenFeatures,
    token_weights: Vec<Vec<f64>>,
    embedding_weights: Vec<f64>,
}

impl HasParams for EncoderProbe {
    fn params(&self) -> Vec<&Parameter> {
        self.encoder.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.encoder.params_mut()
    }
}

impl Probe for EncoderProbe {
    fn loss(&mut self) -> f64 {
        let (enc, cache) = self.encoder.encode(&self.features).unwrap();
        let loss = enc.tokens.iter().zip(&self.token_weights).map(|(d, w)| dot(d, w)).sum::<f64>()
            + dot(&enc.embedding, &self.embedding_weights);
        self.encoder
            .backward(&self.features, &cache, Some(self.token_weights.clone()), Some(&self.embedding_weights))
            .unwrap();
        loss
    }
}

struct CarryoverProbe {
    head: CarryoverHead,
    e: Parameter,
    labels: Vec<f64>,
}

impl HasParams for CarryoverProbe {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.head.params();
        v.push(&self.e);
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.head.params_mut();
        v.push(&mut self.e);
        v
    }
}

impl Probe for CarryoverProbe {
    fn loss(&mut self) -> f64 {
        let e = self.e.value.data().to_vec();
        let (loss, dlogits) = sigmoid_bce_loss(&self.head.logits(&e).unwrap(), &self.labels).unwrap();
        let de = self.head.backward(&e, &dlogits);
        add_into(&mut self.e, &de);
        loss
    }
}

struct TypeProbe {
    head: TypeHead,
    e: Parameter,
    q: Parameter,
    label: usize,
}

impl HasParams for TypeProbe {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.head.params();
        v.extend([&self.e, &self.q]);
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.head.params_mut();
        v.extend([&mut self.e, &mut self.q]);
        v
    }
}

impl Probe for TypeProbe {
    fn loss(&mut self) -> f64 {
        let (e, q) = (self.e.value.data().to_vec(), self.q.value.data().to_vec());
        let (loss, dlogits) = softmax_ce_loss(&self.head.logits(&e, &q).unwrap(), self.label).unwrap();
        let (de, dq) = self.head.backward(&e, &q, &dlogits).unwrap();
        add_into(&mut self.e, &de);
        add_into(&mut self.q, &dq);
        loss
    }
}

struct SpanProbe {
    head: SpanHead,
    tokens: Parameter,
    q: Parameter,
    start: usize,
    end: usize,
}

impl HasParams for SpanProbe {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.head.params();
        v.extend([&self.tokens, &self.q]);
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.head.params_mut();
        v.extend([&mut self.tokens, &mut self.q]);
        v
    }
}

impl Probe for SpanProbe {
    fn loss(&mut self) -> f64 {
        let dim = self.tokens.value.shape()[1];
        let tokens: Vec<Vec<f64>> = self.tokens.value.data().chunks(dim).map(<[f64]>::to_vec).collect();
        let q = self.q.value.data().to_vec();
        let mut dtokens = vec![vec![0.0; dim]; tokens.len()];
        let mut dq = vec![0.0; q.len()];
        let mut total = 0.0;
        for (edge, label) in [(SpanEdge::Start, self.start), (SpanEdge::End, self.end)] {
            let scores = self.head.scores(&tokens, &q, edge).unwrap();
            let (loss, ds) = softmax_ce_loss(&scores, label).unwrap();
            self.head.backward(&tokens, &q, edge, &ds, &mut dtokens, &mut dq);
            total += loss;
        }
        add_into(&mut self.tokens, &dtokens.concat());
        add_into(&mut self.q, &dq);
        total
    }
}

struct JstProbe {
    head: JstHead,
    e: Parameter,
    labels: Vec<usize>,
}

impl HasParams for JstProbe {
    fn params(&self) -> Vec<&Parameter> {
        let mut v = self.head.params();
        v.push(&self.e);
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.head.params_mut();
        v.push(&mut self.e);
        v
    }
}

impl Probe for JstProbe {
    fn loss(&mut self) -> f64 {
        let e = self.e.value.data().to_vec();
        let mut total = 0.0;
        for (slot, &label) in self.labels.clone().iter().enumerate() {
            let (loss, d) = softmax_ce_loss(&self.head.logits(&e, slot).unwrap(), label).unwrap();
            let de = self.head.backward(&e, slot, &d).unwrap();
            add_into(&mut self.e, &de);
            total += loss;
        }
        total
    }
}

struct LossProbe {
    logits: Parameter,
    labels: Vec<f64>,
    class: usize,
}

impl HasParams for LossProbe {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.logits]
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.logits]
    }
}

impl Probe for LossProbe {
    fn loss(&mut self) -> f64 {
        let z = self.logits.value.data().to_vec();
        let (a, ga) = sigmoid_bce_loss(&z, &self.labels).unwrap();
        let (b, gb) = softmax_ce_loss(&z, self.class).unwrap();
        add_into(&mut self.logits, &ga);
        add_into(&mut self.logits, &gb);
        a + b
    }
}

struct StackProbe {
    model: Model,
    features: TokenFeatures,
    targets: Vec<Target>,
}

impl HasParams for StackProbe {
    fn params(&self) -> Vec<&Parameter> {
        self.model.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.model.params_mut()
    }
}

impl Probe for StackProbe {
    fn loss(&mut self) -> f64 {
        self.model.loss_backward(&self.features, &self.targets, 1.0).unwrap()
    }
}

fn small_config(rng: &mut ChaCha8Rng) -> EncoderConfig {
    EncoderConfig {
        embed_dim: rng.gen_range(2..5),
        proj_dim: rng.gen_range(2..5),
        hidden: rng.gen_range(2..4),
        question_dim: rng.gen_range(2..4),
    }
}

fn random_features(rng: &mut ChaCha8Rng, pretrained: Option<usize>, vocab: usize, len: usize) -> TokenFeatures {
    match pretrained {
        None => TokenFeatures::Ids((0..len).map(|_| rng.gen_range(0..vocab)).collect()),
        Some(dim) => {
            let markers = (0..len)
                .map(|i| match (i, rng.gen_range(0..4)) {
                    (0, _) => Some(Marker::User),
                    (_, 0) => Some(Marker::Agent),
                    _ => None,
                })
                .collect();
            TokenFeatures::Dense {
                rows: (0..len).map(|_| random_vec(rng, dim)).collect(),
                markers,
            }
        }
    }
}

const INSTANCES: u64 = 20;

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut results: Vec<(String, f64, f64, bool)> = Vec::new();
    let mut record = |name: &str, tol: f64, (ok, err): (bool, f64)| {
        match results.iter_mut().find(|r| r.0 == name) {
            Some(r) => {
                r.1 = r.1.max(err);
                r.3 &= ok;
            }
            None => results.push((name.to_string(), err, tol, ok)),
        }
    };

    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut init = Initializer::with_bound(seed, 0.5);

        let (n, m) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let mut p = AffineProbe {
            layer: Affine::new("affine", n, m, &mut init),
            x: param("x", &[n], &mut rng),
            c: random_vec(&mut rng, m),
        };
        record("affine", 1e-6, check_probe(&mut p, 1e-6));

        let (h, k) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let mut p = BilinearProbe {
            d: param("d", &[h], &mut rng),
            theta: param("theta", &[h, k], &mut rng),
            q: param("q", &[k], &mut rng),
            c: rng.gen_range(-2.0..2.0),
        };
        record("bilinear", 1e-6, check_probe(&mut p, 1e-6));

        let (n, hs) = (rng.gen_range(1..5), rng.gen_range(1..4));
        let mut p = LstmStepProbe {
            cell: LstmCell::new("lstm", n, hs, &mut init),
            x: param("x", &[n], &mut rng),
            h: param("h", &[hs], &mut rng),
            c: param("c", &[hs], &mut rng),
            a: random_vec(&mut rng, hs),
            b: random_vec(&mut rng, hs),
        };
        record("lstm cell", 1e-4, check_probe(&mut p, 1e-4));

        let len = rng.gen_range(1..6);
        let mut p = LstmSeqProbe {
            cell: LstmCell::new("lstm", n, hs, &mut init),
            xs: param("xs", &[len, n], &mut rng),
            weights: (0..len).map(|_| random_vec(&mut rng, hs)).collect(),
        };
        record("lstm sequence", 1e-4, check_probe(&mut p, 1e-4));

        let config = small_config(&mut rng);
        let slots = rng.gen_range(1..4);
        let len = rng.gen_range(1..6);
        for pretrained in [false, true] {
            let (encoder, features) = if pretrained {
                let dim = rng.gen_range(2..5);
                let enc = Encoder::pretrained(config, dim, slots, &mut init).unwrap();
                (enc, random_features(&mut rng, Some(dim), 0, len))
            } else {
                let vocab = Vocab::new(["a", "b", "c"].map(String::from));
                let enc = Encoder::trainable(config, vocab, slots, &mut init).unwrap();
                (enc, random_features(&mut rng, None, 6, len))
            };
            let out = 2 * config.hidden;
            let mut p = EncoderProbe {
                encoder,
                features,
                token_weights: (0..len).map(|_| random_vec(&mut rng, out)).collect(),
                embedding_weights: random_vec(&mut rng, out),
            };
            let name = if pretrained { "encoder (frozen embeddings)" } else { "encoder (trainable embeddings)" };
            record(name, 1e-4, check_probe(&mut p, 1e-4));
        }

        let dim = rng.gen_range(1..6);
        let slots = rng.gen_range(1..5);
        let mut p = CarryoverProbe {
            head: CarryoverHead::new(dim, slots, &mut init),
            e: param("e", &[dim], &mut rng),
            labels: (0..slots).map(|_| f64::from(rng.gen_range(0..2u8))).collect(),
        };
        record("carryover head", 1e-4, check_probe(&mut p, 1e-4));

        let qd = rng.gen_range(1..4);
        let mut p = TypeProbe {
            head: TypeHead::new(dim, qd, &mut init),
            e: param("e", &[dim], &mut rng),
            q: param("q", &[qd], &mut rng),
            label: rng.gen_range(0..4),
        };
        record("type head", 1e-4, check_probe(&mut p, 1e-4));

        let len = rng.gen_range(1..7);
        let start = rng.gen_range(0..len);
        let mut p = SpanProbe {
            head: SpanHead::new(dim, qd, &mut init),
            tokens: param("tokens", &[len, dim], &mut rng),
            q: param("q", &[qd], &mut rng),
            start,
            end: rng.gen_range(start..len),
        };
        record("span head", 1e-4, check_probe(&mut p, 1e-4));

        let schema = Schema::from_names(&["hotel.semi.area", "taxi.semi.leaveAt"][..slots.min(2)]).unwrap();
        let classes: Vec<Vec<Option<String>>> = (0..schema.len())
            .map(|_| {
                let mut c = vec![None, Some("dontcare".to_string())];
                c.extend((0..rng.gen_range(0..3)).map(|i| Some(format!("v{i}"))));
                c
            })
            .collect();
        let labels = classes.iter().map(|c| rng.gen_range(0..c.len())).collect();
        let mut p = JstProbe {
            head: JstHead::new(dim, &schema, classes, &mut init).unwrap(),
            e: param("e", &[dim], &mut rng),
            labels,
        };
        record("jst head", 1e-4, check_probe(&mut p, 1e-4));

        let n = rng.gen_range(1..6);
        let mut p = LossProbe {
            logits: param("z", &[n], &mut rng),
            labels: (0..n).map(|_| f64::from(rng.gen_range(0..2u8))).collect(),
            class: rng.gen_range(0..n),
        };
        record("losses", 1e-4, check_probe(&mut p, 1e-4));

        for kind in ModelKind::ALL {
            for pretrained in [false, true] {
                let config = small_config(&mut rng);
                let slot_names = ["hotel.semi.area", "hotel.semi.stars", "taxi.semi.leaveAt"];
                let m = rng.gen_range(1..4);
                let dim = rng.gen_range(2..5);
                let classes: Vec<Vec<Option<String>>> = (0..m)
                    .map(|_| {
                        let mut c = vec![None, Some("dontcare".to_string())];
                        c.extend((0..rng.gen_range(0..3)).map(|i| Some(format!("v{i}"))));
                        c
                    })
                    .collect();
                let meta = ModelMeta {
                    kind,
                    encoder: config,
                    embedding: if pretrained { EmbeddingMode::Pretrained { dim } } else { EmbeddingMode::Trainable },
                    vocab: (!pretrained).then(|| vec!["east".into(), "hotel".into(), "taxi".into()]),
                    slots: slot_names[..m].iter().map(|s| s.to_string()).collect(),
                    classes: (kind == ModelKind::Jst).then(|| classes.clone()),
                };
                let model = Model::new(meta, &mut init).unwrap();
                let len = rng.gen_range(2..7);
                let features = random_features(&mut rng, pretrained.then_some(dim), 6, len);
                let targets = match kind {
                    ModelKind::Carryover => {
                        vec![Target::Carryover((0..m).map(|_| f64::from(rng.gen_range(0..2u8))).collect())]
                    }
                    ModelKind::Type => (0..rng.gen_range(1..3))
                        .map(|_| Target::Type {
                            slot: rng.gen_range(0..m),
                            class: rng.gen_range(0..4),
                        })
                        .collect(),
                    ModelKind::Span => (0..rng.gen_range(1..3))
                        .map(|_| {
                            let start = rng.gen_range(0..len);
                            Target::Span {
                                slot: rng.gen_range(0..m),
                                start,
                                end: rng.gen_range(start..len),
                            }
                        })
                        .collect(),
                    ModelKind::Jst => vec![Target::Jst(
                        classes
                            .iter()
                            .map(|c| rng.gen_bool(0.8).then(|| rng.gen_range(0..c.len())))
                            .collect(),
                    )],
                };
                let mut p = StackProbe {
                    model,
                    features,
                    targets,
                };
                let name = format!("{kind} stack ({})", if pretrained { "frozen" } else { "trainable" });
                record(&name, 1e-4, check_probe(&mut p, 1e-4));
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let all_ok = results.iter().all(|r| r.3);
    for (name, err, tol, ok) in &results {
        println!("    {name:<32} max rel error {err:.2e} (limit {tol:.0e}) {}", if *ok { "ok" } else { "FAILED" });
    }
    Outcome::check(
        all_ok && elapsed < 60.0,
        format!("{} checks x {INSTANCES} instances, {elapsed:.1}s (limit 60s)", results.len()),
    )
}

// ------------------------------------------------------------ criterion 2

fn brute_force_span(ps: &[f64], pe: &[f64], max_len: Option<usize>) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_value = f64::NEG_INFINITY;
    for i in 0..ps.len() {
        for j in i..pe.len() {
            if max_len.is_some_and(|m| j - i >= m) {
                break;
            }
            let v = ps[i] * pe[j];
            if v > best_value {
                best_value = v;
                best = (i, j);
            }
        }
    }
    best
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut tied = 0;
    for case in 0..1000 {
        let len = rng.gen_range(1..=40);
        // coarse levels make exact ties common
        let coarse = case % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let raw: Vec<f64> = (0..len)
                .map(|_| if coarse { f64::from(rng.gen_range(1..4u8)) } else { rng.gen_range(0.0..1.0) })
                .collect();
            let sum: f64 = raw.iter().sum();
            raw.iter().map(|v| v / sum).collect()
        };
        let ps = draw(&mut rng);
        let pe = draw(&mut rng);
        let max_len = (case % 3 == 0).then(|| rng.gen_range(1..=len));
        let expected = brute_force_span(&ps, &pe, max_len);
        let best = ps[expected.0] * pe[expected.1];
        let ties = (0..len)
            .flat_map(|i| (i..len).map(move |j| (i, j)))
            .filter(|&(i, j)| max_len.is_none_or(|m| j - i < m) && ps[i] * pe[j] == best)
            .count();
        if ties > 1 {
            tied += 1;
        }
        if decode_span(&ps, &pe, max_len) != expected {
            mismatches += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    Outcome::check(
        mismatches == 0 && elapsed < 10.0,
        format!("{mismatches} mismatches in 1000 cases ({tied} with tied maxima), {elapsed:.2}s (limit 10s)"),
    )
}

// ------------------------------------------------------------ criterion 3

fn naive_canonical(v: &str) -> String {
    let squashed: String = v.chars().filter(|c| *c != '\'' && *c != ' ').collect();
    if squashed == "dontcare" {
        "dontcare".to_string()
    } else {
        v.to_string()
    }
}

type RawState = BTreeMap<String, String>;

fn raw_get(s: &RawState, slot: &str) -> Option<String> {
    s.get(slot).map(|v| naive_canonical(v))
}

fn criterion_3() -> Outcome {
    let pool = ["east", "west", "4", "don't care", "dontcare", "dont care"];
    let names = ["hotel.semi.area", "hotel.semi.stars", "hotel.semi.parking", "taxi.semi.leaveAt", "bus.book.people"];
    let mut failures = Vec::new();
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + case);
        let m = rng.gen_range(1..=names.len());
        let schema = Schema::from_names(&names[..m]).unwrap();
        let random_state = |rng: &mut ChaCha8Rng| -> RawState {
            names[..m]
                .iter()
                .filter_map(|n| rng.gen_bool(0.5).then(|| (n.to_string(), pool[rng.gen_range(0..pool.len())].to_string())))
                .collect()
        };
        let mut dialogs = Vec::new();
        let mut gold_raw: Vec<Vec<RawState>> = Vec::new();
        let mut recs = Vec::new();
        let mut pred_raw: Vec<RawState> = Vec::new();
        let mut change_raw: Vec<BTreeMap<String, bool>> = Vec::new();
        for d in 0..rng.gen_range(1..4) {
            let id = format!("d{d}");
            let n = rng.gen_range(1..6);
            let states: Vec<RawState> = (0..n).map(|_| random_state(&mut rng)).collect();
            let turns = states
                .iter()
                .enumerate()
                .map(|(t, s)| Turn {
                    agent: (t > 0).then(|| "ok".to_string()),
                    user: "hello there".into(),
                    state: DialogState::from_map(
                        &s.iter().map(|(k, v)| (k.clone(), Some(v.clone()))).collect(),
                        &schema,
                    )
                    .unwrap(),
                })
                .collect();
            dialogs.push(Dialog { id: id.clone(), turns });
            for t in 0..n {
                // half the predictions copy gold so joint hits occur
                let pred = if rng.gen_bool(0.5) { states[t].clone() } else { random_state(&mut rng) };
                let change: BTreeMap<String, bool> = names[..m].iter().map(|n| (n.to_string(), rng.gen_bool(0.5))).collect();
                recs.push(PredictionRecord {
                    dialog_id: id.clone(),
                    turn: t + 1,
                    state: pred.clone(),
                    provenance: names[..m].iter().map(|n| (n.to_string(), Provenance::Span)).collect(),
                    change: Some(change.clone()),
                });
                pred_raw.push(pred);
                change_raw.push(change);
            }
            gold_raw.push(states);
        }
        // reverse record order: alignment must not depend on it
        recs.reverse();
        let report = evaluate(&recs, &dialogs, &schema).unwrap();

        let gold_flat: Vec<&RawState> = gold_raw.iter().flatten().collect();
        let total = gold_flat.len();
        let mut joint_hits = 0;
        let mut slot_hits = vec![0usize; m];
        for (p, g) in pred_raw.iter().zip(&gold_flat) {
            let mut all = true;
            for (i, n) in names[..m].iter().enumerate() {
                if raw_get(p, n) == raw_get(g, n) {
                    slot_hits[i] += 1;
                } else {
                    all = false;
                }
            }
            if all {
                joint_hits += 1;
            }
        }
        let mut carry_hits = 0;
        let mut k = 0;
        for states in &gold_raw {
            for t in 0..states.len() {
                let prev = if t == 0 { RawState::new() } else { states[t - 1].clone() };
                let ok = names[..m]
                    .iter()
                    .all(|n| change_raw[k][*n] == (raw_get(&prev, n) != raw_get(&states[t], n)));
                if ok {
                    carry_hits += 1;
                }
                k += 1;
            }
        }
        let frac = |h: usize| h as f64 / total as f64;
        if report.joint_goal_accuracy != frac(joint_hits) {
            failures.push(format!("case {case}: joint goal"));
        }
        for (i, n) in names[..m].iter().enumerate() {
            if report.per_slot_accuracy[*n] != frac(slot_hits[i]) {
                failures.push(format!("case {case}: slot {n}"));
            }
        }
        if report.carryover_turn_accuracy != Some(frac(carry_hits)) {
            failures.push(format!("case {case}: carryover"));
        }
    }
    Outcome::check(
        failures.is_empty(),
        if failures.is_empty() {
            "joint goal, per-slot and carryover turn accuracy equal the naive recount on 100 random sets".into()
        } else {
            failures.join("; ")
        },
    )
}

// ------------------------------------------------------------ criterion 4

fn criterion_4(train_set: &[Dialog]) -> (Outcome, Trained) {
    let started = Instant::now();
    // the training set doubles as the monitored set: the goal is to fit it
    let trained = train_tracker(train_set, train_set, 1, None, 200);
    let accuracy = jga(&trained.tracker, train_set, OracleMask::NONE, None);
    let elapsed = started.elapsed().as_secs_f64();
    let outcome = Outcome::check(
        accuracy >= 0.99 && elapsed < 600.0,
        format!(
            "training joint goal {:.2}% (need 99%), {} dialogs, {elapsed:.0}s (limit 600s)",
            100.0 * accuracy,
            train_set.len()
        ),
    );
    (outcome, trained)
}

// ------------------------------------------------------------ criterion 5

/// Turns whose every slot value is None, a yes/no/dontcare literal, or found
/// verbatim in the passage of the turn where the slot last took that value.
fn naive_coverage(dialogs: &[Dialog]) -> f64 {
    let mut hits = 0;
    let mut total = 0;
    for d in dialogs {
        let m = d.turns[0].state.len();
        let passages: Vec<String> = (1..=d.turns.len())
            .map(|t| format!(" {} ", flatten(d, t).unwrap().tokens.join(" ")))
            .collect();
        for t in 0..d.turns.len() {
            let mut ok = true;
            for i in 0..m {
                let Some(v) = d.turns[t].state.get(i) else { continue };
                if ["yes", "no", "dontcare"].contains(&v) {
                    continue;
                }
                let mut bind = t;
                while bind > 0 && d.turns[bind - 1].state.get(i) == Some(v) {
                    bind -= 1;
                }
                let needle = format!(" {} ", tokenize(v).join(" "));
                if !passages[bind].contains(&needle) {
                    ok = false;
                }
            }
            total += 1;
            if ok {
                hits += 1;
            }
        }
    }
    hits as f64 / total as f64
}

fn criterion_5(trained: &Trained, dev: &[Dialog]) -> Outcome {
    let tracker = &trained.tracker;
    let coverage = naive_coverage(dev);
    let all = jga(tracker, dev, OracleMask::ALL, None);
    let library_coverage = derivability_coverage(dev).unwrap();

    // a dev copy in which some values never occur in the passage
    let mut partial = dev.to_vec();
    let area = synth::schema().index_of("hotel.semi.area").unwrap();
    for d in partial.iter_mut().step_by(3) {
        let last = d.turns.len() - 1;
        d.turns[last].state.set(area, Some("atlantis".into()));
    }
    let partial_coverage = naive_coverage(&partial);
    let partial_all = jga(tracker, &partial, OracleMask::ALL, None);

    let base = jga(tracker, dev, OracleMask::NONE, None);
    let singles = [
        ("type", OracleMask { slot_type: true, ..OracleMask::NONE }),
        ("span", OracleMask { span: true, ..OracleMask::NONE }),
        ("carryover", OracleMask { carryover: true, ..OracleMask::NONE }),
    ];
    let mut ordered = true;
    let mut parts = Vec::new();
    let mut largest = ("", f64::NEG_INFINITY);
    for (name, mask) in singles {
        let score = jga(tracker, dev, mask, None);
        ordered &= score >= base;
        parts.push(format!("+{name} {:.2}%", 100.0 * score));
        if score - base > largest.1 {
            largest = (name, score - base);
        }
    }
    println!(
        "    oracle all {:.2}% = coverage {:.2}% (library {:.2}%); partial corpus {:.2}% = {:.2}%",
        100.0 * all,
        100.0 * coverage,
        100.0 * library_coverage,
        100.0 * partial_all,
        100.0 * partial_coverage
    );
    println!(
        "    base {:.2}%, {}; largest gain from oracle {} (+{:.2} points)",
        100.0 * base,
        parts.join(", "),
        largest.0,
        100.0 * largest.1
    );
    let exact = all == coverage && partial_all == partial_coverage && coverage == 1.0 && partial_coverage < 1.0;
    Outcome::check(
        exact && ordered,
        format!(
            "oracle-all equals coverage exactly on both corpora: {exact}; every single oracle >= base ({:.2}%): {ordered}",
            100.0 * base
        ),
    )
}

// ------------------------------------------------------------ criterion 6

fn slot_accuracy(recs: &[PredictionRecord], dialogs: &[Dialog], schema: &Schema) -> BTreeMap<String, f64> {
    let turns = align(recs, dialogs, schema).unwrap();
    let p: Vec<_> = turns.iter().map(|t| t.predicted.clone()).collect();
    let g: Vec<_> = turns.iter().map(|t| t.gold.clone()).collect();
    schema.names().into_iter().zip(per_slot_accuracy(&p, &g).unwrap()).collect()
}

fn criterion_6(trained: &Trained, train_set: &[Dialog], dev: &[Dialog]) -> Outcome {
    let schema = synth::schema();
    let mut config = TrainConfig::new(ModelKind::Jst, 1);
    config.max_epochs = 15;
    let jst = train(&config, train_set, dev, &schema, Some(&synth::ontology()), None).unwrap().model;
    let jst_recs: Vec<PredictionRecord> = dev
        .iter()
        .flat_map(|d| jst_track_dialog(std::slice::from_ref(&jst), d, None).unwrap())
        .map(|p| PredictionRecord::from_prediction(&p, &schema))
        .collect();
    let rc_recs = records(&trained.tracker, dev, OracleMask::NONE, None);
    let rc_acc = slot_accuracy(&rc_recs, dev, &schema);
    let jst_acc = slot_accuracy(&jst_recs, dev, &schema);
    let (combined, _) = hybrid_combine(&rc_recs, &jst_recs, &rc_acc, &jst_acc, &schema).unwrap();
    let combined_acc = slot_accuracy(&combined, dev, &schema);
    let max_ok = schema.names().iter().all(|n| combined_acc[n] == rc_acc[n].max(jst_acc[n]));

    // constructed: JST perfect on area only, RC perfect on stars only
    let small = Schema::from_names(&["hotel.semi.area", "hotel.semi.stars"]).unwrap();
    let gold_states = [("east", "4"), ("west", "4"), ("west", "5")];
    let dialog = Dialog {
        id: "c".into(),
        turns: gold_states
            .iter()
            .enumerate()
            .map(|(t, (a, s))| Turn {
                agent: (t > 0).then(|| "ok".to_string()),
                user: format!("the {a} with {s} stars"),
                state: DialogState::from_values(vec![Some(a.to_string()), Some(s.to_string())]),
            })
            .collect(),
    };
    let rec = |t: usize, a: &str, s: &str| PredictionRecord {
        dialog_id: "c".into(),
        turn: t,
        state: [("hotel.semi.area".to_string(), a.to_string()), ("hotel.semi.stars".to_string(), s.to_string())].into(),
        provenance: BTreeMap::new(),
        change: None,
    };
    let rc: Vec<_> = gold_states.iter().enumerate().map(|(t, (_, s))| rec(t + 1, "north", s)).collect();
    let js: Vec<_> = gold_states.iter().enumerate().map(|(t, (a, _))| rec(t + 1, a, "2")).collect();
    let dialogs = [dialog];
    let (mixed, _) = hybrid_combine(
        &rc,
        &js,
        &slot_accuracy(&rc, &dialogs, &small),
        &slot_accuracy(&js, &dialogs, &small),
        &small,
    )
    .unwrap();
    let constructed = evaluate(&mixed, &dialogs, &small).unwrap().joint_goal_accuracy;
    let jst_wins = schema.names().iter().filter(|n| jst_acc[*n] > rc_acc[*n]).count();
    Outcome::check(
        max_ok && constructed == 1.0,
        format!(
            "combined per-slot dev accuracy = max(RC, JST) on all {} slots: {max_ok} ({jst_wins} taken from JST); constructed case joint goal {:.0}%",
            schema.len(),
            100.0 * constructed
        ),
    )
}

// ------------------------------------------------------------ criterion 7

fn reload(model: &Model) -> Model {
    Model::from_checkpoint(&Checkpoint::from_bytes(&model.checkpoint().to_bytes()).unwrap()).unwrap()
}

fn criterion_7(trained: &Trained, dev: &[Dialog]) -> Outcome {
    let tracker = &trained.tracker;
    let members = |i: usize, k: usize| -> Vec<Model> { (0..k).map(|_| reload(&trained.members[i])).collect() };
    let run = |t: &Tracker| -> Vec<TurnPrediction> {
        dev.iter()
            .flat_map(|d| track_dialog(t, d, OracleMask::NONE, &RolloutConfig::default(), None).unwrap())
            .collect()
    };
    let reference = run(tracker);
    let mut identical = true;
    for k in [1, 3, 5] {
        let ensemble = Tracker::new(members(0, k), members(1, k), members(2, k)).unwrap();
        identical &= run(&ensemble) == reference;
    }

    let schema = synth::schema();
    let mut config = TrainConfig::new(ModelKind::Jst, 3);
    config.max_epochs = 2;
    let jst = train(&config, &dev[..5], &[], &schema, None, None).unwrap().model;
    let single: Vec<_> = dev.iter().flat_map(|d| jst_track_dialog(std::slice::from_ref(&jst), d, None).unwrap()).collect();
    let many = [reload(&jst), reload(&jst), reload(&jst)];
    let ensemble: Vec<_> = dev.iter().flat_map(|d| jst_track_dialog(&many, d, None).unwrap()).collect();
    let jst_identical = single == ensemble;
    Outcome::check(
        identical && jst_identical,
        format!(
            "ensembles of 1, 3 and 5 identical checkpoints reproduce every probability and prediction bit-exactly: {identical}; closed-vocabulary ensemble: {jst_identical}"
        ),
    )
}

// ------------------------------------------------------------ criterion 8

fn criterion_8(train_set: &[Dialog], dev: &[Dialog], store: &EmbeddingStore) -> Outcome {
    let schema = synth::schema();
    let run = || -> (Vec<Vec<u8>>, String, String) {
        let mut ckpts = Vec::new();
        let mut models = Vec::new();
        for kind in ModelKind::ALL {
            let mut config = TrainConfig::new(kind, 11);
            config.max_epochs = 3;
            config.embedding = EmbeddingMode::Pretrained { dim: store.dim() };
            let model = train(&config, train_set, dev, &schema, Some(&synth::ontology()), Some(store)).unwrap().model;
            ckpts.push(model.checkpoint().to_bytes());
            models.push(model);
        }
        models.pop();
        let span = models.pop().unwrap();
        let slot_type = models.pop().unwrap();
        let carryover = models.pop().unwrap();
        let tracker = Tracker::single(carryover, slot_type, span).unwrap();
        let recs = records(&tracker, dev, OracleMask::NONE, Some(store));
        let report = evaluate(&recs, dev, &schema).unwrap();
        (ckpts, predictions_to_jsonl(&recs), report.to_json())
    };
    let a = run();
    let b = run();
    let same_ckpt = a.0 == b.0;
    let same_pred = a.1 == b.1;
    let same_report = a.2 == b.2;
    Outcome::check(
        same_ckpt && same_pred && same_report,
        format!("two seeded runs: checkpoints identical {same_ckpt}, predictions {same_pred}, reports {same_report}"),
    )
}

// ------------------------------------------------------------ criterion 9

fn criterion_9(train_set: &[Dialog], dev: &[Dialog], store: &EmbeddingStore) -> Outcome {
    let mut pretrained = Vec::new();
    let mut trainable = Vec::new();
    for seed in 1..=3 {
        let with = train_tracker(train_set, dev, seed, Some(store), 200);
        pretrained.push(jga(&with.tracker, dev, OracleMask::NONE, Some(store)));
        let without = train_tracker(train_set, dev, seed, None, 200);
        trainable.push(jga(&without.tracker, dev, OracleMask::NONE, None));
        println!(
            "    seed {seed}: frozen contextual embeddings {:.2}%, trainable embeddings {:.2}%",
            100.0 * pretrained[seed as usize - 1],
            100.0 * trainable[seed as usize - 1]
        );
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (p, t) = (100.0 * mean(&pretrained), 100.0 * mean(&trainable));
    let detail = format!("dev joint goal over 3 seeds: contextual {p:.2}% vs trainable {t:.2}% ({:+.2} points)", p - t);
    let status = if p >= t {
        Status::Pass
    } else if t - p <= 1.0 {
        Status::Report
    } else {
        Status::Fail
    };
    Outcome { status, detail }
}

// ----------------------------------------------------------- criterion 10

fn criterion_10() -> Outcome {
    let Some(dir) = std::env::var_os("RCDST_MULTIWOZ_DIR").map(PathBuf::from) else {
        return Outcome {
            status: Status::Skip,
            detail: "long-running full-corpus run; set RCDST_MULTIWOZ_DIR to a directory with train.json, dev.json, \
                     test.json, schema.json and embeddings.bin"
                .into(),
        };
    };
    let schema = Schema::load(dir.join("schema.json")).unwrap();
    let load = |n: &str| rcdst::corpus::load_corpus(dir.join(n), &schema).unwrap();
    let (train_set, dev, test) = (load("train.json"), load("dev.json"), load("test.json"));
    let store = EmbeddingStore::load(dir.join("embeddings.bin")).unwrap();
    let mut models = Vec::new();
    for kind in [ModelKind::Carryover, ModelKind::Type, ModelKind::Span] {
        let mut config = TrainConfig::new(kind, 1);
        config.embedding = EmbeddingMode::Pretrained { dim: store.dim() };
        models.push(train(&config, &train_set, &dev, &schema, None, Some(&store)).unwrap().model);
    }
    let span = models.pop().unwrap();
    let slot_type = models.pop().unwrap();
    let carryover = models.pop().unwrap();
    let tracker = Tracker::single(carryover, slot_type, span).unwrap();
    let recs: Vec<_> = test
        .iter()
        .flat_map(|d| track_dialog(&tracker, d, OracleMask::NONE, &RolloutConfig::default(), Some(&store)).unwrap())
        .map(|p| PredictionRecord::from_prediction(&p, &schema))
        .collect();
    let accuracy = evaluate(&recs, &test, &schema).unwrap().joint_goal_accuracy;
    Outcome::check(
        (accuracy - 0.3941).abs() <= 0.05,
        format!("test joint goal {:.2}% (target 39.41% +/- 5)", 100.0 * accuracy),
    )
}

// ------------------------------------------------------------------ main

fn main() {
    let (train_set, dev) = synth::bundled();
    let store = synth::bundled_embeddings().unwrap();
    let mut outcomes: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id, name, o: Outcome| {
        line(id, name, &o);
        outcomes.push((id, name, o));
    };

    report(1, "gradient correctness", criterion_1());
    report(2, "span decode equals exhaustive search", criterion_2());
    report(3, "metric oracles", criterion_3());
    let (o4, trained) = criterion_4(&train_set);
    report(4, "overfit the synthetic corpus", o4);
    report(5, "oracle structure", criterion_5(&trained, &dev));
    report(6, "hybrid combiner guarantee", criterion_6(&trained, &train_set, &dev));
    report(7, "ensemble identities", criterion_7(&trained, &dev));
    report(8, "determinism", criterion_8(&dev[..8], &dev[8..12], &store));
    report(9, "contextual embedding ablation direction", criterion_9(&train_set, &dev, &store));
    report(10, "full-corpus single model", criterion_10());

    println!("\nsummary:");
    for (id, name, o) in &outcomes {
        line(*id, name, o);
    }
    let failed: Vec<_> = outcomes
        .iter()
        .filter(|(_, _, o)| o.status == Status::Fail)
        .map(|(id, _, _)| *id)
        .collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
