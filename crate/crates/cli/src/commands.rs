use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use rcdst::corpus::{build_examples, corpus_to_json, load_corpus, Dialog, Ontology, Schema};
use rcdst::embeddings::EmbeddingStore;
use rcdst::encoder::EmbeddingMode;
use rcdst::eval::{align, derivability_coverage, evaluate, per_slot_accuracy, MetricsReport};
use rcdst::models::{Model, ModelKind};
use rcdst::pipeline::{
    hybrid_combine, jst_track_dialog, load_predictions, predictions_to_jsonl, track_dialog, OracleMask,
    PredictionRecord, RolloutConfig, System, Tracker,
};
use rcdst::synth;
use rcdst::trainer::{log_to_jsonl, train, TrainConfig};

use crate::{
    AblateArgs, AnalyzeArgs, CombineArgs, Command, DataArgs, EnsembleArgs, EvalArgs, PredictArgs, SynthArgs, SystemArg,
    TrackArgs, TrainArgs, ValidateArgs,
};

/// A problem with the command line itself.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match e.downcast_ref::<rcdst::Error>() {
        Some(rcdst::Error::Config(_)) => 1,
        Some(err) if err.is_data_error() => 2,
        _ => 3,
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Ensemble(a) => ensemble_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Combine(a) => combine_cmd(a),
        Command::ValidateCorpus(a) => validate_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Usage(format!("{} does not exist", path.display())).into())
    }
}

fn schema(path: &Path) -> Result<Schema> {
    require(path)?;
    Ok(Schema::load(path)?)
}

fn corpus(path: &Path, schema: &Schema) -> Result<Vec<Dialog>> {
    require(path)?;
    Ok(load_corpus(path, schema)?)
}

fn store(data: &DataArgs) -> Result<Option<EmbeddingStore>> {
    match &data.embeddings {
        Some(p) => {
            require(p)?;
            Ok(Some(EmbeddingStore::load(p)?))
        }
        None => Ok(None),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn checkpoint_path(dir: &Path, kind: ModelKind) -> PathBuf {
    dir.join(format!("{kind}.ckpt"))
}

fn load_model(dir: &Path, kind: ModelKind) -> Result<Model> {
    let path = checkpoint_path(dir, kind);
    require(&path)?;
    Ok(Model::load(&path)?)
}

fn load_tracker(dirs: &[PathBuf]) -> Result<Tracker> {
    let members = |kind| dirs.iter().map(|d| load_model(d, kind)).collect::<Result<Vec<_>>>();
    Ok(Tracker::new(
        members(ModelKind::Carryover)?,
        members(ModelKind::Type)?,
        members(ModelKind::Span)?,
    )?)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let schema = schema(&a.data.schema)?;
    let train_set = corpus(&a.train, &schema)?;
    let dev = match &a.dev {
        Some(p) => corpus(p, &schema)?,
        None => Vec::new(),
    };
    let ontology = match &a.ontology {
        Some(p) => {
            require(p)?;
            Some(Ontology::load(p, &schema)?)
        }
        None => None,
    };
    let store = store(&a.data)?;
    let kind = ModelKind::from(a.model);
    let mut config = TrainConfig::new(kind, a.seed);
    config.max_epochs = a.max_epochs;
    config.patience = a.patience;
    config.batch_size = a.batch_size;
    config.learning_rate = a.learning_rate;
    if let Some(s) = &store {
        config.embedding = EmbeddingMode::Pretrained { dim: s.dim() };
    }
    let outcome = train(&config, &train_set, &dev, &schema, ontology.as_ref(), store.as_ref())?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    outcome.model.save(checkpoint_path(&a.out, kind))?;
    write(&a.out.join(format!("{kind}.log.jsonl")), &log_to_jsonl(&outcome.log))?;
    let best = &outcome.log[outcome.best_epoch - 1];
    println!(
        "{kind}: {} epochs, best epoch {} (train loss {:.6}, dev loss {:.6})",
        outcome.log.len(),
        outcome.best_epoch,
        best.train_loss,
        best.dev_loss
    );
    Ok(())
}

fn track(dirs: &[PathBuf], a: &TrackArgs) -> Result<()> {
    let schema = schema(&a.data.schema)?;
    let dialogs = corpus(&a.corpus, &schema)?;
    let store = store(&a.data)?;
    let mask = OracleMask::parse(&a.oracle)?;
    let config = RolloutConfig {
        threshold: a.threshold,
        max_span_len: a.max_span_len,
        gold_previous_state: a.gold_previous_state,
    };
    let mut records = Vec::new();
    match a.system {
        SystemArg::Rc => {
            let tracker = load_tracker(dirs)?;
            for d in &dialogs {
                for p in track_dialog(&tracker, d, mask, &config, store.as_ref())? {
                    records.push(PredictionRecord::from_prediction(&p, &schema));
                }
            }
        }
        SystemArg::Jst => {
            if mask.any() {
                return Err(Usage("oracles apply only to the reading-comprehension system".into()).into());
            }
            let members = dirs
                .iter()
                .map(|d| load_model(d, ModelKind::Jst))
                .collect::<Result<Vec<_>>>()?;
            for d in &dialogs {
                for p in jst_track_dialog(&members, d, store.as_ref())? {
                    records.push(PredictionRecord::from_prediction(&p, &schema));
                }
            }
        }
    }
    write(&a.out, &predictions_to_jsonl(&records))?;
    println!("wrote {} turn predictions to {}", records.len(), a.out.display());
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    track(&[a.models], &a.track)
}

fn ensemble_cmd(a: EnsembleArgs) -> Result<()> {
    track(&a.models, &a.track)
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let schema = schema(&a.schema)?;
    let dialogs = corpus(&a.gold, &schema)?;
    require(&a.pred)?;
    let records = load_predictions(&a.pred)?;
    let report = evaluate(&records, &dialogs, &schema)?;
    print!("{}", report.to_table());
    if let Some(p) = &a.json {
        write(p, &report.to_json())?;
    }
    Ok(())
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let schema = schema(&a.data.schema)?;
    let dialogs = corpus(&a.corpus, &schema)?;
    let store = store(&a.data)?;
    let full = load_tracker(std::slice::from_ref(&a.models))?;
    let baseline = match &a.baseline_models {
        Some(d) => Some(load_tracker(std::slice::from_ref(d))?),
        None => None,
    };

    let single = |stage: &str| OracleMask::parse(stage);
    let mut rows: Vec<(&str, OracleMask)> = Vec::new();
    let stages: Vec<&str> = match &a.oracle {
        Some(list) => list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect(),
        None => vec!["type", "span", "carryover", "all"],
    };
    for stage in stages {
        let label = match stage {
            "type" => "+ oracle type",
            "span" => "+ oracle span",
            "carryover" => "+ oracle carryover",
            "all" => "oracle all",
            other => return Err(Usage(format!("unknown oracle stage `{other}`")).into()),
        };
        rows.push((label, single(stage)?));
    }

    let config = RolloutConfig::default();
    let score = |tracker: &Tracker, mask: OracleMask, store: Option<&EmbeddingStore>| -> Result<f64> {
        let mut records = Vec::new();
        for d in &dialogs {
            for p in track_dialog(tracker, d, mask, &config, store)? {
                records.push(PredictionRecord::from_prediction(&p, &schema));
            }
        }
        Ok(evaluate(&records, &dialogs, &schema)?.joint_goal_accuracy)
    };

    let mut table: Vec<(String, f64)> = vec![("base".into(), score(&full, OracleMask::NONE, store.as_ref())?)];
    if let Some(b) = &baseline {
        table.push(("- pretrained embeddings".into(), score(b, OracleMask::NONE, None)?));
    }
    for (label, mask) in rows {
        table.push((label.into(), score(&full, mask, store.as_ref())?));
    }
    let coverage = derivability_coverage(&dialogs)?;

    println!("{:<26}  joint goal", "configuration");
    for (label, jga) in &table {
        println!("{label:<26}  {:>9.2}%", 100.0 * jga);
    }
    println!("{:<26}  {:>9.2}%", "derivability coverage", 100.0 * coverage);
    if let Some(p) = &a.json {
        let rows: Vec<_> = table
            .iter()
            .map(|(label, jga)| json!({ "configuration": label, "joint_goal_accuracy": jga }))
            .collect();
        let report = json!({ "rows": rows, "derivability_coverage": coverage });
        write(p, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(())
}

fn analyze_cmd(a: AnalyzeArgs) -> Result<()> {
    let schema = schema(&a.schema)?;
    let dialogs = corpus(&a.gold, &schema)?;
    require(&a.pred)?;
    let records = load_predictions(&a.pred)?;
    let report: MetricsReport = evaluate(&records, &dialogs, &schema)?;
    let coverage = derivability_coverage(&dialogs)?;
    println!("depth  turns  % incorrect");
    for r in &report.depth {
        println!("{:>5}  {:>5}  {:>11.2}", r.depth, r.total, r.percent_incorrect);
    }
    println!("\n{:<48}  {:>6}  {:>7}", "error category", "count", "%");
    for r in &report.errors {
        println!("{:<48}  {:>6}  {:>7.2}", r.category.label(), r.count, r.percent);
    }
    println!("{:<48}  {:>6}", "total slot errors", report.total_errors);
    println!("\nderivability coverage  {:.2}%", 100.0 * coverage);
    if let Some(p) = &a.json {
        let out = json!({
            "depth": report.depth,
            "errors": report.errors,
            "total_errors": report.total_errors,
            "derivability_coverage": coverage,
        });
        write(p, &(serde_json::to_string_pretty(&out)? + "\n"))?;
    }
    Ok(())
}

fn slot_accuracy(records: &[PredictionRecord], dialogs: &[Dialog], schema: &Schema) -> Result<BTreeMap<String, f64>> {
    let turns = align(records, dialogs, schema)?;
    let predicted: Vec<_> = turns.iter().map(|t| t.predicted.clone()).collect();
    let gold: Vec<_> = turns.iter().map(|t| t.gold.clone()).collect();
    Ok(schema.names().into_iter().zip(per_slot_accuracy(&predicted, &gold)?).collect())
}

fn combine_cmd(a: CombineArgs) -> Result<()> {
    let schema = schema(&a.schema)?;
    let dev = corpus(&a.dev, &schema)?;
    for p in [&a.rc, &a.jst, &a.rc_dev, &a.jst_dev] {
        require(p)?;
    }
    let rc_acc = slot_accuracy(&load_predictions(&a.rc_dev)?, &dev, &schema)?;
    let jst_acc = slot_accuracy(&load_predictions(&a.jst_dev)?, &dev, &schema)?;
    let (combined, choice) = hybrid_combine(
        &load_predictions(&a.rc)?,
        &load_predictions(&a.jst)?,
        &rc_acc,
        &jst_acc,
        &schema,
    )?;
    let width = schema.names().iter().map(String::len).max().unwrap_or(4).max(4);
    println!("{:<width$}  {:>8}  {:>8}  source", "slot", "rc", "jst");
    for (slot, system) in &choice {
        let source = match system {
            System::ReadingComprehension => "rc",
            System::Jst => "jst",
        };
        println!("{slot:<width$}  {:>8.4}  {:>8.4}  {source}", rc_acc[slot], jst_acc[slot]);
    }
    write(&a.out, &predictions_to_jsonl(&combined))?;
    Ok(())
}

fn validate_cmd(a: ValidateArgs) -> Result<()> {
    let schema = schema(&a.schema)?;
    let dialogs = corpus(&a.corpus, &schema)?;
    if let Some(p) = &a.ontology {
        require(p)?;
        Ontology::load(p, &schema)?;
    }
    let (_, stats) = build_examples(&dialogs, &schema)?;
    let turns: usize = dialogs.iter().map(|d| d.turns.len()).sum();
    println!("dialogs                 {}", dialogs.len());
    println!("user turns              {turns}");
    println!("slots                   {}", schema.len());
    println!("examples                {}", stats.examples);
    println!("slot changes            {}", stats.changes);
    println!("deletions               {}", stats.deletions);
    println!("span-typed changes      {}", stats.span_typed);
    println!("  found in passage      {}", stats.answerable_spans);
    println!("  not in passage        {}", stats.unanswerable_spans);
    println!("derivability coverage   {:.2}%", 100.0 * derivability_coverage(&dialogs)?);
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let schema = synth::schema();
    let (train_set, dev) = synth::bundled();
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write(&a.out.join("train.json"), &corpus_to_json(&train_set, &schema))?;
    write(&a.out.join("dev.json"), &corpus_to_json(&dev, &schema))?;
    write(&a.out.join("schema.json"), &schema.to_json_string())?;
    write(&a.out.join("ontology.json"), &synth::ontology().to_json_string())?;
    let path = a.out.join("embeddings.bin");
    synth::bundled_embeddings()?.save(&path)?;
    println!("wrote the synthetic corpus to {}", a.out.display());
    Ok(())
}
