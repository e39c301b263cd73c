use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hiqa_core::dataset::{
    aggregate, make_synthetic_corpus, summarize, AggregatedSample, DatasetConfig, ImpactScale, QualityTarget,
    StatsReport, ValidationReport, FEATURE_NAMES,
};
use hiqa_core::policy::{PolicyParams, Vocab};
use hiqa_core::protocol::parse_output;
use hiqa_core::reward::{assess_full, RewardBreakdown};
use hiqa_core::rollout::{
    default_vocab, encoded_feature_dim, eval_metrics, evaluate, template_prior, EpisodeSample, EvalMetrics,
    EvalRow, IterationRecord, Prediction, Trainer,
};
use hiqa_core::text::{rouge1_recall, RougeScore, TokenBag};
use serde::Serialize;

use crate::io::{self, JsonlWriter};
use crate::{Failure, RunConfig};

pub const CONFIG_FILE: &str = "config.toml";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const INIT_SNAPSHOT: &str = "init.bin";
pub const FINAL_SNAPSHOT: &str = "final.bin";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

pub fn validate(path: &Path, config: &DatasetConfig) -> Result<ValidationReport, Failure> {
    Ok(io::load_records(path, config)?.1)
}

pub fn render_validation(report: &ValidationReport) -> String {
    let mut s = format!(
        "lines: {}\naccepted: {}\nrejected: {}\nempty text fields: {}\n",
        report.lines,
        report.accepted,
        report.rejected.len(),
        report.empty_fields.len()
    );
    for r in &report.rejected {
        match &r.field {
            Some(f) => writeln!(s, "line {}: {f}: {}", r.line, r.reason),
            None => writeln!(s, "line {}: {}", r.line, r.reason),
        }
        .unwrap();
    }
    for f in &report.empty_fields {
        writeln!(s, "line {}: empty {}", f.line, f.field).unwrap();
    }
    s
}

/// Aggregates the valid records of `path`. Fails if nothing survives.
pub fn load_samples(path: &Path, config: &DatasetConfig) -> Result<(Vec<AggregatedSample>, ValidationReport), Failure> {
    let (records, report) = io::load_records(path, config)?;
    let samples = aggregate(&records, config);
    if samples.is_empty() {
        return Err(Failure::Validation(format!("no samples in {}", path.display())));
    }
    Ok((samples, report))
}

pub fn stats(path: &Path, config: &DatasetConfig, top_k: usize) -> Result<StatsReport, Failure> {
    Ok(summarize(&load_samples(path, config)?.0, top_k))
}

fn scale_name(s: ImpactScale) -> &'static str {
    match s {
        ImpactScale::Good => "good_scale",
        ImpactScale::Bad => "bad_scale",
    }
}

fn target_name(t: QualityTarget) -> &'static str {
    match t {
        QualityTarget::Overall => "overall_quality",
        QualityTarget::Ideal => "ideal_quality",
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

pub fn render_stats(r: &StatsReport) -> String {
    let mut s = format!(
        "samples: {}\nratings: {}\nunder-rated samples: {}\n\n{:<10} {:<16} {:>10} {:>10}\n",
        r.samples, r.ratings, r.under_rated, "scale", "target", "plcc", "srcc"
    );
    for c in &r.cells {
        writeln!(
            s,
            "{:<10} {:<16} {:>10} {:>10}",
            scale_name(c.scale),
            target_name(c.target),
            opt(c.plcc),
            opt(c.srcc)
        )
        .unwrap();
    }
    if !r.top_words.is_empty() {
        s.push_str("\ntop words:");
        for (w, n) in &r.top_words {
            write!(s, " {w}({n})").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn stats_csv(r: &StatsReport) -> String {
    let mut s = String::from("scale,target,plcc,srcc\n");
    let cell = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v}"));
    for c in &r.cells {
        writeln!(s, "{},{},{},{}", scale_name(c.scale), target_name(c.target), cell(c.plcc), cell(c.srcc)).unwrap();
    }
    s
}

pub fn rouge(reference: &Path, candidate: &Path) -> Result<RougeScore, Failure> {
    Ok(rouge1_recall(
        &TokenBag::from_text(&io::read_text(reference)?),
        &TokenBag::from_text(&io::read_text(candidate)?),
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct RewardReport {
    pub well_formed: bool,
    pub rating: Option<f64>,
    pub caption_only_rating: Option<f64>,
    #[serde(flatten)]
    pub breakdown: RewardBreakdown,
}

/// Scores a stage-one transcript. The self-consistency term uses the rating
/// of `caption_only`, a caption-only transcript, when given.
pub fn reward(
    config: &RunConfig,
    transcript: &Path,
    reference: &Path,
    ground_truth: f64,
    caption_only: Option<&Path>,
) -> Result<RewardReport, Failure> {
    let settings = config.settings()?;
    let out = parse_output(&io::read_text(transcript)?, &settings.stage1);
    let reference = TokenBag::from_text(&io::read_text(reference)?);
    let caption_only_rating = match caption_only {
        Some(p) => {
            let o = parse_output(&io::read_text(p)?, &settings.stage2);
            o.rating.filter(|_| o.well_formed)
        }
        None => None,
    };
    let breakdown = assess_full(
        &out,
        settings.stage1.sections(),
        settings.stage1.answer_section(),
        &reference,
        ground_truth,
        caption_only_rating,
        &config.reward,
    );
    Ok(RewardReport {
        well_formed: out.well_formed,
        rating: out.rating,
        caption_only_rating,
        breakdown,
    })
}

/// Synthetic training pool and held-out set of a run.
pub fn synthetic_split(config: &RunConfig) -> Result<(Vec<EpisodeSample>, Vec<EpisodeSample>), Failure> {
    let d = &config.data;
    let corpus = make_synthetic_corpus(
        d.synthetic_count + d.heldout_count,
        config.seed,
        &config.synthetic,
        &config.dataset,
    )?;
    let mut samples = corpus
        .samples
        .iter()
        .map(EpisodeSample::from_aggregated)
        .collect::<Result<Vec<_>, _>>()?;
    let heldout = samples.split_off(d.synthetic_count);
    Ok((samples, heldout))
}

pub fn vocab(config: &RunConfig) -> Result<Arc<Vocab>, Failure> {
    Ok(Arc::new(default_vocab(config.dataset.score_min, config.dataset.score_max)?))
}

/// Initial policy of a run.
pub fn initial_policy(config: &RunConfig) -> Result<PolicyParams, Failure> {
    let settings = config.settings()?;
    Ok(template_prior(
        vocab(config)?,
        encoded_feature_dim(FEATURE_NAMES.len()),
        config.rollout.max_len,
        [&settings.stage1, &settings.stage2],
        &config.rollout.prior,
    )?)
}

/// Loads a snapshot and checks it against the shapes `config` implies.
pub fn load_policy(config: &RunConfig, snapshot: &Path) -> Result<PolicyParams, Failure> {
    let params = io::read_snapshot(snapshot, vocab(config)?)?;
    let expected = initial_policy(config)?.layout();
    if params.layout() != expected {
        return Err(Failure::Config(format!(
            "snapshot layout {} does not match config layout {}",
            params.layout(),
            expected
        )));
    }
    Ok(params)
}

pub fn run_dir(config: &RunConfig, out: Option<&Path>) -> Result<PathBuf, Failure> {
    out.map(Path::to_path_buf)
        .or_else(|| config.out_dir.clone())
        .ok_or_else(|| Failure::Config("no output directory: pass --out or set out_dir".into()))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub records: Vec<IterationRecord>,
    pub params: PolicyParams,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    step: usize,
    episode: &'a hiqa_core::rollout::Episode,
}

/// Trains on the synthetic pool, writing the config echo, diagnostics,
/// snapshots and optional trace into `dir`.
pub fn train(config: &RunConfig, dir: &Path) -> Result<TrainSummary, Failure> {
    if config.data.path.is_some() {
        eprintln!("note: annotation records carry no image features; training uses the synthetic corpus");
    }
    if config.data.synthetic_count == 0 {
        return Err(Failure::Config("data.synthetic_count must be >= 1 for training".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    std::fs::write(dir.join(CONFIG_FILE), config.to_toml())
        .map_err(|e| Failure::Io(format!("{}: {e}", dir.join(CONFIG_FILE).display())))?;

    let (pool, _) = synthetic_split(config)?;
    let init = initial_policy(config)?;
    io::write_snapshot(&dir.join(INIT_SNAPSHOT), &init)?;
    let mut trainer = Trainer::new(init, pool, config.settings()?, config.rollout.batch_size, config.seed)?
        .with_updates_per_batch(config.rollout.updates_per_batch)?;
    let mut diagnostics = JsonlWriter::create(&dir.join(DIAGNOSTICS_FILE))?;
    let mut trace = if config.train.trace {
        Some(JsonlWriter::create(&dir.join(TRACE_FILE))?)
    } else {
        None
    };
    let mut records = Vec::with_capacity(config.iterations);
    for i in 0..config.iterations {
        let out = trainer.iterate()?;
        diagnostics.write(&out.record)?;
        if let Some(t) = trace.as_mut() {
            for e in &out.episodes {
                t.write(&TraceLine { step: i, episode: e })?;
            }
        }
        let step = i + 1;
        if config.train.snapshot_every > 0 && step % config.train.snapshot_every == 0 {
            io::write_snapshot(&dir.join(format!("step-{step:06}.bin")), trainer.params())?;
        }
        if config.train.log_every > 0 && (step % config.train.log_every == 0 || step == config.iterations) {
            let r = &out.record;
            eprintln!(
                "step {step:>5}  reward {:.3}  format {:.3}  caption-only {:.3}  kl {:.4}",
                r.total, r.format_compliance, r.stage2_self_consistency, r.grpo.mean_kl
            );
        }
        records.push(out.record);
    }
    diagnostics.finish()?;
    if let Some(t) = trace {
        t.finish()?;
    }
    io::write_snapshot(&dir.join(FINAL_SNAPSHOT), trainer.params())?;
    Ok(TrainSummary {
        dir: dir.to_path_buf(),
        records,
        params: trainer.params().clone(),
    })
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub metrics: EvalMetrics,
    pub rows: Vec<EvalRow>,
}

/// Evaluates a snapshot on the held-out synthetic set.
pub fn eval_snapshot(config: &RunConfig, snapshot: &Path) -> Result<EvalOutcome, Failure> {
    let params = load_policy(config, snapshot)?;
    eval_policy(config, &params)
}

pub fn eval_policy(config: &RunConfig, params: &PolicyParams) -> Result<EvalOutcome, Failure> {
    let (_, heldout) = synthetic_split(config)?;
    if heldout.is_empty() {
        return Err(Failure::Config("data.heldout_count must be >= 1 for evaluation".into()));
    }
    let rows = evaluate(params, &heldout, &config.settings()?, config.eval.decoding, config.eval.seed)?;
    let preds: Vec<Prediction> = rows.iter().map(|r| r.prediction.clone()).collect();
    Ok(EvalOutcome {
        metrics: eval_metrics(&preds)?,
        rows,
    })
}

/// Metrics over a predictions JSONL file.
pub fn eval_predictions(path: &Path) -> Result<EvalMetrics, Failure> {
    let preds: Vec<Prediction> = io::read_jsonl(path)?;
    if preds.is_empty() {
        return Err(Failure::Validation(format!("no predictions in {}", path.display())));
    }
    Ok(eval_metrics(&preds)?)
}

pub fn write_eval(dir: &Path, outcome: &EvalOutcome) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    let mut w = JsonlWriter::create(&dir.join(PREDICTIONS_FILE))?;
    for r in &outcome.rows {
        w.write(r)?;
    }
    w.finish()?;
    let json = serde_json::to_string_pretty(&outcome.metrics).map_err(|e| Failure::Io(e.to_string()))?;
    std::fs::write(dir.join(METRICS_FILE), json + "\n")
        .map_err(|e| Failure::Io(format!("{}: {e}", dir.join(METRICS_FILE).display())))
}

pub fn render_metrics(m: &EvalMetrics) -> String {
    let mut s = format!("samples: {}\n{:<14} {:>10} {:>10} {:>8}\n", m.samples, "condition", "plcc", "srcc", "rated");
    for (name, c) in [("image", &m.image), ("caption-only", &m.caption_only)] {
        writeln!(s, "{name:<14} {:>10} {:>10} {:>8}", opt(c.plcc), opt(c.srcc), c.count).unwrap();
    }
    writeln!(s, "rouge-1 recall: {:.4}", m.rouge1).unwrap();
    s
}

pub fn metrics_csv(m: &EvalMetrics) -> String {
    let cell = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v}"));
    let mut s = String::from("condition,plcc,srcc,rated,samples\n");
    for (name, c) in [("image", &m.image), ("caption_only", &m.caption_only)] {
        writeln!(s, "{name},{},{},{},{}", cell(c.plcc), cell(c.srcc), c.count, m.samples).unwrap();
    }
    writeln!(s, "rouge1,{},,,{}", m.rouge1, m.samples).unwrap();
    s
}
