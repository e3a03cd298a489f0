//! The end-to-end experiment: data, training per direction, MCQ scoring,
//! entropy, generation, and statistics.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use reversal_core::datagen::{Corpus, Segment};
use reversal_core::entropy::{entropy_prompts, mc_conditional_entropy, RolloutConfig};
use reversal_core::scoring::{evaluate_many, exact_match_generation};
use reversal_core::train::{train_with_callback, SequenceSource};
use reversal_core::{
    bootstrap_accuracy, generate_split, init_model, make_mcq_set, paired_t_test, theoretical_mult_entropy,
    ArithmeticInstance, Direction, EntropyTarget, Format, McqInstance, ModelParams, ScoreParadigm, SplitSpec,
    TokenSequence,
};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{ExperimentConfig, RolloutLength};
use crate::error::CliError;
use crate::report::{
    emit_report, Column, Comparison, EntropyCell, EvalReport, Provenance, Scale, StageTiming, TrainingSummary,
    REPORT_VERSION,
};

/// Derived seeds, so each random stage draws from its own stream.
mod salt {
    pub const MCQ_TEST: u64 = 0x6d63_7174;
    pub const MCQ_TRAIN: u64 = 0x6d63_7172;
    pub const SUBSAMPLE: u64 = 0x7375_6273;
    pub const ENTROPY: u64 = 0x656e_7472;
    pub const GENERATE: u64 = 0x6765_6e65;
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Reuse a direction's checkpoint when its training summary was produced
    /// by the same model, training and data settings.
    pub reuse_checkpoints: bool,
}

/// The span a column's entropy and generation cells are measured on.
pub fn column_target(paradigm: &ScoreParadigm) -> Option<Segment> {
    match paradigm {
        ScoreParadigm::ForwardNormalized => Some(Segment::Answer),
        ScoreParadigm::ReverseQuestionOnly => Some(Segment::Question),
        ScoreParadigm::PartialTarget { target, .. } => Some(*target),
        ScoreParadigm::ReverseNormalizedWithPrior | ScoreParadigm::ReverseUnnormalizedWithPrior => None,
    }
}

/// Which exact oracle describes predicting `target` from what precedes it.
pub fn theoretical_target(format: Format, direction: Direction, target: Segment) -> Option<EntropyTarget> {
    use Segment::*;
    match (format, direction, target) {
        (Format::ForwardX, Direction::L2r, Answer | P) => Some(EntropyTarget::Product),
        (Format::ForwardX, Direction::R2l, FactorPair | Question) => Some(EntropyTarget::FactorPair),
        (Format::ForwardX, Direction::R2l, M) => Some(EntropyTarget::SingleFactor),
        (Format::ReverseX, Direction::R2l, P | Question) => Some(EntropyTarget::Product),
        (Format::ReverseX, Direction::L2r, FactorPair | Answer) => Some(EntropyTarget::FactorPair),
        (Format::ReverseX, Direction::L2r, N) => Some(EntropyTarget::SingleFactor),
        _ => None,
    }
}

fn target_len(format: Format, target: Segment, d: usize) -> usize {
    format.segment(target, d).len()
}

fn dir_tag(d: Direction) -> &'static str {
    match d {
        Direction::L2r => "l2r",
        Direction::R2l => "r2l",
    }
}

fn file_tag(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

struct Limited<'a> {
    inner: Corpus<'a>,
    limit: usize,
}

impl SequenceSource for Limited<'_> {
    fn num_sequences(&self) -> usize {
        self.inner.num_sequences().min(self.limit)
    }

    fn sequences(&self) -> Box<dyn Iterator<Item = TokenSequence> + '_> {
        Box::new(self.inner.sequences().take(self.limit))
    }
}

/// Sidecar written next to each checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainRecord {
    fingerprint: String,
    summary: TrainingSummary,
}

fn train_fingerprint(cfg: &ExperimentConfig, direction: Direction) -> String {
    serde_json::json!({
        "digits": cfg.digits,
        "format": cfg.format,
        "direction": direction,
        "test_size": cfg.test_size,
        "train_limit": cfg.train_limit,
        "model": cfg.model,
        "train": cfg.train,
        "seed": cfg.seed,
    })
    .to_string()
}

struct Stages {
    timings: Vec<StageTiming>,
}

impl Stages {
    fn run<T>(
        &mut self,
        name: &str,
        seed: u64,
        artifacts: &[PathBuf],
        f: impl FnOnce() -> Result<T, CliError>,
    ) -> Result<T, CliError> {
        info!("stage {name} (seed {seed}) started");
        let t = Instant::now();
        let out = f().map_err(|e| CliError::Stage {
            stage: name.to_string(),
            source: Box::new(e),
            artifacts: artifacts.iter().filter(|p| p.exists()).cloned().collect(),
        })?;
        let seconds = t.elapsed().as_secs_f64();
        info!("stage {name} finished in {seconds:.1}s");
        self.timings.push(StageTiming { stage: name.to_string(), seconds });
        Ok(out)
    }
}

fn git_commit() -> Option<String> {
    let out = std::process::Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

fn train_direction(
    cfg: &ExperimentConfig,
    split: &reversal_core::Split,
    direction: Direction,
    ckpt: &Path,
    opts: RunOptions,
) -> Result<(ModelParams<f32>, TrainingSummary), CliError> {
    let sidecar = ckpt.with_extension("json");
    let fingerprint = train_fingerprint(cfg, direction);
    if opts.reuse_checkpoints && ckpt.exists() && sidecar.exists() {
        let text = std::fs::read_to_string(&sidecar).map_err(|e| CliError::io(&sidecar, e))?;
        if let Ok(rec) = serde_json::from_str::<TrainRecord>(&text) {
            if rec.fingerprint == fingerprint {
                info!("reusing {}", ckpt.display());
                let (params, _) = load_checkpoint(ckpt).map_err(|e| CliError::checkpoint(ckpt, e))?;
                return Ok((params, rec.summary));
            }
        }
    }
    let params = init_model(&cfg.model, cfg.train.seed)?;
    let data = Limited { inner: split.corpus(direction), limit: cfg.train_limit.map_or(usize::MAX, |l| l as usize) };
    let start = Instant::now();
    let log_every = cfg.train.log_every;
    let mut window = (0.0, 0usize);
    let outcome = train_with_callback(params, &data, &cfg.train, |s| {
        window = (window.0 + s.loss, window.1 + 1);
        if (s.step + 1) % log_every == 0 || s.step + 1 == s.total_steps {
            info!(
                "{} step {}/{} loss {:.4} lr {:.2e} |g| {:.3} ({:.0}s)",
                direction,
                s.step + 1,
                s.total_steps,
                window.0 / window.1 as f64,
                s.lr,
                s.grad_norm,
                start.elapsed().as_secs_f64()
            );
            window = (0.0, 0);
        }
    })?;
    save_checkpoint(&outcome.params, ckpt).map_err(|e| CliError::checkpoint(ckpt, e))?;
    let summary = TrainingSummary {
        direction,
        final_loss: outcome.final_loss().unwrap_or(f64::NAN),
        total_steps: outcome.total_steps,
        tokens_seen: outcome.tokens_seen,
        loss_curve: outcome.loss_curve,
        checkpoint: ckpt.to_path_buf(),
    };
    let rec = TrainRecord { fingerprint, summary: summary.clone() };
    let text = serde_json::to_string_pretty(&rec).expect("serializes");
    std::fs::write(&sidecar, text).map_err(|e| CliError::io(&sidecar, e))?;
    Ok((outcome.params, summary))
}

fn entropy_cell(
    params: &ModelParams<f32>,
    cfg: &ExperimentConfig,
    direction: Direction,
    instances: &[ArithmeticInstance],
    target: Segment,
    seed: u64,
) -> Result<EntropyCell, CliError> {
    let prompts = entropy_prompts(instances, direction, target)?;
    let rollout_len = match cfg.eval.rollout_length {
        RolloutLength::Completion => target_len(cfg.format, target, cfg.digits),
        RolloutLength::Fixed(n) => n,
    };
    let rc = RolloutConfig {
        rollout_len,
        rollouts_per_prompt: cfg.eval.rollouts_per_prompt,
        temperature: cfg.eval.temperature,
        seed,
    };
    let est = mc_conditional_entropy(params, direction, &prompts, &rc)?;
    Ok(EntropyCell {
        mean_nll: est.mean_nll,
        std_error: est.std_error(),
        n_prompts: prompts.len(),
        rollout_len,
        rollouts_per_prompt: rc.rollouts_per_prompt,
    })
}

fn write_records(path: &Path, eval: &reversal_core::McqEvaluation) -> Result<(), CliError> {
    let mut text = String::new();
    for r in &eval.records {
        text.push_str(&r.to_json_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Runs the whole pipeline and writes the report, checkpoints and per-item
/// records under `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvalReport, CliError> {
    run_experiment_with(cfg, RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: RunOptions) -> Result<EvalReport, CliError> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    let seed = cfg.seed;
    let mut stages = Stages { timings: Vec::new() };
    stages.run("setup", seed, &[], || {
        std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        let path = out.join("config.json");
        std::fs::write(&path, cfg.to_json()).map_err(|e| CliError::io(&path, e))
    })?;
    let paradigms = cfg.paradigms();

    let spec = SplitSpec { digits: cfg.digits, format: cfg.format, test_size: cfg.test_size, seed };
    let (split, test_mcqs, train_subset, train_mcqs) = stages.run("data", seed, &[], || {
        let split = generate_split(spec)?;
        let e = &cfg.eval;
        let test_mcqs = make_mcq_set(split.test(), e.num_choices, e.augment, seed ^ salt::MCQ_TEST)?;
        let subset = split.train_subsample(cfg.test_size as usize, seed ^ salt::SUBSAMPLE);
        let train_mcqs = make_mcq_set(&subset, e.num_choices, e.augment, seed ^ salt::MCQ_TRAIN)?;
        Ok((split, test_mcqs, subset, train_mcqs))
    })?;
    let n_prompts = cfg.eval.entropy_prompts.min(cfg.test_size as usize);

    let mut training = Vec::new();
    let mut columns = Vec::new();
    for &direction in &cfg.directions {
        let ckpt = out.join(format!("{}.ckpt", dir_tag(direction)));
        let stage = format!("train:{direction}");
        let (params, summary) = stages
            .run(&stage, seed, std::slice::from_ref(&ckpt), || train_direction(cfg, &split, direction, &ckpt, opts))?;
        training.push(summary);

        let mine: Vec<ScoreParadigm> =
            paradigms.iter().copied().filter(|p| p.required_direction() == direction).collect();
        if mine.is_empty() {
            continue;
        }
        let evals = stages.run(&format!("mcq:{direction}"), seed, &[], || {
            let test = evaluate_many(&params, direction, &test_mcqs, &mine)?;
            let train = evaluate_many(&params, direction, &train_mcqs, &mine)?;
            for (te, tr) in test.iter().zip(&train) {
                let tag = file_tag(&te.paradigm.label());
                write_records(&out.join(format!("records_{tag}_test.jsonl")), te)?;
                write_records(&out.join(format!("records_{tag}_train.jsonl")), tr)?;
            }
            Ok(test.into_iter().zip(train).collect::<Vec<_>>())
        })?;

        for (k, (test_eval, train_eval)) in evals.into_iter().enumerate() {
            let paradigm = test_eval.paradigm;
            let label = paradigm.label();
            let target = column_target(&paradigm);
            let col_seed = seed.wrapping_add(k as u64);
            let (test_entropy, train_entropy, exact) = match target {
                None => (None, None, None),
                Some(target) => stages.run(&format!("entropy:{label}"), col_seed, &[], || {
                    let test_insts = &split.test()[..n_prompts];
                    let train_insts = &train_subset[..n_prompts.min(train_subset.len())];
                    let es = col_seed ^ salt::ENTROPY;
                    let te = entropy_cell(&params, cfg, direction, test_insts, target, es)?;
                    let tr = entropy_cell(&params, cfg, direction, train_insts, target, es.wrapping_add(1))?;
                    let gen = if cfg.eval.generation {
                        Some(exact_match_generation(&params, direction, test_insts, target, col_seed ^ salt::GENERATE)?)
                    } else {
                        None
                    };
                    Ok((Some(te), Some(tr), gen))
                })?,
            };
            let theoretical = match target.and_then(|t| theoretical_target(cfg.format, direction, t)) {
                Some(t) => Some(
                    stages
                        .run(&format!("theory:{label}"), seed, &[], || Ok(theoretical_mult_entropy(cfg.digits, t)?))?,
                ),
                None => None,
            };
            let bootstrap = bootstrap_accuracy(
                &test_eval.correctness(),
                cfg.eval.bootstrap_replicates,
                cfg.eval.bootstrap_fraction,
                seed ^ salt::BOOTSTRAP,
            )?;
            columns.push(Column {
                label,
                direction,
                paradigm,
                test_accuracy: test_eval.accuracy,
                train_accuracy: train_eval.accuracy,
                test_entropy,
                train_entropy,
                theoretical_entropy: theoretical,
                test_exact_match: exact,
                bootstrap,
            });
        }
    }
    // Keep the configured column order regardless of training order.
    columns.sort_by_key(|c| paradigms.iter().position(|p| *p == c.paradigm));

    let comparisons = stages.run("stats", seed, &[], || {
        let mut cmp = Vec::new();
        if let Some((first, rest)) = columns.split_first() {
            for other in rest {
                let t = paired_t_test(&first.bootstrap.replicate_means, &other.bootstrap.replicate_means)?;
                cmp.push(Comparison {
                    task: format!("{} d={}", cfg.format.label(), cfg.digits),
                    scorer_a: first.label.clone(),
                    scorer_b: other.label.clone(),
                    mean_a: first.bootstrap.mean,
                    std_a: first.bootstrap.std,
                    mean_b: other.bootstrap.mean,
                    std_b: other.bootstrap.std,
                    t: t.t,
                    p: t.p,
                });
            }
        }
        Ok(cmp)
    })?;

    let train_instances = cfg.train_limit.map_or(split.train_len(), |l| l.min(split.train_len()));
    let report = EvalReport {
        schema_version: REPORT_VERSION,
        provenance: Provenance { seed, tool_version: env!("CARGO_PKG_VERSION").to_string(), git_commit: git_commit() },
        config: cfg.clone(),
        scale: Scale {
            digits: cfg.digits,
            format: cfg.format,
            params_per_model: cfg.model.num_params(),
            train_instances,
            tokens_per_instance: 4 * cfg.digits + 4,
            test_size: cfg.test_size,
            mcqs_per_set: test_mcqs.len(),
        },
        training,
        columns,
        comparisons,
        timings: stages.timings,
    };
    report.check()?;
    emit_report(&report, &out)?;
    Ok(report)
}

/// Generates the MCQ test set for a config, as the pipeline would.
pub fn test_mcqs(cfg: &ExperimentConfig) -> Result<Vec<McqInstance>, CliError> {
    let split =
        generate_split(SplitSpec { digits: cfg.digits, format: cfg.format, test_size: cfg.test_size, seed: cfg.seed })?;
    Ok(make_mcq_set(split.test(), cfg.eval.num_choices, cfg.eval.augment, cfg.seed ^ salt::MCQ_TEST)?)
}
