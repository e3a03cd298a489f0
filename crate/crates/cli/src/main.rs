use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use reversal_cli::config::RolloutLength;
use reversal_cli::pipeline::{run_experiment_with, test_mcqs, RunOptions};
use reversal_cli::report::Comparison;
use reversal_cli::{load_checkpoint, save_checkpoint, CliError, ExperimentConfig};
use reversal_core::datagen::{render_directed, write_corpus, Segment};
use reversal_core::entropy::{entropy_prompts, mc_conditional_entropy, RolloutConfig};
use reversal_core::scoring::evaluate_many;
use reversal_core::{
    bootstrap_accuracy, generate_split, make_mcq_set, paired_t_test, theoretical_mult_entropy, Direction,
    EntropyTarget, ScoreRecord, SplitSpec,
};

#[derive(Parser)]
#[command(name = "reversal", version, about = "Left-to-right vs right-to-left multiplication experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dir {
    L2r,
    R2l,
}

impl From<Dir> for Direction {
    fn from(d: Dir) -> Self {
        match d {
            Dir::L2r => Direction::L2r,
            Dir::R2l => Direction::R2l,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Span {
    M,
    N,
    P,
    FactorPair,
    Question,
    Answer,
}

impl From<Span> for Segment {
    fn from(s: Span) -> Self {
        match s {
            Span::M => Segment::M,
            Span::N => Segment::N,
            Span::P => Segment::P,
            Span::FactorPair => Segment::FactorPair,
            Span::Question => Segment::Question,
            Span::Answer => Segment::Answer,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Product,
    FactorPair,
    SingleFactor,
}

#[derive(Subcommand)]
enum Command {
    /// Export the train stream, test set and test MCQs as text.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "l2r")]
        direction: Dir,
        /// Export at most this many training instances.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Train one direction and save its checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        direction: Dir,
    },
    /// Score the test MCQs with a checkpoint.
    EvalMcq {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        direction: Dir,
    },
    /// Monte-Carlo conditional entropy of a span on the test set.
    Entropy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        direction: Dir,
        #[arg(long, value_enum)]
        target: Span,
        /// Tokens per rollout; defaults to the config's rollout length.
        #[arg(long)]
        rollout_len: Option<usize>,
    },
    /// Exact conditional entropy under uniformly drawn pairs.
    TheoEntropy {
        #[command(flatten)]
        common: Common,
        /// Digits per factor; defaults to the config's.
        #[arg(long)]
        digits: Option<usize>,
        #[arg(long, value_enum, default_value = "factor-pair")]
        target: Target,
    },
    /// Bootstrap two per-item record files and run a paired t-test.
    Compare {
        #[command(flatten)]
        common: Common,
        a: PathBuf,
        b: PathBuf,
    },
    /// The full pipeline.
    Run {
        #[command(flatten)]
        common: Common,
        /// Reuse matching checkpoints from an earlier run in the same directory.
        #[arg(long)]
        reuse_checkpoints: bool,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).expect("serializes");
    std::fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
    println!("{text}");
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<ScoreRecord>, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    std::io::BufReader::new(f)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| {
            let l = l.map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| CliError::Report(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { common, direction, limit } => {
            let cfg = load_config(&common)?;
            let split = generate_split(SplitSpec {
                digits: cfg.digits,
                format: cfg.format,
                test_size: cfg.test_size,
                seed: cfg.seed,
            })?;
            let dir = &cfg.output_dir;
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            let direction = Direction::from(direction);
            let io = |p: &Path| {
                let p = p.to_path_buf();
                move |e| CliError::io(&p, e)
            };
            let train_path = dir.join("train.txt");
            let f = std::fs::File::create(&train_path).map_err(io(&train_path))?;
            let train = split.train().take(limit.unwrap_or(usize::MAX)).map(|i| render_directed(&i, direction));
            write_corpus(std::io::BufWriter::new(f), train).map_err(io(&train_path))?;
            let test_path = dir.join("test.txt");
            let f = std::fs::File::create(&test_path).map_err(io(&test_path))?;
            let test = split.test().iter().map(|i| render_directed(i, direction));
            write_corpus(std::io::BufWriter::new(f), test).map_err(io(&test_path))?;
            let mcqs = make_mcq_set(split.test(), cfg.eval.num_choices, cfg.eval.augment, cfg.seed)?;
            let mcq_path = dir.join("mcq_test.jsonl");
            let text: String = mcqs.iter().map(|q| serde_json::to_string(q).expect("serializes") + "\n").collect();
            std::fs::write(&mcq_path, text).map_err(io(&mcq_path))?;
            info!("wrote {}, {} and {}", train_path.display(), test_path.display(), mcq_path.display());
        }
        Command::Train { common, direction } => {
            let mut cfg = load_config(&common)?;
            cfg.directions = vec![direction.into()];
            let split = generate_split(SplitSpec {
                digits: cfg.digits,
                format: cfg.format,
                test_size: cfg.test_size,
                seed: cfg.seed,
            })?;
            let params = reversal_core::init_model(&cfg.model, cfg.train.seed)?;
            let data = split.corpus(direction.into());
            let limit = cfg.train_limit.map_or(usize::MAX, |l| l as usize);
            let seqs: Vec<_> = reversal_core::train::SequenceSource::sequences(&data).take(limit).collect();
            let log_every = cfg.train.log_every;
            let outcome = reversal_core::train::train_with_callback(params, &seqs, &cfg.train, |s| {
                if (s.step + 1) % log_every == 0 {
                    info!("step {}/{} loss {:.4} lr {:.2e}", s.step + 1, s.total_steps, s.loss, s.lr);
                }
            })?;
            let dir = &cfg.output_dir;
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            let ckpt = dir.join(format!("{}.ckpt", Direction::from(direction).label().to_lowercase()));
            save_checkpoint(&outcome.params, &ckpt).map_err(|e| CliError::checkpoint(&ckpt, e))?;
            let summary = serde_json::json!({
                "direction": Direction::from(direction),
                "final_loss": outcome.final_loss(),
                "total_steps": outcome.total_steps,
                "tokens_seen": outcome.tokens_seen,
                "checkpoint": ckpt,
                "loss_curve": outcome.loss_curve,
            });
            write_json(dir, "train_summary.json", &summary)?;
        }
        Command::EvalMcq { common, checkpoint, direction } => {
            let cfg = load_config(&common)?;
            let direction = Direction::from(direction);
            let (params, _) = load_checkpoint(&checkpoint).map_err(|e| CliError::checkpoint(&checkpoint, e))?;
            let mcqs = test_mcqs(&cfg)?;
            let paradigms: Vec<_> =
                cfg.paradigms().into_iter().filter(|p| p.required_direction() == direction).collect();
            let evals = evaluate_many(&params, direction, &mcqs, &paradigms)?;
            let dir = &cfg.output_dir;
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            let mut summary = Vec::new();
            for ev in &evals {
                let tag: String = ev
                    .paradigm
                    .label()
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
                    .collect();
                let path = dir.join(format!("records_{tag}_test.jsonl"));
                let text: String = ev.records.iter().map(|r| r.to_json_line() + "\n").collect();
                std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
                summary.push(
                    serde_json::json!({ "paradigm": ev.paradigm.label(), "accuracy": ev.accuracy, "records": path }),
                );
            }
            write_json(dir, "mcq_summary.json", &summary)?;
        }
        Command::Entropy { common, checkpoint, direction, target, rollout_len } => {
            let cfg = load_config(&common)?;
            let direction = Direction::from(direction);
            let target = Segment::from(target);
            let (params, _) = load_checkpoint(&checkpoint).map_err(|e| CliError::checkpoint(&checkpoint, e))?;
            let split = generate_split(SplitSpec {
                digits: cfg.digits,
                format: cfg.format,
                test_size: cfg.test_size,
                seed: cfg.seed,
            })?;
            let n = cfg.eval.entropy_prompts.min(split.test().len());
            let prompts = entropy_prompts(&split.test()[..n], direction, target)?;
            let len = rollout_len.unwrap_or(match cfg.eval.rollout_length {
                RolloutLength::Completion => cfg.format.segment(target, cfg.digits).len(),
                RolloutLength::Fixed(k) => k,
            });
            let rc = RolloutConfig {
                rollout_len: len,
                rollouts_per_prompt: cfg.eval.rollouts_per_prompt,
                temperature: cfg.eval.temperature,
                seed: cfg.seed,
            };
            let est = mc_conditional_entropy(&params, direction, &prompts, &rc)?;
            let record = serde_json::json!({
                "direction": direction,
                "task": format!("{} d={} {:?}", cfg.format.label(), cfg.digits, target),
                "mean_nll": est.mean_nll,
                "std_error": est.std_error(),
                "n_prompts": prompts.len(),
                "rollout_len": len,
            });
            write_json(&cfg.output_dir, "entropy.json", &record)?;
        }
        Command::TheoEntropy { common, digits, target } => {
            let cfg = load_config(&common)?;
            let d = digits.unwrap_or(cfg.digits);
            let target = match target {
                Target::Product => EntropyTarget::Product,
                Target::FactorPair => EntropyTarget::FactorPair,
                Target::SingleFactor => EntropyTarget::SingleFactor,
            };
            let start = std::time::Instant::now();
            let h = theoretical_mult_entropy(d, target)?;
            let record = serde_json::json!({
                "digits": d,
                "target": target,
                "entropy_nats": h,
                "seconds": start.elapsed().as_secs_f64(),
            });
            if common.out.is_some() || common.config.is_some() {
                write_json(&cfg.output_dir, "theo_entropy.json", &record)?;
            } else {
                println!("{}", serde_json::to_string_pretty(&record).expect("serializes"));
            }
        }
        Command::Compare { common, a, b } => {
            let cfg = load_config(&common)?;
            let ra = read_records(&a)?;
            let rb = read_records(&b)?;
            let e = &cfg.eval;
            let correct = |r: &[ScoreRecord]| r.iter().map(|x| x.correct).collect::<Vec<_>>();
            let ba = bootstrap_accuracy(&correct(&ra), e.bootstrap_replicates, e.bootstrap_fraction, cfg.seed)?;
            let bb = bootstrap_accuracy(&correct(&rb), e.bootstrap_replicates, e.bootstrap_fraction, cfg.seed)?;
            let t = paired_t_test(&ba.replicate_means, &bb.replicate_means)?;
            let name =
                |r: &[ScoreRecord], p: &Path| r.first().map_or_else(|| p.display().to_string(), |x| x.paradigm.clone());
            let cmp = Comparison {
                task: format!("{} d={}", cfg.format.label(), cfg.digits),
                scorer_a: name(&ra, &a),
                scorer_b: name(&rb, &b),
                mean_a: ba.mean,
                std_a: ba.std,
                mean_b: bb.mean,
                std_b: bb.std,
                t: t.t,
                p: t.p,
            };
            write_json(&cfg.output_dir, "comparison.json", &cmp)?;
        }
        Command::Run { common, reuse_checkpoints } => {
            let cfg = load_config(&common)?;
            let report = run_experiment_with(&cfg, RunOptions { reuse_checkpoints })?;
            print!("{}", report.render_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
