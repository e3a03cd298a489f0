use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use reversal_core::stats::BootstrapResult;
use reversal_core::train::LossPoint;
use reversal_core::{Direction, Format, ScoreParadigm};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub tool_version: String,
    pub git_commit: Option<String>,
}

/// Sizes echoed so desk-scale numbers are never mistaken for anything else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub digits: usize,
    pub format: Format,
    pub params_per_model: usize,
    pub train_instances: u64,
    pub tokens_per_instance: usize,
    pub test_size: u64,
    pub mcqs_per_set: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub direction: Direction,
    pub final_loss: f64,
    pub total_steps: usize,
    /// Scored target tokens.
    pub tokens_seen: usize,
    pub loss_curve: Vec<LossPoint>,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyCell {
    pub mean_nll: f64,
    pub std_error: f64,
    pub n_prompts: usize,
    pub rollout_len: usize,
    pub rollouts_per_prompt: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub label: String,
    pub direction: Direction,
    pub paradigm: ScoreParadigm,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub test_entropy: Option<EntropyCell>,
    pub train_entropy: Option<EntropyCell>,
    pub theoretical_entropy: Option<f64>,
    pub test_exact_match: Option<f64>,
    /// Bootstrap over per-item test correctness.
    pub bootstrap: BootstrapResult,
}

/// `t` may be infinite; JSON has no infinity, so it is stored as a string
/// in that case.
mod maybe_infinite {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            Repr::Num(*x).serialize(s)
        } else if *x > 0.0 {
            Repr::Text("inf".into()).serialize(s)
        } else if *x < 0.0 {
            Repr::Text("-inf".into()).serialize(s)
        } else {
            Repr::Text("nan".into()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("expected a number, got {other:?}"))),
            },
        }
    }
}

/// Paired t-test between two scorers' bootstrap replicate means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub task: String,
    pub scorer_a: String,
    pub scorer_b: String,
    pub mean_a: f64,
    pub std_a: f64,
    pub mean_b: f64,
    pub std_b: f64,
    #[serde(with = "maybe_infinite")]
    pub t: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    pub scale: Scale,
    pub training: Vec<TrainingSummary>,
    pub columns: Vec<Column>,
    pub comparisons: Vec<Comparison>,
    /// Wall-clock per stage; the only field that varies between identical runs.
    pub timings: Vec<StageTiming>,
}

impl EvalReport {
    pub fn column(&self, paradigm: &ScoreParadigm) -> Option<&Column> {
        self.columns.iter().find(|c| c.paradigm == *paradigm)
    }

    pub fn training(&self, direction: Direction) -> Option<&TrainingSummary> {
        self.training.iter().find(|t| t.direction == direction)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let r: EvalReport = serde_json::from_str(text).map_err(|e| CliError::Report(e.to_string()))?;
        r.check()?;
        Ok(r)
    }

    /// Structural checks beyond what the JSON schema enforces.
    pub fn check(&self) -> Result<(), CliError> {
        if self.schema_version != REPORT_VERSION {
            return Err(CliError::Report(format!("unknown report schema_version {}", self.schema_version)));
        }
        for c in &self.columns {
            let accs = [Some(c.test_accuracy), Some(c.train_accuracy), c.test_exact_match];
            if accs.into_iter().flatten().any(|a| !(0.0..=1.0).contains(&a)) {
                return Err(CliError::Report(format!("column {} has an accuracy outside [0, 1]", c.label)));
            }
        }
        Ok(())
    }

    pub fn render_table(&self) -> String {
        let s = &self.scale;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{}, d={} | {} params per model | {} train instances x {} tokens | {} test instances, {} MCQs per set",
            s.format.label(),
            s.digits,
            s.params_per_model,
            s.train_instances,
            s.tokens_per_instance,
            s.test_size,
            s.mcqs_per_set
        );
        let label_w = 26;
        let col_w = self.columns.iter().map(|c| c.label.len()).max().unwrap_or(0).max(9) + 2;
        let _ = write!(out, "{:<label_w$}", "");
        for c in &self.columns {
            let _ = write!(out, "{:>col_w$}", c.label);
        }
        out.push('\n');
        let pct = |x: Option<f64>| x.map_or("—".to_string(), |v| format!("{:.2}", 100.0 * v));
        let num = |x: Option<f64>| x.map_or("—".to_string(), |v| format!("{v:.2}"));
        let rows: Vec<(&str, Vec<String>)> = vec![
            ("Test Accuracy (%)", self.columns.iter().map(|c| pct(Some(c.test_accuracy))).collect()),
            ("Train Accuracy (%)", self.columns.iter().map(|c| pct(Some(c.train_accuracy))).collect()),
            (
                "Test Cond. Ent. (nats)",
                self.columns.iter().map(|c| num(c.test_entropy.as_ref().map(|e| e.mean_nll))).collect(),
            ),
            (
                "Train Cond. Ent. (nats)",
                self.columns.iter().map(|c| num(c.train_entropy.as_ref().map(|e| e.mean_nll))).collect(),
            ),
            ("Theo. Cond. Ent. (nats)", self.columns.iter().map(|c| num(c.theoretical_entropy)).collect()),
            ("Exact Match (%)", self.columns.iter().map(|c| pct(c.test_exact_match)).collect()),
            (
                "Training loss",
                self.columns.iter().map(|c| num(self.training(c.direction).map(|t| t.final_loss))).collect(),
            ),
        ];
        for (name, cells) in rows {
            let _ = write!(out, "{name:<label_w$}");
            for cell in cells {
                let _ = write!(out, "{cell:>col_w$}");
            }
            out.push('\n');
        }
        if !self.comparisons.is_empty() {
            out.push('\n');
            let _ = writeln!(out, "Paired t-tests over bootstrap replicates (accuracy %, mean ± std):");
            for c in &self.comparisons {
                let _ = writeln!(
                    out,
                    "  {} vs {}: {:.2} ± {:.2} vs {:.2} ± {:.2}, t = {:.3}, p = {:.4}",
                    c.scorer_a,
                    c.scorer_b,
                    100.0 * c.mean_a,
                    100.0 * c.std_a,
                    100.0 * c.mean_b,
                    100.0 * c.std_b,
                    c.t,
                    c.p
                );
            }
        }
        out
    }
}

/// Writes `report.json` and `report.txt` into `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let json = dir.join("report.json");
    std::fs::write(&json, report.to_json() + "\n").map_err(|e| CliError::io(&json, e))?;
    let txt = dir.join("report.txt");
    std::fs::write(&txt, report.render_table()).map_err(|e| CliError::io(&txt, e))?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<EvalReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    EvalReport::from_json(&text)
}
