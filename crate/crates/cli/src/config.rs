use std::path::{Path, PathBuf};

use reversal_core::datagen::Segment;
use reversal_core::{Direction, Format, ModelConfig, ScoreParadigm, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// How many tokens each entropy rollout samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutLength {
    /// The length of the span being predicted.
    Completion,
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Scorers to run; each uses the model trained in its required direction.
    /// Empty means the standard set for the format.
    #[serde(default)]
    pub paradigms: Vec<ScoreParadigm>,
    pub num_choices: usize,
    pub augment: usize,
    pub rollout_length: RolloutLength,
    pub rollouts_per_prompt: usize,
    pub temperature: f64,
    /// Prompts per set (test and train) for entropy and generation; capped
    /// at `test_size`.
    pub entropy_prompts: usize,
    pub generation: bool,
    pub bootstrap_replicates: usize,
    pub bootstrap_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            paradigms: Vec::new(),
            num_choices: 4,
            augment: 10,
            rollout_length: RolloutLength::Completion,
            rollouts_per_prompt: 1,
            temperature: 1.0,
            entropy_prompts: 1000,
            generation: true,
            bootstrap_replicates: 5,
            bootstrap_fraction: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub digits: usize,
    pub format: Format,
    pub directions: Vec<Direction>,
    pub test_size: u64,
    /// Train on only the first `train_limit` instances of the stream.
    #[serde(default)]
    pub train_limit: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: CONFIG_VERSION,
            digits: 3,
            format: Format::ForwardX,
            directions: vec![Direction::L2r, Direction::R2l],
            test_size: 1000,
            train_limit: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
        }
    }
}

/// Scorers reported for a format when none are configured: the headline
/// columns first, then the remaining reverse-thinking variants.
pub fn default_paradigms(format: Format) -> Vec<ScoreParadigm> {
    use ScoreParadigm::*;
    let pt = |direction, target| PartialTarget { direction, target };
    match format {
        Format::ForwardX => vec![
            ForwardNormalized,
            pt(Direction::R2l, Segment::FactorPair),
            pt(Direction::R2l, Segment::M),
            ReverseNormalizedWithPrior,
            ReverseUnnormalizedWithPrior,
            ReverseQuestionOnly,
        ],
        Format::ReverseX => vec![
            ReverseQuestionOnly,
            pt(Direction::L2r, Segment::FactorPair),
            pt(Direction::L2r, Segment::N),
            ForwardNormalized,
            ReverseNormalizedWithPrior,
            ReverseUnnormalizedWithPrior,
        ],
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn paradigms(&self) -> Vec<ScoreParadigm> {
        if self.eval.paradigms.is_empty() {
            default_paradigms(self.format)
                .into_iter()
                .filter(|p| self.directions.contains(&p.required_direction()))
                .collect()
        } else {
            self.eval.paradigms.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != CONFIG_VERSION {
            return bad(format!("config schema_version {} (expected {CONFIG_VERSION})", self.schema_version));
        }
        if self.directions.is_empty() {
            return bad("at least one direction is required".into());
        }
        let mut seen = self.directions.clone();
        seen.dedup();
        if seen.len() != self.directions.len() {
            return bad("directions must not repeat".into());
        }
        self.model.validate()?;
        self.train.validate()?;
        let seq_len = 4 * self.digits + 4;
        if seq_len > self.model.max_seq_len {
            return bad(format!("{}-digit instances need max_seq_len >= {seq_len}", self.digits));
        }
        for p in &self.eval.paradigms {
            if !self.directions.contains(&p.required_direction()) {
                return bad(format!("paradigm {p} needs a {} model, which is not trained", p.required_direction()));
            }
        }
        let e = &self.eval;
        if e.num_choices < 2 || e.augment == 0 || e.rollouts_per_prompt == 0 || e.entropy_prompts == 0 {
            return bad("num_choices >= 2; augment, rollouts_per_prompt and entropy_prompts positive".into());
        }
        if e.rollout_length == RolloutLength::Fixed(0) {
            return bad("rollout length must be positive".into());
        }
        let fraction_ok = e.bootstrap_fraction > 0.0 && e.bootstrap_fraction <= 1.0;
        if e.temperature.is_nan() || e.temperature <= 0.0 || !fraction_ok {
            return bad("temperature must be positive and bootstrap_fraction in (0, 1]".into());
        }
        if e.bootstrap_replicates < 2 {
            return bad("at least two bootstrap replicates are needed for the t-test".into());
        }
        reversal_core::SplitSpec {
            digits: self.digits,
            format: self.format,
            test_size: self.test_size,
            seed: self.seed,
        }
        .validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn paradigm_direction_must_be_trained() {
        let c = ExperimentConfig {
            directions: vec![Direction::L2r],
            eval: EvalConfig { paradigms: vec![ScoreParadigm::ReverseQuestionOnly], ..EvalConfig::default() },
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig { directions: vec![Direction::L2r], ..ExperimentConfig::default() };
        assert_eq!(c.paradigms(), vec![ScoreParadigm::ForwardNormalized]);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::default().to_json()).unwrap();
        v["surprise"] = 1.into();
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }

    #[test]
    fn sequence_must_fit() {
        let c = ExperimentConfig { digits: 8, ..ExperimentConfig::default() };
        assert!(c.validate().is_err());
    }
}
