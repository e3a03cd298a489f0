//! Left-to-right versus right-to-left factorization experiments on
//! multiplication corpora.

pub mod datagen;
pub mod entropy;
pub mod error;
pub mod linalg;
pub mod model;
pub mod sample;
pub mod scoring;
pub mod stats;
pub mod train;
pub mod vocab;

pub use datagen::{
    generate_split, make_mcq_set, render_instance, reverse_sequence, ArithmeticInstance, Format, McqInstance, Segment,
    Split, SplitSpec,
};
pub use entropy::{mc_conditional_entropy, theoretical_mult_entropy, EntropyEstimate, EntropyTarget, RolloutConfig};
pub use error::{Error, Result};
pub use model::{init_model, next_token_logprobs, span_logprob, LogProbs, ModelConfig, ModelParams};
pub use sample::{sample, sample_many, Rollout, SampleOptions};
pub use scoring::{evaluate_mcq, exact_match_generation, score_choice, McqEvaluation, ScoreParadigm, ScoreRecord};
pub use stats::{bootstrap_accuracy, paired_t_test, BootstrapResult, TTest};
pub use train::{train, SequenceSource, TrainConfig, TrainOutcome};
pub use vocab::{Direction, Token, TokenSequence, VOCAB_SIZE};
