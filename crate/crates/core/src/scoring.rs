//! Choice scoring for multiple-choice evaluation, and free-generation exact
//! match.
//!
//! Every paradigm reduces to sums of per-token log-probabilities over one
//! sequence: `BOS + content` for an L2R model, `BOS + reverse(content)` for
//! an R2L model, where `content = question ++ choice`. A forward pass per
//! choice therefore serves all paradigms at once (see [`evaluate_many`]).
//!
//! Reverse paradigms drop the constant `log p(q)` shared by all choices.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::datagen::{ArithmeticInstance, Format, McqInstance, Segment};
use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::model::{batch_logprobs, ModelParams};
use crate::sample::{sample_streams, SampleOptions};
use crate::vocab::{Direction, Token, TokenSequence};

const MAX_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoreParadigm {
    /// Mean log-probability of the choice tokens given the question.
    ForwardNormalized,
    /// `[log p(q | a) + log p(a)] / (len(q) + len(a))` under an R2L model.
    ReverseNormalizedWithPrior,
    /// `log p(q | a) + log p(a)` under an R2L model.
    ReverseUnnormalizedWithPrior,
    /// `log p(q | a)` under an R2L model.
    ReverseQuestionOnly,
    /// Log-probability of one segment given everything that precedes it in
    /// the model's reading order. The segment must come last in that order.
    PartialTarget { direction: Direction, target: Segment },
}

impl ScoreParadigm {
    /// The direction a model must have been trained in.
    pub fn required_direction(&self) -> Direction {
        match self {
            ScoreParadigm::ForwardNormalized => Direction::L2r,
            ScoreParadigm::ReverseNormalizedWithPrior
            | ScoreParadigm::ReverseUnnormalizedWithPrior
            | ScoreParadigm::ReverseQuestionOnly => Direction::R2l,
            ScoreParadigm::PartialTarget { direction, .. } => *direction,
        }
    }

    /// Short label, e.g. `L2R`, `R2L(m,n)` or `R2L-P1`.
    pub fn label(&self) -> String {
        match self {
            ScoreParadigm::ForwardNormalized => "L2R".into(),
            ScoreParadigm::ReverseNormalizedWithPrior => "R2L-P1".into(),
            ScoreParadigm::ReverseUnnormalizedWithPrior => "R2L-P2".into(),
            ScoreParadigm::ReverseQuestionOnly => "R2L-P3".into(),
            ScoreParadigm::PartialTarget { direction, target } => {
                let seg = match target {
                    Segment::M => "m",
                    Segment::N => "n",
                    Segment::P => "p",
                    Segment::FactorPair => "m,n",
                    Segment::Question => "q",
                    Segment::Answer => "a",
                };
                format!("{}({seg})", direction.label())
            }
        }
    }

    fn check(&self, direction: Direction) -> Result<()> {
        if self.required_direction() != direction {
            return Err(Error::Contract { paradigm: self.label(), direction: direction.label().into() });
        }
        if let ScoreParadigm::PartialTarget { target, .. } = self {
            if matches!(target, Segment::Question | Segment::Answer) {
                return Err(Error::Argument(format!("{} is not a digit span", self.label())));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ScoreParadigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Per-item outcome of one paradigm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub mcq_id: usize,
    pub paradigm: String,
    pub scores: Vec<f64>,
    pub chosen: usize,
    pub correct: bool,
}

impl ScoreRecord {
    /// `{"mcq_id":…,"paradigm":…,"scores":[…],"chosen":…,"correct":…}`
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McqEvaluation {
    pub paradigm: ScoreParadigm,
    pub accuracy: f64,
    pub records: Vec<ScoreRecord>,
}

impl McqEvaluation {
    pub fn correctness(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.correct).collect()
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Sequence of content length `lc` as read in `direction`: maps a content
/// range to positions in `BOS + directed content`.
fn seq_range(direction: Direction, content: Range<usize>, lc: usize) -> Range<usize> {
    match direction {
        Direction::L2r => content.start + 1..content.end + 1,
        Direction::R2l => lc - content.end + 1..lc - content.start + 1,
    }
}

/// Combines per-token log-probabilities (index `t - 1` holds position `t`
/// of `BOS + directed content`) into the paradigm's score.
pub fn score_from_token_logprobs(
    paradigm: &ScoreParadigm,
    token_lp: &[f64],
    q_len: usize,
    a_len: usize,
    format: Format,
    d: usize,
) -> Result<f64> {
    let lc = q_len + a_len;
    debug_assert_eq!(token_lp.len(), lc);
    let sum = |r: Range<usize>| -> f64 { token_lp[r.start - 1..r.end - 1].iter().sum() };
    Ok(match paradigm {
        ScoreParadigm::ForwardNormalized => sum(q_len + 1..lc + 1) / a_len as f64,
        ScoreParadigm::ReverseNormalizedWithPrior => sum(1..lc + 1) / lc as f64,
        ScoreParadigm::ReverseUnnormalizedWithPrior => sum(1..lc + 1),
        ScoreParadigm::ReverseQuestionOnly => sum(seq_range(Direction::R2l, 0..q_len, lc)),
        ScoreParadigm::PartialTarget { direction, target } => {
            let r = seq_range(*direction, format.segment(*target, d), lc);
            if r.end != lc + 1 {
                return Err(Error::Argument(format!(
                    "{} does not end the {} reading order of {}",
                    paradigm.label(),
                    direction.label(),
                    format.label()
                )));
            }
            sum(r)
        }
    })
}

fn directed_ids(content: &[Token], direction: Direction) -> Vec<usize> {
    let mut ids = Vec::with_capacity(content.len() + 1);
    ids.push(Token::BOS.id());
    match direction {
        Direction::L2r => ids.extend(content.iter().map(|t| t.id())),
        Direction::R2l => ids.extend(content.iter().rev().map(|t| t.id())),
    }
    ids
}

/// Per-token log-probabilities of each sequence at positions `1..len`.
/// Sequences of equal length are batched together.
fn token_logprobs<S: Scalar>(params: &ModelParams<S>, seqs: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    let max = params.config().max_seq_len;
    let v = params.config().vocab_size;
    let mut out = vec![Vec::new(); seqs.len()];
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by_key(|&i| seqs[i].len());
    for group in order.chunk_by(|&a, &b| seqs[a].len() == seqs[b].len()) {
        let len = seqs[group[0]].len();
        if len > max {
            return Err(Error::Length { len, max });
        }
        if len < 2 {
            continue;
        }
        for chunk in group.chunks(MAX_BATCH) {
            let flat: Vec<usize> = chunk.iter().flat_map(|&i| seqs[i][..len - 1].iter().copied()).collect();
            let lp = batch_logprobs(params, &flat, chunk.len(), len - 1);
            for (k, &i) in chunk.iter().enumerate() {
                let base = k * (len - 1) * v;
                out[i] = (1..len).map(|t| lp[base + (t - 1) * v + seqs[i][t]].to_f64()).collect();
            }
        }
    }
    Ok(out)
}

/// Score of one choice of `mcq` under `paradigm` for a model trained in
/// `direction`.
pub fn score_choice<S: Scalar>(
    params: &ModelParams<S>,
    direction: Direction,
    mcq: &McqInstance,
    choice_index: usize,
    paradigm: &ScoreParadigm,
) -> Result<f64> {
    paradigm.check(direction)?;
    if choice_index >= mcq.choices.len() {
        return Err(Error::Argument(format!("choice {choice_index} of {}", mcq.choices.len())));
    }
    let ids = directed_ids(&mcq.content(choice_index), direction);
    let lp = token_logprobs(params, &[ids])?.pop().expect("one sequence");
    score_from_token_logprobs(
        paradigm,
        &lp,
        mcq.question.len(),
        mcq.choices[choice_index].len(),
        mcq.format,
        mcq.digits,
    )
}

/// Evaluates several paradigms that share a model direction, with one
/// forward pass per choice.
pub fn evaluate_many<S: Scalar>(
    params: &ModelParams<S>,
    direction: Direction,
    mcqs: &[McqInstance],
    paradigms: &[ScoreParadigm],
) -> Result<Vec<McqEvaluation>> {
    if mcqs.is_empty() {
        return Err(Error::Argument("no MCQs to evaluate".into()));
    }
    for p in paradigms {
        p.check(direction)?;
    }
    let seqs: Vec<Vec<usize>> =
        mcqs.iter().flat_map(|q| (0..q.choices.len()).map(move |i| directed_ids(&q.content(i), direction))).collect();
    let lps = token_logprobs(params, &seqs)?;
    let mut evals = Vec::with_capacity(paradigms.len());
    for paradigm in paradigms {
        let mut records = Vec::with_capacity(mcqs.len());
        let mut row = 0;
        for q in mcqs {
            let mut scores = Vec::with_capacity(q.choices.len());
            for c in &q.choices {
                scores.push(score_from_token_logprobs(
                    paradigm,
                    &lps[row],
                    q.question.len(),
                    c.len(),
                    q.format,
                    q.digits,
                )?);
                row += 1;
            }
            let chosen = argmax_lowest(&scores);
            records.push(ScoreRecord {
                mcq_id: q.id,
                paradigm: paradigm.label(),
                scores,
                chosen,
                correct: chosen == q.correct_index,
            });
        }
        let accuracy = records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64;
        evals.push(McqEvaluation { paradigm: *paradigm, accuracy, records });
    }
    Ok(evals)
}

pub fn evaluate_mcq<S: Scalar>(
    params: &ModelParams<S>,
    direction: Direction,
    mcqs: &[McqInstance],
    paradigm: &ScoreParadigm,
) -> Result<McqEvaluation> {
    Ok(evaluate_many(params, direction, mcqs, std::slice::from_ref(paradigm))?.pop().expect("one paradigm"))
}

/// Splits an instance into the generation prompt (`BOS` + everything before
/// `target` in reading order) and the expected continuation.
pub fn generation_task(
    inst: &ArithmeticInstance,
    direction: Direction,
    target: Segment,
) -> Result<(TokenSequence, Vec<Token>)> {
    let mut content = inst.content();
    let lc = content.len();
    let r = seq_range(direction, inst.format.segment(target, inst.digits), lc);
    if r.end != lc + 1 {
        return Err(Error::Argument(format!(
            "{target:?} does not end the {} reading order of {}",
            direction.label(),
            inst.format.label()
        )));
    }
    if direction == Direction::R2l {
        content.reverse();
    }
    let mut prompt = vec![Token::BOS];
    prompt.extend_from_slice(&content[..r.start - 1]);
    Ok((TokenSequence::new(prompt), content[r.start - 1..].to_vec()))
}

/// Per-instance exact-match outcomes of free generation at temperature 1.
/// Exactly `len(target)` tokens are sampled with EOS allowed; an early EOS
/// is a mismatch.
pub fn exact_match_details<S: Scalar>(
    params: &ModelParams<S>,
    direction: Direction,
    instances: &[ArithmeticInstance],
    target: Segment,
    seed: u64,
) -> Result<Vec<bool>> {
    if instances.is_empty() {
        return Ok(Vec::new());
    }
    let tasks: Vec<(TokenSequence, Vec<Token>)> =
        instances.iter().map(|i| generation_task(i, direction, target)).collect::<Result<_>>()?;
    let mut correct = vec![false; tasks.len()];
    // Rollout length varies only with the target; group by it.
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.sort_by_key(|&i| tasks[i].1.len());
    for group in order.chunk_by(|&a, &b| tasks[a].1.len() == tasks[b].1.len()) {
        let opts = SampleOptions::new(tasks[group[0]].1.len(), seed);
        let prompts: Vec<TokenSequence> = group.iter().map(|&i| tasks[i].0.clone()).collect();
        let streams: Vec<u64> = group.iter().map(|&i| i as u64).collect();
        let rolls = sample_streams(params, &prompts, &opts, &streams)?;
        for (roll, &i) in rolls.iter().zip(group) {
            correct[i] = roll.tokens == tasks[i].1;
        }
    }
    Ok(correct)
}

pub fn exact_match_generation<S: Scalar>(
    params: &ModelParams<S>,
    direction: Direction,
    instances: &[ArithmeticInstance],
    target: Segment,
    seed: u64,
) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Argument("no instances to generate for".into()));
    }
    let c = exact_match_details(params, direction, instances, target, seed)?;
    Ok(c.iter().filter(|&&x| x).count() as f64 / c.len() as f64)
}
