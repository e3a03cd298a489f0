//! Multiplication corpora, the token-reversal transform, and hard-negative
//! multiple-choice sets.
//!
//! Instances are rendered at fixed width: `m` and `n` with exactly `d`
//! digits and `p` with `2d`, most significant digit first, so every instance
//! of a given `(d, format)` has `4d + 4` tokens including BOS and EOS.

use std::io::{self, Write};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::SequenceSource;
use crate::vocab::{Direction, Token, TokenSequence};

/// Largest supported digit count; keeps `p < 10^18` inside `u64`.
pub const MAX_DIGITS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Format {
    /// `m × n = p`
    ForwardX,
    /// `p = m × n`
    ReverseX,
}

/// Named sub-spans of a rendered instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    M,
    N,
    P,
    /// `m × n`, operator included.
    FactorPair,
    /// Everything before the answer, through the equals sign.
    Question,
    /// The completion the MCQ asks for.
    Answer,
}

impl Format {
    /// Content positions (BOS excluded) of `seg` for `d`-digit operands.
    pub fn segment(self, seg: Segment, d: usize) -> Range<usize> {
        match (self, seg) {
            (Format::ForwardX, Segment::M) => 0..d,
            (Format::ForwardX, Segment::N) => d + 1..2 * d + 1,
            (Format::ForwardX, Segment::FactorPair) => 0..2 * d + 1,
            (Format::ForwardX, Segment::Question) => 0..2 * d + 2,
            (Format::ForwardX, Segment::P | Segment::Answer) => 2 * d + 2..4 * d + 2,
            (Format::ReverseX, Segment::P) => 0..2 * d,
            (Format::ReverseX, Segment::Question) => 0..2 * d + 1,
            (Format::ReverseX, Segment::M) => 2 * d + 1..3 * d + 1,
            (Format::ReverseX, Segment::N) => 3 * d + 2..4 * d + 2,
            (Format::ReverseX, Segment::FactorPair | Segment::Answer) => 2 * d + 1..4 * d + 2,
        }
    }

    pub fn content_len(d: usize) -> usize {
        4 * d + 2
    }

    pub fn label(self) -> &'static str {
        match self {
            Format::ForwardX => "Forward X",
            Format::ReverseX => "Reverse X",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArithmeticInstance {
    pub m: u64,
    pub n: u64,
    pub p: u64,
    pub digits: usize,
    pub format: Format,
}

impl ArithmeticInstance {
    pub fn new(m: u64, n: u64, digits: usize, format: Format) -> Result<Self> {
        check_digits(digits)?;
        let limit = 10u64.pow(digits as u32);
        if m >= limit || n >= limit {
            return Err(Error::Argument(format!("operands {m}, {n} need more than {digits} digits")));
        }
        Ok(ArithmeticInstance { m, n, p: m * n, digits, format })
    }

    pub fn render(&self) -> TokenSequence {
        render_unchecked(self.m, self.n, self.digits, self.format)
    }

    /// Rendered tokens without BOS/EOS.
    pub fn content(&self) -> Vec<Token> {
        let mut t = self.render().into_tokens();
        t.pop();
        t.remove(0);
        t
    }
}

fn check_digits(d: usize) -> Result<()> {
    if d == 0 || d > MAX_DIGITS {
        return Err(Error::Argument(format!("digit count must be in 1..={MAX_DIGITS}, got {d}")));
    }
    Ok(())
}

fn push_digits(out: &mut Vec<Token>, value: u64, width: usize) {
    let start = out.len();
    let mut v = value;
    for _ in 0..width {
        out.push(Token::digit((v % 10) as u8));
        v /= 10;
    }
    out[start..].reverse();
}

fn render_unchecked(m: u64, n: u64, d: usize, format: Format) -> TokenSequence {
    let mut t = Vec::with_capacity(4 * d + 4);
    t.push(Token::BOS);
    match format {
        Format::ForwardX => {
            push_digits(&mut t, m, d);
            t.push(Token::MUL);
            push_digits(&mut t, n, d);
            t.push(Token::EQ);
            push_digits(&mut t, m * n, 2 * d);
        }
        Format::ReverseX => {
            push_digits(&mut t, m * n, 2 * d);
            t.push(Token::EQ);
            push_digits(&mut t, m, d);
            t.push(Token::MUL);
            push_digits(&mut t, n, d);
        }
    }
    t.push(Token::EOS);
    TokenSequence::new(t)
}

/// Renders `m × n` in the given format as `BOS … EOS`.
pub fn render_instance(m: u64, n: u64, d: usize, format: Format) -> Result<TokenSequence> {
    Ok(ArithmeticInstance::new(m, n, d, format)?.render())
}

/// Reverses the content between BOS and EOS; the markers stay in place.
pub fn reverse_sequence(seq: &TokenSequence) -> Result<TokenSequence> {
    let t = seq.tokens();
    if t.len() < 2 || t[0] != Token::BOS || t[t.len() - 1] != Token::EOS {
        return Err(Error::Format(format!("expected BOS … EOS framing, got {seq}")));
    }
    let mut out = t.to_vec();
    let end = out.len() - 1;
    out[1..end].reverse();
    Ok(TokenSequence::new(out))
}

/// Renders an instance in the reading order of `direction`.
pub fn render_directed(inst: &ArithmeticInstance, direction: Direction) -> TokenSequence {
    let seq = inst.render();
    match direction {
        Direction::L2r => seq,
        Direction::R2l => reverse_sequence(&seq).expect("rendered instances are framed"),
    }
}

/// Seeded bijection on `[0, n)`: a four-round Feistel network over the
/// smallest even-width power of two covering `n`, with cycle walking.
#[derive(Clone, Debug)]
pub struct Permutation {
    n: u64,
    half_bits: u32,
    keys: [u64; 4],
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Permutation {
    pub fn new(n: u64, seed: u64) -> Self {
        assert!(n > 0);
        let mut bits = 64 - (n - 1).leading_zeros();
        bits = bits.max(2);
        if bits % 2 == 1 {
            bits += 1;
        }
        let mut s = seed;
        let keys = std::array::from_fn(|_| {
            s = splitmix64(s);
            s
        });
        Permutation { n, half_bits: bits / 2, keys }
    }

    fn feistel(&self, x: u64) -> u64 {
        let mask = (1u64 << self.half_bits) - 1;
        let (mut l, mut r) = (x >> self.half_bits, x & mask);
        for &k in &self.keys {
            let f = splitmix64(r ^ k) & mask;
            (l, r) = (r, l ^ f);
        }
        (l << self.half_bits) | r
    }

    pub fn apply(&self, x: u64) -> u64 {
        debug_assert!(x < self.n);
        let mut y = self.feistel(x);
        while y >= self.n {
            y = self.feistel(y);
        }
        y
    }

    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub digits: usize,
    pub format: Format,
    pub test_size: u64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn total_pairs(&self) -> u64 {
        10u64.pow(2 * self.digits as u32)
    }

    pub fn validate(&self) -> Result<()> {
        check_digits(self.digits)?;
        if self.test_size == 0 || self.test_size >= self.total_pairs() {
            return Err(Error::Argument(format!(
                "test_size must be in 1..{}, got {}",
                self.total_pairs(),
                self.test_size
            )));
        }
        Ok(())
    }

    fn instance_at(&self, index: u64) -> ArithmeticInstance {
        let base = 10u64.pow(self.digits as u32);
        let (m, n) = (index / base, index % base);
        ArithmeticInstance { m, n, p: m * n, digits: self.digits, format: self.format }
    }
}

/// A deterministic train/test partition of every `(m, n)` pair.
///
/// Pairs are visited in the order of a seeded permutation; the first
/// `test_size` form the test set and the rest, in order, the train stream.
#[derive(Clone, Debug)]
pub struct Split {
    spec: SplitSpec,
    perm: Permutation,
    test: Vec<ArithmeticInstance>,
}

pub fn generate_split(spec: SplitSpec) -> Result<Split> {
    spec.validate()?;
    let perm = Permutation::new(spec.total_pairs(), spec.seed);
    let test = (0..spec.test_size).map(|i| spec.instance_at(perm.apply(i))).collect();
    Ok(Split { spec, perm, test })
}

impl Split {
    pub fn spec(&self) -> &SplitSpec {
        &self.spec
    }

    pub fn test(&self) -> &[ArithmeticInstance] {
        &self.test
    }

    pub fn train_len(&self) -> u64 {
        self.spec.total_pairs() - self.spec.test_size
    }

    /// Lazily enumerates the training pairs in shuffled order.
    pub fn train(&self) -> TrainStream<'_> {
        TrainStream { split: self, next: self.spec.test_size, end: self.spec.total_pairs() }
    }

    /// `count` training instances drawn without replacement (seeded).
    pub fn train_subsample(&self, count: usize, seed: u64) -> Vec<ArithmeticInstance> {
        let n = self.train_len();
        let pick = Permutation::new(n, seed ^ 0x7261_696e);
        (0..(count as u64).min(n))
            .map(|i| self.spec.instance_at(self.perm.apply(self.spec.test_size + pick.apply(i))))
            .collect()
    }

    /// The training stream rendered in the given direction.
    pub fn corpus(&self, direction: Direction) -> Corpus<'_> {
        Corpus { split: self, direction }
    }
}

pub struct TrainStream<'a> {
    split: &'a Split,
    next: u64,
    end: u64,
}

impl Iterator for TrainStream<'_> {
    type Item = ArithmeticInstance;

    fn next(&mut self) -> Option<ArithmeticInstance> {
        if self.next >= self.end {
            return None;
        }
        let idx = self.split.perm.apply(self.next);
        self.next += 1;
        Some(self.split.spec.instance_at(idx))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.end - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for TrainStream<'_> {}

/// Training sequences of a split in one reading direction.
pub struct Corpus<'a> {
    split: &'a Split,
    direction: Direction,
}

impl SequenceSource for Corpus<'_> {
    fn num_sequences(&self) -> usize {
        self.split.train_len() as usize
    }

    fn sequences(&self) -> Box<dyn Iterator<Item = TokenSequence> + '_> {
        let dir = self.direction;
        Box::new(self.split.train().map(move |inst| render_directed(&inst, dir)))
    }
}

/// Writes one sequence per line as space-separated decimal ids (LF endings).
pub fn write_corpus<W: Write>(mut out: W, seqs: impl IntoIterator<Item = TokenSequence>) -> io::Result<()> {
    for s in seqs {
        out.write_all(s.to_id_line().as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// A multiple-choice item built from one test instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqInstance {
    pub id: usize,
    /// Conditioning text in natural (L2R) order, e.g. `m × n =`.
    pub question: Vec<Token>,
    /// Candidate completions in natural order; all the same length.
    pub choices: Vec<Vec<Token>>,
    pub correct_index: usize,
    pub format: Format,
    pub digits: usize,
    /// Index of the source instance in the test list.
    pub source: usize,
    pub replicate: usize,
}

impl McqInstance {
    /// `question ++ choices[i]`: the full content of the instance the choice
    /// implies, without BOS/EOS.
    pub fn content(&self, i: usize) -> Vec<Token> {
        let mut c = self.question.clone();
        c.extend_from_slice(&self.choices[i]);
        c
    }
}

/// Builds `augment` MCQs per test instance. Each has the true answer and
/// `num_choices - 1` distinct hard negatives that differ from it in exactly
/// one digit, in a seeded random order. For ForwardX the answer is `p`; for
/// ReverseX it is `m × n` and perturbations skip the operator.
pub fn make_mcq_set(
    test: &[ArithmeticInstance],
    num_choices: usize,
    augment: usize,
    seed: u64,
) -> Result<Vec<McqInstance>> {
    if num_choices < 2 || augment == 0 {
        return Err(Error::Argument("need num_choices >= 2 and augment >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(test.len() * augment);
    for (src, inst) in test.iter().enumerate() {
        let content = inst.content();
        let q = inst.format.segment(Segment::Question, inst.digits);
        let a = inst.format.segment(Segment::Answer, inst.digits);
        let question = content[q].to_vec();
        let answer = content[a].to_vec();
        let digit_positions: Vec<usize> = (0..answer.len()).filter(|&i| answer[i].is_digit()).collect();
        if digit_positions.len() * 9 < num_choices - 1 {
            return Err(Error::Generation(format!(
                "{} digit positions cannot yield {} distinct negatives",
                digit_positions.len(),
                num_choices - 1
            )));
        }
        for rep in 0..augment {
            let mut choices = vec![answer.clone()];
            while choices.len() < num_choices {
                let pos = *digit_positions.choose(&mut rng).expect("non-empty");
                let old = answer[pos].id() as u8;
                let new = (old + rng.gen_range(1..10u8)) % 10;
                let mut neg = answer.clone();
                neg[pos] = Token::digit(new);
                if !choices.contains(&neg) {
                    choices.push(neg);
                }
            }
            let mut order: Vec<usize> = (0..num_choices).collect();
            order.shuffle(&mut rng);
            let correct_index = order.iter().position(|&o| o == 0).expect("answer present");
            let choices = order.into_iter().map(|o| choices[o].clone()).collect();
            out.push(McqInstance {
                id: out.len(),
                question: question.clone(),
                choices,
                correct_index,
                format: inst.format,
                digits: inst.digits,
                source: src,
                replicate: rep,
            });
        }
    }
    Ok(out)
}
