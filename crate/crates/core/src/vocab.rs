//! The fixed 15-symbol arithmetic vocabulary.
//!
//! Digits map to ids 0-9, followed by the multiplication sign, the equals
//! sign, the sequence markers and the batch padding symbol.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VOCAB_SIZE: usize = 15;

/// A single token id in `[0, VOCAB_SIZE)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(u8);

impl Token {
    pub const MUL: Token = Token(10);
    pub const EQ: Token = Token(11);
    pub const BOS: Token = Token(12);
    pub const EOS: Token = Token(13);
    pub const PAD: Token = Token(14);

    pub fn new(id: usize) -> Result<Token> {
        if id < VOCAB_SIZE {
            Ok(Token(id as u8))
        } else {
            Err(Error::Argument(format!("token id {id} outside vocabulary")))
        }
    }

    pub fn digit(d: u8) -> Token {
        assert!(d < 10, "digit out of range: {d}");
        Token(d)
    }

    #[inline]
    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn is_digit(self) -> bool {
        self.0 < 10
    }

    pub fn symbol(self) -> char {
        match self.0 {
            d @ 0..=9 => (b'0' + d) as char,
            10 => '×',
            11 => '=',
            12 => '^',
            13 => '$',
            _ => '_',
        }
    }

    pub fn from_symbol(c: char) -> Option<Token> {
        match c {
            '0'..='9' => Some(Token(c as u8 - b'0')),
            '×' | 'x' | '*' => Some(Token::MUL),
            '=' => Some(Token::EQ),
            '^' => Some(Token::BOS),
            '$' => Some(Token::EOS),
            '_' => Some(Token::PAD),
            _ => None,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// An ordered run of tokens. Full instances are framed as `BOS … EOS`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<Token>);

impl TokenSequence {
    pub fn new(tokens: Vec<Token>) -> Self {
        TokenSequence(tokens)
    }

    /// Parses a whitespace-insensitive symbol string such as `"^ 1 2 × 3 4 = 0 4 0 8 $"`.
    pub fn parse(text: &str) -> Result<Self> {
        text.chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| Token::from_symbol(c).ok_or_else(|| Error::Format(format!("unknown symbol {c:?}"))))
            .collect::<Result<Vec<_>>>()
            .map(TokenSequence)
    }

    pub fn from_ids(ids: &[usize]) -> Result<Self> {
        ids.iter().map(|&i| Token::new(i)).collect::<Result<Vec<_>>>().map(TokenSequence)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, t: Token) {
        self.0.push(t);
    }

    pub fn ids(&self) -> Vec<usize> {
        self.0.iter().map(|t| t.id()).collect()
    }

    /// True when the sequence is `BOS … EOS` with no markers or padding inside.
    pub fn is_framed(&self) -> bool {
        let t = &self.0;
        t.len() >= 2
            && t[0] == Token::BOS
            && t[t.len() - 1] == Token::EOS
            && t[1..t.len() - 1].iter().all(|&x| x != Token::BOS && x != Token::EOS && x != Token::PAD)
    }

    /// Space-separated decimal ids, the line format used for corpus export.
    pub fn to_id_line(&self) -> String {
        let mut s = String::with_capacity(self.0.len() * 3);
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            s.push_str(&t.id().to_string());
        }
        s
    }

    pub fn from_id_line(line: &str) -> Result<Self> {
        line.split_ascii_whitespace()
            .map(|w| w.parse::<usize>().map_err(|_| Error::Format(format!("bad token id {w:?}"))).and_then(Token::new))
            .collect::<Result<Vec<_>>>()
            .map(TokenSequence)
    }
}

impl From<Vec<Token>> for TokenSequence {
    fn from(v: Vec<Token>) -> Self {
        TokenSequence(v)
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Reading order of a model: `L2r` predicts the next token, `R2l` is trained
/// on per-instance token-reversed data and so predicts the previous one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "L2R")]
    L2r,
    #[serde(rename = "R2L")]
    R2l,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::L2r => "L2R",
            Direction::R2l => "R2L",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_are_a_bijection_on_ids_0_to_13() {
        let mut seen = std::collections::HashSet::new();
        for id in 0..14 {
            let t = Token::new(id).unwrap();
            assert!(seen.insert(t.symbol()));
            assert_eq!(Token::from_symbol(t.symbol()), Some(t));
        }
        assert!(Token::new(VOCAB_SIZE).is_err());
    }

    #[test]
    fn id_line_round_trip() {
        let s = TokenSequence::parse("^12×34=0408$").unwrap();
        assert_eq!(s.to_id_line(), "12 1 2 10 3 4 11 0 4 0 8 13");
        assert_eq!(TokenSequence::from_id_line(&s.to_id_line()).unwrap(), s);
        assert!(TokenSequence::from_id_line("1 99").is_err());
    }

    #[test]
    fn framing() {
        assert!(TokenSequence::parse("^1$").unwrap().is_framed());
        assert!(!TokenSequence::parse("^1_$").unwrap().is_framed());
        assert!(!TokenSequence::parse("1$").unwrap().is_framed());
    }
}
