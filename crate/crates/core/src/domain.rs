//! Vocabulary types shared by every stage of the pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::HumanScore;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("value {value} is outside the Likert range 1..=5")]
    OutOfRange { value: String },
    #[error("unknown criterion {0:?}")]
    UnknownCriterion(String),
    #[error("cannot parse {0:?} as a decimal or fraction")]
    BadNumber(String),
    #[error("unknown verdict side {0:?}")]
    UnknownSide(String),
}

/// Evaluation criterion. Canonical names are lowercase in every file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Coherence,
    Consistency,
    Fluency,
    Relevance,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Coherence,
        Criterion::Consistency,
        Criterion::Fluency,
        Criterion::Relevance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Coherence => "coherence",
            Criterion::Consistency => "consistency",
            Criterion::Fluency => "fluency",
            Criterion::Relevance => "relevance",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| DomainError::UnknownCriterion(s.to_string()))
    }
}

/// An integer score on the 1-5 Likert scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Likert(u8);

impl Likert {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 5;

    pub fn new(value: u8) -> Result<Self, DomainError> {
        if (Self::MIN..=Self::MAX).contains(&value) {
            Ok(Likert(value))
        } else {
            Err(DomainError::OutOfRange {
                value: value.to_string(),
            })
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Likert> {
        (Self::MIN..=Self::MAX).map(Likert)
    }
}

impl TryFrom<u8> for Likert {
    type Error = DomainError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Likert::new(value)
    }
}

impl From<Likert> for u8 {
    fn from(value: Likert) -> u8 {
        value.0
    }
}

impl fmt::Display for Likert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Parse an exact human average from a decimal string (`"4.3333"`) or a
/// fraction (`"13/3"`).
pub fn parse_human_score(text: &str) -> Result<HumanScore, DomainError> {
    let bad = || DomainError::BadNumber(text.to_string());
    let t = text.trim();
    if let Some((num, den)) = t.split_once('/') {
        let num: i64 = num.trim().parse().map_err(|_| bad())?;
        let den: i64 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        return Ok(Ratio::new(num, den));
    }
    let (negative, digits) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    let all_digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(int_part) || !all_digits(frac_part) || frac_part.len() > 15 {
        return Err(bad());
    }
    let den = 10i64.pow(frac_part.len() as u32);
    let int: i64 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().map_err(|_| bad())?
    };
    let frac: i64 = if frac_part.is_empty() {
        0
    } else {
        frac_part.parse().map_err(|_| bad())?
    };
    let num = int
        .checked_mul(den)
        .and_then(|v| v.checked_add(frac))
        .ok_or_else(bad)?;
    Ok(Ratio::new(if negative { -num } else { num }, den))
}

/// Render an exact human score as a short decimal (fractions with
/// non-terminating expansions are written as `n/d`).
pub fn format_human_score(value: &HumanScore) -> String {
    if value.is_integer() {
        return value.to_integer().to_string();
    }
    let mut den = *value.denom();
    let mut digits = 0u32;
    while den % 10 == 0 {
        den /= 10;
        digits += 1;
    }
    while den % 2 == 0 || den % 5 == 0 {
        if den % 2 == 0 {
            den /= 2;
        } else {
            den /= 5;
        }
        digits += 1;
    }
    if den != 1 {
        return format!("{}/{}", value.numer(), value.denom());
    }
    let scale = 10i64.pow(digits);
    let scaled = (value * Ratio::from_integer(scale)).to_integer();
    let sign = if scaled < 0 { "-" } else { "" };
    let abs = scaled.abs();
    format!(
        "{sign}{}.{:0width$}",
        abs / scale,
        abs % scale,
        width = digits as usize
    )
}

/// Round an averaged human score to the nearest Likert integer; exact halves
/// round up.
pub fn gold_label(human_avg: &HumanScore) -> Result<Likert, DomainError> {
    let one = Ratio::from_integer(1);
    let five = Ratio::from_integer(5);
    if *human_avg < one || *human_avg > five {
        return Err(DomainError::OutOfRange {
            value: format_human_score(human_avg),
        });
    }
    let rounded = (human_avg + Ratio::new(1, 2)).floor().to_integer();
    Likert::new(rounded as u8)
}

/// Whether a human average lies inside the 1-5 scale.
pub fn human_score_in_range(value: &HumanScore) -> bool {
    *value >= Ratio::from_integer(1) && *value <= Ratio::from_integer(5)
}

pub fn human_score_to_f64(value: &HumanScore) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

/// One (document, system output) pair with optional averaged annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub doc_id: String,
    pub document: String,
    pub system_id: String,
    pub output: String,
    pub human_avg: BTreeMap<Criterion, HumanScore>,
}

impl EvalInstance {
    pub fn human(&self, criterion: Criterion) -> Option<&HumanScore> {
        self.human_avg.get(&criterion)
    }
}

/// A judge score paired with the rounded human gold score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertRecord {
    pub doc_id: String,
    pub system_id: String,
    pub criterion: Criterion,
    pub judge_id: String,
    pub judge_score: Likert,
    pub gold: Likert,
}

impl LikertRecord {
    /// Absolute residual between judge and gold.
    pub fn residual(&self) -> u8 {
        self.judge_score.get().abs_diff(self.gold.get())
    }
}

/// Which of the two presented summaries won.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::A => "A",
            Side::B => "B",
        })
    }
}

/// One repetition of one pairwise comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseVerdict {
    pub doc_id: String,
    pub criterion: Criterion,
    pub judge_id: String,
    pub system_a: String,
    pub system_b: String,
    pub repetition_index: u32,
    pub winner: Side,
}

impl PairwiseVerdict {
    pub fn winner_id(&self) -> &str {
        match self.winner {
            Side::A => &self.system_a,
            Side::B => &self.system_b,
        }
    }

    pub fn loser_id(&self) -> &str {
        match self.winner {
            Side::A => &self.system_b,
            Side::B => &self.system_a,
        }
    }
}

/// Sum of a list of exact human scores divided by its length.
pub fn mean_human(values: &[HumanScore]) -> Option<HumanScore> {
    if values.is_empty() {
        return None;
    }
    let total = values.iter().fold(HumanScore::zero(), |acc, v| acc + v);
    Some(total / Ratio::from_integer(values.len() as i64))
}
