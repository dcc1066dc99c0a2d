//! Split conformal prediction over 1-5 Likert judge scores.
//!
//! The nonconformity score is the absolute residual `|judge - gold|`. The
//! calibrated threshold `q` turns a judge score into the contiguous set of
//! labels within `q` of it; the size of that set is the per-instance width.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Likert, LikertRecord};
use crate::stats::{mean_ci95, spearman, Correlation, MeanCi, StatsError};
use crate::Scalar;

/// Fewest records a split evaluation accepts.
pub const MIN_RECORDS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConformalError {
    #[error("empty calibration set")]
    EmptyCalibration,
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    AlphaRange(String),
    #[error("cannot parse alpha {0:?}")]
    AlphaParse(String),
    #[error("need at least {MIN_RECORDS} records, got {0}")]
    TooFewRecords(usize),
    #[error("split fraction must leave both halves non-empty, got {0}")]
    SplitFraction(f64),
    #[error("judge {judge} covers a different instance list than {reference}")]
    Misaligned { judge: String, reference: String },
    #[error("no judges to compare")]
    NoJudges,
}

/// `|judge - gold|`, in `0..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NonconformityScore(u8);

impl NonconformityScore {
    pub fn new(judge: Likert, gold: Likert) -> Self {
        NonconformityScore(judge.get().abs_diff(gold.get()))
    }

    pub fn of(record: &LikertRecord) -> Self {
        NonconformityScore(record.residual())
    }

    pub fn from_value(value: u8) -> Option<Self> {
        (value <= Likert::MAX - Likert::MIN).then_some(NonconformityScore(value))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

/// Miscoverage level, held exactly so that the quantile index is computed
/// without rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Alpha(Ratio<u64>);

impl Alpha {
    pub fn new(value: Ratio<u64>) -> Result<Self, ConformalError> {
        if value.is_zero() || value >= Ratio::from_integer(1) {
            return Err(ConformalError::AlphaRange(value.to_string()));
        }
        Ok(Alpha(value))
    }

    /// From the shortest decimal that round-trips the float.
    pub fn from_f64(value: f64) -> Result<Self, ConformalError> {
        if !value.is_finite() {
            return Err(ConformalError::AlphaParse(value.to_string()));
        }
        format!("{value}").parse()
    }

    pub fn ratio(self) -> Ratio<u64> {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0.to_f64().expect("ratio of u64 converts")
    }

    /// `ceil((1 - alpha)(n + 1))`.
    pub fn quantile_index(self, n: usize) -> u64 {
        let keep = Ratio::from_integer(1) - self.0;
        (keep * Ratio::from_integer(n as u64 + 1)).ceil().to_integer()
    }
}

impl FromStr for Alpha {
    type Err = ConformalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConformalError::AlphaParse(s.to_string());
        let t = s.trim();
        let (int, frac) = t.split_once('.').unwrap_or((t, ""));
        if int.is_empty() && frac.is_empty()
            || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit())
            || frac.len() > 18
        {
            return Err(bad());
        }
        let digits = format!("{int}{frac}");
        let num: u64 = digits.parse().map_err(|_| bad())?;
        Alpha::new(Ratio::new(num, 10u64.pow(frac.len() as u32)))
    }
}

impl fmt::Display for Alpha {
    /// Decimal with at least two places when the value has a short decimal
    /// expansion, otherwise `n/d`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for places in 2..=12u32 {
            let scaled = self.0 * Ratio::from_integer(10u64.pow(places));
            if scaled.is_integer() {
                let v = scaled.to_integer();
                let unit = 10u64.pow(places);
                return write!(f, "{}.{:0width$}", v / unit, v % unit, width = places as usize);
            }
        }
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl Serialize for Alpha {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QHat {
    Score(u8),
    /// The quantile index exceeded the calibration size; sets cover the
    /// whole scale.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConformalThreshold {
    pub alpha: Alpha,
    pub q_hat: QHat,
    pub calibration_size: usize,
}

/// The `ceil((1 - alpha)(n + 1))`-th smallest score, or [`QHat::Full`] when
/// that index exceeds `n`.
pub fn conformal_quantile(scores: &[NonconformityScore], alpha: Alpha) -> Result<ConformalThreshold, ConformalError> {
    if scores.is_empty() {
        return Err(ConformalError::EmptyCalibration);
    }
    let n = scores.len();
    let index = alpha.quantile_index(n);
    let q_hat = if index > n as u64 {
        QHat::Full
    } else {
        // counting sort: scores live in 0..=4
        let mut counts = [0u64; 5];
        for s in scores {
            counts[s.0 as usize] += 1;
        }
        let mut seen = 0;
        let mut q = 4;
        for (v, c) in counts.iter().enumerate() {
            seen += c;
            if seen >= index {
                q = v as u8;
                break;
            }
        }
        QHat::Score(q)
    };
    Ok(ConformalThreshold {
        alpha,
        q_hat,
        calibration_size: n,
    })
}

/// A contiguous run of Likert labels around a judge score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictionSet {
    pub judge_score: Likert,
    pub lo: u8,
    pub hi: u8,
}

impl PredictionSet {
    pub fn width(&self) -> u8 {
        self.hi - self.lo + 1
    }

    pub fn contains(&self, y: Likert) -> bool {
        (self.lo..=self.hi).contains(&y.get())
    }

    pub fn members(&self) -> Vec<u8> {
        (self.lo..=self.hi).collect()
    }
}

pub fn prediction_set(judge_score: Likert, threshold: &ConformalThreshold) -> PredictionSet {
    prediction_set_for(judge_score, threshold.q_hat)
}

fn prediction_set_for(judge_score: Likert, q_hat: QHat) -> PredictionSet {
    let y = judge_score.get();
    let (lo, hi) = match q_hat {
        QHat::Full => (Likert::MIN, Likert::MAX),
        QHat::Score(q) => (y.saturating_sub(q).max(Likert::MIN), (y + q).min(Likert::MAX)),
    };
    PredictionSet { judge_score, lo, hi }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub split_count: usize,
    /// Share of records used for calibration in each split.
    pub split_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            split_count: 20,
            split_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SplitConfig {
    fn calibration_size(&self, n: usize) -> Result<usize, ConformalError> {
        let f = self.split_fraction;
        let size = (n as f64 * f).round() as usize;
        if !(f > 0.0 && f < 1.0) || size == 0 || size >= n {
            return Err(ConformalError::SplitFraction(f));
        }
        Ok(size)
    }

    /// Record indices for one split, calibration part first. Each split has
    /// its own stream, so splits are independent of evaluation order.
    pub fn permutation(&self, split: usize, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(split as u64);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx
    }
}

/// One test-half observation: set width and absolute judge error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WidthError {
    pub width: u8,
    pub error: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityBin<F> {
    pub width: u8,
    pub mae: MeanCi<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitEvaluation<F> {
    pub alpha: Alpha,
    /// Mean over splits of the test-half coverage.
    pub coverage: F,
    /// Mean over splits of the test-half average set width.
    pub avg_set_size: F,
    /// Spearman between width and error on test pairs pooled over splits;
    /// `None` when either coordinate is constant.
    pub width_error: Option<Correlation<F>>,
    pub reliability: Vec<ReliabilityBin<F>>,
    pub pooled: Vec<WidthError>,
    /// Per record, in input order: mean width over splits. The threshold of
    /// every split is applied to every record.
    pub instance_widths: Vec<F>,
    /// `q` chosen in each split.
    pub thresholds: Vec<QHat>,
    pub split_count: usize,
    pub seed: u64,
}

pub fn run_split_evaluation<F: Scalar>(
    records: &[LikertRecord],
    alpha: Alpha,
    config: &SplitConfig,
) -> Result<SplitEvaluation<F>, ConformalError> {
    let n = records.len();
    if n < MIN_RECORDS {
        return Err(ConformalError::TooFewRecords(n));
    }
    let cal_size = config.calibration_size(n)?;
    let scores: Vec<NonconformityScore> = records.iter().map(NonconformityScore::of).collect();

    let mut coverage = F::zero();
    let mut size = F::zero();
    let mut pooled = Vec::with_capacity(config.split_count * (n - cal_size));
    let mut width_totals = vec![0u64; n];
    let mut thresholds = Vec::with_capacity(config.split_count);
    for split in 0..config.split_count {
        let perm = config.permutation(split, n);
        let (cal, test) = perm.split_at(cal_size);
        let cal_scores: Vec<NonconformityScore> = cal.iter().map(|&i| scores[i]).collect();
        let q_hat = conformal_quantile(&cal_scores, alpha)?.q_hat;
        thresholds.push(q_hat);
        let mut covered = 0usize;
        let mut widths = 0usize;
        for &i in test {
            let set = prediction_set_for(records[i].judge_score, q_hat);
            covered += usize::from(set.contains(records[i].gold));
            widths += usize::from(set.width());
            pooled.push(WidthError {
                width: set.width(),
                error: scores[i].get(),
            });
        }
        for (total, r) in width_totals.iter_mut().zip(records) {
            *total += u64::from(prediction_set_for(r.judge_score, q_hat).width());
        }
        let t = F::of_usize(test.len());
        coverage = coverage + F::of_usize(covered) / t;
        size = size + F::of_usize(widths) / t;
    }
    let splits = F::of_usize(config.split_count.max(1));
    Ok(SplitEvaluation {
        alpha,
        coverage: coverage / splits,
        avg_set_size: size / splits,
        width_error: width_error_correlation(&pooled).ok(),
        reliability: reliability_curve(&pooled),
        instance_widths: width_totals.iter().map(|&w| F::of(w as f64) / splits).collect(),
        pooled,
        thresholds,
        split_count: config.split_count,
        seed: config.seed,
    })
}

/// Spearman correlation between width and error.
pub fn width_error_correlation<F: Scalar>(pairs: &[WidthError]) -> Result<Correlation<F>, StatsError> {
    let w: Vec<F> = pairs.iter().map(|p| F::of(f64::from(p.width))).collect();
    let e: Vec<F> = pairs.iter().map(|p| F::of(f64::from(p.error))).collect();
    spearman(&w, &e)
}

/// Mean absolute error per width with a 95% interval and count.
pub fn reliability_curve<F: Scalar>(pairs: &[WidthError]) -> Vec<ReliabilityBin<F>> {
    let mut by_width: BTreeMap<u8, Vec<F>> = BTreeMap::new();
    for p in pairs {
        by_width.entry(p.width).or_default().push(F::of(f64::from(p.error)));
    }
    by_width
        .into_iter()
        .map(|(width, errors)| ReliabilityBin {
            width,
            mae: mean_ci95(&errors).expect("bins are non-empty"),
        })
        .collect()
}

/// Per-instance widths of one judge: `(doc_id, system_id, width)` in a
/// shared instance order.
pub type InstanceWidths<F> = Vec<(String, String, F)>;

/// Pair each record with its width; records and widths come from the same
/// evaluation.
pub fn instance_widths<F: Scalar>(records: &[LikertRecord], eval: &SplitEvaluation<F>) -> InstanceWidths<F> {
    records
        .iter()
        .zip(&eval.instance_widths)
        .map(|(r, &w)| (r.doc_id.clone(), r.system_id.clone(), w))
        .collect()
}

/// Collapse to one mean width per document, keyed by doc id with an empty
/// system id.
pub fn per_document_widths<F: Scalar>(widths: &InstanceWidths<F>) -> InstanceWidths<F> {
    let mut by_doc: BTreeMap<&str, (F, usize)> = BTreeMap::new();
    for (doc, _, w) in widths {
        let e = by_doc.entry(doc.as_str()).or_insert((F::zero(), 0));
        e.0 = e.0 + *w;
        e.1 += 1;
    }
    by_doc
        .into_iter()
        .map(|(doc, (sum, count))| (doc.to_string(), String::new(), sum / F::of_usize(count)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementMatrix<F> {
    pub judges: Vec<String>,
    /// Symmetric; diagonal is `r = 1`. `None` marks an undefined
    /// correlation.
    pub cells: Vec<Vec<Option<Correlation<F>>>>,
}

/// Pairwise Spearman correlations between judges' widths over the same
/// instances.
pub fn inter_judge_width_agreement<F: Scalar>(
    widths: &BTreeMap<String, InstanceWidths<F>>,
) -> Result<AgreementMatrix<F>, ConformalError> {
    let (reference, first) = widths.iter().next().ok_or(ConformalError::NoJudges)?;
    let key = |v: &InstanceWidths<F>| -> Vec<(String, String)> { v.iter().map(|(d, s, _)| (d.clone(), s.clone())).collect() };
    let ref_keys = key(first);
    for (judge, v) in widths {
        if key(v) != ref_keys {
            return Err(ConformalError::Misaligned {
                judge: judge.clone(),
                reference: reference.clone(),
            });
        }
    }
    let judges: Vec<String> = widths.keys().cloned().collect();
    let values: Vec<Vec<F>> = widths.values().map(|v| v.iter().map(|t| t.2).collect()).collect();
    let k = judges.len();
    let mut cells = vec![vec![None; k]; k];
    for i in 0..k {
        cells[i][i] = Some(Correlation {
            r: F::one(),
            p: F::zero(),
            n: ref_keys.len(),
        });
        for j in i + 1..k {
            let c = spearman(&values[i], &values[j]).ok();
            cells[i][j] = c;
            cells[j][i] = c;
        }
    }
    Ok(AgreementMatrix { judges, cells })
}
