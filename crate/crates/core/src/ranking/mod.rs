//! System rankings from pooled pairwise wins, scored against human gold
//! rankings with Kendall's tau-b.
//!
//! Every method breaks remaining ties by ascending system id, so each is a
//! deterministic function of its input matrix.

mod bradley_terry;
mod mfas;
mod schulze;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Corpus;
use crate::domain::{mean_human, Criterion};
use crate::stats::{kendall_tau_b, StatsError};
use crate::tournament::Tournament;
use crate::{HumanScore, Scalar};

pub use bradley_terry::{bradley_terry, bradley_terry_fit, log_likelihood, BradleyTerryConfig, BradleyTerryFit};
pub use mfas::{edge_weights, feedback_cost, mfas_exact, MfasConfig, MfasWeights, DEFAULT_EXACT_BOUND};
pub use schulze::{schulze_ranking, schulze_strengths};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankingError {
    #[error("tournaments disagree on {0}")]
    Inconsistent(&'static str),
    #[error("no tournaments to pool")]
    Empty,
    #[error("{n} systems exceed the exact MFAS bound of {bound}; use the Copeland approximation")]
    TooLarge { n: usize, bound: usize },
    #[error("Bradley-Terry did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize, last: Vec<f64> },
    #[error("comparison graph is not strongly connected; the Bradley-Terry MLE is not finite")]
    NotConnected,
    #[error("order and gold scores cover different systems")]
    SystemMismatch,
    #[error("missing {criterion} annotations for {} instance(s), first: {}", .instances.len(), .instances[0])]
    MissingAnnotations {
        criterion: Criterion,
        instances: Vec<String>,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    WinRate,
    BradleyTerry,
    Schulze,
    MfasCopeland,
    MfasIlp,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::WinRate,
        Method::BradleyTerry,
        Method::Schulze,
        Method::MfasCopeland,
        Method::MfasIlp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::WinRate => "win_rate",
            Method::BradleyTerry => "bradley_terry",
            Method::Schulze => "schulze",
            Method::MfasCopeland => "mfas_copeland",
            Method::MfasIlp => "mfas_ilp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown ranking method {s:?}"))
    }
}

/// Total wins of each system over each other, pooled over documents and
/// repetitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WinMatrix {
    pub systems: Vec<String>,
    pub wins: Vec<Vec<u64>>,
}

impl WinMatrix {
    pub fn new(systems: Vec<String>, wins: Vec<Vec<u64>>) -> Self {
        debug_assert_eq!(systems.len(), wins.len());
        WinMatrix { systems, wins }
    }

    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }

    /// `wins[i][j] - wins[j][i]`.
    pub fn margin(&self, i: usize, j: usize) -> i64 {
        self.wins[i][j] as i64 - self.wins[j][i] as i64
    }

    /// Same matrix with rows and columns reordered so that system `perm[k]`
    /// of `self` lands at position `k`.
    pub fn permuted(&self, perm: &[usize]) -> WinMatrix {
        WinMatrix {
            systems: perm.iter().map(|&i| self.systems[i].clone()).collect(),
            wins: perm
                .iter()
                .map(|&i| perm.iter().map(|&j| self.wins[i][j]).collect())
                .collect(),
        }
    }
}

/// A ranking produced by one method.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult<F> {
    pub method: Method,
    /// Best system first.
    pub order: Vec<String>,
    /// Method-defined score per system, listed in `order`. Empty for the
    /// exact MFAS ordering, which defines none.
    pub scores: Vec<(String, F)>,
    /// Total weight of backward majority edges (MFAS methods only).
    pub feedback_cost: Option<u64>,
    pub tau_vs_gold: Option<F>,
}

impl<F: Scalar> RankingResult<F> {
    pub fn with_tau(mut self, gold: &[(String, F)]) -> Result<Self, RankingError> {
        self.tau_vs_gold = Some(kendall_tau(&self.order, gold)?);
        Ok(self)
    }
}

/// Indices sorted by descending score, ascending id on ties.
pub(crate) fn order_by_score<F: Scalar>(systems: &[String], scores: &[F]) -> Vec<usize> {
    order_by_score_within(systems, scores, F::zero())
}

/// As [`order_by_score`], with positive scores compared after rounding
/// their logarithms to multiples of `rel_tol`, so that values differing
/// only by fitting noise tie.
pub(crate) fn order_by_score_within<F: Scalar>(systems: &[String], scores: &[F], rel_tol: F) -> Vec<usize> {
    let keys: Vec<F> = if rel_tol > F::zero() {
        scores.iter().map(|s| (s.ln() / rel_tol).round()).collect()
    } else {
        scores.to_vec()
    };
    let mut idx: Vec<usize> = (0..systems.len()).collect();
    idx.sort_by(|&a, &b| {
        keys[b]
            .partial_cmp(&keys[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| systems[a].cmp(&systems[b]))
    });
    idx
}

pub(crate) fn scored_result<F: Scalar>(method: Method, m: &WinMatrix, scores: &[F]) -> RankingResult<F> {
    scored_result_within(method, m, scores, F::zero())
}

pub(crate) fn scored_result_within<F: Scalar>(
    method: Method,
    m: &WinMatrix,
    scores: &[F],
    rel_tol: F,
) -> RankingResult<F> {
    let idx = order_by_score_within(&m.systems, scores, rel_tol);
    RankingResult {
        method,
        order: idx.iter().map(|&i| m.systems[i].clone()).collect(),
        scores: idx.iter().map(|&i| (m.systems[i].clone(), scores[i])).collect(),
        feedback_cost: None,
        tau_vs_gold: None,
    }
}

/// Element-wise sum of per-document win counts. All tournaments must share
/// judge, criterion and system set; the first one fixes the system order.
pub fn pool_win_matrix(tournaments: &[Tournament]) -> Result<WinMatrix, RankingError> {
    let first = tournaments.first().ok_or(RankingError::Empty)?;
    let n = first.systems.len();
    let mut wins = vec![vec![0u64; n]; n];
    for t in tournaments {
        if t.judge_id != first.judge_id {
            return Err(RankingError::Inconsistent("judge"));
        }
        if t.criterion != first.criterion {
            return Err(RankingError::Inconsistent("criterion"));
        }
        if t.systems.len() != n {
            return Err(RankingError::Inconsistent("system set"));
        }
        let map: Vec<usize> = t
            .systems
            .iter()
            .map(|s| first.systems.iter().position(|f| f == s))
            .collect::<Option<_>>()
            .ok_or(RankingError::Inconsistent("system set"))?;
        for i in 0..n {
            for j in 0..n {
                wins[map[i]][map[j]] += u64::from(t.wins[i][j]);
            }
        }
    }
    Ok(WinMatrix::new(first.systems.clone(), wins))
}

/// Share of pairwise comparisons each system won; 0.5 for a system that was
/// never compared.
pub fn win_rate_ranking<F: Scalar>(m: &WinMatrix) -> RankingResult<F> {
    let scores: Vec<F> = (0..m.len())
        .map(|i| {
            let won: u64 = m.wins[i].iter().sum();
            let played: u64 = (0..m.len()).map(|j| m.wins[i][j] + m.wins[j][i]).sum();
            if played == 0 {
                F::of(0.5)
            } else {
                F::of(won as f64) / F::of(played as f64)
            }
        })
        .collect();
    scored_result(Method::WinRate, m, &scores)
}

/// Number of opponents each system beats by strict pairwise majority.
pub fn copeland_scores(m: &WinMatrix) -> Vec<u64> {
    (0..m.len())
        .map(|i| (0..m.len()).filter(|&j| m.wins[i][j] > m.wins[j][i]).count() as u64)
        .collect()
}

pub fn copeland_ranking<F: Scalar>(m: &WinMatrix, weights: MfasWeights) -> RankingResult<F> {
    let scores: Vec<F> = copeland_scores(m).into_iter().map(|c| F::of(c as f64)).collect();
    let mut result = scored_result(Method::MfasCopeland, m, &scores);
    let idx: Vec<usize> = result
        .order
        .iter()
        .map(|s| m.systems.iter().position(|x| x == s).expect("order is a permutation"))
        .collect();
    result.feedback_cost = Some(feedback_cost(m, &idx, weights));
    result
}

/// Kendall's tau-b between an ordering (best first) and gold scores (higher
/// is better).
pub fn kendall_tau<F: Scalar>(order: &[String], gold: &[(String, F)]) -> Result<F, RankingError> {
    if order.len() != gold.len() {
        return Err(RankingError::SystemMismatch);
    }
    let n = order.len();
    let mut ranks = Vec::with_capacity(n);
    let mut golds = Vec::with_capacity(n);
    for (system, score) in gold {
        let pos = order
            .iter()
            .position(|s| s == system)
            .ok_or(RankingError::SystemMismatch)?;
        ranks.push(F::of_usize(n - pos));
        golds.push(*score);
    }
    Ok(kendall_tau_b(&ranks, &golds)?)
}

/// Per-system mean of human averages for one criterion, in corpus system
/// order.
pub fn gold_ranking(corpus: &Corpus, criterion: Criterion) -> Result<Vec<(String, HumanScore)>, RankingError> {
    let missing: Vec<String> = corpus
        .instances
        .iter()
        .filter(|i| i.human(criterion).is_none())
        .map(|i| format!("{}/{}", i.doc_id, i.system_id))
        .collect();
    if !missing.is_empty() {
        return Err(RankingError::MissingAnnotations {
            criterion,
            instances: missing,
        });
    }
    let mut per_system: BTreeMap<&str, Vec<HumanScore>> = BTreeMap::new();
    for inst in &corpus.instances {
        per_system
            .entry(inst.system_id.as_str())
            .or_default()
            .push(*inst.human(criterion).expect("checked above"));
    }
    Ok(corpus
        .system_order
        .iter()
        .filter_map(|s| {
            per_system
                .get(s.as_str())
                .and_then(|v| mean_human(v))
                .map(|mean| (s.clone(), mean))
        })
        .collect())
}

/// Gold scores converted to the working scalar.
pub fn gold_as_scalar<F: Scalar>(gold: &[(String, HumanScore)]) -> Vec<(String, F)> {
    gold.iter()
        .map(|(s, v)| (s.clone(), F::of(crate::domain::human_score_to_f64(v))))
        .collect()
}

/// Run one method on a matrix.
pub fn rank_with<F: Scalar>(
    method: Method,
    m: &WinMatrix,
    bt: &BradleyTerryConfig,
    mfas: &MfasConfig,
) -> Result<RankingResult<F>, RankingError> {
    match method {
        Method::WinRate => Ok(win_rate_ranking(m)),
        Method::BradleyTerry => bradley_terry(m, bt),
        Method::Schulze => Ok(schulze_ranking(m)),
        Method::MfasCopeland => Ok(copeland_ranking(m, mfas.weights)),
        Method::MfasIlp => mfas_exact(m, mfas),
    }
}

/// Combine per-document rankings of one method by mean position; ties by id.
pub fn rank_average<F: Scalar>(method: Method, per_doc: &[RankingResult<F>]) -> Result<RankingResult<F>, RankingError> {
    let first = per_doc.first().ok_or(RankingError::Empty)?;
    let mut systems = first.order.clone();
    systems.sort();
    let mut totals = vec![0usize; systems.len()];
    for r in per_doc {
        if r.order.len() != systems.len() {
            return Err(RankingError::SystemMismatch);
        }
        for (pos, s) in r.order.iter().enumerate() {
            let i = systems.binary_search(s).map_err(|_| RankingError::SystemMismatch)?;
            totals[i] += pos + 1;
        }
    }
    let docs = F::of_usize(per_doc.len());
    // negate so that a smaller mean position sorts first
    let scores: Vec<F> = totals.iter().map(|&t| -(F::of_usize(t) / docs)).collect();
    let idx = order_by_score(&systems, &scores);
    Ok(RankingResult {
        method,
        order: idx.iter().map(|&i| systems[i].clone()).collect(),
        scores: idx.iter().map(|&i| (systems[i].clone(), -scores[i])).collect(),
        feedback_cost: None,
        tau_vs_gold: None,
    })
}
