//! Per-document tournaments and directed 3-cycle statistics.

use std::collections::{BTreeMap, HashSet};

use num_traits::Zero;
use serde::Serialize;
use thiserror::Error;

use crate::domain::{Criterion, PairwiseVerdict};
use crate::Rate;

/// Violation rate of a uniformly random tournament (expected share of
/// cyclic triples), drawn as the reference line in distribution plots.
pub const RANDOM_BASELINE_RATE: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TournamentError {
    #[error("verdicts mix {field}: {first} vs {other}")]
    Mixed {
        field: &'static str,
        first: String,
        other: String,
    },
    #[error("no verdicts given")]
    NoVerdicts,
    #[error("verdict names unknown system {0:?}")]
    UnknownSystem(String),
    #[error("verdict compares {0:?} with itself")]
    SelfComparison(String),
    #[error("repetition index {index} is not below k = {k}")]
    RepetitionOutOfRange { index: u32, k: u32 },
    #[error("repetition {index} of pair ({a}, {b}) appears twice")]
    DuplicateRepetition { a: String, b: String, index: u32 },
    #[error("incomplete tournament: {} pair(s) without verdicts, first ({}, {})", .missing.len(), .missing[0].0, .missing[0].1)]
    Incomplete { missing: Vec<(String, String)> },
    #[error("edge matrix is not a tournament: {0}")]
    NotATournament(String),
    #[error("need at least 3 systems, got {0}")]
    TooSmall(usize),
    #[error("no documents")]
    Empty,
}

/// Directed win graph for one (document, judge, criterion).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tournament {
    pub doc_id: String,
    pub criterion: Criterion,
    pub judge_id: String,
    pub systems: Vec<String>,
    pub k: u32,
    /// `wins[i][j]`: repetitions in which system `i` beat system `j`.
    pub wins: Vec<Vec<u32>>,
    /// `edges[i][j]`: the majority prefers `i` over `j`.
    pub edges: Vec<Vec<bool>>,
}

/// A pair whose repetitions split evenly; the edge was pointed at the
/// lexicographically smaller system id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TieWarning {
    pub doc_id: String,
    pub criterion: Criterion,
    pub judge_id: String,
    pub system_a: String,
    pub system_b: String,
    pub wins_each: u32,
    pub preferred: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Built {
    pub tournament: Tournament,
    pub ties: Vec<TieWarning>,
}

fn check_same<'a>(field: &'static str, first: &'a str, other: &'a str) -> Result<(), TournamentError> {
    if first == other {
        Ok(())
    } else {
        Err(TournamentError::Mixed {
            field,
            first: first.to_string(),
            other: other.to_string(),
        })
    }
}

/// Assemble a tournament from all verdicts of one (document, judge,
/// criterion). Every pair needs between 1 and `k` verdicts.
pub fn build_tournament(
    verdicts: &[PairwiseVerdict],
    systems: &[String],
    k: u32,
) -> Result<Built, TournamentError> {
    let first = verdicts.first().ok_or(TournamentError::NoVerdicts)?;
    let n = systems.len();
    let index = |id: &str| {
        systems
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| TournamentError::UnknownSystem(id.to_string()))
    };
    let mut wins = vec![vec![0u32; n]; n];
    let mut seen = HashSet::new();
    for v in verdicts {
        check_same("doc_id", &first.doc_id, &v.doc_id)?;
        check_same("judge_id", &first.judge_id, &v.judge_id)?;
        check_same("criterion", first.criterion.as_str(), v.criterion.as_str())?;
        if v.system_a == v.system_b {
            return Err(TournamentError::SelfComparison(v.system_a.clone()));
        }
        if v.repetition_index >= k {
            return Err(TournamentError::RepetitionOutOfRange {
                index: v.repetition_index,
                k,
            });
        }
        let (a, b) = (index(&v.system_a)?, index(&v.system_b)?);
        if !seen.insert((a.min(b), a.max(b), v.repetition_index)) {
            return Err(TournamentError::DuplicateRepetition {
                a: v.system_a.clone(),
                b: v.system_b.clone(),
                index: v.repetition_index,
            });
        }
        let (w, l) = (index(v.winner_id())?, index(v.loser_id())?);
        wins[w][l] += 1;
    }

    let mut edges = vec![vec![false; n]; n];
    let mut missing = Vec::new();
    let mut ties = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (wij, wji) = (wins[i][j], wins[j][i]);
            if wij + wji == 0 {
                missing.push((systems[i].clone(), systems[j].clone()));
                continue;
            }
            if wij > wji {
                edges[i][j] = true;
            } else if wji > wij {
                edges[j][i] = true;
            } else {
                let (pref, other) = if systems[i] <= systems[j] { (i, j) } else { (j, i) };
                edges[pref][other] = true;
                log::warn!(
                    "tied pair ({}, {}) in doc {} for judge {}: preferring {}",
                    systems[i],
                    systems[j],
                    first.doc_id,
                    first.judge_id,
                    systems[pref]
                );
                ties.push(TieWarning {
                    doc_id: first.doc_id.clone(),
                    criterion: first.criterion,
                    judge_id: first.judge_id.clone(),
                    system_a: systems[i].clone(),
                    system_b: systems[j].clone(),
                    wins_each: wij,
                    preferred: systems[pref].clone(),
                });
            }
        }
    }
    if !missing.is_empty() {
        return Err(TournamentError::Incomplete { missing });
    }
    Ok(Built {
        tournament: Tournament {
            doc_id: first.doc_id.clone(),
            criterion: first.criterion,
            judge_id: first.judge_id.clone(),
            systems: systems.to_vec(),
            k,
            wins,
            edges,
        },
        ties,
    })
}

impl Tournament {
    /// A tournament given directly by its edge relation, with one win per
    /// edge and `k = 1`.
    pub fn from_edges(systems: Vec<String>, edges: Vec<Vec<bool>>) -> Result<Self, TournamentError> {
        let n = systems.len();
        if edges.len() != n || edges.iter().any(|row| row.len() != n) {
            return Err(TournamentError::NotATournament("matrix shape".into()));
        }
        let wins = edges
            .iter()
            .map(|row| row.iter().map(|&e| u32::from(e)).collect())
            .collect();
        let t = Tournament {
            doc_id: String::new(),
            criterion: Criterion::Coherence,
            judge_id: String::new(),
            systems,
            k: 1,
            wins,
            edges,
        };
        t.check_complete()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }

    /// Every pair has exactly one directed edge and there are no loops.
    pub fn check_complete(&self) -> Result<(), TournamentError> {
        let n = self.len();
        for i in 0..n {
            if self.edges[i][i] {
                return Err(TournamentError::NotATournament(format!("self loop at {}", self.systems[i])));
            }
            for j in i + 1..n {
                if self.edges[i][j] == self.edges[j][i] {
                    return Err(TournamentError::NotATournament(format!(
                        "pair ({}, {}) has {} edges",
                        self.systems[i],
                        self.systems[j],
                        if self.edges[i][j] { 2 } else { 0 }
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        self.edges.iter().map(|row| row.iter().filter(|&&e| e).count()).collect()
    }
}

/// Number of unordered triples forming a directed cycle.
///
/// Each cyclic triple is found once per edge: for `i -> j` it is counted
/// for every `k` with `j -> k` and `k -> i`, found by intersecting the
/// out-set of `j` with the in-set of `i`.
pub fn count_directed_3cycles(t: &Tournament) -> Result<u64, TournamentError> {
    t.check_complete()?;
    let n = t.len();
    let blocks = n.div_ceil(64).max(1);
    let mut out_sets = vec![vec![0u64; blocks]; n];
    let mut in_sets = vec![vec![0u64; blocks]; n];
    for i in 0..n {
        for j in 0..n {
            if t.edges[i][j] {
                out_sets[i][j / 64] |= 1 << (j % 64);
                in_sets[j][i / 64] |= 1 << (i % 64);
            }
        }
    }
    let mut per_edge = 0u64;
    for i in 0..n {
        for j in 0..n {
            if t.edges[i][j] {
                per_edge += out_sets[j]
                    .iter()
                    .zip(&in_sets[i])
                    .map(|(a, b)| u64::from((a & b).count_ones()))
                    .sum::<u64>();
            }
        }
    }
    Ok(per_edge / 3)
}

pub fn triple_count(n: usize) -> u64 {
    let n = n as u64;
    if n < 3 {
        0
    } else {
        n * (n - 1) * (n - 2) / 6
    }
}

/// Share of triples that are cyclic, as an exact rational.
pub fn violation_rate(t: &Tournament) -> Result<Rate, TournamentError> {
    if t.len() < 3 {
        return Err(TournamentError::TooSmall(t.len()));
    }
    Ok(Rate::new(count_directed_3cycles(t)?, triple_count(t.len())))
}

/// Corpus-level summary of per-document violation rates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViolationStats {
    pub per_doc: BTreeMap<String, Rate>,
    pub mean: Rate,
    pub frac_docs_with_violation: Rate,
    pub max: Rate,
    pub median: Rate,
}

pub fn corpus_violation_stats(rates: &BTreeMap<String, Rate>) -> Result<ViolationStats, TournamentError> {
    if rates.is_empty() {
        return Err(TournamentError::Empty);
    }
    let count = rates.len() as u64;
    let mut sorted: Vec<Rate> = rates.values().copied().collect();
    sorted.sort();
    let total = sorted.iter().fold(Rate::zero(), |acc, r| acc + r);
    let violated = sorted.iter().filter(|r| !r.is_zero()).count() as u64;
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / Rate::from_integer(2)
    };
    Ok(ViolationStats {
        per_doc: rates.clone(),
        mean: total / Rate::from_integer(count),
        frac_docs_with_violation: Rate::new(violated, count),
        max: *sorted.last().expect("non-empty"),
        median,
    })
}

pub fn rate_to_f64(rate: &Rate) -> f64 {
    *rate.numer() as f64 / *rate.denom() as f64
}
