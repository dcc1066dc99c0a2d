//! Minimum feedback arc set ordering: the linear order whose backward
//! majority edges carry the least total weight, solved exactly by dynamic
//! programming over subsets.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Method, RankingError, RankingResult, WinMatrix};
use crate::Scalar;

/// Largest system count solved exactly unless configured otherwise.
pub const DEFAULT_EXACT_BOUND: usize = 12;
/// Hard ceiling; the table has `2^n` entries.
const MAX_EXACT_BOUND: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MfasWeights {
    /// Edge weight is the majority margin.
    #[default]
    Margin,
    /// Every strict majority edge weighs 1.
    Unit,
}

impl FromStr for MfasWeights {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "margin" => Ok(MfasWeights::Margin),
            "unit" => Ok(MfasWeights::Unit),
            _ => Err(format!("unknown MFAS weighting {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MfasConfig {
    pub weights: MfasWeights,
    pub exact_bound: usize,
}

impl Default for MfasConfig {
    fn default() -> Self {
        MfasConfig {
            weights: MfasWeights::Margin,
            exact_bound: DEFAULT_EXACT_BOUND,
        }
    }
}

/// `wt[i][j]`: weight of the majority edge `i -> j`, zero when `i` does not
/// strictly beat `j`.
pub fn edge_weights(m: &WinMatrix, weights: MfasWeights) -> Vec<Vec<u64>> {
    let n = m.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| match (m.margin(i, j) > 0, weights) {
                    (false, _) => 0,
                    (true, MfasWeights::Margin) => m.margin(i, j) as u64,
                    (true, MfasWeights::Unit) => 1,
                })
                .collect()
        })
        .collect()
}

/// Total weight of edges pointing from a later system to an earlier one.
/// `order` lists matrix indices, best first.
pub fn feedback_cost(m: &WinMatrix, order: &[usize], weights: MfasWeights) -> u64 {
    let wt = edge_weights(m, weights);
    let mut cost = 0;
    for (pos, &later) in order.iter().enumerate() {
        for &earlier in &order[..pos] {
            cost += wt[later][earlier];
        }
    }
    cost
}

/// Optimal order; among optimal orders the lexicographically smallest
/// sequence of system ids.
pub fn mfas_exact<F: Scalar>(m: &WinMatrix, config: &MfasConfig) -> Result<RankingResult<F>, RankingError> {
    let n = m.len();
    let bound = config.exact_bound.min(MAX_EXACT_BOUND);
    if n > bound {
        return Err(RankingError::TooLarge { n, bound });
    }
    let wt = edge_weights(m, config.weights);
    let full = (1usize << n) - 1;
    // cost of placing v right after the set `placed`: its edges into `placed`
    let entering = |v: usize, placed: usize| -> u64 {
        (0..n).filter(|&u| placed >> u & 1 == 1).map(|u| wt[v][u]).sum()
    };
    // best[s]: least cost of ordering the systems outside `s` after `s`
    let mut best = vec![u64::MAX; full + 1];
    best[full] = 0;
    for s in (0..full).rev() {
        for v in 0..n {
            if s >> v & 1 == 0 {
                let c = entering(v, s) + best[s | 1 << v];
                if c < best[s] {
                    best[s] = c;
                }
            }
        }
    }
    let mut by_id: Vec<usize> = (0..n).collect();
    by_id.sort_by(|&a, &b| m.systems[a].cmp(&m.systems[b]));
    let mut placed = 0usize;
    let mut order = Vec::with_capacity(n);
    while placed != full {
        let v = by_id
            .iter()
            .copied()
            .find(|&v| placed >> v & 1 == 0 && entering(v, placed) + best[placed | 1 << v] == best[placed])
            .expect("an optimal continuation exists");
        order.push(v);
        placed |= 1 << v;
    }
    Ok(RankingResult {
        method: Method::MfasIlp,
        order: order.iter().map(|&i| m.systems[i].clone()).collect(),
        scores: Vec::new(),
        feedback_cost: Some(best[0]),
        tau_vs_gold: None,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::{chain, ids, matrix};
    use super::*;
    use rand::{Rng, SeedableRng};

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn optimum_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..25 {
            let n = rng.gen_range(2..=6);
            let mut w = vec![vec![0u64; n]; n];
            for i in 0..n {
                for j in i + 1..n {
                    let a = rng.gen_range(0..=6);
                    w[i][j] = a;
                    w[j][i] = 6 - a;
                }
            }
            let m = WinMatrix::new(ids(n), w);
            for weights in [MfasWeights::Margin, MfasWeights::Unit] {
                let cfg = MfasConfig { weights, ..Default::default() };
                let r: RankingResult<f64> = mfas_exact(&m, &cfg).unwrap();
                let (best_cost, best_order) = permutations(n)
                    .into_iter()
                    .map(|p| {
                        let names: Vec<String> = p.iter().map(|&i| m.systems[i].clone()).collect();
                        (feedback_cost(&m, &p, weights), names)
                    })
                    .min()
                    .unwrap();
                assert_eq!(r.feedback_cost, Some(best_cost));
                assert_eq!(r.order, best_order);
            }
        }
    }

    #[test]
    fn acyclic_costs_nothing() {
        let r: RankingResult<f64> = mfas_exact(&chain(7, 5, 3), &MfasConfig::default()).unwrap();
        assert_eq!(r.order, ids(7));
        assert_eq!(r.feedback_cost, Some(0));
    }

    #[test]
    fn cycle_breaks_at_lightest_edge() {
        // s0>s1 by 5, s1>s2 by 3, s2>s0 by 1
        let m = matrix(&[&[0, 5, 0], &[0, 0, 3], &[1, 0, 0]]);
        let r: RankingResult<f64> = mfas_exact(&m, &MfasConfig::default()).unwrap();
        assert_eq!(r.order, ids(3));
        assert_eq!(r.feedback_cost, Some(1));
        let unit = MfasConfig {
            weights: MfasWeights::Unit,
            ..Default::default()
        };
        let r: RankingResult<f64> = mfas_exact(&m, &unit).unwrap();
        assert_eq!(r.feedback_cost, Some(1));
        assert_eq!(r.order, ids(3));
    }

    #[test]
    fn bound_is_enforced() {
        let m = chain(13, 1, 1);
        assert_eq!(
            mfas_exact::<f64>(&m, &MfasConfig::default()),
            Err(RankingError::TooLarge { n: 13, bound: 12 })
        );
        let wide = MfasConfig {
            exact_bound: 13,
            ..Default::default()
        };
        assert_eq!(mfas_exact::<f64>(&m, &wide).unwrap().feedback_cost, Some(0));
    }
}
