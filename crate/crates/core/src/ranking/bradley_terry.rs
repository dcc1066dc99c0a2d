//! Bradley-Terry strengths by Hunter's minorize-maximize iteration.

use super::{scored_result_within, Method, RankingError, RankingResult, WinMatrix};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct BradleyTerryConfig {
    /// Pseudo-wins added to every ordered pair before fitting.
    pub smoothing: f64,
    pub max_iterations: usize,
    /// Stop once the largest relative change of any strength drops below
    /// this. Raised to a few ulps for scalars too coarse to reach it.
    pub tolerance: f64,
}

impl Default for BradleyTerryConfig {
    fn default() -> Self {
        BradleyTerryConfig {
            smoothing: 0.01,
            max_iterations: 10_000,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BradleyTerryFit<F> {
    pub systems: Vec<String>,
    /// Positive strengths with geometric mean 1, in `systems` order.
    pub strengths: Vec<F>,
    /// Log-likelihood of the smoothed data at the start and after every
    /// iteration.
    pub log_likelihood: Vec<F>,
    pub iterations: usize,
}

fn smoothed<F: Scalar>(m: &WinMatrix, smoothing: f64) -> Vec<Vec<F>> {
    let n = m.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        F::zero()
                    } else {
                        F::of(m.wins[i][j] as f64 + smoothing)
                    }
                })
                .collect()
        })
        .collect()
}

/// `sum_{i != j} w_ij * ln(p_i / (p_i + p_j))`.
pub fn log_likelihood<F: Scalar>(w: &[Vec<F>], p: &[F]) -> F {
    let n = p.len();
    let mut ll = F::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j && w[i][j] > F::zero() {
                ll = ll + w[i][j] * (p[i] / (p[i] + p[j])).ln();
            }
        }
    }
    ll
}

fn strongly_connected(w: &[Vec<u64>]) -> bool {
    let n = w.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let edge = if forward { w[u][v] } else { w[v][u] };
                if edge > 0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    n <= 1 || (reach(true) && reach(false))
}

fn normalize<F: Scalar>(p: &mut [F]) {
    let n = F::of_usize(p.len());
    let log_mean = p.iter().map(|v| v.ln()).sum::<F>() / n;
    let scale = log_mean.exp();
    for v in p.iter_mut() {
        *v = *v / scale;
    }
}

pub fn bradley_terry_fit<F: Scalar>(
    m: &WinMatrix,
    config: &BradleyTerryConfig,
) -> Result<BradleyTerryFit<F>, RankingError> {
    let n = m.len();
    if n == 0 {
        return Err(RankingError::Empty);
    }
    if config.smoothing <= 0.0 && !strongly_connected(&m.wins) {
        return Err(RankingError::NotConnected);
    }
    let w = smoothed::<F>(m, config.smoothing.max(0.0));
    let won: Vec<F> = w.iter().map(|row| row.iter().copied().sum()).collect();
    let tol = F::of(config.tolerance).max(F::epsilon() * F::of(4.0));

    let mut p = vec![F::one(); n];
    let mut trace = vec![log_likelihood(&w, &p)];
    for iter in 1..=config.max_iterations {
        let mut next: Vec<F> = (0..n)
            .map(|i| {
                let denom: F = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (w[i][j] + w[j][i]) / (p[i] + p[j]))
                    .sum();
                won[i] / denom
            })
            .collect();
        normalize(&mut next);
        let change = p
            .iter()
            .zip(&next)
            .map(|(old, new)| ((*new - *old) / *old).abs())
            .fold(F::zero(), F::max);
        p = next;
        trace.push(log_likelihood(&w, &p));
        if change < tol {
            return Ok(BradleyTerryFit {
                systems: m.systems.clone(),
                strengths: p,
                log_likelihood: trace,
                iterations: iter,
            });
        }
    }
    Err(RankingError::NoConvergence {
        iterations: config.max_iterations,
        last: p.iter().map(|v| v.to_f64_lossy()).collect(),
    })
}

pub fn bradley_terry<F: Scalar>(
    m: &WinMatrix,
    config: &BradleyTerryConfig,
) -> Result<RankingResult<F>, RankingError> {
    let fit = bradley_terry_fit::<F>(m, config)?;
    // strengths equal up to the fitting tolerance are ties
    let tie = F::of(1e-6).max(F::epsilon().sqrt());
    Ok(scored_result_within(Method::BradleyTerry, m, &fit.strengths, tie))
}
