//! Rank statistics and interval helpers used by the ranking and conformal
//! reports.

use std::cmp::Ordering;

use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::Scalar;

/// Smallest p-value ever reported. Extreme t statistics underflow the
/// incomplete beta function, so reported values saturate here.
pub const P_VALUE_FLOOR: f64 = 1e-300;

/// Largest sample for which [`spearman_exact_p`] enumerates permutations.
pub const EXACT_P_MAX_N: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("correlation undefined: {0} has zero rank variance")]
    ZeroVariance(&'static str),
    #[error("no samples")]
    Empty,
}

/// A correlation coefficient with its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation<F> {
    pub r: F,
    pub p: F,
    pub n: usize,
}

fn cmp_scalar<F: Scalar>(a: &F, b: &F) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Average ranks (1-based) with tied values sharing the mean of their
/// positions.
pub fn average_ranks<F: Scalar>(values: &[F]) -> Vec<F> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| cmp_scalar(&values[a], &values[b]));
    let mut ranks = vec![F::zero(); values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let shared = F::of_usize(start + 1 + end) / F::of(2.0);
        for &idx in &order[start..end] {
            ranks[idx] = shared;
        }
        start = end;
    }
    ranks
}

fn pearson<F: Scalar>(x: &[F], y: &[F]) -> Option<F> {
    let n = F::of_usize(x.len());
    let mx = x.iter().copied().sum::<F>() / n;
    let my = y.iter().copied().sum::<F>() / n;
    let (mut sxy, mut sxx, mut syy) = (F::zero(), F::zero(), F::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx <= F::zero() || syy <= F::zero() {
        return None;
    }
    let r = sxy / (sxx * syy).sqrt();
    Some(r.max(-F::one()).min(F::one()))
}

/// Two-sided p-value of a correlation coefficient via the t approximation
/// with `n - 2` degrees of freedom.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    if n < 3 {
        return 1.0;
    }
    let df = (n - 2) as f64;
    let one_minus = (1.0 - r * r).max(0.0);
    if one_minus == 0.0 {
        return P_VALUE_FLOOR;
    }
    let t2 = r * r * df / one_minus;
    let p = beta_reg(df / 2.0, 0.5, df / (df + t2));
    p.clamp(P_VALUE_FLOOR, 1.0)
}

/// Spearman rank correlation with average-rank ties.
pub fn spearman<F: Scalar>(x: &[F], y: &[F]) -> Result<Correlation<F>, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew {
            needed: 3,
            got: x.len(),
        });
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    if rx.iter().all(|&v| v == rx[0]) {
        return Err(StatsError::ZeroVariance("x"));
    }
    if ry.iter().all(|&v| v == ry[0]) {
        return Err(StatsError::ZeroVariance("y"));
    }
    let r = pearson(&rx, &ry).ok_or(StatsError::ZeroVariance("x or y"))?;
    let p = correlation_p_value(r.to_f64_lossy(), x.len());
    Ok(Correlation {
        r,
        p: F::of(p).max(F::min_positive_value()),
        n: x.len(),
    })
}

/// Exact two-sided permutation p-value for Spearman's coefficient, by
/// enumerating every permutation of `y`. Limited to `n <= 10`.
pub fn spearman_exact_p<F: Scalar>(x: &[F], y: &[F]) -> Result<f64, StatsError> {
    let observed = spearman(x, y)?.r.to_f64_lossy();
    if x.len() > EXACT_P_MAX_N {
        return Err(StatsError::TooFew {
            needed: EXACT_P_MAX_N,
            got: x.len(),
        });
    }
    let rx: Vec<f64> = average_ranks(x).iter().map(|v| v.to_f64_lossy()).collect();
    let mut ry: Vec<f64> = average_ranks(y).iter().map(|v| v.to_f64_lossy()).collect();
    let (mut extreme, mut total) = (0u64, 0u64);
    let tol = 1e-12;
    let mut visit = |perm: &[f64]| {
        total += 1;
        if let Some(r) = pearson(&rx, perm) {
            if r.abs() >= observed.abs() - tol {
                extreme += 1;
            }
        }
    };
    // Heap's algorithm
    let n = ry.len();
    let mut c = vec![0usize; n];
    visit(&ry);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                ry.swap(0, i);
            } else {
                ry.swap(c[i], i);
            }
            visit(&ry);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(extreme as f64 / total as f64)
}

fn tie_pairs(sorted_groups: impl Iterator<Item = usize>) -> u64 {
    sorted_groups.map(|t| (t as u64) * (t as u64 - 1) / 2).sum()
}

fn run_lengths<T, E: Fn(&T, &T) -> bool>(items: &[T], eq: E) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=items.len() {
        if i == items.len() || !eq(&items[i], &items[start]) {
            if i > start {
                runs.push(i - start);
            }
            start = i;
        }
    }
    runs
}

fn merge_count<F: Scalar>(values: &mut [F], buffer: &mut Vec<F>) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut values[..mid], buffer) + merge_count(&mut values[mid..], buffer);
    buffer.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if values[j] < values[i] {
            swaps += (mid - i) as u64;
            buffer.push(values[j]);
            j += 1;
        } else {
            buffer.push(values[i]);
            i += 1;
        }
    }
    buffer.extend_from_slice(&values[i..mid]);
    buffer.extend_from_slice(&values[j..n]);
    values.copy_from_slice(buffer);
    swaps
}

/// Kendall's tau-b, computed in O(n log n) with Knight's merge-sort method.
pub fn kendall_tau_b<F: Scalar>(x: &[F], y: &[F]) -> Result<F, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    let mut pairs: Vec<(F, F)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| cmp_scalar(&a.0, &b.0).then_with(|| cmp_scalar(&a.1, &b.1)));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let x_ties = tie_pairs(run_lengths(&pairs, |a, b| a.0 == b.0).into_iter());
    let joint_ties = tie_pairs(run_lengths(&pairs, |a, b| a == b).into_iter());

    let mut ys: Vec<F> = pairs.iter().map(|p| p.1).collect();
    let mut buffer = Vec::with_capacity(n);
    let swaps = merge_count(&mut ys, &mut buffer);
    let y_ties = tie_pairs(run_lengths(&ys, |a, b| a == b).into_iter());

    if n0 == x_ties {
        return Err(StatsError::ZeroVariance("x"));
    }
    if n0 == y_ties {
        return Err(StatsError::ZeroVariance("y"));
    }
    // concordant - discordant, with both tie kinds removed
    let numerator = n0 as f64 - x_ties as f64 - y_ties as f64 + joint_ties as f64 - 2.0 * swaps as f64;
    let denominator = ((n0 - x_ties) as f64 * (n0 - y_ties) as f64).sqrt();
    let tau = (numerator / denominator).clamp(-1.0, 1.0);
    Ok(F::of(tau))
}

/// Mean with a normal-approximation 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi<F> {
    pub mean: F,
    pub half_width: F,
    pub count: usize,
    /// Set when a single sample makes the interval meaningless.
    pub degenerate: bool,
}

/// `mean ± 1.96 · sd / √n`, with `sd` the population standard deviation.
pub fn mean_ci95<F: Scalar>(samples: &[F]) -> Result<MeanCi<F>, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    let n = F::of_usize(samples.len());
    let mean = samples.iter().copied().sum::<F>() / n;
    let var = samples.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    let half_width = F::of(1.96) * var.sqrt() / n.sqrt();
    Ok(MeanCi {
        mean,
        half_width,
        count: samples.len(),
        degenerate: samples.len() == 1,
    })
}
