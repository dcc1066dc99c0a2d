//! Schulze method: strongest beatpaths over positive margins.

use super::{scored_result, Method, RankingResult, WinMatrix};
use crate::Scalar;

/// Widest-path strengths `p[i][j]` over the graph of positive margins.
pub fn schulze_strengths(m: &WinMatrix) -> Vec<Vec<i64>> {
    let n = m.len();
    let mut p: Vec<Vec<i64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0 } else { m.margin(i, j).max(0) }).collect())
        .collect();
    for k in 0..n {
        for i in 0..n {
            if i == k {
                continue;
            }
            for j in 0..n {
                if j != i && j != k {
                    let via = p[i][k].min(p[k][j]);
                    if via > p[i][j] {
                        p[i][j] = via;
                    }
                }
            }
        }
    }
    p
}

/// Systems ordered by how many others they beat under the Schulze relation.
pub fn schulze_ranking<F: Scalar>(m: &WinMatrix) -> RankingResult<F> {
    let p = schulze_strengths(m);
    let n = m.len();
    let scores: Vec<F> = (0..n)
        .map(|i| F::of_usize((0..n).filter(|&j| j != i && p[i][j] > p[j][i]).count()))
        .collect();
    scored_result(Method::Schulze, m, &scores)
}
