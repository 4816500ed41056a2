//! Maximum-similarity matching between the queries of one class and that
//! class's centroids.

use crate::error::{Error, Result};
use crate::numerics::{dot, FeatureVector};

/// Absolute tolerance used when comparing reduced costs in the augmenting search.
const EPS: f64 = 1e-12;

/// A bijection on `0..k`: entry `i` is the centroid matched to query `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &j in &mapping {
            if j >= mapping.len() || std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidArgument(format!(
                    "{mapping:?} is not a permutation"
                )));
            }
        }
        Ok(Permutation(mapping))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Σ_i score[i][σ(i)], summed in row order.
    pub fn objective(&self, score: &[Vec<f64>]) -> f64 {
        self.0.iter().enumerate().map(|(i, &j)| score[i][j]).sum()
    }
}

/// Solves the square assignment problem, maximizing the total score.
///
/// Shortest-augmenting-path Hungarian method with row/column potentials,
/// run on the negated scores. Rows are inserted in ascending order and the
/// column scan always prefers the lowest index on ties, so the result is
/// reproducible.
pub fn hungarian_max(score: &[Vec<f64>]) -> Result<Permutation> {
    let n = score.len();
    for row in score {
        if row.len() != n {
            return Err(Error::InvalidArgument(format!(
                "score matrix must be square: {n} rows but a row of length {}",
                row.len()
            )));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite score".into()));
        }
    }
    if n == 0 {
        return Permutation::new(Vec::new());
    }

    let cost = |i: usize, j: usize| -score[i][j];
    // 1-based with a virtual column 0, as in the classic formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] - EPS {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta - EPS {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut mapping = vec![0usize; n];
    for j in 1..=n {
        mapping[col_owner[j] - 1] = j - 1;
    }
    Permutation::new(mapping)
}

/// Builds the query × centroid cosine-score matrix and solves it.
pub fn match_queries_to_centroids(
    queries: &[&FeatureVector],
    centroids: &[&[f64]],
) -> Result<Permutation> {
    if queries.len() != centroids.len() {
        return Err(Error::InvalidArgument(format!(
            "{} queries but {} centroids",
            queries.len(),
            centroids.len()
        )));
    }
    let score: Vec<Vec<f64>> = queries
        .iter()
        .map(|q| {
            centroids
                .iter()
                .map(|c| {
                    if c.len() != q.dim() {
                        Err(Error::DimensionMismatch {
                            expected: q.dim(),
                            got: c.len(),
                        })
                    } else {
                        Ok(dot(q.as_slice(), c))
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    hungarian_max(&score)
}
