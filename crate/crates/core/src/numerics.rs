//! Unit-norm feature vectors and the handful of vector operations the rest of
//! the crate is built on.
//!
//! Every feature, centroid and synthetic negative passes through
//! [`l2_normalize`] before it is stored, so plain dot products between stored
//! vectors are cosine similarities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vectors whose norm is already within this distance of 1 are returned
/// untouched by [`l2_normalize`]; this makes normalization idempotent bit for bit.
const UNIT_TOLERANCE: f64 = 1e-12;

/// A unit-norm feature vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Wraps values that are already known to be unit-norm (e.g. read back
    /// from storage). Panics in debug builds if they are not.
    pub fn from_unit(values: Vec<f64>) -> Self {
        debug_assert!((norm(&values) - 1.0).abs() < 1e-6);
        FeatureVector(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Plain dot product, no dimension check.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<FeatureVector> {
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::Degenerate(format!("non-finite entry {bad}")));
    }
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::Degenerate("zero vector cannot be normalized".into()));
    }
    if (n - 1.0).abs() <= UNIT_TOLERANCE {
        return Ok(FeatureVector(v.to_vec()));
    }
    Ok(FeatureVector(v.iter().map(|x| x / n).collect()))
}

pub fn cosine_sim(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(dot(&a.0, &b.0))
}

/// Normalized arithmetic mean. Summation follows iteration order.
pub fn mean_vector<'a, I>(vs: I) -> Result<FeatureVector>
where
    I: IntoIterator<Item = &'a FeatureVector>,
{
    mean_of_slices(vs.into_iter().map(|v| v.as_slice()))
}

/// [`mean_vector`] over raw slices (bank rows, encoder outputs).
pub fn mean_of_slices<'a, I>(vs: I) -> Result<FeatureVector>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = vs.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::InvalidArgument("mean of an empty set".into()))?;
    let mut acc = first.to_vec();
    let mut count = 1usize;
    for v in iter {
        if v.len() != acc.len() {
            return Err(Error::DimensionMismatch {
                expected: acc.len(),
                got: v.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        count += 1;
    }
    let inv = 1.0 / count as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    l2_normalize(&acc)
}
