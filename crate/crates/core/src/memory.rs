//! The multi-centroid memory: `K` centroids per class for both domains,
//! stored as one `M × C` row-major block with `M = K (n_s + n_t)`.
//!
//! Rows are laid out source classes first, then target classes, each class
//! occupying `K` consecutive rows.

use serde::{Deserialize, Serialize};

use crate::assignment::{match_queries_to_centroids, Permutation};
use crate::clustering::PseudoDataset;
use crate::error::{Error, Result};
use crate::numerics::{dot, l2_normalize, mean_of_slices, FeatureVector};
use crate::Domain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositiveStrategy {
    #[default]
    Moderate,
    Most,
    Least,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeStrategy {
    #[default]
    Mean,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SelectionStrategy {
    pub positive: PositiveStrategy,
    pub negative: NegativeStrategy,
}

/// Which classes compete with the positive in the loss denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeScope {
    SameDomain,
    BothDomains,
}

/// Identifies a vector taking part in a contrastive denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Participant {
    Centroid {
        domain: Domain,
        class: usize,
        slot: usize,
    },
    ClassMean {
        domain: Domain,
        class: usize,
    },
    Synthetic(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Negative {
    pub id: Participant,
    pub vector: FeatureVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidBank {
    k: usize,
    dim: usize,
    n_source: usize,
    n_target: usize,
    rows: Vec<f64>,
}

impl CentroidBank {
    /// Every slot of a class starts at the normalized mean feature of the
    /// class. `*_features` are indexed by [`PseudoSample::index`].
    ///
    /// [`PseudoSample::index`]: crate::clustering::PseudoSample::index
    pub fn init(
        source: &PseudoDataset,
        source_features: &[FeatureVector],
        target: &PseudoDataset,
        target_features: &[FeatureVector],
        k: usize,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if source.is_empty() || target.is_empty() {
            return Err(Error::InvalidArgument("both datasets must be nonempty".into()));
        }
        let dim = source_features
            .first()
            .or(target_features.first())
            .map(FeatureVector::dim)
            .ok_or_else(|| Error::InvalidArgument("no features".into()))?;
        let mut rows = Vec::with_capacity(k * (source.n_classes + target.n_classes) * dim);
        for (ds, feats) in [(source, source_features), (target, target_features)] {
            for class in 0..ds.n_classes {
                let members = ds.members(class);
                if members.is_empty() {
                    return Err(Error::InvalidArgument(format!(
                        "{} class {class} has no samples",
                        ds.domain
                    )));
                }
                let mean = mean_of_slices(
                    members
                        .iter()
                        .map(|&pos| feats[ds.samples[pos].index].as_slice()),
                )?;
                if mean.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: mean.dim(),
                    });
                }
                for _ in 0..k {
                    rows.extend_from_slice(mean.as_slice());
                }
            }
        }
        Ok(CentroidBank {
            k,
            dim,
            n_source: source.n_classes,
            n_target: target.n_classes,
            rows,
        })
    }

    /// Reassembles a bank from raw rows, normalizing each row.
    pub fn from_rows(
        k: usize,
        dim: usize,
        n_source: usize,
        n_target: usize,
        rows: Vec<f64>,
    ) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::InvalidArgument("K and C must be positive".into()));
        }
        let expected = k * (n_source + n_target) * dim;
        if rows.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: rows.len(),
            });
        }
        let mut normalized = Vec::with_capacity(expected);
        for row in rows.chunks(dim) {
            normalized.extend_from_slice(l2_normalize(row)?.as_slice());
        }
        Ok(CentroidBank {
            k,
            dim,
            n_source,
            n_target,
            rows: normalized,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self, domain: Domain) -> usize {
        match domain {
            Domain::Source => self.n_source,
            Domain::Target => self.n_target,
        }
    }

    /// Total number of centroids, `K (n_s + n_t)`.
    pub fn n_rows(&self) -> usize {
        self.k * (self.n_source + self.n_target)
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn row_index(&self, domain: Domain, class: usize, slot: usize) -> Result<usize> {
        if class >= self.n_classes(domain) || slot >= self.k {
            return Err(Error::InvalidArgument(format!(
                "no centroid ({domain}, class {class}, slot {slot})"
            )));
        }
        let offset = match domain {
            Domain::Source => 0,
            Domain::Target => self.n_source,
        };
        Ok((offset + class) * self.k + slot)
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.rows[index * self.dim..(index + 1) * self.dim]
    }

    pub fn centroid(&self, domain: Domain, class: usize, slot: usize) -> Result<&[f64]> {
        Ok(self.row(self.row_index(domain, class, slot)?))
    }

    pub fn class_centroids(&self, domain: Domain, class: usize) -> Result<Vec<&[f64]>> {
        (0..self.k).map(|s| self.centroid(domain, class, s)).collect()
    }

    /// Normalized mean of the class's `K` centroids.
    pub fn class_mean(&self, domain: Domain, class: usize) -> Result<FeatureVector> {
        mean_of_slices(self.class_centroids(domain, class)?)
    }

    /// Matches the `K` queries of a class to its centroids and moves each
    /// matched centroid to `normalize(m c + (1 - m) q)`.
    pub fn update_class(
        &mut self,
        domain: Domain,
        class: usize,
        queries: &[&FeatureVector],
        momentum: f64,
    ) -> Result<Permutation> {
        if queries.len() != self.k {
            return Err(Error::InvalidArgument(format!(
                "update needs exactly K = {} queries, got {}",
                self.k,
                queries.len()
            )));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1], got {momentum}"
            )));
        }
        let sigma = {
            let centroids = self.class_centroids(domain, class)?;
            match_queries_to_centroids(queries, &centroids)?
        };
        let mut blended = vec![0.0; self.dim];
        for (q, &slot) in queries.iter().zip(sigma.as_slice()) {
            let row = self.row_index(domain, class, slot)?;
            let range = row * self.dim..(row + 1) * self.dim;
            for ((b, c), x) in blended.iter_mut().zip(&self.rows[range.clone()]).zip(q.as_slice()) {
                *b = momentum * c + (1.0 - momentum) * x;
            }
            let updated = l2_normalize(&blended)?;
            self.rows[range].copy_from_slice(updated.as_slice());
        }
        Ok(sigma)
    }

    /// Picks the positive centroid `c⁺` of `class` for `query`: centroids are
    /// ranked by ascending similarity (ties by slot) and rank `⌈K/2⌉`, `K` or
    /// `1` is returned for moderate, most and least. Returns `(slot, c⁺)`.
    pub fn select_positive(
        &self,
        query: &FeatureVector,
        domain: Domain,
        class: usize,
        strategy: PositiveStrategy,
    ) -> Result<(usize, FeatureVector)> {
        let centroids = self.class_centroids(domain, class)?;
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let mut ranked: Vec<(usize, f64)> = centroids
            .iter()
            .enumerate()
            .map(|(slot, c)| (slot, dot(query.as_slice(), c)))
            .collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let rank = match strategy {
            PositiveStrategy::Least => 1,
            PositiveStrategy::Moderate => self.k.div_ceil(2),
            PositiveStrategy::Most => self.k,
        };
        let slot = ranked[rank - 1].0;
        Ok((slot, FeatureVector::from_unit(centroids[slot].to_vec())))
    }

    /// Negatives for a query of `(domain, class)`. The positive class never
    /// contributes. Mean yields one class mean per negative class, All yields
    /// every centroid of every negative class. Source classes come first.
    pub fn select_negatives(
        &self,
        domain: Domain,
        class: usize,
        strategy: NegativeStrategy,
        scope: NegativeScope,
    ) -> Result<Vec<Negative>> {
        if class >= self.n_classes(domain) {
            return Err(Error::InvalidArgument(format!(
                "{domain} class {class} does not exist"
            )));
        }
        let domains: &[Domain] = match (scope, domain) {
            (NegativeScope::BothDomains, _) => &[Domain::Source, Domain::Target],
            (NegativeScope::SameDomain, Domain::Source) => &[Domain::Source],
            (NegativeScope::SameDomain, Domain::Target) => &[Domain::Target],
        };
        let mut out = Vec::new();
        for &d in domains {
            for c in 0..self.n_classes(d) {
                if d == domain && c == class {
                    continue;
                }
                match strategy {
                    NegativeStrategy::Mean => out.push(Negative {
                        id: Participant::ClassMean { domain: d, class: c },
                        vector: self.class_mean(d, c)?,
                    }),
                    NegativeStrategy::All => {
                        for slot in 0..self.k {
                            out.push(Negative {
                                id: Participant::Centroid {
                                    domain: d,
                                    class: c,
                                    slot,
                                },
                                vector: FeatureVector::from_unit(
                                    self.centroid(d, c, slot)?.to_vec(),
                                ),
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
