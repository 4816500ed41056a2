//! Pseudo-label generation: DBSCAN over cosine distance, the noise-free
//! pseudo-labelled dataset built from it, and controlled label corruption.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, FeatureVector};
use crate::Domain;

/// Output of [`dbscan`]: `assignment[i]` is `None` for noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabeling {
    pub assignment: Vec<Option<usize>>,
    pub n_clusters: usize,
}

impl ClusterLabeling {
    pub fn noise_count(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_none()).count()
    }

    pub fn noise_fraction(&self) -> f64 {
        if self.assignment.is_empty() {
            0.0
        } else {
            self.noise_count() as f64 / self.assignment.len() as f64
        }
    }
}

/// DBSCAN with distance `1 - a·b`. A point is core when at least `min_pts`
/// points (itself included) lie within `eps`. Points are scanned in index
/// order and clusters are numbered in order of discovery; a border point
/// belongs to the first cluster that reaches it.
pub fn dbscan(features: &[FeatureVector], eps: f64, min_pts: usize) -> Result<ClusterLabeling> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::InvalidArgument("min_pts must be at least 1".into()));
    }
    let n = features.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| 1.0 - dot(features[i].as_slice(), features[j].as_slice()) <= eps)
                .collect()
        })
        .collect();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut assignment: Vec<Option<usize>> = vec![None; n];
    let mut n_clusters = 0;
    let mut queue = Vec::new();
    for start in 0..n {
        if assignment[start].is_some() || !is_core[start] {
            continue;
        }
        let id = n_clusters;
        n_clusters += 1;
        assignment[start] = Some(id);
        queue.clear();
        queue.push(start);
        let mut head = 0;
        while head < queue.len() {
            let p = queue[head];
            head += 1;
            if !is_core[p] {
                continue;
            }
            for &nb in &neighbors[p] {
                if assignment[nb].is_none() {
                    assignment[nb] = Some(id);
                    queue.push(nb);
                }
            }
        }
    }
    Ok(ClusterLabeling {
        assignment,
        n_clusters,
    })
}

/// One retained sample: `index` points into the domain's raw records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoSample {
    pub index: usize,
    pub label: usize,
    /// Hidden identity, for evaluation only.
    pub true_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDataset {
    pub domain: Domain,
    pub samples: Vec<PseudoSample>,
    pub n_classes: usize,
    members: Vec<Vec<usize>>,
}

impl PseudoDataset {
    /// Builds a dataset from `(index, label, true_id)` triples, relabelling
    /// the labels to `0..n` in ascending order of the original label.
    pub fn from_triples(domain: Domain, triples: Vec<(usize, usize, usize)>) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::DegenerateClustering(format!(
                "{domain} dataset has no labelled samples"
            )));
        }
        let remap: BTreeMap<usize, usize> = {
            let mut labels: Vec<usize> = triples.iter().map(|t| t.1).collect();
            labels.sort_unstable();
            labels.dedup();
            labels.into_iter().enumerate().map(|(new, old)| (old, new)).collect()
        };
        let n_classes = remap.len();
        let mut members = vec![Vec::new(); n_classes];
        let samples: Vec<PseudoSample> = triples
            .into_iter()
            .enumerate()
            .map(|(pos, (index, label, true_id))| {
                let label = remap[&label];
                members[label].push(pos);
                PseudoSample {
                    index,
                    label,
                    true_id,
                }
            })
            .collect();
        Ok(PseudoDataset {
            domain,
            samples,
            n_classes,
            members,
        })
    }

    /// Ground-truth labelled dataset (the source domain).
    pub fn from_labels(domain: Domain, labels: &[usize], true_ids: &[usize]) -> Result<Self> {
        Self::from_triples(
            domain,
            labels
                .iter()
                .zip(true_ids)
                .enumerate()
                .map(|(i, (&l, &t))| (i, l, t))
                .collect(),
        )
    }

    /// Positions (into `samples`) of every member of `class`.
    pub fn members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

/// Drops noise and relabels clusters contiguously.
pub fn build_pseudo_dataset(
    labeling: &ClusterLabeling,
    true_ids: &[usize],
    domain: Domain,
) -> Result<PseudoDataset> {
    if labeling.assignment.len() != true_ids.len() {
        return Err(Error::DimensionMismatch {
            expected: labeling.assignment.len(),
            got: true_ids.len(),
        });
    }
    let triples: Vec<_> = labeling
        .assignment
        .iter()
        .zip(true_ids)
        .enumerate()
        .filter_map(|(i, (a, &t))| a.map(|label| (i, label, t)))
        .collect();
    if triples.is_empty() {
        return Err(Error::DegenerateClustering(format!(
            "all {} {domain} samples were labelled noise",
            labeling.assignment.len()
        )));
    }
    PseudoDataset::from_triples(domain, triples)
}

/// Injects label noise: merges `merge_pairs` disjoint random class pairs, then
/// splits `split_classes` random classes (of at least two samples) into two
/// random halves under a fresh label.
pub fn corrupt_clusters<R: Rng + ?Sized>(
    dataset: &PseudoDataset,
    merge_pairs: usize,
    split_classes: usize,
    rng: &mut R,
) -> Result<PseudoDataset> {
    if merge_pairs == 0 && split_classes == 0 {
        return Ok(dataset.clone());
    }
    if 2 * merge_pairs > dataset.n_classes {
        return Err(Error::InvalidArgument(format!(
            "cannot merge {merge_pairs} pairs out of {} classes",
            dataset.n_classes
        )));
    }
    let mut labels: Vec<usize> = dataset.samples.iter().map(|s| s.label).collect();

    if merge_pairs > 0 {
        let picked = sample(rng, dataset.n_classes, 2 * merge_pairs).into_vec();
        let mut target = (0..dataset.n_classes).collect::<Vec<_>>();
        for pair in picked.chunks(2) {
            target[pair[1]] = pair[0];
        }
        labels.iter_mut().for_each(|l| *l = target[*l]);
    }

    if split_classes > 0 {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (pos, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(pos);
        }
        let splittable: Vec<usize> = groups
            .iter()
            .filter(|(_, m)| m.len() >= 2)
            .map(|(&l, _)| l)
            .collect();
        if split_classes > splittable.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot split {split_classes} classes, only {} have two or more samples",
                splittable.len()
            )));
        }
        let mut next_label = dataset.n_classes;
        for pick in sample(rng, splittable.len(), split_classes) {
            let mut members = groups[&splittable[pick]].clone();
            for i in (1..members.len()).rev() {
                members.swap(i, rng.random_range(0..=i));
            }
            let keep = members.len().div_ceil(2);
            for &pos in &members[keep..] {
                labels[pos] = next_label;
            }
            next_label += 1;
        }
    }

    PseudoDataset::from_triples(
        dataset.domain,
        dataset
            .samples
            .iter()
            .zip(labels)
            .map(|(s, l)| (s.index, l, s.true_id))
            .collect(),
    )
}
