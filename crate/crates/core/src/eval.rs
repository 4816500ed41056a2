//! Retrieval metrics (mAP, CMC), cluster purity and the inter-domain distance.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, mean_vector, FeatureVector};

#[derive(Debug, Clone)]
pub struct RetrievalItem {
    pub feature: FeatureVector,
    pub identity: usize,
    /// Record id; a gallery item with the query's record id is excluded.
    pub record: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RetrievalProtocol {
    pub queries: Vec<RetrievalItem>,
    pub gallery: Vec<RetrievalItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub map: f64,
    /// `cmc[k - 1]` is the fraction of evaluated queries with a hit in the top `k`.
    pub cmc: Vec<f64>,
    pub evaluated: usize,
    pub skipped: usize,
}

impl RetrievalMetrics {
    /// CMC at rank `k` (1-based), saturating at the deepest computed rank.
    pub fn rank(&self, k: usize) -> f64 {
        match self.cmc.len() {
            0 => 0.0,
            n => self.cmc[k.clamp(1, n) - 1],
        }
    }
}

/// Ranks the gallery for every query by descending cosine similarity (ties by
/// gallery index). AP is the mean precision at each relevant hit. Queries
/// whose identity is absent from the gallery are skipped with a warning.
pub fn map_cmc(protocol: &RetrievalProtocol) -> Result<RetrievalMetrics> {
    if protocol.queries.is_empty() || protocol.gallery.is_empty() {
        return Err(Error::InvalidArgument("query and gallery sets must be nonempty".into()));
    }
    let depth = protocol.gallery.len();
    let mut hits_at = vec![0usize; depth];
    let mut ap_sum = 0.0;
    let mut evaluated = 0;
    let mut skipped = 0;
    for q in &protocol.queries {
        let mut ranked: Vec<(usize, f64)> = protocol
            .gallery
            .iter()
            .enumerate()
            .filter(|(_, g)| g.record != q.record)
            .map(|(i, g)| (i, dot(q.feature.as_slice(), g.feature.as_slice())))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut found = 0usize;
        let mut precision_sum = 0.0;
        let mut first_hit = None;
        for (pos, (gi, _)) in ranked.iter().enumerate() {
            if protocol.gallery[*gi].identity == q.identity {
                found += 1;
                precision_sum += found as f64 / (pos + 1) as f64;
                first_hit.get_or_insert(pos);
            }
        }
        let Some(first) = first_hit else {
            log::warn!("query identity {} has no gallery match; skipped", q.identity);
            skipped += 1;
            continue;
        };
        evaluated += 1;
        ap_sum += precision_sum / found as f64;
        hits_at[first] += 1;
    }
    if evaluated == 0 {
        return Ok(RetrievalMetrics { map: 0.0, cmc: vec![0.0; depth], evaluated, skipped });
    }
    let mut cumulative = 0usize;
    let cmc = hits_at
        .iter()
        .map(|h| {
            cumulative += h;
            cumulative as f64 / evaluated as f64
        })
        .collect();
    Ok(RetrievalMetrics {
        map: ap_sum / evaluated as f64,
        cmc,
        evaluated,
        skipped,
    })
}

/// `1 - cos(mean(source), mean(target))`, in `[0, 2]`.
pub fn domain_distance(source: &[FeatureVector], target: &[FeatureVector]) -> Result<f64> {
    let s = mean_vector(source)?;
    let t = mean_vector(target)?;
    Ok(1.0 - dot(s.as_slice(), t.as_slice()))
}

/// Fraction of samples whose cluster's majority identity is their own, from
/// `(cluster, true identity)` pairs.
pub fn cluster_purity<I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (usize, usize)>,
{
    let mut counts: BTreeMap<usize, HashMap<usize, usize>> = BTreeMap::new();
    let mut total = 0usize;
    for (cluster, identity) in pairs {
        *counts.entry(cluster).or_default().entry(identity).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::InvalidArgument("purity of an empty clustering".into()));
    }
    let majority: usize = counts.values().map(|ids| ids.values().copied().max().unwrap_or(0)).sum();
    Ok(majority as f64 / total as f64)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per identity, the members with the lowest `hash(seed, index)` become
/// queries (a quarter, rounded down, but at least one when the identity has
/// two or more members); the rest form the gallery. Returns index lists.
pub fn split_query_gallery(identities: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_id: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &id) in identities.iter().enumerate() {
        by_id.entry(id).or_default().push(i);
    }
    let mut queries = Vec::new();
    let mut gallery = Vec::new();
    for members in by_id.values_mut() {
        members.sort_by_key(|&i| (splitmix64(seed ^ splitmix64(i as u64)), i));
        let n_query = if members.len() >= 2 { (members.len() / 4).max(1) } else { 0 };
        queries.extend_from_slice(&members[..n_query]);
        gallery.extend_from_slice(&members[n_query..]);
    }
    queries.sort_unstable();
    gallery.sort_unstable();
    (queries, gallery)
}
