//! Contrastive objectives over the centroid bank and the interpolated hard
//! negatives that feed them.
//!
//! Every loss is an InfoNCE term `-log p⁺` where the positive `c⁺` is a member
//! of its own denominator. Gradients are taken with respect to the query only:
//! centroids and synthetic negatives are constants within an iteration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{
    CentroidBank, NegativeScope, NegativeStrategy, Participant, PositiveStrategy,
    SelectionStrategy,
};
use crate::numerics::{dot, l2_normalize, FeatureVector};
use crate::Domain;

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub grad_wrt_query: Vec<f64>,
    pub positive: Option<Participant>,
    /// Every negative in the denominator (the positive is listed separately).
    pub negatives: Vec<Participant>,
    /// Set when the denominator had no negatives and the loss is vacuous.
    pub degenerate: bool,
}

impl LossReport {
    /// Number of terms in the softmax denominator, positive included.
    pub fn denominator_terms(&self) -> usize {
        1 + self.negatives.len()
    }
}

/// `-log softmax` of the positive among `[positive, negatives...]` at
/// temperature `tau`, with its gradient in `q`.
pub fn info_nce(
    q: &FeatureVector,
    positive: &FeatureVector,
    negatives: &[FeatureVector],
    tau: f64,
) -> Result<LossReport> {
    let negs: Vec<&[f64]> = negatives.iter().map(FeatureVector::as_slice).collect();
    let (value, grad) = info_nce_raw(q.as_slice(), positive.as_slice(), &negs, tau)?;
    Ok(LossReport {
        value,
        grad_wrt_query: grad,
        positive: None,
        negatives: Vec::new(),
        degenerate: negatives.is_empty(),
    })
}

fn info_nce_raw(q: &[f64], positive: &[f64], negatives: &[&[f64]], tau: f64) -> Result<(f64, Vec<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let dim = q.len();
    if positive.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: positive.len() });
    }
    if let Some(bad) = negatives.iter().find(|n| n.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
    }
    let inv_tau = 1.0 / tau;
    let logits: Vec<f64> = std::iter::once(positive)
        .chain(negatives.iter().copied())
        .map(|v| dot(q, v) * inv_tau)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let value = (max + z.ln() - logits[0]).max(0.0);

    let mut grad = vec![0.0; dim];
    for (w, v) in weights.iter().zip(std::iter::once(positive).chain(negatives.iter().copied())) {
        let p = w / z;
        for (g, x) in grad.iter_mut().zip(v) {
            *g += p * x;
        }
    }
    for (g, c) in grad.iter_mut().zip(positive) {
        *g = (*g - c) * inv_tau;
    }
    Ok((value, grad))
}

/// Whether negatives come from both domains or only the query's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossScope {
    Ucl,
    #[default]
    Dscl,
}

impl LossScope {
    pub fn negative_scope(self) -> NegativeScope {
        match self {
            LossScope::Ucl => NegativeScope::BothDomains,
            LossScope::Dscl => NegativeScope::SameDomain,
        }
    }
}

/// Shared body of the unified and domain-specific losses. `synthetics` are
/// appended to the denominator after the centroid negatives.
pub fn contrastive_loss(
    q: &FeatureVector,
    bank: &CentroidBank,
    domain: Domain,
    class: usize,
    scope: NegativeScope,
    selection: SelectionStrategy,
    synthetics: &[Synthetic],
    tau: f64,
) -> Result<LossReport> {
    let (slot, positive) = bank.select_positive(q, domain, class, selection.positive)?;
    let negatives = bank.select_negatives(domain, class, selection.negative, scope)?;
    let mut vectors: Vec<&[f64]> = negatives.iter().map(|n| n.vector.as_slice()).collect();
    vectors.extend(synthetics.iter().map(|s| s.vector.as_slice()));
    let mut ids: Vec<Participant> = negatives.iter().map(|n| n.id).collect();
    ids.extend((0..synthetics.len()).map(Participant::Synthetic));
    let (value, grad) = info_nce_raw(q.as_slice(), positive.as_slice(), &vectors, tau)?;
    Ok(LossReport {
        value,
        grad_wrt_query: grad,
        positive: Some(Participant::Centroid { domain, class, slot }),
        degenerate: ids.is_empty(),
        negatives: ids,
    })
}

/// Unified loss: negatives drawn from the classes of both domains.
pub fn ucl_loss(
    q: &FeatureVector,
    bank: &CentroidBank,
    domain: Domain,
    class: usize,
    selection: SelectionStrategy,
    tau: f64,
) -> Result<LossReport> {
    contrastive_loss(q, bank, domain, class, NegativeScope::BothDomains, selection, &[], tau)
}

/// Domain-specific loss: negatives drawn from the query's own domain only.
/// A domain with a single class yields a zero, flagged report.
pub fn dscl_loss(
    q: &FeatureVector,
    bank: &CentroidBank,
    domain: Domain,
    class: usize,
    selection: SelectionStrategy,
    tau: f64,
) -> Result<LossReport> {
    contrastive_loss(q, bank, domain, class, NegativeScope::SameDomain, selection, &[], tau)
}

/// Domain-specific loss for a target query with synthetic negatives appended.
pub fn dscl_star_loss(
    q: &FeatureVector,
    bank: &CentroidBank,
    class: usize,
    synthetics: &[Synthetic],
    selection: SelectionStrategy,
    tau: f64,
) -> Result<LossReport> {
    contrastive_loss(
        q,
        bank,
        Domain::Target,
        class,
        NegativeScope::SameDomain,
        selection,
        synthetics,
        tau,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthesisMethod {
    None,
    #[default]
    Soni,
    Qnni,
    Rnni,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub method: SynthesisMethod,
    pub alpha: f64,
    pub beta_low: f64,
    pub beta_high: f64,
    /// Draw one β per iteration instead of one per synthetic.
    pub shared_beta: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            method: SynthesisMethod::Soni,
            alpha: 0.03,
            beta_low: 0.2,
            beta_high: 0.5,
            shared_beta: false,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0 <= self.beta_low && self.beta_low < self.beta_high && self.beta_high <= 1.0) {
            return Err(Error::Config(format!(
                "beta range must satisfy 0 <= low < high <= 1, got [{}, {}]",
                self.beta_low, self.beta_high
            )));
        }
        Ok(())
    }
}

/// Number of hard negatives to gather: `max(1, ⌊α n_t⌋)`, except exactly 0
/// when `α = 0`. Callers clamp to the candidate pool.
pub fn gamma(alpha: f64, n_target: usize) -> usize {
    if alpha <= 0.0 {
        return 0;
    }
    // guard against 0.03 * 100 = 2.9999... style rounding
    ((alpha * n_target as f64 + 1e-9).floor() as usize).max(1)
}

/// An interpolated negative `normalize(β a + (1 - β) b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub vector: FeatureVector,
    pub beta: f64,
    /// `(a, b)`; `None` stands for the query itself (QNNI).
    pub parents: (Option<Participant>, Participant),
}

/// Source of β draws: fresh per synthetic, or one shared value.
#[derive(Debug, Clone, Copy)]
pub enum BetaDraw {
    Fresh { low: f64, high: f64 },
    Shared(f64),
}

impl BetaDraw {
    pub fn from_config<R: Rng + ?Sized>(cfg: &SynthesisConfig, rng: &mut R) -> Self {
        if cfg.shared_beta {
            BetaDraw::Shared(rng.random_range(cfg.beta_low..=cfg.beta_high))
        } else {
            BetaDraw::Fresh { low: cfg.beta_low, high: cfg.beta_high }
        }
    }

    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            BetaDraw::Fresh { low, high } => rng.random_range(low..=high),
            BetaDraw::Shared(b) => b,
        }
    }
}

struct Candidate<'a> {
    id: Participant,
    class: usize,
    vector: &'a [f64],
}

/// Every target centroid outside `positive_class`, in row order.
fn negative_pool(bank: &CentroidBank, positive_class: usize) -> Result<Vec<Candidate<'_>>> {
    let mut pool = Vec::new();
    for class in (0..bank.n_classes(Domain::Target)).filter(|&c| c != positive_class) {
        for slot in 0..bank.k() {
            pool.push(Candidate {
                id: Participant::Centroid { domain: Domain::Target, class, slot },
                class,
                vector: bank.centroid(Domain::Target, class, slot)?,
            });
        }
    }
    Ok(pool)
}

/// The `count` pool members most similar to `anchor`, ties by pool order.
fn nearest<'a, 'b>(pool: &'b [Candidate<'a>], anchor: &[f64], count: usize) -> Vec<&'b Candidate<'a>> {
    let mut scored: Vec<(usize, f64)> = pool
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dot(anchor, c.vector)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().take(count).map(|(i, _)| &pool[i]).collect()
}

fn interpolate(a: &[f64], b: &[f64], beta: f64) -> Option<FeatureVector> {
    let mixed: Vec<f64> = a.iter().zip(b).map(|(x, y)| beta * x + (1.0 - beta) * y).collect();
    l2_normalize(&mixed).ok()
}

fn check_target_class(bank: &CentroidBank, class: usize) -> Result<()> {
    if class >= bank.n_classes(Domain::Target) {
        return Err(Error::InvalidArgument(format!("target class {class} does not exist")));
    }
    Ok(())
}

/// Second-order nearest interpolation. The `γ` target centroids nearest to
/// `c_plus` (outside the positive class) form the hard set `H`; each member
/// of `H` is mixed with its nearest member of `H` carrying a different pseudo
/// label. Members without such a partner are skipped.
pub fn soni_synthesize<R: Rng + ?Sized>(
    c_plus: &FeatureVector,
    bank: &CentroidBank,
    positive_class: usize,
    alpha: f64,
    beta: BetaDraw,
    rng: &mut R,
) -> Result<Vec<Synthetic>> {
    check_target_class(bank, positive_class)?;
    if bank.n_classes(Domain::Target) < 2 {
        return Ok(Vec::new());
    }
    let pool = negative_pool(bank, positive_class)?;
    let count = gamma(alpha, bank.n_classes(Domain::Target)).min(pool.len());
    let hard = nearest(&pool, c_plus.as_slice(), count);

    let mut out = Vec::new();
    for h in &hard {
        let partner = hard
            .iter()
            .filter(|o| o.class != h.class)
            .map(|o| (o, dot(h.vector, o.vector)))
            .fold(None::<(&&Candidate, f64)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        let Some((partner, _)) = partner else { continue };
        let b = beta.draw(rng);
        if let Some(vector) = interpolate(h.vector, partner.vector, b) {
            out.push(Synthetic { vector, beta: b, parents: (Some(h.id), partner.id) });
        }
    }
    Ok(out)
}

/// Query–nearest-negative interpolation: `γ` mixes of the query with its
/// single nearest negative centroid, each with its own β.
pub fn qnni_synthesize<R: Rng + ?Sized>(
    q: &FeatureVector,
    bank: &CentroidBank,
    positive_class: usize,
    alpha: f64,
    beta: BetaDraw,
    rng: &mut R,
) -> Result<Vec<Synthetic>> {
    check_target_class(bank, positive_class)?;
    if bank.n_classes(Domain::Target) < 2 {
        return Ok(Vec::new());
    }
    let pool = negative_pool(bank, positive_class)?;
    let count = gamma(alpha, bank.n_classes(Domain::Target)).min(pool.len());
    let Some(near) = nearest(&pool, q.as_slice(), 1).into_iter().next() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let b = beta.draw(rng);
        if let Some(vector) = interpolate(q.as_slice(), near.vector, b) {
            out.push(Synthetic { vector, beta: b, parents: (None, near.id) });
        }
    }
    Ok(out)
}

/// Random-pair interpolation: `γ` mixes of two distinct members of the hard
/// set `H` (gathered around `c_plus` as in SONI) chosen uniformly.
pub fn rnni_synthesize<R: Rng + ?Sized>(
    c_plus: &FeatureVector,
    bank: &CentroidBank,
    positive_class: usize,
    alpha: f64,
    beta: BetaDraw,
    rng: &mut R,
) -> Result<Vec<Synthetic>> {
    check_target_class(bank, positive_class)?;
    if bank.n_classes(Domain::Target) < 2 {
        return Ok(Vec::new());
    }
    let pool = negative_pool(bank, positive_class)?;
    let count = gamma(alpha, bank.n_classes(Domain::Target)).min(pool.len());
    let hard = nearest(&pool, c_plus.as_slice(), count);
    if hard.len() < 2 {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.random_range(0..hard.len());
        let mut b = rng.random_range(0..hard.len() - 1);
        if b >= a {
            b += 1;
        }
        let beta = beta.draw(rng);
        if let Some(vector) = interpolate(hard[a].vector, hard[b].vector, beta) {
            out.push(Synthetic { vector, beta, parents: (Some(hard[a].id), hard[b].id) });
        }
    }
    Ok(out)
}

/// Dispatches on the configured method. `c_plus` is the query's selected positive.
pub fn synthesize<R: Rng + ?Sized>(
    cfg: &SynthesisConfig,
    q: &FeatureVector,
    c_plus: &FeatureVector,
    bank: &CentroidBank,
    positive_class: usize,
    beta: BetaDraw,
    rng: &mut R,
) -> Result<Vec<Synthetic>> {
    match cfg.method {
        SynthesisMethod::None => Ok(Vec::new()),
        SynthesisMethod::Soni => soni_synthesize(c_plus, bank, positive_class, cfg.alpha, beta, rng),
        SynthesisMethod::Qnni => qnni_synthesize(q, bank, positive_class, cfg.alpha, beta, rng),
        SynthesisMethod::Rnni => rnni_synthesize(c_plus, bank, positive_class, cfg.alpha, beta, rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub temperature: f64,
    pub scope: LossScope,
    pub positive: PositiveStrategy,
    pub negative: NegativeStrategy,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: 0.05,
            scope: LossScope::Dscl,
            positive: PositiveStrategy::Moderate,
            negative: NegativeStrategy::Mean,
        }
    }
}

impl LossConfig {
    pub fn selection(&self) -> SelectionStrategy {
        SelectionStrategy { positive: self.positive, negative: self.negative }
    }
}

/// A query in the batch: its encoded feature and (pseudo) class.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub feature: &'a FeatureVector,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub source: Vec<LossReport>,
    pub target: Vec<LossReport>,
    /// `d value / d q` for each source query (already scaled by `1/n`).
    pub source_grads: Vec<Vec<f64>>,
    pub target_grads: Vec<Vec<f64>>,
    pub synthetic_count: usize,
}

/// Mean source loss plus mean target loss. Target queries get synthetic
/// negatives from the configured interpolation method.
pub fn total_loss<R: Rng + ?Sized>(
    source: &[Query<'_>],
    target: &[Query<'_>],
    bank: &CentroidBank,
    loss: &LossConfig,
    synthesis: &SynthesisConfig,
    rng: &mut R,
) -> Result<TotalLoss> {
    let scope = loss.scope.negative_scope();
    let selection = loss.selection();
    let tau = loss.temperature;

    let mut source_reports = Vec::with_capacity(source.len());
    for q in source {
        source_reports.push(contrastive_loss(
            q.feature, bank, Domain::Source, q.class, scope, selection, &[], tau,
        )?);
    }

    let beta = if synthesis.method == SynthesisMethod::None {
        BetaDraw::Fresh { low: synthesis.beta_low, high: synthesis.beta_high }
    } else {
        BetaDraw::from_config(synthesis, rng)
    };
    let mut target_reports = Vec::with_capacity(target.len());
    let mut synthetic_count = 0;
    for q in target {
        let (_, c_plus) = bank.select_positive(q.feature, Domain::Target, q.class, selection.positive)?;
        let synths = synthesize(synthesis, q.feature, &c_plus, bank, q.class, beta, rng)?;
        synthetic_count += synths.len();
        target_reports.push(contrastive_loss(
            q.feature, bank, Domain::Target, q.class, scope, selection, &synths, tau,
        )?);
    }

    let side = |reports: &[LossReport], name: &str| -> (f64, Vec<Vec<f64>>) {
        if reports.is_empty() {
            log::warn!("no {name} queries in batch; that term contributes 0");
            return (0.0, Vec::new());
        }
        let inv = 1.0 / reports.len() as f64;
        let value = reports.iter().map(|r| r.value).sum::<f64>() * inv;
        let grads = reports
            .iter()
            .map(|r| r.grad_wrt_query.iter().map(|g| g * inv).collect())
            .collect();
        (value, grads)
    };
    let (sv, source_grads) = side(&source_reports, "source");
    let (tv, target_grads) = side(&target_reports, "target");
    Ok(TotalLoss {
        value: sv + tv,
        source: source_reports,
        target: target_reports,
        source_grads,
        target_grads,
        synthetic_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(rng: &mut impl Rng, dim: usize) -> FeatureVector {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        l2_normalize(&v).unwrap()
    }

    fn random_bank(rng: &mut impl Rng, n_s: usize, n_t: usize, k: usize, dim: usize) -> CentroidBank {
        let rows: Vec<f64> = (0..k * (n_s + n_t)).flat_map(|_| unit(rng, dim).into_inner()).collect();
        CentroidBank::from_rows(k, dim, n_s, n_t, rows).unwrap()
    }

    /// Independent evaluation: p⁺ = e^{s⁺/τ} / Σ e^{s/τ} directly.
    fn naive_value(q: &FeatureVector, pos: &FeatureVector, negs: &[FeatureVector], tau: f64) -> f64 {
        let e = |v: &FeatureVector| (dot(q.as_slice(), v.as_slice()) / tau).exp();
        let denom: f64 = e(pos) + negs.iter().map(e).sum::<f64>();
        -(e(pos) / denom).ln()
    }

    #[test]
    fn uniform_softmax() {
        let q = l2_normalize(&[1.0, 0.0, 0.0]).unwrap();
        let p = l2_normalize(&[0.0, 1.0, 0.0]).unwrap();
        let negs = vec![p.clone(); 7];
        let r = info_nce(&q, &p, &negs, 0.05).unwrap();
        assert!((r.value - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn no_negatives_is_certain() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = unit(&mut rng, 4);
        let p = unit(&mut rng, 4);
        let r = info_nce(&q, &p, &[], 0.05).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad_wrt_query.iter().all(|&g| g == 0.0));
        assert!(r.degenerate);
        assert!(info_nce(&q, &p, &[], 0.0).is_err());
        assert!(info_nce(&q, &p, &[], -1.0).is_err());
    }

    #[test]
    fn value_matches_naive_and_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let q = unit(&mut rng, 8);
            let p = unit(&mut rng, 8);
            let negs: Vec<_> = (0..5).map(|_| unit(&mut rng, 8)).collect();
            let r = info_nce(&q, &p, &negs, 0.05).unwrap();
            assert!((r.value - naive_value(&q, &p, &negs, 0.05)).abs() < 1e-10);
            let tiny = info_nce(&q, &p, &negs, 1e-3).unwrap();
            assert!(tiny.value.is_finite() && tiny.grad_wrt_query.iter().all(|g| g.is_finite()));
        }
    }

    #[test]
    fn term_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bank = random_bank(&mut rng, 3, 5, 4, 6);
        let q = unit(&mut rng, 6);
        let sel = SelectionStrategy::default();
        assert_eq!(ucl_loss(&q, &bank, Domain::Target, 0, sel, 0.05).unwrap().denominator_terms(), 8);
        assert_eq!(dscl_loss(&q, &bank, Domain::Source, 0, sel, 0.05).unwrap().denominator_terms(), 3);
        assert_eq!(dscl_loss(&q, &bank, Domain::Target, 0, sel, 0.05).unwrap().denominator_terms(), 5);

        let tiny = random_bank(&mut rng, 1, 1, 4, 6);
        let u = ucl_loss(&q, &tiny, Domain::Source, 0, sel, 0.05).unwrap();
        assert_eq!(u.denominator_terms(), 2);
        let d = dscl_loss(&q, &tiny, Domain::Source, 0, sel, 0.05).unwrap();
        assert!(d.degenerate && d.value == 0.0);
        assert!(d.grad_wrt_query.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dscl_never_exceeds_ucl() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let bank = random_bank(&mut rng, 3, 4, 4, 6);
            let q = unit(&mut rng, 6);
            let sel = SelectionStrategy::default();
            for (d, c) in [(Domain::Source, 1), (Domain::Target, 2)] {
                let u = ucl_loss(&q, &bank, d, c, sel, 0.05).unwrap();
                let s = dscl_loss(&q, &bank, d, c, sel, 0.05).unwrap();
                assert!(s.value <= u.value);
            }
        }
    }

    #[test]
    fn tied_positive_and_negative() {
        // positive and its single competitor coincide: p⁺ = 1/2
        let bank = CentroidBank::from_rows(1, 2, 1, 1, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let q = l2_normalize(&[0.6, 0.8]).unwrap();
        let r = ucl_loss(&q, &bank, Domain::Target, 0, SelectionStrategy::default(), 0.05).unwrap();
        assert!((r.value - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gamma_rounding() {
        assert_eq!(gamma(0.03, 100), 3);
        assert_eq!(gamma(0.03, 10), 1);
        assert_eq!(gamma(0.0, 100), 0);
        assert_eq!(gamma(0.07, 100), 7);
    }

    #[test]
    fn midpoint_interpolation() {
        let s = interpolate(&[1.0, 0.0], &[0.0, 1.0], 0.5).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.as_slice()[0] - h).abs() < 1e-15 && (s.as_slice()[1] - h).abs() < 1e-15);
    }

    #[test]
    fn soni_skips_single_label_hard_set() {
        // target class 1 sits right next to c⁺, class 2 far away; with γ = 2
        // and K = 2 both hard members come from class 1.
        let rows = vec![
            1.0, 0.0, 0.0, // source class 0
            1.0, 0.0, 0.0,
            1.0, 0.0, 0.0, // target class 0 (positive)
            1.0, 0.0, 0.0,
            0.9, 0.43588989435406733, 0.0, // target class 1
            0.9, 0.43588989435406733, 0.0,
            -1.0, 0.0, 0.0, // target class 2
            -1.0, 0.0, 0.0,
        ];
        let bank = CentroidBank::from_rows(2, 3, 1, 3, rows).unwrap();
        let c_plus = l2_normalize(&[1.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let beta = BetaDraw::Fresh { low: 0.2, high: 0.5 };
        let out = soni_synthesize(&c_plus, &bank, 0, 2.0 / 3.0, beta, &mut rng).unwrap();
        assert!(out.is_empty());
        // widen γ to 3 and class 2 enters H, so anchors pair across labels
        let out = soni_synthesize(&c_plus, &bank, 0, 1.0, beta, &mut rng).unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn soni_needs_two_target_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bank = random_bank(&mut rng, 2, 1, 4, 5);
        let c = unit(&mut rng, 5);
        let beta = BetaDraw::Fresh { low: 0.2, high: 0.5 };
        assert!(soni_synthesize(&c, &bank, 0, 0.5, beta, &mut rng).unwrap().is_empty());
        assert!(rnni_synthesize(&c, &bank, 0, 0.5, beta, &mut rng).unwrap().is_empty());
        assert!(qnni_synthesize(&c, &bank, 0, 0.5, beta, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn qnni_arithmetic() {
        let rows = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let bank = CentroidBank::from_rows(1, 2, 1, 2, rows).unwrap();
        let q = l2_normalize(&[1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = qnni_synthesize(&q, &bank, 0, 0.5, BetaDraw::Shared(0.2), &mut rng).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].vector, l2_normalize(&[0.2, 0.8]).unwrap());
        assert_eq!(out[0].parents.0, None);
    }

    #[test]
    fn rnni_degenerate_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bank = random_bank(&mut rng, 1, 2, 1, 4);
        let c = unit(&mut rng, 4);
        let beta = BetaDraw::Fresh { low: 0.2, high: 0.5 };
        // pool has one centroid, so |H| = 1
        assert!(rnni_synthesize(&c, &bank, 0, 1.0, beta, &mut rng).unwrap().is_empty());
        let bank = random_bank(&mut rng, 1, 20, 4, 4);
        for alpha in [0.05, 0.1, 0.3] {
            let out = rnni_synthesize(&c, &bank, 3, alpha, beta, &mut rng).unwrap();
            assert!(out.len() <= gamma(alpha, 20));
            for s in &out {
                assert_ne!(s.parents.0, Some(s.parents.1));
            }
        }
    }

    #[test]
    fn star_loss_with_no_synthetics_equals_dscl() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bank = random_bank(&mut rng, 3, 5, 4, 6);
        let q = unit(&mut rng, 6);
        let sel = SelectionStrategy::default();
        let a = dscl_star_loss(&q, &bank, 2, &[], sel, 0.05).unwrap();
        let b = dscl_loss(&q, &bank, Domain::Target, 2, sel, 0.05).unwrap();
        assert_eq!(a, b);
        let synth = Synthetic {
            vector: unit(&mut rng, 6),
            beta: 0.3,
            parents: (None, Participant::Synthetic(0)),
        };
        let c = dscl_star_loss(&q, &bank, 2, &[synth.clone(), synth.clone(), synth], sel, 0.05).unwrap();
        assert_eq!(c.denominator_terms(), 8);
        assert!(c.value > b.value);
    }

    #[test]
    fn total_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bank = random_bank(&mut rng, 3, 4, 4, 6);
        let cfg = LossConfig::default();
        let syn = SynthesisConfig { method: SynthesisMethod::None, ..Default::default() };
        let qs = unit(&mut rng, 6);
        let qt = unit(&mut rng, 6);
        let one = total_loss(
            &[Query { feature: &qs, class: 1 }],
            &[Query { feature: &qt, class: 2 }],
            &bank, &cfg, &syn, &mut rng,
        )
        .unwrap();
        let ls = dscl_loss(&qs, &bank, Domain::Source, 1, cfg.selection(), 0.05).unwrap();
        let lt = dscl_loss(&qt, &bank, Domain::Target, 2, cfg.selection(), 0.05).unwrap();
        assert!((one.value - (ls.value + lt.value)).abs() < 1e-12);

        let doubled = total_loss(
            &[Query { feature: &qs, class: 1 }, Query { feature: &qs, class: 1 }],
            &[Query { feature: &qt, class: 2 }, Query { feature: &qt, class: 2 }],
            &bank, &cfg, &syn, &mut rng,
        )
        .unwrap();
        assert!((doubled.value - one.value).abs() < 1e-12);

        let empty = total_loss(&[], &[Query { feature: &qt, class: 2 }], &bank, &cfg, &syn, &mut rng).unwrap();
        assert!((empty.value - lt.value).abs() < 1e-12);
    }

    #[test]
    fn total_loss_near_lower_bound_for_separated_classes() {
        // orthogonal class centroids, every query equal to its centroid
        let dim = 4;
        let mut rows = Vec::new();
        for c in 0..dim {
            let mut e = vec![0.0; dim];
            e[c] = 1.0;
            for _ in 0..2 {
                rows.extend_from_slice(&e);
            }
        }
        let bank = CentroidBank::from_rows(2, dim, 2, 2, rows).unwrap();
        let e = |i: usize| {
            let mut v = vec![0.0; dim];
            v[i] = 1.0;
            l2_normalize(&v).unwrap()
        };
        let (q0, q1, q2, q3) = (e(0), e(1), e(2), e(3));
        let cfg = LossConfig::default();
        let syn = SynthesisConfig { method: SynthesisMethod::None, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = total_loss(
            &[Query { feature: &q0, class: 0 }, Query { feature: &q1, class: 1 }],
            &[Query { feature: &q2, class: 0 }, Query { feature: &q3, class: 1 }],
            &bank, &cfg, &syn, &mut rng,
        )
        .unwrap();
        // each term: -log(e^{20} / (e^{20} + e^{0}))
        let per = (1.0 + (-20.0f64).exp()).ln();
        assert!((t.value - 2.0 * per).abs() < 1e-12);
        assert!(t.value < 1e-8);
    }
}
