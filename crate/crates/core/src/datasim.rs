//! Synthetic two-domain identity data, feature-space augmentation and P×K
//! batch sampling.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clustering::PseudoDataset;
use crate::error::{Error, Result};
use crate::Domain;

/// Generative parameters of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainSpec {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    /// Extra held-out samples per identity used only for evaluation.
    pub eval_samples_per_identity: usize,
    /// Standard deviation of identity centers around the origin.
    pub center_spread: f64,
    /// Standard deviation of samples around their identity center.
    pub identity_noise: f64,
    /// Norm of the additive domain offset.
    pub shift_offset: f64,
    /// Strength `s` of the linear distortion `I + s G`, `G_ij ~ N(0, 1/D)`.
    pub distortion: f64,
    /// The last `nuisance_dims` input coordinates carry no identity signal:
    /// centers are zero there and samples get noise of std `nuisance_noise`.
    pub nuisance_dims: usize,
    pub nuisance_noise: f64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec {
            n_identities: 10,
            samples_per_identity: 30,
            eval_samples_per_identity: 0,
            center_spread: 1.0,
            identity_noise: 0.3,
            shift_offset: 0.0,
            distortion: 0.0,
            nuisance_dims: 0,
            nuisance_noise: 0.0,
        }
    }
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities == 0 || self.samples_per_identity == 0 {
            return Err(Error::Config("identity and sample counts must be at least 1".into()));
        }
        for (name, v) in [
            ("center_spread", self.center_spread),
            ("identity_noise", self.identity_noise),
            ("shift_offset", self.shift_offset),
            ("distortion", self.distortion),
            ("nuisance_noise", self.nuisance_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub x: Vec<f64>,
    pub identity: usize,
}

/// Raw records of one domain. `train` is what the training loop sees (with
/// identities hidden for the target domain); `eval` is held out.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDomain {
    pub domain: Domain,
    pub train: Vec<RawSample>,
    pub eval: Vec<RawSample>,
}

impl RawDomain {
    pub fn input_dim(&self) -> Option<usize> {
        self.train.first().or(self.eval.first()).map(|s| s.x.len())
    }

    pub fn identities(&self) -> Vec<usize> {
        self.train.iter().map(|s| s.identity).collect()
    }
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize, std: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

fn draw_domain<R: Rng + ?Sized>(domain: Domain, spec: &DomainSpec, dim: usize, rng: &mut R) -> RawDomain {
    let signal = dim - spec.nuisance_dims;
    let centers: Vec<Vec<f64>> = (0..spec.n_identities)
        .map(|_| {
            let mut c = gaussian_vec(rng, signal, spec.center_spread);
            c.resize(dim, 0.0);
            c
        })
        .collect();
    let distortion: Vec<f64> = gaussian_vec(rng, dim * dim, (1.0 / dim as f64).sqrt())
        .into_iter()
        .enumerate()
        .map(|(i, g)| spec.distortion * g + if i / dim == i % dim { 1.0 } else { 0.0 })
        .collect();
    let offset = {
        let dir = gaussian_vec(rng, dim, 1.0);
        let n = crate::numerics::norm(&dir).max(f64::MIN_POSITIVE);
        dir.into_iter().map(|d| spec.shift_offset * d / n).collect::<Vec<_>>()
    };
    let draw = |count: usize, rng: &mut R| -> Vec<RawSample> {
        let mut out = Vec::with_capacity(count * spec.n_identities);
        for (identity, center) in centers.iter().enumerate() {
            for _ in 0..count {
                let mut noise = gaussian_vec(rng, signal, spec.identity_noise);
                noise.extend(gaussian_vec(rng, spec.nuisance_dims, spec.nuisance_noise));
                let noisy: Vec<f64> = center.iter().zip(noise).map(|(c, n)| c + n).collect();
                let x = distortion
                    .chunks(dim)
                    .zip(&offset)
                    .map(|(row, o)| crate::numerics::dot(row, &noisy) + o)
                    .collect();
                out.push(RawSample { x, identity });
            }
        }
        out
    };
    let train = draw(spec.samples_per_identity, rng);
    let eval = draw(spec.eval_samples_per_identity, rng);
    RawDomain { domain, train, eval }
}

/// Draws both domains from one rng stream. Identities are independent per
/// domain; the target's distortion and offset create the domain gap.
pub fn generate_domains<R: Rng + ?Sized>(
    source: &DomainSpec,
    target: &DomainSpec,
    input_dim: usize,
    rng: &mut R,
) -> Result<(RawDomain, RawDomain)> {
    source.validate()?;
    target.validate()?;
    if input_dim == 0 {
        return Err(Error::Config("input_dim must be at least 1".into()));
    }
    for spec in [source, target] {
        if spec.nuisance_dims > input_dim {
            return Err(Error::Config(format!(
                "nuisance_dims = {} exceeds input_dim = {input_dim}",
                spec.nuisance_dims
            )));
        }
    }
    let s = draw_domain(Domain::Source, source, input_dim, rng);
    let t = draw_domain(Domain::Target, target, input_dim, rng);
    Ok((s, t))
}

/// Feature-space jitter `x + N(0, σ²)`.
pub fn augment<R: Rng + ?Sized>(x: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return x.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated as finite and non-negative");
    x.iter().map(|v| v + normal.sample(rng)).collect()
}

/// One sampled query: `index` points into the domain's raw training records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    pub index: usize,
    pub class: usize,
}

/// `P` classes × `K` items per domain, grouped by class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch {
    pub p: usize,
    pub k: usize,
    pub source: Vec<BatchItem>,
    pub target: Vec<BatchItem>,
}

/// Picks `p` distinct classes, then `k` members of each: without replacement
/// when the class is big enough, with replacement otherwise. Items come out
/// grouped by class in draw order.
pub fn pk_sample<R: Rng + ?Sized>(
    dataset: &PseudoDataset,
    p: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<BatchItem>> {
    if p > dataset.n_classes {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {p} classes from a {} dataset with {} classes",
            dataset.domain, dataset.n_classes
        )));
    }
    let mut out = Vec::with_capacity(p * k);
    for class in sample(rng, dataset.n_classes, p) {
        let members = dataset.members(class);
        if members.len() >= k {
            for pick in sample(rng, members.len(), k) {
                out.push(BatchItem { index: dataset.samples[members[pick]].index, class });
            }
        } else {
            for _ in 0..k {
                let pick = rng.random_range(0..members.len());
                out.push(BatchItem { index: dataset.samples[members[pick]].index, class });
            }
        }
    }
    Ok(out)
}

/// Writes `domain,true_id,x_1,...,x_D` lines; held-out target samples use the
/// domain tag `eval`.
pub fn export_flat<W: Write>(source: &RawDomain, target: &RawDomain, mut out: W) -> Result<()> {
    let mut line = String::new();
    let groups = [
        ("source", &source.train),
        ("source_eval", &source.eval),
        ("target", &target.train),
        ("eval", &target.eval),
    ];
    for (tag, samples) in groups {
        for s in samples {
            line.clear();
            write!(line, "{tag},{}", s.identity).unwrap();
            for v in &s.x {
                write!(line, ",{v}").unwrap();
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

/// Inverse of [`export_flat`]. Blank lines and lines starting with `#` are skipped.
pub fn import_flat<R: BufRead>(input: R) -> Result<(RawDomain, RawDomain)> {
    let mut source = RawDomain { domain: Domain::Source, train: Vec::new(), eval: Vec::new() };
    let mut target = RawDomain { domain: Domain::Target, train: Vec::new(), eval: Vec::new() };
    let mut dim: Option<usize> = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split(',').map(str::trim);
        let tag = fields.next().unwrap_or_default();
        let identity = fields
            .next()
            .ok_or_else(|| Error::Parse { line: line_no, msg: "missing identity".into() })?
            .parse::<usize>()
            .map_err(|e| Error::Parse { line: line_no, msg: format!("bad identity: {e}") })?;
        let x = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse { line: line_no, msg: format!("bad value {f:?}") })
            })
            .collect::<Result<Vec<f64>>>()?;
        if x.is_empty() {
            return Err(Error::Parse { line: line_no, msg: "no feature values".into() });
        }
        match dim {
            None => dim = Some(x.len()),
            Some(d) if d != x.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {d} values, found {}", x.len()),
                })
            }
            _ => {}
        }
        let sample = RawSample { x, identity };
        match tag {
            "source" => source.train.push(sample),
            "source_eval" => source.eval.push(sample),
            "target" => target.train.push(sample),
            "eval" => target.eval.push(sample),
            other => {
                return Err(Error::Parse { line: line_no, msg: format!("unknown domain {other:?}") })
            }
        }
    }
    if source.train.is_empty() || target.train.is_empty() {
        return Err(Error::Parse { line: 0, msg: "need at least one source and one target sample".into() });
    }
    Ok((source, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_noise_collapses_identities() {
        let spec = DomainSpec { identity_noise: 0.0, samples_per_identity: 5, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (s, _) = generate_domains(&spec, &spec, 8, &mut rng).unwrap();
        for chunk in s.train.chunks(5) {
            assert!(chunk.iter().all(|r| r.x == chunk[0].x));
        }
    }

    #[test]
    fn nuisance_coordinates_carry_no_identity() {
        let spec = DomainSpec { nuisance_dims: 4, identity_noise: 0.0, ..Default::default() };
        let (s, _) = generate_domains(&spec, &spec, 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(s.train.iter().all(|r| r.x[6..].iter().all(|&v| v == 0.0)));
        assert!(s.train.iter().any(|r| r.x[..6].iter().any(|&v| v != 0.0)));

        let noisy = DomainSpec { nuisance_noise: 0.5, ..spec.clone() };
        let (s, _) = generate_domains(&noisy, &noisy, 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(s.train.iter().any(|r| r.x[6..].iter().any(|&v| v != 0.0)));

        let too_many = DomainSpec { nuisance_dims: 11, ..spec };
        assert!(generate_domains(&too_many, &too_many, 10, &mut ChaCha8Rng::seed_from_u64(5)).is_err());
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = DomainSpec { eval_samples_per_identity: 3, distortion: 0.5, shift_offset: 2.0, ..Default::default() };
        let a = generate_domains(&spec, &spec, 16, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = generate_domains(&spec, &spec, 16, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.eval.len(), 30);
        let c = generate_domains(&spec, &spec, 16, &mut ChaCha8Rng::seed_from_u64(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn augment_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec![0.5; 16];
        assert_eq!(augment(&x, 0.0, &mut rng), x);
        assert_ne!(augment(&x, 0.1, &mut rng), augment(&x, 0.1, &mut rng));
        let sigma = 0.3;
        let draws = 10_000;
        let mean_sq: f64 = (0..draws)
            .map(|_| {
                augment(&x, sigma, &mut rng)
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / draws as f64;
        let expected = 16.0 * sigma * sigma;
        assert!((mean_sq - expected).abs() / expected < 0.05);
    }

    fn dataset(sizes: &[usize]) -> PseudoDataset {
        let labels: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        PseudoDataset::from_labels(Domain::Target, &labels, &labels).unwrap()
    }

    #[test]
    fn pk_structure() {
        let ds = dataset(&[6, 6, 6, 6, 6, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = pk_sample(&ds, 4, 4, &mut rng).unwrap();
        assert_eq!(batch.len(), 16);
        for chunk in batch.chunks(4) {
            assert!(chunk.iter().all(|b| b.class == chunk[0].class));
            if chunk[0].class != 5 {
                let mut idx: Vec<_> = chunk.iter().map(|b| b.index).collect();
                idx.sort_unstable();
                idx.dedup();
                assert_eq!(idx.len(), 4);
            }
        }
        let all = pk_sample(&ds, 6, 4, &mut rng).unwrap();
        let mut classes: Vec<_> = all.iter().map(|b| b.class).collect();
        classes.dedup();
        classes.sort_unstable();
        assert_eq!(classes, vec![0, 1, 2, 3, 4, 5]);
        // the two-member class is sampled with replacement
        let small: Vec<_> = all.iter().filter(|b| b.class == 5).map(|b| b.index).collect();
        assert_eq!(small.len(), 4);
        assert!(small.iter().all(|&i| i == 30 || i == 31));
        assert!(pk_sample(&ds, 7, 4, &mut rng).is_err());
    }

    #[test]
    fn flat_text_round_trip() {
        let spec = DomainSpec { n_identities: 3, samples_per_identity: 2, eval_samples_per_identity: 1, ..Default::default() };
        let (s, t) = generate_domains(&spec, &spec, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut buf = Vec::new();
        export_flat(&s, &t, &mut buf).unwrap();
        let (s2, t2) = import_flat(buf.as_slice()).unwrap();
        assert_eq!((s, t), (s2, t2));
        assert!(import_flat("source,0,1.0\ntarget,1,1.0,2.0\n".as_bytes()).is_err());
        assert!(import_flat("moon,0,1.0\n".as_bytes()).is_err());
    }
}
