//! Parameter sweeps and ablation tables, written as CSV.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::config::{ExperimentConfig, Representation};
use crate::error::{Error, Result};
use crate::experiment::{Experiment, MetricsRecord};
use crate::losses::{LossScope, SynthesisMethod};
use crate::memory::{NegativeStrategy, PositiveStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    K,
    Alpha,
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "k" => Ok(SweepParam::K),
            "alpha" => Ok(SweepParam::Alpha),
            _ => Err(Error::InvalidArgument(format!("unknown sweep parameter {s:?} (expected k or alpha)"))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::K => "k",
            SweepParam::Alpha => "alpha",
        }
    }

    pub fn apply(self, config: &mut ExperimentConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::K => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidArgument(format!("K must be a positive integer, got {value}")));
                }
                config.memory.k = value as usize;
            }
            SweepParam::Alpha => config.synthesis.alpha = value,
        }
        config.validate()
    }
}

/// Final-epoch metrics of one table row. With several seeds every field is
/// the median over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub label: String,
    pub seeds: usize,
    pub map: f64,
    pub cmc1: f64,
    pub cmc5: f64,
    pub cmc10: f64,
    pub domain_distance: f64,
    pub purity: f64,
    pub n_target_classes: f64,
    pub final_loss: Option<f64>,
}

pub const CSV_HEADER: &str = "label,seeds,map,cmc1,cmc5,cmc10,domain_distance,purity,n_target_classes,final_loss";

impl Summary {
    pub fn from_finals(label: impl Into<String>, finals: &[MetricsRecord]) -> Result<Self> {
        if finals.is_empty() {
            return Err(Error::InvalidArgument("no runs to summarize".into()));
        }
        let med = |f: fn(&MetricsRecord) -> f64| median(&finals.iter().map(f).collect::<Vec<_>>());
        let losses: Vec<f64> = finals.iter().filter_map(|r| r.mean_loss).collect();
        Ok(Summary {
            label: label.into(),
            seeds: finals.len(),
            map: med(|r| r.map),
            cmc1: med(|r| r.cmc1),
            cmc5: med(|r| r.cmc5),
            cmc10: med(|r| r.cmc10),
            domain_distance: med(|r| r.domain_distance),
            purity: med(|r| r.purity),
            n_target_classes: med(|r| r.n_target_classes as f64),
            final_loss: (losses.len() == finals.len()).then(|| median(&losses)),
        })
    }

    pub fn csv_row(&self) -> String {
        let loss = self.final_loss.map(|l| l.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.label,
            self.seeds,
            self.map,
            self.cmc1,
            self.cmc5,
            self.cmc10,
            self.domain_distance,
            self.purity,
            self.n_target_classes,
            loss
        )
    }
}

pub fn to_csv(rows: &[Summary]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}

/// Median of a non-empty slice; the mean of the two middle values for even
/// lengths. NaNs sort last.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Final record of a full run.
pub fn final_record(config: &ExperimentConfig) -> Result<MetricsRecord> {
    let records = Experiment::new(config.clone())?.run()?;
    Ok(records.last().cloned().expect("a run always yields the untrained record"))
}

/// Runs `config` under seeds `seed, seed + 1, ...` and returns the final records.
pub fn run_seeds(config: &ExperimentConfig, n_seeds: usize) -> Result<Vec<MetricsRecord>> {
    (0..n_seeds as u64)
        .map(|i| {
            let mut c = config.clone();
            c.seed = config.seed.wrapping_add(i);
            final_record(&c)
        })
        .collect()
}

/// One run per value, all under the base config's seed.
pub fn sweep(base: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<Summary>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            param.apply(&mut c, v)?;
            log::info!("sweep {} = {v}", param.name());
            Summary::from_finals(format!("{}={v}", param.name()), &[final_record(&c)?])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationPreset {
    /// Positive and negative selection strategies.
    Table2,
    /// Interpolation methods for synthetic negatives.
    Table3,
    /// Unified versus domain-specific contrast.
    Dscl,
    /// Stepwise assembly from the uni-centroid baseline to the full model.
    Components,
}

impl FromStr for AblationPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "table2" => Ok(AblationPreset::Table2),
            "table3" => Ok(AblationPreset::Table3),
            "dscl" => Ok(AblationPreset::Dscl),
            "components" => Ok(AblationPreset::Components),
            _ => Err(Error::InvalidArgument(format!(
                "unknown preset {s:?} (expected table2, table3, dscl or components)"
            ))),
        }
    }
}

/// The multi-centroid model trained with the unified loss and no synthetic
/// negatives.
pub fn mcm_base(config: &ExperimentConfig) -> ExperimentConfig {
    let mut c = config.clone();
    c.memory.representation = Representation::Multi;
    c.loss.scope = LossScope::Ucl;
    c.loss.positive = PositiveStrategy::Moderate;
    c.loss.negative = NegativeStrategy::Mean;
    c.synthesis.method = SynthesisMethod::None;
    c
}

impl AblationPreset {
    pub fn variants(self, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
        let mcm = mcm_base(base);
        let with = |f: &dyn Fn(&mut ExperimentConfig)| {
            let mut c = mcm.clone();
            f(&mut c);
            c
        };
        let named = |v: Vec<(&str, ExperimentConfig)>| v.into_iter().map(|(n, c)| (n.to_string(), c)).collect();
        match self {
            AblationPreset::Table2 => named(vec![
                ("most/mean", with(&|c| c.loss.positive = PositiveStrategy::Most)),
                ("least/mean", with(&|c| c.loss.positive = PositiveStrategy::Least)),
                ("moderate/all", with(&|c| c.loss.negative = NegativeStrategy::All)),
                ("moderate/mean", mcm.clone()),
            ]),
            AblationPreset::Table3 => {
                let full = |m: SynthesisMethod| {
                    with(&|c| {
                        c.loss.scope = LossScope::Dscl;
                        c.synthesis.method = m;
                    })
                };
                named(vec![
                    ("none", full(SynthesisMethod::None)),
                    ("qnni", full(SynthesisMethod::Qnni)),
                    ("rnni", full(SynthesisMethod::Rnni)),
                    ("soni", full(SynthesisMethod::Soni)),
                ])
            }
            AblationPreset::Dscl => named(vec![
                ("ucl", mcm.clone()),
                ("dscl", with(&|c| c.loss.scope = LossScope::Dscl)),
            ]),
            AblationPreset::Components => named(vec![
                ("baseline", with(&|c| c.memory.representation = Representation::Uni)),
                ("mcm", mcm.clone()),
                ("mcm+dscl", with(&|c| c.loss.scope = LossScope::Dscl)),
                ("mcm+soni", with(&|c| c.synthesis.method = SynthesisMethod::Soni)),
                (
                    "mcm+dscl+soni",
                    with(&|c| {
                        c.loss.scope = LossScope::Dscl;
                        c.synthesis.method = SynthesisMethod::Soni;
                    }),
                ),
            ]),
        }
    }
}

/// Every variant of the preset under `n_seeds` seeds, summarized by medians.
pub fn ablate(base: &ExperimentConfig, preset: AblationPreset, n_seeds: usize) -> Result<Vec<Summary>> {
    if n_seeds == 0 {
        return Err(Error::InvalidArgument("ablation needs at least one seed".into()));
    }
    preset
        .variants(base)
        .into_iter()
        .map(|(name, c)| {
            log::info!("ablation variant {name}");
            Summary::from_finals(name, &run_seeds(&c, n_seeds)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
    }

    #[test]
    fn parse_names() {
        assert_eq!("K".parse::<SweepParam>().unwrap(), SweepParam::K);
        assert_eq!("alpha".parse::<SweepParam>().unwrap(), SweepParam::Alpha);
        assert!("beta".parse::<SweepParam>().is_err());
        assert_eq!("table3".parse::<AblationPreset>().unwrap(), AblationPreset::Table3);
        assert!("table9".parse::<AblationPreset>().is_err());
    }

    #[test]
    fn k_values_must_be_integers() {
        let mut c = ExperimentConfig::default();
        assert!(SweepParam::K.apply(&mut c, 2.5).is_err());
        assert!(SweepParam::K.apply(&mut c, 0.0).is_err());
        SweepParam::K.apply(&mut c, 6.0).unwrap();
        assert_eq!(c.memory.k, 6);
    }

    #[test]
    fn presets_change_one_knob_each() {
        let base = ExperimentConfig::default();
        let mcm = mcm_base(&base);
        for preset in [AblationPreset::Table2, AblationPreset::Table3, AblationPreset::Dscl] {
            let v = preset.variants(&base);
            assert!(v.len() >= 2);
            for (_, c) in &v {
                assert_eq!(c.memory, mcm.memory);
                assert_eq!(c.seed, base.seed);
            }
        }
        let dscl = AblationPreset::Dscl.variants(&base);
        assert_eq!(dscl[0].1.loss.scope, LossScope::Ucl);
        assert_eq!(dscl[1].1.loss.scope, LossScope::Dscl);
    }

    #[test]
    fn csv_shape() {
        let r = MetricsRecord {
            epoch: 1,
            mean_loss: Some(1.5),
            map: 0.5,
            cmc1: 0.25,
            cmc5: 1.0,
            cmc10: 1.0,
            purity: 0.75,
            n_target_classes: 3,
            domain_distance: 0.125,
            wall_clock_s: None,
        };
        let s = Summary::from_finals("x", &[r.clone(), r]).unwrap();
        let csv = to_csv(&[s]);
        assert_eq!(csv, format!("{CSV_HEADER}\nx,2,0.5,0.25,1,1,0.125,0.75,3,1.5\n"));
    }
}
