//! The training driver: per epoch a preparation step (encode, cluster, rebuild
//! the bank) followed by P×K optimization iterations, then evaluation on the
//! held-out target split.

use std::fs::File;
use std::io::BufReader;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, RngState};
use crate::clustering::{build_pseudo_dataset, corrupt_clusters, dbscan, PseudoDataset};
use crate::config::{ExperimentConfig, Representation};
use crate::datasim::{augment, generate_domains, import_flat, pk_sample, BatchItem, RawDomain, RawSample};
use crate::encoder::{Adam, Encoder, ForwardCache};
use crate::error::{Error, Result};
use crate::eval::{cluster_purity, domain_distance, map_cmc, split_query_gallery, RetrievalItem, RetrievalProtocol};
use crate::losses::{total_loss, Query};
use crate::memory::CentroidBank;
use crate::numerics::FeatureVector;
use crate::Domain;

const DATA_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

/// One line of the metrics log. `epoch = 0` describes the untrained encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Mean total loss over the epoch's iterations; `None` before training.
    pub mean_loss: Option<f64>,
    pub map: f64,
    pub cmc1: f64,
    pub cmc5: f64,
    pub cmc10: f64,
    /// Purity of the pseudo labels the epoch trained on (after any injected
    /// corruption); for epoch 0, of the raw clustering.
    pub purity: f64,
    pub n_target_classes: usize,
    pub domain_distance: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_clock_s: Option<f64>,
}

impl MetricsRecord {
    /// One JSON object. Wall-clock time is only written when asked for, so
    /// that logs of identical runs are byte-identical by default.
    pub fn to_json_line(&self, include_wall_clock: bool) -> String {
        let mut rec = self.clone();
        if !include_wall_clock {
            rec.wall_clock_s = None;
        }
        serde_json::to_string(&rec).expect("metrics are always serializable")
    }

    /// Equality ignoring wall-clock time.
    pub fn same_metrics(&self, other: &MetricsRecord) -> bool {
        self.to_json_line(false) == other.to_json_line(false)
    }
}

/// Products of the preparation step.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub source: PseudoDataset,
    pub target: PseudoDataset,
    pub bank: CentroidBank,
    pub raw_purity: f64,
    pub purity: f64,
    pub noise_fraction: f64,
}

pub struct Experiment {
    config: ExperimentConfig,
    source: RawDomain,
    target: RawDomain,
    eval_queries: Vec<usize>,
    eval_gallery: Vec<usize>,
    encoder: Encoder,
    adam: Adam,
    rng: ChaCha8Rng,
    epochs_done: usize,
    bank: Option<CentroidBank>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn load_data(config: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<(RawDomain, RawDomain)> {
    let (source, target) = match &config.data.import {
        Some(path) => import_flat(BufReader::new(File::open(path)?))?,
        None => generate_domains(&config.data.source, &config.data.target, config.data.input_dim, rng)?,
    };
    for d in [&source, &target] {
        if d.input_dim() != Some(config.data.input_dim) {
            return Err(Error::Config(format!(
                "{} data has dimension {:?}, config says {}",
                d.domain,
                d.input_dim(),
                config.data.input_dim
            )));
        }
    }
    Ok((source, target))
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mut data_rng = rng_for(config.seed, DATA_STREAM);
        let (source, target) = load_data(&config, &mut data_rng)?;
        let encoder = Encoder::new(&config.encoder_sizes(), &mut data_rng)?;
        let adam = Adam::new(config.training.adam, encoder.num_params());
        Ok(Self::assemble(config, source, target, encoder, adam, rng_for(0, 0), 0, None)
            .with_train_rng())
    }

    fn with_train_rng(mut self) -> Self {
        self.rng = rng_for(self.config.seed, TRAIN_STREAM);
        self
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: ExperimentConfig,
        source: RawDomain,
        target: RawDomain,
        encoder: Encoder,
        adam: Adam,
        rng: ChaCha8Rng,
        epochs_done: usize,
        bank: Option<CentroidBank>,
    ) -> Self {
        let eval_ids: Vec<usize> = Self::eval_samples(&target).iter().map(|s| s.identity).collect();
        let (eval_queries, eval_gallery) = split_query_gallery(&eval_ids, config.seed);
        Experiment {
            config,
            source,
            target,
            eval_queries,
            eval_gallery,
            encoder,
            adam,
            rng,
            epochs_done,
            bank,
        }
    }

    /// Held-out target samples, or the training samples when none were provided.
    fn eval_samples(target: &RawDomain) -> &[RawSample] {
        if target.eval.is_empty() {
            &target.train
        } else {
            &target.eval
        }
    }

    /// Rebuilds an experiment from a checkpoint. The data are regenerated (or
    /// re-imported) from the embedded config.
    pub fn resume(ckpt: Checkpoint) -> Result<Self> {
        let config = ckpt.config;
        config.validate()?;
        if config.hash() != ckpt.config_hash {
            return Err(Error::Checkpoint(format!(
                "config hash {:016x} does not match recorded {:016x}",
                config.hash(),
                ckpt.config_hash
            )));
        }
        let mut data_rng = rng_for(config.seed, DATA_STREAM);
        let (source, target) = load_data(&config, &mut data_rng)?;
        if ckpt.encoder.sizes() != config.encoder_sizes().as_slice() {
            return Err(Error::Checkpoint("encoder shape differs from config".into()));
        }
        let rng = ckpt.rng.restore();
        Ok(Self::assemble(
            config,
            source,
            target,
            ckpt.encoder,
            ckpt.adam,
            rng,
            ckpt.epochs_done,
            ckpt.bank,
        ))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.config.hash(),
            config: self.config.clone(),
            epochs_done: self.epochs_done,
            encoder: self.encoder.clone(),
            adam: self.adam.clone(),
            bank: self.bank.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn bank(&self) -> Option<&CentroidBank> {
        self.bank.as_ref()
    }

    pub fn source_data(&self) -> &RawDomain {
        &self.source
    }

    pub fn target_data(&self) -> &RawDomain {
        &self.target
    }

    fn encode_all(&self, samples: &[RawSample]) -> Result<Vec<FeatureVector>> {
        samples.iter().map(|s| self.encoder.encode(&s.x)).collect()
    }

    /// Clusters the target features, applies the configured label corruption
    /// and builds a fresh bank. Consumes the training rng only for corruption.
    pub fn prepare(&mut self) -> Result<Prepared> {
        let source_feats = self.encode_all(&self.source.train)?;
        let target_feats = self.encode_all(&self.target.train)?;
        let cfg = &self.config;

        let labeling = dbscan(&target_feats, cfg.clustering.eps, cfg.clustering.min_pts)?;
        let target_ids = self.target.identities();
        let clustered = build_pseudo_dataset(&labeling, &target_ids, Domain::Target).map_err(|e| match e {
            Error::DegenerateClustering(msg) => Error::DegenerateClustering(format!(
                "{msg} (eps = {}, min_pts = {}); try a larger eps",
                cfg.clustering.eps, cfg.clustering.min_pts
            )),
            other => other,
        })?;
        let raw_purity = cluster_purity(clustered.samples.iter().map(|s| (s.label, s.true_id)))?;

        let c = cfg.corruption;
        let target = corrupt_feasible(&clustered, c.target_merge_pairs, c.target_split_classes, &mut self.rng)?;
        let source_ids = self.source.identities();
        let source_gt = PseudoDataset::from_labels(Domain::Source, &source_ids, &source_ids)?;
        let source = corrupt_feasible(&source_gt, c.source_merge_pairs, c.source_split_classes, &mut self.rng)?;
        let purity = cluster_purity(target.samples.iter().map(|s| (s.label, s.true_id)))?;

        let bank = CentroidBank::init(&source, &source_feats, &target, &target_feats, cfg.bank_k())?;
        log::debug!(
            "prepared: {} source classes, {} target clusters ({} noise), purity {purity:.3}",
            source.n_classes,
            target.n_classes,
            labeling.noise_count()
        );
        Ok(Prepared {
            source,
            target,
            bank,
            raw_purity,
            purity,
            noise_fraction: labeling.noise_fraction(),
        })
    }

    fn evaluate(&self, epoch: usize, mean_loss: Option<f64>, purity: f64, n_target_classes: usize, started: Instant) -> Result<MetricsRecord> {
        let eval = Self::eval_samples(&self.target);
        let item = |i: usize| -> Result<RetrievalItem> {
            Ok(RetrievalItem {
                feature: self.encoder.encode(&eval[i].x)?,
                identity: eval[i].identity,
                record: i,
            })
        };
        let protocol = RetrievalProtocol {
            queries: self.eval_queries.iter().map(|&i| item(i)).collect::<Result<_>>()?,
            gallery: self.eval_gallery.iter().map(|&i| item(i)).collect::<Result<_>>()?,
        };
        let metrics = map_cmc(&protocol)?;
        let distance = domain_distance(
            &self.encode_all(&self.source.train)?,
            &self.encode_all(&self.target.train)?,
        )?;
        Ok(MetricsRecord {
            epoch,
            mean_loss,
            map: metrics.map,
            cmc1: metrics.rank(1),
            cmc5: metrics.rank(5),
            cmc10: metrics.rank(10),
            purity,
            n_target_classes,
            domain_distance: distance,
            wall_clock_s: Some(started.elapsed().as_secs_f64()),
        })
    }

    /// Metrics of the current encoder without training (no rng is consumed),
    /// labelled with the number of epochs done so far.
    pub fn snapshot_record(&self) -> Result<MetricsRecord> {
        let started = Instant::now();
        let feats = self.encode_all(&self.target.train)?;
        let labeling = dbscan(&feats, self.config.clustering.eps, self.config.clustering.min_pts)?;
        let ids = self.target.identities();
        let pairs: Vec<(usize, usize)> = labeling
            .assignment
            .iter()
            .zip(&ids)
            .filter_map(|(a, &t)| a.map(|c| (c, t)))
            .collect();
        let purity = if pairs.is_empty() { 0.0 } else { cluster_purity(pairs)? };
        self.evaluate(self.epochs_done, None, purity, labeling.n_clusters, started)
    }

    /// Runs one full epoch and returns its metrics.
    pub fn run_epoch(&mut self) -> Result<MetricsRecord> {
        let started = Instant::now();
        let epoch = self.epochs_done;
        let prep = self.prepare()?;
        let Prepared { source, target, mut bank, purity, .. } = prep;

        let cfg = self.config.clone();
        let k = cfg.memory.k;
        let p_source = clamp_classes(cfg.training.classes_per_batch, &source);
        let p_target = clamp_classes(cfg.training.classes_per_batch, &target);
        let iterations = match cfg.training.iterations_per_epoch {
            0 => target.len().div_ceil(p_target * k).max(1),
            n => n,
        };
        let lr = cfg.training.schedule().lr_at(epoch);
        let loss_cfg = cfg.effective_loss();

        let mut loss_sum = 0.0;
        for _ in 0..iterations {
            let src_items = pk_sample(&source, p_source, k, &mut self.rng)?;
            let tgt_items = pk_sample(&target, p_target, k, &mut self.rng)?;
            let sigma = cfg.training.augment_sigma;
            let src_caches = forward_items(&self.encoder, &self.source.train, &src_items, sigma, &mut self.rng)?;
            let tgt_caches = forward_items(&self.encoder, &self.target.train, &tgt_items, sigma, &mut self.rng)?;

            let qs: Vec<Query> = src_caches
                .iter()
                .zip(&src_items)
                .map(|(c, it)| Query { feature: c.output(), class: it.class })
                .collect();
            let qt: Vec<Query> = tgt_caches
                .iter()
                .zip(&tgt_items)
                .map(|(c, it)| Query { feature: c.output(), class: it.class })
                .collect();
            let total = total_loss(&qs, &qt, &bank, &loss_cfg, &cfg.synthesis, &mut self.rng)?;
            loss_sum += total.value;

            let mut grads = self.encoder.zero_grads();
            for (cache, g) in src_caches.iter().zip(&total.source_grads) {
                self.encoder.backward(cache, g, &mut grads)?;
            }
            for (cache, g) in tgt_caches.iter().zip(&total.target_grads) {
                self.encoder.backward(cache, g, &mut grads)?;
            }
            self.adam.step(self.encoder.params_mut(), &grads, lr)?;

            for (domain, caches, items) in [
                (Domain::Source, &src_caches, &src_items),
                (Domain::Target, &tgt_caches, &tgt_items),
            ] {
                update_bank(&mut bank, domain, caches, items, k, &cfg)?;
            }
        }

        self.bank = Some(bank);
        self.epochs_done += 1;
        self.evaluate(
            self.epochs_done,
            Some(loss_sum / iterations as f64),
            purity,
            target.n_classes,
            started,
        )
    }

    /// Emits the untrained record (when starting from scratch) and every
    /// remaining epoch, handing each record to `sink` as it is produced.
    pub fn run_with<F>(&mut self, mut sink: F) -> Result<Vec<MetricsRecord>>
    where
        F: FnMut(&MetricsRecord) -> Result<()>,
    {
        let mut records = Vec::new();
        if self.epochs_done == 0 {
            let r = self.snapshot_record()?;
            sink(&r)?;
            records.push(r);
        }
        while self.epochs_done < self.config.training.epochs {
            let r = self.run_epoch()?;
            log::info!(
                "epoch {:>3}: loss {:.4} mAP {:.4} R1 {:.4} n_t {} dist {:.4}",
                r.epoch,
                r.mean_loss.unwrap_or(f64::NAN),
                r.map,
                r.cmc1,
                r.n_target_classes,
                r.domain_distance
            );
            sink(&r)?;
            records.push(r);
        }
        Ok(records)
    }

    pub fn run(&mut self) -> Result<Vec<MetricsRecord>> {
        self.run_with(|_| Ok(()))
    }
}

fn forward_items(
    encoder: &Encoder,
    samples: &[RawSample],
    items: &[BatchItem],
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ForwardCache>> {
    items
        .iter()
        .map(|it| encoder.forward(&augment(&samples[it.index].x, sigma, rng)))
        .collect()
}

fn clamp_classes(p: usize, ds: &PseudoDataset) -> usize {
    if p > ds.n_classes {
        log::info!(
            "only {} {} classes; sampling all of them instead of P = {p}",
            ds.n_classes,
            ds.domain
        );
        ds.n_classes
    } else {
        p
    }
}

fn corrupt_feasible(
    ds: &PseudoDataset,
    merges: usize,
    splits: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PseudoDataset> {
    let merges_ok = merges.min(ds.n_classes / 2);
    if merges_ok < merges {
        log::info!("{}: only {merges_ok} of {merges} merges are feasible", ds.domain);
    }
    let after_merge = ds.n_classes - merges_ok;
    let splits_ok = splits.min(after_merge);
    if splits_ok < splits {
        log::info!("{}: only {splits_ok} of {splits} splits are feasible", ds.domain);
    }
    match corrupt_clusters(ds, merges_ok, splits_ok, rng) {
        Err(Error::InvalidArgument(msg)) => {
            log::info!("{}: skipping splits ({msg})", ds.domain);
            corrupt_clusters(ds, merges_ok, 0, rng)
        }
        other => other,
    }
}

/// One bank update per sampled class. The uni-centroid bank absorbs the
/// class's queries one at a time.
fn update_bank(
    bank: &mut CentroidBank,
    domain: Domain,
    caches: &[ForwardCache],
    items: &[BatchItem],
    k: usize,
    cfg: &ExperimentConfig,
) -> Result<()> {
    let momentum = cfg.memory.momentum;
    for (chunk, group) in caches.chunks(k).zip(items.chunks(k)) {
        let class = group[0].class;
        let feats: Vec<&FeatureVector> = chunk.iter().map(ForwardCache::output).collect();
        match cfg.memory.representation {
            Representation::Multi => {
                bank.update_class(domain, class, &feats, momentum)?;
            }
            Representation::Uni => {
                for f in feats {
                    bank.update_class(domain, class, &[f], momentum)?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.data.source.n_identities = 4;
        c.data.source.samples_per_identity = 8;
        c.data.target.n_identities = 4;
        c.data.target.samples_per_identity = 8;
        c.data.target.eval_samples_per_identity = 8;
        c.training.epochs = 2;
        c.training.iterations_per_epoch = 3;
        c.encoder.hidden = vec![16];
        c.encoder.output_dim = 8;
        c
    }

    #[test]
    fn zero_epochs_reports_untrained_encoder_only() {
        let mut c = tiny_config();
        c.training.epochs = 0;
        let mut exp = Experiment::new(c).unwrap();
        let before = exp.encoder().clone();
        let records = exp.run().unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].epoch, 0);
        assert_eq!(records[0].mean_loss, None);
        assert_eq!(exp.encoder(), &before);
    }

    #[test]
    fn identical_seeds_identical_logs() {
        let a = Experiment::new(tiny_config()).unwrap().run().unwrap();
        let b = Experiment::new(tiny_config()).unwrap().run().unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_json_line(false), y.to_json_line(false));
        }
    }

    #[test]
    fn bank_is_rebuilt_from_clustering_each_epoch() {
        let mut exp = Experiment::new(tiny_config()).unwrap();
        exp.run_epoch().unwrap();
        // two preparations with the same encoder and rng state agree exactly,
        // whatever bank the previous epoch left behind
        let rng_before = exp.rng.clone();
        let first = exp.prepare().unwrap();
        exp.bank = None;
        exp.rng = rng_before;
        let second = exp.prepare().unwrap();
        assert_eq!(first.bank, second.bank);
    }

    #[test]
    fn all_noise_aborts() {
        let mut c = tiny_config();
        c.clustering.eps = 1e-9;
        let mut exp = Experiment::new(c).unwrap();
        assert!(matches!(exp.run_epoch(), Err(Error::DegenerateClustering(_))));
    }
}
