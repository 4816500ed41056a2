use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mcrn::clustering::{build_pseudo_dataset, dbscan};
use mcrn::config::ExperimentConfig;
use mcrn::datasim::{generate_domains, DomainSpec};
use mcrn::encoder::Encoder;
use mcrn::eval::cluster_purity;
use mcrn::experiment::Experiment;
use mcrn::losses::SynthesisMethod;
use mcrn::sweep::{ablate, sweep, to_csv, AblationPreset, SweepParam};
use mcrn::Domain;

fn short_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml_str(include_str!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/benchmark.toml"
    )))
    .unwrap();
    c.training.epochs = 3;
    c
}

#[test]
fn untrained_run_reports_one_record() {
    let mut c = short_config();
    c.training.epochs = 0;
    let mut exp = Experiment::new(c).unwrap();
    let params = exp.encoder().params().to_vec();
    let records = exp.run().unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].epoch, 0);
    assert!(records[0].mean_loss.is_none());
    assert_eq!(exp.encoder().params(), params.as_slice());
}

#[test]
fn records_are_one_per_epoch() {
    let records = Experiment::new(short_config()).unwrap().run().unwrap();
    let epochs: Vec<usize> = records.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![0, 1, 2, 3]);
    for r in &records[1..] {
        assert!(r.mean_loss.unwrap().is_finite());
        assert!((0.0..=1.0).contains(&r.map));
        assert!(r.cmc1 <= r.cmc5 && r.cmc5 <= r.cmc10);
        assert!((0.0..=2.0).contains(&r.domain_distance));
    }
}

#[test]
fn k_sweep_has_one_row_per_value() {
    let rows = sweep(&short_config(), SweepParam::K, &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0].label, "k=2");
    assert!(sweep(&short_config(), SweepParam::K, &[]).is_err());
}

#[test]
fn alpha_sweep_zero_row_matches_plain_run() {
    let mut base = short_config();
    base.synthesis.method = SynthesisMethod::Soni;
    let values = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07];
    let rows = sweep(&base, SweepParam::Alpha, &values).unwrap();
    assert_eq!(rows.len(), 8);

    let mut plain = base.clone();
    plain.synthesis.method = SynthesisMethod::None;
    let plain = mcrn::sweep::Summary::from_finals("alpha=0", &[mcrn::sweep::final_record(&plain).unwrap()]).unwrap();
    assert_eq!(rows[0], plain);

    let again = sweep(&base, SweepParam::Alpha, &values).unwrap();
    assert_eq!(to_csv(&rows).into_bytes(), to_csv(&again).into_bytes());
}

#[test]
fn presets_emit_one_row_per_variant() {
    let mut c = short_config();
    c.training.epochs = 1;
    for (preset, n) in [(AblationPreset::Table2, 4), (AblationPreset::Table3, 4), (AblationPreset::Dscl, 2)] {
        let rows = ablate(&c, preset, 1).unwrap();
        assert_eq!(rows.len(), n);
        assert!(to_csv(&rows).lines().count() == n + 1);
    }
}

#[test]
fn well_separated_identities_cluster_cleanly_before_training() {
    let spec = DomainSpec {
        n_identities: 10,
        samples_per_identity: 30,
        center_spread: 3.0,
        identity_noise: 0.05,
        ..DomainSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (_, target) = generate_domains(&spec, &spec, 16, &mut rng).unwrap();
    let encoder = Encoder::new(&[16, 64, 64, 32], &mut rng).unwrap();
    let feats: Vec<_> = target.train.iter().map(|s| encoder.encode(&s.x).unwrap()).collect();
    let labeling = dbscan(&feats, 0.05, 4).unwrap();
    let ds = build_pseudo_dataset(&labeling, &target.identities(), Domain::Target).unwrap();
    let purity = cluster_purity(ds.samples.iter().map(|s| (s.label, s.true_id))).unwrap();
    assert!(purity >= 0.9, "purity {purity}");
    assert!(ds.n_classes >= 9, "{} clusters", ds.n_classes);
}
