use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "seed = 4\n[training]\nepochs = 2\nbase_lr = 0.003\n[clustering]\neps = 0.06\n";

fn mcrn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcrn")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("c.toml");
    fs::write(&path, CONFIG).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_metrics_config_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("out");
    let o = mcrn(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.lines().all(|l| l.starts_with("{\"epoch\":")));
    assert!(out.join("config.toml").exists());

    let ck = out.join("checkpoint.bin");
    let e = mcrn(&["eval", "--checkpoint", ck.to_str().unwrap()]);
    assert!(e.status.success());
    let text = String::from_utf8(e.stdout).unwrap();
    assert!(text.starts_with("config_hash = "));
    // the evaluation of the final encoder matches the last logged epoch
    let last: serde_json::Value = serde_json::from_str(metrics.lines().last().unwrap()).unwrap();
    let eval: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
    assert_eq!(last["map"], eval["map"]);
    assert_eq!(eval["epoch"], 2);

    let bytes = fs::read(&ck).unwrap();
    let broken = dir.path().join("broken.bin");
    fs::write(&broken, &bytes[..bytes.len() / 2]).unwrap();
    assert!(!mcrn(&["eval", "--checkpoint", broken.to_str().unwrap()]).status.success());
}

#[test]
fn resume_continues_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let whole = mcrn(&["run", "--config", &config]);
    assert!(whole.status.success());

    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(mcrn(&["run", "--config", &config, "--out", out_s, "--stop-after", "1"]).status.success());
    let ck = out.join("checkpoint.bin");
    assert!(mcrn(&["run", "--resume", ck.to_str().unwrap(), "--out", out_s]).status.success());
    assert_eq!(fs::read(out.join("metrics.jsonl")).unwrap(), whole.stdout);
}

#[test]
fn sweep_and_ablate_print_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let s = mcrn(&["sweep", "--config", &config, "--param", "k", "--values", "2,3"]);
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    let csv = String::from_utf8(s.stdout).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("label,seeds,map"));

    let a = mcrn(&["ablate", "--preset", "dscl", "--config", &config, "--seeds", "1"]);
    assert!(a.status.success());
    let csv = String::from_utf8(a.stdout).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.contains("\nucl,1,") && csv.contains("\ndscl,1,"));

    assert!(!mcrn(&["ablate", "--preset", "table9"]).status.success());
    assert!(!mcrn(&["sweep", "--param", "k"]).status.success());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[memory]\nkay = 3\n").unwrap();
    let o = mcrn(&["run", "--config", path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("kay"));
}
