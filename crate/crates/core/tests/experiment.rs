use std::collections::BTreeMap;
use std::fs;
use std::time::Instant;

use persistent_idle::experiment::{run_experiment, ExperimentConfig, SplitMode};
use persistent_idle::policy::Family;

fn small(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        n: 6,
        policies: vec![Family::Pi, Family::Jsq2],
        split: SplitMode::Off,
        loads: vec![0.3, 0.5, 0.99],
        horizon: 2000,
        out: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn one_row_per_policy_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&small(dir.path())).unwrap();
    assert_eq!(out.rows.len(), 6);
    let text = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with("scenario,n,load,policy,slug,splittable,lambda,avg_total_queue"));
    for name in ["jct_pi_0.5.csv", "jct_jsq2_0.5.csv", "jct_pi_0.99.csv", "jct_jsq2_0.99.csv"] {
        let t = fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(t.starts_with("jct,cdf\n"), "{name}");
        assert!(t.trim_end().ends_with(",1"), "{name}");
    }
    assert!(!dir.path().join("jct_pi_0.3.csv").exists());
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ca = small(a.path());
    ca.trace = true;
    let mut cb = small(b.path());
    cb.trace = true;
    let fa = run_experiment(&ca).unwrap().files;
    run_experiment(&cb).unwrap();
    for f in fa {
        let name = f.file_name().unwrap();
        assert_eq!(fs::read(&f).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name:?}");
    }
}

#[test]
fn policies_see_the_same_arrivals() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    c.policies = Family::ALL.to_vec();
    c.split = SplitMode::Both;
    let rows = run_experiment(&c).unwrap().rows;
    let mut by_load: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for r in rows {
        by_load.entry(r.load.to_string()).or_default().push(r.arrivals_total);
    }
    for (load, v) in by_load {
        assert_eq!(v.len(), 10);
        assert!(v.windows(2).all(|w| w[0] == w[1]), "load {load}: {v:?}");
    }
}

#[test]
fn smoke_preset_is_quick() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        out: dir.path().to_path_buf(),
        ..ExperimentConfig::smoke()
    };
    let t = Instant::now();
    let out = run_experiment(&c).unwrap();
    assert!(t.elapsed().as_secs_f64() < 10.0);
    assert_eq!(out.rows.len(), 30);
}

#[test]
fn drift_report_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    c.drift_lab = true;
    c.drift_reps = 20;
    run_experiment(&c).unwrap();
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("drift_report.json")).unwrap()).unwrap();
    assert_eq!(doc["experiment"].as_array().unwrap().len(), 3);
    let cells = doc["lab"]["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 5);
    assert!(cells.iter().any(|c| !c["blocked"].is_null()));
}
