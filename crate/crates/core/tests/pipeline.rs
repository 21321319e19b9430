use std::fs;
use std::path::Path;

use zonelesion::pipeline::StageStatus;
use zonelesion::{run_pipeline, Error, PipelineConfig, Zone};

const SMALL: &str = r#"{
  "zones": ["PZ", "AS"],
  "phantom": {
    "train_counts": {"PZ": 16, "TZ": 8, "AS": 8},
    "test_counts": {"PZ": 8, "TZ": 4, "AS": 6},
    "lesion_free_cases": 4
  },
  "classifiers": {"forest": {"n_trees": 30}, "logreg_search": null},
  "net": {"enabled": true, "config": {"epochs": 2}}
}"#;

fn config(dir: &Path, workers: usize) -> PipelineConfig {
    let mut c = PipelineConfig::from_json(SMALL.as_bytes()).unwrap();
    c.workdir = dir.to_path_buf();
    c.workers = workers;
    c
}

fn features(dir: &Path, zone: Zone) -> Vec<u8> {
    let z = dir.join("zones").join(zone.as_str());
    [fs::read(z.join("train_features.csv")).unwrap(), fs::read(z.join("test_features.csv")).unwrap()].concat()
}

#[test]
fn second_run_skips_everything_and_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 0);
    let first = run_pipeline(&cfg).unwrap();
    assert!(first.stages.iter().all(|s| s.status == StageStatus::Ran));
    assert_eq!(first.metrics.len(), 2 * 5);
    let report = fs::read(dir.path().join("zones/PZ/report/report.csv")).unwrap();
    let second = run_pipeline(&cfg).unwrap();
    assert!(second.all_skipped());
    assert_eq!(second.stages.len(), first.stages.len());
    assert_eq!(second.metrics, first.metrics);
    assert_eq!(fs::read(dir.path().join("zones/PZ/report/report.csv")).unwrap(), report);
}

#[test]
fn deleted_model_is_retrained_alone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 0);
    let first = run_pipeline(&cfg).unwrap();
    let gbt = dir.path().join("zones/AS/models/gbt.zldc");
    let bytes = fs::read(&gbt).unwrap();
    fs::remove_file(&gbt).unwrap();
    let second = run_pipeline(&cfg).unwrap();
    let ran: Vec<&str> = second
        .stages
        .iter()
        .filter(|s| s.status == StageStatus::Ran)
        .map(|s| s.stage.as_str())
        .collect();
    // retraining restores identical bytes, so evaluation stays cached
    assert_eq!(ran, ["train-AS"]);
    assert_eq!(fs::read(&gbt).unwrap(), bytes);
    assert_eq!(second.metrics, first.metrics);
}

#[test]
fn one_and_eight_workers_agree_byte_for_byte() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_pipeline(&config(a.path(), 1)).unwrap();
    let rb = run_pipeline(&config(b.path(), 8)).unwrap();
    for zone in [Zone::Pz, Zone::As] {
        assert_eq!(features(a.path(), zone), features(b.path(), zone));
    }
    assert_eq!(ra.metrics, rb.metrics);
    assert_eq!(fs::read(a.path().join("metrics.csv")).unwrap(), fs::read(b.path().join("metrics.csv")).unwrap());
}

#[test]
fn zones_do_not_influence_each_other() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&config(a.path(), 0)).unwrap();
    let mut only_pz = config(b.path(), 0);
    only_pz.zones = vec![Zone::Pz];
    let r = run_pipeline(&only_pz).unwrap();
    assert!(r.metrics.iter().all(|m| m.zone == Zone::Pz));
    assert!(!b.path().join("zones/AS").exists());
    assert_eq!(features(a.path(), Zone::Pz), features(b.path(), Zone::Pz));
    for kind in ["logreg_l1", "svm_rbf", "random_forest", "gbt", "micro_net"] {
        let p = format!("zones/PZ/models/{kind}.zldc");
        assert_eq!(fs::read(a.path().join(&p)).unwrap(), fs::read(b.path().join(&p)).unwrap(), "{kind}");
    }
}

#[test]
fn seminal_vesicle_zone_is_a_validation_error() {
    let e = PipelineConfig::from_json(br#"{"zones": ["SV"]}"#).unwrap_err();
    assert!(e.is_validation());
    assert!(e.to_string().contains("\"SV\""), "{e}");
}

#[test]
fn failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 0);
    cfg.corpus = Some(dir.path().join("missing"));
    match run_pipeline(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "corpus"),
        other => panic!("expected a stage error, got {other:?}"),
    }
}
