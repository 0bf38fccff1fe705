use std::fs;

use perimeter_core::checkpoint;
use perimeter_core::datagen::{build_dataset, difficulty, expert_labels, generate, Dataset, DatasetConfig};
use perimeter_core::error::Error;
use perimeter_core::pin::PolicyConfig;
use perimeter_core::train::{fit, TrainConfig, FINAL_CHECKPOINT, METRICS_FILE, METRICS_HEADER};

fn config(seed: u64) -> DatasetConfig {
    DatasetConfig {
        max_size: 3,
        count_per_scenario: 300,
        seed,
        shard_size: 100,
        ..DatasetConfig::default()
    }
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    build_dataset(&config(8), &a).unwrap();
    build_dataset(&DatasetConfig { threads: 2, ..config(8) }, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = dir.path().join("c.bin");
    build_dataset(&config(9), &c).unwrap();
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn stored_labels_are_the_expert_labels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    build_dataset(&config(3), &path).unwrap();
    let ds = Dataset::read(&path).unwrap();
    let mut seen = [false; 3];
    for e in &ds.examples {
        assert_eq!(e.labels, expert_labels(&e.state));
        assert_eq!(e.difficulty, difficulty(&e.state));
        for l in &e.labels {
            seen[l.code() as usize] = true;
        }
    }
    assert!(seen.iter().all(|&s| s), "all three label kinds appear");
}

#[test]
fn every_scenario_is_present() {
    let ds = generate(&config(5)).unwrap();
    for d in 1..=3 {
        for a in 1..=3 {
            assert!(ds
                .examples
                .iter()
                .any(|e| e.state.defenders.len() == d && e.state.intruders.len() == a));
        }
    }
}

#[test]
fn low_temperature_favours_hard_examples() {
    let uniform = generate(&DatasetConfig {
        bias_temperature: f64::INFINITY,
        ..config(6)
    })
    .unwrap();
    let biased = generate(&DatasetConfig {
        bias_temperature: 0.5,
        ..config(6)
    })
    .unwrap();
    assert_eq!(uniform.stats.accepted, uniform.stats.proposed);
    assert!(biased.stats.accepted < biased.stats.proposed);
    assert!(biased.mean_difficulty() > uniform.mean_difficulty() + 0.05);
}

#[test]
fn damaged_files_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    build_dataset(&config(2), &path).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(Dataset::read(&path), Err(Error::Format { .. })));
    fs::write(&path, b"not a dataset").unwrap();
    assert!(matches!(Dataset::read(&path), Err(Error::Format { .. })));
    assert!(matches!(
        Dataset::read(&dir.path().join("missing.bin")),
        Err(Error::NotFound { .. })
    ));
}

#[test]
fn training_run_leaves_a_loadable_checkpoint_and_metrics() {
    let ds = generate(&config(7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        policy: PolicyConfig {
            width: 2,
            hidden: 12,
            feature: 12,
            decoded: 6,
            ..PolicyConfig::default()
        },
        batch_size: 16,
        iterations: 30,
        checkpoint_every: 0,
        log_every: 10,
        ..TrainConfig::default()
    };
    let out = fit(&ds, &cfg, Some(dir.path())).unwrap();
    assert_eq!(out.checkpoints, vec![dir.path().join(FINAL_CHECKPOINT)]);
    let (policy, meta) = checkpoint::load(&out.checkpoints[0]).unwrap();
    assert_eq!(policy, out.policy);
    assert_eq!(meta.fov, ds.config.fov);
    let metrics = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    assert_eq!(lines.count(), 3);
}
