use std::fs;
use std::path::Path;
use std::process::Command;

use mldgseg_core::data::PhantomConfig;
use mldgseg_harness::*;

fn tiny(out: &Path) -> ExperimentConfig {
    let bench = ExperimentConfig::benchmark();
    ExperimentConfig {
        out: out.to_path_buf(),
        phantom: PhantomConfig {
            train_subjects: 2,
            validation_subjects: 1,
            test_subjects: 2,
            ..bench.phantom.clone()
        },
        train: mldgseg_core::trainer::TrainConfig {
            epochs: 2,
            batch_size: 1,
            patches_per_subject: 4,
            augment_per_subject: 2,
            ..bench.train.clone()
        },
        ..bench
    }
}

#[test]
fn synth_train_predict_evaluate_emits_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let manifest = cmd_synth(&cfg).unwrap();
    assert!(manifest.starts_with(dir.path()));
    let ckpt = cmd_train(&cfg).unwrap();
    assert_eq!(ckpt, cfg.run_dir().join(CHECKPOINT_FILE));
    let log = fs::read_to_string(cfg.run_dir().join(TRAIN_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 1 + cfg.train.epochs);
    let preds = cmd_predict(&cfg).unwrap();
    assert_eq!(preds.len(), 2);
    let records = cmd_evaluate(&cfg).unwrap();
    assert_eq!(records.procedure, "mldg");
    assert_eq!(records.records.len(), 2);
    let summary = fs::read_to_string(cfg.run_dir().join(SUMMARY_FILE)).unwrap();
    assert!(summary.starts_with("procedure,dice_mean,dice_std,assd_mean,assd_std,stars"));
    let features = cmd_export_features(&cfg).unwrap();
    let text = fs::read_to_string(features).unwrap();
    // 4 domains × 2 test subjects × feature_patches rows plus the header.
    assert_eq!(text.lines().count(), 1 + 4 * 2 * cfg.feature_patches);
}

#[test]
fn oracle_consumes_only_target_training_subjects() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        procedure: Procedure::Oracle,
        ..tiny(dir.path())
    };
    cmd_synth(&cfg).unwrap();
    cmd_train(&cfg).unwrap();
    let sampled = fs::read_to_string(cfg.run_dir().join(SAMPLED_FILE)).unwrap();
    let ids: Vec<&str> = sampled.lines().collect();
    assert_eq!(ids, ["lumbar_00", "lumbar_01"]);
}

#[test]
fn stats_compares_baseline_with_mldg_and_kshot() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny(dir.path());
    cmd_synth(&base).unwrap();
    for procedure in [Procedure::Baseline, Procedure::Mldg] {
        let cfg = ExperimentConfig { procedure, ..base.clone() };
        cmd_train(&cfg).unwrap();
        cmd_predict(&cfg).unwrap();
        cmd_evaluate(&cfg).unwrap();
    }
    let kshot = ExperimentConfig {
        procedure: Procedure::Kshot,
        k: 1,
        checkpoint: Some(base.out.join("mldg").join(CHECKPOINT_FILE)),
        ..base.clone()
    };
    cmd_finetune(&kshot).unwrap();
    cmd_predict(&kshot).unwrap();
    cmd_evaluate(&kshot).unwrap();
    let cfg = ExperimentConfig {
        compare: vec!["baseline".into(), "mldg".into(), "kshot_k1".into()],
        ..base
    };
    let rows = cmd_stats(&cfg).unwrap();
    assert_eq!(rows.len(), 3);
    let header = fs::read_to_string(cfg.out.join(REPORT_SUMMARY_FILE)).unwrap();
    assert!(header.lines().next().unwrap().contains(",stars,"));
    let long = fs::read_to_string(cfg.out.join(REPORT_LONG_FILE)).unwrap();
    assert_eq!(long.lines().count(), 1 + 3 * 2);
}

#[test]
fn synth_is_seed_deterministic() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let cfgs: Vec<ExperimentConfig> = dirs
        .iter()
        .zip([5, 5, 6])
        .map(|(d, seed)| ExperimentConfig {
            seed,
            phantom: PhantomConfig {
                train_subjects: 1,
                validation_subjects: 0,
                test_subjects: 0,
                ..ExperimentConfig::benchmark().phantom
            },
            ..tiny(d.path())
        })
        .collect();
    for c in &cfgs {
        cmd_synth(c).unwrap();
    }
    let file = |c: &ExperimentConfig| fs::read(c.out.join("data/lumbar/lumbar_00_image.mvol")).unwrap();
    assert_eq!(file(&cfgs[0]), file(&cfgs[1]));
    assert_ne!(file(&cfgs[0]), file(&cfgs[2]));
}

#[test]
fn config_violations_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        target: "cervical".into(),
        ..tiny(dir.path())
    };
    assert_eq!(cmd_train(&cfg).unwrap_err().kind(), "ConfigError");
    let cfg = ExperimentConfig {
        procedure: Procedure::Kshot,
        ..tiny(dir.path())
    };
    assert_eq!(cmd_finetune(&cfg).unwrap_err().kind(), "ConfigError");
    // No dataset was synthesized.
    assert_eq!(cmd_train(&tiny(dir.path())).unwrap_err().kind(), "IOError");
}

fn mldgseg(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mldgseg")).args(args).output().unwrap()
}

#[test]
fn cli_reports_one_line_errors_and_runs_commands() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = mldgseg(&["train", "--config", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error kind=IOError message=\""), "{err}");

    let out = mldgseg(&["train", "--procedure", "bogus"]);
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error kind=ConfigError"));
    let out = mldgseg(&["train", "--meta-mode", "second"]);
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error kind=ConfigError"));

    let cfg_path = dir.path().join("exp.toml");
    let run = dir.path().join("run");
    tiny(&run).write(&cfg_path).unwrap();
    let c = cfg_path.to_str().unwrap();
    let out = mldgseg(&["synth", "--config", c, "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let printed = String::from_utf8(out.stdout).unwrap();
    assert!(printed.trim().ends_with("manifest.toml"));
    let out = mldgseg(&["train", "--config", c, "--seed", "3", "--procedure", "baseline"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("baseline").join(CHECKPOINT_FILE).exists());

    let out = mldgseg(&["profile", "benchmark"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let parsed: ExperimentConfig = toml::from_str(&text).unwrap();
    assert_eq!(parsed, ExperimentConfig::benchmark());
}
