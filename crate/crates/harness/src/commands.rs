use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use mldgseg_core::data::{
    generate_phantom_dataset, load_subject, read_label, sample_patches, write_label,
    DatasetManifest, Domain, LabelMap, Role, Subject,
};
use mldgseg_core::diffcore::{read_checkpoint, write_checkpoint, ParamSet};
use mldgseg_core::evalstats::{
    assd, dice, emit_report, export_features, MetricsRecord, ProcedureRecords, SummaryRow,
};
use mldgseg_core::inference::{default_stride, largest_connected_component, sliding_window_predict};
use mldgseg_core::segnet::SegNet;
use mldgseg_core::trainer::{
    baseline_train, kshot_finetune, mldg_train, oracle_train, write_training_log, TrainConfig,
    TrainOutcome,
};
use mldgseg_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{derive_seed, ExperimentConfig, Procedure};

pub const CHECKPOINT_FILE: &str = "checkpoint.mckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SAMPLED_FILE: &str = "sampled_subjects.txt";
pub const PREDICTIONS_DIR: &str = "predictions";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const REPORT_LONG_FILE: &str = "report_long.csv";
pub const REPORT_SUMMARY_FILE: &str = "report_summary.csv";

/// Source training domains, source validation subjects, and the target's subjects by role.
pub struct Split {
    pub sources: Vec<Domain>,
    pub source_validation: Vec<Subject>,
    pub target_train: Vec<Subject>,
    pub target_validation: Vec<Subject>,
    pub target_test: Vec<Subject>,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(cfg.seed, "train"),
        ..cfg.train.clone()
    }
}

fn stride(cfg: &ExperimentConfig) -> usize {
    cfg.train
        .validation_stride
        .unwrap_or(default_stride(cfg.network.patch_extent))
}

fn subjects(manifest: &DatasetManifest, domain: &str, role: Role) -> Result<Vec<Subject>> {
    manifest
        .domain(domain)?
        .subjects
        .iter()
        .filter(|s| s.role == role)
        .map(load_subject)
        .collect()
}

pub fn load_split(cfg: &ExperimentConfig) -> Result<Split> {
    let manifest = DatasetManifest::read(&cfg.manifest_path())?;
    let mut sources = Vec::new();
    let mut source_validation = Vec::new();
    for name in &cfg.sources {
        sources.push(Domain::new(name.clone(), subjects(&manifest, name, Role::Train)?)?);
        source_validation.extend(subjects(&manifest, name, Role::Validation)?);
    }
    Ok(Split {
        sources,
        source_validation,
        target_train: subjects(&manifest, &cfg.target, Role::Train)?,
        target_validation: subjects(&manifest, &cfg.target, Role::Validation)?,
        target_test: subjects(&manifest, &cfg.target, Role::Test)?,
    })
}

/// Generates the phantom dataset under `<out>/data` and returns its manifest path.
pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let phantom = mldgseg_core::data::PhantomConfig {
        seed: derive_seed(cfg.seed, "phantom"),
        ..cfg.phantom.clone()
    };
    generate_phantom_dataset(&phantom, &cfg.out.join("data"))
}

/// Runs the configured training procedure with an in-memory split.
pub fn train_on_split(cfg: &ExperimentConfig, split: &Split) -> Result<(SegNet, TrainOutcome<f32>)> {
    cfg.validate()?;
    let net = SegNet::new(cfg.network.clone())?;
    let init = net.init_params::<f32>(derive_seed(cfg.seed, "init"));
    let tc = train_config(cfg);
    let outcome = match cfg.procedure {
        Procedure::Baseline => baseline_train(&net, init, &split.sources, &split.source_validation, &tc)?,
        Procedure::Mldg => mldg_train(&net, init, &split.sources, &split.source_validation, &tc)?,
        Procedure::Oracle => {
            let target = Domain::new(cfg.target.clone(), split.target_train.clone())?;
            oracle_train(&net, init, &target, &split.target_validation, &tc)?
        }
        Procedure::Kshot => {
            return Err(Error::Config("kshot is run by the finetune command".into()));
        }
    };
    Ok((net, outcome))
}

/// Trains baseline, mldg, or oracle; writes the selected checkpoint, the
/// epoch log, and the list of subjects that contributed patches.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<PathBuf> {
    if cfg.procedure == Procedure::Kshot {
        return cmd_finetune(cfg);
    }
    cfg.validate()?;
    let split = load_split(cfg)?;
    let (_, outcome) = train_on_split(cfg, &split)?;
    let dir = cfg.run_dir();
    create_dir(&dir)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    write_checkpoint(&ckpt, &outcome.best)?;
    // Relative to the run directory so logs do not depend on where `out` lives.
    let log = dir.join(TRAIN_LOG_FILE);
    write_training_log(&log, &outcome.log, outcome.best_epoch, Path::new(CHECKPOINT_FILE))?;
    write_sampled(&dir.join(SAMPLED_FILE), &outcome.sampled_subjects)?;
    Ok(ckpt)
}

fn write_sampled(path: &Path, ids: &BTreeSet<String>) -> Result<()> {
    let text: String = ids.iter().map(|s| format!("{s}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_params(net: &SegNet, path: &Path) -> Result<ParamSet<f32>> {
    let params = read_checkpoint::<f32>(path)?;
    if !params.is_congruent(&net.init_params::<f32>(0)) {
        return Err(Error::Contract(format!(
            "checkpoint {} does not match the configured network",
            path.display()
        )));
    }
    Ok(params)
}

/// k-shot fine-tuning of `cfg.checkpoint` on the first k target training subjects.
pub fn cmd_finetune(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let cfg = ExperimentConfig {
        procedure: Procedure::Kshot,
        ..cfg.clone()
    };
    cfg.validate()?;
    let net = SegNet::new(cfg.network.clone())?;
    let source = cfg.checkpoint.as_deref().expect("validated");
    let params = load_params(&net, source)?;
    let manifest = DatasetManifest::read(&cfg.manifest_path())?;
    let target_train = subjects(&manifest, &cfg.target, Role::Train)?;
    let tc = TrainConfig {
        seed: derive_seed(cfg.seed, "kshot"),
        ..cfg.train.clone()
    };
    let outcome = kshot_finetune(&net, &params, &target_train, cfg.k, &tc)?;
    let dir = cfg.run_dir();
    create_dir(&dir)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    write_checkpoint(&ckpt, &outcome.params)?;
    let log = dir.join("finetune_log.csv");
    let text: String = std::iter::once("epoch,loss\n".to_string())
        .chain(
            outcome
                .epoch_losses
                .iter()
                .enumerate()
                .map(|(i, l)| format!("{},{l}\n", i + 1)),
        )
        .collect();
    fs::write(&log, text).map_err(|e| Error::io(&log, e))?;
    Ok(ckpt)
}

/// The run's own checkpoint unless predicting a non-kshot run from an explicit path.
fn run_checkpoint(cfg: &ExperimentConfig) -> PathBuf {
    match (&cfg.checkpoint, cfg.procedure) {
        (Some(path), p) if p != Procedure::Kshot => path.clone(),
        _ => cfg.run_dir().join(CHECKPOINT_FILE),
    }
}

/// Sliding-window prediction plus LCC for every target test subject.
pub fn predict_subjects(
    net: &SegNet,
    params: &ParamSet<f32>,
    subjects: &[Subject],
    stride: usize,
) -> Result<Vec<LabelMap>> {
    subjects
        .iter()
        .map(|s| Ok(largest_connected_component(&sliding_window_predict(net, params, &s.volume, stride)?)))
        .collect()
}

pub fn cmd_predict(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.network.validate()?;
    let net = SegNet::new(cfg.network.clone())?;
    let params = load_params(&net, &run_checkpoint(cfg))?;
    let manifest = DatasetManifest::read(&cfg.manifest_path())?;
    let test = subjects(&manifest, &cfg.target, Role::Test)?;
    let preds = predict_subjects(&net, &params, &test, stride(cfg))?;
    let dir = cfg.run_dir().join(PREDICTIONS_DIR);
    create_dir(&dir)?;
    test.iter()
        .zip(&preds)
        .map(|(s, p)| {
            let path = dir.join(format!("{}_pred.mvol", s.id));
            write_label(&path, p)?;
            Ok(path)
        })
        .collect()
}

/// Dice and ASSD of one prediction. An empty prediction scores Dice 0 and the
/// volume diagonal as ASSD so that paired tests keep every subject.
pub fn score(subject: &str, pred: &LabelMap, truth: &LabelMap) -> Result<MetricsRecord> {
    let spacing = truth.spacing().map(f64::from);
    let d = dice(pred, truth)?;
    let a = match assd(pred, truth, spacing) {
        Err(Error::EmptyMask(_)) => {
            let ex = truth.extents();
            (0..3)
                .map(|i| (ex[i] as f64 * spacing[i]).powi(2))
                .sum::<f64>()
                .sqrt()
        }
        other => other?,
    };
    Ok(MetricsRecord {
        subject: subject.to_string(),
        dice: d,
        assd: a,
    })
}

/// Scores the saved predictions against the target test labels; writes
/// `metrics.csv` (long form) and `summary.csv` in the run directory.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<ProcedureRecords> {
    let manifest = DatasetManifest::read(&cfg.manifest_path())?;
    let dir = cfg.run_dir();
    let pred_dir = dir.join(PREDICTIONS_DIR);
    let mut records = Vec::new();
    for entry in manifest
        .domain(&cfg.target)?
        .subjects
        .iter()
        .filter(|s| s.role == Role::Test)
    {
        let pred = read_label(&pred_dir.join(format!("{}_pred.mvol", entry.id)))?;
        let truth = read_label(&entry.label)?;
        records.push(score(&entry.id, &pred, &truth)?);
    }
    let procs = ProcedureRecords {
        procedure: cfg.run_name(),
        records,
    };
    emit_report(
        std::slice::from_ref(&procs),
        &procs.procedure,
        &dir.join(METRICS_FILE),
        &dir.join(SUMMARY_FILE),
    )?;
    Ok(procs)
}

pub fn read_metrics(path: &Path) -> Result<ProcedureRecords> {
    #[derive(serde::Deserialize)]
    struct Row {
        subject: String,
        procedure: String,
        dice: f64,
        assd: f64,
    }
    let fmt = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut procedure = None;
    let mut records = Vec::new();
    for row in csv::Reader::from_reader(file).deserialize::<Row>() {
        let row = row.map_err(fmt)?;
        procedure.get_or_insert_with(|| row.procedure.clone());
        records.push(MetricsRecord {
            subject: row.subject,
            dice: row.dice,
            assd: row.assd,
        });
    }
    let procedure = procedure.ok_or_else(|| Error::Data(format!("{} has no rows", path.display())))?;
    Ok(ProcedureRecords { procedure, records })
}

/// Paired comparison of the `compare` runs; the first is the reference.
pub fn cmd_stats(cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    let Some(reference) = cfg.compare.first() else {
        return Err(Error::Config("compare lists no procedures".into()));
    };
    let procs = cfg
        .compare
        .iter()
        .map(|name| read_metrics(&cfg.out.join(name).join(METRICS_FILE)))
        .collect::<Result<Vec<_>>>()?;
    emit_report(
        &procs,
        reference,
        &cfg.out.join(REPORT_LONG_FILE),
        &cfg.out.join(REPORT_SUMMARY_FILE),
    )
}

/// Bottleneck features of `feature_patches` random patches per test subject of every domain.
pub fn cmd_export_features(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let net = SegNet::new(cfg.network.clone())?;
    let params = load_params(&net, &run_checkpoint(cfg))?;
    let manifest = DatasetManifest::read(&cfg.manifest_path())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "features"));
    let mut patches = Vec::new();
    for name in manifest.domain_names() {
        for s in subjects(&manifest, name, Role::Test)? {
            for p in sample_patches(&s, cfg.feature_patches, cfg.network.patch_extent, &mut rng)? {
                patches.push((name.to_string(), p));
            }
        }
    }
    let dir = cfg.run_dir();
    create_dir(&dir)?;
    let path = dir.join(FEATURES_FILE);
    export_features(&net, &params, &patches, &path)?;
    Ok(path)
}

/// Per held-out target: baseline and mldg records, in that order.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub targets: Vec<(String, Vec<ProcedureRecords>)>,
    pub pooled: Vec<SummaryRow>,
}

/// Leave-one-domain-out: every manifest domain in turn is the target and the
/// others are sources. Runs train, predict, and evaluate for baseline and
/// mldg under `<out>/lodo/<target>`, then writes per-target and pooled reports.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let manifest = DatasetManifest::read(&cfg.manifest_path())?;
    let names: Vec<String> = manifest.domain_names().into_iter().map(String::from).collect();
    let mut targets = Vec::new();
    let mut pooled: Vec<ProcedureRecords> = Vec::new();
    for target in &names {
        let base = ExperimentConfig {
            manifest: Some(cfg.manifest_path()),
            sources: names.iter().filter(|n| *n != target).cloned().collect(),
            target: target.clone(),
            checkpoint: None,
            compare: vec!["baseline".into(), "mldg".into()],
            out: cfg.out.join("lodo").join(target),
            ..cfg.clone()
        };
        let mut procs = Vec::new();
        for procedure in [Procedure::Baseline, Procedure::Mldg] {
            let run = ExperimentConfig {
                procedure,
                ..base.clone()
            };
            cmd_train(&run)?;
            cmd_predict(&run)?;
            procs.push(cmd_evaluate(&run)?);
        }
        cmd_stats(&base)?;
        for (i, p) in procs.iter().enumerate() {
            if pooled.len() <= i {
                pooled.push(ProcedureRecords {
                    procedure: p.procedure.clone(),
                    records: Vec::new(),
                });
            }
            pooled[i].records.extend(p.records.iter().cloned());
        }
        targets.push((target.clone(), procs));
    }
    let dir = cfg.out.join("lodo");
    let pooled = emit_report(
        &pooled,
        "baseline",
        &dir.join(REPORT_LONG_FILE),
        &dir.join(REPORT_SUMMARY_FILE),
    )?;
    Ok(SweepResult { targets, pooled })
}
