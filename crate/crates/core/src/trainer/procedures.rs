use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::meta::{
    meta_gradient, meta_split, outer_step, BatchObjective, MeanObjective, MetaGradient,
    OptimizerState, Sample,
};
use super::TrainConfig;
use crate::data::{augment, sample_patches, Domain, Patch, Subject};
use crate::diffcore::{ParamSet, Scalar};
use crate::error::{Error, Result};
use crate::evalstats::dice;
use crate::inference::{default_stride, largest_connected_component, sliding_window_predict};
use crate::segnet::{encoder_bottleneck_freeze_mask, FreezeMask, SegNet};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean meta-train (or pooled) batch loss over the epoch.
    pub f: f64,
    /// Mean meta-test loss at the adapted parameters.
    pub g: Option<f64>,
    pub validation_dice: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters after the epoch with the highest validation Dice.
    pub best: ParamSet<T>,
    pub best_epoch: usize,
    pub best_dice: f64,
    pub last: ParamSet<T>,
    pub log: Vec<EpochLog>,
    /// Subjects whose patches were drawn into any batch.
    pub sampled_subjects: BTreeSet<String>,
    pub meta_splits: usize,
}

#[derive(Debug, Clone)]
pub struct KShotOutcome<T> {
    pub params: ParamSet<T>,
    pub patch_count: usize,
    /// Mean fine-tuning loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// `⌈total patches / (batch_size · #domains)⌉`.
pub fn iterations_per_epoch(total_patches: usize, batch_size: usize, domains: usize) -> usize {
    total_patches.div_ceil(batch_size * domains).max(1)
}

/// Samples and augments the fixed per-run patch pool of one domain.
pub fn prepare_patches(
    domain: &Domain,
    config: &TrainConfig,
    extent: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Patch>> {
    let mut out = Vec::new();
    for subject in &domain.subjects {
        let mut patches = sample_patches(subject, config.patches_per_subject, extent, rng)?;
        augment(&mut patches, config.augment_per_subject, rng);
        out.extend(patches);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("domain {} yielded no patches", domain.name)));
    }
    Ok(out)
}

pub fn to_sample<T: Scalar>(patch: &Patch, seed: u64) -> Result<Sample<T>> {
    Ok(Sample {
        image: patch.image_tensor(),
        target: patch.target()?.into_tensor(),
        seed,
    })
}

fn draw<T: Scalar>(
    pool: &[Patch],
    count: usize,
    rng: &mut impl Rng,
    seen: &mut BTreeSet<String>,
) -> Result<Vec<Sample<T>>> {
    (0..count)
        .map(|_| {
            let p = &pool[rng.gen_range(0..pool.len())];
            seen.insert(p.subject.clone());
            to_sample(p, rng.gen())
        })
        .collect()
}

/// Mean Dice (percent) of LCC-post-processed sliding-window predictions.
pub fn validation_dice<T: Scalar>(
    net: &SegNet,
    params: &ParamSet<T>,
    validation: &[Subject],
    stride: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for s in validation {
        let pred = largest_connected_component(&sliding_window_predict(net, params, &s.volume, stride)?);
        total += dice(&pred, &s.label)?;
    }
    Ok(total / validation.len() as f64)
}

/// One MLDG iteration on prepared batches.
pub fn mldg_step<T: Scalar>(
    net: &SegNet,
    params: &mut ParamSet<T>,
    state: &mut OptimizerState<T>,
    meta_train: &[Vec<Sample<T>>],
    meta_test: &[Sample<T>],
    config: &TrainConfig,
    freeze: Option<&FreezeMask>,
) -> Result<MetaGradient<T>> {
    let f = MeanObjective(
        meta_train
            .iter()
            .map(|b| BatchObjective { net, samples: b })
            .collect(),
    );
    let g = BatchObjective {
        net,
        samples: meta_test,
    };
    let meta = meta_gradient(&f, &g, params, config)?;
    outer_step(params, &meta.grad, state, config, freeze)?;
    Ok(meta)
}

/// One plain minibatch iteration.
pub fn baseline_step<T: Scalar>(
    net: &SegNet,
    params: &mut ParamSet<T>,
    state: &mut OptimizerState<T>,
    batch: &[Sample<T>],
    config: &TrainConfig,
    freeze: Option<&FreezeMask>,
) -> Result<T> {
    use super::meta::Objective;
    let (loss, grad) = BatchObjective {
        net,
        samples: batch,
    }
    .value_and_grad(params)?;
    outer_step(params, &grad, state, config, freeze)?;
    Ok(loss)
}

struct Selection<T> {
    best: Option<(ParamSet<T>, usize, f64)>,
    log: Vec<EpochLog>,
}

impl<T: Scalar> Selection<T> {
    fn record(&mut self, params: &ParamSet<T>, entry: EpochLog) {
        let better = self
            .best
            .as_ref()
            .is_none_or(|(_, _, d)| entry.validation_dice > *d);
        if better {
            self.best = Some((params.clone(), entry.epoch, entry.validation_dice));
        }
        self.log.push(entry);
    }
}

fn check_inputs(domains: &[Domain], validation: &[Subject], config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if validation.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    if domains.is_empty() {
        return Err(Error::Config("no training domains".into()));
    }
    for d in domains {
        if d.subjects.is_empty() {
            return Err(Error::Data(format!("domain {} has no subjects", d.name)));
        }
    }
    Ok(())
}

fn finish<T: Scalar>(sel: Selection<T>, last: ParamSet<T>, seen: BTreeSet<String>, splits: usize) -> TrainOutcome<T> {
    let (best, best_epoch, best_dice) = sel.best.expect("at least one epoch");
    TrainOutcome {
        best,
        best_epoch,
        best_dice,
        last,
        log: sel.log,
        sampled_subjects: seen,
        meta_splits: splits,
    }
}

/// Meta-learning domain generalization over the source domains.
pub fn mldg_train<T: Scalar>(
    net: &SegNet,
    init: ParamSet<T>,
    sources: &[Domain],
    validation: &[Subject],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    check_inputs(sources, validation, config)?;
    if sources.len() < 2 {
        return Err(Error::Config(format!(
            "MLDG needs at least 2 source domains, got {}",
            sources.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let extent = net.config().patch_extent;
    let pools = sources
        .iter()
        .map(|d| prepare_patches(d, config, extent, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let total: usize = pools.iter().map(Vec::len).sum();
    let iters = iterations_per_epoch(total, config.batch_size, sources.len());
    let ids: Vec<usize> = (0..sources.len()).collect();
    let stride = config.validation_stride.unwrap_or(default_stride(extent));

    let mut params = init;
    let mut state = OptimizerState::new(&params);
    let mut sel = Selection { best: None, log: Vec::new() };
    let mut seen = BTreeSet::new();
    let mut splits = 0;
    for epoch in 1..=config.epochs {
        let (mut f_sum, mut g_sum) = (0.0, 0.0);
        for _ in 0..iters {
            let split = meta_split(&ids, &mut rng)?;
            splits += 1;
            let train = split
                .meta_train
                .iter()
                .map(|&d| draw(&pools[d], config.batch_size, &mut rng, &mut seen))
                .collect::<Result<Vec<_>>>()?;
            let test = draw(&pools[split.meta_test[0]], config.batch_size, &mut rng, &mut seen)?;
            let meta = mldg_step(net, &mut params, &mut state, &train, &test, config, None)?;
            f_sum += meta.f_value.re();
            g_sum += meta.g_value.map_or(0.0, |g| g.re());
        }
        let entry = EpochLog {
            epoch,
            f: f_sum / iters as f64,
            g: (config.beta != 0.0).then(|| g_sum / iters as f64),
            validation_dice: validation_dice(net, &params, validation, stride)?,
        };
        sel.record(&params, entry);
    }
    Ok(finish(sel, params, seen, splits))
}

/// Vanilla training on the pooled patches of all given domains.
pub fn baseline_train<T: Scalar>(
    net: &SegNet,
    init: ParamSet<T>,
    sources: &[Domain],
    validation: &[Subject],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    check_inputs(sources, validation, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let extent = net.config().patch_extent;
    let mut pool = Vec::new();
    for d in sources {
        pool.extend(prepare_patches(d, config, extent, &mut rng)?);
    }
    let batch = config.batch_size * sources.len();
    let iters = iterations_per_epoch(pool.len(), config.batch_size, sources.len());
    let stride = config.validation_stride.unwrap_or(default_stride(extent));

    let mut params = init;
    let mut state = OptimizerState::new(&params);
    let mut sel = Selection { best: None, log: Vec::new() };
    let mut seen = BTreeSet::new();
    for epoch in 1..=config.epochs {
        let mut f_sum = 0.0;
        for _ in 0..iters {
            let samples = draw(&pool, batch, &mut rng, &mut seen)?;
            f_sum += baseline_step(net, &mut params, &mut state, &samples, config, None)?.re();
        }
        let entry = EpochLog {
            epoch,
            f: f_sum / iters as f64,
            g: None,
            validation_dice: validation_dice(net, &params, validation, stride)?,
        };
        sel.record(&params, entry);
    }
    Ok(finish(sel, params, seen, 0))
}

/// Baseline training restricted to the target domain's own training subjects.
pub fn oracle_train<T: Scalar>(
    net: &SegNet,
    init: ParamSet<T>,
    target: &Domain,
    validation: &[Subject],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    baseline_train(net, init, std::slice::from_ref(target), validation, config)
}

/// Fine-tunes decoder and head on `per-subject patches × k` target patches
/// with the encoder frozen and a fresh optimizer.
pub fn kshot_finetune<T: Scalar>(
    net: &SegNet,
    params: &ParamSet<T>,
    target_subjects: &[Subject],
    k: usize,
    config: &TrainConfig,
) -> Result<KShotOutcome<T>> {
    config.validate()?;
    if k == 0 {
        return Err(Error::Config("k-shot fine-tuning needs k ≥ 1".into()));
    }
    if k > target_subjects.len() {
        return Err(Error::Config(format!(
            "k = {k} exceeds the {} available target subjects",
            target_subjects.len()
        )));
    }
    let reference = net.init_params::<T>(0);
    if !params.is_congruent(&reference) {
        return Err(Error::Contract("checkpoint does not match the network".into()));
    }
    let freeze = encoder_bottleneck_freeze_mask(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let extent = net.config().patch_extent;
    let mut patches = Vec::new();
    for s in &target_subjects[..k] {
        patches.extend(sample_patches(s, config.kshot_patches_per_subject, extent, &mut rng)?);
    }
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut params = params.clone();
    let mut state = OptimizerState::new(&params);
    let mut epoch_losses = Vec::with_capacity(config.finetune_epochs);
    for _ in 0..config.finetune_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| to_sample(&patches[i], rng.gen()))
                .collect::<Result<Vec<Sample<T>>>>()?;
            sum += baseline_step(net, &mut params, &mut state, &batch, config, Some(&freeze))?.re();
            steps += 1;
        }
        epoch_losses.push(sum / steps as f64);
    }
    Ok(KShotOutcome {
        params,
        patch_count: patches.len(),
        epoch_losses,
    })
}

/// CSV columns: epoch, F, G (blank when absent), validation Dice, checkpoint
/// (filled on the selected epoch).
pub fn write_training_log(
    path: &Path,
    log: &[EpochLog],
    best_epoch: usize,
    checkpoint: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let io = |e: std::io::Error| Error::io(path, e);
    let csv_err = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    w.write_record(["epoch", "F", "G", "validation_dice", "checkpoint"])
        .map_err(csv_err)?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.f.to_string(),
            e.g.map(|g| g.to_string()).unwrap_or_default(),
            e.validation_dice.to_string(),
            if e.epoch == best_epoch {
                checkpoint.display().to_string()
            } else {
                String::new()
            },
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io)
}
