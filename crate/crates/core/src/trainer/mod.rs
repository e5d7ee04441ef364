//! Meta-learning domain generalization and the comparison procedures:
//! pooled baseline, target-domain oracle, and k-shot fine-tuning.

mod meta;
mod procedures;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use meta::{
    inner_update, meta_gradient, meta_split, outer_step, BatchObjective, DomainSplit,
    GraphObjective, MeanObjective, MetaGradient, Objective, OptimizerState, Sample,
};
pub use procedures::{
    baseline_step, baseline_train, iterations_per_epoch, kshot_finetune, mldg_step, mldg_train,
    oracle_train, prepare_patches, to_sample, validation_dice, write_training_log, EpochLog,
    KShotOutcome, TrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaMode {
    #[default]
    Exact,
    FirstOrder,
}

impl std::str::FromStr for MetaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(MetaMode::Exact),
            "first_order" => Ok(MetaMode::FirstOrder),
            other => Err(Error::Config(format!(
                "meta mode {other:?} is neither exact nor first_order"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Inner step size.
    pub alpha: f64,
    /// Meta-test loss weight.
    pub beta: f64,
    /// Outer step scale, composed with `lr`.
    pub gamma: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Patches per domain per iteration.
    pub batch_size: usize,
    pub meta_mode: MetaMode,
    pub seed: u64,
    pub patches_per_subject: usize,
    pub augment_per_subject: usize,
    pub kshot_patches_per_subject: usize,
    pub finetune_epochs: usize,
    /// Sliding-window stride for validation; half the patch extent when unset.
    pub validation_stride: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 5e-5,
            epochs: 10,
            batch_size: 4,
            meta_mode: MetaMode::Exact,
            seed: 0,
            patches_per_subject: 50,
            augment_per_subject: 30,
            kshot_patches_per_subject: 5,
            finetune_epochs: 5,
            validation_stride: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0) || !(self.lr > 0.0) {
            return bad(format!("alpha ({}) and lr ({}) must be > 0", self.alpha, self.lr));
        }
        if !(self.beta >= 0.0) || !(self.gamma >= 0.0) {
            return bad(format!("beta ({}) and gamma ({}) must be ≥ 0", self.beta, self.gamma));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay {} must be ≥ 0", self.weight_decay));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if self.augment_per_subject > self.patches_per_subject {
            return bad(format!(
                "cannot augment {} of {} patches",
                self.augment_per_subject, self.patches_per_subject
            ));
        }
        if self.validation_stride == Some(0) {
            return bad("validation stride must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_are_enforced() {
        assert!(TrainConfig::default().validate().is_ok());
        for cfg in [
            TrainConfig { alpha: 0.0, ..Default::default() },
            TrainConfig { lr: -1.0, ..Default::default() },
            TrainConfig { beta: -0.1, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
        assert_eq!("first_order".parse::<MetaMode>().unwrap(), MetaMode::FirstOrder);
        assert!("second".parse::<MetaMode>().is_err());
    }
}
