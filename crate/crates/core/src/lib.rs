//! Meta-learning domain generalization for volumetric binary segmentation.
//!
//! The crate is organised bottom-up: [`diffcore`] is a small differentiable
//! tensor engine with exact gradients and Hessian-vector products, [`segnet`]
//! builds the 3D U-Net-like backbone on it, [`losses`] holds the Generalized
//! Dice loss, and [`trainer`] implements meta-train/meta-test optimisation
//! alongside the baseline, oracle and k-shot procedures. [`data`],
//! [`inference`] and [`evalstats`] cover volumes, whole-volume prediction and
//! evaluation.

pub mod data;
pub mod diffcore;
pub mod error;
pub mod evalstats;
pub mod inference;
pub mod losses;
pub mod segnet;
pub mod trainer;

pub use error::{Error, Result};
