//! Weakly contrastive self-supervised representation learning for SAR-like
//! imagery.
//!
//! A pretext task combines batch instance discrimination (each position in a
//! minibatch is its own class, scored by a freshly initialized head) with
//! feature clustering (a variance loss pulling augmented views together,
//! ramped in on a linear schedule). Around that sit the augmentation
//! pipeline, the training loop with per-epoch parameter averaging, dataset
//! splits for small-sample experiments, and linear-probe / fine-tune
//! evaluation.

pub mod augment;
pub mod cli;
pub mod clustering;
pub mod data;
pub mod discrimination;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod nn;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
