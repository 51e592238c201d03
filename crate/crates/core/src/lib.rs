//! Synthetic labeled tag images: a parametric renderer, constrained
//! label-preserving augmentations with analytic gradients, handmade and
//! real-data augmentations, a small adversarial trainer that fits the
//! augmentation parameters, and evaluation tooling.

pub mod adversarial;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod diff_ops;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod pyramid_aug;
pub mod real_aug;
pub mod seed;
pub mod tag_model;

pub use error::{Error, Result};
pub use image::Image;
pub use tag_model::{RenderOutput, TagGeometry, TagLabel};
