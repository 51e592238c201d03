//! Adversarial fitting of the augmentation parameters: generator heads,
//! discriminator, Adam, the training loop and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod discriminator;
pub mod gan;
pub mod generator;
pub mod nn;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use gan::{
    corrupt_with_noise, detail_flip_rate, gan_step, history_csv, score_filter, score_images, step_batch, train,
    EpochRecord, GanState, HandmadeSource, RealSource, StepLosses, TrainConfig,
};
pub use generator::{GenCache, GenOutput, Generator, GeneratorConfig};
