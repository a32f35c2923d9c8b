//! Forward noising, ε-prediction training, and ancestral sampling.

mod sampler;
mod schedule;
mod train;

pub use sampler::{images_to_tensor, pixel_to_unit, sample, sample_range, unit_to_pixel, SampleOptions};
pub use schedule::{forward_mix, linear_schedule, p_sample_step, q_sample, reverse_mix, NoiseSchedule};
pub use train::{
    checkpoint_file_name, loss_step, loss_value, train, train_from_manifest, train_val_split, validation_loss,
    CheckpointRecord, NoisePredictor, TrainConfig, TrainRun,
};
