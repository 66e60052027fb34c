//! Multi-task decoder that splits brain embeddings into segmentation,
//! concept, caption and blurry-latent predictions.

pub mod model;
pub mod schedule;
pub mod train;

pub use model::{attention, DecoderDims, Decoupler, DecouplerConfig};
pub use schedule::{schedule_weight, total_loss, LossWeights, ProgressiveSchedule, Task};
pub use train::{
    decoder_dims, decoupler_from_checkpoint, read_log_csv, write_log_csv, DecouplerEpoch, DecouplerTargets,
    DecouplerTrainer, LogRow, SEG_FACTOR,
};
