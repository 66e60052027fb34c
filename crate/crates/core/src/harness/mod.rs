//! Configuration, run manifests and the data → train → infer → eval pipeline.

pub mod config;
pub mod manifest;
pub mod stages;

pub use config::{BackendKind, ExperimentConfig, BACKEND_CMD_ENV, BACKEND_ENV};
pub use manifest::{content_hash, Artifact, RunManifest, StageRecord, StageStatus, MANIFEST_FILE};
pub use stages::{
    checkpoint_encoders, evaluate, infer, layout, make_backend, prepare_data, run_pipeline, sample_seed, train_brain,
    train_decoupler, InferRequest, InferSummary, PipelineOptions, PipelineOutcome, STAGES,
};
