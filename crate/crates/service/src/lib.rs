//! HTTP job service for style-transfer runs and parameter sweeps.
//!
//! Jobs are queued on a bounded channel and executed one at a time per
//! worker thread. Every job owns a directory under `<data_dir>/jobs/<id>/`
//! holding `job.json`, its inputs, `frames/NNNN.png` and `losses.csv`, so a
//! restarted service re-lists finished jobs from disk. Clients poll for
//! progress.

mod error;
mod http;
mod jobs;

pub use error::ApiError;
pub use http::{router, serve};
pub use jobs::{
    JobKind, JobRecord, JobStatus, JobView, Service, ServiceConfig, SweepUpload,
    DEFAULT_QUEUE_CAPACITY, DEFAULT_WORKERS,
};
