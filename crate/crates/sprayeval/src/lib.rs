//! Spray-deposition evaluation toolkit: TNSR/LMSK file formats, the framed
//! stdio protocol for external inference engines, a memoizing engine
//! wrapper, dataset ingestion, a synthetic dataset generator, the
//! evaluation pipeline and its reports.
//!
//! The numerics live in [`sprayeval_core`], re-exported here as `core`.

pub use sprayeval_core as core;

pub mod bundle;
pub mod cache;
pub mod dataset;
pub mod error;
pub mod format;
pub mod pipeline;
pub mod protocol;
pub mod replay;
pub mod report;
pub mod synth;

pub use bundle::Bundle;
pub use cache::CachedEngine;
pub use dataset::{ingest, DatasetIndex, DatasetStats};
pub use error::{Error, Result};
pub use format::{read_mask, read_tensor, write_mask, write_tensor};
pub use pipeline::{run_pipeline, run_pipeline_with, EngineSpec, RunConfig, Stage};
pub use protocol::ExternalEngine;
pub use replay::{replay, ReplayReport};
pub use report::render_reports;
pub use synth::{generate, SynthConfig};
