//! Neural X-ray field reconstruction of 3D oral structures from simulated
//! panoramic projections.
//!
//! A multi-head coordinate network maps an axial position `(x, y)` to a full
//! column of voxel intensities. It is trained from panoramic projection rays
//! with randomly drawn per-ray sampling rates and a rate-corrected
//! log-sum-exp projection law.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod field;
pub mod geometry;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod render;
pub mod sampling;
pub mod training;
pub mod volume;

pub use config::{Ablation, RunConfig};
pub use error::{Error, Result};
pub use field::{EncoderConfig, FieldConfig, FieldModel, HeadMode, ModelShape, OutputMap};
pub use geometry::{FocalCurve, Ray};
pub use metrics::MetricReport;
pub use phantom::{generate_phantom, PhantomSpec};
pub use render::{ProjectionImage, RenderLaw, RenderParams};
pub use sampling::{SamplerConfig, SamplingMode};
pub use training::{reconstruct, train, AdamState, LrSchedule, TrainConfig};
pub use volume::{Dims, Volume};
