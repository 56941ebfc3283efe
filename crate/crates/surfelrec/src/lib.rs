//! Online neural-surfel reconstruction and rendering.
//!
//! The engine streams posed RGB-D frames, incrementally fuses them into a
//! global map of neural surfels, and renders novel views with a
//! rasterization-guided volume renderer. Everything is differentiable at
//! toy scale through the bundled reverse-mode toolkit in [`nn`].

pub mod camera;
pub mod dataset;
pub mod error;
pub mod frame;
pub mod fusion;
pub mod ingest;
pub mod mapio;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod raster;
pub mod render;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use frame::Frame;
pub use types::{CameraIntrinsics, Pose, Ray, Surfel, SurfelMap};
