//! Hubel-Wiesel signature networks with unsupervised temporal-association
//! learning from video frames.
//!
//! The hierarchy has three layers: a low-level feature function
//! ([`features`]), class-specific layer-2 templates pooled over scale,
//! position and in-plane transformations ([`hwcore`]), and layer-3 complex
//! cells whose templates are layer-2 encodings of temporally adjacent video
//! frames ([`temporal`]). [`eval`] holds the verification and scoring tools,
//! [`synth`] the synthetic benchmark generator.

pub mod bundle;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod features;
pub mod hwcore;
pub mod imagecore;
pub mod io;
pub mod linalg;
pub mod synth;
pub mod temporal;

pub use error::{Error, Result};
