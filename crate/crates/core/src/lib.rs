//! Conditional re-enhancement of low-light images.
//!
//! A classical V-channel enhancer (gamma, histogram equalization, local HE,
//! an illumination-map brightener) proposes a per-pixel brightness target.
//! A small convolutional network then re-renders the RGB image under that
//! target while suppressing noise and colour drift.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod colorspace;
pub mod condition;
pub mod enhance;
pub mod error;
pub mod filters;
pub mod imgio;
pub mod lossmetrics;
pub mod netcore;
pub mod synthdata;
pub mod trainer;

pub use enhance::{ConditionMap, EnhancerSpec};
pub use error::{Error, Result};
pub use imgio::{ExposurePair, Image};
pub use netcore::{CreNetWeights, Tensor};
