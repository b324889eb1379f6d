//! Multimodal survival modelling over bags of precomputed instance features.
//!
//! Patients carry one bag of feature vectors per available modality. Bags are
//! pooled with gated attention, fused across modalities, and scored by a
//! discrete-time hazard head. Training mixes a contrastive alignment term
//! with a censoring-aware survival likelihood.

pub mod aggregation;
pub mod alignment;
pub mod cli;
pub mod cohort;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod survival;
pub mod training;

pub use error::{Error, Result};
