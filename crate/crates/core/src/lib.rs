//! Anchor-based 3D lesion detection for PET/CT with optional anatomy priors.
//!
//! The crate covers the full forward path of a Retina U-Net style detector
//! with either a shifted-window transformer encoder or a plain convolutional
//! encoder, the box algebra around it, the training objectives as
//! value-and-gradient functions, the self-supervised corruption transforms,
//! detection metrics, and a synthetic phantom generator used for end-to-end
//! checks.

pub mod cli;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod nn;
pub mod phantom;
pub mod rng;
pub mod ssl;
pub mod volume;
