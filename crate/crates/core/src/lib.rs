//! Sampling collaborative-filtering datasets while preserving the relative
//! ranking of recommendation algorithms.
//!
//! The crate covers the whole loop: loading and splitting interaction data
//! ([`dataset`]), sampling strategies ([`samplers`], [`svp`]), an algorithm
//! roster with full-ranking evaluation ([`recommenders`]), Kendall's tau
//! based ranking-preservation scores ([`benchmark`]), a 53-dimensional
//! dataset embedding ([`featurizer`]) and a small meta-learner that predicts
//! which sampler to use ([`genie`]). [`store`] and [`pipeline`] wire these
//! into reproducible experiment grids.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the usual choice.

pub mod benchmark;
pub mod dataset;
pub mod eigen;
pub mod error;
pub mod featurizer;
pub mod genie;
pub mod graph;
pub mod pipeline;
pub mod recommenders;
pub mod rng;
pub mod samplers;
pub mod scalar;
pub mod store;
pub mod svp;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ModelParams = recommenders::ModelParams<f64>;
pub type ModelParams32 = recommenders::ModelParams<f32>;
pub type GenieModel = genie::GenieModel<f64>;
pub type ProxyTrace = svp::ProxyTrace<f64>;
