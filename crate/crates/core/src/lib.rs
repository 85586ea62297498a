//! Speaker diarization with xi-vector embeddings, domain-dependent
//! clustering and late combination of two engines.
//!
//! The stages live in their own modules ([`features`], [`segmentation`],
//! [`embeddings`], [`clustering`], [`resegmentation`], [`domain`],
//! [`scoring`]); [`pipeline`] wires them into corpus runs.

pub mod annotation;
pub mod clustering;
pub mod domain;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod linalg;
pub mod pipeline;
pub mod resegmentation;
pub mod scalar;
pub mod scoring;
pub mod segmentation;

pub use annotation::{Interval, TimedLabeling, Turn, Uem};
pub use error::{Error, Result};

pub type Plda = clustering::PldaModel<f64>;
pub type PldaF32 = clustering::PldaModel<f32>;
pub type Gmm = resegmentation::GmmModel<f64>;
pub type GmmF32 = resegmentation::GmmModel<f32>;
pub type Pca = embeddings::PcaModel<f64>;
pub type PcaF32 = embeddings::PcaModel<f32>;
pub type Mlp = domain::MlpModel<f64>;
pub type MlpF32 = domain::MlpModel<f32>;
