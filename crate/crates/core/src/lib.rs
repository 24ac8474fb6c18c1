//! Learned collective variables for enhanced sampling on model systems.
//!
//! The pipeline runs unbiased dynamics on an analytic potential, reduces the
//! trajectory with time-lagged ICA, trains a time-lagged variational encoder
//! whose one-dimensional latent becomes the collective variable, compiles the
//! whole transform into a closed-form expression, biases along it with
//! well-tempered (multi-walker) metadynamics, reweights the biased samples to
//! free energies and reuses the same variable on perturbed systems.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cvexpr;
pub mod error;
pub mod featurize;
pub mod matrix;
pub mod metad;
pub mod plot;
pub mod reweight;
pub mod tica;
pub mod transfer;
pub mod vde;
pub mod worldbench;

pub use cvexpr::{CvExpression, CvPipeline};
pub use error::{Error, Result};
pub use featurize::{FeatureBlock, FeatureKind, FeatureSpec, Scaler};
pub use matrix::FeatureMatrix;
pub use metad::{BiasState, BiasedCv, Hill, MetadConfig, MetadRun};
pub use reweight::{FesEstimate, MbarInput, MbarResult, WeightedSamples};
pub use tica::{TicaModel, TicaProjection};
pub use transfer::{SystemMap, TransferReport};
pub use vde::{Activation, MlpSpec, TrainConfig, VdeModel};
pub use worldbench::{PotentialSpec, Thermostat, Trajectory};
