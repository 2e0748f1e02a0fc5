//! Confidence estimation for small neural classifiers by density modelling.
//!
//! The library trains a dense feedforward classifier, fits one diagonal
//! Gaussian per class on the pre-softmax feature vectors of the training
//! data, and scores new inputs with the Bayes posterior over those
//! densities. The softmax score is computed alongside for comparison,
//! together with an executable check of its scaling pathology: multiplying
//! the feature vector by any constant greater than one strictly inflates
//! the softmax score of the predicted class, while the density posterior
//! is anchored to where the training data actually lives.
//!
//! The [`distortions`], [`adversarial`] and [`experiments`] modules
//! reproduce the evaluation protocol at desk scale: Gaussian noise, blur
//! and JPEG-style compression sweeps normalized so clean images score 1,
//! plus failure counts on adversarially perturbed inputs.

// `!(x >= 0.0)` guards are used on purpose: unlike `x < 0.0` they also
// reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod confidence;
mod dct;
pub mod distortions;
mod error;
pub mod experiments;
pub mod idx;
mod math;
pub mod net;
pub mod plot;

pub use error::{Error, Result};
pub use net::{
    init_params, Activation, FeatureVector, Layer, LayerSpec, ModelParams, Sample, TrainConfig,
};
pub use confidence::{
    fit_densities, logsumexp, softmax, softmax_confidence, verify_softmax_scaling, ClassDensity,
    ConfidenceReport, DensityModel,
};
