//! Sparse Bayesian Poisson factorization of sample-by-species count tables.
//!
//! Each sample carries a binary "barcode" of active factors, each species a
//! binary preference vector, and factor activity is linked to covariates and
//! sites through a probit regression with spatial Gaussian-process effects.

pub mod archive;
pub mod data_model;
pub mod distributions;
pub mod error;
pub mod gibbs;
pub mod io;
pub mod latent_regression;
pub mod posthoc;
pub mod simulation;

pub use archive::{ChainArchive, Dims, Draw, PosteriorArchive};
pub use data_model::{CountMatrix, CovariateMatrix, FactorState, HyperParams, LoadingState};
pub use distributions::RngStream;
pub use error::{BarcodeError, Result};
pub use gibbs::{fit, SweepConfig};
pub use latent_regression::SiteGeometry;
