//! Sparse multivariate functional principal component analysis.
//!
//! Univariate FPCA models are fitted per variable by maximum likelihood over
//! a reduced-rank covariance whose eigenfunctions are weighted-Gram-Schmidt
//! orthonormalized basis expansions. Per-variable conditional-expectation
//! scores are stacked, their covariance eigendecomposed, and the resulting
//! eigenvectors combine the univariate components into multivariate
//! functional principal components. A simulation generator, error metrics,
//! and a Monte-Carlo benchmark harness round out the library.

pub mod basis;
pub mod bfgs;
pub mod covsmooth;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod mean;
pub mod orthonorm;
pub mod rng;
pub mod simgen;
pub mod ufpca;

pub use basis::{BasisKind, BasisSystem};
pub use error::{CoreError, DataError};
pub use dataset::{SparseDataset, Subject, VariableMeta};
pub use grid::QuadratureGrid;
pub use mean::{center, fit_mean, MeanModel};
pub use orthonorm::{weighted_mgs, OrthonormalSet};
pub use simgen::{generate, ScenarioConfig, TruthBundle};
pub use ufpca::{aic, fit, nll, nll_gradient, reduced_rank_cov, select_model, UnivariateModel, UnivariateParams};
