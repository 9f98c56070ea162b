//! Dirichlet Simplex Nest models.
//!
//! Observations are noisy draws around points `B θ` where `θ ~ Dir_K(α)` and
//! the columns of `B` are the extreme points of a latent simplex. This crate
//! recovers those extreme points with the Voronoi Latent Admixture (VLAD)
//! estimator: center the data, reduce to the top `K - 1` singular directions,
//! cluster with K-means, map the centroids back and extend them away from the
//! data center by an extension parameter `γ(α)` obtained by Monte Carlo.
//!
//! Modules:
//! - [`model`]: the generative model and synthetic data protocols.
//! - [`numerics`]: centering, covariance, truncated SVD, K-means.
//! - [`extension`]: Monte-Carlo extension parameters and tables.
//! - [`vlad`]: the estimator and barycentric weight recovery.
//! - [`alpha_est`]: concentration estimation by moment matching.
//! - [`baselines`]: GDM and SPA comparison estimators.
//! - [`eval`]: minimum-matching distance and held-out scores.
//! - [`io`]: CSV/JSON persistence.
//! - [`experiment`]: seeded simulation sweeps.

pub mod alpha_est;
pub mod baselines;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod extension;
pub mod io;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod simplex;
pub mod vlad;

pub use error::{DsnError, Result};
pub use model::{Dataset, Kernel, SimplexNest};
pub use vlad::VladFit;
