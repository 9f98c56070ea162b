//! The Dirichlet Simplex Nest generative model and synthetic data protocols.
//!
//! A model is a vertex matrix `B` (`D x K`, one extreme point per column), a
//! Dirichlet concentration and an observation kernel. Each observation is
//! drawn as `θ ~ Dir_K(α)`, `μ = B θ`, `x ~ F(· | μ)` with `E[x | μ] = μ`.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal, Poisson, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{DsnError, Result};

/// Concentration of the Dirichlet prior on vertex weights for the LDA-style
/// multinomial vertex prior.
pub const MULTINOMIAL_VERTEX_ETA: f64 = 0.1;

const SIMPLEX_SUM_TOL: f64 = 1e-9;

/// Observation kernel `F(· | μ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    /// `x = μ` exactly.
    Noiseless,
    /// `x ~ N(μ, σ² I)`.
    Gaussian { sigma: f64 },
    /// Independent `Poisson(μ_j)` coordinates.
    Poisson,
    /// `x ~ Multinomial(trials, μ)`; `μ` must be a probability vector.
    Multinomial { trials: u32 },
}

impl Kernel {
    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Noiseless => "noiseless",
            Kernel::Gaussian { .. } => "gaussian",
            Kernel::Poisson => "poisson",
            Kernel::Multinomial { .. } => "multinomial",
        }
    }

    pub fn is_count(&self) -> bool {
        matches!(self, Kernel::Poisson | Kernel::Multinomial { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                DsnError::param(format!("gaussian sigma must be positive, got {sigma}")),
            ),
            Kernel::Multinomial { trials: 0 } => {
                Err(DsnError::param("multinomial trials must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// The latent model: vertices, concentration and kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexNest {
    vertices: DMatrix<f64>,
    alpha: Vec<f64>,
    kernel: Kernel,
}

impl SimplexNest {
    /// Builds a model, rejecting affinely degenerate vertex sets and vertices
    /// outside the kernel's mean domain. A length-one `alpha` is broadcast.
    pub fn new(vertices: DMatrix<f64>, alpha: &[f64], kernel: Kernel) -> Result<Self> {
        let (dim, k) = vertices.shape();
        if k < 2 {
            return Err(DsnError::param(format!(
                "need at least 2 vertices, got {k}"
            )));
        }
        if dim + 1 < k {
            return Err(DsnError::param(format!(
                "dimension {dim} too small for {k} affinely independent vertices"
            )));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(DsnError::param("vertices must be finite"));
        }
        kernel.validate()?;
        let alpha = broadcast_alpha(alpha, k)?;
        check_kernel_domain(&vertices, &kernel)?;
        if affine_rank(&vertices) + 1 < k {
            return Err(DsnError::Degenerate(format!(
                "vertex matrix has affine rank below {}",
                k - 1
            )));
        }
        Ok(Self {
            vertices,
            alpha,
            kernel,
        })
    }

    /// Draws a random model following the simulation protocol: kernel
    /// specific vertex prior, then contraction toward the vertex mean by
    /// factors `c_k ~ Unif(c_min, 1)`.
    pub fn sample<R: Rng + ?Sized>(
        kernel: Kernel,
        dim: usize,
        k: usize,
        alpha: &[f64],
        c_min: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let raw = sample_vertices(dim, k, &kernel, rng)?;
        let skewed = skew_simplex(&raw, c_min, rng)?;
        Self::new(skewed, alpha, kernel)
    }

    pub fn vertices(&self) -> &DMatrix<f64> {
        &self.vertices
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn k(&self) -> usize {
        self.vertices.ncols()
    }

    pub fn dim(&self) -> usize {
        self.vertices.nrows()
    }

    /// The common value of `alpha` when the prior is symmetric.
    pub fn symmetric_alpha(&self) -> Option<f64> {
        let first = self.alpha[0];
        self.alpha.iter().all(|&a| a == first).then_some(first)
    }

    /// Mean of the vertices, `(1/K) B 1`.
    pub fn centroid(&self) -> DVector<f64> {
        self.vertices.column_mean()
    }

    /// Largest pairwise distance between vertices.
    pub fn diameter(&self) -> f64 {
        vertex_diameter(&self.vertices)
    }
}

pub fn vertex_diameter(vertices: &DMatrix<f64>) -> f64 {
    let k = vertices.ncols();
    let mut best = 0.0_f64;
    for a in 0..k {
        for b in a + 1..k {
            best = best.max((vertices.column(a) - vertices.column(b)).norm());
        }
    }
    best
}

fn broadcast_alpha(alpha: &[f64], k: usize) -> Result<Vec<f64>> {
    let out = match alpha.len() {
        1 => vec![alpha[0]; k],
        len if len == k => alpha.to_vec(),
        len => {
            return Err(DsnError::param(format!(
                "alpha has length {len}, expected 1 or {k}"
            )))
        }
    };
    if let Some(bad) = out.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(DsnError::param(format!(
            "alpha entries must be positive, got {bad}"
        )));
    }
    Ok(out)
}

fn check_kernel_domain(vertices: &DMatrix<f64>, kernel: &Kernel) -> Result<()> {
    match kernel {
        Kernel::Poisson => {
            if vertices.iter().any(|&v| v < 0.0) {
                return Err(DsnError::KernelDomain(
                    "poisson kernel requires non-negative vertices".into(),
                ));
            }
        }
        Kernel::Multinomial { .. } => {
            for (j, col) in vertices.column_iter().enumerate() {
                if col.iter().any(|&v| v < 0.0) || (col.sum() - 1.0).abs() > SIMPLEX_SUM_TOL {
                    return Err(DsnError::KernelDomain(format!(
                        "multinomial vertex {j} is not a probability vector"
                    )));
                }
            }
        }
        Kernel::Noiseless | Kernel::Gaussian { .. } => {}
    }
    Ok(())
}

/// Number of affinely independent directions spanned by the columns.
pub(crate) fn affine_rank(vertices: &DMatrix<f64>) -> usize {
    let k = vertices.ncols();
    if k < 2 {
        return 0;
    }
    let base = vertices.column(0).clone_owned();
    let mut diffs = DMatrix::zeros(vertices.nrows(), k - 1);
    for j in 1..k {
        diffs.set_column(j - 1, &(vertices.column(j) - &base));
    }
    let sv = diffs.singular_values();
    let top = sv.max();
    if top <= 0.0 {
        return 0;
    }
    let tol = top * 1e-10 * (vertices.nrows().max(k) as f64);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Ground truth attached to synthetic data.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// `n x K`, one row of barycentric weights per observation.
    pub weights: DMatrix<f64>,
    pub simplex: SimplexNest,
}

/// Observations (`n x D`, one per row) with optional generator truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub observations: DMatrix<f64>,
    pub truth: Option<Truth>,
    pub kernel: Kernel,
}

impl Dataset {
    pub fn new(observations: DMatrix<f64>, kernel: Kernel) -> Self {
        Self {
            observations,
            truth: None,
            kernel,
        }
    }

    pub fn n(&self) -> usize {
        self.observations.nrows()
    }

    pub fn dim(&self) -> usize {
        self.observations.ncols()
    }

    /// Same observations with the ground truth removed.
    pub fn without_truth(&self) -> Dataset {
        Dataset::new(self.observations.clone(), self.kernel)
    }

    /// The matrix fitting code operates on. Multinomial counts are divided by
    /// the number of trials when `normalize` is set.
    pub fn fitting_matrix(&self, normalize: bool) -> Cow<'_, DMatrix<f64>> {
        match self.kernel {
            Kernel::Multinomial { trials } if normalize => {
                Cow::Owned(&self.observations / f64::from(trials))
            }
            _ => Cow::Borrowed(&self.observations),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.observations.iter().any(|v| !v.is_finite()) {
            return Err(DsnError::param("observations contain non-finite values"));
        }
        Ok(())
    }
}

/// Samples log-Gamma variates so that tiny shape parameters do not underflow
/// to zero before normalization.
struct LogGammaSampler {
    gamma: Gamma<f64>,
    /// `Some(1/a)` when drawing `Gamma(a + 1) * U^(1/a)` for `a < 1`.
    boost: Option<f64>,
}

impl LogGammaSampler {
    fn new(shape: f64) -> Self {
        if shape < 1.0 {
            Self {
                gamma: Gamma::new(shape + 1.0, 1.0).expect("valid gamma shape"),
                boost: Some(1.0 / shape),
            }
        } else {
            Self {
                gamma: Gamma::new(shape, 1.0).expect("valid gamma shape"),
                boost: None,
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = self.gamma.sample(rng).ln();
        match self.boost {
            Some(inv_shape) => {
                let u: f64 = rng.random::<f64>();
                // random() is in [0, 1); map 0 to the smallest positive value
                g + u.max(f64::MIN_POSITIVE).ln() * inv_shape
            }
            None => g,
        }
    }
}

/// Dirichlet sampler by normalized Gamma draws.
pub struct DirichletSampler {
    components: Vec<LogGammaSampler>,
}

impl DirichletSampler {
    pub fn new(alpha: &[f64]) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(DsnError::param("dirichlet needs at least 2 components"));
        }
        if let Some(bad) = alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(DsnError::param(format!(
                "alpha entries must be positive, got {bad}"
            )));
        }
        Ok(Self {
            components: alpha.iter().map(|&a| LogGammaSampler::new(a)).collect(),
        })
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let mut top = f64::NEG_INFINITY;
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.sample(rng);
            top = top.max(*o);
        }
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - top).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }
}

/// Draws `n` i.i.d. `Dir(alpha)` rows. A length-one `alpha` is broadcast to
/// `k` components.
pub fn sample_weights<R: Rng + ?Sized>(
    k: usize,
    alpha: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if k < 2 {
        return Err(DsnError::param(format!("need K >= 2, got {k}")));
    }
    if n == 0 {
        return Err(DsnError::param("need at least one sample"));
    }
    let alpha = broadcast_alpha(alpha, k)?;
    let sampler = DirichletSampler::new(&alpha)?;
    let mut out = DMatrix::zeros(n, k);
    let mut row = vec![0.0; k];
    for i in 0..n {
        sampler.sample_into(rng, &mut row);
        for (j, v) in row.iter().enumerate() {
            out[(i, j)] = *v;
        }
    }
    Ok(out)
}

/// Covariance of a symmetric `Dir_K(alpha)` vector: `P / (K (K alpha + 1))`
/// with `P = I - (1/K) 1 1ᵀ`.
pub fn dirichlet_covariance(k: usize, alpha: f64) -> Result<DMatrix<f64>> {
    if k < 2 {
        return Err(DsnError::param(format!("need K >= 2, got {k}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(DsnError::param(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let kf = k as f64;
    let scale = 1.0 / (kf * (kf * alpha + 1.0));
    Ok(DMatrix::from_fn(k, k, |i, j| {
        let p = if i == j { 1.0 - 1.0 / kf } else { -1.0 / kf };
        p * scale
    }))
}

/// Contracts each vertex toward the vertex mean `C` by its own factor
/// `c_k ~ Unif(c_min, 1)`: `β_k ← C + c_k (β_k − C)`.
pub fn skew_simplex<R: Rng + ?Sized>(
    vertices: &DMatrix<f64>,
    c_min: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if !(c_min > 0.0 && c_min <= 1.0) {
        return Err(DsnError::param(format!(
            "c_min must lie in (0, 1], got {c_min}"
        )));
    }
    let center = vertices.column_mean();
    let mut out = vertices.clone();
    for mut col in out.column_iter_mut() {
        let c = if c_min < 1.0 {
            rng.sample(Uniform::new(c_min, 1.0).expect("non-empty range"))
        } else {
            1.0
        };
        if c == 1.0 {
            continue;
        }
        for (v, m) in col.iter_mut().zip(center.iter()) {
            *v = m + c * (*v - m);
        }
    }
    Ok(out)
}

/// Kernel-specific vertex prior: Gaussian and noiseless `N(0, K)` entries,
/// Poisson `Gamma(1, scale K)` entries, multinomial `Dir_D(0.1)` columns.
pub fn sample_vertices<R: Rng + ?Sized>(
    dim: usize,
    k: usize,
    kernel: &Kernel,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if k < 2 || dim == 0 {
        return Err(DsnError::param(format!("invalid shape D={dim}, K={k}")));
    }
    let kf = k as f64;
    let out = match kernel {
        Kernel::Noiseless | Kernel::Gaussian { .. } => {
            let sd = kf.sqrt();
            DMatrix::from_fn(dim, k, |_, _| {
                let z: f64 = rng.sample(StandardNormal);
                sd * z
            })
        }
        Kernel::Poisson => {
            let gamma = Gamma::new(1.0, kf).expect("valid gamma");
            DMatrix::from_fn(dim, k, |_, _| gamma.sample(rng))
        }
        Kernel::Multinomial { .. } => {
            if dim < 2 {
                return Err(DsnError::param("multinomial vertices need D >= 2"));
            }
            let sampler = DirichletSampler::new(&vec![MULTINOMIAL_VERTEX_ETA; dim])?;
            let mut out = DMatrix::zeros(dim, k);
            let mut col = vec![0.0; dim];
            for j in 0..k {
                sampler.sample_into(rng, &mut col);
                out.set_column(j, &DVector::from_column_slice(&col));
            }
            out
        }
    };
    Ok(out)
}

/// Draws `n` observations from the model, keeping the weights as truth.
pub fn generate<R: Rng + ?Sized>(model: &SimplexNest, n: usize, rng: &mut R) -> Result<Dataset> {
    let k = model.k();
    let dim = model.dim();
    let weights = sample_weights(k, model.alpha(), n, rng)?;
    let means = &weights * model.vertices().transpose();
    let observations = match model.kernel() {
        Kernel::Noiseless => means,
        Kernel::Gaussian { sigma } => {
            let noise = Normal::new(0.0, sigma)
                .map_err(|e| DsnError::param(format!("gaussian sigma: {e}")))?;
            // row-major draw order keeps the stream layout independent of storage
            let mut x = means;
            for i in 0..n {
                for j in 0..dim {
                    x[(i, j)] += noise.sample(rng);
                }
            }
            x
        }
        Kernel::Poisson => {
            let mut x = means;
            for i in 0..n {
                for j in 0..dim {
                    let lambda = x[(i, j)];
                    x[(i, j)] = if lambda > 0.0 {
                        Poisson::new(lambda)
                            .map_err(|e| {
                                DsnError::Numerical(format!("poisson rate {lambda}: {e}"))
                            })?
                            .sample(rng)
                    } else {
                        0.0
                    };
                }
            }
            x
        }
        Kernel::Multinomial { trials } => {
            let mut x = DMatrix::zeros(n, dim);
            let mut probs = vec![0.0; dim];
            let mut counts = vec![0u64; dim];
            for i in 0..n {
                for (j, p) in probs.iter_mut().enumerate() {
                    *p = means[(i, j)].max(0.0);
                }
                sample_multinomial(u64::from(trials), &probs, rng, &mut counts)?;
                for (j, c) in counts.iter().enumerate() {
                    x[(i, j)] = *c as f64;
                }
            }
            x
        }
    };
    Ok(Dataset {
        observations,
        truth: Some(Truth {
            weights,
            simplex: model.clone(),
        }),
        kernel: model.kernel(),
    })
}

/// Multinomial draw by sequential conditional binomials.
fn sample_multinomial<R: Rng + ?Sized>(
    trials: u64,
    probs: &[f64],
    rng: &mut R,
    out: &mut [u64],
) -> Result<()> {
    let mut remaining = trials;
    let mut mass: f64 = probs.iter().sum();
    let last = probs.len() - 1;
    for (j, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            out[j] = 0;
            continue;
        }
        if j == last {
            out[j] = remaining;
            break;
        }
        let q = if mass > 0.0 {
            (p / mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let draw = Binomial::new(remaining, q)
            .map_err(|e| DsnError::Numerical(format!("binomial p={q}: {e}")))?
            .sample(rng);
        out[j] = draw;
        remaining -= draw;
        mass -= p;
    }
    Ok(())
}
