//! Concentration estimation by second-moment matching.
//!
//! Under the model, `Cov(x) = B S(α) Bᵀ + noise`, where the noise term depends
//! only on the kernel. After removing the noise term the target is matched by
//! the covariance implied by the extended VLAD vertices. Since `S(α) 1 = 0`,
//! the implied covariance is `φ(α) (Ĉ − ĉ₀) P (Ĉ − ĉ₀)ᵀ`, so the objective
//! only needs three inner products and VLAD is never re-run.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DsnError, Result};
use crate::extension::{varphi, GammaTable, DEFAULT_ALPHA_RANGE};
use crate::model::{Dataset, Kernel};
use crate::numerics::{center, sample_covariance};
use crate::vlad::VladFit;

pub const GRID_SCAN_POINTS: usize = 64;
pub const RELATIVE_TOLERANCE: f64 = 1e-4;

/// Noise-corrected estimate of `B S(α) Bᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTarget {
    pub sigma_tilde: DMatrix<f64>,
    pub kernel: Kernel,
    /// Gaussian noise variance estimate.
    pub sigma2_hat: Option<f64>,
    pub column_means: DVector<f64>,
    pub normalized: bool,
}

/// Sample covariance with the kernel's noise contribution removed. For
/// Gaussian data the noise variance is the mean of the trailing `D − (K − 1)`
/// eigenvalues. Negative eigenvalues left by the subtraction are kept.
pub fn corrected_covariance(
    data: &Dataset,
    k: usize,
    normalize_counts: bool,
) -> Result<MomentTarget> {
    if k < 2 {
        return Err(DsnError::param(format!("need K >= 2, got {k}")));
    }
    data.check_finite()?;
    let x = data.fitting_matrix(normalize_counts);
    let covariance = sample_covariance(&x)?;
    let (_, means) = center(&x)?;
    let dim = covariance.nrows();
    let mut sigma2_hat = None;
    let sigma_tilde = match data.kernel {
        Kernel::Noiseless => covariance,
        Kernel::Gaussian { .. } => {
            let mut eig: Vec<f64> = covariance.symmetric_eigenvalues().iter().copied().collect();
            eig.sort_by(|a, b| b.total_cmp(a));
            let trailing = &eig[(k - 1).min(dim)..];
            let s2 = if trailing.is_empty() {
                log::warn!("no trailing eigenvalues beyond rank K-1; noise variance set to 0");
                0.0
            } else {
                trailing.iter().sum::<f64>() / trailing.len() as f64
            };
            sigma2_hat = Some(s2);
            let mut t = covariance;
            for i in 0..dim {
                t[(i, i)] -= s2;
            }
            t
        }
        Kernel::Poisson => {
            let mut t = covariance;
            for i in 0..dim {
                t[(i, i)] -= means[i];
            }
            t
        }
        Kernel::Multinomial { trials } => {
            if trials <= 1 {
                return Err(DsnError::param(format!(
                    "multinomial correction needs more than one trial, got {trials}"
                )));
            }
            let n_trials = f64::from(trials);
            // work on proportions, then rescale when the fit used raw counts
            let (covariance, means, scale) = if normalize_counts {
                (covariance, means.clone(), 1.0)
            } else {
                (
                    covariance / (n_trials * n_trials),
                    &means / n_trials,
                    n_trials * n_trials,
                )
            };
            let mut t = covariance + &means * means.transpose() / n_trials;
            for i in 0..dim {
                t[(i, i)] -= means[i] / n_trials;
            }
            t * (scale / (1.0 - 1.0 / n_trials))
        }
    };
    Ok(MomentTarget {
        sigma_tilde,
        kernel: data.kernel,
        sigma2_hat,
        column_means: means,
        normalized: normalize_counts,
    })
}

/// Compact search interval for `α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSearch {
    pub lo: f64,
    pub hi: f64,
}

impl AlphaSearch {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(DsnError::param(format!(
                "invalid alpha search interval [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }
}

impl Default for AlphaSearch {
    fn default() -> Self {
        Self {
            lo: DEFAULT_ALPHA_RANGE.0,
            hi: DEFAULT_ALPHA_RANGE.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaEstimate {
    pub alpha: f64,
    pub objective: f64,
    /// Grid scan `(α, objective)` pairs.
    pub curve: Vec<(f64, f64)>,
}

/// `α ↦ ‖φ(α) M − Σ̃‖_F` with `M = (Ĉ − ĉ₀) P (Ĉ − ĉ₀)ᵀ`, expanded into
/// `φ² ‖M‖² − 2 φ ⟨M, Σ̃⟩ + ‖Σ̃‖²`.
#[derive(Debug, Clone)]
pub struct MomentObjective<'a> {
    k: usize,
    table: &'a GammaTable,
    mm: f64,
    mt: f64,
    tt: f64,
}

impl<'a> MomentObjective<'a> {
    pub fn new(fit: &VladFit, target: &MomentTarget, table: &'a GammaTable) -> Result<Self> {
        let k = fit.k();
        if table.k != k {
            return Err(DsnError::param(format!(
                "gamma table is for K={}, fit has K={k}",
                table.k
            )));
        }
        if target.sigma_tilde.nrows() != fit.dim() {
            return Err(DsnError::ShapeMismatch(format!(
                "moment target is {}x{}, fit lives in {} dimensions",
                target.sigma_tilde.nrows(),
                target.sigma_tilde.ncols(),
                fit.dim()
            )));
        }
        let mut offsets = fit.cvt_centroids.clone();
        for mut col in offsets.column_iter_mut() {
            col -= &fit.center;
        }
        // D P = D − (D 1) 1ᵀ / K
        let mut projected = offsets.clone();
        let row_means = offsets.column_mean();
        for mut col in projected.column_iter_mut() {
            col -= &row_means;
        }
        let m = &projected * offsets.transpose();
        let t = &target.sigma_tilde;
        Ok(Self {
            k,
            table,
            mm: m.norm_squared(),
            mt: m.dot(t),
            tt: t.norm_squared(),
        })
    }

    pub fn eval(&self, alpha: f64) -> f64 {
        let phi = varphi(self.k, alpha, self.table.lookup(alpha));
        (phi * phi * self.mm - 2.0 * phi * self.mt + self.tt)
            .max(0.0)
            .sqrt()
    }
}

/// Minimizes the moment objective over `search`: a log-spaced grid scan
/// followed by golden-section refinement around the best grid point.
pub fn estimate_alpha(
    fit: &VladFit,
    target: &MomentTarget,
    table: &GammaTable,
    search: &AlphaSearch,
) -> Result<AlphaEstimate> {
    AlphaSearch::new(search.lo, search.hi)?;
    let (lo, hi) = table.alpha_range();
    let slack = 1e-12 * hi;
    if search.lo < lo - slack || search.hi > hi + slack {
        return Err(DsnError::param(format!(
            "search interval [{}, {}] not covered by gamma table range [{lo}, {hi}]",
            search.lo, search.hi
        )));
    }
    let objective = MomentObjective::new(fit, target, table)?;
    let (a, b) = (search.lo.ln(), search.hi.ln());
    let step = (b - a) / (GRID_SCAN_POINTS - 1) as f64;
    let log_grid: Vec<f64> = (0..GRID_SCAN_POINTS).map(|i| a + step * i as f64).collect();
    let curve: Vec<(f64, f64)> = log_grid
        .iter()
        .map(|&l| {
            let alpha = l.exp();
            (alpha, objective.eval(alpha))
        })
        .collect();
    let best = curve
        .iter()
        .enumerate()
        .min_by(|x, y| x.1 .1.total_cmp(&y.1 .1).then(x.0.cmp(&y.0)))
        .map(|(i, _)| i)
        .expect("non-empty grid");

    let left = log_grid[best.saturating_sub(1)];
    let right = log_grid[(best + 1).min(GRID_SCAN_POINTS - 1)];
    let f = |l: f64| objective.eval(l.exp());
    let (l_star, f_star) = golden_section(f, left, right, RELATIVE_TOLERANCE);
    let (alpha, value) = if f_star <= curve[best].1 {
        (l_star.exp(), f_star)
    } else {
        curve[best]
    };
    Ok(AlphaEstimate {
        alpha,
        objective: value,
        curve,
    })
}

/// Golden-section minimization on `[a, b]` until the bracket is shorter than
/// `tol`. Returns the best point seen.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let candidates = [(a, f(a)), (c, fc), (d, fd), (b, f(b))];
    candidates
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("non-empty")
}
