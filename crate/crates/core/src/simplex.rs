//! Projection onto the probability simplex and simplex-constrained least
//! squares (barycentric coordinates of the closest point of a simplex).

use nalgebra::{DMatrix, DVector};

use crate::error::{DsnError, Result};
use crate::model::affine_rank;

pub const MAX_PROJECTED_GRADIENT_ITERATIONS: usize = 10_000;
pub const STEP_TOLERANCE: f64 = 1e-10;

/// Euclidean projection of `v` onto `{θ ≥ 0, Σθ = 1}` by the sort-and-threshold
/// rule.
pub fn project_onto_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut threshold = 0.0;
    for (i, u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            threshold = t;
        }
    }
    v.iter().map(|x| (x - threshold).max(0.0)).collect()
}

/// Minimizes `‖B θ − x‖` over the probability simplex for a fixed vertex
/// matrix `B` (`D x K`).
///
/// Coordinates are shifted to the vertex mean so that the Gram matrix only
/// carries the simplex shape. Points whose affine barycentric coordinates are
/// already non-negative are solved in closed form; the rest go through
/// accelerated projected gradient with adaptive momentum restart.
#[derive(Debug, Clone)]
pub struct SimplexLeastSquares {
    shifted: DMatrix<f64>,
    offset: DVector<f64>,
    gram: DMatrix<f64>,
    pinv: DMatrix<f64>,
    lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexProjection {
    pub weights: Vec<f64>,
    /// `‖B θ − x‖₂` at the returned weights.
    pub residual: f64,
    pub iterations: usize,
}

impl SimplexLeastSquares {
    pub fn new(vertices: &DMatrix<f64>) -> Result<Self> {
        let k = vertices.ncols();
        if k < 2 {
            return Err(DsnError::param("simplex needs at least two vertices"));
        }
        if affine_rank(vertices) + 1 < k {
            return Err(DsnError::Degenerate(
                "fitted vertices are affinely dependent".into(),
            ));
        }
        let offset = vertices.column_mean();
        let mut shifted = vertices.clone();
        for mut col in shifted.column_iter_mut() {
            col -= &offset;
        }
        let gram = shifted.tr_mul(&shifted);
        let lipschitz = gram.symmetric_eigenvalues().max().max(f64::MIN_POSITIVE);
        let pinv = shifted
            .clone()
            .pseudo_inverse(1e-12 * lipschitz.sqrt())
            .map_err(|e| DsnError::Numerical(format!("pseudo-inverse: {e}")))?;
        Ok(Self {
            shifted,
            offset,
            gram,
            pinv,
            lipschitz,
        })
    }

    pub fn k(&self) -> usize {
        self.shifted.ncols()
    }

    pub fn dim(&self) -> usize {
        self.shifted.nrows()
    }

    pub fn solve(&self, x: &[f64]) -> Result<SimplexProjection> {
        if x.len() != self.dim() {
            return Err(DsnError::ShapeMismatch(format!(
                "point has {} coordinates, simplex lives in {}",
                x.len(),
                self.dim()
            )));
        }
        let k = self.k();
        let y = DVector::from_column_slice(x) - &self.offset;
        // columns of the shifted matrix sum to zero, so the minimum-norm least
        // squares solution is orthogonal to 1 and lifts onto the affine hull
        let mut affine = &self.pinv * &y;
        affine.add_scalar_mut(1.0 / k as f64);
        if affine.iter().all(|&t| t >= 0.0) {
            let residual = (&self.shifted * &affine - &y).norm();
            return Ok(SimplexProjection {
                weights: affine.iter().copied().collect(),
                residual,
                iterations: 0,
            });
        }

        let linear = self.shifted.tr_mul(&y);
        let step = 1.0 / self.lipschitz;
        let mut theta = DVector::from_vec(project_onto_simplex(affine.as_slice()));
        let mut momentum_point = theta.clone();
        let mut t = 1.0_f64;
        let mut iterations = 0;
        while iterations < MAX_PROJECTED_GRADIENT_ITERATIONS {
            iterations += 1;
            let grad = &self.gram * &momentum_point - &linear;
            let trial = &momentum_point - grad * step;
            let next = DVector::from_vec(project_onto_simplex(trial.as_slice()));

            // gradient mapping at the current iterate, in θ units
            let grad_here = &self.gram * &next - &linear;
            let mapped =
                DVector::from_vec(project_onto_simplex((&next - grad_here * step).as_slice()));
            if (&next - mapped).norm() <= STEP_TOLERANCE {
                theta = next;
                break;
            }

            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let restart = (&momentum_point - &next).dot(&(&next - &theta)) > 0.0;
            if restart {
                t = 1.0;
                momentum_point = next.clone();
            } else {
                momentum_point = &next + (&next - &theta) * ((t - 1.0) / t_next);
                t = t_next;
            }
            theta = next;
        }
        let residual = (&self.shifted * &theta - &y).norm();
        Ok(SimplexProjection {
            weights: theta.iter().copied().collect(),
            residual,
            iterations,
        })
    }
}
