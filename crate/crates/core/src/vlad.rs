//! The VLAD estimator.
//!
//! Steps: center the data, keep the top `K − 1` singular factors, cluster the
//! rows of `U`, map the centroids back through `W Λ`, and push each centroid
//! away from the data center by the extension parameter `γ`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alpha_est::{corrected_covariance, estimate_alpha, AlphaEstimate, AlphaSearch};
use crate::error::{DsnError, Result};
use crate::extension::GammaTable;
use crate::io::{ensure_dir, write_json, write_matrix};
use crate::model::{Dataset, Kernel};
use crate::numerics::{center, kmeans, truncated_svd, SvdFactors, DEFAULT_RESTARTS};
use crate::simplex::SimplexLeastSquares;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub restarts: usize,
    /// Divide multinomial counts by the number of trials before fitting.
    pub normalize_counts: bool,
    /// For normalized multinomial data, clip fitted vertices at zero and
    /// renormalize them onto the probability simplex.
    pub clip_to_probability_simplex: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: DEFAULT_RESTARTS,
            normalize_counts: true,
            clip_to_probability_simplex: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VladFit {
    /// `D x K`, sorted lexicographically by column.
    pub vertices: DMatrix<f64>,
    /// `D x K`, column `k` is the centroid extended into vertex `k`.
    pub cvt_centroids: DMatrix<f64>,
    pub center: DVector<f64>,
    pub factors: SvdFactors,
    pub gamma: f64,
    /// Concentration the extension corresponds to, when known.
    pub alpha: Option<f64>,
    pub kmeans_cost: f64,
    /// Reduced-space cluster label of each observation, in vertex order.
    pub assignments: Vec<usize>,
    /// Vertices were clipped onto the probability simplex.
    pub clipped: bool,
}

/// `center + γ (c_k − center)` for every column `c_k`.
pub fn extend_rays(center: &DVector<f64>, centroids: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let mut out = centroids.clone();
    for mut col in out.column_iter_mut() {
        for (v, c) in col.iter_mut().zip(center.iter()) {
            *v = c + gamma * (*v - c);
        }
    }
    out
}

/// Column order that sorts `vertices` lexicographically.
pub(crate) fn lexicographic_order(vertices: &DMatrix<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..vertices.ncols()).collect();
    order.sort_by(|&a, &b| {
        vertices
            .column(a)
            .iter()
            .zip(vertices.column(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

pub(crate) fn permute_columns(m: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), order.len(), |i, j| m[(i, order[j])])
}

/// Clips negative entries and rescales each column to sum to one.
pub(crate) fn clip_columns_to_simplex(m: &mut DMatrix<f64>) {
    let dim = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        col.apply(|v| *v = v.max(0.0));
        let total = col.sum();
        if total > 0.0 {
            col /= total;
        } else {
            col.fill(1.0 / dim);
        }
    }
}

pub(crate) fn warn_on_coincident_vertices(vertices: &DMatrix<f64>, method: &str) {
    let scale = vertices.amax().max(f64::MIN_POSITIVE);
    for a in 0..vertices.ncols() {
        for b in a + 1..vertices.ncols() {
            if (vertices.column(a) - vertices.column(b)).norm() <= 1e-12 * scale {
                log::warn!("{method}: fitted vertices {a} and {b} coincide");
            }
        }
    }
}

pub(crate) fn validate_fit_input(data: &Dataset, k: usize) -> Result<()> {
    if k < 2 {
        return Err(DsnError::param(format!("need K >= 2, got {k}")));
    }
    if data.n() <= k {
        return Err(DsnError::param(format!(
            "need more than K={k} observations, got {}",
            data.n()
        )));
    }
    if data.dim() + 1 < k {
        return Err(DsnError::param(format!(
            "dimension {} too small for K={k}",
            data.dim()
        )));
    }
    data.check_finite()
}

pub(crate) fn validate_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(DsnError::param(format!(
            "gamma must be positive, got {gamma}"
        )))
    }
}

fn clips(kernel: Kernel, opts: &FitOptions) -> bool {
    matches!(kernel, Kernel::Multinomial { .. })
        && opts.normalize_counts
        && opts.clip_to_probability_simplex
}

/// Runs VLAD with a fixed extension parameter.
pub fn fit<R: Rng + ?Sized>(
    data: &Dataset,
    k: usize,
    gamma: f64,
    opts: &FitOptions,
    rng: &mut R,
) -> Result<VladFit> {
    validate_fit_input(data, k)?;
    validate_gamma(gamma)?;
    let x = data.fitting_matrix(opts.normalize_counts);
    let (centered, data_center) = center(&x)?;
    let factors = truncated_svd(&centered, k - 1)?;
    let clusters = kmeans(&factors.left, k, opts.restarts.max(1), rng)?;

    // ĉ_k = W Λ η_k + ĉ₀
    let mut scaled_right = factors.right.clone();
    for (mut col, s) in scaled_right.column_iter_mut().zip(factors.singular.iter()) {
        col *= *s;
    }
    let mut centroids = scaled_right * clusters.centroids.transpose();
    for mut col in centroids.column_iter_mut() {
        col += &data_center;
    }

    let mut out = VladFit {
        vertices: DMatrix::zeros(0, 0),
        cvt_centroids: centroids,
        center: data_center,
        factors,
        gamma,
        alpha: None,
        kmeans_cost: clusters.cost,
        assignments: clusters.assignments,
        clipped: clips(data.kernel, opts),
    };
    out.extend(gamma);
    Ok(out)
}

/// Runs VLAD with `γ` looked up at a known concentration.
pub fn fit_known_alpha<R: Rng + ?Sized>(
    data: &Dataset,
    k: usize,
    alpha: f64,
    table: &GammaTable,
    opts: &FitOptions,
    rng: &mut R,
) -> Result<VladFit> {
    check_table(table, k)?;
    let mut out = fit(data, k, table.lookup(alpha), opts, rng)?;
    out.alpha = Some(alpha);
    Ok(out)
}

fn check_table(table: &GammaTable, k: usize) -> Result<()> {
    if table.k != k {
        return Err(DsnError::param(format!(
            "gamma table is for K={}, fitting K={k}",
            table.k
        )));
    }
    Ok(())
}

/// Runs VLAD once, estimates `α` from second moments and re-extends the
/// centroids with `γ(α̂)`.
pub fn fit_auto<R: Rng + ?Sized>(
    data: &Dataset,
    k: usize,
    table: &GammaTable,
    search: &AlphaSearch,
    opts: &FitOptions,
    rng: &mut R,
) -> Result<(VladFit, AlphaEstimate)> {
    check_table(table, k)?;
    let mut out = fit(data, k, 1.0, opts, rng)?;
    let target = corrected_covariance(data, k, opts.normalize_counts)?;
    let estimate = estimate_alpha(&out, &target, table, search)?;
    out.extend(table.lookup(estimate.alpha));
    out.alpha = Some(estimate.alpha);
    Ok((out, estimate))
}

impl VladFit {
    pub fn k(&self) -> usize {
        self.cvt_centroids.ncols()
    }

    pub fn dim(&self) -> usize {
        self.cvt_centroids.nrows()
    }

    /// Recomputes the vertices for a new extension parameter. Centroids and
    /// assignments follow the new vertex order.
    pub fn extend(&mut self, gamma: f64) {
        let mut vertices = extend_rays(&self.center, &self.cvt_centroids, gamma);
        if self.clipped {
            clip_columns_to_simplex(&mut vertices);
        }
        let order = lexicographic_order(&vertices);
        let mut relabel = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            relabel[old] = new;
        }
        self.vertices = permute_columns(&vertices, &order);
        self.cvt_centroids = permute_columns(&self.cvt_centroids, &order);
        for a in &mut self.assignments {
            *a = relabel[*a];
        }
        self.gamma = gamma;
        warn_on_coincident_vertices(&self.vertices, "vlad");
    }

    /// Barycentric weights of the fitting matrix of `data` in the fitted simplex.
    pub fn recover_weights(&self, data: &Dataset, normalize_counts: bool) -> Result<DMatrix<f64>> {
        Ok(project_rows(&self.vertices, &data.fitting_matrix(normalize_counts))?.weights)
    }

    /// Writes `vertices.csv`, `centroids.csv`, `center.csv` and `meta.json`.
    pub fn save(&self, dir: &Path, seed: Option<u64>) -> Result<()> {
        ensure_dir(dir)?;
        write_matrix(&dir.join("vertices.csv"), &self.vertices, "beta", false)?;
        write_matrix(&dir.join("centroids.csv"), &self.cvt_centroids, "c", false)?;
        let center = DMatrix::from_column_slice(self.center.len(), 1, self.center.as_slice());
        write_matrix(&dir.join("center.csv"), &center, "center", false)?;
        let meta = FitMeta {
            method: "vlad".into(),
            k: self.k(),
            gamma: Some(self.gamma),
            alpha: self.alpha,
            kmeans_cost: Some(self.kmeans_cost),
            seed,
            clipped: self.clipped,
        };
        write_json(&dir.join("meta.json"), &meta)
    }
}

/// Sidecar describing a fitted vertex set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub method: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub kmeans_cost: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub clipped: bool,
}

/// Per-row simplex least-squares solutions.
#[derive(Debug, Clone, PartialEq)]
pub struct RowProjections {
    /// `n x K`, rows on the probability simplex.
    pub weights: DMatrix<f64>,
    /// `‖x_i − B θ̂_i‖₂`.
    pub residuals: Vec<f64>,
}

/// Projects every row of `x` (`n x D`) onto the simplex spanned by the
/// columns of `vertices` (`D x K`).
pub fn project_rows(vertices: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<RowProjections> {
    if x.ncols() != vertices.nrows() {
        return Err(DsnError::ShapeMismatch(format!(
            "data has {} columns, vertices live in {} dimensions",
            x.ncols(),
            vertices.nrows()
        )));
    }
    let solver = SimplexLeastSquares::new(vertices)?;
    let rows: Vec<_> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            solver.solve(&row)
        })
        .collect::<Result<_>>()?;
    let k = vertices.ncols();
    let mut weights = DMatrix::zeros(x.nrows(), k);
    let mut residuals = Vec::with_capacity(x.nrows());
    for (i, p) in rows.into_iter().enumerate() {
        for (j, w) in p.weights.iter().enumerate() {
            weights[(i, j)] = *w;
        }
        residuals.push(p.residual);
    }
    Ok(RowProjections { weights, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extension::build_gamma_table;
    use crate::model::{generate, SimplexNest};
    use crate::rng::seeded;

    fn triangle_data(n: usize, seed: u64) -> Dataset {
        let b = DMatrix::from_row_slice(2, 3, &[0.0, 4.0, 0.0, 0.0, 0.0, 3.0]);
        let model = SimplexNest::new(b, &[1.0], Kernel::Noiseless).unwrap();
        generate(&model, n, &mut seeded(seed)).unwrap()
    }

    #[test]
    fn unit_gamma_returns_centroids() {
        let data = triangle_data(300, 1);
        let f = fit(&data, 3, 1.0, &FitOptions::default(), &mut seeded(2)).unwrap();
        assert!((&f.vertices - &f.cvt_centroids).amax() < 1e-12);
    }

    #[test]
    fn extension_identity_and_span() {
        let data = triangle_data(500, 3);
        let f = fit(&data, 3, 1.7, &FitOptions::default(), &mut seeded(4)).unwrap();
        let expected = extend_rays(&f.center, &f.cvt_centroids, 1.7);
        assert_eq!(f.vertices, expected);
        let w = &f.factors.right;
        for col in f.cvt_centroids.column_iter() {
            let d = col - &f.center;
            let residual = &d - w * (w.transpose() * &d);
            assert!(residual.norm() < 1e-8);
        }
        let mean = f.cvt_centroids.column_mean();
        assert!((mean - &f.center).norm() < 0.05 * 4.0);
    }

    #[test]
    fn vertices_are_sorted_and_assignments_follow() {
        let data = triangle_data(400, 5);
        let f = fit(&data, 3, 1.5, &FitOptions::default(), &mut seeded(6)).unwrap();
        assert_eq!(lexicographic_order(&f.vertices), vec![0, 1, 2]);
        let x = &data.observations;
        for k in 0..3 {
            let members: Vec<usize> = (0..x.nrows()).filter(|&i| f.assignments[i] == k).collect();
            let mut mean = DVector::zeros(2);
            for &i in &members {
                mean += x.row(i).transpose();
            }
            mean /= members.len() as f64;
            assert!((mean - f.cvt_centroids.column(k)).norm() < 1e-9);
        }
    }

    #[test]
    fn reextension_matches_direct_fit() {
        let data = triangle_data(400, 7);
        let a = fit(&data, 3, 1.2, &FitOptions::default(), &mut seeded(8)).unwrap();
        let mut b = fit(&data, 3, 2.3, &FitOptions::default(), &mut seeded(8)).unwrap();
        b.extend(1.2);
        assert_eq!(a.vertices, b.vertices);
    }

    #[test]
    fn rejects_bad_input() {
        let data = triangle_data(3, 1);
        let opts = FitOptions::default();
        assert!(fit(&data, 3, 1.0, &opts, &mut seeded(0)).is_err());
        let data = triangle_data(50, 1);
        assert!(fit(&data, 1, 1.0, &opts, &mut seeded(0)).is_err());
        assert!(fit(&data, 3, 0.0, &opts, &mut seeded(0)).is_err());
        let mut bad = data.clone();
        bad.observations[(0, 0)] = f64::NAN;
        assert!(fit(&bad, 3, 1.0, &opts, &mut seeded(0)).is_err());
    }

    #[test]
    fn multinomial_vertices_are_clipped_to_simplex() {
        let mut rng = seeded(9);
        let model = SimplexNest::sample(
            Kernel::Multinomial { trials: 200 },
            30,
            3,
            &[1.0],
            1.0,
            &mut rng,
        )
        .unwrap();
        let data = generate(&model, 600, &mut rng).unwrap();
        let f = fit(&data, 3, 2.5, &FitOptions::default(), &mut rng).unwrap();
        assert!(f.clipped);
        for col in f.vertices.column_iter() {
            assert!(col.iter().all(|&v| v >= 0.0));
            assert!((col.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn auto_fit_re_extends_with_estimated_alpha() {
        let mut rng = seeded(10);
        let model = SimplexNest::sample(Kernel::Noiseless, 6, 3, &[1.0], 1.0, &mut rng).unwrap();
        let data = generate(&model, 3000, &mut rng).unwrap();
        let table = build_gamma_table(3, &[0.25, 0.5, 1.0, 2.0, 4.0], 20_000, 1).unwrap();
        let search = AlphaSearch::new(0.25, 4.0).unwrap();
        let (auto, est) = fit_auto(
            &data,
            3,
            &table,
            &search,
            &FitOptions::default(),
            &mut seeded(11),
        )
        .unwrap();
        assert_eq!(auto.alpha, Some(est.alpha));
        assert!((est.alpha - 1.0).abs() < 0.3, "alpha = {}", est.alpha);
        let direct = fit(
            &data,
            3,
            table.lookup(est.alpha),
            &FitOptions::default(),
            &mut seeded(11),
        )
        .unwrap();
        assert_eq!(auto.vertices, direct.vertices);
    }

    #[test]
    fn projection_of_interior_points_is_exact() {
        let data = triangle_data(50, 12);
        let truth = data.truth.as_ref().unwrap();
        let p = project_rows(truth.simplex.vertices(), &data.observations).unwrap();
        assert!((p.weights - &truth.weights).amax() < 1e-10);
        assert!(p.residuals.iter().all(|&r| r < 1e-10));
    }

    #[test]
    fn save_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let data = triangle_data(100, 13);
        let f = fit(&data, 3, 1.4, &FitOptions::default(), &mut seeded(1)).unwrap();
        f.save(dir.path(), Some(1)).unwrap();
        for file in ["vertices.csv", "centroids.csv", "center.csv", "meta.json"] {
            assert!(dir.path().join(file).exists());
        }
        let back = crate::io::read_matrix(&dir.path().join("vertices.csv")).unwrap();
        assert_eq!(back, f.vertices);
    }
}
