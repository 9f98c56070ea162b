//! Extension parameters.
//!
//! For a symmetric `Dir_K(α)` prior the K-means centroids of the weights sit on
//! the segments joining the simplex center to its vertices, all at the same
//! relative distance. The extension parameter `γ(α)` is the ratio
//! vertex-distance / centroid-distance; it depends on `(K, α)` only, so it is
//! estimated once by Monte Carlo on the standard simplex and reused for any
//! vertex geometry.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DsnError, Result};
use crate::model::sample_weights;
use crate::numerics::{kmeans_seeded, DEFAULT_RESTARTS};
use crate::rng::derived;

pub const DEFAULT_MC_SAMPLES: usize = 100_000;
pub const DEFAULT_GRID_POINTS: usize = 40;
pub const DEFAULT_ALPHA_RANGE: (f64, f64) = (0.02, 10.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaEstimate {
    pub gamma: f64,
    /// Delta-method Monte-Carlo standard error of `gamma`.
    pub std_error: f64,
    pub kmeans_cost: f64,
}

/// Monte-Carlo extension parameter for a symmetric `Dir_K(alpha)`.
pub fn estimate_gamma<R: Rng + ?Sized>(k: usize, alpha: f64, m: usize, rng: &mut R) -> Result<f64> {
    estimate_gamma_detailed(k, alpha, m, DEFAULT_RESTARTS, rng).map(|e| e.gamma)
}

/// Draws `m` weight vectors, clusters them (vertex-seeded run plus `restarts`
/// k-means++ runs) and returns `sqrt(K² − K) / Σ_l ‖v_l − 1/K‖`.
pub fn estimate_gamma_detailed<R: Rng + ?Sized>(
    k: usize,
    alpha: f64,
    m: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<GammaEstimate> {
    if k < 2 {
        return Err(DsnError::param(format!("need K >= 2, got {k}")));
    }
    if m < k {
        return Err(DsnError::param(format!(
            "need at least K={k} Monte-Carlo samples, got {m}"
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(DsnError::param(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let theta = sample_weights(k, &[alpha], m, rng)?;
    let vertices = DMatrix::<f64>::identity(k, k);
    let clusters = kmeans_seeded(&theta, k, restarts, &[vertices], rng)?;

    let center = 1.0 / k as f64;
    let mut total = 0.0;
    let mut variance_of_total = 0.0;
    for (l, v) in clusters.centroids.row_iter().enumerate() {
        let offset: DVector<f64> = v.transpose().add_scalar(-center);
        let dist = offset.norm();
        total += dist;
        if dist > 0.0 {
            let dir = offset / dist;
            let members: Vec<f64> = clusters
                .assignments
                .iter()
                .enumerate()
                .filter(|(_, &a)| a == l)
                .map(|(i, _)| theta.row(i).transpose().dot(&dir))
                .collect();
            let count = members.len() as f64;
            if count > 1.0 {
                let mean = members.iter().sum::<f64>() / count;
                let var = members.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1.0);
                variance_of_total += var / count;
            }
        }
    }
    if total <= 0.0 {
        return Err(DsnError::Numerical(
            "all centroids collapsed onto the simplex center".into(),
        ));
    }
    let numerator = ((k * k - k) as f64).sqrt();
    let gamma = numerator / total;
    Ok(GammaEstimate {
        gamma,
        std_error: gamma * gamma / numerator * variance_of_total.sqrt(),
        kmeans_cost: clusters.cost,
    })
}

/// `γ² / (K (K α + 1))`, the scalar whose invertibility in `α` makes the
/// concentration identifiable from second moments.
pub fn varphi(k: usize, alpha: f64, gamma: f64) -> f64 {
    let kf = k as f64;
    gamma * gamma / (kf * (kf * alpha + 1.0))
}

/// `count` points evenly spaced in `log α` between `lo` and `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || count == 0 {
        return Err(DsnError::param(format!(
            "invalid log grid [{lo}, {hi}] x {count}"
        )));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| {
            if i == count - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect())
}

/// Cached `α ↦ γ(α)` for one `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaTable {
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    pub seed: u64,
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub std_errors: Vec<f64>,
}

/// Estimates `γ` at every grid point. Grid point `i` uses its own stream
/// derived from `(seed, i)`, so the table does not depend on thread count.
pub fn build_gamma_table(k: usize, alpha_grid: &[f64], m: usize, seed: u64) -> Result<GammaTable> {
    if alpha_grid.is_empty() {
        return Err(DsnError::param("alpha grid is empty"));
    }
    if alpha_grid.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(DsnError::param("alpha grid must be positive"));
    }
    if alpha_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DsnError::param("alpha grid must be strictly ascending"));
    }
    let estimates: Vec<GammaEstimate> = alpha_grid
        .par_iter()
        .enumerate()
        .map(|(i, &alpha)| {
            let mut rng = derived(seed, &[i as u64]);
            estimate_gamma_detailed(k, alpha, m, DEFAULT_RESTARTS, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(GammaTable {
        k,
        m,
        seed,
        alphas: alpha_grid.to_vec(),
        gammas: estimates.iter().map(|e| e.gamma).collect(),
        std_errors: estimates.iter().map(|e| e.std_error).collect(),
    })
}

impl GammaTable {
    pub fn alpha_range(&self) -> (f64, f64) {
        (self.alphas[0], *self.alphas.last().expect("non-empty grid"))
    }

    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        let (a, b) = self.alpha_range();
        lo >= a && hi <= b
    }

    /// Linear interpolation in `α`; outside the grid the end value is used and
    /// a warning is logged.
    pub fn lookup(&self, alpha: f64) -> f64 {
        let (lo, hi) = self.alpha_range();
        if alpha <= lo {
            if alpha < lo {
                log::warn!("alpha {alpha} below gamma table range, clamping to {lo}");
            }
            return self.gammas[0];
        }
        if alpha >= hi {
            if alpha > hi {
                log::warn!("alpha {alpha} above gamma table range, clamping to {hi}");
            }
            return *self.gammas.last().expect("non-empty grid");
        }
        let upper = self.alphas.partition_point(|&a| a <= alpha);
        let (a0, a1) = (self.alphas[upper - 1], self.alphas[upper]);
        let (g0, g1) = (self.gammas[upper - 1], self.gammas[upper]);
        if alpha == a0 {
            return g0;
        }
        g0 + (g1 - g0) * (alpha - a0) / (a1 - a0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.alphas.len() != self.gammas.len() {
            return Err(DsnError::param(
                "gamma table grid and values differ in length",
            ));
        }
        if self.alphas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DsnError::param("gamma table grid is not ascending"));
        }
        if !self.std_errors.is_empty() && self.std_errors.len() != self.alphas.len() {
            return Err(DsnError::param(
                "gamma table standard errors have the wrong length",
            ));
        }
        if self.gammas.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(DsnError::param("gamma table values must be positive"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| DsnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DsnError::io(path, e))?;
        let table: GammaTable = serde_json::from_str(&text).map_err(|e| DsnError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        table.validate()?;
        Ok(table)
    }

    /// `alpha,gamma,std_error,varphi` per grid point.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("alpha,gamma,std_error,varphi\n");
        for (i, (&a, &g)) in self.alphas.iter().zip(&self.gammas).enumerate() {
            let se = self
                .std_errors
                .get(i)
                .map(|s| format!("{s:.16e}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{a:.16e},{g:.16e},{se},{:.16e}\n",
                varphi(self.k, a, g)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn toy_table() -> GammaTable {
        GammaTable {
            k: 3,
            m: 10,
            seed: 0,
            alphas: vec![0.5, 1.0, 2.0],
            gammas: vec![1.5, 2.0, 3.0],
            std_errors: vec![],
        }
    }

    #[test]
    fn numerator_identity() {
        // Σ_l ‖e_l − 1/K‖ = K sqrt((K − 1)/K) = sqrt(K² − K)
        for k in 2..12usize {
            let kf = k as f64;
            let per_vertex = ((1.0 - 1.0 / kf).powi(2) + (kf - 1.0) / (kf * kf)).sqrt();
            assert!((kf * per_vertex - (kf * kf - kf).sqrt()).abs() < 1e-12);
        }
        assert!((2.0 * (2f64.sqrt() / 2.0) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn varphi_examples() {
        assert!((varphi(2, 1.0, 2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(varphi(10, 0.5, 1.7), 1.7 * 1.7 / (10.0 * 6.0));
    }

    #[test]
    fn small_alpha_gamma_near_one() {
        let g = estimate_gamma(3, 0.01, 20_000, &mut seeded(1)).unwrap();
        assert!((g - 1.0).abs() < 0.05, "gamma = {g}");
    }

    #[test]
    fn uniform_segment_gamma_is_two() {
        let e = estimate_gamma_detailed(2, 1.0, 200_000, DEFAULT_RESTARTS, &mut seeded(2)).unwrap();
        assert!((e.gamma - 2.0).abs() < 0.02, "gamma = {}", e.gamma);
        assert!(e.std_error > 0.0 && e.std_error < 0.01);
    }

    #[test]
    fn gamma_rejects_bad_input() {
        let mut rng = seeded(0);
        assert!(estimate_gamma(1, 1.0, 100, &mut rng).is_err());
        assert!(estimate_gamma(5, 1.0, 4, &mut rng).is_err());
        assert!(estimate_gamma(3, -1.0, 100, &mut rng).is_err());
    }

    #[test]
    fn lookup_hits_grid_and_interpolates() {
        let t = toy_table();
        assert_eq!(t.lookup(1.0), 2.0);
        assert_eq!(t.lookup(0.5), 1.5);
        assert_eq!(t.lookup(2.0), 3.0);
        assert!((t.lookup(1.5) - 2.5).abs() < 1e-15);
        assert!((t.lookup(0.75) - 1.75).abs() < 1e-15);
        assert_eq!(t.lookup(0.1), 1.5);
        assert_eq!(t.lookup(9.0), 3.0);
    }

    #[test]
    fn tables_are_deterministic() {
        let grid = [0.5, 1.0, 2.0];
        let a = build_gamma_table(3, &grid, 2_000, 7).unwrap();
        let b = build_gamma_table(3, &grid, 2_000, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.gammas.iter().all(|&g| g >= 1.0));
        assert!(build_gamma_table(3, &[], 100, 0).is_err());
        assert!(build_gamma_table(3, &[1.0, 0.5], 100, 0).is_err());
    }

    #[test]
    fn table_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.json");
        let t = toy_table();
        t.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"K\": 3"));
        assert_eq!(GammaTable::load(&path).unwrap(), t);
    }

    #[test]
    fn curve_rows_carry_varphi() {
        let csv = toy_table().curve_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        let last: Vec<f64> = lines[3]
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(last[..2], [2.0, 3.0]);
        assert!((last[2] - 9.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_spaced(0.02, 10.0, 40).unwrap();
        assert_eq!(g.len(), 40);
        assert!((g[0] - 0.02).abs() < 1e-15);
        assert_eq!(g[39], 10.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
