//! Comparison estimators.
//!
//! GDM clusters the raw observations and extends the centroids exactly as VLAD
//! does; the two methods differ only in the clustering geometry. SPA picks
//! extreme observations and assumes some observations sit at the vertices.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DsnError, Result};
use crate::extension::{estimate_gamma_detailed, DEFAULT_MC_SAMPLES};
use crate::io::{ensure_dir, write_json, write_matrix};
use crate::model::Dataset;
use crate::numerics::{center, kmeans};
use crate::vlad::{
    extend_rays, lexicographic_order, permute_columns, validate_fit_input, validate_gamma,
    warn_on_coincident_vertices, FitMeta,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Baseline {
    Gdm,
    GdmMc,
    Spa,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Gdm => "gdm",
            Baseline::GdmMc => "gdm_mc",
            Baseline::Spa => "spa",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFit {
    /// `D x K`, sorted lexicographically by column.
    pub vertices: DMatrix<f64>,
    pub method: Baseline,
    pub gamma: Option<f64>,
    pub kmeans_cost: Option<f64>,
    /// SPA: indices of the selected rows, in vertex order.
    pub anchors: Vec<usize>,
}

impl BaselineFit {
    pub fn save(&self, dir: &Path, seed: Option<u64>) -> Result<()> {
        ensure_dir(dir)?;
        write_matrix(&dir.join("vertices.csv"), &self.vertices, "beta", false)?;
        let meta = FitMeta {
            method: self.method.name().into(),
            k: self.vertices.ncols(),
            gamma: self.gamma,
            alpha: None,
            kmeans_cost: self.kmeans_cost,
            seed,
            clipped: false,
        };
        write_json(&dir.join("meta.json"), &meta)
    }
}

/// K-means on the raw observations, then rays from the data center through
/// each centroid, extended by `gamma`.
pub fn gdm<R: Rng + ?Sized>(
    data: &Dataset,
    k: usize,
    gamma: f64,
    restarts: usize,
    normalize_counts: bool,
    rng: &mut R,
) -> Result<BaselineFit> {
    validate_fit_input(data, k)?;
    validate_gamma(gamma)?;
    let x = data.fitting_matrix(normalize_counts);
    let (_, data_center) = center(&x)?;
    let clusters = kmeans(&x, k, restarts.max(1), rng)?;
    let centroids = clusters.centroids.transpose();
    let vertices = extend_rays(&data_center, &centroids, gamma);
    let order = lexicographic_order(&vertices);
    let vertices = permute_columns(&vertices, &order);
    warn_on_coincident_vertices(&vertices, "gdm");
    Ok(BaselineFit {
        vertices,
        method: Baseline::Gdm,
        gamma: Some(gamma),
        kmeans_cost: Some(clusters.cost),
        anchors: vec![],
    })
}

/// GDM with `γ` estimated by Monte Carlo at `alpha` (`m` samples).
pub fn gdm_mc<R: Rng + ?Sized>(
    data: &Dataset,
    k: usize,
    alpha: f64,
    m: Option<usize>,
    restarts: usize,
    normalize_counts: bool,
    rng: &mut R,
) -> Result<BaselineFit> {
    let gamma = estimate_gamma_detailed(
        k,
        alpha,
        m.unwrap_or(DEFAULT_MC_SAMPLES),
        restarts.max(1),
        rng,
    )?
    .gamma;
    let mut out = gdm(data, k, gamma, restarts, normalize_counts, rng)?;
    out.method = Baseline::GdmMc;
    Ok(out)
}

/// Successive projection: take the row of largest norm (lowest index on
/// ties), project every row onto its orthogonal complement, repeat `K` times.
pub fn spa(data: &Dataset, k: usize, normalize_counts: bool) -> Result<BaselineFit> {
    if k < 1 {
        return Err(DsnError::param("need K >= 1"));
    }
    data.check_finite()?;
    let x = data.fitting_matrix(normalize_counts);
    let (n, dim) = x.shape();
    if n < k {
        return Err(DsnError::param(format!(
            "need at least K={k} rows, got {n}"
        )));
    }
    let mut residual = x.clone().into_owned();
    let initial = row_norms(&residual).into_iter().fold(0.0, f64::max);
    let tolerance = 1e-12 * initial.max(f64::MIN_POSITIVE) * (n.max(dim) as f64);
    let mut anchors = Vec::with_capacity(k);
    for step in 0..k {
        let norms = row_norms(&residual);
        let mut pick = 0;
        for (i, &v) in norms.iter().enumerate() {
            if v > norms[pick] {
                pick = i;
            }
        }
        if norms[pick] <= tolerance {
            return Err(DsnError::Degenerate(format!(
                "data has rank {step} < K={k}; SPA found only {step} anchors"
            )));
        }
        anchors.push(pick);
        let u: DVector<f64> = residual.row(pick).transpose() / norms[pick];
        let coefficients = &residual * &u;
        residual -= coefficients * u.transpose();
    }
    let selected = DMatrix::from_fn(dim, k, |i, j| x[(anchors[j], i)]);
    let order = lexicographic_order(&selected);
    Ok(BaselineFit {
        vertices: permute_columns(&selected, &order),
        method: Baseline::Spa,
        gamma: None,
        kmeans_cost: None,
        anchors: order.iter().map(|&j| anchors[j]).collect(),
    })
}

fn row_norms(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().map(|r| r.norm()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate, Kernel, SimplexNest};
    use crate::rng::seeded;
    use crate::vlad::{fit, FitOptions};

    fn data(seed: u64) -> Dataset {
        let mut rng = seeded(seed);
        let model = SimplexNest::sample(Kernel::Noiseless, 5, 3, &[1.0], 1.0, &mut rng).unwrap();
        generate(&model, 300, &mut rng).unwrap()
    }

    #[test]
    fn unit_gamma_gives_raw_centroids() {
        let d = data(1);
        let g = gdm(&d, 3, 1.0, 4, true, &mut seeded(2)).unwrap();
        let c = kmeans(&d.observations, 3, 4, &mut seeded(2)).unwrap();
        let raw = c.centroids.transpose();
        let order = lexicographic_order(&raw);
        assert!((g.vertices - permute_columns(&raw, &order)).amax() < 1e-12);
    }

    #[test]
    fn gdm_and_vlad_share_extension_arithmetic() {
        let d = data(3);
        let v = fit(&d, 3, 1.0, &FitOptions::default(), &mut seeded(4)).unwrap();
        let a = extend_rays(&v.center, &v.cvt_centroids, 1.8);
        let mut by_hand = v.cvt_centroids.clone();
        for mut col in by_hand.column_iter_mut() {
            for (x, c) in col.iter_mut().zip(v.center.iter()) {
                *x = c + 1.8 * (*x - c);
            }
        }
        assert_eq!(a, by_hand);
    }

    #[test]
    fn spa_recovers_orthogonal_rows() {
        let x = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 3.0]);
        let d = Dataset::new(x.clone(), Kernel::Noiseless);
        let s = spa(&d, 3, true).unwrap();
        let mut anchors = s.anchors.clone();
        anchors.sort();
        assert_eq!(anchors, vec![0, 1, 2]);
        for (j, &a) in s.anchors.iter().enumerate() {
            assert_eq!(s.vertices.column(j).transpose(), x.row(a));
        }
    }

    #[test]
    fn spa_reports_rank_deficiency() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, -1.0, -1.0, 0.5, 0.5]);
        let d = Dataset::new(x, Kernel::Noiseless);
        assert!(matches!(spa(&d, 2, true), Err(DsnError::Degenerate(_))));
    }

    #[test]
    fn spa_is_deterministic() {
        let d = data(5);
        assert_eq!(spa(&d, 3, true).unwrap(), spa(&d, 3, true).unwrap());
    }
}
