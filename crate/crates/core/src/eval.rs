//! Scores for fitted vertex sets.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DsnError, Result};
use crate::model::{Dataset, Kernel};
use crate::vlad::project_rows;

/// Largest `K` solved by exhaustive enumeration of permutations.
pub const BRUTE_FORCE_MAX_K: usize = 7;
pub const LOG_FLOOR: f64 = 1e-12;

/// Both minimum-matching forms. `permutation[k]` is the column of the first
/// argument matched to column `k` of the second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingResult {
    /// `min_π max_k ‖A_π(k) − B_k‖`.
    pub max_distance: f64,
    pub max_permutation: Vec<usize>,
    /// `min_π ‖A_π − B‖_F`.
    pub frobenius_distance: f64,
    pub frobenius_permutation: Vec<usize>,
}

fn distance_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let k = a.ncols();
    (0..k)
        .map(|i| (0..k).map(|j| (a.column(i) - b.column(j)).norm()).collect())
        .collect()
}

/// `Σ_k d[π(k)][k]²`, summed in column order.
pub fn assignment_cost(dist: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(k, &p)| dist[p][k] * dist[p][k])
        .sum()
}

/// `max_k d[π(k)][k]`.
pub fn bottleneck_cost(dist: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(k, &p)| dist[p][k])
        .fold(0.0, f64::max)
}

pub fn min_matching(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<MatchingResult> {
    if a.shape() != b.shape() {
        return Err(DsnError::ShapeMismatch(format!(
            "vertex sets have shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.ncols() == 0 {
        return Err(DsnError::param("empty vertex sets"));
    }
    let dist = distance_matrix(a, b);
    let (max_permutation, frobenius_permutation) = if a.ncols() <= BRUTE_FORCE_MAX_K {
        exhaustive(&dist)
    } else {
        (bottleneck_assignment(&dist), hungarian(&dist))
    };
    Ok(MatchingResult {
        max_distance: bottleneck_cost(&dist, &max_permutation),
        frobenius_distance: assignment_cost(&dist, &frobenius_permutation).sqrt(),
        max_permutation,
        frobenius_permutation,
    })
}

/// Best bottleneck and best sum-of-squares permutations by enumeration.
/// Ties keep the lexicographically first permutation.
pub fn exhaustive(dist: &[Vec<f64>]) -> (Vec<usize>, Vec<usize>) {
    let k = dist.len();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best_max = (f64::INFINITY, perm.clone());
    let mut best_sum = (f64::INFINITY, perm.clone());
    loop {
        let m = bottleneck_cost(dist, &perm);
        if m < best_max.0 {
            best_max = (m, perm.clone());
        }
        let s = assignment_cost(dist, &perm);
        if s < best_sum.0 {
            best_sum = (s, perm.clone());
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    (best_max.1, best_sum.1)
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Minimum sum-of-squares assignment (Hungarian algorithm with potentials).
/// Returns `π` with `π[k]` the row assigned to column `k`.
pub fn hungarian(dist: &[Vec<f64>]) -> Vec<usize> {
    let n = dist.len();
    let cost = |i: usize, j: usize| dist[i][j] * dist[i][j];
    // 1-based arrays; row_of[j] is the row matched to column j, 0 = none
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| row_of[j] - 1).collect()
}

/// Minimum bottleneck assignment: the smallest distance threshold admitting
/// a perfect matching, found by binary search over the sorted distances.
pub fn bottleneck_assignment(dist: &[Vec<f64>]) -> Vec<usize> {
    let n = dist.len();
    let mut levels: Vec<f64> = dist.iter().flatten().copied().collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let (mut lo, mut hi) = (0, levels.len() - 1);
    let mut best =
        perfect_matching(dist, levels[hi]).expect("complete graph has a perfect matching");
    while lo < hi {
        let mid = (lo + hi) / 2;
        match perfect_matching(dist, levels[mid]) {
            Some(m) => {
                best = m;
                hi = mid;
            }
            None => lo = mid + 1,
        }
    }
    if let Some(m) = perfect_matching(dist, levels[lo]) {
        best = m;
    }
    debug_assert_eq!(best.len(), n);
    best
}

/// Kuhn's augmenting paths on edges with `dist ≤ threshold`.
fn perfect_matching(dist: &[Vec<f64>], threshold: f64) -> Option<Vec<usize>> {
    let n = dist.len();
    let mut row_of: Vec<Option<usize>> = vec![None; n];
    fn augment(
        col: usize,
        dist: &[Vec<f64>],
        threshold: f64,
        seen: &mut [bool],
        row_of: &mut [Option<usize>],
        col_of: &mut [Option<usize>],
    ) -> bool {
        for row in 0..dist.len() {
            if dist[row][col] <= threshold && !seen[row] {
                seen[row] = true;
                let free = match col_of[row] {
                    None => true,
                    Some(other) => augment(other, dist, threshold, seen, row_of, col_of),
                };
                if free {
                    col_of[row] = Some(col);
                    row_of[col] = Some(row);
                    return true;
                }
            }
        }
        false
    }
    let mut col_of: Vec<Option<usize>> = vec![None; n];
    for col in 0..n {
        let mut seen = vec![false; n];
        if !augment(col, dist, threshold, &mut seen, &mut row_of, &mut col_of) {
            return None;
        }
    }
    row_of.into_iter().collect()
}

/// Mean distance from each test row to the fitted simplex.
pub fn heldout_frobenius(vertices: &DMatrix<f64>, x_test: &DMatrix<f64>) -> Result<f64> {
    if x_test.nrows() == 0 {
        return Err(DsnError::param("empty test set"));
    }
    let p = project_rows(vertices, x_test)?;
    Ok(p.residuals.iter().sum::<f64>() / p.residuals.len() as f64)
}

/// `(K − 1)`-dimensional volume `√det(GᵀG) / (K − 1)!` with
/// `G = [β₂ − β₁, …, β_K − β₁]`.
pub fn simplex_volume(vertices: &DMatrix<f64>) -> Result<f64> {
    let k = vertices.ncols();
    if k < 2 {
        return Err(DsnError::param("volume needs K >= 2"));
    }
    let base = vertices.column(0).into_owned();
    let mut g = vertices.columns(1, k - 1).into_owned();
    for mut col in g.column_iter_mut() {
        col -= &base;
    }
    let det = g.tr_mul(&g).determinant().max(0.0);
    let factorial: f64 = (1..k).map(|i| i as f64).product();
    Ok(det.sqrt() / factorial)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodKind {
    /// Mean squared distance to the fitted simplex.
    SquaredError,
    /// Poisson negative log-likelihood per test point, without `log x!`.
    PoissonNll,
    Perplexity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodScore {
    pub kind: LikelihoodKind,
    pub value: f64,
    /// Number of fitted means raised to the log floor.
    pub floored: usize,
}

/// Kernel-appropriate held-out score. `normalized` states whether
/// `vertices` were fitted to multinomial proportions rather than counts.
pub fn heldout_likelihood(
    vertices: &DMatrix<f64>,
    test: &Dataset,
    normalized: bool,
) -> Result<LikelihoodScore> {
    if test.n() == 0 {
        return Err(DsnError::param("empty test set"));
    }
    let x = test.fitting_matrix(normalized);
    let p = project_rows(vertices, &x)?;
    let means = &p.weights * vertices.transpose();
    let n = test.n() as f64;
    let mut floored = 0;
    let mut log_of = |v: f64| {
        if v < LOG_FLOOR {
            floored += 1;
            LOG_FLOOR.ln()
        } else {
            v.ln()
        }
    };
    let score = match test.kernel {
        Kernel::Noiseless | Kernel::Gaussian { .. } => LikelihoodScore {
            kind: LikelihoodKind::SquaredError,
            value: p.residuals.iter().map(|r| r * r).sum::<f64>() / n,
            floored: 0,
        },
        Kernel::Poisson => {
            let mut total = 0.0;
            for (mu, xv) in means.iter().zip(test.observations.iter()) {
                let mu_f = mu.max(LOG_FLOOR);
                total += mu_f - xv * log_of(*mu);
            }
            LikelihoodScore {
                kind: LikelihoodKind::PoissonNll,
                value: total / n,
                floored,
            }
        }
        Kernel::Multinomial { trials } => {
            let scale = if normalized {
                1.0
            } else {
                1.0 / f64::from(trials)
            };
            let mut log_lik = 0.0;
            let mut words = 0.0;
            for (mu, xv) in means.iter().zip(test.observations.iter()) {
                words += xv;
                if *xv > 0.0 {
                    log_lik += xv * log_of(mu * scale);
                }
            }
            LikelihoodScore {
                kind: LikelihoodKind::Perplexity,
                value: (-log_lik / words).exp(),
                floored,
            }
        }
    };
    if score.floored > 0 {
        log::warn!(
            "{} fitted means raised to the log floor {LOG_FLOOR:e}",
            score.floored
        );
    }
    Ok(score)
}

/// All scores for one fitted vertex set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mm_distance: f64,
    pub mm_frobenius: f64,
    pub mm_permutation: Vec<usize>,
    pub frobenius_heldout: Option<f64>,
    pub nll: Option<f64>,
    pub perplexity: Option<f64>,
    pub volume: f64,
    pub floored: usize,
    pub wall_time_s: Option<f64>,
}

/// Scores `vertices` against the truth of `truth_vertices` and, if given, a
/// held-out test set.
pub fn evaluate(
    vertices: &DMatrix<f64>,
    truth_vertices: &DMatrix<f64>,
    test: Option<&Dataset>,
    normalized: bool,
) -> Result<EvalReport> {
    let matching = min_matching(vertices, truth_vertices)?;
    let mut report = EvalReport {
        mm_distance: matching.max_distance,
        mm_frobenius: matching.frobenius_distance,
        mm_permutation: matching.max_permutation,
        frobenius_heldout: None,
        nll: None,
        perplexity: None,
        volume: simplex_volume(vertices)?,
        floored: 0,
        wall_time_s: None,
    };
    if let Some(test) = test {
        let x = test.fitting_matrix(normalized);
        report.frobenius_heldout = Some(heldout_frobenius(vertices, &x)?);
        let score = heldout_likelihood(vertices, test, normalized)?;
        report.floored = score.floored;
        match score.kind {
            LikelihoodKind::Perplexity => report.perplexity = Some(score.value),
            LikelihoodKind::PoissonNll => report.nll = Some(score.value),
            LikelihoodKind::SquaredError => {}
        }
    }
    Ok(report)
}
