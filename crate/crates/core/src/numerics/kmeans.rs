//! Lloyd K-means with k-means++ seeding and restarts.
//!
//! The Lloyd iteration keeps Hamerly's per-point distance bounds so that
//! points whose assignment provably cannot change skip the full distance scan.
//! Assignments, centroids and the fixpoint are those of plain Lloyd.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use super::to_row_major;
use crate::error::{DsnError, Result};
use crate::rng::seeded;

pub const MAX_LLOYD_ITERATIONS: usize = 300;
pub const DEFAULT_RESTARTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `K x d`, one centroid per row.
    pub centroids: DMatrix<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub cost: f64,
    pub iterations: usize,
    /// Assignments reached a fixpoint before the iteration cap.
    pub converged: bool,
    /// Cost after every assignment step, starting from the initial centroids.
    pub cost_history: Vec<f64>,
    /// An empty cluster was reseeded during the run.
    pub reseeded: bool,
}

struct Points {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl Points {
    fn new(x: &DMatrix<f64>) -> Self {
        Self {
            data: to_row_major(x),
            n: x.nrows(),
            d: x.ncols(),
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Runs Lloyd from the given `K x d` initial centroids.
pub fn lloyd(points: &DMatrix<f64>, init: &DMatrix<f64>) -> Result<KMeansResult> {
    validate(points, init.nrows())?;
    if init.ncols() != points.ncols() {
        return Err(DsnError::ShapeMismatch(format!(
            "initial centroids have {} columns, points have {}",
            init.ncols(),
            points.ncols()
        )));
    }
    let p = Points::new(points);
    Ok(run_lloyd(&p, to_row_major(init), init.nrows(), MAX_LLOYD_ITERATIONS).into_result(p.d))
}

/// Best of `restarts` k-means++ initialized Lloyd runs.
pub fn kmeans<R: Rng + ?Sized>(
    points: &DMatrix<f64>,
    k: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<KMeansResult> {
    kmeans_seeded(points, k, restarts, &[], rng)
}

/// Like [`kmeans`], with additional fixed initializations competing against
/// the k-means++ restarts. Ties in cost go to the earliest run, fixed
/// initializations first.
pub fn kmeans_seeded<R: Rng + ?Sized>(
    points: &DMatrix<f64>,
    k: usize,
    restarts: usize,
    fixed_inits: &[DMatrix<f64>],
    rng: &mut R,
) -> Result<KMeansResult> {
    validate(points, k)?;
    if restarts == 0 && fixed_inits.is_empty() {
        return Err(DsnError::param("k-means needs at least one run"));
    }
    for init in fixed_inits {
        if init.shape() != (k, points.ncols()) {
            return Err(DsnError::ShapeMismatch(format!(
                "fixed initialization has shape {:?}, expected ({k}, {})",
                init.shape(),
                points.ncols()
            )));
        }
    }
    let p = Points::new(points);
    let restart_seeds: Vec<u64> = (0..restarts).map(|_| rng.random()).collect();

    let mut inits: Vec<Vec<f64>> = fixed_inits.iter().map(to_row_major).collect();
    inits.extend(
        restart_seeds
            .iter()
            .map(|&s| plus_plus(&p, k, &mut seeded(s))),
    );

    let runs: Vec<Run> = inits
        .into_par_iter()
        .map(|init| run_lloyd(&p, init, k, MAX_LLOYD_ITERATIONS))
        .collect();
    let best = runs
        .into_iter()
        .reduce(|best, run| if run.cost < best.cost { run } else { best })
        .expect("at least one run");
    Ok(best.into_result(p.d))
}

fn validate(points: &DMatrix<f64>, k: usize) -> Result<()> {
    let n = points.nrows();
    if k == 0 {
        return Err(DsnError::param("k-means needs K >= 1"));
    }
    if n < k {
        return Err(DsnError::param(format!(
            "k-means needs n >= K, got n={n}, K={k}"
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(DsnError::param("k-means input contains non-finite values"));
    }
    Ok(())
}

/// Canonical k-means++: first center uniform, then sampling proportional to
/// the squared distance to the nearest chosen center.
fn plus_plus<R: Rng + ?Sized>(p: &Points, k: usize, rng: &mut R) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(k * p.d);
    let first = rng.random_range(0..p.n);
    centroids.extend_from_slice(p.row(first));
    let mut nearest: Vec<f64> = (0..p.n).map(|i| sq_dist(p.row(i), p.row(first))).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let chosen = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in nearest.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total weight")
        } else {
            rng.random_range(0..p.n)
        };
        let row = p.row(chosen).to_vec();
        for (i, w) in nearest.iter_mut().enumerate() {
            *w = w.min(sq_dist(p.row(i), &row));
        }
        centroids.extend_from_slice(&row);
    }
    centroids
}

struct Run {
    centroids: Vec<f64>,
    assignments: Vec<usize>,
    cost: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
    reseeded: bool,
}

impl Run {
    fn into_result(self, d: usize) -> KMeansResult {
        let k = self.centroids.len() / d.max(1);
        KMeansResult {
            centroids: DMatrix::from_row_slice(k, d, &self.centroids),
            assignments: self.assignments,
            cost: self.cost,
            iterations: self.iterations,
            converged: self.converged,
            cost_history: self.history,
            reseeded: self.reseeded,
        }
    }
}

/// Centroids regrouped in blocks of `LANES`, coordinate-major inside each
/// block, padded with copies of the last centroid.
const LANES: usize = 4;

fn blocked_centroids(centroids: &[f64], d: usize) -> Vec<f64> {
    let k = centroids.len() / d.max(1);
    let blocks = k.div_ceil(LANES);
    let mut out = vec![0.0; blocks * LANES * d];
    for b in 0..blocks {
        for lane in 0..LANES {
            let j = (b * LANES + lane).min(k - 1);
            for t in 0..d {
                out[(b * d + t) * LANES + lane] = centroids[j * d + t];
            }
        }
    }
    out
}

/// Exact nearest and second-nearest distances; ties go to the lower index.
/// Each squared distance is summed over coordinates in order, as in
/// [`sq_dist`].
fn nearest_two(x: &[f64], blocked: &[f64], k: usize) -> (usize, f64, f64) {
    let d = x.len();
    let mut best = (0, f64::INFINITY);
    let mut second = f64::INFINITY;
    for (b, block) in blocked.chunks_exact(d * LANES).enumerate() {
        let mut acc = [0.0f64; LANES];
        for (xv, c) in x.iter().zip(block.chunks_exact(LANES)) {
            for lane in 0..LANES {
                let diff = xv - c[lane];
                acc[lane] += diff * diff;
            }
        }
        for (lane, &dist) in acc.iter().enumerate() {
            let j = b * LANES + lane;
            if j >= k {
                break;
            }
            if dist < best.1 {
                second = best.1;
                best = (j, dist);
            } else if dist < second {
                second = dist;
            }
        }
    }
    (best.0, best.1.sqrt(), second.sqrt())
}

struct Bounds {
    assign: Vec<usize>,
    upper: Vec<f64>,
    lower: Vec<f64>,
}

fn assign_all(p: &Points, centroids: &[f64]) -> Bounds {
    let mut b = Bounds {
        assign: vec![0; p.n],
        upper: vec![0.0; p.n],
        lower: vec![0.0; p.n],
    };
    let k = centroids.len() / p.d.max(1);
    let blocked = blocked_centroids(centroids, p.d);
    for i in 0..p.n {
        let (a, d1, d2) = nearest_two(p.row(i), &blocked, k);
        b.assign[i] = a;
        b.upper[i] = d1;
        b.lower[i] = d2;
    }
    b
}

fn assignment_cost(p: &Points, centroids: &[f64], assign: &[usize]) -> f64 {
    assign
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(p.row(i), &centroids[a * p.d..(a + 1) * p.d]))
        .sum()
}

fn run_lloyd(p: &Points, mut centroids: Vec<f64>, k: usize, max_iter: usize) -> Run {
    let d = p.d;
    let mut bounds = assign_all(p, &centroids);
    let mut history = vec![assignment_cost(p, &centroids, &bounds.assign)];
    let mut converged = false;
    let mut reseeded = false;
    let mut iterations = 0;
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    let mut movement = vec![0.0; k];
    let mut half_sep = vec![0.0; k];

    while iterations < max_iter {
        iterations += 1;

        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for i in 0..p.n {
            let a = bounds.assign[i];
            counts[a] += 1;
            for (s, x) in sums[a * d..(a + 1) * d].iter_mut().zip(p.row(i)) {
                *s += x;
            }
        }
        let previous = centroids.clone();
        let mut empty = false;
        for j in 0..k {
            if counts[j] == 0 {
                empty = true;
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            for (c, s) in centroids[j * d..(j + 1) * d]
                .iter_mut()
                .zip(&sums[j * d..(j + 1) * d])
            {
                *c = s * inv;
            }
        }

        let changed = if empty {
            // reseed each empty cluster at the point farthest from its centroid
            reseeded = true;
            let mut taken: Vec<usize> = Vec::new();
            for j in 0..k {
                if counts[j] != 0 {
                    continue;
                }
                let far = (0..p.n)
                    .filter(|i| !taken.contains(i))
                    .map(|i| {
                        let a = bounds.assign[i];
                        (i, sq_dist(p.row(i), &centroids[a * d..(a + 1) * d]))
                    })
                    .fold((0, f64::NEG_INFINITY), |best, cur| {
                        if cur.1 > best.1 {
                            cur
                        } else {
                            best
                        }
                    })
                    .0;
                taken.push(far);
                let row = p.row(far).to_vec();
                centroids[j * d..(j + 1) * d].copy_from_slice(&row);
            }
            let fresh = assign_all(p, &centroids);
            let changed = fresh.assign != bounds.assign;
            bounds = fresh;
            changed
        } else {
            for j in 0..k {
                movement[j] = sq_dist(
                    &previous[j * d..(j + 1) * d],
                    &centroids[j * d..(j + 1) * d],
                )
                .sqrt();
            }
            for j in 0..k {
                let mut closest = f64::INFINITY;
                for l in 0..k {
                    if l != j {
                        closest = closest.min(sq_dist(
                            &centroids[j * d..(j + 1) * d],
                            &centroids[l * d..(l + 1) * d],
                        ));
                    }
                }
                half_sep[j] = 0.5 * closest.sqrt();
            }
            let (mut top, mut top_idx, mut runner_up) = (0.0, 0, 0.0);
            for (j, &m) in movement.iter().enumerate() {
                if m > top {
                    runner_up = top;
                    top = m;
                    top_idx = j;
                } else if m > runner_up {
                    runner_up = m;
                }
            }
            let blocked = blocked_centroids(&centroids, d);
            let mut changed = false;
            for i in 0..p.n {
                let a = bounds.assign[i];
                bounds.upper[i] += movement[a];
                bounds.lower[i] -= if a == top_idx { runner_up } else { top };
                let limit = half_sep[a].max(bounds.lower[i]);
                if bounds.upper[i] < limit {
                    continue;
                }
                bounds.upper[i] = sq_dist(p.row(i), &centroids[a * d..(a + 1) * d]).sqrt();
                if bounds.upper[i] < limit {
                    continue;
                }
                let (best, d1, d2) = nearest_two(p.row(i), &blocked, k);
                if best != a {
                    changed = true;
                    bounds.assign[i] = best;
                }
                bounds.upper[i] = d1;
                bounds.lower[i] = d2;
            }
            changed
        };

        history.push(assignment_cost(p, &centroids, &bounds.assign));
        if !changed {
            converged = true;
            break;
        }
    }
    let cost = *history.last().expect("non-empty history");
    Run {
        centroids,
        assignments: bounds.assign,
        cost,
        iterations,
        converged,
        history,
        reseeded,
    }
}
