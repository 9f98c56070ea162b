use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::gram;
use crate::error::{DsnError, Result};

/// Rank-`r` singular factors `X ≈ U Λ Wᵀ`.
///
/// `left` is `n x r`, `singular` is descending, `right` is `D x r` with
/// orthonormal columns. Each column of `right` has its largest-magnitude
/// entry positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub left: DMatrix<f64>,
    pub singular: DVector<f64>,
    pub right: DMatrix<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.singular.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.left.clone();
        for (mut col, s) in scaled.column_iter_mut().zip(self.singular.iter()) {
            col *= *s;
        }
        scaled * self.right.transpose()
    }
}

/// Top-`rank` singular factors of `x`.
///
/// The dominant subspace comes from an eigendecomposition of the smaller Gram
/// matrix; a thin SVD of the projected data then yields singular values and
/// vectors at full working precision.
pub fn truncated_svd(x: &DMatrix<f64>, rank: usize) -> Result<SvdFactors> {
    let (n, d) = x.shape();
    if rank == 0 || rank > n.min(d) {
        return Err(DsnError::param(format!(
            "rank {rank} out of range for a {n}x{d} matrix"
        )));
    }
    let (mut left, singular, mut right) = if d <= n {
        let basis = top_eigenvectors(gram(x), rank)?;
        let projected = x * &basis;
        let (u, s, v) = sorted_thin_svd(projected)?;
        (u, s, basis * v)
    } else {
        let outer = x * x.transpose();
        let outer = (&outer + outer.transpose()) * 0.5;
        let basis = top_eigenvectors(outer, rank)?;
        let projected = x.tr_mul(&basis);
        let (w, s, v) = sorted_thin_svd(projected)?;
        (basis * v, s, w)
    };

    for j in 0..rank {
        let mut pivot = 0;
        for i in 1..d {
            if right[(i, j)].abs() > right[(pivot, j)].abs() {
                pivot = i;
            }
        }
        if right[(pivot, j)] < 0.0 {
            right.column_mut(j).neg_mut();
            left.column_mut(j).neg_mut();
        }
    }
    Ok(SvdFactors {
        left,
        singular,
        right,
    })
}

fn top_eigenvectors(sym: DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0).ok_or_else(|| {
        DsnError::Numerical("symmetric eigendecomposition did not converge".into())
    })?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut basis = DMatrix::zeros(eig.eigenvectors.nrows(), rank);
    for (dst, &src) in order.iter().take(rank).enumerate() {
        basis.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(basis)
}

/// Thin SVD `a = U diag(s) Vᵀ` with descending `s`; returns `(U, s, V)`.
fn sorted_thin_svd(a: DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let svd = a
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| DsnError::Numerical("svd did not converge".into()))?;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let r = order.len();
    let mut u_sorted = DMatrix::zeros(u.nrows(), r);
    let mut v_sorted = DMatrix::zeros(v_t.ncols(), r);
    let mut s_sorted = DVector::zeros(r);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(src));
        v_sorted.set_column(dst, &v_t.row(src).transpose());
        s_sorted[dst] = s[src];
    }
    Ok((u_sorted, s_sorted, v_sorted))
}
