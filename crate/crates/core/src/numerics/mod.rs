//! Dense numerics shared by the estimators.

mod kmeans;
mod svd;

pub use kmeans::{
    kmeans, kmeans_seeded, lloyd, KMeansResult, DEFAULT_RESTARTS, MAX_LLOYD_ITERATIONS,
};
pub use svd::{truncated_svd, SvdFactors};

use nalgebra::{DMatrix, DVector};

use crate::error::{DsnError, Result};

/// Subtracts the column mean. Returns the centered matrix and the mean.
pub fn center(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(DsnError::param("cannot center an empty matrix"));
    }
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for (mut col, m) in centered.column_iter_mut().zip(mean.iter()) {
        col.add_scalar_mut(-m);
    }
    Ok((centered, mean))
}

/// Biased sample covariance `(1/n) X̄ᵀ X̄`.
pub fn sample_covariance(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() < 2 {
        return Err(DsnError::param("sample covariance needs at least two rows"));
    }
    let (centered, _) = center(x)?;
    Ok(gram(&centered) / x.nrows() as f64)
}

/// `Aᵀ A`, symmetrized to remove rounding asymmetry.
pub(crate) fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    let g = a.tr_mul(a);
    (&g + g.transpose()) * 0.5
}

/// Row-major copy of a column-major matrix.
pub(crate) fn to_row_major(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = x.shape();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            out.push(x[(i, j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_repeated_row() {
        let x = DMatrix::from_row_slice(3, 2, &[1.5, -2.0, 1.5, -2.0, 1.5, -2.0]);
        let (c, m) = center(&x).unwrap();
        assert_eq!(c, DMatrix::zeros(3, 2));
        assert_eq!(m.as_slice(), &[1.5, -2.0]);
    }

    #[test]
    fn center_two_points() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 0.0]);
        let (c, m) = center(&x).unwrap();
        assert_eq!(m.as_slice(), &[1.0, 0.0]);
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 0.0]));
    }

    #[test]
    fn center_rejects_empty() {
        assert!(center(&DMatrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn covariance_examples() {
        let x = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        assert_eq!(sample_covariance(&x).unwrap()[(0, 0)], 1.0);
        let constant = DMatrix::from_element(5, 3, 4.2);
        assert_eq!(sample_covariance(&constant).unwrap(), DMatrix::zeros(3, 3));
        assert!(sample_covariance(&DMatrix::zeros(1, 3)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn centered_columns_have_zero_mean(
            data in proptest::collection::vec(-1e3f64..1e3, 12..60),
        ) {
            let d = 3;
            let n = data.len() / d;
            let x = DMatrix::from_row_slice(n, d, &data[..n * d]);
            let (c, _) = center(&x).unwrap();
            let scale = x.amax().max(1.0);
            for col in c.column_iter() {
                proptest::prop_assert!(col.sum().abs() <= 1e-9 * n as f64 * scale);
            }
        }

        #[test]
        fn covariance_is_symmetric_psd(
            data in proptest::collection::vec(-10f64..10.0, 8..40),
        ) {
            let d = 2;
            let n = data.len() / d;
            let x = DMatrix::from_row_slice(n, d, &data[..n * d]);
            let s = sample_covariance(&x).unwrap();
            proptest::prop_assert_eq!(s.clone(), s.transpose());
            let eig = s.symmetric_eigenvalues();
            proptest::prop_assert!(eig.iter().all(|&e| e >= -1e-9 * s.amax().max(1.0)));
        }
    }
}
