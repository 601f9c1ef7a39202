//! Small shared linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::CoreError;

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted
/// descending and eigenvector columns reordered to match.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let decomp = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        decomp.eigenvalues[b]
            .partial_cmp(&decomp.eigenvalues[a])
            .expect("non-finite eigenvalue")
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| decomp.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &decomp.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Flip each column so its largest-magnitude entry is positive.
/// Ties in magnitude resolve to the earliest row.
pub fn canonicalize_columns_by_peak(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut peak = 0usize;
        let mut best = f64::NEG_INFINITY;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                peak = i;
            }
        }
        if col[peak] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Symmetric inverse square root of an SPD matrix.
///
/// Errors when the spectrum is degenerate relative to `rel_threshold`
/// (smallest eigenvalue below `rel_threshold * largest`).
pub fn sym_inv_sqrt(gram: &DMatrix<f64>, rel_threshold: f64) -> Result<DMatrix<f64>, CoreError> {
    let (values, vectors) = sym_eigen_desc(gram);
    let max_eig = values[0];
    let min_eig = values[values.len() - 1];
    if !(min_eig > rel_threshold * max_eig) || max_eig <= 0.0 {
        return Err(CoreError::IllConditionedBasis {
            min_eig,
            max_eig,
            threshold: rel_threshold,
        });
    }
    let inv_sqrt = DVector::from_iterator(values.len(), values.iter().map(|v| 1.0 / v.sqrt()));
    let scaled = &vectors * DMatrix::from_diagonal(&inv_sqrt);
    let mut out = &scaled * vectors.transpose();
    // Enforce exact symmetry against roundoff.
    let n = out.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    Ok(out)
}

/// Max absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
