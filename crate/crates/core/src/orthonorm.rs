//! Weighted modified Gram-Schmidt orthonormalization and the continuous
//! representation of grid-valued eigenfunctions.
//!
//! The orthonormalization is a single-pass MGS recursion under the discrete
//! weighted inner product of a quadrature grid. A forward tape records every
//! intermediate residual so the recursion can be differentiated in reverse
//! mode by the likelihood fitter.

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSystem;
use crate::error::CoreError;
use crate::grid::QuadratureGrid;

/// Weighted norm below which a post-projection pivot is treated as rank
/// deficient.
pub const PIVOT_THRESHOLD: f64 = 1e-10;

/// Magnitude threshold for the leading-entry sign convention.
const SIGN_EPS: f64 = 1e-8;

/// An orthonormal set of grid-valued functions, optionally carrying the
/// coefficients of its continuous representation in the orthonormalized
/// basis.
#[derive(Debug, Clone)]
pub struct OrthonormalSet {
    /// H x M matrix of function values on the grid.
    pub values: DMatrix<f64>,
    /// U x M coefficients in the orthonormalized basis; filled by
    /// [`continuous_representation`].
    pub coeffs_orthobasis: Option<DMatrix<f64>>,
}

impl OrthonormalSet {
    /// Checks `Phi^T W Phi = I` on the given grid.
    pub fn orthonormality_defect(&self, grid: &QuadratureGrid) -> f64 {
        let m = self.values.ncols();
        let gram = grid.gram_of(&self.values);
        crate::linalg::max_abs_diff(&gram, &DMatrix::identity(m, m))
    }
}

/// Forward record of one MGS run, sufficient to replay it in reverse.
#[derive(Debug, Clone)]
pub struct MgsTape {
    /// `residuals[q][j]` is the q-th column before its j-th projection step;
    /// `residuals[q][q]` is the pre-normalization residual.
    residuals: Vec<Vec<DVector<f64>>>,
    /// `coeffs[q][j] = <residual, phi_j>_w` used at each projection step.
    coeffs: Vec<Vec<f64>>,
    norms: Vec<f64>,
    signs: Vec<f64>,
    phi: DMatrix<f64>,
}

impl MgsTape {
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }
}

/// Single-pass weighted modified Gram-Schmidt of the columns of `raw`.
///
/// Each output column is sign-flipped so that its first entry exceeding
/// 1e-8 in magnitude is positive, making the map deterministic.
pub fn weighted_mgs(
    raw: &DMatrix<f64>,
    grid: &QuadratureGrid,
) -> Result<OrthonormalSet, CoreError> {
    let tape = weighted_mgs_with_tape(raw, grid)?;
    Ok(OrthonormalSet {
        values: tape.phi,
        coeffs_orthobasis: None,
    })
}

/// As [`weighted_mgs`], but returns the tape needed for reverse-mode
/// differentiation.
pub fn weighted_mgs_with_tape(
    raw: &DMatrix<f64>,
    grid: &QuadratureGrid,
) -> Result<MgsTape, CoreError> {
    let h = raw.nrows();
    let m = raw.ncols();
    if h != grid.len() {
        return Err(CoreError::invalid(format!(
            "raw columns have {h} rows but the grid has {} points",
            grid.len()
        )));
    }
    let w = grid.weights();
    let mut phi = DMatrix::zeros(h, m);
    let mut residuals = Vec::with_capacity(m);
    let mut coeffs = Vec::with_capacity(m);
    let mut norms = Vec::with_capacity(m);
    let mut signs = Vec::with_capacity(m);

    for q in 0..m {
        let mut v: DVector<f64> = raw.column(q).into();
        let mut steps = Vec::with_capacity(q + 1);
        let mut rs = Vec::with_capacity(q);
        for j in 0..q {
            steps.push(v.clone());
            let phi_j = phi.column(j);
            let mut r = 0.0;
            for i in 0..h {
                r += w[i] * v[i] * phi_j[i];
            }
            for i in 0..h {
                v[i] -= r * phi_j[i];
            }
            rs.push(r);
        }
        steps.push(v.clone());

        let norm = {
            let mut acc = 0.0;
            for i in 0..h {
                acc += w[i] * v[i] * v[i];
            }
            acc.sqrt()
        };
        if !(norm > PIVOT_THRESHOLD) {
            return Err(CoreError::RankDeficiency {
                column: q,
                norm,
                threshold: PIVOT_THRESHOLD,
            });
        }

        let sign = leading_sign(&v);
        for i in 0..h {
            phi[(i, q)] = sign * v[i] / norm;
        }
        residuals.push(steps);
        coeffs.push(rs);
        norms.push(norm);
        signs.push(sign);
    }

    Ok(MgsTape {
        residuals,
        coeffs,
        norms,
        signs,
        phi,
    })
}

fn leading_sign(v: &DVector<f64>) -> f64 {
    for &x in v.iter() {
        if x.abs() > SIGN_EPS {
            return if x < 0.0 { -1.0 } else { 1.0 };
        }
    }
    1.0
}

/// Reverse-mode sweep through a recorded MGS run: given `d L / d Phi`,
/// returns `d L / d raw`.
pub fn mgs_backward(
    tape: &MgsTape,
    grid: &QuadratureGrid,
    phi_bar: &DMatrix<f64>,
) -> DMatrix<f64> {
    let h = tape.phi.nrows();
    let m = tape.phi.ncols();
    debug_assert_eq!(phi_bar.nrows(), h);
    debug_assert_eq!(phi_bar.ncols(), m);
    let w = grid.weights();

    let mut phi_bar = phi_bar.clone();
    let mut raw_bar = DMatrix::zeros(h, m);

    for q in (0..m).rev() {
        let norm = tape.norms[q];
        let sign = tape.signs[q];
        let v_fin = &tape.residuals[q][q];

        // Through phi_q = sign * v / norm with norm = ||v||_w.
        let g = phi_bar.column(q);
        let mut g_dot_v = 0.0;
        for i in 0..h {
            g_dot_v += g[i] * v_fin[i];
        }
        let mut v_bar = DVector::zeros(h);
        for i in 0..h {
            v_bar[i] = sign * (g[i] / norm - g_dot_v * w[i] * v_fin[i] / (norm * norm * norm));
        }

        // Through the projection steps, newest first.
        for j in (0..q).rev() {
            let r = tape.coeffs[q][j];
            let v_prev = &tape.residuals[q][j];
            let phi_j = tape.phi.column(j);
            let mut r_bar = 0.0;
            for i in 0..h {
                r_bar -= v_bar[i] * phi_j[i];
            }
            for i in 0..h {
                phi_bar[(i, j)] += -r * v_bar[i] + r_bar * w[i] * v_prev[i];
                v_bar[i] += r_bar * w[i] * phi_j[i];
            }
        }
        raw_bar.set_column(q, &v_bar);
    }
    raw_bar
}

/// Fills the orthonormal-basis coefficients of `set` so that
/// `Phi(t) = B~(t)^T beta~` for any `t` in the domain.
///
/// `beta~` is the weighted least-squares projection
/// `(B~^T W B~)^{-1} B~^T W Phi`. Because `B~^T W B~` equals the identity up
/// to quadrature error, this agrees with the plain cross-product
/// `B~^T W Phi` to O((H-1)^-2) while reproducing grid values of functions in
/// the basis span exactly.
pub fn continuous_representation(
    set: &mut OrthonormalSet,
    basis: &BasisSystem,
) -> Result<(), CoreError> {
    set.coeffs_orthobasis = Some(project_onto_orthobasis(&set.values, basis)?);
    Ok(())
}

/// Weighted least-squares coefficients of grid-valued columns in the
/// orthonormalized basis.
pub fn project_onto_orthobasis(
    values: &DMatrix<f64>,
    basis: &BasisSystem,
) -> Result<DMatrix<f64>, CoreError> {
    let grid = basis.grid();
    if values.nrows() != grid.len() {
        return Err(CoreError::invalid(
            "orthonormal set and basis use different grids",
        ));
    }
    let b_tilde = basis.orthonormal_eval_matrix();
    let h = grid.len();
    let mut weighted = values.clone();
    for i in 0..h {
        let w = grid.weights()[i];
        for c in 0..weighted.ncols() {
            weighted[(i, c)] *= w;
        }
    }
    let cross = b_tilde.transpose() * weighted;
    let normal = grid.gram_of(&b_tilde);
    let chol = normal.cholesky().ok_or_else(|| {
        CoreError::invalid("quadrature Gram of the orthonormalized basis is not positive definite")
    })?;
    Ok(chol.solve(&cross))
}

/// Evaluates the continuous representation at arbitrary points, one row per
/// point and one column per function.
pub fn eval_continuous(
    basis: &BasisSystem,
    coeffs_orthobasis: &DMatrix<f64>,
    points: &[f64],
) -> Result<DMatrix<f64>, CoreError> {
    Ok(basis.orthonormal_rows_at(points)? * coeffs_orthobasis)
}
