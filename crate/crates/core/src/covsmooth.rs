//! Binned two-dimensional local-linear smoothing of empirical covariance
//! cross-products, used to initialize the likelihood fit.
//!
//! Off-diagonal residual products `y_ij * y_il` at `(t_ij, t_il)`, pooled
//! over subjects, are binned to the quadrature grid and smoothed with a
//! product Epanechnikov kernel. Diagonal pairs are excluded so the nugget
//! variance does not leak into the surface.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::grid::QuadratureGrid;

/// Default bandwidth as a fraction of the domain length.
const BANDWIDTH_FRACTION: f64 = 0.07;
/// Bandwidth growth factor when a local fit is singular.
const WIDEN: f64 = 1.5;
const MAX_WIDENINGS: usize = 4;

/// Smooths pooled residual cross-products onto `grid x grid`.
///
/// `subjects` holds per-subject `(times, residuals)`. Returns a symmetric
/// H x H surface estimate of the covariance of the signal.
pub fn smooth_covariance_surface(
    subjects: &[(Vec<f64>, Vec<f64>)],
    grid: &QuadratureGrid,
) -> DMatrix<f64> {
    let h = grid.len();
    let (a, b) = grid.domain();
    let span = b - a;

    // Bin raw products at the nearest grid node pair.
    let mut count = DMatrix::<f64>::zeros(h, h);
    let mut total = DMatrix::<f64>::zeros(h, h);
    let to_bin = |t: f64| -> usize {
        let frac = ((t - a) / span).clamp(0.0, 1.0);
        (frac * (h - 1) as f64).round() as usize
    };
    for (times, resid) in subjects {
        let m = times.len();
        for j in 0..m {
            for l in 0..m {
                if j == l {
                    continue;
                }
                let bj = to_bin(times[j]);
                let bl = to_bin(times[l]);
                count[(bj, bl)] += 1.0;
                total[(bj, bl)] += resid[j] * resid[l];
            }
        }
    }

    let n_pairs: f64 = count.sum();
    let global_mean = if n_pairs > 0.0 { total.sum() / n_pairs } else { 0.0 };

    let step = span / (h - 1) as f64;
    let mut surface = DMatrix::zeros(h, h);
    for ai in 0..h {
        for bi in ai..h {
            let mut bw = BANDWIDTH_FRACTION * span;
            let mut value = None;
            for _ in 0..=MAX_WIDENINGS {
                if let Some(v) = local_linear_at(&count, &total, step, ai, bi, bw) {
                    value = Some(v);
                    break;
                }
                bw *= WIDEN;
            }
            let v = value.unwrap_or(global_mean);
            surface[(ai, bi)] = v;
            surface[(bi, ai)] = v;
        }
    }
    surface
}

/// Weighted local plane fit at grid node `(ai, bi)`; `None` when the local
/// design is singular.
fn local_linear_at(
    count: &DMatrix<f64>,
    total: &DMatrix<f64>,
    step: f64,
    ai: usize,
    bi: usize,
    bw: f64,
) -> Option<f64> {
    let h = count.nrows();
    let radius = (bw / step).floor() as usize;
    let lo_a = ai.saturating_sub(radius);
    let hi_a = (ai + radius).min(h - 1);
    let lo_b = bi.saturating_sub(radius);
    let hi_b = (bi + radius).min(h - 1);

    let mut xtx = Matrix3::<f64>::zeros();
    let mut xty = Vector3::<f64>::zeros();
    let mut used = 0usize;
    for ia in lo_a..=hi_a {
        let da = (ia as f64 - ai as f64) * step / bw;
        let ka = 1.0 - da * da;
        if ka <= 0.0 {
            continue;
        }
        for ib in lo_b..=hi_b {
            let c = count[(ia, ib)];
            if c == 0.0 {
                continue;
            }
            let db = (ib as f64 - bi as f64) * step / bw;
            let kb = 1.0 - db * db;
            if kb <= 0.0 {
                continue;
            }
            let w = c * ka * kb;
            let mean = total[(ia, ib)] / c;
            let x = Vector3::new(1.0, da, db);
            xtx += x * x.transpose() * w;
            xty += x * (w * mean);
            used += 1;
        }
    }
    if used < 3 {
        return None;
    }
    let solved = xtx.cholesky()?.solve(&xty);
    Some(solved[0])
}

/// Top-`m` eigenfunctions of a smoothed surface in the quadrature metric:
/// eigenvectors of `W^{1/2} C W^{1/2}`, back-transformed and normalized.
pub fn surface_eigenfunctions(
    surface: &DMatrix<f64>,
    grid: &QuadratureGrid,
    m: usize,
) -> DMatrix<f64> {
    let h = grid.len();
    let w = grid.weights();
    let mut scaled = surface.clone();
    for i in 0..h {
        for j in 0..h {
            scaled[(i, j)] *= (w[i] * w[j]).sqrt();
        }
    }
    let (_, vectors) = crate::linalg::sym_eigen_desc(&scaled);
    let mut out = DMatrix::zeros(h, m);
    for q in 0..m {
        for i in 0..h {
            out[(i, q)] = vectors[(i, q)] / w[i].sqrt();
        }
    }
    crate::linalg::canonicalize_columns_by_peak(&mut out);
    out
}
