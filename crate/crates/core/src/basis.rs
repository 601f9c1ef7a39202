use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::grid::QuadratureGrid;
use crate::linalg::sym_inv_sqrt;

/// Relative eigenvalue threshold below which a Gram matrix is treated as
/// numerically singular.
pub const GRAM_CONDITION_THRESHOLD: f64 = 1e-12;

/// Basis family. B-splines use equally spaced interior knots; the Fourier
/// system is the constant plus sine/cosine pairs of increasing frequency,
/// truncated at the requested count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BasisKind {
    BSpline { order: usize },
    Fourier,
}

impl BasisKind {
    /// Cubic B-splines, the default family.
    pub fn cubic_bspline() -> Self {
        BasisKind::BSpline { order: 4 }
    }
}

/// A basis system evaluated on a quadrature grid, with its Gram matrix and
/// the symmetric inverse square root used to orthonormalize it.
#[derive(Debug, Clone)]
pub struct BasisSystem {
    kind: BasisKind,
    count: usize,
    domain: (f64, f64),
    knots: Option<Vec<f64>>,
    grid: QuadratureGrid,
    /// H x U values of the raw basis on the grid.
    eval_matrix: DMatrix<f64>,
    /// U x U Gram matrix of the raw basis (continuous inner products).
    gram: DMatrix<f64>,
    /// Symmetric inverse square root of `gram`.
    gram_inv_sqrt: DMatrix<f64>,
}

impl BasisSystem {
    /// Evaluates `count` basis functions of the given family on `grid`.
    ///
    /// The Gram matrix is computed by trapezoid quadrature on a 10x refined
    /// uniform grid, which treats B-spline and Fourier families uniformly.
    pub fn new(
        kind: BasisKind,
        count: usize,
        grid: &QuadratureGrid,
    ) -> Result<Self, CoreError> {
        let domain = grid.domain();
        match kind {
            BasisKind::BSpline { order } => {
                if order < 2 {
                    return Err(CoreError::invalid(format!(
                        "B-spline order must be at least 2, got {order}"
                    )));
                }
                if count < order {
                    return Err(CoreError::invalid(format!(
                        "B-spline basis needs at least `order` functions ({order}), got {count}"
                    )));
                }
            }
            BasisKind::Fourier => {
                if count == 0 {
                    return Err(CoreError::invalid("basis count must be positive"));
                }
            }
        }
        if count > grid.len() {
            return Err(CoreError::IllConditionedBasis {
                min_eig: 0.0,
                max_eig: 1.0,
                threshold: GRAM_CONDITION_THRESHOLD,
            });
        }

        let knots = match kind {
            BasisKind::BSpline { order } => Some(build_knots(domain, count, order)),
            BasisKind::Fourier => None,
        };

        let eval_matrix = eval_rows(kind, count, domain, knots.as_deref(), grid.points())?;

        // The discrete quadrature Gram must be invertible for the weighted
        // MGS and the likelihood to make sense on this grid.
        let discrete_gram = grid.gram_of(&eval_matrix);
        sym_inv_sqrt(&discrete_gram, GRAM_CONDITION_THRESHOLD)?;

        let refined = QuadratureGrid::uniform(domain, 10 * (grid.len() - 1) + 1)?;
        let refined_rows = eval_rows(kind, count, domain, knots.as_deref(), refined.points())?;
        let gram = refined.gram_of(&refined_rows);
        let gram_inv_sqrt = sym_inv_sqrt(&gram, GRAM_CONDITION_THRESHOLD)?;

        Ok(Self {
            kind,
            count,
            domain,
            knots,
            grid: grid.clone(),
            eval_matrix,
            gram,
            gram_inv_sqrt,
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn knots(&self) -> Option<&[f64]> {
        self.knots.as_deref()
    }

    /// H x U matrix of basis values on the grid.
    pub fn eval_matrix(&self) -> &DMatrix<f64> {
        &self.eval_matrix
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.gram_inv_sqrt
    }

    /// Raw basis values at one point.
    pub fn eval_at(&self, t: f64) -> Result<DVector<f64>, CoreError> {
        let row = eval_rows(
            self.kind,
            self.count,
            self.domain,
            self.knots.as_deref(),
            &[t],
        )?;
        Ok(row.row(0).transpose())
    }

    /// Raw basis values at many points, one row per point.
    pub fn rows_at(&self, points: &[f64]) -> Result<DMatrix<f64>, CoreError> {
        eval_rows(self.kind, self.count, self.domain, self.knots.as_deref(), points)
    }

    /// Orthonormalized basis values `B~(t) = B(t) G^{-1/2}`, one row per point.
    pub fn orthonormal_rows_at(&self, points: &[f64]) -> Result<DMatrix<f64>, CoreError> {
        Ok(self.rows_at(points)? * &self.gram_inv_sqrt)
    }

    /// `B~` on the grid itself.
    pub fn orthonormal_eval_matrix(&self) -> DMatrix<f64> {
        &self.eval_matrix * &self.gram_inv_sqrt
    }
}

/// Knot vector for `count` B-splines of the given order: `order` copies of
/// each endpoint around equally spaced interior knots.
fn build_knots(domain: (f64, f64), count: usize, order: usize) -> Vec<f64> {
    let (a, b) = domain;
    let n_interior = count - order;
    let mut knots = Vec::with_capacity(count + order);
    knots.extend(std::iter::repeat(a).take(order));
    for i in 1..=n_interior {
        knots.push(a + (b - a) * i as f64 / (n_interior + 1) as f64);
    }
    knots.extend(std::iter::repeat(b).take(order));
    knots
}

fn eval_rows(
    kind: BasisKind,
    count: usize,
    domain: (f64, f64),
    knots: Option<&[f64]>,
    points: &[f64],
) -> Result<DMatrix<f64>, CoreError> {
    let (a, b) = domain;
    for &t in points {
        if !(t >= a && t <= b) {
            return Err(CoreError::OutOfDomain { t, lo: a, hi: b });
        }
    }
    let mut out = DMatrix::zeros(points.len(), count);
    match kind {
        BasisKind::BSpline { order } => {
            let knots = knots.expect("B-spline basis carries knots");
            let mut values = vec![0.0; order];
            for (r, &t) in points.iter().enumerate() {
                let span = find_span(knots, count, order, t);
                bspline_nonzero(knots, order, span, t, &mut values);
                for (local, &v) in values.iter().enumerate() {
                    out[(r, span + 1 - order + local)] = v;
                }
            }
        }
        BasisKind::Fourier => {
            let period = b - a;
            let const_val = 1.0 / period.sqrt();
            let amp = (2.0 / period).sqrt();
            for (r, &t) in points.iter().enumerate() {
                out[(r, 0)] = const_val;
                for u in 1..count {
                    let harmonic = (u + 1) / 2;
                    let angle = 2.0 * std::f64::consts::PI * harmonic as f64 * (t - a) / period;
                    out[(r, u)] = if u % 2 == 1 { amp * angle.sin() } else { amp * angle.cos() };
                }
            }
        }
    }
    Ok(out)
}

/// Index of the knot span containing `t`; the right endpoint maps to the
/// last nonempty span.
fn find_span(knots: &[f64], count: usize, order: usize, t: f64) -> usize {
    let last = count - 1; // index of the last basis function
    if t >= knots[count] {
        return last;
    }
    let mut lo = order - 1;
    let mut hi = last;
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if knots[mid] <= t {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Cox-de Boor triangle: values of the `order` nonzero B-splines on `span`.
fn bspline_nonzero(knots: &[f64], order: usize, span: usize, t: f64, values: &mut [f64]) {
    debug_assert_eq!(values.len(), order);
    let mut left = vec![0.0; order];
    let mut right = vec![0.0; order];
    values[0] = 1.0;
    for j in 1..order {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { values[r] / denom } else { 0.0 };
            values[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        values[j] = saved;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::linalg::max_abs_diff;

    fn unit_grid(h: usize) -> QuadratureGrid {
        QuadratureGrid::uniform((0.0, 1.0), h).unwrap()
    }

    #[test]
    fn fourier_single_column_is_constant_one() {
        let grid = unit_grid(51);
        let basis = BasisSystem::new(BasisKind::Fourier, 1, &grid).unwrap();
        for v in basis.eval_matrix().iter() {
            assert_relative_eq!(*v, 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn bspline_partition_of_unity() {
        let grid = unit_grid(200);
        let basis = BasisSystem::new(BasisKind::cubic_bspline(), 5, &grid).unwrap();
        for r in 0..grid.len() {
            let row_sum: f64 = basis.eval_matrix().row(r).iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-10, "row {r}: {row_sum}");
        }
    }

    #[test]
    fn gram_matches_fine_quadrature() {
        let grid = unit_grid(200);
        let basis = BasisSystem::new(BasisKind::cubic_bspline(), 6, &grid).unwrap();
        // Independent fine-quadrature oracle.
        let fine = QuadratureGrid::uniform((0.0, 1.0), 20_000).unwrap();
        let rows = basis.rows_at(fine.points()).unwrap();
        let oracle = fine.gram_of(&rows);
        assert!(max_abs_diff(basis.gram(), &oracle) < 1e-6);
    }

    #[test]
    fn gram_inv_sqrt_inverts_gram() {
        let grid = unit_grid(101);
        for (kind, u) in [
            (BasisKind::cubic_bspline(), 7),
            (BasisKind::Fourier, 5),
        ] {
            let basis = BasisSystem::new(kind, u, &grid).unwrap();
            let r = basis.gram_inv_sqrt();
            let id = r * basis.gram() * r;
            assert!(max_abs_diff(&id, &DMatrix::identity(u, u)) < 1e-8);
        }
    }

    #[test]
    fn fourier_gram_is_near_identity() {
        let grid = unit_grid(101);
        let basis = BasisSystem::new(BasisKind::Fourier, 5, &grid).unwrap();
        assert!(max_abs_diff(basis.gram(), &DMatrix::identity(5, 5)) < 1e-8);
    }

    #[test]
    fn eval_at_matches_grid_columns() {
        let grid = unit_grid(101);
        let basis = BasisSystem::new(BasisKind::cubic_bspline(), 8, &grid).unwrap();
        for (j, &t) in grid.points().iter().enumerate().step_by(17) {
            let row = basis.eval_at(t).unwrap();
            for u in 0..8 {
                assert_relative_eq!(row[u], basis.eval_matrix()[(j, u)], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn rejects_out_of_domain() {
        let grid = unit_grid(51);
        let basis = BasisSystem::new(BasisKind::cubic_bspline(), 5, &grid).unwrap();
        assert!(matches!(
            basis.eval_at(1.5),
            Err(CoreError::OutOfDomain { .. })
        ));
        assert!(matches!(
            basis.eval_at(-0.01),
            Err(CoreError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn endpoint_evaluation_is_finite_and_normalized() {
        let grid = unit_grid(51);
        let basis = BasisSystem::new(BasisKind::cubic_bspline(), 6, &grid).unwrap();
        let at_b = basis.eval_at(1.0).unwrap();
        assert_relative_eq!(at_b.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(at_b[5], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn too_many_columns_for_grid_errors() {
        let grid = unit_grid(3);
        assert!(matches!(
            BasisSystem::new(BasisKind::cubic_bspline(), 12, &grid),
            Err(CoreError::IllConditionedBasis { .. })
        ));
    }
}
