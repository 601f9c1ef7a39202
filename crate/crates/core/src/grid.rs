use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Dense quadrature grid with trapezoidal weights on a closed interval.
///
/// The discrete inner product `<f, g>_w = sum_j w_j f(tau_j) g(tau_j)`
/// approximates the L2 inner product with error O((H-1)^-2) for smooth
/// integrands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
    domain: (f64, f64),
}

impl QuadratureGrid {
    /// Equally spaced grid of `h` points on `[a, b]` with trapezoid weights.
    pub fn uniform(domain: (f64, f64), h: usize) -> Result<Self, CoreError> {
        let (a, b) = domain;
        if h < 3 {
            return Err(CoreError::invalid(format!(
                "quadrature grid needs at least 3 points, got {h}"
            )));
        }
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(CoreError::invalid(format!(
                "degenerate domain [{a}, {b}]"
            )));
        }
        let step = (b - a) / (h - 1) as f64;
        let mut points: Vec<f64> = (0..h).map(|j| a + step * j as f64).collect();
        // Pin the endpoints exactly.
        points[0] = a;
        points[h - 1] = b;
        Ok(Self::from_points(points, domain)?)
    }

    /// Grid on arbitrary strictly increasing points; trapezoid weights
    /// generalize to non-uniform spacing.
    pub fn from_points(points: Vec<f64>, domain: (f64, f64)) -> Result<Self, CoreError> {
        let (a, b) = domain;
        let h = points.len();
        if h < 3 {
            return Err(CoreError::invalid(format!(
                "quadrature grid needs at least 3 points, got {h}"
            )));
        }
        if points[0] != a || points[h - 1] != b {
            return Err(CoreError::invalid(
                "grid points must start and end at the domain endpoints".to_string(),
            ));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CoreError::invalid(
                "grid points must be strictly increasing".to_string(),
            ));
        }
        let mut weights = vec![0.0; h];
        weights[0] = (points[1] - points[0]) / 2.0;
        weights[h - 1] = (points[h - 1] - points[h - 2]) / 2.0;
        for j in 1..h - 1 {
            weights[j] = (points[j + 1] - points[j - 1]) / 2.0;
        }
        Ok(Self {
            points,
            weights,
            domain,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.domain.0 && t <= self.domain.1
    }

    /// `sum_j w_j f_j g_j`.
    pub fn inner_product(&self, f: &DVector<f64>, g: &DVector<f64>) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        debug_assert_eq!(g.len(), self.len());
        let mut acc = 0.0;
        for j in 0..self.len() {
            acc += self.weights[j] * f[j] * g[j];
        }
        acc
    }

    pub fn norm(&self, f: &DVector<f64>) -> f64 {
        self.inner_product(f, f).sqrt()
    }

    /// Trapezoid quadrature of grid values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v * w)
            .sum()
    }

    /// `Phi^T W Phi` for a matrix of column functions on this grid.
    pub fn gram_of(&self, columns: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(columns.nrows(), self.len());
        let m = columns.ncols();
        let mut out = DMatrix::zeros(m, m);
        for p in 0..m {
            for q in p..m {
                let mut acc = 0.0;
                for j in 0..self.len() {
                    acc += self.weights[j] * columns[(j, p)] * columns[(j, q)];
                }
                out[(p, q)] = acc;
                out[(q, p)] = acc;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn three_point_unit_grid() {
        let g = QuadratureGrid::uniform((0.0, 1.0), 3).unwrap();
        assert_eq!(g.points(), &[0.0, 0.5, 1.0]);
        assert_eq!(g.weights(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn weights_sum_to_length() {
        for h in [3, 7, 101, 500] {
            let g = QuadratureGrid::uniform((-2.0, 3.5), h).unwrap();
            let total: f64 = g.weights().iter().sum();
            assert_relative_eq!(total, 5.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn integrates_quadratic() {
        let g = QuadratureGrid::uniform((0.0, 1.0), 101).unwrap();
        let vals: Vec<f64> = g.points().iter().map(|t| t * t).collect();
        let est = g.integrate(&vals);
        assert!((est - 1.0 / 3.0).abs() < 1e-4, "got {est}");
    }

    #[test]
    fn doubling_h_shrinks_error() {
        // Convergence contract: halving the step cuts the error by >= 3.5x
        // on smooth integrands.
        let integrands: [(fn(f64) -> f64, f64); 2] = [
            (|t| (3.0 * t).sin(), (1.0 - 3.0f64.cos()) / 3.0),
            (|t| (t * t).exp() * t, (1.0f64.exp() - 1.0) / 2.0),
        ];
        for (f, exact) in integrands {
            let err = |h: usize| {
                let g = QuadratureGrid::uniform((0.0, 1.0), h).unwrap();
                let vals: Vec<f64> = g.points().iter().map(|&t| f(t)).collect();
                (g.integrate(&vals) - exact).abs()
            };
            assert!(err(100) / err(200) >= 3.5);
        }
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(QuadratureGrid::uniform((0.0, 1.0), 2).is_err());
        assert!(QuadratureGrid::uniform((1.0, 1.0), 10).is_err());
        assert!(QuadratureGrid::uniform((2.0, 1.0), 10).is_err());
    }

    #[test]
    fn nonuniform_points_accepted() {
        let pts = vec![0.0, 0.1, 0.4, 1.0];
        let g = QuadratureGrid::from_points(pts, (0.0, 1.0)).unwrap();
        assert_relative_eq!(g.weights().iter().sum::<f64>(), 1.0, max_relative = 1e-12);
        assert_eq!(g.weights()[1], (0.4 - 0.0) / 2.0);
    }
}
