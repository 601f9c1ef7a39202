//! Per-variable mean function estimation and data centering.
//!
//! The mean is a penalized least-squares basis fit with a roughness penalty
//! that leaves constants unpenalized; the smoothing parameter is chosen by
//! generalized cross-validation over a fixed logarithmic ladder.

use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisKind, BasisSystem};
use crate::dataset::SparseDataset;
use crate::error::CoreError;

/// Number of candidate smoothing values on the GCV ladder.
const GCV_LADDER: usize = 25;
const GCV_MIN: f64 = 1e-8;
const GCV_MAX: f64 = 1e2;

/// A fitted mean function in basis-coefficient form.
#[derive(Debug, Clone)]
pub struct MeanModel {
    basis: BasisSystem,
    coeffs: DVector<f64>,
    smoothing: f64,
}

impl MeanModel {
    pub fn basis(&self) -> &BasisSystem {
        &self.basis
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Mean model with explicit coefficients (used when loading archives).
    pub fn from_parts(basis: BasisSystem, coeffs: DVector<f64>, smoothing: f64) -> Self {
        Self {
            basis,
            coeffs,
            smoothing,
        }
    }

    pub fn eval_at(&self, t: f64) -> Result<f64, CoreError> {
        Ok(self.basis.eval_at(t)?.dot(&self.coeffs))
    }

    pub fn eval_many(&self, points: &[f64]) -> Result<DVector<f64>, CoreError> {
        Ok(self.basis.rows_at(points)? * &self.coeffs)
    }
}

/// Roughness penalty in coefficient space: squared second differences for
/// B-splines, exact curvature weights for the Fourier system. Both leave
/// constant functions unpenalized.
fn penalty_matrix(basis: &BasisSystem) -> DMatrix<f64> {
    let u = basis.count();
    match basis.kind() {
        BasisKind::BSpline { .. } => {
            if u < 3 {
                return DMatrix::zeros(u, u);
            }
            let mut d2 = DMatrix::zeros(u - 2, u);
            for r in 0..u - 2 {
                d2[(r, r)] = 1.0;
                d2[(r, r + 1)] = -2.0;
                d2[(r, r + 2)] = 1.0;
            }
            d2.transpose() * d2
        }
        BasisKind::Fourier => {
            let (a, b) = basis.domain();
            let period = b - a;
            let mut diag = DVector::zeros(u);
            for j in 1..u {
                let harmonic = (j + 1) / 2;
                let omega = 2.0 * std::f64::consts::PI * harmonic as f64 / period;
                diag[j] = omega.powi(4);
            }
            DMatrix::from_diagonal(&diag)
        }
    }
}

/// Penalized least-squares fit of pooled `(t, y)` pairs with GCV-selected
/// smoothing.
pub fn fit_mean(times: &[f64], values: &[f64], basis: &BasisSystem) -> Result<MeanModel, CoreError> {
    if times.len() != values.len() {
        return Err(CoreError::invalid("times and values differ in length"));
    }
    let u = basis.count();
    let mut distinct: Vec<f64> = times.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < u {
        return Err(CoreError::InsufficientData(format!(
            "mean fit needs at least {u} distinct time points, got {}",
            distinct.len()
        )));
    }

    let n = times.len();
    let design = basis.rows_at(times)?;
    let y = DVector::from_column_slice(values);
    let bt_b = design.transpose() * &design;
    let bt_y = design.transpose() * &y;
    let y_sq = y.dot(&y);
    let penalty = penalty_matrix(basis);

    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    for step in 0..GCV_LADDER {
        let frac = step as f64 / (GCV_LADDER - 1) as f64;
        let lambda = GCV_MIN * (GCV_MAX / GCV_MIN).powf(frac);
        let system = &bt_b + &penalty * lambda;
        let Some(chol) = system.clone().cholesky() else {
            continue;
        };
        let coeffs = chol.solve(&bt_y);
        let rss = (y_sq - 2.0 * coeffs.dot(&bt_y) + coeffs.dot(&(&bt_b * &coeffs))).max(0.0);
        let trace_s = chol.solve(&bt_b).trace();
        let denom = n as f64 - trace_s;
        let gcv = if denom > 1e-8 {
            n as f64 * rss / (denom * denom)
        } else {
            f64::INFINITY
        };
        if best.as_ref().map_or(true, |(g, _, _)| gcv < *g) {
            best = Some((gcv, lambda, coeffs));
        }
    }

    let (_, smoothing, coeffs) =
        best.ok_or_else(|| CoreError::invalid("mean fit failed at every smoothing level"))?;
    Ok(MeanModel {
        basis: basis.clone(),
        coeffs,
        smoothing,
    })
}

/// Replaces each observation `y` by the residual `y - mu_k(t)`. Structure
/// (subjects, times, variable order) is unchanged.
pub fn center(dataset: &SparseDataset, means: &[MeanModel]) -> Result<SparseDataset, CoreError> {
    if means.len() != dataset.n_variables() {
        return Err(CoreError::MissingMeanModel(format!(
            "{} mean models for {} variables",
            means.len(),
            dataset.n_variables()
        )));
    }
    let mut out = dataset.clone();
    for subject in &mut out.subjects {
        for (k, obs) in subject.observations.iter_mut().enumerate() {
            for (t, y) in obs.iter_mut() {
                *y -= means[k].eval_at(*t)?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Subject, VariableMeta};
    use crate::grid::QuadratureGrid;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit_grid() -> QuadratureGrid {
        QuadratureGrid::uniform((0.0, 1.0), 101).unwrap()
    }

    #[test]
    fn zero_data_zero_mean() {
        let basis = BasisSystem::new(BasisKind::cubic_bspline(), 6, &unit_grid()).unwrap();
        let times: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let values = vec![0.0; 50];
        let model = fit_mean(&times, &values, &basis).unwrap();
        assert!(model.coeffs().amax() < 1e-10);
    }

    #[test]
    fn constant_recovered_exactly() {
        for kind in [BasisKind::cubic_bspline(), BasisKind::Fourier] {
            let basis = BasisSystem::new(kind, 5, &unit_grid()).unwrap();
            let times: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
            let values = vec![7.25; 40];
            let model = fit_mean(&times, &values, &basis).unwrap();
            for &t in &[0.0, 0.31, 0.77, 1.0] {
                assert_relative_eq!(model.eval_at(t).unwrap(), 7.25, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn sine_mean_recovered() {
        let basis = BasisSystem::new(BasisKind::Fourier, 5, &unit_grid()).unwrap();
        let mut rng = StdRng::seed_from_u64(1);
        let times: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..1.0)).collect();
        let values: Vec<f64> = times
            .iter()
            .map(|t| 5.0 * (2.0 * std::f64::consts::PI * t).sin())
            .collect();
        let model = fit_mean(&times, &values, &basis).unwrap();
        let grid = unit_grid();
        let fitted = model.eval_many(grid.points()).unwrap();
        for (j, &t) in grid.points().iter().enumerate() {
            let truth = 5.0 * (2.0 * std::f64::consts::PI * t).sin();
            assert!((fitted[j] - truth).abs() < 0.05, "t={t}");
        }
    }

    #[test]
    fn constant_shift_equivariance() {
        let basis = BasisSystem::new(BasisKind::cubic_bspline(), 7, &unit_grid()).unwrap();
        let mut rng = StdRng::seed_from_u64(2);
        let times: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
        let values: Vec<f64> = times.iter().map(|t| (3.0 * t).sin() + rng.random_range(-0.1..0.1)).collect();
        let shifted: Vec<f64> = values.iter().map(|y| y + 4.0).collect();
        let base = fit_mean(&times, &values, &basis).unwrap();
        let plus = fit_mean(&times, &shifted, &basis).unwrap();
        for &t in &[0.0, 0.2, 0.5, 0.9, 1.0] {
            assert_relative_eq!(
                plus.eval_at(t).unwrap(),
                base.eval_at(t).unwrap() + 4.0,
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn too_few_distinct_points_rejected() {
        let basis = BasisSystem::new(BasisKind::cubic_bspline(), 6, &unit_grid()).unwrap();
        let times = vec![0.1, 0.1, 0.5, 0.5, 0.9];
        let values = vec![1.0; 5];
        assert!(matches!(
            fit_mean(&times, &values, &basis),
            Err(CoreError::InsufficientData(_))
        ));
    }

    fn tiny_dataset() -> SparseDataset {
        SparseDataset {
            variables: vec![VariableMeta {
                name: "v".into(),
                domain: (0.0, 1.0),
            }],
            subjects: vec![Subject {
                id: "s1".into(),
                observations: vec![vec![(0.2, 1.0), (0.8, 2.0)]],
            }],
        }
    }

    #[test]
    fn centering_with_zero_mean_is_identity() {
        let basis = BasisSystem::new(BasisKind::cubic_bspline(), 4, &unit_grid()).unwrap();
        let model = MeanModel::from_parts(basis, DVector::zeros(4), 0.0);
        let data = tiny_dataset();
        let centered = center(&data, &[model]).unwrap();
        assert_eq!(centered, data);
    }

    #[test]
    fn centering_own_mean_gives_zero_residuals() {
        let basis = BasisSystem::new(BasisKind::cubic_bspline(), 4, &unit_grid()).unwrap();
        let coeffs = DVector::from_vec(vec![1.0, 2.0, 0.5, -1.0]);
        let model = MeanModel::from_parts(basis, coeffs, 0.0);
        let mut data = tiny_dataset();
        for (t, y) in data.subjects[0].observations[0].iter_mut() {
            *y = model.eval_at(*t).unwrap();
        }
        let centered = center(&data, &[model]).unwrap();
        for &(_, y) in &centered.subjects[0].observations[0] {
            assert!(y.abs() < 1e-12);
        }
    }

    #[test]
    fn additive_shift_gives_unit_residuals() {
        let basis = BasisSystem::new(BasisKind::cubic_bspline(), 4, &unit_grid()).unwrap();
        let coeffs = DVector::from_vec(vec![0.3, -0.2, 0.9, 0.4]);
        let model = MeanModel::from_parts(basis, coeffs, 0.0);
        let mut data = tiny_dataset();
        for (t, y) in data.subjects[0].observations[0].iter_mut() {
            *y = model.eval_at(*t).unwrap() + 1.0;
        }
        let centered = center(&data, &[model]).unwrap();
        for &(_, y) in &centered.subjects[0].observations[0] {
            assert_relative_eq!(y, 1.0, epsilon = 1e-12);
        }
    }
}
