//! Synthetic sparse trivariate data generator with known multivariate
//! eigenstructure.
//!
//! Three variables on [0, 1] share a rank-9 covariance built from three
//! orthonormal trigonometric triples and a cross-correlation parameter
//! `rho`. Subjects draw nine multivariate scores, are sampled at a handful
//! of uniform random times per variable, and observed with additive
//! Gaussian noise. Every draw comes from a stream-split counter-based
//! generator, so datasets are bit-reproducible per (seed, replicate)
//! regardless of evaluation order.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{SparseDataset, Subject, VariableMeta};
use crate::error::CoreError;
use crate::grid::QuadratureGrid;
use crate::linalg::{canonicalize_columns_by_peak, sym_eigen_desc};
use crate::rng::{purpose, StreamKey};

/// Number of variables in the generated datasets.
pub const N_VARIABLES: usize = 3;
/// Rank of the true multivariate covariance.
pub const N_COMPONENTS: usize = 9;
/// Grid size used to discretize the true eigenfunctions.
pub const TRUTH_GRID_SIZE: usize = 401;

/// Configuration of one simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub sigma2: f64,
    pub rho: f64,
    /// Inclusive range for the per-subject, per-variable observation count.
    pub m_range: (usize, usize),
    pub seed: u64,
    pub replicate_index: u64,
}

impl ScenarioConfig {
    /// Preset scenarios: n in {25, 100, 500} crossed with
    /// (sigma2, rho) in {(0.1, .5), (0.25, .5), (0.5, .5), (0.1, .9), ...}.
    pub fn preset(scenario: u8, seed: u64, replicate_index: u64) -> Result<Self, CoreError> {
        let (n, sigma2, rho) = match scenario {
            1 => (25, 0.1, 0.5),
            2 => (100, 0.25, 0.5),
            3 => (500, 0.5, 0.5),
            4 => (25, 0.1, 0.9),
            5 => (100, 0.25, 0.9),
            6 => (500, 0.5, 0.9),
            other => {
                return Err(CoreError::invalid(format!(
                    "unknown scenario {other}; expected 1..=6"
                )))
            }
        };
        Ok(Self {
            n,
            sigma2,
            rho,
            m_range: (3, 7),
            seed,
            replicate_index,
        })
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.n == 0 {
            return Err(CoreError::invalid("scenario needs at least one subject"));
        }
        if !(self.sigma2 > 0.0) {
            return Err(CoreError::invalid("noise variance must be positive"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(CoreError::invalid("rho must lie in [0, 1]"));
        }
        if self.m_range.0 == 0 || self.m_range.0 > self.m_range.1 {
            return Err(CoreError::invalid("empty observation-count range"));
        }
        Ok(())
    }
}

/// True mean of variable `k` (0-based).
pub fn true_mean(k: usize, t: f64) -> f64 {
    match k {
        0 => 5.0 * (2.0 * PI * t).sin(),
        1 => 5.0 * (2.0 * PI * t).cos(),
        2 => 5.0 * (t - 1.0).powi(2),
        _ => panic!("variable index {k} out of range"),
    }
}

/// The three orthonormal basis functions of variable `k`.
fn true_basis(k: usize, t: f64) -> [f64; 3] {
    let s2 = 2.0f64.sqrt();
    match k {
        0 => [
            s2 * (2.0 * PI * t).sin(),
            s2 * (4.0 * PI * t).cos(),
            s2 * (4.0 * PI * t).sin(),
        ],
        1 => [
            s2 * (PI * t).cos(),
            s2 * (2.0 * PI * t).cos(),
            s2 * (3.0 * PI * t).cos(),
        ],
        2 => [
            s2 * (PI * t).sin(),
            s2 * (2.0 * PI * t).sin(),
            s2 * (3.0 * PI * t).sin(),
        ],
        _ => panic!("variable index {k} out of range"),
    }
}

/// Diagonal eigenvalues of variable `k`.
pub fn true_lambda(k: usize) -> [f64; 3] {
    match k {
        0 => [3.0, 1.5, 0.75],
        1 => [3.5, 1.75, 0.5],
        2 => [2.5, 2.0, 1.0],
        _ => panic!("variable index {k} out of range"),
    }
}

/// True covariance `C_{kk'}(s, t)`: within-variable `Phi' Lambda Phi`, and
/// cross-variable `rho * Phi' sqrt(Lambda) sqrt(Lambda') Phi`.
pub fn true_covariance(k: usize, k_prime: usize, s: f64, t: f64, rho: f64) -> f64 {
    let ps = true_basis(k, s);
    let pt = true_basis(k_prime, t);
    let ls = true_lambda(k);
    let lt = true_lambda(k_prime);
    let mut acc = 0.0;
    if k == k_prime {
        for q in 0..3 {
            acc += ps[q] * ls[q] * pt[q];
        }
    } else {
        for q in 0..3 {
            acc += rho * ps[q] * (ls[q] * lt[q]).sqrt() * pt[q];
        }
    }
    acc
}

/// Discretized multivariate eigenstructure shared by every replicate of a
/// scenario.
#[derive(Debug, Clone)]
pub struct MvTruth {
    pub grid: QuadratureGrid,
    /// Nine leading eigenvalues, descending.
    pub d: DVector<f64>,
    /// 3H x 9 stacked eigenfunction values (variable blocks concatenated),
    /// quadrature-orthonormal under the stacked weights.
    pub psi: DMatrix<f64>,
    pub rho: f64,
}

impl MvTruth {
    /// Eigenfunction block of variable `k` on the truth grid, H x 9.
    pub fn psi_block(&self, k: usize) -> DMatrix<f64> {
        let h = self.grid.len();
        self.psi.rows(k * h, h).into_owned()
    }

    /// Nystrom evaluation of the l-th eigenfunction of variable `k` at
    /// arbitrary points.
    pub fn psi_at(&self, k: usize, points: &[f64]) -> DMatrix<f64> {
        let h = self.grid.len();
        let w = self.grid.weights();
        let tau = self.grid.points();
        let mut out = DMatrix::zeros(points.len(), N_COMPONENTS);
        let mut kernel_row = vec![0.0; N_VARIABLES * h];
        for (r, &t) in points.iter().enumerate() {
            for kp in 0..N_VARIABLES {
                for j in 0..h {
                    kernel_row[kp * h + j] = w[j] * true_covariance(k, kp, t, tau[j], self.rho);
                }
            }
            for l in 0..N_COMPONENTS {
                let mut acc = 0.0;
                for (a, &kr) in kernel_row.iter().enumerate() {
                    acc += kr * self.psi[(a, l)];
                }
                out[(r, l)] = acc / self.d[l];
            }
        }
        out
    }
}

type TruthCache = Mutex<HashMap<(u64, usize), Arc<MvTruth>>>;

fn truth_cache() -> &'static TruthCache {
    static CACHE: OnceLock<TruthCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Top nine eigenpairs of the discretized multivariate covariance operator.
///
/// Assembles the 3H x 3H block covariance on per-variable grids, solves the
/// weight-symmetrized problem `W^{1/2} C W^{1/2}`, and back-transforms the
/// eigenvectors so they are quadrature-orthonormal. Results are cached per
/// `(rho, h)`.
pub fn true_mv_eigen(rho: f64, h: usize) -> Result<Arc<MvTruth>, CoreError> {
    if h < 50 {
        return Err(CoreError::invalid("truth grid needs at least 50 points"));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(CoreError::invalid("rho must lie in [0, 1]"));
    }
    let cache_key = (rho.to_bits(), h);
    if let Some(hit) = truth_cache().lock().unwrap().get(&cache_key) {
        return Ok(hit.clone());
    }

    let grid = QuadratureGrid::uniform((0.0, 1.0), h)?;
    let tau = grid.points();
    let w = grid.weights();
    let dim = N_VARIABLES * h;
    let mut mat = DMatrix::zeros(dim, dim);
    for k in 0..N_VARIABLES {
        for kp in k..N_VARIABLES {
            for i in 0..h {
                for j in 0..h {
                    let c = true_covariance(k, kp, tau[i], tau[j], rho);
                    let scaled = (w[i] * w[j]).sqrt() * c;
                    mat[(k * h + i, kp * h + j)] = scaled;
                    mat[(kp * h + j, k * h + i)] = scaled;
                }
            }
        }
    }

    let (values, vectors) = sym_eigen_desc(&mat);
    let d = DVector::from_iterator(N_COMPONENTS, values.iter().take(N_COMPONENTS).copied());
    let mut psi = DMatrix::zeros(dim, N_COMPONENTS);
    for l in 0..N_COMPONENTS {
        for a in 0..dim {
            psi[(a, l)] = vectors[(a, l)] / w[a % h].sqrt();
        }
    }
    canonicalize_columns_by_peak(&mut psi);

    let truth = Arc::new(MvTruth { grid, d, psi, rho });
    truth_cache()
        .lock()
        .unwrap()
        .insert(cache_key, truth.clone());
    Ok(truth)
}

/// Everything needed to score a fit against the generating process.
#[derive(Debug, Clone)]
pub struct TruthBundle {
    pub config: ScenarioConfig,
    pub eigen: Arc<MvTruth>,
    /// n x 9 matrix of the multivariate scores actually drawn.
    pub scores: DMatrix<f64>,
}

impl TruthBundle {
    pub fn mean(&self, k: usize, t: f64) -> f64 {
        true_mean(k, t)
    }

    pub fn covariance(&self, k: usize, k_prime: usize, s: f64, t: f64) -> f64 {
        true_covariance(k, k_prime, s, t, self.config.rho)
    }

    /// Centered true curve values of one subject for variable `k`:
    /// `sum_l score_il psi_l^{(k)}(t)`.
    pub fn centered_curve(&self, subject: usize, k: usize, points: &[f64]) -> DVector<f64> {
        let psi = self.eigen.psi_at(k, points);
        let mut out = DVector::zeros(points.len());
        for l in 0..N_COMPONENTS {
            let s = self.scores[(subject, l)];
            for r in 0..points.len() {
                out[r] += s * psi[(r, l)];
            }
        }
        out
    }
}

/// Generates one sparse trivariate dataset together with its truth bundle.
pub fn generate(config: &ScenarioConfig) -> Result<(SparseDataset, TruthBundle), CoreError> {
    config.validate()?;
    let eigen = true_mv_eigen(config.rho, TRUTH_GRID_SIZE)?;
    let key = StreamKey::new(config.seed);
    let rep = config.replicate_index;

    let mut scores = DMatrix::zeros(config.n, N_COMPONENTS);
    let mut subjects = Vec::with_capacity(config.n);
    let noise = Normal::new(0.0, config.sigma2.sqrt()).expect("positive noise variance");

    for i in 0..config.n {
        let si = i as u64;
        let mut score_rng = key.rng(&[rep, si, 0, purpose::SCORES]);
        for l in 0..N_COMPONENTS {
            let dist = Normal::new(0.0, eigen.d[l].sqrt()).expect("positive eigenvalue");
            scores[(i, l)] = dist.sample(&mut score_rng);
        }

        let mut observations = Vec::with_capacity(N_VARIABLES);
        for k in 0..N_VARIABLES {
            let vk = (k + 1) as u64;
            let m = {
                let mut rng = key.rng(&[rep, si, vk, purpose::COUNTS]);
                rng.random_range(config.m_range.0..=config.m_range.1)
            };
            let mut times: Vec<f64> = {
                let mut rng = key.rng(&[rep, si, vk, purpose::TIMES]);
                (0..m).map(|_| rng.random_range(0.0..1.0)).collect()
            };
            let noises: Vec<f64> = {
                let mut rng = key.rng(&[rep, si, vk, purpose::NOISE]);
                (0..m).map(|_| noise.sample(&mut rng)).collect()
            };
            // Draws stay unsorted for reproducibility; sorting is purely
            // presentational and pairs each time with its own noise draw.
            let mut pairs: Vec<(f64, f64)> = times
                .drain(..)
                .zip(noises)
                .map(|(t, e)| {
                    let psi_row = eigen.psi_at(k, &[t]);
                    let mut x = true_mean(k, t);
                    for l in 0..N_COMPONENTS {
                        x += scores[(i, l)] * psi_row[(0, l)];
                    }
                    (t, x + e)
                })
                .collect();
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            observations.push(pairs);
        }
        subjects.push(Subject {
            id: format!("s{:05}", i + 1),
            observations,
        });
    }

    let variables = (0..N_VARIABLES)
        .map(|k| VariableMeta {
            name: format!("var{}", k + 1),
            domain: (0.0, 1.0),
        })
        .collect();

    let dataset = SparseDataset {
        variables,
        subjects,
    };
    let truth = TruthBundle {
        config: config.clone(),
        eigen,
        scores,
    };
    Ok((dataset, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn covariance_plug_in_value() {
        // C11(0,0) = 2 sin^2(0) * 3 + 2 cos^2(0) * 1.5 + 2 sin^2(0) * 0.75 = 3.
        assert_relative_eq!(true_covariance(0, 0, 0.0, 0.0, 0.5), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn cross_covariance_vanishes_at_rho_zero() {
        for &(s, t) in &[(0.1, 0.9), (0.3, 0.3), (0.0, 1.0)] {
            assert_eq!(true_covariance(0, 1, s, t, 0.0), 0.0);
            assert_eq!(true_covariance(2, 1, s, t, 0.0), 0.0);
        }
    }

    #[test]
    fn covariance_symmetry() {
        for &rho in &[0.0, 0.5, 0.9] {
            for k in 0..3 {
                for kp in 0..3 {
                    let a = true_covariance(k, kp, 0.2, 0.7, rho);
                    let b = true_covariance(kp, k, 0.7, 0.2, rho);
                    assert_relative_eq!(a, b, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn block_diagonal_spectrum_at_rho_zero() {
        let truth = true_mv_eigen(0.0, 201).unwrap();
        let mut expected = vec![3.0, 1.5, 0.75, 3.5, 1.75, 0.5, 2.5, 2.0, 1.0];
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for l in 0..N_COMPONENTS {
            assert!(
                (truth.d[l] - expected[l]).abs() < 1e-6,
                "eigenvalue {l}: {} vs {}",
                truth.d[l],
                expected[l]
            );
        }
    }

    #[test]
    fn trace_is_invariant_in_rho() {
        for &rho in &[0.0, 0.5, 0.9] {
            let truth = true_mv_eigen(rho, 201).unwrap();
            let total: f64 = truth.d.iter().sum();
            assert!(
                (total - 16.5).abs() < 1e-6,
                "rho={rho}: trace {total}"
            );
        }
    }

    #[test]
    fn eigenfunctions_quadrature_orthonormal() {
        let truth = true_mv_eigen(0.5, 201).unwrap();
        let h = truth.grid.len();
        for l in 0..N_COMPONENTS {
            for lp in l..N_COMPONENTS {
                let mut acc = 0.0;
                for k in 0..N_VARIABLES {
                    for j in 0..h {
                        acc += truth.grid.weights()[j]
                            * truth.psi[(k * h + j, l)]
                            * truth.psi[(k * h + j, lp)];
                    }
                }
                let expect = if l == lp { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() < 1e-8, "({l},{lp}): {acc}");
            }
        }
    }

    #[test]
    fn tail_eigenvalues_are_negligible() {
        let rho = 0.5;
        let h = 201;
        let grid = QuadratureGrid::uniform((0.0, 1.0), h).unwrap();
        let dim = N_VARIABLES * h;
        let mut mat = DMatrix::zeros(dim, dim);
        for k in 0..N_VARIABLES {
            for kp in 0..N_VARIABLES {
                for i in 0..h {
                    for j in 0..h {
                        mat[(k * h + i, kp * h + j)] = (grid.weights()[i] * grid.weights()[j])
                            .sqrt()
                            * true_covariance(k, kp, grid.points()[i], grid.points()[j], rho);
                    }
                }
            }
        }
        let (values, _) = sym_eigen_desc(&mat);
        for l in N_COMPONENTS..dim {
            assert!(values[l].abs() < 1e-8 * values[0]);
        }
    }

    #[test]
    fn nystrom_matches_grid_values() {
        let truth = true_mv_eigen(0.5, 201).unwrap();
        let probe: Vec<f64> = truth.grid.points().iter().copied().step_by(23).collect();
        for k in 0..N_VARIABLES {
            let by_nystrom = truth.psi_at(k, &probe);
            let block = truth.psi_block(k);
            for (r, &t) in probe.iter().enumerate() {
                let j = truth
                    .grid
                    .points()
                    .iter()
                    .position(|&p| p == t)
                    .unwrap();
                for l in 0..N_COMPONENTS {
                    assert!(
                        (by_nystrom[(r, l)] - block[(j, l)]).abs() < 1e-8,
                        "k={k} l={l} t={t}"
                    );
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let config = ScenarioConfig::preset(2, 7, 3).unwrap();
        let (data_a, truth_a) = generate(&config).unwrap();
        let (data_b, truth_b) = generate(&config).unwrap();
        assert_eq!(data_a, data_b);
        assert_eq!(truth_a.scores, truth_b.scores);
        data_a.validate().unwrap();
        for s in &data_a.subjects {
            for obs in &s.observations {
                assert!((3..=7).contains(&obs.len()));
                for &(t, _) in obs {
                    assert!((0.0..=1.0).contains(&t));
                }
            }
        }
        // Different replicate index changes the data.
        let config2 = ScenarioConfig {
            replicate_index: 4,
            ..config
        };
        let (data_c, _) = generate(&config2).unwrap();
        assert_ne!(data_a, data_c);
    }

    #[test]
    fn noiseless_observations_sit_on_true_curves() {
        let config = ScenarioConfig {
            n: 1,
            sigma2: 1e-300, // validate() requires positive variance
            rho: 0.5,
            m_range: (3, 7),
            seed: 11,
            replicate_index: 0,
        };
        let (data, truth) = generate(&config).unwrap();
        for (k, obs) in data.subjects[0].observations.iter().enumerate() {
            let times: Vec<f64> = obs.iter().map(|o| o.0).collect();
            let centered = truth.centered_curve(0, k, &times);
            for (j, &(t, y)) in obs.iter().enumerate() {
                let x = truth.mean(k, t) + centered[j];
                assert_relative_eq!(y, x, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn score_variance_matches_eigenvalue() {
        // Monte-Carlo oracle over 1e5 draws of the leading score.
        let truth = true_mv_eigen(0.5, 201).unwrap();
        let key = StreamKey::new(123);
        let dist = Normal::new(0.0, truth.d[0].sqrt()).unwrap();
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..n {
            let mut rng = key.rng(&[0, i as u64, 0, purpose::SCORES]);
            let draw: f64 = dist.sample(&mut rng);
            sum += draw;
            sum_sq += draw * draw;
        }
        let var = (sum_sq - sum * sum / n as f64) / (n as f64 - 1.0);
        assert!(
            (var - truth.d[0]).abs() / truth.d[0] < 0.02,
            "var {var} vs {}",
            truth.d[0]
        );
    }

    #[test]
    fn empirical_covariance_matches_truth() {
        // Frobenius comparison of the sample covariance of generated curves
        // against the closed form, on a modest grid.
        let truth = true_mv_eigen(0.5, TRUTH_GRID_SIZE).unwrap();
        // 4000 subjects keep the sampling noise of the sample covariance
        // (~5% at 2000 draws) safely below the 5% acceptance band.
        let config = ScenarioConfig {
            n: 4000,
            sigma2: 0.25,
            rho: 0.5,
            m_range: (3, 7),
            seed: 5,
            replicate_index: 0,
        };
        let key = StreamKey::new(config.seed);
        let mut scores = DMatrix::zeros(config.n, N_COMPONENTS);
        for i in 0..config.n {
            let mut rng = key.rng(&[0, i as u64, 0, purpose::SCORES]);
            for l in 0..N_COMPONENTS {
                let dist = Normal::new(0.0, truth.d[l].sqrt()).unwrap();
                scores[(i, l)] = dist.sample(&mut rng);
            }
        }
        let grid: Vec<f64> = (0..21).map(|i| i as f64 / 20.0).collect();
        let mut frob_num = 0.0;
        let mut frob_den = 0.0;
        for k in 0..N_VARIABLES {
            let psi_k = truth.psi_at(k, &grid);
            for kp in 0..N_VARIABLES {
                let psi_kp = truth.psi_at(kp, &grid);
                for (a, &s) in grid.iter().enumerate() {
                    for (b, &t) in grid.iter().enumerate() {
                        let mut emp = 0.0;
                        for i in 0..config.n {
                            let xa: f64 =
                                (0..N_COMPONENTS).map(|l| scores[(i, l)] * psi_k[(a, l)]).sum();
                            let xb: f64 = (0..N_COMPONENTS)
                                .map(|l| scores[(i, l)] * psi_kp[(b, l)])
                                .sum();
                            emp += xa * xb;
                        }
                        emp /= (config.n - 1) as f64;
                        let tru = true_covariance(k, kp, s, t, config.rho);
                        frob_num += (emp - tru).powi(2);
                        frob_den += tru * tru;
                    }
                }
            }
        }
        let rel = (frob_num / frob_den).sqrt();
        assert!(rel < 0.05, "relative Frobenius error {rel}");
    }
}
