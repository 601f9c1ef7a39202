//! Univariate reduced-rank FPCA by maximum likelihood.
//!
//! Eigenfunctions are weighted-MGS orthonormalized basis expansions
//! `Phi = MGS_W(B beta)`; the per-subject observation covariance is
//! `Phi_i Lambda Phi_i' + sigma^2 I` with `Lambda = diag(exp(eta))` and
//! `sigma^2 = exp(gamma)`. The average negative log-likelihood is minimized
//! over `(beta, eta, gamma)` with BFGS; gradients are analytic, propagated
//! in reverse through the covariance assembly, the continuous
//! representation, and the MGS recursion. `(U, M)` is selected by AIC.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::basis::{BasisKind, BasisSystem};
use crate::bfgs::{self, BfgsFailure, BfgsOptions};
use crate::covsmooth::{smooth_covariance_surface, surface_eigenfunctions};
use crate::dataset::SparseDataset;
use crate::error::CoreError;
use crate::grid::QuadratureGrid;
use crate::orthonorm::{
    eval_continuous, mgs_backward, weighted_mgs_with_tape, OrthonormalSet,
};
use crate::rng::{purpose, StreamKey};

/// Free parameters of one univariate model.
#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateParams {
    /// U x M basis coefficients of the raw (pre-MGS) eigenfunctions.
    pub beta: DMatrix<f64>,
    /// Log-eigenvalues, length M.
    pub eta: DVector<f64>,
    /// Log noise variance.
    pub gamma: f64,
}

impl UnivariateParams {
    pub fn dim(u: usize, m: usize) -> usize {
        u * m + m + 1
    }

    pub fn flatten(&self) -> DVector<f64> {
        let u = self.beta.nrows();
        let m = self.beta.ncols();
        let mut x = DVector::zeros(Self::dim(u, m));
        x.rows_mut(0, u * m).copy_from_slice(self.beta.as_slice());
        x.rows_mut(u * m, m).copy_from(&self.eta);
        x[u * m + m] = self.gamma;
        x
    }

    pub fn unflatten(x: &DVector<f64>, u: usize, m: usize) -> Self {
        let beta = DMatrix::from_column_slice(u, m, &x.as_slice()[0..u * m]);
        let eta = DVector::from_column_slice(&x.as_slice()[u * m..u * m + m]);
        Self {
            beta,
            eta,
            gamma: x[u * m + m],
        }
    }
}

/// A fitted univariate FPCA model for one variable.
#[derive(Debug, Clone)]
pub struct UnivariateModel {
    pub params: UnivariateParams,
    /// Orthonormal eigenfunctions on the grid with continuous-representation
    /// coefficients, columns ordered by descending eigenvalue.
    pub eigenfunctions: OrthonormalSet,
    /// Descending positive eigenvalues.
    pub eigenvalues: DVector<f64>,
    pub noise_variance: f64,
    pub basis: BasisSystem,
    /// Final average negative log-likelihood.
    pub nll: f64,
    /// Subjects that contributed observations.
    pub n_subjects: usize,
    pub u: usize,
    pub m: usize,
}

impl UnivariateModel {
    /// Eigenfunction values at arbitrary points, one row per point.
    pub fn eigenfunction_rows(&self, points: &[f64]) -> Result<DMatrix<f64>, CoreError> {
        let coeffs = self
            .eigenfunctions
            .coeffs_orthobasis
            .as_ref()
            .expect("fitted model carries continuous representation");
        eval_continuous(&self.basis, coeffs, points)
    }

    pub fn grid(&self) -> &QuadratureGrid {
        self.basis.grid()
    }

    pub fn aic(&self) -> f64 {
        aic(self.nll, self.n_subjects, self.u, self.m)
    }

    /// Orthonormality defect of the eigenfunctions on the grid.
    pub fn orthonormality_defect(&self) -> f64 {
        self.eigenfunctions.orthonormality_defect(self.basis.grid())
    }
}

/// `AIC = n * nll + U * M^2 + M + 1`.
pub fn aic(nll: f64, n: usize, u: usize, m: usize) -> f64 {
    n as f64 * nll + (u * m * m + m + 1) as f64
}

/// Reduced-rank covariance `Phi Lambda Phi' + sigma^2 I` at arbitrary
/// evaluation rows.
pub fn reduced_rank_cov(
    phi_rows: &DMatrix<f64>,
    eigenvalues: &DVector<f64>,
    noise_variance: f64,
) -> Result<DMatrix<f64>, CoreError> {
    if eigenvalues.iter().any(|&l| !(l > 0.0)) || !(noise_variance > 0.0) {
        return Err(CoreError::invalid(
            "eigenvalues and noise variance must be positive",
        ));
    }
    let m = phi_rows.nrows();
    let mut cov = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let mut acc = 0.0;
            for q in 0..eigenvalues.len() {
                acc += eigenvalues[q] * phi_rows[(a, q)] * phi_rows[(b, q)];
            }
            cov[(a, b)] = acc;
            cov[(b, a)] = acc;
        }
    }
    for a in 0..m {
        cov[(a, a)] += noise_variance;
    }
    Ok(cov)
}

/// One subject's centered observations prepared for likelihood evaluation.
#[derive(Debug, Clone)]
pub struct FitSubject {
    /// Centered observation vector, length m_i >= 1.
    pub resid: DVector<f64>,
    /// Orthonormalized basis rows at the observation times, m_i x U.
    pub rows: DMatrix<f64>,
}

/// Precomputed per-(dataset, basis) quantities shared by every objective
/// evaluation.
pub struct FitContext {
    pub basis: BasisSystem,
    pub subjects: Vec<FitSubject>,
    /// Maps grid values to orthonormal-basis coefficients (U x H).
    projector: DMatrix<f64>,
    /// Transpose map used in the gradient (H x U).
    projector_t: DMatrix<f64>,
}

impl FitContext {
    /// Extracts variable `k` of a centered dataset. Subjects without
    /// observations for this variable are skipped.
    pub fn new(
        centered: &SparseDataset,
        variable: usize,
        basis: &BasisSystem,
    ) -> Result<Self, CoreError> {
        let mut subjects = Vec::new();
        for s in &centered.subjects {
            let obs = &s.observations[variable];
            if obs.is_empty() {
                continue;
            }
            let times: Vec<f64> = obs.iter().map(|o| o.0).collect();
            let resid = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.1));
            let rows = basis.orthonormal_rows_at(&times)?;
            subjects.push(FitSubject { resid, rows });
        }
        if subjects.is_empty() {
            return Err(CoreError::InsufficientData(format!(
                "no observations for variable index {variable}"
            )));
        }
        Self::from_subjects(subjects, basis)
    }

    pub fn from_subjects(
        subjects: Vec<FitSubject>,
        basis: &BasisSystem,
    ) -> Result<Self, CoreError> {
        let grid = basis.grid();
        let b_tilde = basis.orthonormal_eval_matrix();
        let normal = grid.gram_of(&b_tilde);
        let chol = normal
            .cholesky()
            .ok_or_else(|| CoreError::invalid("quadrature Gram is not positive definite"))?;
        let mut weighted_bt = b_tilde.transpose();
        for (j, &w) in grid.weights().iter().enumerate() {
            for r in 0..weighted_bt.nrows() {
                weighted_bt[(r, j)] *= w;
            }
        }
        let projector = chol.solve(&weighted_bt);
        let projector_t = projector.transpose();
        Ok(Self {
            basis: basis.clone(),
            subjects,
            projector,
            projector_t,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }
}

/// Average negative log-likelihood at `params`.
pub fn nll(ctx: &FitContext, params: &UnivariateParams) -> Result<f64, CoreError> {
    match objective(ctx, params, false) {
        Some((value, _)) => Ok(value),
        None => Err(CoreError::invalid(
            "likelihood undefined at the given parameters",
        )),
    }
}

/// Average negative log-likelihood and its gradient in flattened layout.
pub fn nll_gradient(
    ctx: &FitContext,
    params: &UnivariateParams,
) -> Result<(f64, DVector<f64>), CoreError> {
    match objective(ctx, params, true) {
        Some((value, Some(grad))) => Ok((value, grad)),
        _ => Err(CoreError::invalid(
            "likelihood undefined at the given parameters",
        )),
    }
}

/// Shared objective: returns `None` only for structurally invalid inputs;
/// numerically out-of-range parameters yield `+inf` so the line search can
/// back off.
fn objective(
    ctx: &FitContext,
    params: &UnivariateParams,
    want_grad: bool,
) -> Option<(f64, Option<DVector<f64>>)> {
    let u = params.beta.nrows();
    let m = params.beta.ncols();
    let dim = UnivariateParams::dim(u, m);
    let grid = ctx.basis.grid();
    let n = ctx.subjects.len() as f64;

    let infinity = || {
        Some((
            f64::INFINITY,
            if want_grad { Some(DVector::zeros(dim)) } else { None },
        ))
    };

    let lambdas = params.eta.map(f64::exp);
    let sigma2 = params.gamma.exp();
    if lambdas.iter().any(|l| !l.is_finite()) || !sigma2.is_finite() || sigma2 <= 0.0 {
        return infinity();
    }

    let raw = ctx.basis.eval_matrix() * &params.beta;
    let tape = match weighted_mgs_with_tape(&raw, grid) {
        Ok(t) => t,
        Err(_) => return infinity(),
    };
    let phi = tape.phi();
    let beta_tilde = &ctx.projector * phi;

    let mut total = 0.0;
    let mut g_beta_tilde = DMatrix::zeros(u, m);
    let mut g_lambda = DVector::<f64>::zeros(m);
    let mut g_sigma2 = 0.0;

    for subject in &ctx.subjects {
        let mi = subject.resid.len();
        let phi_i = &subject.rows * &beta_tilde;
        let mut cov = DMatrix::zeros(mi, mi);
        for a in 0..mi {
            for b in a..mi {
                let mut acc = 0.0;
                for q in 0..m {
                    acc += lambdas[q] * phi_i[(a, q)] * phi_i[(b, q)];
                }
                cov[(a, b)] = acc;
                cov[(b, a)] = acc;
            }
            cov[(a, a)] += sigma2;
        }
        let chol = match cov.cholesky() {
            Some(c) => c,
            None => return infinity(),
        };
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let alpha = chol.solve(&subject.resid);
        total += subject.resid.dot(&alpha) + log_det;

        if want_grad {
            let mut s = chol.inverse();
            for a in 0..mi {
                for b in 0..mi {
                    s[(a, b)] = (s[(a, b)] - alpha[a] * alpha[b]) / n;
                }
            }
            // d nll / d phi_i = 2 S phi_i Lambda
            let s_phi = &s * &phi_i;
            for q in 0..m {
                let mut acc = 0.0;
                for a in 0..mi {
                    acc += phi_i[(a, q)] * s_phi[(a, q)];
                }
                g_lambda[q] += acc;
            }
            let mut d_phi_i = s_phi;
            for q in 0..m {
                let scale = 2.0 * lambdas[q];
                for a in 0..mi {
                    d_phi_i[(a, q)] *= scale;
                }
            }
            g_beta_tilde += subject.rows.transpose() * d_phi_i;
            g_sigma2 += s.trace();
        }
    }

    let value = total / n;
    if !value.is_finite() {
        return infinity();
    }
    if !want_grad {
        return Some((value, None));
    }

    let d_phi = &ctx.projector_t * g_beta_tilde;
    let d_raw = mgs_backward(&tape, grid, &d_phi);
    let g_beta = ctx.basis.eval_matrix().transpose() * d_raw;

    let mut grad = DVector::zeros(dim);
    grad.rows_mut(0, u * m).copy_from_slice(g_beta.as_slice());
    for q in 0..m {
        grad[u * m + q] = lambdas[q] * g_lambda[q];
    }
    grad[u * m + m] = sigma2 * g_sigma2;
    Some((value, Some(grad)))
}

/// Starting-point strategy for [`fit`].
pub enum FitInit<'a> {
    /// Explicit parameters.
    Params(UnivariateParams),
    /// Spectral start from a smoothed covariance surface (computed on demand
    /// when absent), with seeded random fallback and restarts.
    Seeded {
        seed: u64,
        surface: Option<&'a DMatrix<f64>>,
    },
}

#[derive(Debug, Clone)]
pub struct FitSettings {
    pub bfgs: BfgsOptions,
    /// Seeded restarts attempted when the first optimization stalls.
    pub restarts: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            bfgs: BfgsOptions::default(),
            restarts: 3,
        }
    }
}

/// Fit failure; a stalled optimizer still carries its best model.
#[derive(Debug, Error)]
pub enum FitError {
    #[error("optimizer stalled after {trials} line-search trials (best nll {nll:.6})")]
    Stalled {
        model: Box<UnivariateModel>,
        trials: usize,
        nll: f64,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Pooled sample variance of the centered observations in a context.
fn pooled_variance(ctx: &FitContext) -> f64 {
    let mut vals = Vec::new();
    for s in &ctx.subjects {
        vals.extend(s.resid.iter().copied());
    }
    let n = vals.len();
    if n < 2 {
        return 1.0;
    }
    let mean: f64 = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var > 0.0 {
        var
    } else {
        1.0
    }
}

/// Log-eigenvalue ladder between var/2 and var/20, descending.
fn eta_ladder(var: f64, m: usize) -> DVector<f64> {
    let hi = (var / 2.0).ln();
    let lo = (var / 20.0).ln();
    if m == 1 {
        return DVector::from_element(1, hi);
    }
    DVector::from_fn(m, |q, _| hi + (lo - hi) * q as f64 / (m - 1) as f64)
}

fn spectral_beta(
    ctx: &FitContext,
    surface: &DMatrix<f64>,
    m: usize,
) -> Result<DMatrix<f64>, CoreError> {
    let grid = ctx.basis.grid();
    let phi_init = surface_eigenfunctions(surface, grid, m);
    // Project grid eigenfunctions onto the raw basis by quadrature least
    // squares.
    let b = ctx.basis.eval_matrix();
    let gram = grid.gram_of(b);
    let chol = gram
        .cholesky()
        .ok_or_else(|| CoreError::invalid("raw quadrature Gram not positive definite"))?;
    let h = grid.len();
    let mut weighted = phi_init.clone();
    for i in 0..h {
        for c in 0..m {
            weighted[(i, c)] *= grid.weights()[i];
        }
    }
    Ok(chol.solve(&(b.transpose() * weighted)))
}

fn random_beta(u: usize, m: usize, seed: u64, attempt: u64) -> DMatrix<f64> {
    use rand_distr::{Distribution, Normal};
    let key = StreamKey::new(seed);
    let mut rng = key.rng(&[purpose::INIT, attempt]);
    let normal = Normal::new(0.0, 0.1).unwrap();
    DMatrix::from_fn(u, m, |_, _| normal.sample(&mut rng))
}

/// Surface used by the spectral start: smoothed covariance of variable `k`.
pub fn spectral_surface(
    centered: &SparseDataset,
    variable: usize,
    grid: &QuadratureGrid,
) -> DMatrix<f64> {
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = centered
        .subjects
        .iter()
        .filter(|s| !s.observations[variable].is_empty())
        .map(|s| {
            let obs = &s.observations[variable];
            (
                obs.iter().map(|o| o.0).collect(),
                obs.iter().map(|o| o.1).collect(),
            )
        })
        .collect();
    smooth_covariance_surface(&pairs, grid)
}

/// Fits variable `k` of a centered dataset at fixed rank `m`.
pub fn fit(
    centered: &SparseDataset,
    variable: usize,
    basis: &BasisSystem,
    m: usize,
    init: FitInit<'_>,
    settings: &FitSettings,
) -> Result<UnivariateModel, FitError> {
    let ctx = FitContext::new(centered, variable, basis)?;
    match init {
        FitInit::Seeded {
            seed,
            surface: None,
        } => {
            let surface = spectral_surface(centered, variable, basis.grid());
            fit_context(
                &ctx,
                m,
                FitInit::Seeded {
                    seed,
                    surface: Some(&surface),
                },
                settings,
            )
        }
        other => fit_context(&ctx, m, other, settings),
    }
}

/// Fit on a prepared context.
pub fn fit_context(
    ctx: &FitContext,
    m: usize,
    init: FitInit<'_>,
    settings: &FitSettings,
) -> Result<UnivariateModel, FitError> {
    let u = ctx.basis.count();
    if m > u {
        return Err(FitError::Core(CoreError::invalid(format!(
            "rank {m} exceeds basis size {u}"
        ))));
    }
    let var = pooled_variance(ctx);
    let eta0 = eta_ladder(var, m);
    let gamma0 = (0.1 * var).ln();

    let (first, seed) = match init {
        FitInit::Params(p) => (p, 0u64),
        FitInit::Seeded { seed, surface } => {
            let beta = surface
                .and_then(|s| spectral_beta(ctx, s, m).ok())
                .unwrap_or_else(|| random_beta(u, m, seed, 0));
            (
                UnivariateParams {
                    beta,
                    eta: eta0.clone(),
                    gamma: gamma0,
                },
                seed,
            )
        }
    };

    let mut attempts: Vec<UnivariateParams> = vec![first];
    for a in 0..settings.restarts {
        attempts.push(UnivariateParams {
            beta: random_beta(u, m, seed, (a + 1) as u64),
            eta: eta0.clone(),
            gamma: gamma0,
        });
    }

    let mut best_ok: Option<UnivariateModel> = None;
    let mut best_stall: Option<(UnivariateModel, usize)> = None;
    for (idx, start) in attempts.iter().enumerate() {
        let x0 = start.flatten();
        let outcome = bfgs::minimize(&settings.bfgs, x0, |x| {
            let p = UnivariateParams::unflatten(x, u, m);
            match objective(ctx, &p, true) {
                Some((v, Some(g))) => (v, g),
                _ => (f64::NAN, DVector::zeros(x.len())),
            }
        });
        match outcome {
            Ok(sol) => {
                let model = build_model(ctx, u, m, &sol.x, sol.value)?;
                if best_ok.as_ref().map_or(true, |b| model.nll < b.nll) {
                    best_ok = Some(model);
                }
                // The first successful attempt wins unless a later one was
                // already queued; restarts only run after a stall.
                if idx == 0 {
                    break;
                }
            }
            Err(BfgsFailure::Stalled { best, trials }) => {
                if let Ok(model) = build_model(ctx, u, m, &best.x, best.value) {
                    if best_stall
                        .as_ref()
                        .map_or(true, |(b, _)| model.nll < b.nll)
                    {
                        best_stall = Some((model, trials));
                    }
                }
                continue;
            }
            Err(BfgsFailure::Diverged { iteration }) => {
                if idx == attempts.len() - 1 && best_ok.is_none() && best_stall.is_none() {
                    return Err(FitError::Core(CoreError::Diverged { iteration }));
                }
                continue;
            }
        }
    }

    if let Some(model) = best_ok {
        // A stalled restart may still have found a lower objective.
        if let Some((stalled, _)) = best_stall {
            if stalled.nll < model.nll {
                return Ok(stalled);
            }
        }
        return Ok(model);
    }
    match best_stall {
        Some((model, trials)) => {
            let nll = model.nll;
            Err(FitError::Stalled {
                model: Box::new(model),
                trials,
                nll,
            })
        }
        None => Err(FitError::Core(CoreError::invalid(
            "no optimization attempt produced a usable model",
        ))),
    }
}

/// Builds the sorted, sign-canonicalized model at a parameter vector.
fn build_model(
    ctx: &FitContext,
    u: usize,
    m: usize,
    x: &DVector<f64>,
    nll_value: f64,
) -> Result<UnivariateModel, CoreError> {
    let params = UnivariateParams::unflatten(x, u, m);
    let grid = ctx.basis.grid();
    let raw = ctx.basis.eval_matrix() * &params.beta;
    let tape = weighted_mgs_with_tape(&raw, grid)?;
    let phi = tape.phi().clone();
    let beta_tilde = &ctx.projector * &phi;
    let lambdas = params.eta.map(f64::exp);
    let sigma2 = params.gamma.exp();

    // Order components by descending eigenvalue.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| lambdas[b].partial_cmp(&lambdas[a]).unwrap());

    let mut phi_sorted = DMatrix::zeros(phi.nrows(), m);
    let mut bt_sorted = DMatrix::zeros(u, m);
    let mut beta_sorted = DMatrix::zeros(u, m);
    let mut eig_sorted = DVector::zeros(m);
    let mut eta_sorted = DVector::zeros(m);
    for (dst, &src) in order.iter().enumerate() {
        phi_sorted.set_column(dst, &phi.column(src));
        bt_sorted.set_column(dst, &beta_tilde.column(src));
        beta_sorted.set_column(dst, &params.beta.column(src));
        eig_sorted[dst] = lambdas[src];
        eta_sorted[dst] = params.eta[src];
    }

    let n_subjects = ctx.subjects.len();
    Ok(UnivariateModel {
        params: UnivariateParams {
            beta: beta_sorted,
            eta: eta_sorted,
            gamma: params.gamma,
        },
        eigenfunctions: OrthonormalSet {
            values: phi_sorted,
            coeffs_orthobasis: Some(bt_sorted),
        },
        eigenvalues: eig_sorted,
        noise_variance: sigma2,
        basis: ctx.basis.clone(),
        nll: nll_value,
        n_subjects,
        u,
        m,
    })
}

/// One candidate outcome from [`select_model`].
#[derive(Debug)]
pub struct CandidateOutcome {
    pub u: usize,
    pub m: usize,
    pub result: Result<(f64, f64), String>,
}

/// Fits every `(U, M)` pair in the ranges and returns the AIC minimizer.
/// Ties break toward smaller M, then smaller U.
pub fn select_model(
    centered: &SparseDataset,
    variable: usize,
    grid: &QuadratureGrid,
    kind: BasisKind,
    u_range: (usize, usize),
    m_range: (usize, usize),
    seed: u64,
    settings: &FitSettings,
) -> Result<(UnivariateModel, Vec<CandidateOutcome>), CoreError> {
    if u_range.0 > u_range.1 || m_range.0 > m_range.1 {
        return Err(CoreError::invalid("empty selection range"));
    }
    if m_range.1 > u_range.0 {
        return Err(CoreError::invalid(format!(
            "max rank {} exceeds smallest basis size {}",
            m_range.1, u_range.0
        )));
    }

    let surface = spectral_surface(centered, variable, grid);

    // One context per basis size, shared across ranks.
    let mut contexts = Vec::new();
    for u in u_range.0..=u_range.1 {
        let basis = BasisSystem::new(kind, u, grid)?;
        contexts.push((u, FitContext::new(centered, variable, &basis)?));
    }

    let pairs: Vec<(usize, usize)> = contexts
        .iter()
        .flat_map(|(u, _)| (m_range.0..=m_range.1).map(move |m| (*u, m)))
        .collect();

    let fits: Vec<(usize, usize, Result<UnivariateModel, FitError>)> = pairs
        .par_iter()
        .map(|&(u, m)| {
            let ctx = &contexts
                .iter()
                .find(|(cu, _)| *cu == u)
                .expect("context exists for every candidate")
                .1;
            let init = FitInit::Seeded {
                seed: seed ^ ((u as u64) << 32) ^ m as u64,
                surface: Some(&surface),
            };
            (u, m, fit_context(ctx, m, init, settings))
        })
        .collect();

    let mut best: Option<UnivariateModel> = None;
    let mut log = Vec::with_capacity(fits.len());
    for (u, m, res) in fits {
        match res {
            Ok(model) => {
                let a = model.aic();
                log.push(CandidateOutcome {
                    u,
                    m,
                    result: Ok((a, model.nll)),
                });
                let better = match &best {
                    None => true,
                    Some(b) => {
                        let ba = b.aic();
                        a < ba || (a == ba && (m, u) < (b.m, b.u))
                    }
                };
                if better {
                    best = Some(model);
                }
            }
            Err(e) => {
                log.push(CandidateOutcome {
                    u,
                    m,
                    result: Err(e.to_string()),
                });
            }
        }
    }

    match best {
        Some(model) => Ok((model, log)),
        None => {
            let detail: Vec<String> = log
                .iter()
                .map(|c| {
                    format!(
                        "  (U={}, M={}): {}",
                        c.u,
                        c.m,
                        c.result.as_ref().err().cloned().unwrap_or_default()
                    )
                })
                .collect();
            Err(CoreError::AllFitsFailed(detail.join("\n")))
        }
    }
}
