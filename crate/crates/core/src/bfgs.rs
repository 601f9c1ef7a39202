//! Dense BFGS with a cubic-interpolation line search satisfying the strong
//! Wolfe conditions.

use nalgebra::{DMatrix, DVector};

/// Termination and line-search constants.
#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Stop when the gradient infinity norm drops below this.
    pub grad_tol: f64,
    /// Stop when an accepted step decreases the objective by less than this.
    pub f_tol: f64,
    pub max_iterations: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Objective evaluations the line search may spend per iteration.
    pub max_line_trials: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            f_tol: 1e-10,
            max_iterations: 500,
            c1: 1e-4,
            c2: 0.9,
            max_line_trials: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientNorm,
    ObjectiveDecrease,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
}

#[derive(Debug)]
pub enum BfgsFailure {
    /// Line search exhausted its trial budget; carries the best point seen.
    Stalled { best: BfgsOutcome, trials: usize },
    /// Objective or gradient became non-finite.
    Diverged { iteration: usize },
}

struct LineEval {
    alpha: f64,
    value: f64,
    grad: DVector<f64>,
    slope: f64,
}

/// Minimizes `obj` from `x0`. `obj` returns the objective and its gradient.
pub fn minimize<F>(
    opts: &BfgsOptions,
    x0: DVector<f64>,
    mut obj: F,
) -> Result<BfgsOutcome, BfgsFailure>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let dim = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &DVector<f64>, evals: &mut usize| {
        *evals += 1;
        obj(x)
    };

    let mut x = x0;
    let (mut fx, mut gx) = eval(&x, &mut evals);
    if !fx.is_finite() || gx.iter().any(|g| !g.is_finite()) {
        return Err(BfgsFailure::Diverged { iteration: 0 });
    }

    let mut h_inv = DMatrix::<f64>::identity(dim, dim);
    let mut first_step = true;

    for iteration in 0..opts.max_iterations {
        if gx.amax() < opts.grad_tol {
            return Ok(BfgsOutcome {
                x,
                value: fx,
                gradient: gx,
                iterations: iteration,
                evaluations: evals,
                stop: StopReason::GradientNorm,
            });
        }

        let mut direction = -(&h_inv * &gx);
        let mut slope = gx.dot(&direction);
        if !(slope < 0.0) {
            // Curvature information went bad; fall back to steepest descent.
            h_inv = DMatrix::identity(dim, dim);
            direction = -gx.clone();
            slope = gx.dot(&direction);
            if !(slope < 0.0) {
                return Err(BfgsFailure::Diverged { iteration });
            }
        }

        let ls = line_search(
            opts,
            &mut eval,
            &mut evals,
            &x,
            &direction,
            fx,
            slope,
        );
        let accepted = match ls {
            Ok(a) => a,
            Err(LineSearchFailure::NonFinite) => {
                return Err(BfgsFailure::Diverged { iteration });
            }
            Err(LineSearchFailure::TrialsExhausted { best, trials }) => {
                let (bx, bf, bg) = match best {
                    Some(b) => (&x + &direction * b.alpha, b.value, b.grad),
                    None => (x.clone(), fx, gx.clone()),
                };
                return Err(BfgsFailure::Stalled {
                    best: BfgsOutcome {
                        x: bx,
                        value: bf,
                        gradient: bg,
                        iterations: iteration,
                        evaluations: evals,
                        stop: StopReason::IterationLimit,
                    },
                    trials,
                });
            }
        };

        let x_new = &x + &direction * accepted.alpha;
        let f_new = accepted.value;
        let g_new = accepted.grad;
        let decrease = fx - f_new;

        let s = &x_new - &x;
        let y = &g_new - &gx;
        let sy = s.dot(&y);
        if sy > 1e-14 * s.norm() * y.norm() {
            if first_step {
                // Scale the initial inverse Hessian (Nocedal-Wright 6.20).
                let scale = sy / y.dot(&y);
                if scale.is_finite() && scale > 0.0 {
                    h_inv = DMatrix::identity(dim, dim) * scale;
                }
                first_step = false;
            }
            let rho = 1.0 / sy;
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            let hy_s = &hy * s.transpose();
            h_inv -= &hy_s * rho;
            h_inv -= hy_s.transpose() * rho;
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }

        x = x_new;
        fx = f_new;
        gx = g_new;

        if decrease.abs() < opts.f_tol {
            return Ok(BfgsOutcome {
                x,
                value: fx,
                gradient: gx,
                iterations: iteration + 1,
                evaluations: evals,
                stop: StopReason::ObjectiveDecrease,
            });
        }
    }

    Ok(BfgsOutcome {
        x,
        value: fx,
        gradient: gx,
        iterations: opts.max_iterations,
        evaluations: evals,
        stop: StopReason::IterationLimit,
    })
}

enum LineSearchFailure {
    TrialsExhausted {
        best: Option<LineEval>,
        trials: usize,
    },
    NonFinite,
}

/// Strong-Wolfe line search: bracketing phase followed by cubic-interpolated
/// zoom (Nocedal-Wright algorithms 3.5 and 3.6).
fn line_search<F>(
    opts: &BfgsOptions,
    eval: &mut F,
    evals: &mut usize,
    x: &DVector<f64>,
    direction: &DVector<f64>,
    f0: f64,
    slope0: f64,
) -> Result<LineEval, LineSearchFailure>
where
    F: FnMut(&DVector<f64>, &mut usize) -> (f64, DVector<f64>),
{
    let mut trials = 0usize;
    let mut best: Option<LineEval> = None;

    let mut probe = |alpha: f64,
                     trials: &mut usize,
                     best: &mut Option<LineEval>,
                     evals: &mut usize|
     -> Result<LineEval, LineSearchFailure> {
        *trials += 1;
        let point = x + direction * alpha;
        let (value, grad) = eval(&point, evals);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(LineSearchFailure::NonFinite);
        }
        let slope = grad.dot(direction);
        let this = LineEval {
            alpha,
            value,
            grad,
            slope,
        };
        if best.as_ref().map_or(true, |b| value < b.value) {
            *best = Some(LineEval {
                alpha,
                value,
                grad: this.grad.clone(),
                slope,
            });
        }
        Ok(this)
    };

    let wolfe = |e: &LineEval| -> bool {
        e.value <= f0 + opts.c1 * e.alpha * slope0 && e.slope.abs() <= opts.c2 * slope0.abs()
    };

    // Bracketing phase.
    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut grad_prev: Option<LineEval> = None;
    let mut alpha = 1.0;
    const ALPHA_MAX: f64 = 1e4;

    let (mut lo, mut hi);
    loop {
        if trials >= opts.max_line_trials {
            return Err(LineSearchFailure::TrialsExhausted { best, trials });
        }
        let e = probe(alpha, &mut trials, &mut best, evals)?;
        if e.value > f0 + opts.c1 * alpha * slope0 || (e.value >= f_prev && alpha_prev > 0.0) {
            lo = match grad_prev {
                Some(p) => p,
                None => LineEval {
                    alpha: 0.0,
                    value: f0,
                    grad: DVector::zeros(0),
                    slope: slope0,
                },
            };
            hi = e;
            break;
        }
        if wolfe(&e) {
            return Ok(e);
        }
        if e.slope >= 0.0 {
            lo = e;
            hi = match grad_prev {
                Some(p) => p,
                None => LineEval {
                    alpha: 0.0,
                    value: f0,
                    grad: DVector::zeros(0),
                    slope: slope0,
                },
            };
            break;
        }
        if alpha >= ALPHA_MAX {
            return Err(LineSearchFailure::TrialsExhausted { best, trials });
        }
        alpha_prev = e.alpha;
        f_prev = e.value;
        grad_prev = Some(e);
        alpha = (alpha * 2.0).min(ALPHA_MAX);
    }

    // Zoom phase with cubic interpolation.
    loop {
        if trials >= opts.max_line_trials {
            return Err(LineSearchFailure::TrialsExhausted { best, trials });
        }
        let trial = cubic_interpolate(&lo, &hi);
        let e = probe(trial, &mut trials, &mut best, evals)?;
        if e.value > f0 + opts.c1 * e.alpha * slope0 || e.value >= lo.value {
            hi = e;
        } else {
            if wolfe(&e) {
                return Ok(e);
            }
            if e.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = LineEval {
                    alpha: lo.alpha,
                    value: lo.value,
                    grad: lo.grad.clone(),
                    slope: lo.slope,
                };
            }
            lo = e;
        }
        if (hi.alpha - lo.alpha).abs() < 1e-14 * (1.0 + lo.alpha.abs()) {
            return Err(LineSearchFailure::TrialsExhausted { best, trials });
        }
    }
}

/// Minimizer of the cubic through two points with values and slopes,
/// safeguarded toward the interior of the bracket.
fn cubic_interpolate(lo: &LineEval, hi: &LineEval) -> f64 {
    let (a, fa, da) = (lo.alpha, lo.value, lo.slope);
    let (b, fb, db) = (hi.alpha, hi.value, hi.slope);
    let width = b - a;
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let radicand = d1 * d1 - da * db;
    let mut candidate = if radicand >= 0.0 && width.abs() > 0.0 {
        let d2 = radicand.sqrt().copysign(width);
        b - width * (db + d2 - d1) / (db - da + 2.0 * d2)
    } else {
        f64::NAN
    };
    let lo_bound = a.min(b) + 0.1 * width.abs();
    let hi_bound = a.max(b) - 0.1 * width.abs();
    if !candidate.is_finite() || candidate < lo_bound || candidate > hi_bound {
        candidate = 0.5 * (a + b);
    }
    candidate
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_minimum() {
        let opts = BfgsOptions::default();
        let out = minimize(&opts, DVector::from_vec(vec![3.0, -4.0]), |x| {
            let f = (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2);
            let g = DVector::from_vec(vec![2.0 * (x[0] - 1.0), 20.0 * (x[1] + 2.0)]);
            (f, g)
        })
        .unwrap();
        assert_relative_eq!(out.x[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(out.x[1], -2.0, epsilon = 1e-6);
    }

    #[test]
    fn rosenbrock_converges() {
        let opts = BfgsOptions::default();
        let out = minimize(&opts, DVector::from_vec(vec![-1.2, 1.0]), |x| {
            let f = (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ]);
            (f, g)
        })
        .unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-4, "x = {:?}", out.x);
        assert!((out.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn monotone_accepted_values() {
        let opts = BfgsOptions::default();
        let mut trace = Vec::new();
        let _ = minimize(&opts, DVector::from_vec(vec![5.0, 5.0, 5.0]), |x| {
            let f = x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v * v).sum::<f64>()
                + (x[0] * x[1]).sin() * 0.1;
            let mut g = DVector::zeros(3);
            g[0] = 2.0 * x[0] + 0.1 * x[1] * (x[0] * x[1]).cos();
            g[1] = 4.0 * x[1] + 0.1 * x[0] * (x[0] * x[1]).cos();
            g[2] = 6.0 * x[2];
            trace.push(f);
            (f, g)
        })
        .unwrap();
        // Objective evaluations are not monotone (line-search probes), but
        // the running minimum must follow the first evaluation downward.
        assert!(trace.last().unwrap() <= trace.first().unwrap());
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            minimize(&BfgsOptions::default(), DVector::from_vec(vec![2.0, 1.0]), |x| {
                let f = (x[0] - 0.3).powi(4) + (x[1] + 0.7).powi(2) + x[0] * x[1] * 0.05;
                let g = DVector::from_vec(vec![
                    4.0 * (x[0] - 0.3).powi(3) + 0.05 * x[1],
                    2.0 * (x[1] + 0.7) + 0.05 * x[0],
                ]);
                (f, g)
            })
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.x.as_slice(), b.x.as_slice());
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn non_finite_objective_is_diverged() {
        let opts = BfgsOptions::default();
        let res = minimize(&opts, DVector::from_vec(vec![1.0]), |x| {
            let f = if x[0] > 0.5 { f64::NAN } else { x[0] * x[0] };
            (f, DVector::from_vec(vec![2.0 * x[0]]))
        });
        assert!(matches!(res, Err(BfgsFailure::Diverged { .. })));
    }

    #[test]
    fn stationary_gradient_at_solution() {
        let opts = BfgsOptions::default();
        let out = minimize(&opts, DVector::from_vec(vec![0.9, -1.4]), |x| {
            let f = (x[0] * x[0] + x[1] * x[1] + 1.0).ln();
            let denom = x[0] * x[0] + x[1] * x[1] + 1.0;
            let g = DVector::from_vec(vec![2.0 * x[0] / denom, 2.0 * x[1] / denom]);
            (f, g)
        })
        .unwrap();
        assert!(out.gradient.amax() < 1e-5 * out.value.abs().max(1.0));
    }
}
