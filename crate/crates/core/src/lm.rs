//! Bounded Levenberg–Marquardt least squares.
//!
//! Bounds are handled by reparameterization rather than clamping: each
//! parameter carries a [`Transform`] that maps an unconstrained internal value
//! onto its admissible range, and the damped Gauss–Newton iteration runs
//! entirely in the internal space. The Jacobian is a forward difference taken
//! in that space.
//!
//! ```
//! use ivimlab::lm::{lm_fit, FitProblem, LmOptions, Transform};
//!
//! let x = [0.0, 1.0, 2.0, 3.0, 4.0];
//! let problem = FitProblem::new(
//!     |p: &[f64], r: &mut [f64]| {
//!         for (ri, xi) in r.iter_mut().zip(x) {
//!             *ri = p[0] * xi + p[1] - (2.0 * xi + 1.0);
//!         }
//!     },
//!     x.len(),
//!     vec![0.0, 0.0],
//!     vec![Transform::Identity; 2],
//! );
//! let fit = lm_fit(&problem, &LmOptions::default()).unwrap();
//! assert!((fit.params[0] - 2.0).abs() < 1e-10);
//! assert!((fit.params[1] - 1.0).abs() < 1e-10);
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps an unconstrained internal value onto a parameter's admissible range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// `x = e^u`, `x > 0`.
    Log,
    /// `x = lo + (hi - lo) / (1 + e^-u)`, `lo < x < hi`.
    Logistic { lo: f64, hi: f64 },
    /// `x = floor + e^u`, `x > floor`.
    OffsetLog { floor: f64 },
}

impl Transform {
    pub fn contains(&self, x: f64) -> bool {
        x.is_finite()
            && match *self {
                Transform::Identity => true,
                Transform::Log => x > 0.0,
                Transform::Logistic { lo, hi } => lo < x && x < hi,
                Transform::OffsetLog { floor } => x > floor,
            }
    }

    pub fn to_internal(&self, x: f64) -> f64 {
        match *self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Logistic { lo, hi } => ((x - lo) / (hi - x)).ln(),
            Transform::OffsetLog { floor } => (x - floor).ln(),
        }
    }

    pub fn to_external(&self, u: f64) -> f64 {
        match *self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Logistic { lo, hi } => lo + (hi - lo) / (1.0 + (-u).exp()),
            Transform::OffsetLog { floor } => floor + u.exp(),
        }
    }
}

/// Solver settings. The defaults are tight because the voxel problems are tiny.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmOptions {
    pub max_iter: usize,
    pub gtol: f64,
    pub xtol: f64,
    pub ftol: f64,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            gtol: 1e-10,
            xtol: 1e-10,
            ftol: 1e-10,
            lambda0: 1e-3,
            lambda_up: 2.0,
            lambda_down: 3.0,
        }
    }
}

/// A least-squares problem: `residuals(params, out)` fills `out` with
/// `n_residuals` values for external (untransformed) parameters.
pub struct FitProblem<R> {
    pub residuals: R,
    pub n_residuals: usize,
    pub initial: Vec<f64>,
    pub transforms: Vec<Transform>,
}

impl<R> FitProblem<R>
where
    R: Fn(&[f64], &mut [f64]),
{
    pub fn new(residuals: R, n_residuals: usize, initial: Vec<f64>, transforms: Vec<Transform>) -> Self {
        FitProblem {
            residuals,
            n_residuals,
            initial,
            transforms,
        }
    }

    fn external(&self, internal: &[f64], out: &mut [f64]) {
        for ((o, &u), t) in out.iter_mut().zip(internal).zip(&self.transforms) {
            *o = t.to_external(u);
        }
    }

    /// Residuals at internal parameters `u`; returns the sum of squares.
    fn eval(&self, u: &[f64], params: &mut [f64], r: &mut [f64]) -> f64 {
        self.external(u, params);
        (self.residuals)(params, r);
        r.iter().map(|v| v * v).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Residuals at the initial guess were all exactly zero.
    ZeroResidual,
    /// Residual vector orthogonal to every Jacobian column within `gtol`.
    Gradient,
    /// Step length below `xtol` relative to the parameter norm.
    StepSize,
    /// Relative cost reduction of an accepted step below `ftol`.
    CostReduction,
    MaxIterations,
    /// The Jacobian could not be evaluated to finite values.
    Diverged(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    /// Fitted parameters in external space.
    pub params: Vec<f64>,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
}

/// Forward-difference Jacobian of the residuals with respect to the internal
/// parameters, column-major (`m` columns of `n` rows).
pub fn numerical_jacobian<R>(problem: &FitProblem<R>, internal: &[f64]) -> Vec<f64>
where
    R: Fn(&[f64], &mut [f64]),
{
    let n = problem.n_residuals;
    let m = internal.len();
    let mut params = vec![0.0; m];
    let mut r0 = vec![0.0; n];
    problem.eval(internal, &mut params, &mut r0);
    let mut jac = vec![0.0; n * m];
    let mut shifted = internal.to_vec();
    let mut r = vec![0.0; n];
    forward_jacobian(problem, internal, &r0, &mut shifted, &mut params, &mut r, &mut jac);
    jac
}

fn forward_jacobian<R>(
    problem: &FitProblem<R>,
    u: &[f64],
    r0: &[f64],
    shifted: &mut [f64],
    params: &mut [f64],
    r: &mut [f64],
    jac: &mut [f64],
) where
    R: Fn(&[f64], &mut [f64]),
{
    let n = r0.len();
    shifted.copy_from_slice(u);
    for i in 0..u.len() {
        let h = (1e-6 * u[i].abs()).max(1e-6);
        shifted[i] = u[i] + h;
        problem.eval(shifted, params, r);
        let col = &mut jac[i * n..(i + 1) * n];
        for ((j, a), b) in col.iter_mut().zip(r.iter()).zip(r0) {
            *j = (a - b) / h;
        }
        shifted[i] = u[i];
    }
}

/// In-place Cholesky solve of `a x = b` for a small symmetric positive-definite
/// `m x m` matrix (row-major). Returns `false` if `a` is not positive definite.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], m: usize) -> bool {
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= a[j * m + k] * a[j * m + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * m + j] = d;
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = s / d;
        }
    }
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * m + k] * b[k];
        }
        b[i] = s / a[i * m + i];
    }
    for i in (0..m).rev() {
        let mut s = b[i];
        for k in i + 1..m {
            s -= a[k * m + i] * b[k];
        }
        b[i] = s / a[i * m + i];
    }
    true
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rejected trial steps allowed per outer iteration before giving up on it.
const MAX_REJECTIONS: usize = 64;

pub fn lm_fit<R>(problem: &FitProblem<R>, opts: &LmOptions) -> Result<FitResult>
where
    R: Fn(&[f64], &mut [f64]),
{
    let m = problem.initial.len();
    let n = problem.n_residuals;
    if problem.transforms.len() != m {
        return Err(Error::Dimension(format!(
            "{} transforms for {m} parameters",
            problem.transforms.len()
        )));
    }
    if n < m {
        return Err(Error::Dimension(format!(
            "{n} residuals cannot determine {m} parameters"
        )));
    }
    for (i, (x, t)) in problem.initial.iter().zip(&problem.transforms).enumerate() {
        if !t.contains(*x) {
            return Err(Error::Argument(format!(
                "initial parameter {i} = {x} is outside the range of {t:?}"
            )));
        }
    }

    let mut u: Vec<f64> = problem
        .initial
        .iter()
        .zip(&problem.transforms)
        .map(|(x, t)| t.to_internal(*x))
        .collect();
    let mut params = vec![0.0; m];
    let mut r = vec![0.0; n];
    let mut cost = problem.eval(&u, &mut params, &mut r);

    let finish = |u: &[f64], cost: f64, iterations: usize, termination: Termination| {
        let mut params = vec![0.0; m];
        problem.external(u, &mut params);
        let converged = matches!(
            termination,
            Termination::ZeroResidual
                | Termination::Gradient
                | Termination::StepSize
                | Termination::CostReduction
        );
        Ok(FitResult {
            params,
            cost,
            iterations,
            converged,
            termination,
        })
    };

    if !cost.is_finite() {
        return Err(Error::Argument(
            "residuals are not finite at the initial guess".into(),
        ));
    }
    if cost == 0.0 {
        return finish(&u, cost, 0, Termination::ZeroResidual);
    }

    let mut lambda = opts.lambda0;
    let mut jac = vec![0.0; n * m];
    let mut jtj = vec![0.0; m * m];
    let mut grad = vec![0.0; m];
    let mut system = vec![0.0; m * m];
    let mut step = vec![0.0; m];
    let mut trial = vec![0.0; m];
    let mut r_trial = vec![0.0; n];
    let mut scratch = vec![0.0; m];

    for iteration in 1..=opts.max_iter {
        forward_jacobian(problem, &u, &r, &mut trial, &mut params, &mut r_trial, &mut jac);
        if jac.iter().any(|v| !v.is_finite()) {
            return finish(
                &u,
                cost,
                iteration,
                Termination::Diverged(format!("non-finite Jacobian at iteration {iteration}")),
            );
        }

        let r_norm = cost.sqrt();
        let mut max_cos: f64 = 0.0;
        for a in 0..m {
            let col_a = &jac[a * n..(a + 1) * n];
            grad[a] = col_a.iter().zip(&r).map(|(j, ri)| j * ri).sum();
            for b in 0..=a {
                let col_b = &jac[b * n..(b + 1) * n];
                let v: f64 = col_a.iter().zip(col_b).map(|(x, y)| x * y).sum();
                jtj[a * m + b] = v;
                jtj[b * m + a] = v;
            }
            let col_norm = jtj[a * m + a].sqrt();
            if col_norm > 0.0 {
                max_cos = max_cos.max(grad[a].abs() / (col_norm * r_norm));
            }
        }
        if max_cos <= opts.gtol {
            return finish(&u, cost, iteration, Termination::Gradient);
        }

        let diag_floor = 1e-12 * (0..m).map(|a| jtj[a * m + a]).fold(0.0, f64::max) + f64::MIN_POSITIVE;
        let u_norm = norm(&u);
        let mut accepted = false;
        for _ in 0..MAX_REJECTIONS {
            system.copy_from_slice(&jtj);
            for a in 0..m {
                system[a * m + a] += lambda * jtj[a * m + a].max(diag_floor);
                step[a] = -grad[a];
            }
            if !cholesky_solve(&mut system, &mut step, m) {
                lambda *= opts.lambda_up;
                continue;
            }
            let step_small = norm(&step) <= opts.xtol * (u_norm + opts.xtol);
            for a in 0..m {
                trial[a] = u[a] + step[a];
            }
            let trial_cost = problem.eval(&trial, &mut scratch, &mut r_trial);
            if trial_cost.is_finite() && trial_cost < cost {
                let reduction = cost - trial_cost;
                u.copy_from_slice(&trial);
                r.copy_from_slice(&r_trial);
                let previous = cost;
                cost = trial_cost;
                lambda /= opts.lambda_down;
                accepted = true;
                if cost == 0.0 {
                    return finish(&u, cost, iteration, Termination::Gradient);
                }
                if step_small {
                    return finish(&u, cost, iteration, Termination::StepSize);
                }
                if reduction <= opts.ftol * previous {
                    return finish(&u, cost, iteration, Termination::CostReduction);
                }
                break;
            }
            if step_small {
                return finish(&u, cost, iteration, Termination::StepSize);
            }
            lambda *= opts.lambda_up;
        }
        if !accepted {
            return finish(&u, cost, iteration, Termination::StepSize);
        }
    }
    finish(&u, cost, opts.max_iter, Termination::MaxIterations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_problem(
        xs: Vec<f64>,
        ys: Vec<f64>,
        initial: Vec<f64>,
    ) -> FitProblem<impl Fn(&[f64], &mut [f64])> {
        let n = xs.len();
        FitProblem::new(
            move |p: &[f64], r: &mut [f64]| {
                for ((ri, x), y) in r.iter_mut().zip(&xs).zip(&ys) {
                    *ri = p[0] * x + p[1] - y;
                }
            },
            n,
            initial,
            vec![Transform::Identity; 2],
        )
    }

    #[test]
    fn exact_line() {
        let xs: Vec<f64> = (0..5).map(f64::from).collect();
        let ys = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let fit = lm_fit(&line_problem(xs, ys, vec![0.0, 0.0]), &LmOptions::default()).unwrap();
        assert!(fit.converged, "{fit:?}");
        assert!((fit.params[0] - 2.0).abs() < 1e-10);
        assert!((fit.params[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn monoexponential_recovery() {
        let b: Vec<f64> = (0..7).map(|k| 100.0 * k as f64).collect();
        let s: Vec<f64> = b.iter().map(|b| 100.0 * (-0.002 * b).exp()).collect();
        let problem = FitProblem::new(
            |p: &[f64], r: &mut [f64]| {
                for ((ri, bi), si) in r.iter_mut().zip(&b).zip(&s) {
                    *ri = p[0] * (-bi * p[1]).exp() - si;
                }
            },
            b.len(),
            vec![80.0, 0.001],
            vec![Transform::Log, Transform::Logistic { lo: 1e-5, hi: 1e-1 }],
        );
        let fit = lm_fit(&problem, &LmOptions::default()).unwrap();
        assert!(fit.converged, "{fit:?}");
        assert!((fit.params[0] / 100.0 - 1.0).abs() < 1e-8, "{:?}", fit.params);
        assert!((fit.params[1] / 0.002 - 1.0).abs() < 1e-8, "{:?}", fit.params);
    }

    #[test]
    fn optimal_start_is_a_fixed_point() {
        let xs: Vec<f64> = (0..5).map(f64::from).collect();
        let ys = vec![1.0, 3.5, 4.5, 7.5, 8.5];
        // OLS: slope 1.9, intercept 1.2
        let start = vec![1.9, 1.2];
        let problem = line_problem(xs, ys, start.clone());
        let mut r = vec![0.0; 5];
        (problem.residuals)(&start, &mut r);
        let cost0: f64 = r.iter().map(|v| v * v).sum();
        let fit = lm_fit(&problem, &LmOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.iterations <= 2, "{fit:?}");
        assert!((fit.cost - cost0).abs() <= 1e-12 * cost0);
    }

    #[test]
    fn zero_residual_start_returns_immediately() {
        let xs = vec![0.0, 1.0, 2.0];
        let ys = vec![1.0, 3.0, 5.0];
        let fit = lm_fit(&line_problem(xs, ys, vec![2.0, 1.0]), &LmOptions::default()).unwrap();
        assert_eq!(fit.termination, Termination::ZeroResidual);
        assert_eq!(fit.iterations, 0);
        assert_eq!(fit.params, vec![2.0, 1.0]);
    }

    #[test]
    fn underdetermined_rejected() {
        let problem = line_problem(vec![1.0], vec![1.0], vec![0.0, 0.0]);
        assert!(matches!(
            lm_fit(&problem, &LmOptions::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn initial_guess_outside_range_rejected() {
        let problem = FitProblem::new(
            |p: &[f64], r: &mut [f64]| r[0] = p[0],
            1,
            vec![-1.0],
            vec![Transform::Log],
        );
        assert!(lm_fit(&problem, &LmOptions::default()).is_err());
    }

    #[test]
    fn bounds_hold_when_optimum_is_outside() {
        // unconstrained optimum at x = -3; the log transform keeps x > 0
        let problem = FitProblem::new(
            |p: &[f64], r: &mut [f64]| {
                r[0] = p[0] + 3.0;
                r[1] = 0.5 * (p[0] + 3.0);
            },
            2,
            vec![1.0],
            vec![Transform::Log],
        );
        let fit = lm_fit(&problem, &LmOptions::default()).unwrap();
        assert!(fit.params[0] > 0.0 && fit.params[0] < 1e-3, "{fit:?}");
    }

    #[test]
    fn transforms_round_trip() {
        let cases = [
            (Transform::Identity, -4.2),
            (Transform::Log, 0.002),
            (Transform::Logistic { lo: 0.0, hi: 1.0 }, 0.3),
            (Transform::OffsetLog { floor: 0.002 }, 0.05),
        ];
        for (t, x) in cases {
            let back = t.to_external(t.to_internal(x));
            assert!((back - x).abs() <= 1e-14 * x.abs().max(1.0), "{t:?}: {back} vs {x}");
        }
    }
}
