//! Dense Levenberg-Marquardt for small nonlinear least-squares problems.
//!
//! Minimizes `½‖r(x)‖²` for a residual function `r: ℝⁿ → ℝᵐ`. Each iteration solves
//! `(JᵀJ + λ·diag(JᵀJ)) δ = −Jᵀr` by Cholesky, accepts the step only when the cost
//! strictly decreases, and scales `λ` by the configured factors. Jacobians come from
//! central differences unless the problem supplies an analytic one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("residual function returned a non-finite value")]
    NonFiniteResidual,
    #[error("normal equations stayed singular after {retries} damping increases")]
    SingularNormalEquations { retries: usize },
    #[error("parameter vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

/// A residual function `x ∈ ℝⁿ → r ∈ ℝᵐ`.
pub trait LeastSquaresProblem {
    fn num_params(&self) -> usize;

    fn num_residuals(&self) -> usize;

    /// Writes `r(x)` into `out`, which has length [`num_residuals`](Self::num_residuals).
    fn residuals(&self, x: &[f64], out: &mut [f64]);

    /// Analytic Jacobian, if available. The default falls back to central differences.
    fn jacobian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// Adapts a closure into a [`LeastSquaresProblem`].
pub struct FnProblem<F> {
    params: usize,
    residuals: usize,
    f: F,
}

impl<F> FnProblem<F>
where
    F: Fn(&[f64], &mut [f64]),
{
    pub fn new(params: usize, residuals: usize, f: F) -> Self {
        if residuals < params {
            log::warn!("least-squares problem has fewer residuals ({residuals}) than parameters ({params})");
        }
        Self { params, residuals, f }
    }
}

impl<F> LeastSquaresProblem for FnProblem<F>
where
    F: Fn(&[f64], &mut [f64]),
{
    fn num_params(&self) -> usize {
        self.params
    }

    fn num_residuals(&self) -> usize {
        self.residuals
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_increase: f64,
    pub damping_decrease: f64,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub fd_relative_step: f64,
    /// Cholesky failures tolerated per iteration before giving up.
    pub max_damping_retries: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_damping: 1e-3,
            damping_increase: 10.0,
            damping_decrease: 0.1,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            fd_relative_step: 1e-6,
            max_damping_retries: 30,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let positive = [
            self.initial_damping,
            self.damping_increase,
            self.damping_decrease,
            self.gradient_tolerance,
            self.step_tolerance,
            self.fd_relative_step,
        ];
        if self.max_iterations == 0 || !positive.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(OptimError::InvalidConfig("all LM settings must be positive".into()));
        }
        if self.damping_increase <= 1.0 || self.damping_decrease >= 1.0 {
            return Err(OptimError::InvalidConfig(
                "damping increase must exceed 1 and decrease must be below 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// `‖Jᵀr‖∞` fell below the gradient tolerance.
    GradientTolerance,
    /// An accepted step was below the step tolerance relative to `‖x‖`.
    StepTolerance,
    /// The residual vanished exactly.
    ZeroResidual,
    /// Damping grew until no step could decrease the cost.
    NoImprovement,
    MaxIterations,
}

impl Termination {
    pub fn converged(self) -> bool {
        !matches!(self, Termination::MaxIterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub solution: Vec<f64>,
    /// `½‖r‖²` at the solution.
    pub cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost after the initial evaluation and after every accepted step.
    pub cost_trace: Vec<f64>,
    /// `‖Jᵀr‖∞` at the last Jacobian evaluation.
    pub gradient_norm: f64,
}

/// Central-difference Jacobian with step `h = max(rel_step·|xᵢ|, rel_step)`.
pub fn numeric_jacobian<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    rel_step: f64,
) -> Result<DMatrix<f64>, OptimError> {
    let n = problem.num_params();
    let m = problem.num_residuals();
    let mut jac = DMatrix::zeros(m, n);
    let mut probe = x.to_vec();
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    for j in 0..n {
        let h = (rel_step * x[j].abs()).max(rel_step);
        probe[j] = x[j] + h;
        problem.residuals(&probe, &mut plus);
        probe[j] = x[j] - h;
        problem.residuals(&probe, &mut minus);
        probe[j] = x[j];
        // actual spacing after rounding of x ± h
        let span = (x[j] + h) - (x[j] - h);
        for i in 0..m {
            let d = (plus[i] - minus[i]) / span;
            if !d.is_finite() {
                return Err(OptimError::NonFiniteResidual);
            }
            jac[(i, j)] = d;
        }
    }
    Ok(jac)
}

fn evaluate<P: LeastSquaresProblem + ?Sized>(problem: &P, x: &[f64], out: &mut [f64]) -> Option<f64> {
    problem.residuals(x, out);
    let mut sum = 0.0;
    for r in out.iter() {
        if !r.is_finite() {
            return None;
        }
        sum += r * r;
    }
    Some(0.5 * sum)
}

fn jacobian<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    config: &LmConfig,
) -> Result<DMatrix<f64>, OptimError> {
    match problem.jacobian(x) {
        Some(j) => {
            if j.iter().all(|v| v.is_finite()) {
                Ok(j)
            } else {
                Err(OptimError::NonFiniteResidual)
            }
        }
        None => numeric_jacobian(problem, x, config.fd_relative_step),
    }
}

pub fn levenberg_marquardt<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    config: &LmConfig,
) -> Result<LmReport, OptimError> {
    config.validate()?;
    let n = problem.num_params();
    let m = problem.num_residuals();
    if x0.len() != n {
        return Err(OptimError::DimensionMismatch { expected: n, got: x0.len() });
    }

    let mut x = x0.to_vec();
    let mut r = vec![0.0; m];
    let mut cost = evaluate(problem, &x, &mut r).ok_or(OptimError::NonFiniteResidual)?;
    let mut trace = vec![cost];
    let mut lambda = config.initial_damping;
    let mut trial_x = vec![0.0; n];
    let mut trial_r = vec![0.0; m];
    let mut gradient_norm = f64::INFINITY;

    let finish = |x: Vec<f64>, cost, iterations, termination, trace, gradient_norm| LmReport {
        solution: x,
        cost,
        iterations,
        termination,
        cost_trace: trace,
        gradient_norm,
    };

    for iteration in 0..config.max_iterations {
        if cost == 0.0 {
            return Ok(finish(x, cost, iteration, Termination::ZeroResidual, trace, 0.0));
        }
        let jac = jacobian(problem, &x, config)?;
        let residual = DVector::from_column_slice(&r);
        let gradient = jac.tr_mul(&residual);
        gradient_norm = gradient.amax();
        if gradient_norm <= config.gradient_tolerance {
            return Ok(finish(x, cost, iteration, Termination::GradientTolerance, trace, gradient_norm));
        }
        let normal = jac.tr_mul(&jac);
        let max_diag = normal.diagonal().amax();
        let floor = f64::EPSILON * max_diag.max(1.0);

        let mut singular_retries = 0;
        loop {
            let mut damped = normal.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * normal[(i, i)].max(floor);
            }
            let Some(chol) = damped.cholesky() else {
                singular_retries += 1;
                if singular_retries > config.max_damping_retries {
                    return Err(OptimError::SingularNormalEquations { retries: singular_retries - 1 });
                }
                lambda *= config.damping_increase;
                continue;
            };
            let step = chol.solve(&(-&gradient));
            for i in 0..n {
                trial_x[i] = x[i] + step[i];
            }
            let trial_cost = evaluate(problem, &trial_x, &mut trial_r);
            match trial_cost {
                Some(c) if c < cost => {
                    let step_norm = step.norm();
                    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    std::mem::swap(&mut x, &mut trial_x);
                    std::mem::swap(&mut r, &mut trial_r);
                    cost = c;
                    trace.push(cost);
                    lambda = (lambda * config.damping_decrease).max(1e-300);
                    if step_norm <= config.step_tolerance * (x_norm + config.step_tolerance) {
                        return Ok(finish(x, cost, iteration + 1, Termination::StepTolerance, trace, gradient_norm));
                    }
                    break;
                }
                _ => {
                    lambda *= config.damping_increase;
                    if !lambda.is_finite() || lambda > 1e32 {
                        return Ok(finish(x, cost, iteration + 1, Termination::NoImprovement, trace, gradient_norm));
                    }
                }
            }
        }
    }
    Ok(finish(x, cost, config.max_iterations, Termination::MaxIterations, trace, gradient_norm))
}
