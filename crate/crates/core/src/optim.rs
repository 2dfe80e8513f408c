//! Steepest descent with per-parameter scaling and step backtracking.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DescentOptions {
    /// Initial step length in scaled coordinates.
    pub step: f64,
    pub max_iters: usize,
    /// Stop once the gradient norm falls below this.
    pub grad_tol: f64,
    /// Stop once a rejected step shrinks the step length below this.
    /// Equal to `step` reproduces the plain rule of stopping at the first
    /// loss increase.
    pub min_step: f64,
    /// Factor applied to the step after an accepted iterate.
    pub grow: f64,
    /// Per-parameter scale. Steps are taken in the coordinates
    /// `x[i] / scale[i]`.
    pub scale: Option<Vec<f64>>,
    /// Symmetric positive definite metric, row-major. When set, the search
    /// direction is `-P g` and `scale` is ignored.
    pub preconditioner: Option<Vec<f64>>,
    pub record_trace: bool,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions {
            step: 1e-2,
            max_iters: 100_000,
            grad_tol: 1e-8,
            min_step: 1e-12,
            grow: 1.2,
            scale: None,
            preconditioner: None,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    NoDecrease,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct DescentOutcome {
    pub params: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// Loss of every accepted iterate, starting with the initial point.
    pub trace: Vec<f64>,
}

/// Minimizes `objective`, which returns the loss and its gradient.
///
/// Only iterates that lower the loss are accepted, so the returned loss
/// never exceeds the initial one.
pub fn steepest_descent<F>(mut objective: F, init: &[f64], opts: &DescentOptions) -> Result<DescentOutcome>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = init.len();
    let scale = match &opts.scale {
        Some(s) if s.len() == n => s.clone(),
        Some(s) => {
            return Err(Error::InvalidInput(format!(
                "scale has {} entries for {} parameters",
                s.len(),
                n
            )))
        }
        None => vec![1.0; n],
    };
    if let Some(p) = &opts.preconditioner {
        if p.len() != n * n {
            return Err(Error::InvalidInput(format!("preconditioner has {} entries for {} parameters", p.len(), n)));
        }
    }
    let direction = |grad: &[f64]| -> (Vec<f64>, f64) {
        match &opts.preconditioner {
            Some(p) => {
                let d: Vec<f64> = (0..n).map(|i| (0..n).map(|j| p[i * n + j] * grad[j]).sum()).collect();
                let len = d.iter().zip(grad).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt();
                (d, len)
            }
            None => {
                let d: Vec<f64> = grad.iter().zip(&scale).map(|(g, s)| g * s * s).collect();
                let len = grad.iter().zip(&scale).map(|(g, s)| (g * s).powi(2)).sum::<f64>().sqrt();
                (d, len)
            }
        }
    };
    let mut params = init.to_vec();
    let (mut loss, mut grad) = objective(&params);
    check_finite(0, loss, &grad)?;
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(loss);
    }
    let mut step = opts.step;
    let mut iterations = 0;
    let stop = loop {
        let gnorm = norm(&grad);
        if gnorm < opts.grad_tol {
            break StopReason::GradientTolerance;
        }
        if iterations >= opts.max_iters {
            break StopReason::MaxIterations;
        }
        iterations += 1;
        let (dir, len) = direction(&grad);
        if len == 0.0 {
            break StopReason::GradientTolerance;
        }
        let candidate: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p - step * d / len).collect();
        let (c_loss, c_grad) = objective(&candidate);
        if c_loss.is_nan() {
            return Err(Error::Numerical {
                iteration: iterations,
                message: format!("loss is NaN at {candidate:?}"),
            });
        }
        if c_loss < loss {
            check_finite(iterations, c_loss, &c_grad)?;
            params = candidate;
            loss = c_loss;
            grad = c_grad;
            step *= opts.grow;
            if opts.record_trace {
                trace.push(loss);
            }
        } else {
            step *= 0.5;
            if step < opts.min_step {
                break StopReason::NoDecrease;
            }
        }
    };
    Ok(DescentOutcome {
        params,
        loss,
        iterations,
        stop,
        trace,
    })
}

fn check_finite(iteration: usize, loss: f64, grad: &[f64]) -> Result<()> {
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical {
            iteration,
            message: format!("non-finite loss {loss} or gradient {grad:?}"),
        });
    }
    Ok(())
}

/// Smoothed absolute value `sqrt(r^2 + d^2) - d` and its derivative.
/// With `delta == 0` this is `|r|` and its sign.
pub fn smooth_abs(r: f64, delta: f64) -> (f64, f64) {
    if delta == 0.0 {
        let s = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        return (r.abs(), s);
    }
    let q = (r * r + delta * delta).sqrt();
    (q - delta, r / q)
}

/// Minimizes a mean-absolute-residual objective by steepest descent on a
/// sequence of smoothed surrogates with shrinking `delta`, finishing on the
/// exact loss. `objective(x, delta)` returns loss and gradient.
pub fn descend_absolute<F>(objective: F, init: &[f64], opts: &DescentOptions, delta0: f64, stages: usize) -> Result<DescentOutcome>
where
    F: FnMut(&[f64], f64) -> (f64, Vec<f64>),
{
    descend_absolute_with(objective, |_| None, init, opts, delta0, stages)
}

/// As [`descend_absolute`], with `metric(x)` consulted at the start of
/// every stage. A returned preconditioner replaces the one in `opts`.
pub fn descend_absolute_with<F, M>(
    mut objective: F,
    mut metric: M,
    init: &[f64],
    opts: &DescentOptions,
    delta0: f64,
    stages: usize,
) -> Result<DescentOutcome>
where
    F: FnMut(&[f64], f64) -> (f64, Vec<f64>),
    M: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let (init_loss, _) = objective(init, 0.0);
    let mut x = init.to_vec();
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut per_stage = DescentOptions {
        max_iters: opts.max_iters / (stages + 1).max(1),
        ..opts.clone()
    };
    for k in 0..stages {
        if let Some(p) = metric(&x) {
            per_stage.preconditioner = Some(p);
        }
        let delta = delta0 * 10f64.powi(-(k as i32));
        let out = steepest_descent(|p| objective(p, delta), &x, &per_stage)?;
        iterations += out.iterations;
        x = out.params;
    }
    if let Some(p) = metric(&x) {
        per_stage.preconditioner = Some(p);
    }
    let mut last = steepest_descent(|p| objective(p, 0.0), &x, &per_stage)?;
    last.iterations += iterations;
    if last.loss > init_loss {
        let (l, _) = objective(init, 0.0);
        last.params = init.to_vec();
        last.loss = l;
    }
    trace.append(&mut last.trace);
    last.trace = trace;
    Ok(last)
}

/// Trace-normalized inverse of a Gauss-Newton matrix `J^T J`, row-major,
/// for use as a descent preconditioner.
pub fn inverse_metric(mut jtj: nalgebra::DMatrix<f64>) -> Option<Vec<f64>> {
    let n = jtj.nrows();
    let ridge = 1e-12 * jtj.trace().max(1e-300);
    for a in 0..n {
        jtj[(a, a)] += ridge;
    }
    let inv = jtj.cholesky()?.inverse();
    let tr = inv.trace();
    if !(tr > 0.0) || !tr.is_finite() {
        return None;
    }
    Some((0..n * n).map(|k| inv[(k / n, k % n)] / tr).collect())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central finite-difference gradient of a scalar function.
pub fn central_gradient<F>(mut f: F, x: &[f64], rel_step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel_step * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(p: &[f64]) -> (f64, Vec<f64>) {
        let (x, y) = (p[0], p[1]);
        let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
        let gx = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
        let gy = 200.0 * (y - x * x);
        (f, vec![gx, gy])
    }

    #[test]
    fn rosenbrock_trace_is_monotone() {
        let opts = DescentOptions {
            step: 1e-3,
            record_trace: true,
            max_iters: 20_000,
            ..Default::default()
        };
        let out = steepest_descent(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        assert!(out.trace.windows(2).all(|w| w[1] < w[0]));
        assert!(out.loss < rosenbrock(&[-1.2, 1.0]).0);
        assert!(out.loss < 1e-3, "{}", out.loss);
    }

    #[test]
    fn quadratic_converges_to_minimum() {
        let f = |p: &[f64]| {
            let v = (p[0] - 3.0).powi(2) + 4.0 * (p[1] + 1.0).powi(2);
            (v, vec![2.0 * (p[0] - 3.0), 8.0 * (p[1] + 1.0)])
        };
        let out = steepest_descent(f, &[0.0, 0.0], &DescentOptions::default()).unwrap();
        assert!((out.params[0] - 3.0).abs() < 1e-6);
        assert!((out.params[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn fixed_step_stops_at_first_increase() {
        let f = |p: &[f64]| (p[0] * p[0], vec![2.0 * p[0]]);
        let opts = DescentOptions {
            step: 0.3,
            min_step: 0.3,
            grow: 1.0,
            ..Default::default()
        };
        let out = steepest_descent(f, &[1.0], &opts).unwrap();
        assert_eq!(out.stop, StopReason::NoDecrease);
        assert!((out.params[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let f = |p: &[f64]| (p[0] * p[0], vec![2.0 * p[0]]);
        let out = steepest_descent(f, &[0.0], &DescentOptions::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.stop, StopReason::GradientTolerance);
    }

    #[test]
    fn nan_loss_aborts() {
        let f = |p: &[f64]| {
            if p[0] < 0.5 {
                (f64::NAN, vec![0.0])
            } else {
                (p[0], vec![1.0])
            }
        };
        let opts = DescentOptions {
            step: 1.0,
            ..Default::default()
        };
        assert!(matches!(steepest_descent(f, &[1.0], &opts), Err(Error::Numerical { .. })));
    }
}
