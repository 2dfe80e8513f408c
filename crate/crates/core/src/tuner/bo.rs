use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gp::{expected_improvement, GpState, Kernel};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoOptions {
    /// Total objective evaluations.
    pub budget: usize,
    /// Latin-hypercube design size; 0 picks max(5, 2d + 1).
    pub initial: usize,
    pub xi: f64,
    pub kernel: Kernel,
    /// Length-scales tried for each model fit, in unit-cube coordinates.
    pub ell_grid: Vec<f64>,
    pub noise: f64,
    pub restarts: usize,
    pub ascent_iters: usize,
    pub seed: u64,
}

impl Default for BoOptions {
    fn default() -> Self {
        BoOptions {
            budget: 30,
            initial: 0,
            xi: 0.0,
            kernel: Kernel::Matern52,
            ell_grid: (0..12).map(|i| 0.03 * 1.4f64.powi(i)).collect(),
            noise: 1e-6,
            restarts: 12,
            ascent_iters: 60,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoResult {
    pub best_x: Vec<f64>,
    pub best_value: f64,
    /// Incumbent value after each evaluation.
    pub trace: Vec<f64>,
    /// Every evaluated point and its raw value (NaN kept).
    pub evaluations: Vec<(Vec<f64>, f64)>,
    /// Length-scale selected in the last model fit.
    pub ell: f64,
}

/// One stratified sample per interval and dimension, strata shuffled
/// independently.
pub fn latin_hypercube(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in pts.iter_mut().zip(strata) {
            p[d] = (s as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    pts
}

fn to_bounds(u: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    u.iter().zip(bounds).map(|(t, (lo, hi))| lo + t * (hi - lo)).collect()
}

/// Standardized targets with non-finite values replaced by the worst
/// finite one.
fn training_targets(ys: &[f64]) -> Vec<f64> {
    let finite: Vec<f64> = ys.iter().cloned().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return vec![0.0; ys.len()];
    }
    let worst = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    let sd = (finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    ys.iter()
        .map(|&v| (if v.is_finite() { v } else { worst } - mean) / sd)
        .collect()
}

/// Fits every grid length-scale and keeps the one with the highest
/// evidence.
pub fn fit_by_evidence(x: &[Vec<f64>], y: &[f64], opts: &BoOptions) -> Result<GpState> {
    let mut best: Option<(f64, GpState)> = None;
    for &ell in &opts.ell_grid {
        let Ok(gp) = GpState::fit(x.to_vec(), y.to_vec(), opts.kernel, ell, opts.noise) else {
            continue;
        };
        let e = gp.log_evidence();
        if e.is_finite() && best.as_ref().map_or(true, |(b, _)| e > *b) {
            best = Some((e, gp));
        }
    }
    match best {
        Some((_, gp)) => Ok(gp),
        None => GpState::fit(x.to_vec(), y.to_vec(), opts.kernel, opts.ell_grid[0], opts.noise),
    }
}

/// Projected ascent of `f` on the unit cube with forward-difference
/// gradients and backtracking halving of the step.
fn ascend(f: &impl Fn(&[f64]) -> f64, start: Vec<f64>, iters: usize) -> (Vec<f64>, f64) {
    let eps = 1e-4;
    let mut x = start;
    let mut fx = f(&x);
    let mut eta = 0.1;
    for _ in 0..iters {
        let mut g = vec![0.0; x.len()];
        for d in 0..x.len() {
            let mut xp = x.clone();
            // Step inward at the upper face.
            let h = if x[d] + eps <= 1.0 { eps } else { -eps };
            xp[d] += h;
            g[d] = (f(&xp) - fx) / h;
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            break;
        }
        let mut moved = false;
        let mut step = eta;
        while step > 1e-6 {
            let cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| (xi + step * gi / norm).clamp(0.0, 1.0)).collect();
            let fc = f(&cand);
            if fc > fx {
                x = cand;
                fx = fc;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
        eta = (step * 2.0).min(0.5);
    }
    (x, fx)
}

/// Bayesian minimization of a black-box objective over a box.
pub fn bo_minimize<F>(mut objective: F, bounds: &[(f64, f64)], opts: &BoOptions) -> Result<BoResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = bounds.len();
    if dim == 0 || bounds.iter().any(|(lo, hi)| !(hi > lo)) {
        return invalid("bounds must be non-empty with lo < hi");
    }
    let initial = if opts.initial == 0 { (2 * dim + 1).max(5) } else { opts.initial };
    if opts.budget < initial {
        return invalid(format!("budget {} is below the initial design size {initial}", opts.budget));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut trace = Vec::new();
    let mut best: Option<usize> = None;
    let mut ell = f64::NAN;

    let mut record = |u: Vec<f64>, xs: &mut Vec<Vec<f64>>, ys: &mut Vec<f64>, best: &mut Option<usize>| {
        let v = objective(&to_bounds(&u, bounds));
        xs.push(u);
        ys.push(v);
        if v.is_finite() && best.map_or(true, |b| v < ys[b]) {
            *best = Some(ys.len() - 1);
        }
        trace.push(best.map_or(f64::NAN, |b| ys[b]));
    };

    for u in latin_hypercube(initial, dim, &mut rng) {
        record(u, &mut xs, &mut ys, &mut best);
    }
    while xs.len() < opts.budget {
        let y = training_targets(&ys);
        let gp = fit_by_evidence(&xs, &y, opts)?;
        ell = gp.ell;
        let fbest = best.map_or(0.0, |b| y[b]);
        let acq = |u: &[f64]| expected_improvement(&gp, u, fbest, opts.xi);
        let mut starts: Vec<Vec<f64>> = (0..opts.restarts).map(|_| (0..dim).map(|_| rng.gen()).collect()).collect();
        // Local starts around the three best points.
        let mut order: Vec<usize> = (0..xs.len()).filter(|&i| ys[i].is_finite()).collect();
        order.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]));
        for &i in order.iter().take(3) {
            for _ in 0..2 {
                starts.push(xs[i].iter().map(|v| (v + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0)).collect());
            }
        }
        let mut cand: Option<(Vec<f64>, f64)> = None;
        for s in starts {
            let (u, a) = ascend(&acq, s, opts.ascent_iters);
            if cand.as_ref().map_or(true, |(_, b)| a > *b) {
                cand = Some((u, a));
            }
        }
        let (mut u, a) = cand.expect("at least one restart");
        let seen = xs
            .iter()
            .any(|x| x.iter().zip(&u).all(|(p, q)| (p - q).abs() < 1e-9));
        if !(a > 0.0) || seen {
            u = (0..dim).map(|_| rng.gen()).collect();
        }
        record(u, &mut xs, &mut ys, &mut best);
    }
    let b = best.unwrap_or(0);
    Ok(BoResult {
        best_x: to_bounds(&xs[b], bounds),
        best_value: ys[b],
        trace,
        evaluations: xs.iter().map(|u| to_bounds(u, bounds)).zip(ys).collect(),
        ell,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypercube_strata_are_filled() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = latin_hypercube(7, 3, &mut rng);
        for d in 0..3 {
            let mut bins: Vec<usize> = pts.iter().map(|p| (p[d] * 7.0) as usize).collect();
            bins.sort();
            assert_eq!(bins, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn budget_equal_to_design_returns_best_design_point() {
        let opts = BoOptions {
            budget: 5,
            initial: 5,
            ..Default::default()
        };
        let r = bo_minimize(|x| (x[0] - 0.3).powi(2), &[(0.0, 1.0)], &opts).unwrap();
        let want = r.evaluations.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_value, want);
        assert_eq!(r.evaluations.len(), 5);
    }

    #[test]
    fn nan_objective_is_penalized() {
        let opts = BoOptions {
            budget: 10,
            ..Default::default()
        };
        let r = bo_minimize(|x| if x[0] > 0.5 { f64::NAN } else { x[0] }, &[(0.0, 1.0)], &opts).unwrap();
        assert!(r.best_value.is_finite() && r.best_value <= 0.5);
    }

    #[test]
    fn budget_below_design_is_rejected() {
        let opts = BoOptions {
            budget: 3,
            ..Default::default()
        };
        assert!(bo_minimize(|x| x[0], &[(0.0, 1.0)], &opts).is_err());
    }
}
