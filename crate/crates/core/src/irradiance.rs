//! Clear-sky global solar irradiance model, its fitting, amplitude and
//! time-shift corrections of pyranometer series, and the clear-sky index.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::optim::{descend_absolute_with, inverse_metric, smooth_abs, steepest_descent, DescentOptions, DescentOutcome};

/// Parameters of the clear-sky model: extraterrestrial irradiance,
/// optical depth, diffuse factor and reflectance factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsiParams {
    pub theta: [f64; 4],
}

impl GsiParams {
    pub fn new(theta1: f64, theta2: f64, theta3: f64, theta4: f64) -> Self {
        GsiParams {
            theta: [theta1, theta2, theta3, theta4],
        }
    }
}

fn seasonal(day: u32, days_in_year: u32, offset: f64) -> f64 {
    (TAU / days_in_year as f64 * (day as f64 - offset)).sin()
}

/// Seasonal approximations of the model parameters for a day of year.
pub fn theoretical_params(day_of_year: u32, days_in_year: u32) -> Result<GsiParams> {
    if days_in_year != 365 && days_in_year != 366 {
        return invalid(format!("days_in_year must be 365 or 366, got {days_in_year}"));
    }
    if day_of_year < 1 || day_of_year > days_in_year {
        return domain(format!("day of year {day_of_year} outside [1, {days_in_year}]"));
    }
    Ok(GsiParams::new(
        1160.0 + 75.0 * seasonal(day_of_year, days_in_year, 275.0),
        0.174 + 0.035 * seasonal(day_of_year, days_in_year, 27.0),
        0.095 + 0.4 * seasonal(day_of_year, days_in_year, 27.0),
        0.0,
    ))
}

fn check_elevation(elevation: f64) -> Result<f64> {
    if !(elevation > 0.0) {
        return domain(format!("solar elevation {elevation} rad is not above the horizon"));
    }
    Ok(elevation.sin())
}

/// Global solar irradiance in W/m^2 for a solar elevation in radians.
pub fn gsi_model(params: &GsiParams, elevation: f64) -> Result<f64> {
    let s = check_elevation(elevation)?;
    Ok(gsi_at(params, s))
}

fn gsi_at(p: &GsiParams, s: f64) -> f64 {
    let [t1, t2, t3, t4] = p.theta;
    let dn = t1 * (-t2 / s).exp();
    dn * s + t3 * dn / 2.0 + t4 * dn * (t3 + s)
}

/// Partial derivatives of the model output with respect to the parameters.
pub fn gsi_gradient(params: &GsiParams, elevation: f64) -> Result<[f64; 4]> {
    let s = check_elevation(elevation)?;
    Ok(gsi_grad_at(params, s))
}

fn gsi_grad_at(p: &GsiParams, s: f64) -> [f64; 4] {
    let [t1, t2, t3, t4] = p.theta;
    let e = (-t2 / s).exp();
    let dn = t1 * e;
    let shape = s + t3 / 2.0 + t4 * (t3 + s);
    [e * shape, -dn * shape / s, dn / 2.0 + t4 * dn, dn * (t3 + s)]
}

/// One clear-sky sample: solar elevation (radians) and measured irradiance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsiSample {
    pub elevation: f64,
    pub ghi: f64,
}

/// Mean absolute residual of the model over the samples and its
/// (sub)gradient.
pub fn gsi_loss(params: &GsiParams, samples: &[GsiSample]) -> Result<(f64, [f64; 4])> {
    gsi_loss_smoothed(params, samples, 0.0)
}

fn gsi_loss_smoothed(params: &GsiParams, samples: &[GsiSample], delta: f64) -> Result<(f64, [f64; 4])> {
    if samples.is_empty() {
        return invalid("no samples");
    }
    let mut loss = 0.0;
    let mut grad = [0.0; 4];
    for smp in samples {
        let s = check_elevation(smp.elevation)?;
        let (a, da) = smooth_abs(smp.ghi - gsi_at(params, s), delta);
        loss += a;
        let g = gsi_grad_at(params, s);
        for i in 0..4 {
            grad[i] -= da * g[i];
        }
    }
    let k = samples.len() as f64;
    Ok((loss / k, grad.map(|g| g / k)))
}

pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct GsiFitOptions {
    /// Which parameters are adjusted. The reflectance factor is not
    /// separately identifiable from the other three and is held fixed by
    /// default.
    pub free: [bool; 4],
    pub descent: DescentOptions,
    /// Number of smoothed surrogate stages run before the exact loss.
    pub smoothing_stages: usize,
}

impl Default for GsiFitOptions {
    fn default() -> Self {
        GsiFitOptions {
            free: [true, true, true, false],
            descent: DescentOptions {
                step: 1e-2,
                min_step: 1e-13,
                ..Default::default()
            },
            smoothing_stages: 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GsiFit {
    pub params: GsiParams,
    pub loss: f64,
    pub initial_loss: f64,
    pub outcome: DescentOutcome,
}

/// Fits the clear-sky model to a day of samples starting from the
/// seasonal approximation.
pub fn fit_day_params(samples: &[GsiSample], day_of_year: u32, days_in_year: u32) -> Result<GsiFit> {
    let init = theoretical_params(day_of_year, days_in_year)?;
    let opts = GsiFitOptions::default();
    let fit = fit_gsi(samples, init, &opts)?;
    // With theta2 - theta3/2 held, the loss is close to even in theta3 and
    // has a second basin of the opposite sign. The fit is restarted from
    // its mirror image in that basin.
    let mut mirror = fit.params;
    mirror.theta[1] -= fit.params.theta[2];
    mirror.theta[2] = -fit.params.theta[2];
    if !(mirror.theta[1] > 0.0) {
        return Ok(fit);
    }
    let alt = fit_gsi(samples, mirror, &opts)?;
    Ok(if alt.loss < fit.loss {
        GsiFit {
            initial_loss: fit.initial_loss,
            ..alt
        }
    } else {
        fit
    })
}

pub fn fit_gsi(samples: &[GsiSample], init: GsiParams, opts: &GsiFitOptions) -> Result<GsiFit> {
    if samples.is_empty() {
        return invalid("empty clear-sky series");
    }
    for smp in samples {
        check_elevation(smp.elevation)?;
    }
    let free: Vec<usize> = (0..4).filter(|&i| opts.free[i]).collect();
    let full = |x: &[f64]| {
        let mut p = init;
        for (k, &i) in free.iter().enumerate() {
            p.theta[i] = x[k];
        }
        p
    };
    let x0: Vec<f64> = free.iter().map(|&i| init.theta[i]).collect();
    let mut descent = opts.descent.clone();
    let refresh = descent.scale.is_none() && descent.preconditioner.is_none();
    if refresh {
        descent.preconditioner = gauss_newton_metric(samples, &init, &free);
        descent.scale = Some(x0.iter().map(|v| v.abs().max(1e-2)).collect());
    }
    let initial_loss = gsi_loss(&init, samples)?.0;
    let delta0 = 1e-2 * samples.iter().map(|s| s.ghi.abs()).sum::<f64>() / samples.len() as f64;
    // The metric is re-linearized per stage: the (theta2, theta3) valley
    // bends enough that the one at the start misdirects later stages.
    let outcome = descend_absolute_with(
        |x, delta| {
            let (l, g) = gsi_loss_smoothed(&full(x), samples, delta).expect("elevations validated");
            (l, free.iter().map(|&i| g[i]).collect())
        },
        |x| if refresh { gauss_newton_metric(samples, &full(x), &free) } else { None },
        &x0,
        &descent,
        delta0.max(1e-12),
        opts.smoothing_stages,
    )?;
    let params = full(&outcome.params);
    Ok(GsiFit {
        params,
        loss: outcome.loss,
        initial_loss,
        outcome,
    })
}

fn gauss_newton_metric(samples: &[GsiSample], p: &GsiParams, free: &[usize]) -> Option<Vec<f64>> {
    let n = free.len();
    let mut jtj = nalgebra::DMatrix::<f64>::zeros(n, n);
    for smp in samples {
        let g = gsi_grad_at(p, smp.elevation.sin());
        for a in 0..n {
            for b in 0..n {
                jtj[(a, b)] += g[free[a]] * g[free[b]];
            }
        }
    }
    inverse_metric(jtj)
}

/// Ratio of the daily peak of the fitted curve to the peak of the
/// reference curve.
pub fn amplitude_ratio(fitted: &[f64], reference: &[f64]) -> Result<f64> {
    let fmax = fitted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rmax = reference.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(rmax > 0.0) || !fmax.is_finite() {
        return invalid("reference curve has no positive peak");
    }
    Ok(fmax / rmax)
}

/// Yearly sinusoid for the pyranometer amplitude error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeParams {
    pub theta: [f64; 3],
}

impl AmplitudeParams {
    /// Same curve written with a non-negative amplitude and a phase in
    /// [0, 2pi).
    pub fn canonical(self) -> Self {
        let [mut a, mut ph, c] = self.theta;
        if a < 0.0 {
            a = -a;
            ph += std::f64::consts::PI;
        }
        AmplitudeParams {
            theta: [a, ph.rem_euclid(TAU), c],
        }
    }
}

pub fn amplitude_model(p: &AmplitudeParams, day_of_year: f64, days_in_year: u32) -> f64 {
    let [a, ph, c] = p.theta;
    a * (ph + TAU * day_of_year / days_in_year as f64).sin() + c
}

fn amplitude_grad(p: &AmplitudeParams, day_of_year: f64, days_in_year: u32) -> [f64; 3] {
    let [a, ph, _] = p.theta;
    let w = ph + TAU * day_of_year / days_in_year as f64;
    [w.sin(), a * w.cos(), 1.0]
}

/// One day of measurements paired with the reference clear-sky curve on
/// the same samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeDay {
    pub day_of_year: u32,
    pub measured: Vec<f64>,
    pub reference: Vec<f64>,
}

/// Mean absolute residual of `measured / C(d) - reference` over all days
/// and samples, with its exact (sub)gradient.
pub fn amplitude_loss(p: &AmplitudeParams, days: &[AmplitudeDay], days_in_year: u32) -> (f64, [f64; 3]) {
    let mut loss = 0.0;
    let mut grad = [0.0; 3];
    let mut count = 0usize;
    for day in days {
        let d = day.day_of_year as f64;
        let c = amplitude_model(p, d, days_in_year);
        let dc = amplitude_grad(p, d, days_in_year);
        for (y, i) in day.measured.iter().zip(&day.reference) {
            let r = y / c - i;
            loss += r.abs();
            let w = sign(r) * y / (c * c);
            for k in 0..3 {
                grad[k] -= w * dc[k];
            }
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    (loss / n, grad.map(|g| g / n))
}

#[derive(Debug, Clone)]
pub struct AmplitudeFit {
    pub params: AmplitudeParams,
    pub loss: f64,
}

/// Fits the amplitude sinusoid with starts drawn from U(0, 1), keeping the
/// best of `restarts` descents.
pub fn fit_amplitude_model(
    days: &[AmplitudeDay],
    days_in_year: u32,
    seed: u64,
    restarts: usize,
) -> Result<AmplitudeFit> {
    if days.is_empty() || days.iter().all(|d| d.measured.is_empty()) {
        return invalid("no amplitude samples");
    }
    for d in days {
        if d.measured.len() != d.reference.len() {
            return invalid(format!("day {} has mismatched curve lengths", d.day_of_year));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = DescentOptions {
        step: 0.05,
        min_step: 1e-14,
        ..Default::default()
    };
    let mut best: Option<AmplitudeFit> = None;
    for _ in 0..restarts.max(1) {
        let init = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let outcome = steepest_descent(
            |x| {
                let (l, g) = amplitude_loss(&AmplitudeParams { theta: [x[0], x[1], x[2]] }, days, days_in_year);
                let l = if l.is_finite() { l } else { f64::INFINITY };
                (l, g.to_vec())
            },
            &init,
            &opts,
        );
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                log::debug!("amplitude restart failed: {e}");
                continue;
            }
        };
        let fit = AmplitudeFit {
            params: AmplitudeParams {
                theta: [outcome.params[0], outcome.params[1], outcome.params[2]],
            }
            .canonical(),
            loss: outcome.loss,
        };
        if best.as_ref().map_or(true, |b| fit.loss < b.loss) {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| Error::Numerical {
        iteration: 0,
        message: "every amplitude restart failed".into(),
    })
}

/// Fits the amplitude sinusoid directly to per-day ratios.
pub fn fit_amplitude_from_sigmas(
    sigmas: &[(u32, f64)],
    days_in_year: u32,
    seed: u64,
    restarts: usize,
) -> Result<AmplitudeFit> {
    let days: Vec<AmplitudeDay> = sigmas
        .iter()
        .map(|&(d, s)| AmplitudeDay {
            day_of_year: d,
            measured: vec![s],
            reference: vec![1.0],
        })
        .collect();
    fit_amplitude_model(&days, days_in_year, seed, restarts)
}

/// Irradiance time series with the solar elevation at each sample.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IrradianceSeries {
    pub timestamps: Vec<f64>,
    pub ghi: Vec<f64>,
    pub elevation: Vec<f64>,
}

impl IrradianceSeries {
    pub fn len(&self) -> usize {
        self.ghi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ghi.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.len() != self.ghi.len() || self.elevation.len() != self.ghi.len() {
            return invalid("series columns differ in length");
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("timestamps are not strictly increasing");
        }
        Ok(())
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        IrradianceSeries {
            timestamps: self.timestamps[start..end].to_vec(),
            ghi: self.ghi[start..end].to_vec(),
            elevation: self.elevation[start..end].to_vec(),
        }
    }
}

/// Lag `l` maximizing sum_t a[t] * b[t + l], over |l| < len.
pub fn cross_correlation_lag(a: &[f64], b: &[f64]) -> Result<i64> {
    let n = a.len();
    if n == 0 || b.len() != n {
        return invalid("cross-correlation needs two equal non-empty series");
    }
    let size = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fa.resize(size, Complex::new(0.0, 0.0));
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fb.resize(size, Complex::new(0.0, 0.0));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    let mut prod: Vec<Complex<f64>> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    inv.process(&mut prod);
    let mut best = (0i64, f64::NEG_INFINITY);
    for lag in -(n as i64 - 1)..=(n as i64 - 1) {
        let idx = lag.rem_euclid(size as i64) as usize;
        let v = prod[idx].re;
        if v > best.1 + 1e-9 * best.1.abs() || (best.1 == f64::NEG_INFINITY) {
            best = (lag, v);
        } else if (v - best.1).abs() <= 1e-9 * best.1.abs() && lag.abs() < best.0.abs() {
            best = (lag, v);
        }
    }
    Ok(best.0)
}

/// Realigns a measured series to the theoretical curve on the same
/// sampling grid. Returns the corrected series, shorter by |shift|, and the
/// shift in samples (positive when the measurement lags).
pub fn correct_shift(measured: &IrradianceSeries, theoretical: &IrradianceSeries) -> Result<(IrradianceSeries, i64)> {
    measured.validate()?;
    theoretical.validate()?;
    if measured.len() != theoretical.len() {
        return invalid("measured and theoretical series have different lengths");
    }
    let n = measured.len();
    let lag = cross_correlation_lag(&theoretical.ghi, &measured.ghi)?;
    if lag.unsigned_abs() as usize * 2 >= n {
        return Err(Error::AlignmentFailure { lag, len: n });
    }
    let k = lag.unsigned_abs() as usize;
    let ratio = |r: f64, i: f64| if i.abs() > 1e-9 { r / i } else { 0.0 };
    let (ghi, range) = if lag >= 0 {
        let g = (0..n - k)
            .map(|t| ratio(measured.ghi[t + k], theoretical.ghi[t]) * theoretical.ghi[t + k])
            .collect::<Vec<_>>();
        (g, k..n)
    } else {
        let g = (0..n - k)
            .map(|t| ratio(measured.ghi[t], theoretical.ghi[t + k]) * theoretical.ghi[t])
            .collect::<Vec<_>>();
        (g, 0..n - k)
    };
    let corrected = IrradianceSeries {
        timestamps: theoretical.timestamps[range.clone()].to_vec(),
        ghi,
        elevation: theoretical.elevation[range].to_vec(),
    };
    Ok((corrected, lag))
}

/// Groups per-day shifts into `levels` constant levels with 1-D k-means
/// and returns the level assigned to each day.
pub fn piecewise_shift_levels(shifts: &[(u32, f64)], levels: usize) -> Result<Vec<(u32, f64)>> {
    if shifts.is_empty() || levels == 0 {
        return invalid("need at least one shift and one level");
    }
    let mut values: Vec<f64> = shifts.iter().map(|s| s.1).collect();
    values.sort_by(f64::total_cmp);
    let k = levels.min(values.len());
    let mut centers: Vec<f64> = (0..k)
        .map(|i| values[((2 * i + 1) * values.len()) / (2 * k)])
        .collect();
    for _ in 0..100 {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for &v in &values {
            let c = nearest(&centers, v);
            sums[c] += v;
            counts[c] += 1;
        }
        let next: Vec<f64> = (0..k)
            .map(|c| if counts[c] > 0 { sums[c] / counts[c] as f64 } else { centers[c] })
            .collect();
        if next == centers {
            break;
        }
        centers = next;
    }
    Ok(shifts.iter().map(|&(d, v)| (d, centers[nearest(&centers, v)])).collect())
}

fn nearest(centers: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (i, c) in centers.iter().enumerate() {
        if (c - v).abs() < (centers[best] - v).abs() {
            best = i;
        }
    }
    best
}

/// Minimum solar elevation, in radians, at which the clear-sky index is
/// defined.
pub const CSI_MIN_ELEVATION: f64 = 15.0 * std::f64::consts::PI / 180.0;

/// Clear-sky index samples (timestamp, ratio) where the sun is above 15
/// degrees.
pub fn clear_sky_index(measured: &IrradianceSeries, clear_sky: &IrradianceSeries) -> Result<Vec<(f64, f64)>> {
    measured.validate()?;
    clear_sky.validate()?;
    if measured.timestamps != clear_sky.timestamps {
        return invalid("clear-sky index needs series on the same timestamps");
    }
    let out = (0..measured.len())
        .filter(|&t| clear_sky.elevation[t] > CSI_MIN_ELEVATION && clear_sky.ghi[t] > 0.0)
        .map(|t| (measured.timestamps[t], measured.ghi[t] / clear_sky.ghi[t]))
        .collect();
    Ok(out)
}

/// Theoretical clear-sky series for the given timestamps and elevations.
/// Samples at or below the horizon get zero irradiance.
pub fn clear_sky_series(params: &GsiParams, timestamps: &[f64], elevation: &[f64]) -> IrradianceSeries {
    let ghi = elevation
        .iter()
        .map(|&e| if e > 0.0 { gsi_at(params, e.sin()) } else { 0.0 })
        .collect();
    IrradianceSeries {
        timestamps: timestamps.to_vec(),
        ghi,
        elevation: elevation.to_vec(),
    }
}
