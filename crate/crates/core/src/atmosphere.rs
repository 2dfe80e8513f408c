//! Atmospheric background of infrared frames: a scattering term growing
//! toward the horizon and a direct-radiation term around the sun, fitted
//! per frame and predicted from weather and sun position.

use std::path::Path;

use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optim::{descend_absolute, inverse_metric, smooth_abs, DescentOptions, DescentOutcome};
use crate::poly::{fit_ridge, loo_cv_order, CvSelection, DayGroup, RidgeModel};

/// Scattering amplitude and scale, direct amplitude and scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtmoParams {
    pub sigma1: f64,
    pub lambda1: f64,
    pub sigma2: f64,
    pub lambda2: f64,
}

impl AtmoParams {
    pub fn to_array(&self) -> [f64; 4] {
        [self.sigma1, self.lambda1, self.sigma2, self.lambda2]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        AtmoParams {
            sigma1: v[0],
            lambda1: v[1],
            sigma2: v[2],
            lambda2: v[3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0) || !(self.lambda2 > 0.0) {
            return invalid(format!("scale parameters must be positive: {self:?}"));
        }
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return invalid(format!("non-finite parameters: {self:?}"));
        }
        Ok(())
    }
}

/// Scattering term at row `y` for the sun at row `y0`.
pub fn scatter_at(p: &AtmoParams, y: f64, y0: f64) -> f64 {
    p.sigma1 * ((y - y0) / p.lambda1).exp()
}

/// Direct-radiation term at squared distance `r2` from the sun.
pub fn direct_at(p: &AtmoParams, r2: f64) -> f64 {
    let l2 = p.lambda2 * p.lambda2;
    p.sigma2 * l2 / (r2 + l2).powf(1.5)
}

fn grad_at(p: &AtmoParams, y: f64, y0: f64, r2: f64) -> [f64; 4] {
    let e = ((y - y0) / p.lambda1).exp();
    let l2 = p.lambda2 * p.lambda2;
    let q = r2 + l2;
    [
        e,
        -p.sigma1 * e * (y - y0) / (p.lambda1 * p.lambda1),
        l2 / q.powf(1.5),
        p.sigma2 * p.lambda2 * (2.0 * r2 - l2) / q.powf(2.5),
    ]
}

fn r2(c: usize, r: usize, sun: (f64, f64)) -> f64 {
    let dx = c as f64 - sun.0;
    let dy = r as f64 - sun.1;
    dx * dx + dy * dy
}

/// Sun position is (column, row).
pub fn scatter_model(dim: (usize, usize), sun: (f64, f64), p: &AtmoParams) -> Array2<f64> {
    Array2::from_shape_fn(dim, |(r, _)| scatter_at(p, r as f64, sun.1))
}

pub fn direct_model(dim: (usize, usize), sun: (f64, f64), p: &AtmoParams) -> Array2<f64> {
    Array2::from_shape_fn(dim, |(r, c)| direct_at(p, r2(c, r, sun)))
}

pub fn atmospheric_model(dim: (usize, usize), sun: (f64, f64), p: &AtmoParams) -> Array2<f64> {
    Array2::from_shape_fn(dim, |(r, c)| scatter_at(p, r as f64, sun.1) + direct_at(p, r2(c, r, sun)))
}

/// Mean absolute residual of the combined model and its gradient.
pub fn atmo_loss(frame: &Array2<f64>, sun: (f64, f64), p: &AtmoParams) -> (f64, [f64; 4]) {
    atmo_loss_smoothed(frame, sun, p, 0.0)
}

fn atmo_loss_smoothed(frame: &Array2<f64>, sun: (f64, f64), p: &AtmoParams, delta: f64) -> (f64, [f64; 4]) {
    let mut loss = 0.0;
    let mut grad = [0.0; 4];
    for ((r, c), &v) in frame.indexed_iter() {
        let d2 = r2(c, r, sun);
        let model = scatter_at(p, r as f64, sun.1) + direct_at(p, d2);
        let (a, da) = smooth_abs(v - model, delta);
        loss += a;
        let g = grad_at(p, r as f64, sun.1, d2);
        for k in 0..4 {
            grad[k] -= da * g[k];
        }
    }
    let n = frame.len() as f64;
    (loss / n, grad.map(|g| g / n))
}

#[derive(Debug, Clone)]
pub struct AtmoFit {
    pub params: AtmoParams,
    pub loss: f64,
    pub initial_loss: f64,
    pub outcome: DescentOutcome,
}

#[derive(Debug, Clone)]
pub struct AtmoFitOptions {
    pub descent: DescentOptions,
    pub smoothing_stages: usize,
}

impl Default for AtmoFitOptions {
    fn default() -> Self {
        AtmoFitOptions {
            descent: DescentOptions {
                step: 1e-2,
                min_step: 1e-13,
                max_iters: 40_000,
                ..Default::default()
            },
            smoothing_stages: 5,
        }
    }
}

/// Fits the four parameters to one frame by steepest descent on the mean
/// absolute residual.
pub fn fit_frame(frame: &Array2<f64>, sun: (f64, f64), init: &AtmoParams, opts: &AtmoFitOptions) -> Result<AtmoFit> {
    init.validate()?;
    if frame.is_empty() {
        return invalid("empty frame");
    }
    let (initial_loss, _) = atmo_loss(frame, sun, init);
    let mut descent = opts.descent.clone();
    if descent.preconditioner.is_none() && descent.scale.is_none() {
        let mut jtj = DMatrix::<f64>::zeros(4, 4);
        for (r, c) in frame.indexed_iter().map(|(i, _)| i) {
            let g = grad_at(init, r as f64, sun.1, r2(c, r, sun));
            for a in 0..4 {
                for b in 0..4 {
                    jtj[(a, b)] += g[a] * g[b];
                }
            }
        }
        descent.preconditioner = inverse_metric(jtj);
        if descent.preconditioner.is_none() {
            descent.scale = Some(init.to_array().iter().map(|v| v.abs().max(1e-3)).collect());
        }
    }
    let mean_abs = frame.iter().map(|v| v.abs()).sum::<f64>() / frame.len() as f64;
    let outcome = descend_absolute(
        |x, delta| {
            let p = AtmoParams::from_slice(x);
            if !(p.lambda1 > 0.0) || !(p.lambda2 > 0.0) {
                return (f64::INFINITY, vec![0.0; 4]);
            }
            let (l, g) = atmo_loss_smoothed(frame, sun, &p, delta);
            (l, g.to_vec())
        },
        &init.to_array(),
        &descent,
        (1e-2 * mean_abs).max(1e-12),
        opts.smoothing_stages,
    )?;
    Ok(AtmoFit {
        params: AtmoParams::from_slice(&outcome.params),
        loss: outcome.loss,
        initial_loss,
        outcome,
    })
}

/// Sample means of the direct-radiation parameters.
pub fn constant_params(samples: &[AtmoParams]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return invalid("no fitted frames");
    }
    let n = samples.len() as f64;
    Ok((
        samples.iter().map(|p| p.sigma2).sum::<f64>() / n,
        samples.iter().map(|p| p.lambda2).sum::<f64>() / n,
    ))
}

/// Regressor inputs for a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtmoFeatures {
    pub air_temp: f64,
    pub dew_point: f64,
    pub elevation: f64,
    pub azimuth: f64,
}

impl AtmoFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.air_temp, self.dew_point, self.elevation, self.azimuth]
    }
}

pub const ATMO_MODEL_FORMAT: &str = "skyflow.atmosphere-model";
pub const ATMO_MODEL_VERSION: u32 = 1;

/// Polynomial regressors for the scattering parameters and constants for
/// the direct-radiation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtmoModelSet {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    pub sigma1: RidgeModel,
    pub lambda1: RidgeModel,
    pub sigma2: f64,
    pub lambda2: f64,
    pub selection: Vec<CvSelection>,
}

impl AtmoModelSet {
    pub fn predict(&self, f: &AtmoFeatures) -> AtmoParams {
        let x = f.to_vec();
        AtmoParams {
            sigma1: self.sigma1.predict(&x),
            lambda1: self.lambda1.predict(&x).max(1e-6),
            sigma2: self.sigma2,
            lambda2: self.lambda2,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: AtmoModelSet = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.format != ATMO_MODEL_FORMAT || m.version != ATMO_MODEL_VERSION {
            return Err(Error::Format(format!("{}: expected {ATMO_MODEL_FORMAT} v{ATMO_MODEL_VERSION}", path.display())));
        }
        Ok(m)
    }
}

/// One fitted clear-sky frame with its day label and regressor inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedFrame {
    pub day: u32,
    pub features: AtmoFeatures,
    pub params: AtmoParams,
}

/// Selects order and penalty per scattering parameter by leave-one-day-out
/// validation, then refits on all days.
pub fn fit_model_set(frames: &[FittedFrame], orders: &[usize], lambdas: &[f64]) -> Result<AtmoModelSet> {
    let mut days: Vec<u32> = frames.iter().map(|f| f.day).collect();
    days.sort_unstable();
    days.dedup();
    let groups = |pick: fn(&AtmoParams) -> f64| -> Vec<DayGroup> {
        days.iter()
            .map(|&d| {
                let sel: Vec<&FittedFrame> = frames.iter().filter(|f| f.day == d).collect();
                DayGroup {
                    features: sel.iter().map(|f| f.features.to_vec()).collect(),
                    targets: sel.iter().map(|f| pick(&f.params)).collect(),
                }
            })
            .collect()
    };
    let x: Vec<Vec<f64>> = frames.iter().map(|f| f.features.to_vec()).collect();
    let mut selection = Vec::new();
    let mut fit_one = |pick: fn(&AtmoParams) -> f64| -> Result<RidgeModel> {
        let sel = loo_cv_order(&groups(pick), orders, lambdas)?;
        let y: Vec<f64> = frames.iter().map(|f| pick(&f.params)).collect();
        let model = fit_ridge(&x, &y, sel.order, sel.lambda)?;
        selection.push(sel);
        Ok(model)
    };
    let sigma1 = fit_one(|p| p.sigma1)?;
    let lambda1 = fit_one(|p| p.lambda1)?;
    let all: Vec<AtmoParams> = frames.iter().map(|f| f.params).collect();
    let (sigma2, lambda2) = constant_params(&all)?;
    Ok(AtmoModelSet {
        format: ATMO_MODEL_FORMAT.into(),
        version: ATMO_MODEL_VERSION,
        feature_names: ["air_temp", "dew_point", "elevation", "azimuth"].map(String::from).to_vec(),
        sigma1,
        lambda1,
        sigma2,
        lambda2,
        selection,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetrendOptions {
    /// Frames whose maximum is below this are treated as sun-occluded.
    pub occlusion_threshold: f64,
    /// Radius of the sun disc replaced after subtraction.
    pub sun_radius: f64,
}

impl Default for DetrendOptions {
    fn default() -> Self {
        DetrendOptions {
            occlusion_threshold: 0.0,
            sun_radius: 3.0,
        }
    }
}

/// Subtracts the predicted background and fills the sun disc from the
/// nearest pixel outside it.
///
/// When the frame maximum is below the occlusion threshold (or the sun is
/// outside the frame) only the scattering term is removed. Nearest-pixel
/// ties go to the smallest row, then the smallest column.
pub fn detrend_frame(frame: &Array2<f64>, sun: (f64, f64), predicted: &AtmoParams, opts: &DetrendOptions) -> Array2<f64> {
    let (rows, cols) = frame.dim();
    let inside = sun.0 >= 0.0 && sun.1 >= 0.0 && sun.0 <= (cols - 1) as f64 && sun.1 <= (rows - 1) as f64;
    let max = frame.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let occluded = max < opts.occlusion_threshold;
    if !inside {
        log::info!("sun at {sun:?} is outside the frame, removing the scattering term only");
    }
    let with_direct = inside && !occluded;
    let mut out = Array2::from_shape_fn(frame.dim(), |(r, c)| {
        let mut bg = scatter_at(predicted, r as f64, sun.1);
        if with_direct {
            bg += direct_at(predicted, r2(c, r, sun));
        }
        frame[(r, c)] - bg
    });
    if inside {
        fill_disc(&mut out, sun, opts.sun_radius);
    }
    out
}

fn fill_disc(img: &mut Array2<f64>, sun: (f64, f64), radius: f64) {
    let (rows, cols) = img.dim();
    let rr = radius * radius;
    let in_disc = |r: usize, c: usize| r2(c, r, sun) <= rr;
    let reach = (2.0 * radius).ceil() as isize + 2;
    let r_lo = (sun.1 - radius).floor().max(0.0) as usize;
    let r_hi = ((sun.1 + radius).ceil() as usize).min(rows - 1);
    let c_lo = (sun.0 - radius).floor().max(0.0) as usize;
    let c_hi = ((sun.0 + radius).ceil() as usize).min(cols - 1);
    let src = img.clone();
    for r in r_lo..=r_hi {
        for c in c_lo..=c_hi {
            if !in_disc(r, c) {
                continue;
            }
            let mut best: Option<(isize, usize, usize)> = None;
            for qr in (r as isize - reach).max(0)..=(r as isize + reach).min(rows as isize - 1) {
                for qc in (c as isize - reach).max(0)..=(c as isize + reach).min(cols as isize - 1) {
                    let (qr, qc) = (qr as usize, qc as usize);
                    if in_disc(qr, qc) {
                        continue;
                    }
                    let d = (qr as isize - r as isize).pow(2) + (qc as isize - c as isize).pow(2);
                    if best.map_or(true, |b| (d, qr, qc) < b) {
                        best = Some((d, qr, qc));
                    }
                }
            }
            if let Some((_, qr, qc)) = best {
                img[(r, c)] = src[(qr, qc)];
            }
        }
    }
}
