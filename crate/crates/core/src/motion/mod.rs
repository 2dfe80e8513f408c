//! Dense cloud-motion estimation between consecutive frames.
//!
//! Every estimator implements [`FlowEstimator`] and is built from
//! [`FlowParams`] by a [`FlowMethod`] registered under a short name in a
//! [`Registry`]. Displacements are in pixels per frame, `u` along columns
//! and `v` along rows, from the previous frame to the current one.

mod farneback;
mod hs;
mod lk;
mod piv;

pub use farneback::{farneback, farneback_with_params, FarnebackParams, MotionModel};
pub use hs::{horn_schunck, HornSchunckParams};
pub use lk::{lucas_kanade, LucasKanadeParams};
pub use piv::{
    circular_cross_correlation, piv, piv_at, subpixel_peak, Correlation, PeakFitter,
    PivParams, SubpixelPeak,
};

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gridfile::{GridFile, Plane};
use crate::imgproc::{bilinear_clamped, correlate_separable, median};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub valid: Array2<bool>,
}

impl VelocityField {
    pub fn zeros(dim: (usize, usize)) -> Self {
        VelocityField {
            u: Array2::zeros(dim),
            v: Array2::zeros(dim),
            valid: Array2::from_elem(dim, true),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.u.dim()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        ndarray::Zip::from(&self.u).and(&self.v).map_collect(|a, b| a.hypot(*b))
    }

    /// Bilinear sample at column `x`, row `y`.
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        (bilinear_clamped(&self.u, x, y), bilinear_clamped(&self.v, x, y))
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|&&b| b).count() as f64 / self.valid.len().max(1) as f64
    }

    pub fn to_grid(&self) -> GridFile {
        GridFile {
            planes: vec![
                Plane::new("u", "px/frame", self.u.clone()),
                Plane::new("v", "px/frame", self.v.clone()),
            ],
            mask: Some(self.valid.clone()),
        }
    }

    pub fn from_grid(g: &GridFile) -> Result<Self> {
        let u = g.plane("u").ok_or_else(|| Error::Format("grid lacks plane `u`".into()))?;
        let v = g.plane("v").ok_or_else(|| Error::Format("grid lacks plane `v`".into()))?;
        Ok(VelocityField {
            u: u.clone(),
            v: v.clone(),
            valid: g.mask.clone().unwrap_or_else(|| Array2::from_elem(u.dim(), true)),
        })
    }
}

pub(crate) fn check_pair(prev: &Array2<f64>, curr: &Array2<f64>) -> Result<()> {
    if prev.dim() != curr.dim() {
        return invalid(format!("frame shapes {:?} and {:?} differ", prev.dim(), curr.dim()));
    }
    if prev.is_empty() {
        return invalid("empty frames");
    }
    Ok(())
}

/// Spatial and temporal derivatives.
#[derive(Debug, Clone)]
pub struct Derivatives {
    pub ix: Array2<f64>,
    pub iy: Array2<f64>,
    pub it: Array2<f64>,
}

/// Sobel gradients of the previous frame and the smoothed temporal
/// difference scaled by `sigma`. Kernels are normalized so that a unit
/// ramp has unit gradient and `sigma = 1` gives displacements in pixels.
pub fn sobel_derivatives(prev: &Array2<f64>, curr: &Array2<f64>, sigma: f64) -> Result<Derivatives> {
    check_pair(prev, curr)?;
    let smooth = [0.25, 0.5, 0.25];
    let diff = [-0.5, 0.0, 0.5];
    let ix = correlate_separable(prev, &smooth, &diff);
    let iy = correlate_separable(prev, &diff, &smooth);
    let it = correlate_separable(&(curr - prev), &smooth, &smooth) * sigma;
    Ok(Derivatives { ix, iy, it })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizeOptions {
    pub tau_lower: f64,
    pub tau_upper: f64,
    pub half_window: usize,
    /// Repeat the fill until no pixel changes.
    pub until_stable: bool,
}

impl Default for RegularizeOptions {
    fn default() -> Self {
        RegularizeOptions {
            tau_lower: 0.1,
            tau_upper: 10.0,
            half_window: 1,
            until_stable: true,
        }
    }
}

/// Replaces vectors outside `tau_lower < |v| <= tau_upper`, and invalid
/// ones, by the componentwise neighborhood median of the thresholded field.
pub fn regularize(field: &VelocityField, opts: &RegularizeOptions) -> Result<VelocityField> {
    if !(opts.tau_lower >= 0.0 && opts.tau_lower < opts.tau_upper) {
        return invalid("regularization thresholds must satisfy 0 <= lower < upper");
    }
    let (rows, cols) = field.dim();
    let in_band = |u: f64, v: f64| {
        let m = u.hypot(v);
        m.is_finite() && opts.tau_lower < m && m <= opts.tau_upper
    };
    let mut u = field.u.clone();
    let mut v = field.v.clone();
    let mut keep = Array2::from_shape_fn((rows, cols), |p| field.valid[p] && in_band(u[p], v[p]));
    let w = opts.half_window as isize;
    let mut bu = Vec::new();
    let mut bv = Vec::new();
    for _ in 0..rows * cols + 1 {
        let tu = Array2::from_shape_fn((rows, cols), |p| if keep[p] { u[p] } else { 0.0 });
        let tv = Array2::from_shape_fn((rows, cols), |p| if keep[p] { v[p] } else { 0.0 });
        let mut changed = false;
        for r in 0..rows {
            for c in 0..cols {
                if keep[(r, c)] {
                    continue;
                }
                bu.clear();
                bv.clear();
                for dr in -w..=w {
                    for dc in -w..=w {
                        let (rr, cc) = (r as isize + dr, c as isize + dc);
                        if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                            bu.push(tu[(rr as usize, cc as usize)]);
                            bv.push(tv[(rr as usize, cc as usize)]);
                        }
                    }
                }
                let (mu, mv) = (median(&mut bu), median(&mut bv));
                if mu != u[(r, c)] || mv != v[(r, c)] {
                    changed = true;
                }
                u[(r, c)] = mu;
                v[(r, c)] = mv;
            }
        }
        if !opts.until_stable {
            break;
        }
        let next = Array2::from_shape_fn((rows, cols), |p| keep[p] || in_band(u[p], v[p]));
        if !changed && next == keep {
            break;
        }
        keep = next;
    }
    Ok(VelocityField {
        u,
        v,
        valid: Array2::from_elem((rows, cols), true),
    })
}

/// A motion estimator with fixed parameters.
pub trait FlowEstimator: Send + Sync {
    fn name(&self) -> &'static str;

    fn params(&self) -> FlowParams;

    fn estimate(&self, prev: &Array2<f64>, curr: &Array2<f64>) -> Result<VelocityField>;

    /// Displacement at fractional (column, row) points, `None` where the
    /// estimate is invalid. Sparse methods override this.
    fn estimate_at(&self, prev: &Array2<f64>, curr: &Array2<f64>, points: &[(f64, f64)]) -> Result<Vec<Option<(f64, f64)>>> {
        let f = self.estimate(prev, curr)?;
        let (rows, cols) = f.dim();
        Ok(points
            .iter()
            .map(|&(x, y)| {
                let (c, r) = (x.round().clamp(0.0, cols as f64 - 1.0) as usize, y.round().clamp(0.0, rows as f64 - 1.0) as usize);
                f.valid[(r, c)].then(|| f.sample(x, y))
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum FlowParams {
    Lk(LucasKanadeParams),
    Hs(HornSchunckParams),
    Fb(FarnebackParams),
    Cc(PivParams),
    Ncc(PivParams),
}

impl FlowParams {
    pub fn method(&self) -> &'static str {
        match self {
            FlowParams::Lk(_) => "lk",
            FlowParams::Hs(_) => "hs",
            FlowParams::Fb(_) => "fb",
            FlowParams::Cc(_) => "cc",
            FlowParams::Ncc(_) => "ncc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Real,
    Integer,
    OddInteger,
}

/// One tunable dimension of a method's parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub scale: ParamScale,
    pub kind: ParamKind,
}

impl ParamRange {
    pub fn new(name: &str, lo: f64, hi: f64, scale: ParamScale, kind: ParamKind) -> Self {
        ParamRange {
            name: name.into(),
            lo,
            hi,
            scale,
            kind,
        }
    }

    /// Maps a unit-interval coordinate to a parameter value.
    pub fn from_unit(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        let raw = match self.scale {
            ParamScale::Linear => self.lo + t * (self.hi - self.lo),
            ParamScale::Log => (self.lo.ln() + t * (self.hi.ln() - self.lo.ln())).exp(),
        };
        match self.kind {
            ParamKind::Real => raw,
            ParamKind::Integer => raw.round().clamp(self.lo, self.hi),
            ParamKind::OddInteger => {
                let k = ((raw - 1.0) / 2.0).round() * 2.0 + 1.0;
                let lo = if self.lo as i64 % 2 == 0 { self.lo + 1.0 } else { self.lo };
                let hi = if self.hi as i64 % 2 == 0 { self.hi - 1.0 } else { self.hi };
                k.clamp(lo, hi)
            }
        }
    }

    /// Inverse of [`ParamRange::from_unit`] for continuous values.
    pub fn to_unit(&self, value: f64) -> f64 {
        let t = match self.scale {
            ParamScale::Linear => (value - self.lo) / (self.hi - self.lo),
            ParamScale::Log => (value.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln()),
        };
        t.clamp(0.0, 1.0)
    }
}

/// A registered estimator family.
pub trait FlowMethod: Send + Sync {
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    fn default_params(&self) -> FlowParams;

    fn search_space(&self) -> Vec<ParamRange>;

    /// Parameters from values ordered as in [`FlowMethod::search_space`].
    fn params_from(&self, values: &[f64]) -> Result<FlowParams>;

    /// Search-space values of a parameter set.
    fn values_of(&self, params: &FlowParams) -> Result<Vec<f64>>;

    fn build(&self, params: &FlowParams) -> Result<Box<dyn FlowEstimator>>;
}

pub(crate) fn wrong_params<T>(method: &str, p: &FlowParams) -> Result<T> {
    invalid(format!("method `{method}` given parameters for `{}`", p.method()))
}

pub(crate) fn check_len(values: &[f64], n: usize) -> Result<()> {
    if values.len() != n {
        return invalid(format!("expected {n} parameter values, got {}", values.len()));
    }
    Ok(())
}

/// Estimator families by name.
pub struct Registry {
    methods: BTreeMap<&'static str, Box<dyn FlowMethod>>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Registry::empty();
        r.register(Box::new(lk::LucasKanadeMethod));
        r.register(Box::new(hs::HornSchunckMethod));
        r.register(Box::new(farneback::FarnebackMethod));
        r.register(Box::new(piv::PivMethod { normalized: false }));
        r.register(Box::new(piv::PivMethod { normalized: true }));
        r
    }
}

impl Registry {
    pub fn empty() -> Self {
        Registry { methods: BTreeMap::new() }
    }

    /// Adds or replaces a method under its name.
    pub fn register(&mut self, method: Box<dyn FlowMethod>) {
        self.methods.insert(method.name(), method);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.methods.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn FlowMethod> {
        self.methods
            .get(name)
            .map(|m| m.as_ref())
            .ok_or_else(|| Error::UnknownMethod(name.to_string()))
    }

    pub fn build(&self, params: &FlowParams) -> Result<Box<dyn FlowEstimator>> {
        self.get(params.method())?.build(params)
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn FlowMethod> {
        self.methods.values().map(|m| m.as_ref())
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use ndarray::Array2;

    /// Smooth periodic texture with several orientations.
    pub fn texture(x: f64, y: f64) -> f64 {
        100.0
            + 20.0 * (0.35 * x + 0.1 * y).sin()
            + 15.0 * (0.12 * x - 0.41 * y).cos()
            + 10.0 * (0.23 * x + 0.29 * y + 1.0).sin()
    }

    pub fn shifted_pair(rows: usize, cols: usize, dx: f64, dy: f64) -> (Array2<f64>, Array2<f64>) {
        let a = Array2::from_shape_fn((rows, cols), |(r, c)| texture(c as f64, r as f64));
        let b = Array2::from_shape_fn((rows, cols), |(r, c)| texture(c as f64 - dx, r as f64 - dy));
        (a, b)
    }

    /// Field of Gaussian speckles of radius about 1.5 px.
    pub fn speckle_pair(rows: usize, cols: usize, dx: f64, dy: f64) -> (Array2<f64>, Array2<f64>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = rows * cols / 6;
        let blobs: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                (
                    rng.gen_range(-4.0..cols as f64 + 4.0),
                    rng.gen_range(-4.0..rows as f64 + 4.0),
                    rng.gen_range(10.0..50.0),
                )
            })
            .collect();
        let at = |x: f64, y: f64| {
            100.0
                + blobs
                    .iter()
                    .map(|&(bx, by, a)| a * (-((x - bx).powi(2) + (y - by).powi(2)) / 4.5).exp())
                    .sum::<f64>()
        };
        let a = Array2::from_shape_fn((rows, cols), |(r, c)| at(c as f64, r as f64));
        let b = Array2::from_shape_fn((rows, cols), |(r, c)| at(c as f64 - dx, r as f64 - dy));
        (a, b)
    }

    pub fn interior_median(f: &Array2<f64>, valid: &Array2<bool>, margin: usize) -> f64 {
        let (rows, cols) = f.dim();
        let mut v: Vec<f64> = Vec::new();
        for r in margin..rows - margin {
            for c in margin..cols - margin {
                if valid[(r, c)] {
                    v.push(f[(r, c)]);
                }
            }
        }
        crate::imgproc::median(&mut v)
    }
}
