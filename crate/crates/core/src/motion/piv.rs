use std::sync::Arc;

use nalgebra::DMatrix;
use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{check_len, check_pair, wrong_params, FlowEstimator, FlowMethod, FlowParams, ParamKind, ParamRange, ParamScale, VelocityField};
use crate::error::{invalid, Error, Result};
use crate::imgproc::clamp_index;
use crate::poly::{binomial, PolyExpansion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Correlation {
    /// Plain cross-correlation of the raw windows.
    Cross,
    /// Mean-removed correlation divided by the window standard deviations.
    Normalized,
    /// Cross-power spectrum divided by its magnitude before inversion.
    Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PivParams {
    /// Window side.
    pub window: usize,
    /// Total degree of the peak polynomial.
    pub order: usize,
    pub correlation: Correlation,
}

impl PivParams {
    pub fn cross() -> Self {
        PivParams {
            window: 16,
            order: 2,
            correlation: Correlation::Cross,
        }
    }

    pub fn normalized() -> Self {
        PivParams {
            correlation: Correlation::Normalized,
            ..PivParams::cross()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 {
            return invalid("correlation window must be at least 3");
        }
        if self.order < 2 || self.order > 15 {
            return invalid("peak polynomial degree must be within 2..=15");
        }
        let half = PeakFitter::half_for(self.order);
        if 2 * half + 1 > self.window {
            return invalid(format!("degree {} needs a window of at least {}", self.order, 2 * half + 1));
        }
        Ok(())
    }
}

/// Two-dimensional transforms of a fixed square size.
struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    col: Vec<Complex<f64>>,
}

impl Fft2 {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            col: vec![Complex::default(); n],
        }
    }

    fn run(&mut self, buf: &mut [Complex<f64>], inverse: bool) {
        let n = self.n;
        let f = if inverse { &self.inv } else { &self.fwd };
        for row in buf.chunks_exact_mut(n) {
            f.process(row);
        }
        for c in 0..n {
            for r in 0..n {
                self.col[r] = buf[r * n + c];
            }
            f.process(&mut self.col);
            for r in 0..n {
                buf[r * n + c] = self.col[r];
            }
        }
    }
}

/// Reusable correlation engine for one window size.
struct Correlator {
    n: usize,
    fft: Fft2,
    a: Vec<Complex<f64>>,
    b: Vec<Complex<f64>>,
}

impl Correlator {
    fn new(n: usize) -> Self {
        Correlator {
            n,
            fft: Fft2::new(n),
            a: vec![Complex::default(); n * n],
            b: vec![Complex::default(); n * n],
        }
    }

    /// `gamma[k] = sum_x a(x) b(x + k)` with indices modulo the window, or
    /// `None` for a degenerate window.
    fn correlate(&mut self, w1: &[f64], w2: &[f64], kind: Correlation, gamma: &mut [f64]) -> Option<()> {
        let nn = (self.n * self.n) as f64;
        let (mut m1, mut m2) = (0.0, 0.0);
        if kind == Correlation::Normalized {
            m1 = w1.iter().sum::<f64>() / nn;
            m2 = w2.iter().sum::<f64>() / nn;
        }
        let mut e1 = 0.0;
        let mut e2 = 0.0;
        for i in 0..w1.len() {
            let (x, y) = (w1[i] - m1, w2[i] - m2);
            e1 += x * x;
            e2 += y * y;
            self.a[i] = Complex::new(x, 0.0);
            self.b[i] = Complex::new(y, 0.0);
        }
        if e1 == 0.0 || e2 == 0.0 {
            return None;
        }
        self.fft.run(&mut self.a, false);
        self.fft.run(&mut self.b, false);
        let mut peak = 0.0f64;
        for (a, b) in self.a.iter_mut().zip(&self.b) {
            *a = a.conj() * b;
            peak = peak.max(a.norm());
        }
        if kind == Correlation::Phase {
            let floor = peak * 1e-12;
            if !(peak > 0.0) {
                return None;
            }
            for a in self.a.iter_mut() {
                let m = a.norm();
                *a = if m > floor { *a / m } else { Complex::default() };
            }
        }
        self.fft.run(&mut self.a, true);
        let scale = match kind {
            Correlation::Normalized => 1.0 / (nn * (e1 * e2).sqrt()),
            _ => 1.0 / nn,
        };
        for (g, a) in gamma.iter_mut().zip(&self.a) {
            *g = a.re * scale;
        }
        Some(())
    }
}

/// Frequency-domain circular correlation of two equal square windows.
/// Entry `[dy, dx]` (indices modulo the side) is the correlation at
/// displacement (dx, dy) from `w1` to `w2`. Errors on degenerate windows.
pub fn circular_cross_correlation(w1: &Array2<f64>, w2: &Array2<f64>, kind: Correlation) -> Result<Array2<f64>> {
    let (r, c) = w1.dim();
    if r != c || w2.dim() != w1.dim() || r == 0 {
        return invalid("correlation windows must be equal squares");
    }
    let mut corr = Correlator::new(r);
    let a: Vec<f64> = w1.iter().cloned().collect();
    let b: Vec<f64> = w2.iter().cloned().collect();
    let mut g = vec![0.0; r * r];
    corr.correlate(&a, &b, kind, &mut g)
        .ok_or(Error::ZeroVariance("correlation window"))?;
    Ok(Array2::from_shape_vec((r, r), g).expect("square buffer"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubpixelPeak {
    /// Column of the maximum.
    pub x: f64,
    /// Row of the maximum.
    pub y: f64,
    /// False when the polynomial ascent failed and the integer peak is
    /// returned.
    pub refined: bool,
}

/// Least-squares polynomial fit on the `(2h+1)^2` neighborhood of a peak
/// and gradient ascent of the fitted surface within one pixel.
#[derive(Debug, Clone)]
pub struct PeakFitter {
    pub order: usize,
    pub half: usize,
    expansion: PolyExpansion,
    pinv: DMatrix<f64>,
}

impl PeakFitter {
    /// Smallest neighborhood half-size with at least as many samples as
    /// polynomial terms.
    pub fn half_for(order: usize) -> usize {
        let terms = binomial(order + 2, 2);
        let mut h = 1;
        while (2 * h + 1) * (2 * h + 1) < terms {
            h += 1;
        }
        h
    }

    pub fn new(order: usize, half: usize) -> Result<Self> {
        let expansion = PolyExpansion::new(2, order);
        let side = 2 * half + 1;
        if order > 15 {
            return invalid("peak polynomial degree above 15");
        }
        if half == 0 || side * side < expansion.n_terms() {
            return invalid(format!("neighborhood {side}x{side} too small for degree {order}"));
        }
        let s = half as f64;
        let mut rows = Vec::with_capacity(side * side);
        for dy in -(half as isize)..=half as isize {
            for dx in -(half as isize)..=half as isize {
                rows.push(expansion.expand(&[dx as f64 / s, dy as f64 / s]));
            }
        }
        let design = DMatrix::from_fn(rows.len(), expansion.n_terms(), |i, j| rows[i][j]);
        let pinv = design
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numerical { iteration: 0, message: e.to_string() })?;
        Ok(PeakFitter {
            order,
            half,
            expansion,
            pinv,
        })
    }

    /// Coefficients from neighborhood samples in row-major order.
    pub fn fit(&self, samples: &[f64]) -> Vec<f64> {
        let v = nalgebra::DVector::from_column_slice(samples);
        (&self.pinv * v).iter().cloned().collect()
    }

    fn eval(&self, coef: &[f64], dx: f64, dy: f64) -> f64 {
        let s = self.half as f64;
        let (x, y) = (dx / s, dy / s);
        let mut px = [1.0; 16];
        let mut py = [1.0; 16];
        for k in 1..=self.order.min(15) {
            px[k] = px[k - 1] * x;
            py[k] = py[k - 1] * y;
        }
        self.expansion
            .exponents()
            .iter()
            .zip(coef)
            .map(|(e, c)| c * px[e[0] as usize] * py[e[1] as usize])
            .sum()
    }

    /// Offset (dx, dy) of the fitted maximum from the center, and whether
    /// the ascent converged strictly inside the one-pixel box.
    pub fn refine(&self, coef: &[f64]) -> ((f64, f64), bool) {
        let f = |x: f64, y: f64| self.eval(coef, x, y);
        let eps = 1e-4;
        let (mut x, mut y) = (0.0, 0.0);
        let mut best = f(x, y);
        let mut step = 0.25;
        for _ in 0..500 {
            let gx = (f(x + eps, y) - f(x - eps, y)) / (2.0 * eps);
            let gy = (f(x, y + eps) - f(x, y - eps)) / (2.0 * eps);
            let g = gx.hypot(gy);
            if !(g > 1e-12) || step < 1e-9 {
                break;
            }
            let (nx, ny) = (x + step * gx / g, y + step * gy / g);
            let val = f(nx, ny);
            if nx.abs() <= 1.0 && ny.abs() <= 1.0 && val > best {
                x = nx;
                y = ny;
                best = val;
                step *= 1.2;
            } else {
                step *= 0.5;
            }
        }
        let inside = x.abs() < 1.0 - 1e-6 && y.abs() < 1.0 - 1e-6;
        if best.is_finite() && inside {
            ((x, y), true)
        } else {
            ((0.0, 0.0), false)
        }
    }
}

/// Sub-pixel maximum of a sampled surface.
pub fn subpixel_peak(surface: &Array2<f64>, order: usize) -> Result<SubpixelPeak> {
    let (rows, cols) = surface.dim();
    if surface.is_empty() {
        return invalid("empty surface");
    }
    let mut best = (0, 0);
    for ((r, c), v) in surface.indexed_iter() {
        if *v > surface[best] {
            best = (r, c);
        }
    }
    let (pr, pc) = best;
    let integer = SubpixelPeak {
        x: pc as f64,
        y: pr as f64,
        refined: false,
    };
    let room = pr.min(pc).min(rows - 1 - pr).min(cols - 1 - pc);
    let half = PeakFitter::half_for(order).min(room);
    let Ok(fitter) = PeakFitter::new(order, half) else {
        return Ok(integer);
    };
    let h = half as isize;
    let mut samples = Vec::with_capacity((2 * half + 1).pow(2));
    for dy in -h..=h {
        for dx in -h..=h {
            samples.push(surface[((pr as isize + dy) as usize, (pc as isize + dx) as usize)]);
        }
    }
    let ((dx, dy), ok) = fitter.refine(&fitter.fit(&samples));
    Ok(SubpixelPeak {
        x: pc as f64 + dx,
        y: pr as f64 + dy,
        refined: ok,
    })
}

struct PivEngine {
    params: PivParams,
    corr: Correlator,
    fitter: PeakFitter,
    w1: Vec<f64>,
    w2: Vec<f64>,
    gamma: Vec<f64>,
    samples: Vec<f64>,
}

impl PivEngine {
    fn new(params: &PivParams) -> Result<Self> {
        params.validate()?;
        let n = params.window;
        Ok(PivEngine {
            params: *params,
            corr: Correlator::new(n),
            fitter: PeakFitter::new(params.order, PeakFitter::half_for(params.order))?,
            w1: vec![0.0; n * n],
            w2: vec![0.0; n * n],
            gamma: vec![0.0; n * n],
            samples: Vec::new(),
        })
    }

    /// Displacement of the window centered at (r, c).
    fn at(&mut self, prev: &Array2<f64>, curr: &Array2<f64>, r: usize, c: usize) -> Option<(f64, f64)> {
        let n = self.params.window;
        let (rows, cols) = prev.dim();
        let (r0, c0) = (r as isize - (n / 2) as isize, c as isize - (n / 2) as isize);
        for y in 0..n {
            let rr = clamp_index(r0 + y as isize, rows);
            for x in 0..n {
                let cc = clamp_index(c0 + x as isize, cols);
                self.w1[y * n + x] = prev[(rr, cc)];
                self.w2[y * n + x] = curr[(rr, cc)];
            }
        }
        self.corr.correlate(&self.w1, &self.w2, self.params.correlation, &mut self.gamma)?;
        // Displacements span -n/2 ..= n - 1 - n/2.
        let lo = -((n / 2) as isize);
        let wrap = |d: isize| d.rem_euclid(n as isize) as usize;
        let (mut by, mut bx, mut bv) = (0isize, 0isize, f64::NEG_INFINITY);
        for dy in lo..lo + n as isize {
            for dx in lo..lo + n as isize {
                let v = self.gamma[wrap(dy) * n + wrap(dx)];
                if v > bv {
                    (by, bx, bv) = (dy, dx, v);
                }
            }
        }
        let h = self.fitter.half as isize;
        self.samples.clear();
        for oy in -h..=h {
            for ox in -h..=h {
                self.samples.push(self.gamma[wrap(by + oy) * n + wrap(bx + ox)]);
            }
        }
        let ((fx, fy), _) = self.fitter.refine(&self.fitter.fit(&self.samples));
        Some((bx as f64 + fx, by as f64 + fy))
    }
}

/// Dense window correlation with a sub-pixel peak at every pixel.
pub fn piv(prev: &Array2<f64>, curr: &Array2<f64>, p: &PivParams) -> Result<VelocityField> {
    check_pair(prev, curr)?;
    let (rows, cols) = prev.dim();
    if p.window > rows.min(cols) {
        return invalid("correlation window exceeds the frame");
    }
    let mut eng = PivEngine::new(p)?;
    let mut out = VelocityField::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            match eng.at(prev, curr, r, c) {
                Some((u, v)) => {
                    out.u[(r, c)] = u;
                    out.v[(r, c)] = v;
                }
                None => out.valid[(r, c)] = false,
            }
        }
    }
    Ok(out)
}

/// Window correlation at the pixels nearest to fractional (column, row)
/// points.
pub fn piv_at(prev: &Array2<f64>, curr: &Array2<f64>, p: &PivParams, points: &[(f64, f64)]) -> Result<Vec<Option<(f64, f64)>>> {
    check_pair(prev, curr)?;
    let (rows, cols) = prev.dim();
    if p.window > rows.min(cols) {
        return invalid("correlation window exceeds the frame");
    }
    let mut eng = PivEngine::new(p)?;
    Ok(points
        .iter()
        .map(|&(x, y)| {
            let c = x.round().clamp(0.0, cols as f64 - 1.0) as usize;
            let r = y.round().clamp(0.0, rows as f64 - 1.0) as usize;
            eng.at(prev, curr, r, c)
        })
        .collect())
}

pub(crate) struct Piv {
    name: &'static str,
    params: PivParams,
}

impl FlowEstimator for Piv {
    fn name(&self) -> &'static str {
        self.name
    }

    fn params(&self) -> FlowParams {
        if self.name == "cc" {
            FlowParams::Cc(self.params)
        } else {
            FlowParams::Ncc(self.params)
        }
    }

    fn estimate(&self, prev: &Array2<f64>, curr: &Array2<f64>) -> Result<VelocityField> {
        piv(prev, curr, &self.params)
    }

    fn estimate_at(&self, prev: &Array2<f64>, curr: &Array2<f64>, points: &[(f64, f64)]) -> Result<Vec<Option<(f64, f64)>>> {
        piv_at(prev, curr, &self.params, points)
    }
}

pub(crate) struct PivMethod {
    pub normalized: bool,
}

impl PivMethod {
    fn unpack<'a>(&self, p: &'a FlowParams) -> Result<&'a PivParams> {
        match (self.normalized, p) {
            (false, FlowParams::Cc(q)) if q.correlation == Correlation::Cross => Ok(q),
            (true, FlowParams::Ncc(q)) if q.correlation != Correlation::Cross => Ok(q),
            (false, FlowParams::Cc(_)) | (true, FlowParams::Ncc(_)) => invalid("correlation kind does not match the method"),
            _ => wrong_params(self.name(), p),
        }
    }
}

impl FlowMethod for PivMethod {
    fn name(&self) -> &'static str {
        if self.normalized {
            "ncc"
        } else {
            "cc"
        }
    }

    fn description(&self) -> &'static str {
        if self.normalized {
            "normalized window cross-correlation"
        } else {
            "window cross-correlation"
        }
    }

    fn default_params(&self) -> FlowParams {
        if self.normalized {
            FlowParams::Ncc(PivParams::normalized())
        } else {
            FlowParams::Cc(PivParams::cross())
        }
    }

    fn search_space(&self) -> Vec<ParamRange> {
        vec![
            ParamRange::new("window", 8.0, 32.0, ParamScale::Linear, ParamKind::Integer),
            ParamRange::new("order", 2.0, 6.0, ParamScale::Linear, ParamKind::Integer),
        ]
    }

    fn params_from(&self, x: &[f64]) -> Result<FlowParams> {
        check_len(x, 2)?;
        let base = self.default_params();
        let mut p = *self.unpack(&base)?;
        p.window = x[0] as usize;
        p.order = x[1] as usize;
        Ok(if self.normalized { FlowParams::Ncc(p) } else { FlowParams::Cc(p) })
    }

    fn values_of(&self, p: &FlowParams) -> Result<Vec<f64>> {
        let p = self.unpack(p)?;
        Ok(vec![p.window as f64, p.order as f64])
    }

    fn build(&self, p: &FlowParams) -> Result<Box<dyn FlowEstimator>> {
        let q = self.unpack(p)?;
        q.validate()?;
        Ok(Box::new(Piv {
            name: self.name(),
            params: *q,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;

    #[test]
    fn identical_windows_peak_at_origin() {
        let w = Array2::from_shape_fn((8, 8), |(r, c)| texture(c as f64, r as f64));
        for kind in [Correlation::Cross, Correlation::Normalized, Correlation::Phase] {
            let g = circular_cross_correlation(&w, &w, kind).unwrap();
            let (mut br, mut bc) = (0, 0);
            for ((r, c), v) in g.indexed_iter() {
                if *v > g[(br, bc)] {
                    (br, bc) = (r, c);
                }
            }
            assert_eq!((br, bc), (0, 0), "{kind:?}");
        }
        let n = circular_cross_correlation(&w, &w, Correlation::Normalized).unwrap();
        assert!((n[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_window_is_degenerate() {
        let z = Array2::zeros((6, 6));
        assert!(circular_cross_correlation(&z, &z, Correlation::Cross).is_err());
    }

    #[test]
    fn delta_peak_is_exact() {
        let mut s = Array2::zeros((8, 9));
        s[(4, 3)] = 1.0;
        let p = subpixel_peak(&s, 2).unwrap();
        assert!((p.x - 3.0).abs() < 1e-6 && (p.y - 4.0).abs() < 1e-6, "{p:?}");
    }

    #[test]
    fn quadratic_vertex_is_recovered() {
        let (x0, y0) = (3.3, 4.2);
        let s = Array2::from_shape_fn((9, 9), |(r, c)| {
            let (x, y) = (c as f64 - x0, r as f64 - y0);
            10.0 - 1.5 * x * x - 0.8 * y * y - 0.4 * x * y
        });
        let p = subpixel_peak(&s, 2).unwrap();
        assert!(p.refined);
        assert!((p.x - x0).abs() < 1e-6 && (p.y - y0).abs() < 1e-6, "{p:?}");
    }

    #[test]
    fn gaussian_bump_center() {
        let (x0, y0) = (3.4, 4.6);
        for order in [2, 4] {
            let s = Array2::from_shape_fn((9, 9), |(r, c)| {
                let (x, y) = (c as f64 - x0, r as f64 - y0);
                (-(x * x + y * y) / (2.0 * 1.5f64.powi(2))).exp()
            });
            let p = subpixel_peak(&s, order).unwrap();
            assert!((p.x - x0).abs() < 0.1 && (p.y - y0).abs() < 0.1, "order {order}: {p:?}");
        }
    }

    #[test]
    fn dense_piv_recovers_shift() {
        // Circular correlation pulls the peak toward zero by roughly the
        // squared speckle size over the window side.
        let (a, b) = speckle_pair(64, 64, 1.4, -0.6);
        for kind in [Correlation::Cross, Correlation::Normalized] {
            let err = |window| {
                let p = PivParams { window, order: 2, correlation: kind };
                let f = piv(&a, &b, &p).unwrap();
                let mu = interior_median(&f.u, &f.valid, 16);
                let mv = interior_median(&f.v, &f.valid, 16);
                (mu - 1.4).hypot(mv + 0.6)
            };
            let (small, large) = (err(12), err(32));
            assert!(large < 0.2 && large < small, "{kind:?}: {small} {large}");
        }
    }

    #[test]
    fn sparse_matches_dense() {
        let (a, b) = shifted_pair(30, 30, 0.8, 0.3);
        let p = PivParams::normalized();
        let f = piv(&a, &b, &p).unwrap();
        let s = piv_at(&a, &b, &p, &[(10.0, 12.0), (20.2, 15.7)]).unwrap();
        assert_eq!(s[0], Some((f.u[(12, 10)], f.v[(12, 10)])));
        assert_eq!(s[1], Some((f.u[(16, 20)], f.v[(16, 20)])));
    }

    #[test]
    fn order_window_feasibility() {
        assert!(PivParams { window: 8, order: 6, correlation: Correlation::Cross }.validate().is_ok());
        assert!(PivParams { window: 4, order: 6, correlation: Correlation::Cross }.validate().is_err());
    }
}
