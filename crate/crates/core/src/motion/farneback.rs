use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{check_len, check_pair, wrong_params, FlowEstimator, FlowMethod, FlowParams, ParamKind, ParamRange, ParamScale, VelocityField};
use crate::error::{invalid, Error, Result};
use crate::imgproc::{bilinear_clamped, correlate_separable, gaussian_blur, gaussian_kernel, resize_bilinear};

/// Parametric displacement model fitted in each window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum MotionModel {
    /// `d = (a1, a4)`.
    Constant,
    /// `dx = a1 + a2 x + a3 y`, `dy = a4 + a5 x + a6 y`.
    Affine,
    /// Affine plus `a7 (x^2, xy)` and `a8 (xy, y^2)`.
    #[default]
    Quadratic,
}

type Monomial = Option<(u8, u8)>;

impl MotionModel {
    /// For each parameter, the monomial multiplying it in `dx` and in `dy`.
    fn basis(self) -> Vec<(Monomial, Monomial)> {
        let mut b = vec![(Some((0, 0)), None)];
        if self != MotionModel::Constant {
            b.push((Some((1, 0)), None));
            b.push((Some((0, 1)), None));
        }
        b.push((None, Some((0, 0))));
        if self != MotionModel::Constant {
            b.push((None, Some((1, 0))));
            b.push((None, Some((0, 1))));
        }
        if self == MotionModel::Quadratic {
            b.push((Some((2, 0)), Some((1, 1))));
            b.push((Some((1, 1)), Some((0, 2))));
        }
        b
    }

    /// Index of the parameter giving the `dy` offset.
    fn dy_index(self) -> usize {
        if self == MotionModel::Constant {
            1
        } else {
            3
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarnebackParams {
    /// Ratio between successive pyramid levels, in (0, 1).
    pub pyr_scale: f64,
    pub levels: usize,
    /// Odd side of the motion-model window.
    pub win_size: usize,
    /// Refinements per level.
    pub iterations: usize,
    /// Odd side of the polynomial-expansion neighborhood.
    pub poly_n: usize,
    /// Standard deviation of the expansion weights.
    pub poly_sigma: f64,
    pub model: MotionModel,
}

impl Default for FarnebackParams {
    fn default() -> Self {
        FarnebackParams {
            pyr_scale: 0.5,
            levels: 3,
            win_size: 15,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.1,
            model: MotionModel::Quadratic,
        }
    }
}

impl FarnebackParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pyr_scale > 0.0 && self.pyr_scale < 1.0) {
            return invalid("pyramid scale must lie in (0, 1)");
        }
        if self.levels == 0 || self.iterations == 0 {
            return invalid("levels and iterations must be positive");
        }
        if self.win_size < 3 || self.win_size % 2 == 0 || self.poly_n < 3 || self.poly_n % 2 == 0 {
            return invalid("window sizes must be odd and at least 3");
        }
        if !(self.poly_sigma > 0.0) {
            return invalid("expansion sigma must be positive");
        }
        Ok(())
    }

    fn win_sigma(&self) -> f64 {
        self.win_size as f64 / 4.0
    }
}

/// Per-pixel quadratic expansion `f(x) ~ x^T A x + b^T x + c`.
struct Expansion {
    /// c, bx, by, axx, ayy, axy (the last is twice the off-diagonal of A).
    r: [Array2<f64>; 6],
}

const EXPANSION_BASIS: [(u8, u8); 6] = [(0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1)];

fn weighted_kernel(g: &[f64], power: u8, scale: f64) -> Vec<f64> {
    let h = (g.len() / 2) as f64;
    g.iter()
        .enumerate()
        .map(|(k, w)| w * ((k as f64 - h) / scale).powi(power as i32))
        .collect()
}

fn expand(img: &Array2<f64>, n: usize, sigma: f64) -> Result<Expansion> {
    let g = gaussian_kernel(sigma, n);
    let h = (n / 2) as isize;
    let mut gram = DMatrix::<f64>::zeros(6, 6);
    for oy in -h..=h {
        for ox in -h..=h {
            let w = g[(oy + h) as usize] * g[(ox + h) as usize];
            let m: Vec<f64> = EXPANSION_BASIS
                .iter()
                .map(|&(a, b)| (ox as f64).powi(a as i32) * (oy as f64).powi(b as i32))
                .collect();
            for i in 0..6 {
                for j in 0..6 {
                    gram[(i, j)] += w * m[i] * m[j];
                }
            }
        }
    }
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("polynomial expansion neighborhood".into()))?;
    let moments: Vec<Array2<f64>> = EXPANSION_BASIS
        .iter()
        .map(|&(a, b)| correlate_separable(img, &weighted_kernel(&g, b, 1.0), &weighted_kernel(&g, a, 1.0)))
        .collect();
    let r: [Array2<f64>; 6] = std::array::from_fn(|i| {
        let mut acc = Array2::zeros(img.dim());
        for (j, m) in moments.iter().enumerate() {
            acc.scaled_add(inv[(i, j)], m);
        }
        acc
    });
    Ok(Expansion { r })
}

struct Level {
    e1: Expansion,
    e2: Expansion,
}

/// Moment images `sum w(o) s_x^a s_y^b img(p + o)` cached by source and
/// exponents.
struct Moments<'a> {
    g: Vec<f64>,
    scale: f64,
    sources: [&'a Array2<f64>; 5],
    cache: HashMap<(usize, u8, u8), Array2<f64>>,
}

impl<'a> Moments<'a> {
    fn get(&mut self, src: usize, a: u8, b: u8) -> &Array2<f64> {
        let (g, scale, img) = (&self.g, self.scale, self.sources[src]);
        self.cache
            .entry((src, a, b))
            .or_insert_with(|| correlate_separable(img, &weighted_kernel(g, b, scale), &weighted_kernel(g, a, scale)))
    }
}

struct Solution {
    u: Array2<f64>,
    v: Array2<f64>,
    valid: Array2<bool>,
    params: Vec<Array2<f64>>,
}

fn solve_level(lv: &Level, du: &Array2<f64>, dv: &Array2<f64>, p: &FarnebackParams) -> Solution {
    let dim = du.dim();
    let mut mxx = Array2::zeros(dim);
    let mut mxy = Array2::zeros(dim);
    let mut myy = Array2::zeros(dim);
    let mut hx = Array2::zeros(dim);
    let mut hy = Array2::zeros(dim);
    for (r, c) in ndarray::indices(dim) {
        let (x, y) = (c as f64 + du[(r, c)], r as f64 + dv[(r, c)]);
        let s = |k: usize| bilinear_clamped(&lv.e2.r[k], x, y);
        let a11 = 0.5 * (lv.e1.r[3][(r, c)] + s(3));
        let a22 = 0.5 * (lv.e1.r[4][(r, c)] + s(4));
        let a12 = 0.25 * (lv.e1.r[5][(r, c)] + s(5));
        let (d1, d2) = (du[(r, c)], dv[(r, c)]);
        let b1 = -0.5 * (s(1) - lv.e1.r[1][(r, c)]) + a11 * d1 + a12 * d2;
        let b2 = -0.5 * (s(2) - lv.e1.r[2][(r, c)]) + a12 * d1 + a22 * d2;
        mxx[(r, c)] = a11 * a11 + a12 * a12;
        mxy[(r, c)] = a12 * (a11 + a22);
        myy[(r, c)] = a12 * a12 + a22 * a22;
        hx[(r, c)] = a11 * b1 + a12 * b2;
        hy[(r, c)] = a12 * b1 + a22 * b2;
    }
    let basis = p.model.basis();
    let np = basis.len();
    let mut mom = Moments {
        g: gaussian_kernel(p.win_sigma(), p.win_size),
        scale: (p.win_size / 2) as f64,
        sources: [&mxx, &mxy, &myy, &hx, &hy],
        cache: HashMap::new(),
    };
    // Which moment image feeds each normal-matrix entry and right-hand side.
    let metric = |cx: usize, cy: usize| match (cx, cy) {
        (0, 0) => 0,
        (1, 1) => 2,
        _ => 1,
    };
    let mut terms: Vec<(usize, usize, usize, u8, u8)> = Vec::new();
    for k in 0..np {
        for l in 0..np {
            let rows = [basis[k].0, basis[k].1];
            let cols = [basis[l].0, basis[l].1];
            for (ck, ek) in rows.iter().enumerate() {
                for (cl, el) in cols.iter().enumerate() {
                    if let (Some(ek), Some(el)) = (ek, el) {
                        terms.push((k, l, metric(ck, cl), ek.0 + el.0, ek.1 + el.1));
                    }
                }
            }
        }
    }
    let mut rhs_terms: Vec<(usize, usize, u8, u8)> = Vec::new();
    for (k, (ex, ey)) in basis.iter().enumerate() {
        if let Some(e) = ex {
            rhs_terms.push((k, 3, e.0, e.1));
        }
        if let Some(e) = ey {
            rhs_terms.push((k, 4, e.0, e.1));
        }
    }
    for &(_, _, src, a, b) in &terms {
        mom.get(src, a, b);
    }
    for &(_, src, a, b) in &rhs_terms {
        mom.get(src, a, b);
    }
    let mut out = Solution {
        u: du.clone(),
        v: dv.clone(),
        valid: Array2::from_elem(dim, true),
        params: vec![Array2::zeros(dim); np],
    };
    let cache = &mom.cache;
    let plane = |key| cache[&key].as_slice().expect("standard layout");
    let nterms: Vec<(usize, usize, &[f64])> = terms.iter().map(|&(k, l, src, a, b)| (k, l, plane((src, a, b)))).collect();
    let rterms: Vec<(usize, &[f64])> = rhs_terms.iter().map(|&(k, src, a, b)| (k, plane((src, a, b)))).collect();
    let mut n = DMatrix::<f64>::zeros(np, np);
    let mut rhs = DVector::<f64>::zeros(np);
    for (i, idx) in ndarray::indices(dim).into_iter().enumerate() {
        n.fill(0.0);
        rhs.fill(0.0);
        for &(k, l, m) in &nterms {
            n[(k, l)] += m[i];
        }
        for &(k, m) in &rterms {
            rhs[k] += m[i];
        }
        let sol = cholesky_solve(&mut n, &mut rhs);
        match sol {
            Some(x) if x.iter().all(|v| v.is_finite()) => {
                out.u[idx] = x[0];
                out.v[idx] = x[p.model.dy_index()];
                for k in 0..np {
                    out.params[k][idx] = x[k];
                }
            }
            _ => out.valid[idx] = false,
        }
    }
    out
}

/// Solves `n x = rhs` in place by Cholesky, or `None` when the factor is
/// singular or ill-conditioned (min L_ii <= 1e-6 max L_ii).
fn cholesky_solve<'a>(n: &mut DMatrix<f64>, rhs: &'a mut DVector<f64>) -> Option<&'a DVector<f64>> {
    let m = n.nrows();
    for j in 0..m {
        let mut d = n[(j, j)];
        for k in 0..j {
            d -= n[(j, k)] * n[(j, k)];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        n[(j, j)] = d;
        for i in j + 1..m {
            let mut s = n[(i, j)];
            for k in 0..j {
                s -= n[(i, k)] * n[(j, k)];
            }
            n[(i, j)] = s / d;
        }
    }
    let (lo, hi) = (0..m).fold((f64::INFINITY, 0.0f64), |(a, b), i| (a.min(n[(i, i)]), b.max(n[(i, i)])));
    if !(lo > 1e-6 * hi) {
        return None;
    }
    for i in 0..m {
        let mut s = rhs[i];
        for k in 0..i {
            s -= n[(i, k)] * rhs[k];
        }
        rhs[i] = s / n[(i, i)];
    }
    for i in (0..m).rev() {
        let mut s = rhs[i];
        for k in i + 1..m {
            s -= n[(k, i)] * rhs[k];
        }
        rhs[i] = s / n[(i, i)];
    }
    Some(rhs)
}

/// Pyramid levels from coarse to fine as (frame1, frame2) pairs.
fn pyramid(prev: &Array2<f64>, curr: &Array2<f64>, p: &FarnebackParams) -> Vec<(Array2<f64>, Array2<f64>)> {
    let (rows, cols) = prev.dim();
    let min_side = p.poly_n.max(8);
    let mut out = vec![(prev.clone(), curr.clone())];
    for k in 1..p.levels {
        let s = p.pyr_scale.powi(k as i32);
        let (r, c) = ((rows as f64 * s).round() as usize, (cols as f64 * s).round() as usize);
        if r < min_side || c < min_side {
            break;
        }
        let sigma = (1.0 / s - 1.0) * 0.5;
        out.push((
            resize_bilinear(&gaussian_blur(prev, sigma), r, c),
            resize_bilinear(&gaussian_blur(curr, sigma), r, c),
        ));
    }
    out.reverse();
    out
}

/// Dense flow with the per-pixel motion-model parameters of the finest
/// level, converted to pixel units.
pub fn farneback_with_params(prev: &Array2<f64>, curr: &Array2<f64>, p: &FarnebackParams) -> Result<(VelocityField, Vec<Array2<f64>>)> {
    p.validate()?;
    check_pair(prev, curr)?;
    let levels = pyramid(prev, curr, p);
    let mut du: Array2<f64> = Array2::zeros(levels[0].0.dim());
    let mut dv: Array2<f64> = Array2::zeros(levels[0].0.dim());
    let mut last: Option<Solution> = None;
    for (li, (a, b)) in levels.iter().enumerate() {
        let dim = a.dim();
        if li > 0 {
            let (pr, pc) = du.dim();
            du = resize_bilinear(&du, dim.0, dim.1) * (dim.1 as f64 / pc as f64);
            dv = resize_bilinear(&dv, dim.0, dim.1) * (dim.0 as f64 / pr as f64);
        }
        let lv = Level {
            e1: expand(a, p.poly_n, p.poly_sigma)?,
            e2: expand(b, p.poly_n, p.poly_sigma)?,
        };
        for _ in 0..p.iterations {
            let sol = solve_level(&lv, &du, &dv, p);
            du = sol.u.clone();
            dv = sol.v.clone();
            last = Some(sol);
        }
    }
    let sol = last.expect("at least one level and iteration");
    let scale = (p.win_size / 2) as f64;
    let basis = p.model.basis();
    let params = sol
        .params
        .into_iter()
        .zip(&basis)
        .map(|(a, (ex, ey))| {
            let deg = ex.or(*ey).map_or(0, |e| e.0 + e.1);
            a / scale.powi(deg as i32)
        })
        .collect();
    Ok((
        VelocityField {
            u: sol.u,
            v: sol.v,
            valid: sol.valid,
        },
        params,
    ))
}

pub fn farneback(prev: &Array2<f64>, curr: &Array2<f64>, p: &FarnebackParams) -> Result<VelocityField> {
    farneback_with_params(prev, curr, p).map(|(f, _)| f)
}

pub(crate) struct Farneback(pub FarnebackParams);

impl FlowEstimator for Farneback {
    fn name(&self) -> &'static str {
        "fb"
    }

    fn params(&self) -> FlowParams {
        FlowParams::Fb(self.0)
    }

    fn estimate(&self, prev: &Array2<f64>, curr: &Array2<f64>) -> Result<VelocityField> {
        farneback(prev, curr, &self.0)
    }
}

pub(crate) struct FarnebackMethod;

impl FlowMethod for FarnebackMethod {
    fn name(&self) -> &'static str {
        "fb"
    }

    fn description(&self) -> &'static str {
        "Farneback polynomial expansion"
    }

    fn default_params(&self) -> FlowParams {
        FlowParams::Fb(FarnebackParams::default())
    }

    fn search_space(&self) -> Vec<ParamRange> {
        vec![
            ParamRange::new("pyr_scale", 0.3, 0.8, ParamScale::Linear, ParamKind::Real),
            ParamRange::new("levels", 1.0, 4.0, ParamScale::Linear, ParamKind::Integer),
            ParamRange::new("win_size", 5.0, 21.0, ParamScale::Linear, ParamKind::OddInteger),
            ParamRange::new("iterations", 1.0, 8.0, ParamScale::Linear, ParamKind::Integer),
            ParamRange::new("poly_n", 5.0, 9.0, ParamScale::Linear, ParamKind::OddInteger),
            ParamRange::new("poly_sigma", 0.8, 2.0, ParamScale::Linear, ParamKind::Real),
        ]
    }

    fn params_from(&self, x: &[f64]) -> Result<FlowParams> {
        check_len(x, 6)?;
        Ok(FlowParams::Fb(FarnebackParams {
            pyr_scale: x[0],
            levels: x[1] as usize,
            win_size: x[2] as usize,
            iterations: x[3] as usize,
            poly_n: x[4] as usize,
            poly_sigma: x[5],
            model: MotionModel::default(),
        }))
    }

    fn values_of(&self, p: &FlowParams) -> Result<Vec<f64>> {
        match p {
            FlowParams::Fb(p) => Ok(vec![
                p.pyr_scale,
                p.levels as f64,
                p.win_size as f64,
                p.iterations as f64,
                p.poly_n as f64,
                p.poly_sigma,
            ]),
            other => wrong_params("fb", other),
        }
    }

    fn build(&self, p: &FlowParams) -> Result<Box<dyn FlowEstimator>> {
        match p {
            FlowParams::Fb(p) => {
                p.validate()?;
                Ok(Box::new(Farneback(*p)))
            }
            other => wrong_params("fb", other),
        }
    }
}
