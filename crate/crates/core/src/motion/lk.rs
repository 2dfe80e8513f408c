use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    check_len, sobel_derivatives, wrong_params, FlowEstimator, FlowMethod, FlowParams, ParamKind, ParamRange, ParamScale,
    VelocityField,
};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LucasKanadeParams {
    /// Odd window side.
    pub window: usize,
    /// Smallest eigenvalue of the structure tensor accepted.
    pub min_eigen: f64,
    /// Temporal kernel amplitude.
    pub sigma: f64,
}

impl Default for LucasKanadeParams {
    fn default() -> Self {
        LucasKanadeParams {
            window: 11,
            min_eigen: 1e-8,
            sigma: 1.0,
        }
    }
}

impl LucasKanadeParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return invalid("Lucas-Kanade window must be odd and at least 3");
        }
        if !(self.min_eigen >= 0.0) {
            return invalid("eigenvalue threshold must be non-negative");
        }
        Ok(())
    }
}

/// Summed-area table with one row and column of leading zeros.
pub(crate) struct BoxSums {
    table: Array2<f64>,
}

impl BoxSums {
    pub(crate) fn new(img: &Array2<f64>) -> Self {
        let (rows, cols) = img.dim();
        let mut table = Array2::zeros((rows + 1, cols + 1));
        for r in 0..rows {
            let mut acc = 0.0;
            for c in 0..cols {
                acc += img[(r, c)];
                table[(r + 1, c + 1)] = table[(r, c + 1)] + acc;
            }
        }
        BoxSums { table }
    }

    /// Sum over the window of half-size `h` at (r, c), clipped to the image.
    pub(crate) fn window(&self, r: usize, c: usize, h: usize) -> f64 {
        let (rows, cols) = (self.table.nrows() - 1, self.table.ncols() - 1);
        let (r0, r1) = (r.saturating_sub(h), (r + h + 1).min(rows));
        let (c0, c1) = (c.saturating_sub(h), (c + h + 1).min(cols));
        self.table[(r1, c1)] - self.table[(r0, c1)] - self.table[(r1, c0)] + self.table[(r0, c0)]
    }
}

/// Windowed least squares on the brightness-constancy equations.
pub fn lucas_kanade(prev: &Array2<f64>, curr: &Array2<f64>, p: &LucasKanadeParams) -> Result<VelocityField> {
    p.validate()?;
    let d = sobel_derivatives(prev, curr, p.sigma)?;
    let dim = prev.dim();
    let sxx = BoxSums::new(&(&d.ix * &d.ix));
    let sxy = BoxSums::new(&(&d.ix * &d.iy));
    let syy = BoxSums::new(&(&d.iy * &d.iy));
    let sxt = BoxSums::new(&(&d.ix * &d.it));
    let syt = BoxSums::new(&(&d.iy * &d.it));
    let h = p.window / 2;
    let mut out = VelocityField::zeros(dim);
    for r in 0..dim.0 {
        for c in 0..dim.1 {
            let (a, b, e) = (sxx.window(r, c, h), sxy.window(r, c, h), syy.window(r, c, h));
            let (f, g) = (-sxt.window(r, c, h), -syt.window(r, c, h));
            let tr = a + e;
            let disc = ((a - e).powi(2) + 4.0 * b * b).sqrt();
            let lambda_min = 0.5 * (tr - disc);
            let det = a * e - b * b;
            if !(lambda_min > p.min_eigen) || det <= 0.0 {
                out.valid[(r, c)] = false;
                continue;
            }
            out.u[(r, c)] = (e * f - b * g) / det;
            out.v[(r, c)] = (a * g - b * f) / det;
        }
    }
    Ok(out)
}

pub(crate) struct LucasKanade(pub LucasKanadeParams);

impl FlowEstimator for LucasKanade {
    fn name(&self) -> &'static str {
        "lk"
    }

    fn params(&self) -> FlowParams {
        FlowParams::Lk(self.0)
    }

    fn estimate(&self, prev: &Array2<f64>, curr: &Array2<f64>) -> Result<VelocityField> {
        lucas_kanade(prev, curr, &self.0)
    }
}

pub(crate) struct LucasKanadeMethod;

impl FlowMethod for LucasKanadeMethod {
    fn name(&self) -> &'static str {
        "lk"
    }

    fn description(&self) -> &'static str {
        "Lucas-Kanade windowed least squares"
    }

    fn default_params(&self) -> FlowParams {
        FlowParams::Lk(LucasKanadeParams::default())
    }

    fn search_space(&self) -> Vec<ParamRange> {
        vec![
            ParamRange::new("window", 3.0, 31.0, ParamScale::Linear, ParamKind::OddInteger),
            ParamRange::new("min_eigen", 1e-10, 1e-2, ParamScale::Log, ParamKind::Real),
            ParamRange::new("sigma", 0.5, 2.0, ParamScale::Linear, ParamKind::Real),
        ]
    }

    fn params_from(&self, x: &[f64]) -> Result<FlowParams> {
        check_len(x, 3)?;
        Ok(FlowParams::Lk(LucasKanadeParams {
            window: x[0] as usize,
            min_eigen: x[1],
            sigma: x[2],
        }))
    }

    fn values_of(&self, p: &FlowParams) -> Result<Vec<f64>> {
        match p {
            FlowParams::Lk(p) => Ok(vec![p.window as f64, p.min_eigen, p.sigma]),
            other => wrong_params("lk", other),
        }
    }

    fn build(&self, p: &FlowParams) -> Result<Box<dyn FlowEstimator>> {
        match p {
            FlowParams::Lk(p) => {
                p.validate()?;
                Ok(Box::new(LucasKanade(*p)))
            }
            other => wrong_params("lk", other),
        }
    }
}
