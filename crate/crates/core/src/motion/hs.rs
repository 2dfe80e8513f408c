use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    check_len, sobel_derivatives, wrong_params, FlowEstimator, FlowMethod, FlowParams, ParamKind, ParamRange, ParamScale,
    VelocityField,
};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HornSchunckParams {
    /// Smoothness weight.
    pub alpha: f64,
    /// Temporal kernel amplitude.
    pub sigma: f64,
    /// Stop once no component changes by more than this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for HornSchunckParams {
    fn default() -> Self {
        HornSchunckParams {
            alpha: 1.0,
            sigma: 1.0,
            tol: 1e-5,
            max_iters: 1000,
        }
    }
}

impl HornSchunckParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return invalid("smoothness weight must be positive");
        }
        if !(self.tol >= 0.0) || self.max_iters == 0 {
            return invalid("tolerance must be non-negative and iterations positive");
        }
        Ok(())
    }
}

/// Jacobi iteration of the smoothness-regularized flow equations from a
/// zero field. Returns the field and the number of sweeps.
pub fn horn_schunck(prev: &Array2<f64>, curr: &Array2<f64>, p: &HornSchunckParams) -> Result<(VelocityField, usize)> {
    p.validate()?;
    let d = sobel_derivatives(prev, curr, p.sigma)?;
    let (rows, cols) = prev.dim();
    let a2 = 4.0 * p.alpha * p.alpha;
    let ix: Vec<f64> = d.ix.iter().cloned().collect();
    let iy: Vec<f64> = d.iy.iter().cloned().collect();
    let it: Vec<f64> = d.it.iter().cloned().collect();
    let inv: Vec<f64> = ix.iter().zip(&iy).map(|(x, y)| 1.0 / (x * x + y * y + a2)).collect();
    let n = rows * cols;
    let (mut u, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (mut nu, mut nv) = (vec![0.0; n], vec![0.0; n]);
    let mut sweeps = 0;
    for _ in 0..p.max_iters {
        sweeps += 1;
        let mut change: f64 = 0.0;
        for r in 0..rows {
            let up = r.saturating_sub(1) * cols;
            let down = (r + 1).min(rows - 1) * cols;
            let row = r * cols;
            for c in 0..cols {
                let (left, right) = (c.saturating_sub(1), (c + 1).min(cols - 1));
                let i = row + c;
                let ub = 0.25 * (u[up + c] + u[down + c] + u[row + left] + u[row + right]);
                let vb = 0.25 * (v[up + c] + v[down + c] + v[row + left] + v[row + right]);
                let t = (ix[i] * ub + iy[i] * vb + it[i]) * inv[i];
                nu[i] = ub - ix[i] * t;
                nv[i] = vb - iy[i] * t;
                change = change.max((nu[i] - u[i]).abs()).max((nv[i] - v[i]).abs());
            }
        }
        std::mem::swap(&mut u, &mut nu);
        std::mem::swap(&mut v, &mut nv);
        if change < p.tol {
            break;
        }
    }
    let mut f = VelocityField::zeros((rows, cols));
    f.u = Array2::from_shape_vec((rows, cols), u).expect("field shape");
    f.v = Array2::from_shape_vec((rows, cols), v).expect("field shape");
    Ok((f, sweeps))
}

pub(crate) struct HornSchunck(pub HornSchunckParams);

impl FlowEstimator for HornSchunck {
    fn name(&self) -> &'static str {
        "hs"
    }

    fn params(&self) -> FlowParams {
        FlowParams::Hs(self.0)
    }

    fn estimate(&self, prev: &Array2<f64>, curr: &Array2<f64>) -> Result<VelocityField> {
        horn_schunck(prev, curr, &self.0).map(|(f, _)| f)
    }
}

pub(crate) struct HornSchunckMethod;

impl FlowMethod for HornSchunckMethod {
    fn name(&self) -> &'static str {
        "hs"
    }

    fn description(&self) -> &'static str {
        "Horn-Schunck global smoothness"
    }

    fn default_params(&self) -> FlowParams {
        FlowParams::Hs(HornSchunckParams::default())
    }

    fn search_space(&self) -> Vec<ParamRange> {
        vec![
            ParamRange::new("alpha", 0.05, 50.0, ParamScale::Log, ParamKind::Real),
            ParamRange::new("sigma", 0.5, 2.0, ParamScale::Linear, ParamKind::Real),
        ]
    }

    fn params_from(&self, x: &[f64]) -> Result<FlowParams> {
        check_len(x, 2)?;
        Ok(FlowParams::Hs(HornSchunckParams {
            alpha: x[0],
            sigma: x[1],
            ..Default::default()
        }))
    }

    fn values_of(&self, p: &FlowParams) -> Result<Vec<f64>> {
        match p {
            FlowParams::Hs(p) => Ok(vec![p.alpha, p.sigma]),
            other => wrong_params("hs", other),
        }
    }

    fn build(&self, p: &FlowParams) -> Result<Box<dyn FlowEstimator>> {
        match p {
            FlowParams::Hs(p) => {
                p.validate()?;
                Ok(Box::new(HornSchunck(*p)))
            }
            other => wrong_params("hs", other),
        }
    }
}
