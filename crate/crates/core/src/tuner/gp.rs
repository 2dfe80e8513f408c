use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};

/// Matérn covariance of half-integer order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Matern32,
    Matern52,
    /// Order p + 1/2 through the finite modified Bessel sum.
    HalfInteger(u32),
}

impl Kernel {
    pub fn nu(&self) -> f64 {
        match self {
            Kernel::Matern32 => 1.5,
            Kernel::Matern52 => 2.5,
            Kernel::HalfInteger(p) => *p as f64 + 0.5,
        }
    }
}

/// Modified Bessel function of the second kind at order p + 1/2.
pub fn bessel_k_half(p: u32, z: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = 1.0;
    // term_k = (p + k)! / (k! (p - k)!) / (2z)^k
    for k in 0..=p {
        if k > 0 {
            term *= ((p + k) * (p + 1 - k)) as f64 / (k as f64 * 2.0 * z);
        }
        sum += term;
    }
    (std::f64::consts::PI / (2.0 * z)).sqrt() * (-z).exp() * sum
}

/// Unit-variance Matérn covariance at distance `r`.
pub fn matern(r: f64, kernel: Kernel, ell: f64) -> f64 {
    let s = r / ell;
    match kernel {
        Kernel::Matern32 => {
            let a = 3f64.sqrt() * s;
            (1.0 + a) * (-a).exp()
        }
        Kernel::Matern52 => {
            let a = 5f64.sqrt() * s;
            (1.0 + a + a * a / 3.0) * (-a).exp()
        }
        Kernel::HalfInteger(p) => {
            let nu = p as f64 + 0.5;
            let z = (2.0 * nu).sqrt() * s;
            if z < 1e-12 {
                return 1.0;
            }
            2f64.powf(1.0 - nu) / gamma(nu) * z.powf(nu) * bessel_k_half(p, z)
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Gaussian-process posterior with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct GpState {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub kernel: Kernel,
    pub ell: f64,
    pub noise: f64,
    /// Diagonal jitter actually added on top of the noise.
    pub jitter: f64,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

impl GpState {
    pub fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, kernel: Kernel, ell: f64, noise: f64) -> Result<Self> {
        if x.len() != y.len() {
            return invalid("inputs and targets differ in length");
        }
        if !(ell > 0.0) || !(noise >= 0.0) {
            return invalid("length-scale must be positive and noise non-negative");
        }
        let n = x.len();
        let k = DMatrix::from_fn(n, n, |i, j| matern(distance(&x[i], &x[j]), kernel, ell));
        let yv = DVector::from_column_slice(&y);
        let mut jitter = 0.0;
        let mut attempt = 1e-12;
        let chol = loop {
            let mut m = k.clone();
            for i in 0..n {
                m[(i, i)] += noise + jitter;
            }
            if let Some(c) = Cholesky::new(m) {
                break c;
            }
            if attempt > 1e-2 {
                return Err(Error::NotPositiveDefinite { jitter });
            }
            jitter = attempt;
            attempt *= 10.0;
        };
        let alpha = if n > 0 { chol.solve(&yv) } else { yv };
        Ok(GpState {
            x,
            y,
            kernel,
            ell,
            noise,
            jitter,
            chol: (n > 0).then_some(chol),
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn cross(&self, q: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.x.iter().map(|xi| matern(distance(xi, q), self.kernel, self.ell)))
    }

    /// Posterior mean and variance of the latent function at `q`.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let Some(chol) = &self.chol else {
            return (0.0, 1.0);
        };
        let ks = self.cross(q);
        let mean = ks.dot(&self.alpha);
        let v = chol.l().solve_lower_triangular(&ks).expect("triangular factor");
        (mean, (1.0 - v.dot(&v)).max(0.0))
    }

    /// Log marginal likelihood of the training targets.
    pub fn log_evidence(&self) -> f64 {
        let n = self.len() as f64;
        let Some(chol) = &self.chol else {
            return 0.0;
        };
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let fit = DVector::from_column_slice(&self.y).dot(&self.alpha);
        -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet - 0.5 * fit
    }
}

/// Posterior variance below which a point counts as observed.
const VARIANCE_FLOOR: f64 = 1e-12;

/// Expected improvement over `best` for minimization.
pub fn expected_improvement(gp: &GpState, q: &[f64], best: f64, xi: f64) -> f64 {
    let (mu, var) = gp.predict(q);
    ei_closed_form(mu, var, best, xi)
}

pub fn ei_closed_form(mu: f64, var: f64, best: f64, xi: f64) -> f64 {
    if var <= VARIANCE_FLOOR {
        return 0.0;
    }
    let sigma = var.sqrt();
    let g = (best - mu + xi) / sigma;
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    (sigma * (g * n.cdf(g) + n.pdf(g))).max(0.0)
}
