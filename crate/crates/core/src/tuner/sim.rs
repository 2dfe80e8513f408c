use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imgproc::bilinear;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Linear,
    Nonlinear,
}

impl FlowKind {
    pub fn name(&self) -> &'static str {
        match self {
            FlowKind::Linear => "linear",
            FlowKind::Nonlinear => "nonlinear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(FlowKind::Linear),
            "nonlinear" => Ok(FlowKind::Nonlinear),
            other => invalid(format!("unknown flow kind `{other}`")),
        }
    }
}

/// Point singularity smoothed over a Gaussian core (Lamb-Oseen profile).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointFlow {
    pub x: f64,
    pub y: f64,
    /// Circulation for a vortex, volume rate for a source.
    pub strength: f64,
    pub core: f64,
}

impl PointFlow {
    /// Returns (radial unit vector scaled by the core-smoothed 1/(2 pi r)).
    fn kernel(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (dx, dy) = (x - self.x, y - self.y);
        let r2 = dx * dx + dy * dy;
        if r2 == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let f = self.strength * (1.0 - (-r2 / (self.core * self.core)).exp()) / (2.0 * PI * r2);
        (dx, dy, f)
    }
}

/// Analytic velocity field in pixels per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFlow {
    pub kind: FlowKind,
    pub uniform: (f64, f64),
    pub vortex: Option<PointFlow>,
    pub source: Option<PointFlow>,
}

impl SimFlow {
    pub fn linear(u: f64, v: f64) -> Self {
        SimFlow {
            kind: FlowKind::Linear,
            uniform: (u, v),
            vortex: None,
            source: None,
        }
    }

    pub fn velocity(&self, x: f64, y: f64) -> (f64, f64) {
        let (mut u, mut v) = self.uniform;
        if let Some(p) = &self.vortex {
            let (dx, dy, f) = p.kernel(x, y);
            u -= f * dy;
            v += f * dx;
        }
        if let Some(p) = &self.source {
            let (dx, dy, f) = p.kernel(x, y);
            u += f * dx;
            v += f * dy;
        }
        (u, v)
    }

    /// Largest speed on a one-pixel lattice over the domain.
    pub fn max_speed(&self, rows: usize, cols: usize) -> f64 {
        let mut m: f64 = 0.0;
        for r in 0..rows {
            for c in 0..cols {
                let (u, v) = self.velocity(c as f64, r as f64);
                m = m.max(u.hypot(v));
            }
        }
        m
    }
}

/// Creates a flow and checks its speed stays below `max_speed` on the
/// frame.
pub fn make_sim_flow(
    kind: FlowKind,
    uniform: (f64, f64),
    vortex: Option<PointFlow>,
    source: Option<PointFlow>,
    dims: (usize, usize),
    max_speed: f64,
) -> Result<SimFlow> {
    let flow = SimFlow {
        kind,
        uniform,
        vortex: if kind == FlowKind::Linear { None } else { vortex },
        source: if kind == FlowKind::Linear { None } else { source },
    };
    if flow.max_speed(dims.0, dims.1) >= max_speed {
        return invalid("simulated flow exceeds the speed bound");
    }
    Ok(flow)
}

/// The four benchmark flows for a frame of the given shape: two uniform
/// drifts and two drifts perturbed by a weak vortex and source.
pub fn benchmark_flows(rows: usize, cols: usize) -> Vec<SimFlow> {
    let (h, w) = (rows as f64, cols as f64);
    vec![
        SimFlow::linear(0.8, 0.4),
        SimFlow::linear(-0.5, 0.9),
        SimFlow {
            kind: FlowKind::Nonlinear,
            uniform: (0.7, 0.2),
            vortex: Some(PointFlow {
                x: 0.55 * w,
                y: 0.7 * h,
                strength: 12.0,
                core: 10.0,
            }),
            source: Some(PointFlow {
                x: 0.3 * w,
                y: 0.2 * h,
                strength: 8.0,
                core: 10.0,
            }),
        },
        SimFlow {
            kind: FlowKind::Nonlinear,
            uniform: (-0.3, 0.7),
            vortex: Some(PointFlow {
                x: 0.35 * w,
                y: 0.55 * h,
                strength: -12.0,
                core: 10.0,
            }),
            source: Some(PointFlow {
                x: 0.7 * w,
                y: 0.25 * h,
                strength: 8.0,
                core: 10.0,
            }),
        },
    ]
}

/// Synthetic cloud: Gaussian puffs under a smooth circular envelope, zero
/// at the border so it can be pasted on any background.
pub fn cloud_texture(side: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = (side as f64 - 1.0) / 2.0;
    let radius = 0.42 * side as f64;
    let puffs: Vec<(f64, f64, f64, f64)> = (0..side * side / 10)
        .map(|_| {
            let a = rng.gen_range(0.0..2.0 * PI);
            let d = radius * rng.gen::<f64>().sqrt();
            (c + d * a.cos(), c + d * a.sin(), rng.gen_range(8.0..30.0), rng.gen_range(1.0..2.5))
        })
        .collect();
    Array2::from_shape_fn((side, side), |(r, col)| {
        let (x, y) = (col as f64, r as f64);
        let rad = ((x - c).powi(2) + (y - c).powi(2)).sqrt();
        let env = (1.0 - (rad / (radius + 1.0)).powi(2)).max(0.0).powi(2);
        let s: f64 = puffs
            .iter()
            .map(|&(px, py, a, w)| a * (-((x - px).powi(2) + (y - py).powi(2)) / (2.0 * w * w)).exp())
            .sum();
        env * (20.0 + s)
    })
}

/// Intensity-weighted centroid as (column, row).
pub fn mass_center(img: &Array2<f64>) -> Option<(f64, f64)> {
    let (mut m, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for ((r, c), &v) in img.indexed_iter() {
        let v = v.max(0.0);
        m += v;
        sx += v * c as f64;
        sy += v * r as f64;
    }
    (m > 0.0).then(|| (sx / m, sy / m))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvectOptions {
    pub rows: usize,
    pub cols: usize,
    pub background: f64,
    /// Starting mass center as (column, row).
    pub start: (f64, f64),
    /// Standard deviation of additive sensor noise.
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct CloudSequence {
    pub frames: Vec<Array2<f64>>,
    /// Mass center in each frame as (column, row).
    pub centers: Vec<(f64, f64)>,
    /// True displacement from frame k to k + 1.
    pub displacements: Vec<(f64, f64)>,
    /// True when the cloud left the frame before all steps were taken.
    pub truncated: bool,
}

fn paste(texture: &Array2<f64>, tc: (f64, f64), at: (f64, f64), opts: &AdvectOptions, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (ox, oy) = (tc.0 - at.0, tc.1 - at.1);
    let noise = Normal::new(0.0, opts.noise.max(0.0)).expect("noise deviation");
    Array2::from_shape_fn((opts.rows, opts.cols), |(r, c)| {
        let t = bilinear(texture, c as f64 + ox, r as f64 + oy).unwrap_or(0.0);
        let n = if opts.noise > 0.0 { noise.sample(rng) } else { 0.0 };
        opts.background + t + n
    })
}

/// Moves the texture by the flow sampled at its mass center once per frame.
pub fn advect_cloud(texture: &Array2<f64>, flow: &SimFlow, steps: usize, opts: &AdvectOptions) -> Result<CloudSequence> {
    let tc = mass_center(texture).ok_or_else(|| crate::error::Error::InvalidInput("texture has no mass".into()))?;
    let (th, tw) = texture.dim();
    let fits = |p: (f64, f64)| {
        let x0 = p.0 - tc.0;
        let y0 = p.1 - tc.1;
        x0 >= 0.0 && y0 >= 0.0 && x0 + (tw - 1) as f64 <= (opts.cols - 1) as f64 && y0 + (th - 1) as f64 <= (opts.rows - 1) as f64
    };
    if !fits(opts.start) {
        return invalid("texture does not fit the frame at the start point");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut centers = vec![opts.start];
    let mut frames = vec![paste(texture, tc, opts.start, opts, &mut rng)];
    let mut displacements = Vec::new();
    let mut truncated = false;
    for _ in 0..steps {
        let p = *centers.last().expect("start");
        let (u, v) = flow.velocity(p.0, p.1);
        let next = (p.0 + u, p.1 + v);
        if !fits(next) {
            truncated = true;
            break;
        }
        frames.push(paste(texture, tc, next, opts, &mut rng));
        centers.push(next);
        displacements.push((u, v));
    }
    Ok(CloudSequence {
        frames,
        centers,
        displacements,
        truncated,
    })
}
