//! Sky-condition classification from pressure, clear-sky index and frame
//! statistics, a persistence filter over recent labels, and the window
//! artifact estimated from clear-sky frames.

use std::collections::VecDeque;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imgproc::median;
use crate::poly::PolyExpansion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SkyClass {
    Clear = 0,
    Cumulus = 1,
    Stratus = 2,
    Nimbus = 3,
}

impl SkyClass {
    pub const ALL: [SkyClass; 4] = [SkyClass::Clear, SkyClass::Cumulus, SkyClass::Stratus, SkyClass::Nimbus];

    pub fn from_index(i: usize) -> Result<Self> {
        SkyClass::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("class index {i} outside 0..4")))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SkyClass::Clear => "clear",
            SkyClass::Cumulus => "cumulus",
            SkyClass::Stratus => "stratus",
            SkyClass::Nimbus => "nimbus",
        }
    }
}

/// Mean, variance, skewness and kurtosis (population moments; kurtosis is
/// not excess-adjusted). Zero-variance samples get zero skewness and
/// kurtosis.
pub fn moments(values: &[f64]) -> [f64; 4] {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return [mean, 0.0, 0.0, 0.0];
    }
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    [mean, m2, m3 / m2.powf(1.5), m4 / (m2 * m2)]
}

/// Classifier inputs: pressure, clear-sky index, temperature moments
/// (mean, variance, skewness, kurtosis), velocity-magnitude moments
/// (mean, variance, kurtosis) and a constant 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkyFeatures(pub [f64; 10]);

impl SkyFeatures {
    pub fn new(pressure: f64, csi: f64, temperatures: &[f64], speeds: &[f64]) -> Self {
        let t = moments(temperatures);
        let m = moments(speeds);
        SkyFeatures([pressure, csi, t[0], t[1], t[2], t[3], m[0], m[1], m[3], 1.0])
    }

    /// The nine non-constant statistics.
    pub fn stats(&self) -> &[f64] {
        &self.0[..9]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SvcLoss {
    /// Squared hinge (L2 loss): unbounded dual variables with a diagonal
    /// shift of 1/(2C).
    #[default]
    SquaredHinge,
    /// Hinge (L1 loss): dual variables boxed in [0, C].
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvcOptions {
    pub c: f64,
    pub order: usize,
    pub tol: f64,
    pub max_epochs: usize,
    pub loss: SvcLoss,
    pub seed: u64,
}

impl Default for SvcOptions {
    fn default() -> Self {
        SvcOptions {
            c: 1.0,
            order: 1,
            tol: 1e-4,
            max_epochs: 1000,
            loss: SvcLoss::SquaredHinge,
            seed: 0,
        }
    }
}

pub const SVC_MODEL_FORMAT: &str = "skyflow.svc-model";
pub const SVC_MODEL_VERSION: u32 = 1;

/// One-vs-all linear classifiers on standardized polynomial features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvcModel {
    pub format: String,
    pub version: u32,
    pub options: SvcOptions,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub expansion: PolyExpansion,
    /// One weight vector per class.
    pub weights: Vec<Vec<f64>>,
}

impl SvcModel {
    pub fn features(&self, x: &SkyFeatures) -> Vec<f64> {
        let z: Vec<f64> = x
            .stats()
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        self.expansion.expand(&z)
    }

    pub fn scores(&self, x: &SkyFeatures) -> Vec<f64> {
        let phi = self.features(x);
        self.weights
            .iter()
            .map(|w| w.iter().zip(&phi).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: SvcModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.format != SVC_MODEL_FORMAT || m.version != SVC_MODEL_VERSION {
            return Err(Error::Format(format!("{}: expected {SVC_MODEL_FORMAT} v{SVC_MODEL_VERSION}", path.display())));
        }
        Ok(m)
    }
}

/// Primal objective of one binary classifier for labels in {-1, +1}.
pub fn svc_objective(w: &[f64], x: &[Vec<f64>], y: &[f64], c: f64, loss: SvcLoss) -> f64 {
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| {
            let m = (1.0 - yi * dot(w, xi)).max(0.0);
            match loss {
                SvcLoss::SquaredHinge => m * m,
                SvcLoss::Hinge => m,
            }
        })
        .sum();
    reg + c * data
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dual coordinate descent for one binary linear classifier.
pub fn train_binary(x: &[Vec<f64>], y: &[f64], opts: &SvcOptions, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = x.len();
    let d = x.first().map_or(0, |r| r.len());
    let (diag, upper) = match opts.loss {
        SvcLoss::SquaredHinge => (0.5 / opts.c, f64::INFINITY),
        SvcLoss::Hinge => (0.0, opts.c),
    };
    let qii: Vec<f64> = x.iter().map(|xi| dot(xi, xi) + diag).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..opts.max_epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        let mut max_pg = f64::NEG_INFINITY;
        let mut min_pg = f64::INFINITY;
        for &i in &order {
            if qii[i] <= 0.0 {
                continue;
            }
            let g = y[i] * dot(&w, &x[i]) - 1.0 + diag * alpha[i];
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] >= upper {
                g.max(0.0)
            } else {
                g
            };
            max_pg = max_pg.max(pg);
            min_pg = min_pg.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, upper);
                let delta = (alpha[i] - old) * y[i];
                for (wk, xk) in w.iter_mut().zip(&x[i]) {
                    *wk += delta * xk;
                }
            }
        }
        if max_pg - min_pg < opts.tol {
            break;
        }
    }
    w
}

/// Trains one classifier per class against the rest.
pub fn svc_train(samples: &[(SkyFeatures, SkyClass)], opts: &SvcOptions) -> Result<SvcModel> {
    if samples.is_empty() {
        return invalid("no training samples");
    }
    if !(opts.c > 0.0) {
        return invalid("C must be positive");
    }
    let first = samples[0].1;
    if samples.iter().all(|(_, l)| *l == first) {
        return Err(Error::Degenerate("training labels contain a single class".into()));
    }
    let stats: Vec<Vec<f64>> = samples.iter().map(|(f, _)| f.stats().to_vec()).collect();
    let st = crate::poly::Standardizer::fit(&stats)?;
    let expansion = PolyExpansion::new(9, opts.order);
    let x: Vec<Vec<f64>> = stats.iter().map(|s| expansion.expand(&st.apply(s))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let weights = SkyClass::ALL
        .iter()
        .map(|&cls| {
            let y: Vec<f64> = samples.iter().map(|(_, l)| if *l == cls { 1.0 } else { -1.0 }).collect();
            train_binary(&x, &y, opts, &mut rng)
        })
        .collect();
    Ok(SvcModel {
        format: SVC_MODEL_FORMAT.into(),
        version: SVC_MODEL_VERSION,
        options: *opts,
        mean: st.mean,
        std: st.std,
        expansion,
        weights,
    })
}

/// Class with the largest score; ties go to the lowest index.
pub fn svc_predict(model: &SvcModel, x: &SkyFeatures) -> SkyClass {
    let scores = model.scores(x);
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    SkyClass::ALL[best]
}

/// Mode of the last `capacity` raw labels.
#[derive(Debug, Clone)]
pub struct PersistenceFilter {
    capacity: usize,
    recent: VecDeque<SkyClass>,
}

impl PersistenceFilter {
    pub fn new(capacity: usize) -> Self {
        PersistenceFilter {
            capacity: capacity.max(1),
            recent: VecDeque::new(),
        }
    }

    /// Records a raw label and returns the filtered one. Ties go to the
    /// lower label.
    pub fn push(&mut self, label: SkyClass) -> SkyClass {
        if self.recent.len() == self.capacity {
            self.recent.pop_front();
        }
        self.recent.push_back(label);
        let mut counts = [0usize; 4];
        for l in &self.recent {
            counts[l.index()] += 1;
        }
        let mut best = 0;
        for i in 1..4 {
            if counts[i] > counts[best] {
                best = i;
            }
        }
        SkyClass::ALL[best]
    }
}

/// Filters a whole sequence of raw labels.
pub fn persistent_classes(raw: &[SkyClass], capacity: usize) -> Vec<SkyClass> {
    let mut f = PersistenceFilter::new(capacity);
    raw.iter().map(|&l| f.push(l)).collect()
}

/// Clear-sky index deviation below which a clear frame is kept for the
/// window estimate.
pub const CSI_GATE: f64 = 0.05;

/// Tracks clear-sky frames and estimates the static window artifact as
/// their pixelwise median.
#[derive(Debug, Clone)]
pub struct WindowModel {
    /// Frames required before the artifact is defined.
    pub min_frames: usize,
    /// Most frames kept; the oldest is dropped beyond this.
    pub max_frames: usize,
    frames: VecDeque<Array2<f64>>,
    artifact: Option<Array2<f64>>,
}

impl WindowModel {
    pub fn new(min_frames: usize) -> Self {
        WindowModel {
            min_frames: min_frames.max(1),
            max_frames: 4 * min_frames.max(1),
            frames: VecDeque::new(),
            artifact: None,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn artifact(&self) -> Option<&Array2<f64>> {
        self.artifact.as_ref()
    }

    /// Offers a frame with its filtered class and recent clear-sky index
    /// samples. Returns whether it was kept.
    pub fn update(&mut self, frame: &Array2<f64>, class: SkyClass, csi_window: &[f64]) -> Result<bool> {
        if let Some(f) = self.frames.front() {
            if f.dim() != frame.dim() {
                return invalid("frame shape differs from the window set");
            }
        }
        if class != SkyClass::Clear || csi_window.is_empty() {
            return Ok(false);
        }
        let mean = csi_window.iter().sum::<f64>() / csi_window.len() as f64;
        if (1.0 - mean).abs() > CSI_GATE {
            return Ok(false);
        }
        self.frames.push_back(frame.clone());
        if self.frames.len() > self.max_frames {
            self.frames.pop_front();
        }
        if self.frames.len() >= self.min_frames {
            self.artifact = Some(self.median());
        }
        Ok(true)
    }

    fn median(&self) -> Array2<f64> {
        let dim = self.frames[0].dim();
        let mut buf = vec![0.0; self.frames.len()];
        Array2::from_shape_fn(dim, |idx| {
            for (b, f) in buf.iter_mut().zip(&self.frames) {
                *b = f[idx];
            }
            median(&mut buf)
        })
    }

    /// Keeps `min_frames` uniformly sampled frames for the next day.
    pub fn end_of_day(&mut self, seed: u64) {
        if self.frames.len() > self.min_frames {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut keep: Vec<usize> = sample(&mut rng, self.frames.len(), self.min_frames).into_vec();
            keep.sort_unstable();
            let frames: VecDeque<Array2<f64>> = keep.iter().map(|&i| self.frames[i].clone()).collect();
            self.frames = frames;
            self.artifact = Some(self.median());
        }
    }
}

/// Removes the window artifact. Without an artifact the frame passes
/// through unchanged.
pub fn apply_window(frame: &Array2<f64>, artifact: Option<&Array2<f64>>) -> Result<Array2<f64>> {
    match artifact {
        None => {
            log::warn!("window artifact undefined, frame left unchanged");
            Ok(frame.clone())
        }
        Some(w) if w.dim() != frame.dim() => invalid("artifact shape differs from frame"),
        Some(w) => Ok(frame - w),
    }
}

/// Intensity span mapped onto the 8-bit range.
pub const NORMALIZATION_SPAN: f64 = 9700.0;

/// Maps `(I - min) / 9700 * 256` onto 0..=255.
pub fn normalize_8bit(frame: &Array2<f64>) -> Array2<u8> {
    let min = frame.iter().cloned().fold(f64::INFINITY, f64::min);
    frame.mapv(|v| ((v - min) / NORMALIZATION_SPAN * 256.0).floor().clamp(0.0, 255.0) as u8)
}
