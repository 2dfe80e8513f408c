//! Sky frames: duplicate-aware averaging of raw captures, exposure fusion
//! of visible frames, and image and time-series file I/O.

mod fusion;
pub mod io;

pub use fusion::{
    blend_coverage, default_radii, disc_mask, fuse_exposures, rgb_to_gray, ExposureStack, FusionOptions, FusionResult,
    SeamWeighting,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Intensity grid with its capture time and the sun's pixel position
/// (column, row) when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub pixels: Array2<f64>,
    pub timestamp: i64,
    pub sun_pixel: Option<(f64, f64)>,
}

impl Frame {
    pub fn new(pixels: Array2<f64>, timestamp: i64) -> Self {
        Frame {
            pixels,
            timestamp,
            sun_pixel: None,
        }
    }

    pub fn with_sun(mut self, sun: (f64, f64)) -> Self {
        self.sun_pixel = Some(sun);
        self
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    /// Geometric center (column, row).
    pub fn center(&self) -> (f64, f64) {
        let (r, c) = self.dim();
        ((c as f64 - 1.0) / 2.0, (r as f64 - 1.0) / 2.0)
    }
}

/// Normalized cross-correlation of two equally shaped grids.
pub fn ncc(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return invalid(format!("shape mismatch {:?} vs {:?}", a.dim(), b.dim()));
    }
    if a.is_empty() {
        return invalid("empty frames");
    }
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance("normalized cross-correlation"));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Similarity above which two raw frames are treated as the same read.
pub const DUPLICATE_THRESHOLD: f64 = 1.0 - 1e-9;

fn is_duplicate(a: &Array2<f64>, b: &Array2<f64>) -> Result<bool> {
    match ncc(a, b) {
        Ok(r) => Ok(r > DUPLICATE_THRESHOLD),
        Err(Error::ZeroVariance(_)) => Ok(a == b),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone)]
pub struct DedupAverage {
    pub frame: Frame,
    /// Number of distinct frames averaged.
    pub accepted: usize,
    /// Raw frames read from the stream.
    pub consumed: usize,
    /// False when the stream ended before `n` distinct frames were found.
    pub complete: bool,
}

/// Averages the first `n` mutually distinct frames of a capture stream.
///
/// A frame is rejected when its correlation with any accepted frame
/// exceeds [`DUPLICATE_THRESHOLD`]. The output keeps the timestamp and sun
/// position of the first accepted frame.
pub fn dedup_average<I>(frames: I, n: usize) -> Result<DedupAverage>
where
    I: IntoIterator<Item = Frame>,
{
    if n == 0 {
        return invalid("target frame count must be positive");
    }
    let out = average_distinct(frames, n)?;
    if !out.complete {
        log::warn!("capture ended after {} distinct frames, {n} requested", out.accepted);
    }
    Ok(out)
}

/// Averages every distinct frame of a finite capture.
pub fn dedup_average_all<I>(frames: I) -> Result<DedupAverage>
where
    I: IntoIterator<Item = Frame>,
{
    let mut out = average_distinct(frames, usize::MAX)?;
    out.complete = true;
    Ok(out)
}

fn average_distinct<I>(frames: I, n: usize) -> Result<DedupAverage>
where
    I: IntoIterator<Item = Frame>,
{
    let mut accepted: Vec<Frame> = Vec::new();
    let mut consumed = 0;
    for f in frames {
        consumed += 1;
        if let Some(first) = accepted.first() {
            if f.dim() != first.dim() {
                return invalid(format!("frame shape {:?} differs from {:?}", f.dim(), first.dim()));
            }
        }
        let mut dup = false;
        for a in &accepted {
            if is_duplicate(&a.pixels, &f.pixels)? {
                dup = true;
                break;
            }
        }
        if !dup {
            accepted.push(f);
            if accepted.len() == n {
                break;
            }
        }
    }
    if accepted.is_empty() {
        return invalid("capture stream is empty");
    }
    let count = accepted.len();
    let mut sum = Array2::<f64>::zeros(accepted[0].dim());
    for a in &accepted {
        sum += &a.pixels;
    }
    sum /= count as f64;
    let first = &accepted[0];
    Ok(DedupAverage {
        frame: Frame {
            pixels: sum,
            timestamp: first.timestamp,
            sun_pixel: first.sun_pixel,
        },
        accepted: count,
        consumed,
        complete: count == n,
    })
}
