use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imgproc::gaussian_blur;

/// Luma conversion of an RGB capture with an additive per-channel offset.
pub fn rgb_to_gray(r: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>, offset: f64) -> Array2<f64> {
    let mut out = Array2::zeros(r.dim());
    ndarray::Zip::from(&mut out)
        .and(r)
        .and(g)
        .and(b)
        .for_each(|o, &r, &g, &b| *o = 0.299 * (r + offset) + 0.587 * (g + offset) + 0.114 * (b + offset));
    out
}

/// Grayscale frames ordered by increasing exposure, with the E-1 radii
/// (pixels, strictly increasing) at which each exposure hands over to the
/// next, centered on the sun.
#[derive(Debug, Clone)]
pub struct ExposureStack {
    pub frames: Vec<Array2<f64>>,
    pub radii: Vec<f64>,
    /// Sun position (column, row).
    pub center: (f64, f64),
}

impl ExposureStack {
    pub fn new(frames: Vec<Array2<f64>>, radii: Vec<f64>, center: (f64, f64)) -> Result<Self> {
        let stack = ExposureStack { frames, radii, center };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return invalid("exposure stack is empty");
        }
        let dim = self.frames[0].dim();
        if self.frames.iter().any(|f| f.dim() != dim) {
            return invalid("exposure frames differ in shape");
        }
        if self.radii.len() + 1 != self.frames.len() {
            return invalid(format!(
                "{} exposures need {} radii, got {}",
                self.frames.len(),
                self.frames.len() - 1,
                self.radii.len()
            ));
        }
        if self.radii.windows(2).any(|w| w[1] <= w[0]) || self.radii.iter().any(|&r| !(r > 0.0)) {
            return invalid("radii must be positive and strictly increasing");
        }
        let half_diag = 0.5 * ((dim.0 * dim.0 + dim.1 * dim.1) as f64).sqrt();
        if self.radii.iter().any(|&r| r >= half_diag) {
            return invalid("radius beyond the image half-diagonal");
        }
        Ok(())
    }
}

/// Radii equally spaced from 15 px up to the inscribed circle.
pub fn default_radii(exposures: usize, rows: usize, cols: usize) -> Vec<f64> {
    let k = exposures.saturating_sub(1);
    let inscribed = rows.min(cols) as f64 / 2.0;
    (0..k)
        .map(|i| 15.0 + (inscribed - 15.0) * i as f64 / k as f64)
        .collect()
}

/// How the exposure ratio at a seam is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SeamWeighting {
    /// Both exposures are averaged over the same band of pixels within
    /// `ring_eps` of the seam.
    #[default]
    SharedBand,
    /// Sum of the shorter exposure inside the seam over the sum of the
    /// longer exposure outside it.
    SplitRings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionOptions {
    pub blur_sigma: f64,
    pub ring_eps: f64,
    pub seam: SeamWeighting,
}

impl Default for FusionOptions {
    fn default() -> Self {
        FusionOptions {
            blur_sigma: 2.0,
            ring_eps: 2.0,
            seam: SeamWeighting::SharedBand,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionResult {
    /// Fused frame on the 16-bit scale.
    pub frame: Array2<f64>,
    /// Exposure weights, the first fixed at 1.
    pub alphas: Vec<f64>,
    /// Fused values before rescaling and clamping.
    pub raw: Array2<f64>,
}

/// Binary disc of radius `radius` around `center` (column, row).
pub fn disc_mask(dim: (usize, usize), center: (f64, f64), radius: f64) -> Array2<f64> {
    Array2::from_shape_fn(dim, |(r, c)| {
        let dx = c as f64 - center.0;
        let dy = r as f64 - center.1;
        if dx * dx + dy * dy <= radius * radius {
            1.0
        } else {
            0.0
        }
    })
}

fn dist2(center: (f64, f64), r: usize, c: usize) -> f64 {
    let dx = c as f64 - center.0;
    let dy = r as f64 - center.1;
    dx * dx + dy * dy
}

fn ring_sum(img: &Array2<f64>, center: (f64, f64), inner: f64, outer: f64) -> Option<f64> {
    let (lo, hi) = (inner.max(0.0).powi(2), outer * outer);
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((r, c), v) in img.indexed_iter() {
        let d = dist2(center, r, c);
        if d > lo && d <= hi {
            sum += v;
            count += 1;
        }
    }
    (count > 0).then_some(sum)
}

fn ratio_at_seam(shorter: &Array2<f64>, longer: &Array2<f64>, center: (f64, f64), radius: f64, opts: &FusionOptions) -> Result<f64> {
    let eps = opts.ring_eps;
    let (num, den) = match opts.seam {
        SeamWeighting::SharedBand => {
            let a = ring_sum(shorter, center, radius - eps, radius + eps);
            let b = ring_sum(longer, center, radius - eps, radius + eps);
            match (a, b) {
                (Some(sa), Some(sb)) => (sa, sb),
                _ => return invalid(format!("seam band at radius {radius} is empty")),
            }
        }
        SeamWeighting::SplitRings => {
            let a = ring_sum(shorter, center, radius - eps, radius);
            let b = ring_sum(longer, center, radius, radius + eps);
            match (a, b) {
                (Some(sa), Some(sb)) => (sa, sb),
                _ => return invalid(format!("seam ring at radius {radius} is empty")),
            }
        }
    };
    if den == 0.0 {
        return invalid(format!("longer exposure is zero around radius {radius}"));
    }
    Ok(num / den)
}

/// Scale from the merged value to the 16-bit range.
pub const FUSION_SCALE: f64 = 65536.0 / 225.0;

/// Merges an exposure stack into one frame on the 16-bit scale.
///
/// Exposure `e` covers the annulus between the blurred discs at radii
/// `e - 1` and `e`; within it the first `e` exposures, brought to a common
/// scale by the seam ratios, are averaged. Pixels outside the inscribed
/// circle are set to zero.
pub fn fuse_exposures(stack: &ExposureStack, opts: &FusionOptions) -> Result<FusionResult> {
    stack.validate()?;
    let e_count = stack.frames.len();
    let dim = stack.frames[0].dim();
    let mut alphas = vec![1.0];
    for e in 0..e_count - 1 {
        let ratio = ratio_at_seam(&stack.frames[e], &stack.frames[e + 1], stack.center, stack.radii[e], opts)?;
        alphas.push(alphas[e] * ratio);
    }
    let masks: Vec<Array2<f64>> = std::iter::once(Array2::zeros(dim))
        .chain(
            stack
                .radii
                .iter()
                .map(|&r| gaussian_blur(&disc_mask(dim, stack.center, r), opts.blur_sigma)),
        )
        .chain(std::iter::once(Array2::from_elem(dim, 1.0)))
        .collect();
    let mut raw = Array2::<f64>::zeros(dim);
    let mut cumulative = Array2::<f64>::zeros(dim);
    for e in 0..e_count {
        cumulative.scaled_add(alphas[e], &stack.frames[e]);
        let k = (e + 1) as f64;
        ndarray::Zip::from(&mut raw)
            .and(&masks[e + 1])
            .and(&masks[e])
            .and(&cumulative)
            .for_each(|x, &outer, &inner, &sum| *x += outer * (1.0 - inner) * sum / k);
    }
    let inscribed = dim.0.min(dim.1) as f64 / 2.0;
    let frame = Array2::from_shape_fn(dim, |(r, c)| {
        if dist2(stack.center, r, c) > inscribed * inscribed {
            0.0
        } else {
            (raw[(r, c)] * FUSION_SCALE).clamp(0.0, 65536.0)
        }
    });
    Ok(FusionResult { frame, alphas, raw })
}

/// Per-pixel sum of the blending coefficients of all regions.
pub fn blend_coverage(stack: &ExposureStack, opts: &FusionOptions) -> Array2<f64> {
    let dim = stack.frames[0].dim();
    let mut masks = vec![Array2::zeros(dim)];
    masks.extend(
        stack
            .radii
            .iter()
            .map(|&r| gaussian_blur(&disc_mask(dim, stack.center, r), opts.blur_sigma)),
    );
    masks.push(Array2::from_elem(dim, 1.0));
    let mut cov = Array2::zeros(dim);
    for e in 0..stack.frames.len() {
        ndarray::Zip::from(&mut cov)
            .and(&masks[e + 1])
            .and(&masks[e])
            .for_each(|c, &o, &i| *c += o * (1.0 - i));
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn textured(dim: (usize, usize)) -> Array2<f64> {
        Array2::from_shape_fn(dim, |(r, c)| 60.0 + 20.0 * ((r as f64) * 0.37).sin() * ((c as f64) * 0.21).cos())
    }

    #[test]
    fn identical_frames_fuse_to_rescaled_frame() {
        let dim = (61, 61);
        let f = textured(dim);
        let stack = ExposureStack::new(vec![f.clone(), f.clone()], vec![15.0], (30.0, 30.0)).unwrap();
        let out = fuse_exposures(&stack, &FusionOptions::default()).unwrap();
        assert_abs_diff_eq!(out.alphas[1], 1.0, epsilon = 1e-12);
        for ((r, c), v) in out.raw.indexed_iter() {
            assert_abs_diff_eq!(*v, f[(r, c)], epsilon = 1e-9);
        }
    }

    #[test]
    fn doubled_exposure_gives_half_weight() {
        let dim = (61, 81);
        let f = textured(dim);
        let stack = ExposureStack::new(vec![f.clone(), f.mapv(|v| 2.0 * v)], vec![18.0], (40.0, 30.0)).unwrap();
        let out = fuse_exposures(&stack, &FusionOptions::default()).unwrap();
        assert_abs_diff_eq!(out.alphas[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn output_range_and_outer_zero() {
        let dim = (41, 41);
        let f = Array2::from_elem(dim, 250.0);
        let stack = ExposureStack::new(vec![f.clone(), f.clone(), f], vec![8.0, 14.0], (20.0, 20.0)).unwrap();
        let out = fuse_exposures(&stack, &FusionOptions { blur_sigma: 0.5, ..Default::default() }).unwrap();
        assert!(out.frame.iter().all(|&v| (0.0..=65536.0).contains(&v)));
        assert_eq!(out.frame[(0, 0)], 0.0);
    }

    #[test]
    fn split_rings_differ_from_shared_band_on_texture() {
        let dim = (61, 61);
        let f = textured(dim);
        let stack = ExposureStack::new(vec![f.clone(), f], vec![15.0], (30.0, 30.0)).unwrap();
        let opts = FusionOptions { seam: SeamWeighting::SplitRings, ..Default::default() };
        let out = fuse_exposures(&stack, &opts).unwrap();
        assert!(out.alphas[1] > 0.0);
    }

    #[test]
    fn stack_validation() {
        let f = Array2::zeros((10, 10));
        assert!(ExposureStack::new(vec![f.clone(), f.clone()], vec![], (5.0, 5.0)).is_err());
        assert!(ExposureStack::new(vec![f.clone(), f.clone(), f.clone()], vec![4.0, 3.0], (5.0, 5.0)).is_err());
        assert!(ExposureStack::new(vec![f.clone(), f], vec![100.0], (5.0, 5.0)).is_err());
    }

    #[test]
    fn default_radii_spacing() {
        let r = default_radii(4, 60, 80);
        assert_eq!(r.len(), 3);
        assert_abs_diff_eq!(r[0], 15.0);
        assert_abs_diff_eq!(r[1] - r[0], r[2] - r[1], epsilon = 1e-12);
        assert!(r[2] < 30.0);
    }
}
