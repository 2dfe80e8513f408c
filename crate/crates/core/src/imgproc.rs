//! Small image-processing helpers on `Array2<f64>` grids (row, column).

use ndarray::Array2;

/// Odd window length covering six standard deviations.
pub fn gaussian_window(sigma: f64) -> usize {
    let w = (6.0 * sigma).round().max(1.0) as usize;
    if w % 2 == 0 {
        w + 1
    } else {
        w
    }
}

/// Unnormalized sampled Gaussian on an odd window centered at zero.
pub fn gaussian_kernel(sigma: f64, window: usize) -> Vec<f64> {
    let h = (window / 2) as isize;
    (-h..=h)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Separable filter along one axis, dividing by the sum of the weights that
/// fall inside the image.
fn filter_axis_normalized(img: &Array2<f64>, kernel: &[f64], axis: usize) -> Array2<f64> {
    let (rows, cols) = img.dim();
    let h = (kernel.len() / 2) as isize;
    let mut out = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let off = k as isize - h;
                let (rr, cc) = if axis == 0 {
                    (r as isize + off, c as isize)
                } else {
                    (r as isize, c as isize + off)
                };
                if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                    acc += w * img[(rr as usize, cc as usize)];
                    wsum += w;
                }
            }
            out[(r, c)] = if wsum > 0.0 { acc / wsum } else { 0.0 };
        }
    }
    out
}

/// Gaussian blur normalized by the in-bounds kernel mass, so constant
/// images stay constant up to the border.
pub fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma, gaussian_window(sigma));
    let tmp = filter_axis_normalized(img, &k, 0);
    filter_axis_normalized(&tmp, &k, 1)
}

#[inline]
pub fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable correlation with replicate padding: `ky` along rows, `kx`
/// along columns. Kernels have odd length.
pub fn correlate_separable(img: &Array2<f64>, ky: &[f64], kx: &[f64]) -> Array2<f64> {
    let (rows, cols) = img.dim();
    let (hy, hx) = (ky.len() / 2, kx.len() / 2);
    let mut tmp = vec![0.0; rows * cols];
    let mut line = vec![0.0; cols.max(rows) + 2 * hx.max(hy)];
    for r in 0..rows {
        let padded = &mut line[..cols + 2 * hx];
        for (i, v) in padded.iter_mut().enumerate() {
            *v = img[(r, clamp_index(i as isize - hx as isize, cols))];
        }
        for c in 0..cols {
            tmp[r * cols + c] = kx.iter().zip(&padded[c..]).map(|(w, v)| w * v).sum();
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for c in 0..cols {
        let padded = &mut line[..rows + 2 * hy];
        for (i, v) in padded.iter_mut().enumerate() {
            *v = tmp[clamp_index(i as isize - hy as isize, rows) * cols + c];
        }
        for r in 0..rows {
            out[(r, c)] = ky.iter().zip(&padded[r..]).map(|(w, v)| w * v).sum();
        }
    }
    out
}

/// Bilinear sample at column `x`, row `y`, or `None` outside the grid.
pub fn bilinear(img: &Array2<f64>, x: f64, y: f64) -> Option<f64> {
    let (rows, cols) = img.dim();
    if !(x >= 0.0 && y >= 0.0 && x <= (cols - 1) as f64 && y <= (rows - 1) as f64) {
        return None;
    }
    Some(bilinear_clamped(img, x, y))
}

/// Bilinear sample with coordinates clamped to the grid.
pub fn bilinear_clamped(img: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (rows, cols) = img.dim();
    let x = x.clamp(0.0, (cols - 1) as f64);
    let y = y.clamp(0.0, (rows - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(cols - 1);
    let y1 = (y0 + 1).min(rows - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = img[(y0, x0)] * (1.0 - fx) + img[(y0, x1)] * fx;
    let bottom = img[(y1, x0)] * (1.0 - fx) + img[(y1, x1)] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples to a new shape by bilinear interpolation of pixel centers.
pub fn resize_bilinear(img: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    let (r0, c0) = img.dim();
    let sy = r0 as f64 / rows as f64;
    let sx = c0 as f64 / cols as f64;
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let y = (r as f64 + 0.5) * sy - 0.5;
        let x = (c as f64 + 0.5) * sx - 0.5;
        bilinear_clamped(img, x, y)
    })
}

/// Median of a slice (mean of the two central values for even length).
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn min_max(img: &Array2<f64>) -> (f64, f64) {
    img.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn window_is_odd() {
        assert_eq!(gaussian_window(1.0), 7);
        assert_eq!(gaussian_window(2.0), 13);
        assert_eq!(gaussian_window(0.7), 5);
        assert_eq!(gaussian_window(0.1), 1);
    }

    #[test]
    fn blur_keeps_constants() {
        let img = Array2::from_elem((9, 11), 3.5);
        let b = gaussian_blur(&img, 1.3);
        for v in b.iter() {
            assert_abs_diff_eq!(*v, 3.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn bilinear_reproduces_planes() {
        let img = Array2::from_shape_fn((5, 6), |(r, c)| 2.0 * r as f64 - 0.5 * c as f64 + 1.0);
        let v = bilinear(&img, 2.25, 3.5).unwrap();
        assert_abs_diff_eq!(v, 2.0 * 3.5 - 0.5 * 2.25 + 1.0, epsilon = 1e-12);
        assert!(bilinear(&img, -0.1, 1.0).is_none());
    }

    #[test]
    fn separable_correlation_of_ramp() {
        let img = Array2::from_shape_fn((6, 7), |(_, c)| c as f64);
        let d = correlate_separable(&img, &[1.0, 2.0, 1.0], &[-1.0, 0.0, 1.0]);
        assert_abs_diff_eq!(d[(3, 3)], 8.0, epsilon = 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
