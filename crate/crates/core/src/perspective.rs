//! Mapping from image pixels to distances on a cloud layer, either over a
//! flat ground or along the great circle of a spherical shell.
//!
//! Image orientation: row 0 is the top of the frame and looks highest in
//! the sky. With the sun at row `y0` and elevation `e0`, row `i` looks at
//! elevation `e0 + (y0 - i) * nu` and column `j` is offset by
//! `(j - x0) * nu` in azimuth, where `nu` is the angle subtended by one
//! pixel.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub n_cols: usize,
    pub n_rows: usize,
    /// Pixel pitch in meters.
    pub pixel_pitch: f64,
    /// Diagonal field of view in radians.
    pub fov_diag: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            n_cols: 80,
            n_rows: 60,
            pixel_pitch: 17e-6,
            fov_diag: 63.75_f64.to_radians(),
        }
    }
}

impl CameraIntrinsics {
    pub fn new(n_cols: usize, n_rows: usize, pixel_pitch: f64, fov_diag: f64) -> Result<Self> {
        let c = CameraIntrinsics {
            n_cols,
            n_rows,
            pixel_pitch,
            fov_diag,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cols == 0 || self.n_rows == 0 {
            return invalid("sensor must have at least one pixel");
        }
        if !(self.pixel_pitch > 0.0) {
            return invalid("pixel pitch must be positive");
        }
        if !(self.fov_diag > 0.0 && self.fov_diag < std::f64::consts::PI) {
            return domain("field of view must lie in (0, pi)");
        }
        Ok(())
    }

    /// Sensor diagonal in meters.
    pub fn diag_size(&self) -> f64 {
        self.pixel_pitch * ((self.n_cols * self.n_cols + self.n_rows * self.n_rows) as f64).sqrt()
    }

    pub fn focal_length(&self) -> f64 {
        focal_length(self.n_cols, self.n_rows, self.pixel_pitch, self.fov_diag)
    }

    /// Radians per pixel.
    pub fn pixel_angle(&self) -> f64 {
        self.fov_diag / ((self.n_cols * self.n_cols + self.n_rows * self.n_rows) as f64).sqrt()
    }

    pub fn fov_vertical(&self) -> f64 {
        self.n_rows as f64 * self.pixel_angle()
    }

    pub fn fov_horizontal(&self) -> f64 {
        self.n_cols as f64 * self.pixel_angle()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.n_cols as f64 - 1.0) / 2.0, (self.n_rows as f64 - 1.0) / 2.0)
    }
}

/// Focal length of a rectilinear lens from the sensor and its diagonal
/// field of view.
pub fn focal_length(n_cols: usize, n_rows: usize, pixel_pitch: f64, fov_diag: f64) -> f64 {
    let w = n_cols as f64 * pixel_pitch;
    let h = n_rows as f64 * pixel_pitch;
    (w * w + h * h).sqrt() / (2.0 * (fov_diag / 2.0).tan())
}

pub const EARTH_RADIUS: f64 = 6_371_000.0;
pub const TROPOPAUSE_HEIGHT: f64 = 12_500.0;
pub const SITE_ALTITUDE: f64 = 1_641.0;

/// Coordinates of every pixel on the cloud layer, in meters relative to the
/// origin pixel, and the per-pixel extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtmoGrid {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    /// Width of each pixel along x (meters per pixel).
    pub dx: Array2<f64>,
    /// Depth of each pixel along y (meters per pixel).
    pub dy: Array2<f64>,
    /// Origin (column, row), the pixel looking at the sun.
    pub origin: (f64, f64),
    pub sun_elevation: f64,
    pub height: f64,
}

impl AtmoGrid {
    pub fn dim(&self) -> (usize, usize) {
        self.x.dim()
    }

    /// Latitude and longitude offsets (radians) of each pixel, with y
    /// pointing along `bearing` (radians from north) at a site of `latitude`.
    pub fn ground_offsets(&self, latitude: f64, bearing: f64) -> (Array2<f64>, Array2<f64>) {
        let (s, c) = bearing.sin_cos();
        let north = &self.y * c - &self.x * s;
        let east = &self.y * s + &self.x * c;
        (north / EARTH_RADIUS, east / (EARTH_RADIUS * latitude.cos()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FlatForm {
    /// Horizontal distances along the cloud layer, `h cot(e)` along y and
    /// `h tan(phi) / sin(e)` along x; the limit of the great-circle grid.
    #[default]
    Limit,
    /// Pixel offsets scaled by `pitch * h / (f sin(e))` on both axes.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    /// Origin (column, row); the image center when `None`.
    pub origin: Option<(f64, f64)>,
    pub flat_form: FlatForm,
    pub earth_radius: f64,
    pub site_altitude: f64,
    /// Use the chord quadratic with the printed constant term
    /// `-h (1 + 2 r)` instead of the exact circle intersection.
    pub printed_quadratic: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            origin: None,
            flat_form: FlatForm::Limit,
            earth_radius: EARTH_RADIUS,
            site_altitude: SITE_ALTITUDE,
            printed_quadratic: false,
        }
    }
}

struct Layout {
    nu: f64,
    x0: f64,
    y0: f64,
    rows: usize,
    cols: usize,
}

fn layout(intr: &CameraIntrinsics, opts: &GridOptions) -> Result<Layout> {
    intr.validate()?;
    let (x0, y0) = opts.origin.unwrap_or_else(|| intr.center());
    Ok(Layout {
        nu: intr.pixel_angle(),
        x0,
        y0,
        rows: intr.n_rows,
        cols: intr.n_cols,
    })
}

impl Layout {
    /// Elevation at fractional row `r`.
    fn elevation(&self, e0: f64, r: f64) -> f64 {
        e0 + (self.y0 - r) * self.nu
    }

    fn azimuth(&self, c: f64) -> f64 {
        (c - self.x0) * self.nu
    }

    fn centered(&self) -> bool {
        self.x0 == (self.cols as f64 - 1.0) / 2.0
    }
}

fn check_rows(lay: &Layout, e0: f64, max: f64) -> Result<()> {
    let top = lay.elevation(e0, -0.5);
    let bottom = lay.elevation(e0, lay.rows as f64 - 0.5);
    if bottom <= 0.0 {
        return domain(format!("rows reach elevation {:.3} rad at or below the horizon", bottom));
    }
    if top >= max {
        return domain(format!("rows reach elevation {:.3} rad, beyond the supported range", top));
    }
    Ok(())
}

/// Builds x, y from functions of fractional (row, column) and forms the
/// per-pixel extents as differences between pixel edges.
fn assemble(
    lay: &Layout,
    y_at: impl Fn(f64) -> f64,
    x_at: impl Fn(f64, f64) -> f64,
    mirror: bool,
) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let (m, n) = (lay.rows, lay.cols);
    let y_center: Vec<f64> = (0..m).map(|i| y_at(i as f64)).collect();
    let y_edge: Vec<f64> = (0..=m).map(|i| y_at(i as f64 - 0.5)).collect();
    let y = Array2::from_shape_fn((m, n), |(i, _)| y_center[i]);
    let dy = Array2::from_shape_fn((m, n), |(i, _)| y_edge[i + 1] - y_edge[i]);
    let mut x = Array2::zeros((m, n));
    let mut dx = Array2::zeros((m, n));
    let half = if mirror { n.div_ceil(2) } else { n };
    for i in 0..m {
        let r = i as f64;
        for j in 0..half {
            x[(i, j)] = x_at(r, j as f64);
            dx[(i, j)] = x_at(r, j as f64 + 0.5) - x_at(r, j as f64 - 0.5);
        }
        for j in half..n {
            x[(i, j)] = -x[(i, n - 1 - j)];
            dx[(i, j)] = dx[(i, n - 1 - j)];
        }
    }
    (x, y, dx, dy)
}

/// Grid for a flat cloud layer at `height` above the camera.
pub fn flat_earth_grid(intr: &CameraIntrinsics, sun_elevation: f64, height: f64, opts: &GridOptions) -> Result<AtmoGrid> {
    if !(height > 0.0) {
        return invalid("cloud height must be positive");
    }
    let lay = layout(intr, opts)?;
    check_rows(&lay, sun_elevation, std::f64::consts::PI)?;
    let e0 = sun_elevation;
    let mirror = lay.centered();
    let (x, y, dx, dy) = match opts.flat_form {
        FlatForm::Limit => {
            let cot0 = 1.0 / e0.tan();
            assemble(
                &lay,
                |r| height * (1.0 / lay.elevation(e0, r).tan() - cot0),
                |r, c| height * lay.azimuth(c).tan() / lay.elevation(e0, r).sin(),
                mirror,
            )
        }
        FlatForm::Printed => {
            let k = intr.pixel_pitch * height / intr.focal_length();
            assemble(
                &lay,
                |r| (r - lay.y0) * k / lay.elevation(e0, r).sin(),
                |r, c| (c - lay.x0) * k / lay.elevation(e0, r).sin(),
                mirror,
            )
        }
    };
    Ok(AtmoGrid {
        x,
        y,
        dx,
        dy,
        origin: (lay.x0, lay.y0),
        sun_elevation,
        height,
    })
}

/// Distance from the camera, at radius `r` from the earth's center, to the
/// shell of radius `r + h` along a ray at elevation `e`.
pub fn slant_range(e: f64, r: f64, h: f64) -> Result<f64> {
    let s = e.sin();
    let disc = r * r * s * s + h * h + 2.0 * r * h;
    if disc < 0.0 {
        return Err(Error::Domain(format!("ray at elevation {e} does not meet the shell")));
    }
    // Rationalized root avoids cancellation when r is much larger than h.
    Ok((h * h + 2.0 * r * h) / (r * s + disc.sqrt()))
}

/// Negative sagitta of a chord of half-length `c` on a circle of
/// radius `radius`.
pub fn signed_sagitta(c: f64, radius: f64) -> Result<f64> {
    let disc = radius * radius - c * c;
    if disc < 0.0 {
        return Err(Error::Domain(format!("chord half-length {c} exceeds radius {radius}")));
    }
    Ok(-(c * c) / (radius + disc.sqrt()))
}

/// Arc length subtended by a chord of half-length `c` (signed), recovered
/// from the chord and its sagitta.
pub fn arc_from_chord(c: f64, radius: f64) -> Result<f64> {
    if c == 0.0 {
        return Ok(0.0);
    }
    let lambda = signed_sagitta(c, radius)?;
    let kappa = lambda + c * c / lambda;
    Ok(kappa / 2.0 * (2.0 * c / kappa).asin())
}

/// Horizontal chord from the quadratic with the printed coefficients.
fn printed_chord(e: f64, r: f64, h: f64) -> Result<f64> {
    let t = e.tan();
    let (a, b, c) = (1.0 + t * t, r * t, -h * (1.0 + 2.0 * r));
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Err(Error::Domain("negative discriminant in chord quadratic".into()));
    }
    Ok((-b + disc.sqrt()) / (2.0 * a))
}

/// Grid for a cloud layer following the spherical shell at `height` above
/// the ground.
pub fn great_circle_grid(intr: &CameraIntrinsics, sun_elevation: f64, height: f64, opts: &GridOptions) -> Result<AtmoGrid> {
    if !(height > 0.0) {
        return invalid("layer height must be positive");
    }
    if !(opts.earth_radius > 0.0) {
        return invalid("earth radius must be positive");
    }
    let lay = layout(intr, opts)?;
    let r = opts.earth_radius + opts.site_altitude;
    let big_r = r + height;
    let e0 = sun_elevation;
    let max = if opts.printed_quadratic {
        std::f64::consts::FRAC_PI_2
    } else {
        std::f64::consts::PI
    };
    check_rows(&lay, e0, max)?;

    // Horizontal offset and slant range along the ray at elevation e.
    let ray = |e: f64| -> Result<(f64, f64)> {
        if opts.printed_quadratic {
            let x = printed_chord(e, r, height)?;
            Ok((x, x / e.cos()))
        } else {
            let t = slant_range(e, r, height)?;
            Ok((t * e.cos(), t))
        }
    };
    let arc_y = |e: f64| -> Result<f64> {
        let (x, _) = ray(e)?;
        arc_from_chord(x, big_r)
    };
    let s0 = arc_y(e0)?;

    let mut fail: Option<Error> = None;
    let mut record = |v: Result<f64>| match v {
        Ok(v) => v,
        Err(e) => {
            fail.get_or_insert(e);
            f64::NAN
        }
    };
    let ys: Vec<f64> = (0..=2 * lay.rows).map(|k| record(arc_y(lay.elevation(e0, k as f64 / 2.0 - 0.5)))).collect();
    let zs: Vec<f64> = (0..lay.rows)
        .map(|i| record(ray(lay.elevation(e0, i as f64)).map(|(_, z)| z)))
        .collect();
    if let Some(e) = fail {
        return Err(e);
    }
    let x_at = |row: f64, c: f64| -> f64 {
        let z = zs[row as usize];
        arc_from_chord(z * lay.azimuth(c).tan(), big_r).unwrap_or(f64::NAN)
    };
    let y_at = |row: f64| -> f64 { ys[((row + 0.5) * 2.0).round() as usize] - s0 };
    let (x, y, dx, dy) = assemble(&lay, y_at, x_at, lay.centered());
    if x.iter().chain(dx.iter()).any(|v| !v.is_finite()) {
        return domain("column chord exceeds the shell radius");
    }
    Ok(AtmoGrid {
        x,
        y,
        dx,
        dy,
        origin: (lay.x0, lay.y0),
        sun_elevation,
        height,
    })
}

/// Scales every coordinate by `h_to / h_from`.
pub fn rescale_height(grid: &AtmoGrid, h_from: f64, h_to: f64) -> Result<AtmoGrid> {
    if !(h_from > 0.0) {
        return invalid("source height must be positive");
    }
    let k = h_to / h_from;
    Ok(AtmoGrid {
        x: &grid.x * k,
        y: &grid.y * k,
        dx: &grid.dx * k,
        dy: &grid.dy * k,
        origin: grid.origin,
        sun_elevation: grid.sun_elevation,
        height: grid.height * k,
    })
}

/// Pixelwise `sqrt((dx^2 + dy^2) / 2)` of coordinate residuals.
pub fn transform_error_map(a: &AtmoGrid, b: &AtmoGrid) -> Result<Array2<f64>> {
    if a.dim() != b.dim() {
        return invalid(format!("grid shapes {:?} and {:?} differ", a.dim(), b.dim()));
    }
    let mut e = Array2::zeros(a.dim());
    ndarray::Zip::from(&mut e)
        .and(&a.x)
        .and(&b.x)
        .and(&a.y)
        .and(&b.y)
        .for_each(|e, ax, bx, ay, by| *e = (0.5 * ((ax - bx).powi(2) + (ay - by).powi(2))).sqrt());
    Ok(e)
}
