//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines show up in plain
//! `cargo test` output. Criteria 1 and 4 are known not to hold (see the
//! README); a failure of any other criterion makes the run fail.

use std::f64::consts::PI;
use std::time::Instant;

use chrono::{DateTime, Timelike, Utc};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use skyflow::atmosphere::{atmo_loss, atmospheric_model, AtmoParams};
use skyflow::frame::{fuse_exposures, ExposureStack, FusionOptions};
use skyflow::irradiance::{
    amplitude_loss, amplitude_model, fit_day_params, gsi_gradient, gsi_model, theoretical_params, AmplitudeDay,
    AmplitudeParams, GsiParams, GsiSample,
};
use skyflow::motion::{circular_cross_correlation, Correlation, Registry};
use skyflow::perspective::*;
use skyflow::radiometry::{
    cloud_base_from_spread, cloud_base_height, dry_lapse_rate, lapse_rate, moist_adiabatic_lapse, SaturationFactor,
    TempUnit, WeatherSample,
};
use skyflow::sky_state::{persistent_classes, svc_predict, svc_train, SkyClass, SkyFeatures, SvcOptions, WindowModel};
use skyflow::solar::{sun_position, Site};
use skyflow::tuner::{benchmark, bo_minimize, expected_improvement, matern, BenchConfig, BoOptions, FlowKind, GpState, Kernel};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- 1

/// Low-precision ephemeris from Julian centuries: mean longitude and
/// anomaly, equation of center, apparent longitude, obliquity with
/// nutation in longitude of the node. Returns geometric (elevation,
/// azimuth) in degrees, azimuth clockwise from North.
fn ephemeris(lat: f64, lon: f64, t: DateTime<Utc>) -> (f64, f64) {
    let jd = t.timestamp() as f64 / 86400.0 + 2440587.5;
    let c = (jd - 2451545.0) / 36525.0;
    let l0 = (280.46646 + c * (36000.76983 + c * 0.0003032)).rem_euclid(360.0);
    let m = 357.52911 + c * (35999.05029 - 0.0001537 * c);
    let e = 0.016708634 - c * (0.000042037 + 0.0000001267 * c);
    let mr = m.to_radians();
    let center = mr.sin() * (1.914602 - c * (0.004817 + 0.000014 * c))
        + (2.0 * mr).sin() * (0.019993 - 0.000101 * c)
        + (3.0 * mr).sin() * 0.000289;
    let omega = (125.04 - 1934.136 * c).to_radians();
    let lambda = (l0 + center - 0.00569 - 0.00478 * omega.sin()).to_radians();
    let eps0 = 23.0 + (26.0 + (21.448 - c * (46.815 + c * (0.00059 - c * 0.001813))) / 60.0) / 60.0;
    let eps = (eps0 + 0.00256 * omega.cos()).to_radians();
    let decl = (eps.sin() * lambda.sin()).asin();
    let y = (eps / 2.0).tan().powi(2);
    let l0r = l0.to_radians();
    let eot = 4.0
        * (y * (2.0 * l0r).sin() - 2.0 * e * mr.sin() + 4.0 * e * y * mr.sin() * (2.0 * l0r).cos()
            - 0.5 * y * y * (4.0 * l0r).sin()
            - 1.25 * e * e * (2.0 * mr).sin())
        .to_degrees();
    let minutes = t.hour() as f64 * 60.0 + t.minute() as f64 + t.second() as f64 / 60.0;
    let tst = (minutes + eot + 4.0 * lon).rem_euclid(1440.0);
    let ha = (tst / 4.0 - 180.0).to_radians();
    let latr = lat.to_radians();
    let cos_z = (latr.sin() * decl.sin() + latr.cos() * decl.cos() * ha.cos()).clamp(-1.0, 1.0);
    let z = cos_z.acos();
    let cos_az = ((latr.sin() * cos_z - decl.sin()) / (latr.cos() * z.sin())).clamp(-1.0, 1.0);
    let az = if ha > 0.0 { (cos_az.acos().to_degrees() + 180.0).rem_euclid(360.0) } else { (540.0 - cos_az.acos().to_degrees()).rem_euclid(360.0) };
    (90.0 - z.to_degrees(), az)
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = DateTime::parse_from_rfc3339("2000-01-01T00:00:00Z").unwrap().timestamp();
    let end = DateTime::parse_from_rfc3339("2030-01-01T00:00:00Z").unwrap().timestamp();
    let mut pairs = Vec::new();
    while pairs.len() < 100 {
        let site = if pairs.is_empty() {
            Site::unm()
        } else {
            let lon: f64 = rng.gen_range(-180.0..180.0);
            Site::new(rng.gen_range(-66.0..66.0), lon, (lon / 15.0).round().clamp(-12.0, 14.0)).unwrap()
        };
        let t = DateTime::<Utc>::from_timestamp(rng.gen_range(start..end), 0).unwrap();
        let (el, az) = ephemeris(site.latitude_deg, site.longitude_deg, t);
        // Azimuth is undefined at the zenith.
        if el < 85.0 {
            pairs.push((site, t, el, az));
        }
    }
    let clock = Instant::now();
    let got: Vec<_> = pairs.iter().map(|(s, t, _, _)| sun_position(s, *t).unwrap()).collect();
    let elapsed = clock.elapsed().as_secs_f64();
    let (mut de, mut da) = (0.0f64, 0.0f64);
    for (p, (_, _, el, az)) in got.iter().zip(&pairs) {
        de = de.max((p.elevation.to_degrees() - el).abs());
        da = da.max(angle_diff(p.azimuth.to_degrees(), *az));
    }
    outcome(
        de < 0.5 && da < 1.0 && elapsed < 1.0,
        format!("max |d elevation| {de:.3} deg (< 0.5), max |d azimuth| {da:.3} deg (< 1.0), {elapsed:.4} s for 100 pairs"),
    )
}

// ---------------------------------------------------------------- 2

/// Central difference of `f` along coordinate `i`.
fn central(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let h = 1e-5 * x[i].abs().max(1e-2);
    let (mut a, mut b) = (x.to_vec(), x.to_vec());
    a[i] += h;
    b[i] -= h;
    (f(&a) - f(&b)) / (2.0 * h)
}

/// Worst per-component relative error of `grad` against central differences.
fn gradient_error(f: &dyn Fn(&[f64]) -> f64, x: &[f64], grad: &[f64]) -> f64 {
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    (0..x.len())
        .map(|i| {
            let fd = central(f, x, i);
            (grad[i] - fd).abs() / grad[i].abs().max(1e-6 * scale)
        })
        .fold(0.0, f64::max)
}

fn criterion_2() -> Outcome {
    let elevations: Vec<f64> = (0..150).map(|i| (4.0 + 0.55 * i as f64).to_radians()).collect();
    let mut round_trip = 0.0f64;
    for day in (1..=365).step_by(28) {
        let base = theoretical_params(day, 365).unwrap();
        let perturbed = GsiParams::new(base.theta[0] * 0.95, base.theta[1] * 1.1, base.theta[2] * 0.9 + 0.01, 0.0);
        for truth in [base, perturbed] {
            let samples: Vec<GsiSample> = elevations
                .iter()
                .map(|&e| GsiSample { elevation: e, ghi: gsi_model(&truth, e).unwrap() })
                .collect();
            let fit = fit_day_params(&samples, day, 365).unwrap();
            for i in 0..3 {
                round_trip = round_trip.max((fit.params.theta[i] - truth.theta[i]).abs() / truth.theta[i].abs());
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut gsi_err = 0.0f64;
    for _ in 0..20 {
        let x = [rng.gen_range(900.0..1300.0), rng.gen_range(0.1..0.3), rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.3)];
        let e = rng.gen_range(0.1..1.5);
        let f = |p: &[f64]| gsi_model(&GsiParams::new(p[0], p[1], p[2], p[3]), e).unwrap();
        let g = gsi_gradient(&GsiParams::new(x[0], x[1], x[2], x[3]), e).unwrap();
        gsi_err = gsi_err.max(gradient_error(&f, &x, &g));
    }

    // Losses are sums of absolute residuals; measured values sit well away
    // from the model so every residual keeps its sign under the probe step.
    let mut amp_err = 0.0f64;
    for _ in 0..20 {
        let x = [rng.gen_range(0.02..0.2), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.9..1.1)];
        let p = AmplitudeParams { theta: x };
        let days: Vec<AmplitudeDay> = (0..6)
            .map(|_| {
                let d = rng.gen_range(1..=365);
                let reference: Vec<f64> = (0..10).map(|_| rng.gen_range(100.0..900.0)).collect();
                let c = amplitude_model(&p, d as f64, 365);
                let measured = reference.iter().map(|r| r * c * rng.gen_range(1.2..1.5)).collect();
                AmplitudeDay { day_of_year: d, measured, reference }
            })
            .collect();
        let f = |q: &[f64]| amplitude_loss(&AmplitudeParams { theta: [q[0], q[1], q[2]] }, &days, 365).0;
        amp_err = amp_err.max(gradient_error(&f, &x, &amplitude_loss(&p, &days, 365).1));
    }

    let mut atmo_err = 0.0f64;
    for _ in 0..20 {
        let x = [rng.gen_range(50.0..500.0), rng.gen_range(5.0..40.0), rng.gen_range(500.0..5000.0), rng.gen_range(1.0..8.0)];
        let p = AtmoParams::from_slice(&x);
        let sun = (rng.gen_range(5.0..35.0), rng.gen_range(5.0..25.0));
        let model = atmospheric_model((30, 40), sun, &p);
        let frame = model.mapv(|v| v + 10.0 + rng.gen_range(0.0..5.0)) * 1.1;
        let f = |q: &[f64]| atmo_loss(&frame, sun, &AtmoParams::from_slice(q)).0;
        atmo_err = atmo_err.max(gradient_error(&f, &x, &atmo_loss(&frame, sun, &p).1));
    }
    outcome(
        round_trip < 1e-3 && gsi_err < 1e-5 && amp_err < 1e-5 && atmo_err < 1e-5,
        format!(
            "round trip {round_trip:.2e} (< 1e-3); gradient rel err gsi {gsi_err:.2e}, amplitude {amp_err:.2e}, atmosphere {atmo_err:.2e} (< 1e-5)"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn spatial_correlation(a: &Array2<f64>, b: &Array2<f64>, normalized: bool) -> Array2<f64> {
    let n = a.nrows();
    let nn = (n * n) as f64;
    let (ma, mb) = if normalized { (a.sum() / nn, b.sum() / nn) } else { (0.0, 0.0) };
    let sd = |w: &Array2<f64>, m: f64| (w.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nn).sqrt();
    let norm = if normalized { nn * sd(a, ma) * sd(b, mb) } else { 1.0 };
    Array2::from_shape_fn((n, n), |(ky, kx)| {
        let mut acc = 0.0;
        for y in 0..n {
            for x in 0..n {
                acc += (a[(y, x)] - ma) * (b[((y + ky) % n, (x + kx) % n)] - mb);
            }
        }
        acc / norm
    })
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = [0.0f64; 2];
    for n in [8, 16] {
        for _ in 0..10 {
            let a = Array2::from_shape_fn((n, n), |_| rng.gen_range(0.0..255.0));
            let b = Array2::from_shape_fn((n, n), |_| rng.gen_range(0.0..255.0));
            for (k, (kind, norm)) in [(Correlation::Cross, false), (Correlation::Normalized, true)].into_iter().enumerate() {
                let got = circular_cross_correlation(&a, &b, kind).unwrap();
                let want = spatial_correlation(&a, &b, norm);
                let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let err = (&got - &want).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
                worst[k] = worst[k].max(err);
            }
        }
    }
    outcome(
        worst[0] < 1e-9 && worst[1] < 1e-9,
        format!("max rel err cc {:.2e}, ncc {:.2e} (< 1e-9) over all lags, 8x8 and 16x16", worst[0], worst[1]),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let cfg = BenchConfig::default();
    let registry = Registry::default();
    let methods = ["lk", "hs", "fb", "cc", "ncc"];
    let report = benchmark(&registry, &methods, &[FlowKind::Linear, FlowKind::Nonlinear], &cfg).unwrap();
    let mut accurate = true;
    let mut parts = Vec::new();
    for r in &report.results {
        let limit = if r.flow == FlowKind::Linear { 0.5 } else { 0.7 };
        accurate &= r.rmse < limit;
        parts.push(format!("{}/{} {:.3}", r.method, r.flow.name(), r.rmse));
    }
    let piv = report.reference.iter().map(|t| t.runtime_s).fold(f64::INFINITY, f64::min);
    let window = report.reference.iter().map(|t| t.window).min().unwrap_or(0);
    let mut ordered = window >= 20;
    let mut speed = Vec::new();
    for m in ["lk", "hs", "fb"] {
        let t = report.results.iter().filter(|r| r.method == m).map(|r| r.runtime_s).fold(0.0, f64::max);
        ordered &= 10.0 * t <= piv;
        speed.push(format!("{m} {:.1}x", piv / t));
    }
    let total_ok = report.total_s < 1800.0;
    outcome(
        accurate && ordered && total_ok,
        format!(
            "rmse px [{}] (< 0.5 linear, < 0.7 nonlinear): {}; piv at W >= {window} {:.1} ms, speedup {} (>= 10x): {}; total {:.0} s (< 1800)",
            parts.join(", "),
            if accurate { "ok" } else { "off" },
            piv * 1e3,
            speed.join(", "),
            if ordered { "ok" } else { "off" },
            report.total_s
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let dim = (60, 80);
    let artifact = Array2::from_shape_fn(dim, |(r, c)| {
        let (dr, dc) = (r as f64 - 20.0, c as f64 - 50.0);
        40.0 * (-(dr * dr + dc * dc) / 60.0).exp() + 8.0 * ((c as f64) * 0.3).sin()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 5.0).unwrap();
    let mut model = WindowModel::new(250);
    for _ in 0..300 {
        let frame = Array2::from_shape_fn(dim, |idx| artifact[idx] + noise.sample(&mut rng));
        model.update(&frame, SkyClass::Clear, &[1.0; 10]).unwrap();
    }
    let Some(w) = model.artifact() else {
        return outcome(false, "artifact undefined after 300 frames".into());
    };
    let mut err: Vec<f64> = w.iter().zip(artifact.iter()).map(|(a, b)| (a - b).abs()).collect();
    err.sort_by(f64::total_cmp);
    let med = err[err.len() / 2];
    outcome(med < 1.0, format!("{} frames kept, median |error| {med:.3} (< 1), noise sd 5", model.len()))
}

// ---------------------------------------------------------------- 6

fn pointwise_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0f64, |m, (u, v)| {
        let d = (u - v).abs();
        m.max(if v.abs() > 1e-6 { d / v.abs() } else { d })
    })
}

fn max_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b.iter()).fold(0.0f64, |m, (u, v)| m.max((u - v).abs() / scale))
}

fn criterion_6() -> Outcome {
    let cam = CameraIntrinsics::default();
    let huge = GridOptions { earth_radius: EARTH_RADIUS * 1e6, ..Default::default() };
    let mut converge = 0.0f64;
    for deg in [30.0f64, 45.0, 60.0, 80.0, 90.0] {
        let e = deg.to_radians();
        let f = flat_earth_grid(&cam, e, TROPOPAUSE_HEIGHT, &huge).unwrap();
        let g = great_circle_grid(&cam, e, TROPOPAUSE_HEIGHT, &huge).unwrap();
        for (a, b) in [(&g.x, &f.x), (&g.y, &f.y), (&g.dx, &f.dx), (&g.dy, &f.dy)] {
            converge = converge.max(pointwise_rel(a, b));
        }
    }
    let opts = GridOptions::default();
    let mean_err = |deg: f64| {
        let e = deg.to_radians();
        let f = flat_earth_grid(&cam, e, TROPOPAUSE_HEIGHT, &opts).unwrap();
        let g = great_circle_grid(&cam, e, TROPOPAUSE_HEIGHT, &opts).unwrap();
        transform_error_map(&f, &g).unwrap().mean().unwrap()
    };
    let (low, high) = (mean_err(30.0), mean_err(80.0));
    let mut rescale = 0.0f64;
    for deg in [45.0f64, 60.0, 75.0, 90.0] {
        let e = deg.to_radians();
        let base = great_circle_grid(&cam, e, 12_500.0, &opts).unwrap();
        for k in 0..=6 {
            let h = 5_000.0 + 1_250.0 * k as f64;
            let approx = rescale_height(&base, 12_500.0, h).unwrap();
            let full = great_circle_grid(&cam, e, h, &opts).unwrap();
            rescale = rescale.max(max_rel(&approx.x, &full.x).max(max_rel(&approx.y, &full.y)));
        }
    }
    outcome(
        converge < 1e-3 && low > high && rescale < 0.01,
        format!(
            "flat limit rel err {converge:.2e} (< 1e-3); mean error 30 deg {low:.1} m > 80 deg {high:.1} m; rescale err {:.3}% (< 1%)",
            rescale * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 7

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn branin(x: &[f64]) -> f64 {
    let (b, c, t) = (5.1 / (4.0 * PI * PI), 5.0 / PI, 1.0 / (8.0 * PI));
    (x[1] - b * x[0] * x[0] + c * x[0] - 6.0).powi(2) + 10.0 * (1.0 - t) * x[0].cos() + 10.0
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 10;
    let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen(), rng.gen()]).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let (k, ell, noise) = (Kernel::Matern52, 0.4, 1e-3);
    let gp = GpState::fit(x.clone(), y.clone(), k, ell, noise).unwrap();
    let gram = DMatrix::from_fn(n, n, |i, j| matern(dist(&x[i], &x[j]), k, ell) + if i == j { noise } else { 0.0 });
    let kinv = gram.try_inverse().unwrap();
    let yv = DVector::from_vec(y);
    let mut post = 0.0f64;
    for _ in 0..20 {
        let q = [rng.gen::<f64>(), rng.gen::<f64>()];
        let ks = DVector::from_iterator(n, x.iter().map(|xi| matern(dist(xi, &q), k, ell)));
        let mean = (ks.transpose() * &kinv * &yv)[0];
        let var = 1.0 - (ks.transpose() * &kinv * &ks)[0];
        let (m, v) = gp.predict(&q);
        post = post.max((m - mean).abs()).max((v - var).abs());
    }

    let mut ei_err = 0.0f64;
    for (i, q) in [[0.1, 0.2], [0.5, 0.5], [0.9, 0.3], [1.4, 1.4]].iter().enumerate() {
        let (mu, var) = gp.predict(q);
        let sd = var.sqrt();
        for best in [mu - 0.2 * sd, mu, mu + 0.5 * sd] {
            for xi in [0.0, 0.01] {
                let ei = expected_improvement(&gp, q, best, xi);
                let mut mc_rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
                let mc = (0..100_000)
                    .map(|_| (best - (mu + sd * mc_rng.sample::<f64, _>(StandardNormal)) + xi).max(0.0))
                    .sum::<f64>()
                    / 1e5;
                ei_err = ei_err.max((ei - mc).abs() / mc);
            }
        }
    }

    let opts = BoOptions { budget: 40, ..Default::default() };
    let quad = bo_minimize(|x| (x[0] - 1.7).powi(2), &[(-5.0, 5.0)], &opts).unwrap();
    let quad_err = (quad.best_x[0] - 1.7).abs();
    let optimum = 0.397887357729738;
    let mut branin_gap = 0.0f64;
    for seed in 0..10 {
        let r = bo_minimize(branin, &[(-5.0, 10.0), (0.0, 15.0)], &BoOptions { seed, ..opts.clone() }).unwrap();
        branin_gap = branin_gap.max(r.best_value / optimum - 1.0);
    }
    outcome(
        post < 1e-8 && ei_err < 0.02 && quad_err < 0.1 && branin_gap < 0.05,
        format!(
            "posterior err {post:.2e} (< 1e-8); EI vs MC {:.2}% (< 2%); quadratic |dx| {quad_err:.4} (< 0.1); Branin worst gap over 10 seeds {:.2}% (< 5%)",
            ei_err * 100.0,
            branin_gap * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 8

fn clusters(rng: &mut ChaCha8Rng, per_class: usize) -> Vec<(SkyFeatures, SkyClass)> {
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut out = Vec::new();
    for (k, cls) in SkyClass::ALL.iter().enumerate() {
        for _ in 0..per_class {
            let mut v = [0.0; 10];
            for (j, x) in v.iter_mut().enumerate().take(9) {
                *x = if j == 2 * k { 5.0 } else { 0.0 } + noise.sample(rng);
            }
            v[9] = 1.0;
            out.push((SkyFeatures(v), *cls));
        }
    }
    out
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let train = clusters(&mut rng, 60);
    let test = clusters(&mut rng, 100);
    let model = svc_train(&train, &SvcOptions::default()).unwrap();
    let acc = test.iter().filter(|(f, c)| svc_predict(&model, f) == *c).count() as f64 / test.len() as f64;

    let mut flips = 0;
    let mut leaked = 0;
    for &base in &SkyClass::ALL {
        for &other in SkyClass::ALL.iter().filter(|c| **c != base) {
            for at in 4..12 {
                let mut raw = vec![base; 16];
                raw[at] = other;
                flips += 1;
                if persistent_classes(&raw, 5).iter().any(|c| *c != base) {
                    leaked += 1;
                }
            }
        }
    }
    outcome(
        acc >= 0.95 && leaked == 0,
        format!("held-out accuracy {:.1}% (>= 95%); {leaked} of {flips} single flips leak through T = 5", acc * 100.0),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dim = (61, 81);
    let center = (40.0, 30.0);
    let radii = vec![12.0, 22.0];
    let base = Array2::from_shape_fn(dim, |_| rng.gen_range(20.0..255.0));

    let mut bounded = true;
    for gain in [1.0, 50.0, 1e4] {
        let frames = vec![base.mapv(|v| v * gain), base.mapv(|v| v * gain * 3.0), base.mapv(|v| v * gain * 9.0)];
        let out = fuse_exposures(&ExposureStack::new(frames, radii.clone(), center).unwrap(), &FusionOptions::default()).unwrap();
        bounded &= out.frame.iter().all(|&v| (0.0..=65536.0).contains(&v));
    }

    // A constant stack exposes any seam as a nonzero step.
    let flat = vec![Array2::from_elem(dim, 120.0); 3];
    let out = fuse_exposures(&ExposureStack::new(flat, radii.clone(), center).unwrap(), &FusionOptions::default()).unwrap();
    let inscribed = dim.0.min(dim.1) as f64 / 2.0 - 1.0;
    let (mut seam, mut interior) = (0.0f64, 0.0f64);
    for r in 0..dim.0 {
        for c in 0..dim.1 - 1 {
            let d = ((c as f64 - center.0).powi(2) + (r as f64 - center.1).powi(2)).sqrt();
            if d > inscribed {
                continue;
            }
            let g = (out.raw[(r, c + 1)] - out.raw[(r, c)]).abs();
            if radii.iter().any(|s| (d - s).abs() <= 3.0) {
                seam = seam.max(g);
            } else {
                interior = interior.max(g);
            }
        }
    }
    let seam_free = seam <= interior + 1e-9;

    let mut alpha_err = 0.0f64;
    for _ in 0..10 {
        let (k1, k2) = (rng.gen_range(1.5..4.0), rng.gen_range(1.5..4.0));
        let frames = vec![base.clone(), base.mapv(|v| v * k1), base.mapv(|v| v * k1 * k2)];
        let out = fuse_exposures(&ExposureStack::new(frames, radii.clone(), center).unwrap(), &FusionOptions::default()).unwrap();
        alpha_err = alpha_err.max((out.alphas[1] - 1.0 / k1).abs()).max((out.alphas[2] - 1.0 / (k1 * k2)).abs());
    }
    outcome(
        bounded && seam_free && alpha_err < 1e-6,
        format!(
            "bounded in [0, 2^16]: {bounded}; max step at seams {seam:.2e} vs interior {interior:.2e}; alpha err {alpha_err:.2e} (< 1e-6)"
        ),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let dry = dry_lapse_rate();
    let mut worst = 0.0f64;
    for t in [250.0, 273.15, 300.0, 320.0] {
        worst = worst.max((lapse_rate(t, 0.0) - dry).abs() / dry);
        let w = WeatherSample { air_temp: t, dew_point: 50.0, pressure: 84_000.0 };
        let g = moist_adiabatic_lapse(&w, SaturationFactor::Reference).unwrap();
        worst = worst.max((g - dry).abs() / dry);
    }
    let base = cloud_base_from_spread(10.0, TempUnit::Celsius).unwrap();
    let from_sample = cloud_base_height(&WeatherSample { air_temp: 298.15, dew_point: 288.15, pressure: 84_000.0 }).unwrap();
    let exact = (base - 1219.2).abs() < 1e-9 && (from_sample - 1219.2).abs() < 1e-9;
    outcome(
        worst < 1e-6 && exact,
        format!("dry-limit rel err {worst:.2e} (< 1e-6); cloud base {base} m, from sample {from_sample:.6} m (1219.2)"),
    )
}

fn main() {
    // Set by the runner when it only lists tests.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let expected_fail = [1, 4];
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "sun position vs ephemeris", criterion_1),
        (2, "gsi round trip and gradients", criterion_2),
        (3, "frequency-domain correlation", criterion_3),
        (4, "motion benchmark", criterion_4),
        (5, "window artifact recovery", criterion_5),
        (6, "perspective grids", criterion_6),
        (7, "gaussian process and bayesian optimization", criterion_7),
        (8, "sky-state classifier", criterion_8),
        (9, "exposure fusion", criterion_9),
        (10, "radiometry", criterion_10),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        let clock = Instant::now();
        let o = run();
        println!(
            "{} {id:>2} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            clock.elapsed().as_secs_f64()
        );
        if !o.pass && !expected_fail.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
