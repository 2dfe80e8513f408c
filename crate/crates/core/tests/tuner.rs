use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use skyflow::motion::Registry;
use skyflow::tuner::{
    advect_cloud, benchmark, bo_minimize, cloud_texture, expected_improvement, matern, AdvectOptions, BenchConfig,
    BoOptions, FlowKind, GpState, Kernel, PointFlow, SimFlow,
};

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn closed_forms_match_bessel_sum() {
    for i in 1..=1000 {
        let r = i as f64 * 0.01;
        for (k, p) in [(Kernel::Matern32, 1), (Kernel::Matern52, 2)] {
            let a = matern(r, k, 1.3);
            let b = matern(r, Kernel::HalfInteger(p), 1.3);
            assert!((a - b).abs() < 1e-10, "r {r} p {p}: {a} {b}");
        }
    }
}

#[test]
fn kernels_decrease_with_distance() {
    for k in [Kernel::Matern32, Kernel::Matern52, Kernel::HalfInteger(4)] {
        let mut last = matern(0.0, k, 0.5);
        for i in 1..200 {
            let v = matern(i as f64 * 0.02, k, 0.5);
            assert!(v < last);
            last = v;
        }
    }
}

fn gram(x: &[Vec<f64>], k: Kernel, ell: f64, noise: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| matern(dist(&x[i], &x[j]), k, ell) + if i == j { noise } else { 0.0 })
}

#[test]
fn posterior_matches_explicit_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_points(&mut rng, 10, 2);
    let y: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let (k, ell, noise) = (Kernel::Matern52, 0.4, 1e-3);
    let gp = GpState::fit(x.clone(), y.clone(), k, ell, noise).unwrap();
    let kinv = gram(&x, k, ell, noise).try_inverse().unwrap();
    let yv = DVector::from_vec(y);
    for q in random_points(&mut rng, 20, 2) {
        let ks = DVector::from_iterator(10, x.iter().map(|xi| matern(dist(xi, &q), k, ell)));
        let mean = (ks.transpose() * &kinv * &yv)[0];
        let var = 1.0 - (ks.transpose() * &kinv * &ks)[0];
        let (m, v) = gp.predict(&q);
        assert!((m - mean).abs() < 1e-8 && (v - var).abs() < 1e-8);
    }
}

#[test]
fn evidence_matches_explicit_determinant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_points(&mut rng, 8, 3);
    let y: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (k, ell, noise) = (Kernel::Matern32, 0.7, 1e-2);
    let gp = GpState::fit(x.clone(), y.clone(), k, ell, noise).unwrap();
    let m = gram(&x, k, ell, noise);
    let yv = DVector::from_vec(y);
    let quad = (yv.transpose() * m.clone().try_inverse().unwrap() * &yv)[0];
    let want = -4.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * m.determinant().ln() - 0.5 * quad;
    assert!((gp.log_evidence() - want).abs() < 1e-8);
}

#[test]
fn evidence_grid_recovers_planted_length_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x: Vec<Vec<f64>> = (0..80).map(|i| vec![i as f64 / 79.0]).collect();
    let planted = 0.15;
    let l = gram(&x, Kernel::Matern52, planted, 1e-8).cholesky().unwrap().l();
    let z = DVector::from_iterator(80, (0..80).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let y: Vec<f64> = (l * z).iter().cloned().collect();
    let grid: Vec<f64> = (0..12).map(|i| 0.03 * 1.4f64.powi(i)).collect();
    let best = grid
        .iter()
        .map(|&ell| (ell, GpState::fit(x.clone(), y.clone(), Kernel::Matern52, ell, 1e-8).unwrap().log_evidence()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0;
    // Within one grid step of the planted value.
    assert!(best / planted < 1.4 * 1.01 && planted / best < 1.4 * 1.01, "{best}");
}

fn mc_improvement(mu: f64, sigma: f64, best: f64, xi: f64, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let f = mu + sigma * rng.sample::<f64, _>(StandardNormal);
            (best - f + xi).max(0.0)
        })
        .sum::<f64>()
        / n as f64
}

/// Small model on random 1-D data.
fn gp_with_posterior(rng: &mut ChaCha8Rng) -> GpState {
    let x = random_points(rng, 4, 1);
    let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    GpState::fit(x, y, Kernel::Matern52, 0.3, 1e-4).unwrap()
}

#[test]
fn expected_improvement_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gp = gp_with_posterior(&mut rng);
    for (i, q) in [0.05, 0.5, 0.95, 1.6].iter().enumerate() {
        let (mu, var) = gp.predict(&[*q]);
        for best in [mu - 0.2 * var.sqrt(), mu, mu + 0.5 * var.sqrt()] {
            let ei = expected_improvement(&gp, &[*q], best, 0.01);
            let mc = mc_improvement(mu, var.sqrt(), best, 0.01, 100_000, i as u64);
            assert!((ei - mc).abs() <= 0.02 * mc, "q {q}: {ei} vs {mc}");
        }
    }
}

#[test]
fn ei_grows_with_uncertainty_when_mean_is_far_below_best() {
    let mut last = 0.0;
    for i in 1..20 {
        let sigma = i as f64 * 0.2;
        let ei = skyflow::tuner::gp::ei_closed_form(-3.0, sigma * sigma, 0.0, 0.0);
        assert!(ei > 0.0 && ei > last);
        last = ei;
    }
}

#[test]
fn minimizes_one_dimensional_quadratic() {
    let opts = BoOptions {
        budget: 20,
        seed: 3,
        ..Default::default()
    };
    let r = bo_minimize(|x| (x[0] - 1.7).powi(2), &[(-5.0, 5.0)], &opts).unwrap();
    assert!((r.best_x[0] - 1.7).abs() < 0.1, "{:?}", r.best_x);
    assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
}

fn branin(x: &[f64]) -> f64 {
    use std::f64::consts::PI;
    let (a, b, c) = (1.0, 5.1 / (4.0 * PI * PI), 5.0 / PI);
    let (r, s, t) = (6.0, 10.0, 1.0 / (8.0 * PI));
    a * (x[1] - b * x[0] * x[0] + c * x[0] - r).powi(2) + s * (1.0 - t) * x[0].cos() + s
}

#[test]
fn minimizes_branin_within_five_percent() {
    let bounds = [(-5.0, 10.0), (0.0, 15.0)];
    let n = 1500;
    let mut oracle = f64::INFINITY;
    for i in 0..=n {
        for j in 0..=n {
            let x = [-5.0 + 15.0 * i as f64 / n as f64, 15.0 * j as f64 / n as f64];
            oracle = oracle.min(branin(&x));
        }
    }
    let opts = BoOptions {
        budget: 40,
        ..Default::default()
    };
    for seed in 0..10 {
        let r = bo_minimize(branin, &bounds, &BoOptions { seed, ..opts.clone() }).unwrap();
        assert!(r.best_value <= oracle * 1.05, "seed {seed}: {} vs {oracle}", r.best_value);
    }
}

/// Midpoint-rule circulation and outward flux on a square loop.
fn loop_integrals(f: &SimFlow, cx: f64, cy: f64, half: f64, n: usize) -> (f64, f64) {
    let h = 2.0 * half / n as f64;
    let (mut circ, mut flux) = (0.0, 0.0);
    for k in 0..n {
        let t = -half + (k as f64 + 0.5) * h;
        // bottom (y = cy - half, moving +x, normal -y), right, top, left
        let (u, v) = f.velocity(cx + t, cy - half);
        circ += u * h;
        flux -= v * h;
        let (u, v) = f.velocity(cx + half, cy + t);
        circ += v * h;
        flux += u * h;
        let (u, v) = f.velocity(cx - t, cy + half);
        circ -= u * h;
        flux += v * h;
        let (u, v) = f.velocity(cx - half, cy - t);
        circ -= v * h;
        flux -= u * h;
    }
    (circ, flux)
}

fn point(strength: f64) -> Option<PointFlow> {
    Some(PointFlow {
        x: 40.0,
        y: 30.0,
        strength,
        core: 6.0,
    })
}

#[test]
fn vortex_has_circulation_and_no_flux() {
    let f = SimFlow {
        kind: FlowKind::Nonlinear,
        uniform: (0.0, 0.0),
        vortex: point(10.0),
        source: None,
    };
    let (c, q) = loop_integrals(&f, 40.0, 30.0, 15.0, 400);
    assert!(c > 0.0 && q.abs() < 1e-6 * c, "{c} {q}");
}

#[test]
fn source_has_flux_and_no_circulation() {
    let f = SimFlow {
        kind: FlowKind::Nonlinear,
        uniform: (0.0, 0.0),
        vortex: None,
        source: point(10.0),
    };
    let (c, q) = loop_integrals(&f, 40.0, 30.0, 15.0, 400);
    assert!(q > 0.0 && c.abs() < 1e-6 * q, "{c} {q}");
}

fn opts(seed: u64) -> AdvectOptions {
    AdvectOptions {
        rows: 60,
        cols: 80,
        background: 100.0,
        start: (20.0, 20.0),
        noise: 0.5,
        seed,
    }
}

#[test]
fn nonlinear_trajectory_matches_fine_integration() {
    for f in skyflow::tuner::benchmark_flows(60, 80).into_iter().filter(|f| f.kind == FlowKind::Nonlinear) {
        let mut o = opts(0);
        o.start = (30.0, 24.0);
        let tex = cloud_texture(14, 1);
        let s = advect_cloud(&tex, &f, 20, &o).unwrap();
        assert!(!s.truncated);
        let (mut x, mut y) = o.start;
        let sub = 100;
        for k in 1..=20 {
            for _ in 0..sub {
                let (u, v) = f.velocity(x, y);
                let (u2, v2) = f.velocity(x + 0.5 * u / sub as f64, y + 0.5 * v / sub as f64);
                x += u2 / sub as f64;
                y += v2 / sub as f64;
            }
            let c = s.centers[k];
            assert!((c.0 - x).hypot(c.1 - y) < 0.5, "step {k}");
        }
    }
}

#[test]
fn advection_is_reproducible() {
    let tex = cloud_texture(16, 9);
    let f = SimFlow::linear(0.6, 0.3);
    let a = advect_cloud(&tex, &f, 8, &opts(5)).unwrap();
    let b = advect_cloud(&tex, &f, 8, &opts(5)).unwrap();
    assert_eq!(a.frames, b.frames);
    assert_eq!(a.centers, b.centers);
    let c = advect_cloud(&tex, &f, 8, &opts(6)).unwrap();
    assert_ne!(a.frames, c.frames);
}

#[test]
fn benchmark_is_deterministic() {
    let cfg = BenchConfig {
        pairs: 3,
        budget: 8,
        timing_pairs: 1,
        ..Default::default()
    };
    let reg = Registry::default();
    let run = || {
        benchmark(&reg, &["lk", "cc"], &[FlowKind::Linear], &cfg)
            .unwrap()
            .accuracy_csv()
            .unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.lines().count(), 3);
}

proptest! {
    #[test]
    fn posterior_variance_below_prior(seed in 0u64..500, q in proptest::collection::vec(-0.5f64..1.5, 2)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_points(&mut rng, 6, 2);
        let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gp = GpState::fit(x, y, Kernel::Matern32, 0.5, 1e-6).unwrap();
        let (_, v) = gp.predict(&q);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!(expected_improvement(&gp, &q, -0.5, 0.01) >= 0.0);
    }
}
