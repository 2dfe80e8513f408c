use ndarray::Array2;
use proptest::prelude::*;
use skyflow::perspective::*;

fn max_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b.iter()).fold(0.0f64, |m, (u, v)| m.max((u - v).abs() / scale))
}

fn pointwise_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0f64, |m, (u, v)| {
        let d = (u - v).abs();
        m.max(if v.abs() > 1e-6 { d / v.abs() } else { d })
    })
}

#[test]
fn sphere_converges_to_flat_for_huge_radius() {
    let c = CameraIntrinsics::default();
    let o = GridOptions {
        earth_radius: EARTH_RADIUS * 1e6,
        ..Default::default()
    };
    for deg in [30.0f64, 45.0, 60.0, 80.0] {
        let e = deg.to_radians();
        let f = flat_earth_grid(&c, e, TROPOPAUSE_HEIGHT, &o).unwrap();
        let g = great_circle_grid(&c, e, TROPOPAUSE_HEIGHT, &o).unwrap();
        for (a, b) in [(&g.x, &f.x), (&g.y, &f.y), (&g.dx, &f.dx), (&g.dy, &f.dy)] {
            let r = pointwise_rel(a, b);
            assert!(r < 1e-3, "elevation {deg}: {r}");
        }
    }
}

#[test]
fn error_grows_toward_horizon() {
    let c = CameraIntrinsics::default();
    let o = GridOptions::default();
    let mean = |deg: f64| {
        let e = deg.to_radians();
        let f = flat_earth_grid(&c, e, TROPOPAUSE_HEIGHT, &o).unwrap();
        let g = great_circle_grid(&c, e, TROPOPAUSE_HEIGHT, &o).unwrap();
        transform_error_map(&f, &g).unwrap().mean().unwrap()
    };
    let (low, high) = (mean(30.0), mean(80.0));
    assert!(low > high, "{low} vs {high}");
}

#[test]
fn error_map_is_mirror_symmetric() {
    let c = CameraIntrinsics::default();
    let o = GridOptions::default();
    let f = flat_earth_grid(&c, 0.9, 8000.0, &o).unwrap();
    let g = great_circle_grid(&c, 0.9, 8000.0, &o).unwrap();
    let e = transform_error_map(&f, &g).unwrap();
    let n = c.n_cols;
    for i in 0..c.n_rows {
        for j in 0..n {
            assert!((e[(i, j)] - e[(i, n - 1 - j)]).abs() < 1e-9);
        }
    }
}

#[test]
fn rescaled_grid_tracks_recomputation() {
    let c = CameraIntrinsics::default();
    let o = GridOptions::default();
    for deg in [45.0f64, 60.0, 75.0, 90.0] {
        let e = deg.to_radians();
        let base = great_circle_grid(&c, e, 12_500.0, &o).unwrap();
        for h in [5_000.0, 7_500.0, 10_000.0, 12_500.0] {
            let approx = rescale_height(&base, 12_500.0, h).unwrap();
            let full = great_circle_grid(&c, e, h, &o).unwrap();
            let err = max_rel(&approx.x, &full.x).max(max_rel(&approx.y, &full.y));
            assert!(err < 0.01, "elevation {deg}, height {h}: {err}");
        }
    }
}

#[test]
fn spacing_widens_from_top_to_bottom() {
    let c = CameraIntrinsics::default();
    for deg in [30.0f64, 45.0, 60.0] {
        let g = great_circle_grid(&c, deg.to_radians(), TROPOPAUSE_HEIGHT, &GridOptions::default()).unwrap();
        for i in 1..c.n_rows {
            assert!(g.dy[(i, 10)] > g.dy[(i - 1, 10)]);
        }
    }
}

#[test]
fn integer_origin_maps_to_zero() {
    let c = CameraIntrinsics::default();
    let o = GridOptions {
        origin: Some((20.0, 35.0)),
        ..Default::default()
    };
    let f = flat_earth_grid(&c, 0.8, 4000.0, &o).unwrap();
    let g = great_circle_grid(&c, 0.8, 4000.0, &o).unwrap();
    assert_eq!((f.x[(35, 20)], f.y[(35, 20)]), (0.0, 0.0));
    assert_eq!((g.x[(35, 20)], g.y[(35, 20)]), (0.0, 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn extents_telescope(deg in 25.0f64..89.0, h in 1000.0f64..15000.0) {
        let c = CameraIntrinsics::default();
        let g = great_circle_grid(&c, deg.to_radians(), h, &GridOptions::default()).unwrap();
        let m = c.n_rows;
        let total: f64 = (0..m).map(|i| g.dy[(i, 0)]).sum();
        let half = 0.5 * (g.dy[(0, 0)] + g.dy[(m - 1, 0)]);
        let span = g.y[(m - 1, 0)] - g.y[(0, 0)];
        prop_assert!(g.dy.iter().all(|&v| v > 0.0));
        prop_assert!((total - span - half).abs() < 0.05 * half.max(1.0));
    }

    #[test]
    fn flat_is_linear_in_height(deg in 25.0f64..150.0, h in 100.0f64..20000.0, k in 0.1f64..5.0) {
        let c = CameraIntrinsics::default();
        let o = GridOptions::default();
        let a = flat_earth_grid(&c, deg.to_radians(), h, &o).unwrap();
        let b = flat_earth_grid(&c, deg.to_radians(), h * k, &o).unwrap();
        for (u, v) in a.y.iter().zip(b.y.iter()) {
            prop_assert!((u * k - v).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }
}
