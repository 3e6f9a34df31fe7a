use approx::assert_relative_eq;
use gravalloc::field::ball_field_integral;
use gravalloc::validation::{central_gradient, mc_ball_field, test_gradient_consistency};
use gravalloc::{kappa, rng, Error, FarFieldOptions, FieldModel, Point, Region, StarConfig};
use rand::Rng;

fn p(c: &[f64]) -> Point {
    Point::new(c.to_vec()).unwrap()
}

fn ball(d: usize, r: f64) -> Region {
    Region::ball(Point::origin(d), r).unwrap()
}

fn model(d: usize, stars: &[&[f64]], l: f64, compensate: bool) -> FieldModel {
    let pts: Vec<Point> = stars.iter().map(|z| p(z)).collect();
    let c = StarConfig::from_explicit(d, &pts, ball(d, l)).unwrap();
    FieldModel::new(c, ball(d, l), compensate).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn force_single_star_and_symmetry() {
    let m = model(3, &[&[1.0, 0.0, 0.0]], 2.0, true);
    assert!(close(&m.force(&[0.0; 3]).unwrap(), &[1.0, 0.0, 0.0], 1e-15));
    let m = model(3, &[&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]], 2.0, true);
    assert!(close(&m.force(&[0.0; 3]).unwrap(), &[0.0; 3], 1e-15));
}

#[test]
fn force_compensation_only() {
    let m = model(3, &[], 5.0, true);
    let f = m.force(&[1.0, 0.0, 0.0]).unwrap();
    assert!(close(&f, &[4.0 * std::f64::consts::PI / 3.0, 0.0, 0.0], 1e-14));
}

#[test]
fn force_errors() {
    let m = model(3, &[&[1.0, 0.0, 0.0]], 2.0, true);
    assert!(matches!(m.force(&[1.0, 0.0, 0.0]), Err(Error::Singularity { star: 0, .. })));
    assert!(matches!(m.force(&[2.5, 0.0, 0.0]), Err(Error::Domain(_))));
}

#[test]
fn partial_force_cases() {
    let k3 = kappa(3).unwrap();
    let m = model(3, &[&[1.0, 0.0, 0.0]], 3.0, true);
    let ann = Region::annulus(Point::origin(3), 0.5, 2.0).unwrap();
    assert!(close(&m.force_partial(&[0.0; 3], &ann).unwrap(), &[1.0, 0.0, 0.0], 1e-15));
    let empty = Region::annulus(Point::origin(3), 1.0, 2.0).unwrap();
    assert!(close(&m.force_partial(&[0.0; 3], &empty).unwrap(), &[0.0; 3], 1e-15));
    let f = m.force_partial(&[0.2, 0.0, 0.0], &ball(3, 2.0)).unwrap();
    let expected = 1.0 / (0.8 * 0.8) + k3 * 0.2;
    assert!(close(&f, &[expected, 0.0, 0.0], 1e-13));
    assert_relative_eq!(f[0], 2.400258, max_relative = 1e-6);
}

#[test]
fn partial_force_rejects_other_geometry() {
    let m = model(3, &[&[1.0, 0.0, 0.0]], 3.0, true);
    let ann = Region::annulus(Point::origin(3), 0.5, 2.0).unwrap();
    assert!(matches!(m.force_partial(&[1.0, 0.0, 0.0], &ann), Err(Error::Domain(_))));
    assert!(matches!(m.force_partial(&[2.5, 0.0, 0.0], &ball(3, 2.0)), Err(Error::Domain(_))));
}

#[test]
fn partial_potential_cases() {
    let k3 = kappa(3).unwrap();
    let k5 = kappa(5).unwrap();
    let m = model(5, &[&[1.0, 0.0, 0.0, 0.0, 0.0]], 3.0, true);
    let u = m.potential_partial(&[0.0; 5], &ball(5, 2.0)).unwrap();
    assert_relative_eq!(u, -1.0 / 3.0 + 5.0 * k5 * 4.0 / 6.0, max_relative = 1e-14);
    assert_relative_eq!(u, 17.2127, max_relative = 1e-5);
    let m = model(5, &[], 3.0, true);
    let u = m.potential_partial(&[0.0; 5], &Region::annulus(Point::origin(5), 1.0, 2.0).unwrap()).unwrap();
    assert_relative_eq!(u, 2.5 * k5, max_relative = 1e-14);
    let m = model(3, &[&[1.0, 0.0, 0.0]], 3.0, true);
    let u = m.potential_partial(&[0.0; 3], &Region::annulus(Point::origin(3), 0.5, 2.0).unwrap()).unwrap();
    assert_relative_eq!(u, -1.0 + 1.5 * k3 * 3.75, max_relative = 1e-14);
    assert_relative_eq!(u, 22.5619, max_relative = 1e-5);
}

#[test]
fn potential_diff_cases() {
    let a = ball(3, 0.1);
    let m = model(3, &[&[0.0, 0.0, 0.0]], 3.0, true);
    let x = [1.0, 0.0, 0.0];
    assert_eq!(m.potential_diff(&x, &x, &a).unwrap(), 0.0);
    // Outside a uniform ball its potential equals that of a point mass.
    let vol = a.volume().unwrap();
    let expected = 0.5 - vol * 0.5;
    let u = m.potential_diff(&x, &[2.0, 0.0, 0.0], &a).unwrap();
    assert!((u - expected).abs() < 1e-8, "{u} vs {expected}");
    assert_relative_eq!(u, 0.4979056, max_relative = 1e-6);
}

#[test]
fn potential_diff_vanishes_under_reflection() {
    let m = model(3, &[&[0.0, 1.0, 0.0], &[0.0, -0.5, 0.7], &[0.3, 0.0, 0.0], &[-0.3, 0.0, 0.0]], 3.0, true);
    let a = ball(3, 2.0);
    let u = m.potential_diff(&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0], &a).unwrap();
    assert!(u.abs() < 1e-8, "{u}");
}

#[test]
fn potential_diff_gradients() {
    let m = model(3, &[&[0.5, 0.2, -0.1], &[-0.6, 0.4, 0.3]], 3.0, true);
    let a = ball(3, 1.5);
    let x = [0.1, -0.3, 0.2];
    let y = [-0.2, 0.5, -0.4];
    let gx = central_gradient(&x, 1e-5, |v| m.potential_diff(v, &y, &a)).unwrap();
    let gy = central_gradient(&y, 1e-5, |v| m.potential_diff(&x, v, &a)).unwrap();
    let fx = m.force_partial(&x, &a).unwrap();
    let fy = m.force_partial(&y, &a).unwrap();
    let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
    for k in 0..3 {
        assert!((gx[k] - fx[k]).abs() <= 1e-6 * norm(&fx), "x: {gx:?} vs {fx:?}");
        assert!((gy[k] + fy[k]).abs() <= 1e-6 * norm(&fy), "y: {gy:?} vs {fy:?}");
    }
}

#[test]
fn gradient_consistency_fixtures() {
    let r = test_gradient_consistency(100, 17).unwrap();
    assert!(r.ok(), "{r:?}");
}

#[test]
fn jacobian_radial_frame() {
    let m = model(3, &[&[2.0, 0.0, 0.0]], 3.0, false);
    let j = m.jacobian(&[0.0; 3]).unwrap();
    // DF = -I/r^3 + 3 u u^T / r^5 with u = z - x.
    let expected = [2.0 / 8.0, -1.0 / 8.0, -1.0 / 8.0];
    for r in 0..3 {
        for c in 0..3 {
            let e = if r == c { expected[r] } else { 0.0 };
            assert!((j[(r, c)] - e).abs() < 1e-15, "{j}");
        }
    }
}

#[test]
fn jacobian_compensation_only() {
    let k4 = kappa(4).unwrap();
    let m = model(4, &[], 3.0, true);
    let j = m.jacobian(&[0.3, 0.1, -0.2, 0.0]).unwrap();
    for r in 0..4 {
        for c in 0..4 {
            let e = if r == c { k4 } else { 0.0 };
            assert!((j[(r, c)] - e).abs() < 1e-15);
        }
    }
}

#[test]
fn jacobian_symmetric_trace_and_finite_differences() {
    let c = StarConfig::sample_poisson(3, ball(3, 6.0), 1.0, 8).unwrap();
    let m = FieldModel::over_window(c).unwrap();
    let k3 = kappa(3).unwrap();
    let x = [0.37, -0.21, 0.55];
    let j = m.jacobian(&x).unwrap();
    let norm = j.norm();
    assert!((j.trace() - 3.0 * k3).abs() <= 1e-10 * norm.max(1.0));
    assert!((&j - j.transpose()).abs().max() <= 1e-12 * norm);
    let h = 1e-5;
    for c in 0..3 {
        let mut xp = x;
        let mut xm = x;
        xp[c] += h;
        xm[c] -= h;
        let fp = m.force(&xp).unwrap();
        let fm = m.force(&xm).unwrap();
        for r in 0..3 {
            let fd = (fp[r] - fm[r]) / (2.0 * h);
            assert!((fd - j[(r, c)]).abs() <= 1e-6 * norm, "({r},{c}) {fd} vs {}", j[(r, c)]);
        }
    }
}

#[test]
fn ball_field_integral_closed_form() {
    let k3 = kappa(3).unwrap();
    assert!(close(&ball_field_integral(&[0.0; 3], &[0.0; 3], 2.0).unwrap(), &[0.0; 3], 0.0));
    assert!(close(&ball_field_integral(&[1.0, 0.0, 0.0], &[0.0; 3], 2.0).unwrap(), &[-k3, 0.0, 0.0], 1e-15));
    assert!(matches!(ball_field_integral(&[2.0, 0.0, 0.0], &[0.0; 3], 2.0), Err(Error::Domain(_))));
}

#[test]
fn ball_field_integral_matches_monte_carlo() {
    let x = [0.6, -0.3, 0.4];
    let c = [0.1, 0.0, -0.2];
    let (mean, se) = mc_ball_field(&x, &c, 1.5, 1_000_000, 0.05, 3).unwrap();
    let exact = ball_field_integral(&x, &c, 1.5).unwrap();
    for k in 0..3 {
        assert!((mean[k] - exact[k]).abs() <= 3.0 * se[k], "{mean:?} ± {se:?} vs {exact:?}");
    }
}

#[test]
fn compensated_field_is_unbiased() {
    let d = 3;
    let x = [2.0, -1.5, 3.0];
    let n = 10_000;
    let samples: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            let c = StarConfig::sample_poisson(d, ball(d, 10.0), 1.0, rng::derive_seed(31, "unbiased", s)).unwrap();
            FieldModel::over_window(c).unwrap().force(&x).unwrap()
        })
        .collect();
    for k in 0..d {
        let v: Vec<f64> = samples.iter().map(|f| f[k]).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let se = (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se, "component {k}: {mean} ± {se}");
    }
}

#[test]
fn translation_equivariance() {
    let c = StarConfig::sample_poisson(3, ball(3, 6.0), 1.0, 12).unwrap();
    let u = [3.25, -1.5, 0.75];
    let m = FieldModel::over_window(c.clone()).unwrap();
    let t = FieldModel::over_window(c.translated(&u)).unwrap();
    let mut g = rng::stream(12, "translation", 0);
    for _ in 0..100 {
        let x: Vec<f64> = (0..3).map(|_| g.random_range(-3.0..3.0)).collect();
        let xt: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + b).collect();
        let f = m.force(&x).unwrap();
        let ft = t.force(&xt).unwrap();
        let scale = f.iter().map(|v| v.abs()).fold(1.0, f64::max);
        assert!(close(&f, &ft, 1e-12 * scale), "{f:?} vs {ft:?}");
    }
}

#[test]
fn far_field_tracks_exact_sum() {
    let c = StarConfig::sample_poisson(3, ball(3, 15.0), 1.0, 5).unwrap();
    let m = FieldModel::over_window(c).unwrap().with_far_field(FarFieldOptions::default()).unwrap();
    let mut g = rng::stream(5, "far_field", 0);
    for _ in 0..200 {
        let x: Vec<f64> = (0..3).map(|_| g.random_range(-8.0..8.0)).collect();
        let a = m.force(&x).unwrap();
        let e = m.force_exact(&x).unwrap();
        let err = a.iter().zip(&e).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-3, "{err}");
    }
}
