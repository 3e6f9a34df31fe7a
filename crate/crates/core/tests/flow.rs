use gravalloc::flow::flow_terminal;
use gravalloc::validation::{poisson_model, test_capture_asymptotics};
use gravalloc::{basin_of, flow_time, integrate_flow, rng, Basin, FieldModel, FlowOptions, Point, Region, StarConfig, Terminal};
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

#[test]
fn single_star_capture_time() {
    let m = model(3, &[&[0.0, 0.0, 0.0]], 2.0, false);
    let trace = integrate_flow(&m, &[0.1, 0.0, 0.0], &FlowOptions::default()).unwrap();
    match trace.terminal {
        Terminal::Captured { star: 0, tau } => {
            let exact = 0.1f64.powi(3) / 3.0;
            assert!((tau - exact).abs() / exact < 0.01, "{tau} vs {exact}");
            assert_eq!(flow_time(&trace), Some(tau));
        }
        ref t => panic!("{t:?}"),
    }
}

#[test]
fn start_on_a_star() {
    let m = model(3, &[&[0.5, 0.0, 0.0]], 2.0, true);
    let trace = integrate_flow(&m, &[0.5, 0.0, 0.0], &FlowOptions::default()).unwrap();
    assert_eq!(trace.terminal, Terminal::Captured { star: 0, tau: 0.0 });
    assert_eq!(flow_time(&trace), Some(0.0));
}

#[test]
fn saddle_plane_is_never_left() {
    let m = model(3, &[&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]], 3.0, false);
    let opts = FlowOptions { max_time: 5.0, ..FlowOptions::default() };
    let trace = integrate_flow(&m, &[0.0, 0.5, 0.0], &opts).unwrap();
    assert!(!matches!(trace.terminal, Terminal::Captured { .. }), "{:?}", trace.terminal);
    assert!(trace.samples().all(|(_, y)| y[0] == 0.0));
    assert_eq!(flow_time(&trace), None);
}

#[test]
fn traces_are_well_formed() {
    let m = poisson_model(3, 10.0, 4).unwrap();
    let trace = integrate_flow(&m, &[0.3, -0.7, 1.1], &FlowOptions::default()).unwrap();
    assert_eq!(trace.times[0], 0.0);
    assert!(trace.times.windows(2).all(|w| w[0] < w[1]));
    if let Terminal::Captured { tau, .. } = trace.terminal {
        assert!(tau >= *trace.times.last().unwrap());
    }
    let again = integrate_flow(&m, &[0.3, -0.7, 1.1], &FlowOptions::default()).unwrap();
    assert_eq!(trace, again);
}

#[test]
fn basins_of_simple_configs() {
    let m = model(3, &[&[0.2, 0.1, 0.0]], 4.0, false);
    assert_eq!(basin_of(&m, &[-0.9, 0.4, 0.3], &FlowOptions::default()).unwrap(), Basin::Star(0));
    let m = model(3, &[&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]], 4.0, true);
    assert_eq!(basin_of(&m, &[0.5, 0.0, 0.0], &FlowOptions::default()).unwrap(), Basin::Star(0));
    assert_eq!(basin_of(&m, &[-0.5, 0.0, 0.0], &FlowOptions::default()).unwrap(), Basin::Star(1));
}

#[test]
fn poisson_basins_resolve() {
    let m = poisson_model(3, 12.0, 2).unwrap();
    let opts = FlowOptions::default();
    let mut g = rng::stream(2, "resolve", 0);
    let n = 1000;
    let resolved = (0..n)
        .filter(|_| {
            let x: Vec<f64> = (0..3).map(|_| g.random_range(-4.0..4.0)).collect();
            basin_of(&m, &x, &opts).unwrap().star().is_some()
        })
        .count();
    assert!(resolved as f64 >= 0.99 * n as f64, "{resolved}");
}

#[test]
fn leaving_the_valid_ball_is_unresolved() {
    let m = model(3, &[], 10.0, true);
    let t = flow_terminal(&m, &[1.0, 0.0, 0.0], &FlowOptions::default()).unwrap();
    assert!(matches!(t, Terminal::ExitedValidRegion { .. }), "{t:?}");
    assert!(basin_of(&m, &[1.0, 0.0, 0.0], &FlowOptions::default()).unwrap().star().is_none());
}

#[test]
fn potential_decreases_along_curves() {
    let c = StarConfig::sample_poisson(5, ball(5, 4.0), 1.0, 9).unwrap();
    let m = FieldModel::over_window(c).unwrap();
    let opts = FlowOptions::default();
    let a = m.truncation().clone();
    let mut g = rng::stream(9, "monotone", 0);
    let mut checked = 0;
    for _ in 0..20 {
        let x: Vec<f64> = (0..5).map(|_| g.random_range(-1.0..1.0)).collect();
        let trace = integrate_flow(&m, &x, &opts).unwrap();
        let mut prev = f64::INFINITY;
        for (_, y) in trace.samples() {
            let Ok(u) = m.potential_partial(y, &a) else { continue };
            assert!(u <= prev + 10.0 * opts.abs_tol, "{u} after {prev}");
            prev = u;
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn potential_difference_decreases_along_curves_in_three_dimensions() {
    let c = StarConfig::sample_poisson(3, ball(3, 5.0), 1.0, 10).unwrap();
    let m = FieldModel::over_window(c).unwrap();
    let opts = FlowOptions::default();
    let a = ball(3, 2.5);
    let x0 = [0.4, 0.1, -0.3];
    let trace = integrate_flow(&m, &x0, &opts).unwrap();
    let mut prev = 0.0;
    for (t, y) in trace.samples().skip(1).step_by(3) {
        if y.iter().map(|v| v * v).sum::<f64>() > 2.0 * 2.0 {
            break;
        }
        let Ok(u) = m.potential_diff(&x0, y, &a) else { continue };
        assert!(u <= prev + 10.0 * opts.abs_tol, "t={t}: {u} after {prev}");
        prev = u;
    }
}

#[test]
fn capture_asymptotics() {
    let r = test_capture_asymptotics(3, 6, &FlowOptions::default()).unwrap();
    assert!(r.ok(), "{r:?}");
}

#[test]
fn options_are_validated() {
    let bad = FlowOptions { rel_tol: 0.0, ..FlowOptions::default() };
    assert!(bad.validate().is_err());
    let bad = FlowOptions { capture: gravalloc::flow::CapturePolicy { dominance_factor: 1.5, hard_radius: 1e-4 }, ..FlowOptions::default() };
    assert!(bad.validate().is_err());
    let m = model(3, &[], 10.0, true);
    assert_eq!(FlowOptions::default().valid_radius(&m), 8.0);
}
