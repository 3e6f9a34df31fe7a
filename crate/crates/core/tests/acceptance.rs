//! Acceptance suite: one PASS/FAIL line per criterion at its pinned
//! tolerance. Arguments filter criteria by substring.

use std::f64::consts::PI;
use std::time::Instant;

use gravalloc::allocation::{blocking_pairs, stable_marriage_allocate, stable_marriage_quota, GridSpec};
use gravalloc::validation::*;
use gravalloc::{rng, FlowOptions, Point, Region, StarConfig};

const SEED: u64 = 20240601;

fn kappa_ref(d: usize) -> f64 {
    match d {
        3 => 4.0 * PI / 3.0,
        4 => PI * PI / 2.0,
        5 => 8.0 * PI * PI / 15.0,
        _ => unreachable!(),
    }
}

fn seed(label: &str) -> u64 {
    rng::derive_seed(SEED, label, 0)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Check = fn() -> gravalloc::Result<Outcome>;

fn fairness() -> gravalloc::Result<Outcome> {
    let r = test_fairness(3, 20.0, 20, 1_000_000, seed("fairness"), &FlowOptions::default())?;
    let v = &r.details;
    let mean = v["grand_mean"].as_f64().unwrap();
    let outliers = v["outliers"].as_u64().unwrap();
    let coverage = v["coverage"].as_f64().unwrap();
    let pass = (0.98..=1.02).contains(&mean) && outliers == 0 && coverage >= 0.99;
    Ok(outcome(
        pass,
        format!(
            "grand mean {mean:.4} over {} basins (target [0.98, 1.02]), outliers {outliers}, coverage {coverage:.5}",
            v["stars"]
        ),
    ))
}

fn liouville() -> gravalloc::Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (d, l) in [(3, 12.0), (4, 8.0)] {
        let r = test_liouville(d, l, &liouville_grid(), 100_000, seed(&format!("liouville_{d}")), &FlowOptions::default())?;
        let fit = &r.details["fit"];
        let rate = fit["rate"].as_f64().unwrap();
        let unresolved = fit["unresolved_fraction"].as_f64().unwrap();
        let target = d as f64 * kappa_ref(d);
        let rel = (rate - target).abs() / target;
        pass &= rel <= 0.05 && unresolved <= 0.05;
        parts.push(format!("d={d}: rate {rate:.3} vs {target:.3} ({:.2}%)", 100.0 * rel));
    }
    Ok(outcome(pass, parts.join("; ")))
}

fn gradient() -> gravalloc::Result<Outcome> {
    let cases = gradient_cases(100, 1e-5, seed("gradient"))?;
    let worst = cases.iter().map(|c| c.relative_error()).fold(0.0, f64::max);
    Ok(outcome(worst <= 1e-6, format!("{} fixtures, worst relative error {worst:.2e} (limit 1e-6)", cases.len())))
}

fn shell_theorem() -> gravalloc::Result<Outcome> {
    let fixtures: [(Vec<f64>, Vec<f64>, f64); 2] = [
        (vec![0.6, -0.3, 0.4], vec![0.1, 0.0, -0.2], 1.5),
        (vec![0.2, 0.5, -0.1, 0.3], vec![0.0; 4], 1.0),
    ];
    let mut worst: f64 = 0.0;
    for (i, (x, c, l)) in fixtures.iter().enumerate() {
        let d = x.len();
        let (mean, se) = mc_ball_field(x, c, *l, 10_000_000, 0.02, rng::derive_seed(SEED, "shell", i as u64))?;
        for k in 0..d {
            let exact = -kappa_ref(d) * (x[k] - c[k]);
            worst = worst.max((mean[k] - exact).abs() / se[k]);
        }
    }
    Ok(outcome(worst <= 3.0, format!("10^7 samples per fixture, worst deviation {worst:.2} standard errors (limit 3)")))
}

fn flux() -> gravalloc::Result<Outcome> {
    let s = seed("flux");
    let mut worst: f64 = 0.0;
    for i in 0..50u64 {
        let d = if i % 3 == 2 { 4 } else { 3 };
        let (model, c, rho) = flux_fixture(d, s, i)?;
        let flux = sphere_flux(&model, &c, rho, if d == 4 { 48 } else { 96 })?;
        let k = model
            .config()
            .stars()
            .filter(|z| z.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() < rho * rho)
            .count() as f64;
        let kd = kappa_ref(d);
        let target = d as f64 * kd * (kd * rho.powi(d as i32) - k);
        worst = worst.max((flux - target).abs() / target.abs().max(d as f64 * kd));
    }
    Ok(outcome(worst <= 1e-3, format!("50 spheres, worst relative error {worst:.2e} (limit 1e-3)")))
}

fn stable_scaling() -> gravalloc::Result<Outcome> {
    let reports =
        [test_stable_scaling(3, &[2, 8], 10_000, 30.0, seed("stable_3"))?, test_stable_scaling(4, &[2], 10_000, 10.0, seed("stable_4"))?];
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &reports {
        for case in r.details["cases"].as_array().unwrap() {
            let p = case["p_value"].as_f64().unwrap();
            pass &= p > 0.01;
            parts.push(format!("(d={}, n={}) p={p:.3}", r.details["d"], case["n"]));
        }
    }
    Ok(outcome(pass, format!("{} (limit p > 0.01)", parts.join(", "))))
}

fn capture() -> gravalloc::Result<Outcome> {
    let deltas: Vec<f64> = (0..=8).map(|j| 10f64.powf(-3.0 + j as f64 / 4.0)).collect();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for d in [3, 4] {
        for c in capture_cases(d, &deltas, 5, seed(&format!("capture_{d}")), &FlowOptions::default())? {
            let target = c.delta.powi(d as i32) / d as f64;
            let err = if c.captured_by_start_star { (c.tau - target).abs() / target } else { f64::INFINITY };
            worst = worst.max(err);
            n += 1;
        }
    }
    Ok(outcome(worst <= 0.05, format!("{n} starts, delta in [1e-3, 1e-1], worst relative error {:.2}% (limit 5%)", 100.0 * worst)))
}

fn deterministic() -> gravalloc::Result<Outcome> {
    let exact = 1.0 - 2.0 * (-1.0f64).exp();
    let worked = (poisson_upper_tail(1.0, 2.0) - exact).abs() < 1e-14 && exact <= (-0.5 * 2f64.ln()).exp();
    let mut reports = vec![
        test_poisson_tails(&[0.5, 1.0, 2.0, 5.0, 10.0, 100.0])?,
        test_hadamard_variant(20, 10_000, seed("hadamard"))?,
        test_inverse_distance_sum(3, 1000, 10_000, seed("inverse_distance"))?,
    ];
    for n in 1..=5 {
        reports.push(test_joint_density_core(3, n, 0.5, 10.0, 1000, rng::derive_seed(SEED, "joint_density", n as u64))?);
    }
    let failed: Vec<&str> = reports.iter().filter(|r| r.status != Status::Pass).map(|r| r.name.as_str()).collect();
    Ok(outcome(
        worked && failed.is_empty(),
        format!("{} reports, failures {:?}, worked example {}", reports.len(), failed, if worked { "ok" } else { "wrong" }),
    ))
}

fn stable_marriage() -> gravalloc::Result<Outcome> {
    let grid = GridSpec::new(Region::cube(Point::origin(3), 4.0)?, 32)?;
    let quota = stable_marriage_quota(&grid);
    let mut blocking = 0;
    let mut short = 0;
    for c in 0..10u64 {
        let window = Region::cube(Point::origin(3), 3.5)?;
        let config = StarConfig::sample_poisson(3, window, 1.0, rng::derive_seed(SEED, "marriage", c))?;
        let map = stable_marriage_allocate(&config, &grid)?;
        blocking += blocking_pairs(&config, &map)?.len();
        short += (0..config.len()).filter(|&s| map.owned_cells(s).len() != quota).count();
    }
    Ok(outcome(
        blocking == 0 && short == 0,
        format!("10 configs on 32^3 grids, {blocking} blocking pairs, {short} stars off quota {quota}"),
    ))
}

fn non_increasing(est: &[f64]) -> bool {
    est.windows(2).all(|w| w[1] <= w[0])
}

fn strictly_decreasing_where_hit(t: &TailEstimate) -> bool {
    let est: Vec<f64> = t.estimates().into_iter().zip(&t.hits).filter(|(_, &h)| h >= 10).map(|(p, _)| p).collect();
    est.len() >= 2 && est.windows(2).all(|w| w[1] < w[0])
}

fn tails() -> gravalloc::Result<Outcome> {
    let (diam, cross) =
        estimate_allocation_tails(3, 20.0, &[1.0, 2.0, 3.0, 4.0], &[0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0], 200, seed("tails"))?;
    let t_grid: Vec<f64> = (1..=20).map(|k| 0.3 * k as f64).collect();
    let partial = estimate_partial_potential_tail(5, 2.0, 4.0, &t_grid, 100_000, seed("partial_tail"))?;
    let de = diam.estimates();
    let ce = cross.estimates();
    let pass = non_increasing(&de)
        && non_increasing(&ce)
        && [&partial.potential, &partial.force, &partial.jacobian].iter().all(|t| strictly_decreasing_where_hit(t));
    let fmt = |v: &[f64]| v.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join(" ");
    Ok(outcome(
        pass,
        format!(
            "diameter P(X>R) R=1..4: [{}]; crossing R=0.25..5: [{}]; partial log-tails decreasing: {}",
            fmt(&de),
            fmt(&ce),
            partial.decreasing()
        ),
    ))
}

const CRITERIA: [(&str, Check); 10] = [
    ("fairness", fairness),
    ("liouville_decay", liouville),
    ("gradient_consistency", gradient),
    ("shell_theorem_compensation", shell_theorem),
    ("flux_identity", flux),
    ("stable_law_scaling", stable_scaling),
    ("capture_asymptotics", capture),
    ("deterministic_battery", deterministic),
    ("stable_marriage_stability", stable_marriage),
    ("tail_monotonicity", tails),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += !pass as usize;
        println!("{} {name}: {detail} [{:.1} s]", if pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    }
    println!(
        "NOTE asymptotic tail exponents and large-deviation constants are not reproducible at this scale; \
         tail_monotonicity checks the monotone substitute"
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
