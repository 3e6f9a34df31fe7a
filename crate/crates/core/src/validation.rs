//! Test batteries and empirical tail estimators.

use std::io::Write;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use statrs::function::gamma::ln_gamma;

use crate::allocation::{detect_crossing, lattice_basin, mc_cell_volumes};
use crate::error::{Error, Result};
use crate::field::{mean_field, mean_potential, FarFieldOptions, FieldModel};
use crate::flow::{flow_terminal, FlowOptions, Terminal};
use crate::geometry::{dist2, kappa, norm2, Point, Region, StarConfig};
use crate::io::real;
use crate::rng;
use crate::stats::{ks_two_sample, linear_fit, wilson_interval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Parameters outside the test's hypothesis.
    Skipped,
    /// Too little usable data to decide.
    Inconclusive,
}

/// Which side of the threshold passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtMost,
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub status: Status,
    pub statistic: f64,
    pub threshold: f64,
    pub direction: Direction,
    pub details: Value,
    pub seed: Option<u64>,
}

impl TestReport {
    pub fn judged(
        name: &str,
        statistic: f64,
        threshold: f64,
        direction: Direction,
        details: Value,
        seed: Option<u64>,
    ) -> Self {
        let ok = match direction {
            Direction::AtMost => statistic <= threshold,
            Direction::Above => statistic > threshold,
        };
        Self {
            name: name.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            statistic,
            threshold,
            direction,
            details,
            seed,
        }
    }

    fn with_status(mut self, status: Status) -> Self {
        self.status = status;
        self
    }

    /// Pass and skipped reports do not fail a suite.
    pub fn ok(&self) -> bool {
        matches!(self.status, Status::Pass | Status::Skipped)
    }
}

/// Per-threshold hit counts with 95% Wilson intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub thresholds: Vec<f64>,
    pub trials: Vec<u64>,
    pub hits: Vec<u64>,
    pub ci: Vec<(f64, f64)>,
    /// Trials dropped because the quantity could not be resolved.
    pub unresolved: u64,
}

impl TailEstimate {
    pub fn from_counts(thresholds: Vec<f64>, trials: Vec<u64>, hits: Vec<u64>, unresolved: u64) -> Self {
        let ci = trials.iter().zip(&hits).map(|(&n, &h)| wilson_interval(h, n)).collect();
        Self { thresholds, trials, hits, ci, unresolved }
    }

    /// Counts of `value > threshold` (or `>=` when `inclusive`).
    pub fn from_values(thresholds: &[f64], values: &[f64], inclusive: bool, unresolved: u64) -> Self {
        let n = values.len() as u64;
        let hits = thresholds
            .iter()
            .map(|&t| values.iter().filter(|&&v| if inclusive { v >= t } else { v > t }).count() as u64)
            .collect();
        Self::from_counts(thresholds.to_vec(), vec![n; thresholds.len()], hits, unresolved)
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.hits
            .iter()
            .zip(&self.trials)
            .map(|(&h, &n)| if n == 0 { f64::NAN } else { h as f64 / n as f64 })
            .collect()
    }

    /// Point estimates never increase along the (sorted) thresholds.
    pub fn non_increasing(&self) -> bool {
        self.estimates().windows(2).all(|w| w[1] <= w[0])
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "threshold,trials,hits,estimate,ci_low,ci_high")?;
        for (i, p) in self.estimates().iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                real(self.thresholds[i]),
                self.trials[i],
                self.hits[i],
                real(*p),
                real(self.ci[i].0),
                real(self.ci[i].1)
            )?;
        }
        Ok(())
    }
}

fn violations_report(name: &str, violations: u64, details: Value, seed: Option<u64>) -> TestReport {
    TestReport::judged(name, violations as f64, 0.0, Direction::AtMost, details, seed)
}

fn ln_pmf(lambda: f64, k: u64) -> f64 {
    k as f64 * lambda.ln() - lambda - ln_gamma(k as f64 + 1.0)
}

/// `P(X >= t)` for `X ~ Poisson(lambda)`, by direct summation.
pub fn poisson_upper_tail(lambda: f64, t: f64) -> f64 {
    let k0 = t.max(0.0).ceil() as u64;
    if k0 == 0 {
        return 1.0;
    }
    if (k0 as f64) > lambda {
        let mut sum = 0.0;
        let mut k = k0;
        loop {
            let term = ln_pmf(lambda, k).exp();
            sum += term;
            if term <= sum * 1e-18 || term == 0.0 {
                return sum;
            }
            k += 1;
        }
    }
    let below: f64 = (0..k0).map(|k| ln_pmf(lambda, k).exp()).sum();
    (1.0 - below).max(0.0)
}

/// `P(X <= t)` for `X ~ Poisson(lambda)`.
pub fn poisson_lower_tail(lambda: f64, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    (0..=t.floor() as u64).map(|k| ln_pmf(lambda, k).exp()).sum::<f64>().min(1.0)
}

/// Width of the two-sided bound's `t` range.
pub const POISSON_DELTA: f64 = 0.5;

/// Exact Poisson tails against the one- and two-sided exponential bounds.
pub fn test_poisson_tails(lambda_grid: &[f64]) -> Result<TestReport> {
    if lambda_grid.is_empty() || lambda_grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::Validation("lambda values must be positive".into()));
    }
    let mut violations = 0u64;
    let mut checks = 0u64;
    let mut worst: f64 = 0.0;
    for &lambda in lambda_grid {
        let mut ts: Vec<f64> = (0..=100).map(|j| 2.0 * lambda * (1.0 + j as f64 / 10.0)).collect();
        let top = 2.0 * lambda + 10.0 * lambda.sqrt() + 20.0;
        ts.extend((((2.0 * lambda).ceil() as u64)..=top as u64).map(|k| k as f64));
        for t in ts {
            let exact = poisson_upper_tail(lambda, t);
            let bound = (-0.25 * t * (t / lambda).ln()).exp();
            checks += 1;
            if bound > 0.0 {
                worst = worst.max(exact / bound);
            }
            if exact > bound * (1.0 + 1e-12) {
                violations += 1;
            }
        }
        for j in 0..=50 {
            let t = POISSON_DELTA * j as f64 / 50.0;
            let exact = if t == 0.0 {
                1.0
            } else {
                poisson_upper_tail(lambda, lambda * (1.0 + t)) + poisson_lower_tail(lambda, lambda * (1.0 - t))
            };
            let bound = 2.0 * (-lambda * t * t / 3.0).exp();
            checks += 1;
            worst = worst.max(exact / bound);
            if exact > bound * (1.0 + 1e-12) {
                violations += 1;
            }
        }
    }
    Ok(violations_report(
        "poisson_tails",
        violations,
        json!({ "lambdas": lambda_grid, "checks": checks, "max_ratio_to_bound": worst, "delta": POISSON_DELTA }),
        None,
    ))
}

/// Random diagonally dominant matrices against the determinant lower bound.
pub fn test_hadamard_variant(k_max: usize, trials: usize, seed: u64) -> Result<TestReport> {
    if k_max < 1 {
        return Err(Error::Validation("k_max must be at least 1".into()));
    }
    let results: Vec<(bool, f64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut g = rng::stream(seed, "hadamard", i as u64);
            let k = g.random_range(1..=k_max);
            let density: f64 = g.random();
            let mut a = DMatrix::<f64>::zeros(k, k);
            for r in 0..k {
                let mut off = 0.0;
                for c in 0..k {
                    if r != c && g.random::<f64>() < density {
                        a[(r, c)] = g.random_range(-1.0..1.0);
                        off += f64::abs(a[(r, c)]);
                    }
                }
                // about a third of the rows sit exactly on the dominance boundary
                let slack = if g.random::<f64>() < 0.33 { 1.0 } else { 1.0 + g.random::<f64>() * 3.0 };
                let mag = if off == 0.0 { g.random_range(0.1..2.0) } else { 2.0 * off * slack };
                a[(r, r)] = if g.random::<bool>() { mag } else { -mag };
            }
            let ln_det = a.clone().determinant().abs().ln();
            let ln_bound = (0..k).map(|r| a[(r, r)].abs().ln()).sum::<f64>() - k as f64 * std::f64::consts::LN_2;
            (ln_det < ln_bound - 1e-9, ln_det - ln_bound)
        })
        .collect();
    let violations = results.iter().filter(|r| r.0).count() as u64;
    let margin = results.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    Ok(violations_report(
        "hadamard_variant",
        violations,
        json!({ "k_max": k_max, "trials": trials, "min_log_margin": margin }),
        Some(seed),
    ))
}

/// Constant in the inverse-distance bound.
pub fn inverse_distance_constant(d: usize) -> f64 {
    2.0 * 8f64.powi(d as i32)
}

/// Dart-throwing sample of up to `n` points in `[0, side]^d` with pairwise
/// distances above `s`.
pub fn separated_points(d: usize, n: usize, s: f64, side: f64, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    use std::collections::HashMap;
    let cell = |x: &[f64]| -> Vec<i64> { x.iter().map(|v| (v / s).floor() as i64).collect() };
    let mut grid: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut misses = 0;
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(d as u32))
        .map(|mut m| {
            (0..d)
                .map(|_| {
                    let v = (m % 3) as i64 - 1;
                    m /= 3;
                    v
                })
                .collect()
        })
        .collect();
    while pts.len() < n && misses < 50 * n + 1000 {
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * side).collect();
        let c = cell(&x);
        let clash = offsets.iter().any(|o| {
            let key: Vec<i64> = c.iter().zip(o).map(|(a, b)| a + b).collect();
            grid.get(&key).is_some_and(|v| v.iter().any(|&j| dist2(&pts[j], &x) <= s * s))
        });
        if clash {
            misses += 1;
            continue;
        }
        grid.entry(c).or_default().push(pts.len());
        pts.push(x);
    }
    pts
}

fn inverse_distance_sum(points: &[Vec<f64>], i: usize) -> f64 {
    let d = points[i].len() as i32;
    points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, p)| dist2(p, &points[i]).sqrt().powi(-d))
        .sum()
}

/// Inverse-distance sums of separated sets against `C log N / S^d`.
pub fn test_inverse_distance_sum(d: usize, n_sets: usize, n_max: usize, seed: u64) -> Result<TestReport> {
    if d < 1 || n_max < 2 {
        return Err(Error::Validation("need d >= 1 and n_max >= 2".into()));
    }
    let c = inverse_distance_constant(d);
    let check = |pts: &[Vec<f64>], s: f64, idx: &[usize]| -> (u64, f64) {
        let bound = c * (pts.len() as f64).ln() / s.powi(d as i32);
        let mut v = 0;
        let mut worst: f64 = 0.0;
        for &i in idx {
            let sum = inverse_distance_sum(pts, i);
            worst = worst.max(sum / bound);
            if sum > bound {
                v += 1;
            }
        }
        (v, worst)
    };
    let random: Vec<(u64, f64)> = (0..n_sets)
        .into_par_iter()
        .map(|k| {
            let mut g = rng::stream(seed, "inverse_distance", k as u64);
            let s: f64 = g.random_range(0.5..2.0);
            let n = (2.0 * ((n_max as f64 / 2.0).ln() * g.random::<f64>()).exp()).round().max(2.0) as usize;
            let side = (n as f64 * kappa(d).unwrap() * (s / 2.0).powi(d as i32) / 0.3).powf(1.0 / d as f64).max(2.0 * s);
            let pts = separated_points(d, n, s, side, &mut g);
            if pts.len() < 2 {
                return (0, 0.0);
            }
            let mid = vec![side / 2.0; d];
            let central = (0..pts.len()).min_by(|&a, &b| dist2(&pts[a], &mid).total_cmp(&dist2(&pts[b], &mid))).unwrap();
            check(&pts, s, &[0, central])
        })
        .collect();
    // a regular lattice just above the separation, checked at every point
    let s = 1.0;
    let side = ((n_max as f64).powf(1.0 / d as f64).floor() as usize).clamp(2, 12);
    let lattice: Vec<Vec<f64>> = (0..side.pow(d as u32))
        .map(|mut m| {
            (0..d)
                .map(|_| {
                    let v = (m % side) as f64 * s * (1.0 + 1e-9);
                    m /= side;
                    v
                })
                .collect()
        })
        .collect();
    let all: Vec<usize> = (0..lattice.len()).collect();
    let grid = check(&lattice, s, &all);
    let violations = random.iter().map(|r| r.0).sum::<u64>() + grid.0;
    let worst = random.iter().map(|r| r.1).fold(grid.1, f64::max);
    Ok(violations_report(
        "inverse_distance_sum",
        violations,
        json!({ "d": d, "sets": n_sets, "n_max": n_max, "constant": c, "max_ratio_to_bound": worst, "lattice_points": lattice.len() }),
        Some(seed),
    ))
}

/// Largest `lambda` accepted by the joint-density probes.
pub fn joint_density_lambda_limit(d: usize, n: usize, s: f64) -> f64 {
    s / (10.0 * (n.max(2) as f64).ln().powf(1.0 / d as f64))
}

fn g_map(x: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<f64> {
    let d = x[0].len();
    let mut out = vec![0.0; x.len() * d];
    for (i, xi) in x.iter().enumerate() {
        for yj in y {
            let r2 = dist2(yj, xi);
            let f = r2.sqrt().powi(-(d as i32));
            for k in 0..d {
                out[i * d + k] += (yj[k] - xi[k]) * f;
            }
        }
    }
    out
}

fn g_jacobian(x: &[Vec<f64>], y: &[Vec<f64>]) -> DMatrix<f64> {
    let d = x[0].len();
    let n = x.len();
    let mut j = DMatrix::<f64>::zeros(n * d, n * d);
    for (i, xi) in x.iter().enumerate() {
        for (b, yb) in y.iter().enumerate() {
            let v: Vec<f64> = yb.iter().zip(xi).map(|(a, c)| a - c).collect();
            let r2 = norm2(&v);
            let rd = r2.sqrt().powi(-(d as i32));
            for k in 0..d {
                for l in 0..d {
                    let delta = if k == l { 1.0 } else { 0.0 };
                    j[(i * d + k, b * d + l)] = (delta - d as f64 * v[k] * v[l] / r2) * rd;
                }
            }
        }
    }
    j
}

/// Orthonormal basis whose first column is `u / |u|`.
fn radial_frame(u: &[f64]) -> DMatrix<f64> {
    let d = u.len();
    let mut m = DMatrix::<f64>::identity(d, d);
    let norm = norm2(u).sqrt();
    for k in 0..d {
        m[(k, 0)] = u[k] / norm;
    }
    // Gram-Schmidt against the standard basis, skipping the most aligned axis
    let skip = (0..d).max_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs())).unwrap();
    let mut col = 1;
    for e in (0..d).filter(|&e| e != skip) {
        let mut v = nalgebra::DVector::<f64>::zeros(d);
        v[e] = 1.0;
        for c in 0..col {
            let proj = m.column(c).dot(&v);
            v -= m.column(c) * proj;
        }
        let n = v.norm();
        m.set_column(col, &(v / n));
        col += 1;
    }
    m
}

/// Injectivity and Jacobian probes for the map from star positions in
/// small balls to the vector of forces at the ball centers.
pub fn test_joint_density_core(
    d: usize,
    n: usize,
    lambda: f64,
    s: f64,
    trials: usize,
    seed: u64,
) -> Result<TestReport> {
    if !(1..=5).contains(&n) || d < 3 {
        return Err(Error::Validation("need 1 <= N <= 5 and d >= 3".into()));
    }
    let limit = joint_density_lambda_limit(d, n, s);
    if !(lambda > 0.0) || lambda > limit {
        return Ok(TestReport::judged(
            "joint_density_core",
            lambda,
            limit,
            Direction::AtMost,
            json!({ "reason": format!("lambda = {lambda} outside (0, {limit}]"), "d": d, "n": n, "s": s }),
            Some(seed),
        )
        .with_status(Status::Skipped));
    }
    let mut g = rng::stream(seed, "joint_density_centers", 0);
    let x = loop {
        let pts = separated_points(d, n, s, s * (n as f64 + 1.0), &mut g);
        if pts.len() == n {
            break pts;
        }
    };
    let ball = |c: &[f64], g: &mut rng::Rng| -> Vec<f64> {
        let r = Region::ball(Point::new(c.to_vec()).unwrap(), lambda).unwrap();
        let mut out = vec![0.0; d];
        r.sample_uniform(g, &mut out).unwrap();
        out
    };
    let results: Vec<(f64, u64, u64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut g = rng::stream(seed, "joint_density", t as u64);
            let y: Vec<Vec<f64>> = x.iter().map(|c| ball(c, &mut g)).collect();
            let yp: Vec<Vec<f64>> = x.iter().map(|c| ball(c, &mut g)).collect();
            let gap = dist2(&g_map(&x, &y), &g_map(&x, &yp)).sqrt();
            let dy: f64 = y.iter().zip(&yp).map(|(a, b)| dist2(a, b)).sum::<f64>().sqrt();
            let ratio = gap / dy;
            // rotate each diagonal block into its radial frame
            let j = g_jacobian(&x, &y);
            let mut r = DMatrix::<f64>::zeros(n * d, n * d);
            for (i, (xi, yi)) in x.iter().zip(&y).enumerate() {
                let u: Vec<f64> = yi.iter().zip(xi).map(|(a, b)| a - b).collect();
                r.view_mut((i * d, i * d), (d, d)).copy_from(&radial_frame(&u));
            }
            let a = r.transpose() * &j * &r;
            let k = n * d;
            let dominant = (0..k).all(|row| {
                let off: f64 = (0..k).filter(|&c| c != row).map(|c| a[(row, c)].abs()).sum();
                a[(row, row)].abs() >= 2.0 * off
            });
            let (checked, violated, margin) = if dominant {
                let ln_det = a.clone().determinant().abs().ln();
                let ln_bound = (0..k).map(|i| a[(i, i)].abs().ln()).sum::<f64>() - k as f64 * std::f64::consts::LN_2;
                (1, u64::from(ln_det < ln_bound - 1e-9), ln_det - ln_bound)
            } else {
                (0, 0, f64::INFINITY)
            };
            (ratio, checked, violated, margin)
        })
        .collect();
    let min_ratio = results.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let checked: u64 = results.iter().map(|r| r.1).sum();
    let violated: u64 = results.iter().map(|r| r.2).sum();
    let margin = results.iter().map(|r| r.3).fold(f64::INFINITY, f64::min);
    // explicit inverse of g for a single star
    let inverse_error = if n == 1 {
        let v: Vec<f64> = (0..d).map(|k| if k == 0 { lambda / 2.0 } else { 0.0 }).collect();
        let z: Vec<f64> = v.iter().map(|c| c * norm2(&v).sqrt().powi(-(d as i32))).collect();
        let zn = norm2(&z).sqrt().powf(d as f64 / (d as f64 - 1.0));
        Some(dist2(&z.iter().map(|c| c / zn).collect::<Vec<_>>(), &v).sqrt())
    } else {
        None
    };
    let injective = min_ratio > 0.0;
    let report = violations_report(
        "joint_density_core",
        violated + u64::from(!injective),
        json!({
            "d": d, "n": n, "lambda": lambda, "s": s, "trials": trials,
            "min_image_gap_ratio": min_ratio, "jacobian_checks": checked,
            "jacobian_violations": violated, "min_log_margin": margin,
            "single_star_inverse_error": inverse_error,
        }),
        Some(seed),
    );
    Ok(report)
}

/// Adds `g(z)` at the origin for the stars of one unit-intensity Poisson
/// process in `B(0, radius)`.
fn add_unit_process(d: usize, radius: f64, g: &mut rng::Rng, out: &mut [f64]) {
    let mean = kappa(d).unwrap() * radius.powi(d as i32);
    let count = Poisson::new(mean).unwrap().sample(g) as u64;
    let mut u = vec![0.0; d];
    for _ in 0..count {
        let mut n2: f64 = 0.0;
        for v in u.iter_mut() {
            *v = StandardNormal.sample(g);
            n2 += *v * *v;
        }
        let r = radius * g.random::<f64>().powf(1.0 / d as f64);
        let scale = r.powi(1 - d as i32) / n2.sqrt();
        for k in 0..d {
            out[k] += u[k] * scale;
        }
    }
}

/// KS comparison of `|F(0)|` for `n` pooled unit processes against the
/// single-process value scaled by `n^{(d-1)/d}`. The single process lives in
/// `B(0, l)`, the pooled ones in `B(0, l n^{-1/d})`, so both sums cover the
/// same expected number of stars.
pub fn test_stable_scaling(d: usize, n_values: &[usize], samples: usize, l: f64, seed: u64) -> Result<TestReport> {
    if d < 3 || n_values.is_empty() || n_values.contains(&0) || samples < 2 || !(l > 0.0) {
        return Err(Error::Validation("need d >= 3, n >= 1, samples >= 2 and l > 0".into()));
    }
    let mut rows = Vec::new();
    let mut min_p: f64 = 1.0;
    for &n in n_values {
        let label = format!("stable_{d}_{n}");
        let (pooled, single): (Vec<f64>, Vec<f64>) = (0..samples)
            .into_par_iter()
            .map(|i| {
                let mut g = rng::stream(seed, &label, i as u64);
                let mut a = vec![0.0; d];
                let r = l * (n as f64).powf(-1.0 / d as f64);
                for _ in 0..n {
                    add_unit_process(d, r, &mut g, &mut a);
                }
                let mut b = vec![0.0; d];
                add_unit_process(d, l, &mut g, &mut b);
                let scale = (n as f64).powf((d as f64 - 1.0) / d as f64);
                (norm2(&a).sqrt(), scale * norm2(&b).sqrt())
            })
            .unzip();
        let ks = ks_two_sample(&pooled, &single);
        min_p = min_p.min(ks.p_value);
        rows.push(json!({ "n": n, "ks_statistic": ks.statistic, "p_value": ks.p_value }));
    }
    Ok(TestReport::judged(
        "stable_scaling",
        min_p,
        0.01,
        Direction::Above,
        json!({ "d": d, "l": l, "samples": samples, "cases": rows }),
        Some(seed),
    ))
}

/// Compensated far-field model over a seed-pinned unit-intensity config in
/// `B(0, l)`.
pub fn poisson_model(d: usize, l: f64, seed: u64) -> Result<FieldModel> {
    let window = Region::ball(Point::origin(d), l)?;
    let config = StarConfig::sample_poisson(d, window, 1.0, seed)?;
    FieldModel::over_window(config)?.with_far_field(FarFieldOptions::default())
}

/// Outcome of a Liouville fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleFit {
    pub rate: f64,
    pub intercept: f64,
    pub t_grid: Vec<f64>,
    pub survival: Vec<f64>,
    pub used_points: u64,
    pub unresolved_fraction: f64,
}

/// Capture times of uniform points of `Q(0, q)`; only points whose star lies
/// in `Q(0, q - margin)` count, so that nearly every counted basin lies
/// wholly in the sampled cube.
pub fn liouville_fit(
    model: &FieldModel,
    q: f64,
    margin: f64,
    t_grid: &[f64],
    n_points: usize,
    seed: u64,
    opts: &FlowOptions,
) -> Result<LiouvilleFit> {
    let d = model.dim();
    let cube = Region::cube(Point::origin(d), q)?;
    let taus: Vec<Option<Option<f64>>> = (0..n_points)
        .into_par_iter()
        .map(|i| {
            let mut g = rng::stream(seed, "liouville", i as u64);
            let mut x = vec![0.0; d];
            cube.sample_uniform(&mut g, &mut x)?;
            Ok(match flow_terminal(model, &x, opts)? {
                Terminal::Captured { star, tau } => {
                    let z = model.config().star(star);
                    let inner = z.iter().all(|v| v.abs() <= q - margin);
                    Some(inner.then_some(tau))
                }
                _ => None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let unresolved = taus.iter().filter(|t| t.is_none()).count();
    let used: Vec<f64> = taus.into_iter().flatten().flatten().collect();
    if used.is_empty() {
        return Err(Error::Unresolved("no point flowed into an inner star".into()));
    }
    let survival: Vec<f64> =
        t_grid.iter().map(|&t| used.iter().filter(|&&tau| tau > t).count() as f64 / used.len() as f64).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        t_grid.iter().zip(&survival).filter(|(_, &s)| s > 0.0).map(|(&t, &s)| (t, s.ln())).unzip();
    let (intercept, slope) = linear_fit(&xs, &ys);
    Ok(LiouvilleFit {
        rate: -slope,
        intercept,
        t_grid: t_grid.to_vec(),
        survival,
        used_points: used.len() as u64,
        unresolved_fraction: unresolved as f64 / n_points as f64,
    })
}

/// Survival-rate fit against `d * kappa_d`.
pub fn test_liouville(
    d: usize,
    l: f64,
    t_grid: &[f64],
    n_points: usize,
    seed: u64,
    opts: &FlowOptions,
) -> Result<TestReport> {
    let model = poisson_model(d, l, rng::derive_seed(seed, "liouville_config", 0))?;
    let valid = opts.valid_radius(&model);
    let q = 0.9 * valid / (d as f64).sqrt();
    let margin = 1.5;
    if q <= margin {
        return Err(Error::Validation(format!("window radius {l} too small for the sampling cube")));
    }
    let fit = liouville_fit(&model, q, margin, t_grid, n_points, seed, opts)?;
    let target = d as f64 * kappa(d)?;
    let rel = (fit.rate - target).abs() / target;
    let report = TestReport::judged(
        "liouville",
        rel,
        0.05,
        Direction::AtMost,
        json!({ "d": d, "l": l, "cube_halfwidth": q, "target_rate": target, "fit": fit }),
        Some(seed),
    );
    Ok(if fit.unresolved_fraction > 0.05 { report.with_status(Status::Inconclusive) } else { report })
}

/// Monte Carlo estimate of the ball field integral at `x` with standard
/// errors. Samples within `eps` of `x` are dropped; their integral vanishes
/// by symmetry when `B(x, eps)` lies in the ball.
pub fn mc_ball_field(x: &[f64], c: &[f64], radius: f64, samples: u64, eps: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = x.len();
    let ball = Region::ball(Point::new(c.to_vec())?, radius)?;
    let vol = ball.volume().unwrap();
    const CHUNK: u64 = 1 << 16;
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|k| {
            let mut g = rng::stream(seed, "ball_field", k);
            let mut s1 = vec![0.0; d];
            let mut s2 = vec![0.0; d];
            let mut z = vec![0.0; d];
            for _ in 0..CHUNK.min(samples - k * CHUNK) {
                ball.sample_uniform(&mut g, &mut z).unwrap();
                let r2 = dist2(&z, x);
                if r2 < eps * eps {
                    continue;
                }
                let f = r2.sqrt().powi(-(d as i32));
                for j in 0..d {
                    let v = (z[j] - x[j]) * f * vol;
                    s1[j] += v;
                    s2[j] += v * v;
                }
            }
            (s1, s2)
        })
        .collect();
    let n = samples as f64;
    let mut mean = vec![0.0; d];
    let mut se = vec![0.0; d];
    for j in 0..d {
        let s1: f64 = parts.iter().map(|p| p.0[j]).sum();
        let s2: f64 = parts.iter().map(|p| p.1[j]).sum();
        mean[j] = s1 / n;
        se[j] = ((s2 / n - mean[j] * mean[j]).max(0.0) / (n - 1.0)).sqrt();
    }
    Ok((mean, se))
}

/// Unit vector and surface weight at the nodes of a product rule on the
/// unit sphere: Gauss-Legendre in every polar angle, trapezoid in azimuth.
pub fn sphere_rule(d: usize, order: usize) -> Vec<(Vec<f64>, f64)> {
    let gl = GaussLegendre::new(NonZeroUsize::new(order).expect("order >= 1"));
    let pairs: Vec<(f64, f64)> =
        gl.as_node_weight_pairs().iter().map(|&(x, w)| (0.5 * std::f64::consts::PI * (x + 1.0), 0.5 * std::f64::consts::PI * w)).collect();
    let m = 2 * order;
    let dphi = 2.0 * std::f64::consts::PI / m as f64;
    let mut out = Vec::new();
    let polar = d - 2;
    let mut idx = vec![0usize; polar];
    loop {
        let mut w = dphi;
        let mut prefix = 1.0;
        let mut u = vec![0.0; d];
        for (a, &i) in idx.iter().enumerate() {
            let (theta, wt) = pairs[i];
            u[a] = prefix * theta.cos();
            w *= wt * theta.sin().powi((polar - a) as i32);
            prefix *= theta.sin();
        }
        for j in 0..m {
            let phi = j as f64 * dphi;
            let mut v = u.clone();
            v[d - 2] = prefix * phi.cos();
            v[d - 1] = prefix * phi.sin();
            out.push((v, w));
        }
        let mut a = 0;
        loop {
            if a == polar {
                return out;
            }
            idx[a] += 1;
            if idx[a] < order {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

/// Outward flux of the model field through the sphere `S(center, radius)`.
pub fn sphere_flux(model: &FieldModel, center: &[f64], radius: f64, order: usize) -> Result<f64> {
    let d = model.dim();
    let rule = sphere_rule(d, order);
    let parts = rule
        .par_iter()
        .map(|(u, w)| {
            let x: Vec<f64> = center.iter().zip(u).map(|(c, v)| c + radius * v).collect();
            let f = model.force_exact(&x)?;
            Ok(w * f.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum::<f64>() * radius.powi(d as i32 - 1))
}

/// Flux identity on random spheres of sparse configs, error relative to
/// `max(|target|, d kappa_d)`.
pub fn test_flux_identity(fixtures: usize, order: usize, seed: u64) -> Result<TestReport> {
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for i in 0..fixtures {
        let d = if i % 3 == 2 { 4 } else { 3 };
        let (model, c, rho) = flux_fixture(d, seed, i as u64)?;
        let flux = sphere_flux(&model, &c, rho, if d == 4 { order / 2 } else { order })?;
        let k = model.stars_in(&Region::ball(Point::new(c.clone())?, rho)?).len() as f64;
        let kd = kappa(d)?;
        let target = d as f64 * kd * (kd * rho.powi(d as i32) - k);
        let err = (flux - target).abs() / target.abs().max(d as f64 * kd);
        worst = worst.max(err);
        rows.push(json!({ "d": d, "radius": rho, "stars_inside": k, "flux": flux, "target": target }));
    }
    Ok(TestReport::judged("flux_identity", worst, 1e-3, Direction::AtMost, json!({ "fixtures": rows }), Some(seed)))
}

/// Sparse config and a sphere that keeps every star at least a tenth of
/// its radius away.
pub fn flux_fixture(d: usize, seed: u64, i: u64) -> Result<(FieldModel, Vec<f64>, f64)> {
    let mut attempt = 0;
    loop {
        let s = rng::derive_seed(seed, "flux", i * 1000 + attempt);
        let mut g = rng::from_seed(s);
        let window = Region::ball(Point::origin(d), 5.0)?;
        let config = StarConfig::sample_poisson(d, window.clone(), 0.15, s)?;
        let rho = g.random_range(1.0..3.0);
        let mut c = vec![0.0; d];
        Region::ball(Point::origin(d), 1.5)?.sample_uniform(&mut g, &mut c)?;
        let clear = config.stars().all(|z| (dist2(z, &c).sqrt() - rho).abs() >= 0.1 * rho);
        if clear {
            return Ok((FieldModel::new(config, window, true)?, c, rho));
        }
        attempt += 1;
    }
}

/// One gradient fixture: the analytic gradient and its central-difference
/// estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCase {
    pub kind: String,
    pub d: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradientCase {
    /// Largest componentwise error relative to the gradient norm.
    pub fn relative_error(&self) -> f64 {
        let n = norm2(&self.analytic).sqrt();
        self.analytic.iter().zip(&self.numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / n
    }
}

/// Fourth-order central difference of `f` at `x`.
pub fn central_gradient(x: &[f64], h: f64, f: impl Fn(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(x.len());
    let mut y = x.to_vec();
    for k in 0..x.len() {
        let mut at = |t: f64| {
            y[k] = x[k] + t;
            let v = f(&y);
            y[k] = x[k];
            v
        };
        let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
        out.push((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h));
    }
    Ok(out)
}

fn clear_point(model: &FieldModel, region: &Region, g: &mut rng::Rng, gap: f64) -> Result<Vec<f64>> {
    let mut x = vec![0.0; model.dim()];
    loop {
        region.sample_uniform(g, &mut x)?;
        if model.config().stars().all(|z| dist2(z, &x) >= gap * gap) {
            return Ok(x);
        }
    }
}

/// Deterministic gradient fixtures: partial potentials against partial
/// forces and both arguments of the potential difference.
pub fn gradient_cases(count: usize, h: f64, seed: u64) -> Result<Vec<GradientCase>> {
    let mut models = Vec::new();
    for d in 3..=5 {
        let window = Region::ball(Point::origin(d), 4.0)?;
        let config = StarConfig::sample_poisson(d, window.clone(), 1.0, rng::derive_seed(seed, "gradient_config", d as u64))?;
        models.push(FieldModel::new(config, window, true)?);
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let model = &models[i % 3];
        let d = model.dim();
        let mut g = rng::stream(seed, "gradient", i as u64);
        let mut c = vec![0.0; d];
        Region::ball(Point::origin(d), 1.0)?.sample_uniform(&mut g, &mut c)?;
        let cp = Point::new(c.clone())?;
        let case = match i % 4 {
            0 | 1 => {
                let (a, inside) = if i % 4 == 0 {
                    let q = g.random_range(0.5..1.5);
                    let p = q + g.random_range(0.5..1.5);
                    (Region::annulus(cp.clone(), q, p)?, Region::ball(cp, q)?)
                } else {
                    let p = g.random_range(0.5..2.5);
                    (Region::ball(cp.clone(), p)?, Region::ball(cp, p)?)
                };
                let x = clear_point(model, &inside, &mut g, 1e-2)?;
                let analytic: Vec<f64> = model.force_partial(&x, &a)?.iter().map(|v| -v).collect();
                let numeric = central_gradient(&x, h, |y| model.potential_partial(y, &a))?;
                GradientCase { kind: "potential_partial".into(), d, analytic, numeric }
            }
            k => {
                let p = g.random_range(1.0..2.5);
                let a = Region::ball(cp.clone(), p)?;
                // the partial force has its closed form only inside the ball
                let span = Region::ball(cp, p)?;
                let x = clear_point(model, &span, &mut g, 1e-2)?;
                let y = clear_point(model, &span, &mut g, 1e-2)?;
                if k == 2 {
                    let analytic = model.force_partial(&x, &a)?;
                    let numeric = central_gradient(&x, h, |v| model.potential_diff(v, &y, &a))?;
                    GradientCase { kind: "potential_diff_x".into(), d, analytic, numeric }
                } else {
                    let analytic: Vec<f64> = model.force_partial(&y, &a)?.iter().map(|v| -v).collect();
                    let numeric = central_gradient(&y, h, |v| model.potential_diff(&x, v, &a))?;
                    GradientCase { kind: "potential_diff_y".into(), d, analytic, numeric }
                }
            }
        };
        out.push(case);
    }
    Ok(out)
}

pub fn test_gradient_consistency(count: usize, seed: u64) -> Result<TestReport> {
    let cases = gradient_cases(count, 1e-5, seed)?;
    let worst = cases.iter().map(GradientCase::relative_error).fold(0.0, f64::max);
    Ok(TestReport::judged(
        "gradient_consistency",
        worst,
        1e-6,
        Direction::AtMost,
        json!({ "fixtures": count, "h": 1e-5 }),
        Some(seed),
    ))
}

/// Capture time from distance `delta` of a star, against `delta^d / d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureCase {
    pub delta: f64,
    pub tau: f64,
    pub captured_by_start_star: bool,
}

pub fn capture_cases(d: usize, deltas: &[f64], stars: usize, seed: u64, opts: &FlowOptions) -> Result<Vec<CaptureCase>> {
    let window = Region::ball(Point::origin(d), 6.0)?;
    let config = StarConfig::sample_poisson(d, window, 1.0, rng::derive_seed(seed, "capture_config", 0))?;
    let order = config.order_from_origin()[..stars.min(config.len())].to_vec();
    let model = FieldModel::over_window(config)?;
    let mut out = Vec::new();
    for (k, &s) in order.iter().enumerate() {
        let mut g = rng::stream(seed, "capture", k as u64);
        let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut g)).collect();
        let n = norm2(&u).sqrt();
        u.iter_mut().for_each(|v| *v /= n);
        for &delta in deltas {
            let x: Vec<f64> = model.config().star(s).iter().zip(&u).map(|(z, v)| z + delta * v).collect();
            let (tau, hit) = match flow_terminal(&model, &x, opts)? {
                Terminal::Captured { star, tau } => (tau, star == s),
                _ => (f64::NAN, false),
            };
            out.push(CaptureCase { delta, tau, captured_by_start_star: hit });
        }
    }
    Ok(out)
}

pub fn test_capture_asymptotics(d: usize, seed: u64, opts: &FlowOptions) -> Result<TestReport> {
    let deltas: Vec<f64> = (0..=8).map(|j| 10f64.powf(-3.0 + j as f64 / 4.0)).collect();
    let cases = capture_cases(d, &deltas, 5, seed, opts)?;
    let worst = cases
        .iter()
        .map(|c| {
            let target = c.delta.powi(d as i32) / d as f64;
            if c.captured_by_start_star { (c.tau - target).abs() / target } else { f64::INFINITY }
        })
        .fold(0.0, f64::max);
    Ok(TestReport::judged("capture_asymptotics", worst, 0.05, Direction::AtMost, json!({ "d": d, "cases": cases }), Some(seed)))
}

/// Basin volumes of interior stars across seed-pinned configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSummary {
    pub volumes: Vec<f64>,
    pub grand_mean: f64,
    pub coverage: f64,
    pub outliers: usize,
}

/// Uniform samples of `B(0, sample_radius)` flowed to their basins; the
/// volumes of stars within `star_radius` of the origin are pooled.
pub fn fairness(
    d: usize,
    l: f64,
    n_configs: usize,
    samples: u64,
    sample_radius: f64,
    star_radius: f64,
    seed: u64,
    opts: &FlowOptions,
) -> Result<FairnessSummary> {
    let region = Region::ball(Point::origin(d), sample_radius)?;
    let mut volumes = Vec::new();
    let mut resolved = 0.0;
    for c in 0..n_configs {
        let model = poisson_model(d, l, rng::derive_seed(seed, "fairness_config", c as u64))?;
        let mc = mc_cell_volumes(&model, &region, samples, rng::derive_seed(seed, "fairness_samples", c as u64), opts)?;
        resolved += mc.resolved_fraction();
        for (i, z) in model.config().stars().enumerate() {
            if norm2(z).sqrt() <= star_radius {
                volumes.push(mc.volume(i));
            }
        }
    }
    let grand_mean = volumes.iter().sum::<f64>() / volumes.len() as f64;
    let outliers = volumes.iter().filter(|&&v| !(0.5..=2.0).contains(&v)).count();
    Ok(FairnessSummary { volumes, grand_mean, coverage: resolved / n_configs as f64, outliers })
}

pub fn test_fairness(d: usize, l: f64, n_configs: usize, samples: u64, seed: u64, opts: &FlowOptions) -> Result<TestReport> {
    let sample_radius = l / 2.0;
    let star_radius = sample_radius - 4.0;
    let s = fairness(d, l, n_configs, samples, sample_radius, star_radius, seed, opts)?;
    let err = (s.grand_mean - 1.0).abs();
    let report = TestReport::judged(
        "fairness",
        err,
        0.02,
        Direction::AtMost,
        json!({
            "d": d, "l": l, "configs": n_configs, "samples_per_config": samples,
            "stars": s.volumes.len(), "grand_mean": s.grand_mean,
            "coverage": s.coverage, "outliers": s.outliers,
        }),
        Some(seed),
    );
    Ok(if s.outliers > 0 || s.coverage < 0.99 { report.with_status(Status::Fail) } else { report })
}

/// Lattice spacing used for the diameter of the origin's cell.
pub const DIAMETER_SPACING: f64 = 0.25;
/// Seeds tried per crossing search.
pub const CROSSING_SEEDS: usize = 240;

fn tail_flow_options() -> FlowOptions {
    FlowOptions { rel_tol: 1e-5, ..FlowOptions::default() }
}

/// Diameter and crossing outcomes for each config, sharing one model per
/// config.
fn tail_outcomes(
    d: usize,
    l: f64,
    diameter_grid: Option<&[f64]>,
    crossing_grid: Option<&[f64]>,
    n_configs: usize,
    seed: u64,
) -> Result<Vec<(Option<f64>, Vec<bool>)>> {
    let opts = tail_flow_options();
    (0..n_configs)
        .into_par_iter()
        .map(|c| {
            let model = poisson_model(d, l, rng::derive_seed(seed, "tail_config", c as u64))?;
            let diameter = match diameter_grid {
                None => None,
                Some(_) => {
                    match lattice_basin(&model, &vec![0.0; d], DIAMETER_SPACING, 200_000, &opts) {
                        Ok(b) => Some(b.diameter),
                        Err(Error::Unresolved(_)) => None,
                        Err(e) => return Err(e),
                    }
                }
            };
            let mut crossed = Vec::new();
            for &r in crossing_grid.unwrap_or(&[]) {
                let s = rng::derive_seed(seed, "crossing_seeds", c as u64);
                crossed.push(detect_crossing(&model, r, CROSSING_SEEDS, s, &opts)?.crossed);
            }
            Ok((diameter, crossed))
        })
        .collect()
}

fn check_tail_grid(l: f64, grid: &[f64]) -> Result<()> {
    if grid.iter().any(|&r| !(r >= 0.0) || r > l / 4.0) {
        return Err(Error::Validation(format!("thresholds must lie in [0, {}]", l / 4.0)));
    }
    Ok(())
}

/// `P(X > R)` for the diameter of the origin's cell.
pub fn estimate_diameter_tail(d: usize, l: f64, r_grid: &[f64], n_configs: usize, seed: u64) -> Result<TailEstimate> {
    Ok(estimate_allocation_tails(d, l, r_grid, &[], n_configs, seed)?.0)
}

/// Frequency of an `R`-crossing.
pub fn estimate_crossing_tail(d: usize, l: f64, r_grid: &[f64], n_configs: usize, seed: u64) -> Result<TailEstimate> {
    Ok(estimate_allocation_tails(d, l, &[], r_grid, n_configs, seed)?.1)
}

/// Both allocation tails from one pass over the configs; each matches the
/// corresponding single estimator.
pub fn estimate_allocation_tails(
    d: usize,
    l: f64,
    diameter_grid: &[f64],
    crossing_grid: &[f64],
    n_configs: usize,
    seed: u64,
) -> Result<(TailEstimate, TailEstimate)> {
    check_tail_grid(l, diameter_grid)?;
    check_tail_grid(l, crossing_grid)?;
    if crossing_grid.contains(&0.0) {
        return Err(Error::Validation("crossing radius must be positive".into()));
    }
    let outcomes = tail_outcomes(
        d,
        l,
        (!diameter_grid.is_empty()).then_some(diameter_grid),
        (!crossing_grid.is_empty()).then_some(crossing_grid),
        n_configs,
        seed,
    )?;
    let diameters: Vec<f64> = outcomes.iter().filter_map(|o| o.0).collect();
    let unresolved = if diameter_grid.is_empty() { 0 } else { (outcomes.len() - diameters.len()) as u64 };
    let diameter = TailEstimate::from_values(diameter_grid, &diameters, false, unresolved);
    let n = outcomes.len() as u64;
    let hits = (0..crossing_grid.len()).map(|k| outcomes.iter().filter(|o| o.1[k]).count() as u64).collect();
    let crossing = TailEstimate::from_counts(crossing_grid.to_vec(), vec![n; crossing_grid.len()], hits, 0);
    Ok((diameter, crossing))
}

/// Tails of the partial potential, force and force gradient at the origin
/// from the stars of `B(0, p) \ B(0, q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialTails {
    pub potential: TailEstimate,
    pub force: TailEstimate,
    pub jacobian: TailEstimate,
    /// Bound shapes with unit constants, one per threshold.
    pub potential_bound: Vec<f64>,
    pub force_bound: Vec<f64>,
    pub jacobian_bound: Vec<f64>,
}

impl PartialTails {
    /// Every empirical log-tail strictly decreases across the thresholds
    /// with at least [`TAIL_MIN_HITS`] hits.
    pub fn decreasing(&self) -> bool {
        [&self.potential, &self.force, &self.jacobian].iter().all(|t| eventually_decreasing(t))
    }

    /// Second differences of the log-tails are non-positive.
    pub fn concave(&self) -> bool {
        [&self.potential, &self.force, &self.jacobian].iter().all(|t| {
            let pts: Vec<(f64, f64)> = t
                .thresholds
                .iter()
                .zip(t.estimates())
                .zip(&t.hits)
                .filter(|(_, &h)| h >= TAIL_MIN_HITS)
                .map(|((&x, p), _)| (x, p.ln()))
                .collect();
            pts.windows(3).all(|w| {
                let s1 = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
                let s2 = (w[2].1 - w[1].1) / (w[2].0 - w[1].0);
                s2 <= s1 + 1e-12
            })
        })
    }
}

/// Minimum hit count for a threshold to enter the shape checks.
pub const TAIL_MIN_HITS: u64 = 10;

fn eventually_decreasing(t: &TailEstimate) -> bool {
    let est: Vec<f64> =
        t.estimates().into_iter().zip(&t.hits).filter(|(_, &h)| h >= TAIL_MIN_HITS).map(|(p, _)| p).collect();
    est.len() >= 2 && est.windows(2).all(|w| w[1] < w[0])
}

fn capped_bound(exponent: f64) -> f64 {
    exponent.min(0.0).exp()
}

pub fn estimate_partial_potential_tail(
    d: usize,
    q: f64,
    p: f64,
    t_grid: &[f64],
    samples: usize,
    seed: u64,
) -> Result<PartialTails> {
    if d < 3 || !(q > 0.0) || !(p > q) {
        return Err(Error::Validation("need d >= 3 and 0 < q < p".into()));
    }
    let annulus = Region::annulus(Point::origin(d), q, p)?;
    let origin = vec![0.0; d];
    let center_u = mean_potential(&annulus, &origin)?;
    let center_f = mean_field(&annulus, &origin)?;
    let vol = annulus.volume().unwrap();
    let dd = d as f64;
    let values: Vec<(f64, f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut g = rng::stream(seed, "partial_tail", i as u64);
            let count = Poisson::new(vol).unwrap().sample(&mut g) as u64;
            let mut sum_u = 0.0;
            let mut f = center_f.iter().map(|v| -v).collect::<Vec<f64>>();
            // sum of u u^T r^{-d}, and of r^{-d}
            let mut outer = vec![0.0; d * d];
            let mut trace = 0.0;
            let mut u = vec![0.0; d];
            let (qd, pd) = (q.powi(d as i32), p.powi(d as i32));
            for _ in 0..count {
                let mut n2: f64 = 0.0;
                for v in u.iter_mut() {
                    *v = StandardNormal.sample(&mut g);
                    n2 += *v * *v;
                }
                let inv = 1.0 / n2.sqrt();
                u.iter_mut().for_each(|v| *v *= inv);
                let rd = qd + g.random::<f64>() * (pd - qd);
                let r = rd.powf(1.0 / dd);
                let rinv = 1.0 / rd;
                sum_u -= r * r * rinv;
                trace += rinv;
                for a in 0..d {
                    f[a] += u[a] * r * rinv;
                    let w = u[a] * rinv;
                    for b in a..d {
                        outer[a * d + b] += w * u[b];
                    }
                }
            }
            let mut jac2 = 0.0;
            for a in 0..d {
                for b in a..d {
                    let v = dd * outer[a * d + b] - if a == b { trace } else { 0.0 };
                    jac2 += if a == b { v * v } else { 2.0 * v * v };
                }
            }
            let jac = DMatrix::<f64>::from_element(1, 1, jac2.sqrt());
            ((sum_u + center_u) / (dd - 2.0), norm2(&f).sqrt(), jac.norm())
        })
        .collect();
    let pick = |k: usize| -> Vec<f64> {
        values.iter().map(|v| [v.0.abs(), v.1, v.2][k]).collect()
    };
    let potential = TailEstimate::from_values(t_grid, &pick(0), true, 0);
    let force = TailEstimate::from_values(t_grid, &pick(1), true, 0);
    let jacobian = TailEstimate::from_values(t_grid, &pick(2), true, 0);
    let potential_bound = t_grid.iter().map(|&t| capped_bound(-q.powi(d as i32 - 2) * t * (t / (q * q)).ln())).collect();
    let force_bound = t_grid.iter().map(|&t| capped_bound(-q.powi(d as i32 - 1) * t * (t / q).ln())).collect();
    let jacobian_bound = t_grid.iter().map(|&t| capped_bound(-q.powi(d as i32) * t * t.ln())).collect();
    Ok(PartialTails { potential, force, jacobian, potential_bound, force_bound, jacobian_bound })
}

pub fn test_partial_potential_tail(d: usize, q: f64, p: f64, samples: usize, seed: u64) -> Result<TestReport> {
    let t_grid: Vec<f64> = (1..=20).map(|k| 0.3 * k as f64).collect();
    let tails = estimate_partial_potential_tail(d, q, p, &t_grid, samples, seed)?;
    let ok = tails.decreasing();
    Ok(TestReport::judged(
        "partial_potential_tail",
        if ok { 0.0 } else { 1.0 },
        0.0,
        Direction::AtMost,
        json!({ "d": d, "q": q, "p": p, "samples": samples, "concave": tails.concave(), "tails": tails }),
        Some(seed),
    ))
}

/// Parameters of the default suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Include the Monte Carlo batteries that take minutes.
    pub slow: bool,
    /// Run only these batteries (any tier); empty runs the whole tier.
    pub only: Vec<String>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { seed: 20240601, slow: false, only: Vec::new() }
    }
}

/// Battery names in suite order, with whether each is slow.
pub const BATTERIES: [(&str, bool); 10] = [
    ("poisson_tails", false),
    ("hadamard_variant", false),
    ("inverse_distance_sum", false),
    ("joint_density_core", false),
    ("gradient_consistency", false),
    ("flux_identity", false),
    ("capture_asymptotics", false),
    ("partial_potential_tail", false),
    ("stable_scaling", true),
    ("liouville", true),
];

fn run_battery(name: &str, seed: u64) -> Result<Vec<TestReport>> {
    let s = |label: &str| rng::derive_seed(seed, label, 0);
    let flow = FlowOptions::default();
    Ok(match name {
        "poisson_tails" => vec![test_poisson_tails(&[0.5, 1.0, 2.0, 5.0, 10.0, 100.0])?],
        "hadamard_variant" => vec![test_hadamard_variant(20, 10_000, s("hadamard"))?],
        "inverse_distance_sum" => vec![test_inverse_distance_sum(3, 1000, 10_000, s("inverse_distance"))?],
        "joint_density_core" => (1..=3)
            .map(|n| test_joint_density_core(3, n, 0.5, 10.0, 1000, rng::derive_seed(seed, "joint_density", n as u64)))
            .collect::<Result<_>>()?,
        "gradient_consistency" => vec![test_gradient_consistency(100, s("gradient"))?],
        "flux_identity" => vec![test_flux_identity(50, 96, s("flux"))?],
        "capture_asymptotics" => vec![test_capture_asymptotics(3, s("capture"), &flow)?],
        "partial_potential_tail" => vec![test_partial_potential_tail(5, 2.0, 4.0, 100_000, s("partial_tail"))?],
        "stable_scaling" => vec![
            test_stable_scaling(3, &[2, 8], 10_000, 30.0, s("stable_3"))?,
            test_stable_scaling(4, &[2], 10_000, 10.0, s("stable_4"))?,
        ],
        "liouville" => vec![
            test_liouville(3, 12.0, &liouville_grid(), 100_000, s("liouville_3"), &flow)?,
            test_liouville(4, 8.0, &liouville_grid(), 100_000, s("liouville_4"), &flow)?,
        ],
        other => return Err(Error::Validation(format!("unknown battery {other}"))),
    })
}

/// Runs the selected batteries; the suite passes when no report fails.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<TestReport>> {
    for name in &opts.only {
        if !BATTERIES.iter().any(|(b, _)| b == name) {
            return Err(Error::Validation(format!("unknown battery {name}")));
        }
    }
    let mut reports = Vec::new();
    for (name, slow) in BATTERIES {
        let selected = if opts.only.is_empty() { opts.slow || !slow } else { opts.only.iter().any(|o| o == name) };
        if selected {
            reports.extend(run_battery(name, opts.seed)?);
        }
    }
    Ok(reports)
}

/// Times at which the survival fraction is fitted.
pub fn liouville_grid() -> Vec<f64> {
    (0..=18).map(|k| 0.02 + 0.01 * k as f64).collect()
}

pub fn suite_passed(reports: &[TestReport]) -> bool {
    reports.iter().all(TestReport::ok)
}

/// CSV summary `name,status,statistic,threshold,direction,seed`.
pub fn write_summary_csv(reports: &[TestReport], mut w: impl Write) -> Result<()> {
    writeln!(w, "name,status,statistic,threshold,direction,seed")?;
    for r in reports {
        let status = serde_json::to_value(r.status)?;
        let dir = serde_json::to_value(r.direction)?;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.name,
            status.as_str().unwrap_or_default(),
            real(r.statistic),
            real(r.threshold),
            dir.as_str().unwrap_or_default(),
            r.seed.map_or(String::new(), |s| s.to_string())
        )?;
    }
    Ok(())
}
