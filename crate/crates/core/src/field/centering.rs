//! Potential and field of a uniform unit density on a region.
//!
//! `mean_potential(A, x) = ∫_A |z - x|^{2-d} dz` and
//! `mean_field(A, x) = ∫_A (z - x) / |z - x|^d dz`. These are the expected
//! values of the star sums over `A` and are subtracted to centre partial
//! quantities. Balls and annuli have closed forms via the shell theorem;
//! boxes use the Gaussian representation
//! `|z|^{-2ν} = Γ(ν)^{-1} ∫_0^∞ s^{ν-1} e^{-s|z|^2} ds` with `ν = (d-2)/2`,
//! which factorizes over the box axes and leaves a smooth one-dimensional
//! integral in `u = ln s`, integrated by step-halving trapezoid rule.

use statrs::function::erf::{erf, erfc};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::geometry::{dist2, kappa, Region};

/// Absolute tolerance for the box quadrature.
pub const QUADRATURE_TOL: f64 = 1e-8;

fn ball_potential(d: usize, k: f64, center: &[f64], radius: f64, x: &[f64]) -> f64 {
    let r2 = dist2(x, center);
    let df = d as f64;
    if r2 <= radius * radius {
        0.5 * k * (df * radius * radius - (df - 2.0) * r2)
    } else {
        k * radius.powi(d as i32) * r2.powf(1.0 - df / 2.0)
    }
}

fn ball_field(d: usize, k: f64, center: &[f64], radius: f64, x: &[f64], out: &mut [f64]) {
    let r2 = dist2(x, center);
    if r2 <= radius * radius {
        for i in 0..d {
            out[i] -= k * (x[i] - center[i]);
        }
    } else {
        let s = k * radius.powi(d as i32) * r2.powf(-(d as f64) / 2.0);
        for i in 0..d {
            out[i] += s * (center[i] - x[i]);
        }
    }
}

/// `∫_A |z - x|^{2-d} dz` for a bounded region `A`.
pub fn mean_potential(region: &Region, x: &[f64]) -> Result<f64> {
    let d = region.dim();
    let k = kappa(d)?;
    let c = region.center().coords();
    match region {
        Region::Ball { radius, .. } => Ok(ball_potential(d, k, c, *radius, x)),
        Region::Annulus { inner, outer, .. } => {
            Ok(ball_potential(d, k, c, *outer, x) - ball_potential(d, k, c, *inner, x))
        }
        Region::Box { halfwidth, .. } => box_integrals(c, *halfwidth, x, QUADRATURE_TOL).map(|v| v.0),
        Region::ComplementOfBall { .. } => {
            Err(Error::UnsupportedRegion("centering needs a bounded region".into()))
        }
    }
}

/// `∫_A (z - x) / |z - x|^d dz` for a bounded region `A`.
pub fn mean_field(region: &Region, x: &[f64]) -> Result<Vec<f64>> {
    let d = region.dim();
    let k = kappa(d)?;
    let c = region.center().coords();
    let mut out = vec![0.0; d];
    match region {
        Region::Ball { radius, .. } => ball_field(d, k, c, *radius, x, &mut out),
        Region::Annulus { inner, outer, .. } => {
            ball_field(d, k, c, *outer, x, &mut out);
            let mut hole = vec![0.0; d];
            ball_field(d, k, c, *inner, x, &mut hole);
            for i in 0..d {
                out[i] -= hole[i];
            }
        }
        Region::Box { halfwidth, .. } => {
            let (_, grad) = box_integrals(c, *halfwidth, x, QUADRATURE_TOL)?;
            let scale = 1.0 / (d as f64 - 2.0);
            for i in 0..d {
                out[i] = grad[i] * scale;
            }
        }
        Region::ComplementOfBall { .. } => {
            return Err(Error::UnsupportedRegion("centering needs a bounded region".into()))
        }
    }
    Ok(out)
}

/// `erf(b) - erf(a)` for `a <= b` without cancellation in the tails.
fn erf_diff(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        erfc(a) - erfc(b)
    } else if b <= 0.0 {
        erfc(-b) - erfc(-a)
    } else {
        erf(b) - erf(a)
    }
}

/// Box potential and its gradient in `x`.
fn box_integrals(center: &[f64], h: f64, x: &[f64], tol: f64) -> Result<(f64, Vec<f64>)> {
    let d = center.len();
    let nu = (d as f64 - 2.0) / 2.0;
    let norm = 1.0 / gamma(nu);
    let volume = (2.0 * h).powi(d as i32);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let alpha: Vec<f64> = (0..d).map(|i| center[i] - h - x[i]).collect();
    let beta: Vec<f64> = (0..d).map(|i| center[i] + h - x[i]).collect();

    // integrand bounds: <= V e^{ν u} as u -> -inf, <= π^{d/2} e^{-u/2} as u -> inf
    let u_lo = (tol * nu / (100.0 * volume.max(1.0))).ln() / nu;
    let u_hi = 2.0 * (100.0 * std::f64::consts::PI.powf(d as f64 / 2.0) / tol).ln();

    let mut hv = vec![0.0; d];
    let mut dh = vec![0.0; d];
    let mut eval = |u: f64, acc: &mut [f64]| {
        let s = u.exp();
        let rs = s.sqrt();
        for i in 0..d {
            hv[i] = 0.5 * sqrt_pi / rs * erf_diff(rs * alpha[i], rs * beta[i]);
            dh[i] = (-s * alpha[i] * alpha[i]).exp() - (-s * beta[i] * beta[i]).exp();
        }
        let w = (nu * u).exp();
        acc[0] += w * hv.iter().product::<f64>();
        for i in 0..d {
            let mut prod = dh[i];
            for (j, v) in hv.iter().enumerate() {
                if j != i {
                    prod *= v;
                }
            }
            acc[1 + i] += w * prod;
        }
    };

    let mut step = 0.5;
    let n0 = ((u_hi - u_lo) / step).ceil() as usize;
    let mut sums = vec![0.0; d + 1];
    for j in 0..=n0 {
        let u = u_lo + j as f64 * step;
        let mut tmp = vec![0.0; d + 1];
        eval(u, &mut tmp);
        let wt = if j == 0 || j == n0 { 0.5 } else { 1.0 };
        for (s, t) in sums.iter_mut().zip(&tmp) {
            *s += wt * t;
        }
    }
    let mut prev: Vec<f64> = sums.iter().map(|s| s * step * norm).collect();
    let mut n = n0;
    let mut last_change = f64::INFINITY;
    let mut settled = 0;
    for _ in 0..10 {
        // midpoints of the current grid
        let mut tmp = vec![0.0; d + 1];
        for j in 0..n {
            eval(u_lo + (j as f64 + 0.5) * step, &mut tmp);
        }
        for (s, t) in sums.iter_mut().zip(&tmp) {
            *s += t;
        }
        step *= 0.5;
        n *= 2;
        let cur: Vec<f64> = sums.iter().map(|s| s * step * norm).collect();
        last_change = cur.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prev = cur;
        if last_change < tol {
            settled += 1;
            if settled == 2 {
                return Ok((prev[0], prev[1..].to_vec()));
            }
        } else {
            settled = 0;
        }
    }
    Err(Error::Accuracy { tolerance: tol, achieved: last_change })
}
