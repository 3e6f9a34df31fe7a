//! Gravitational flow curves `dY/dt = F(Y)`.
//!
//! Curves are integrated with the Dormand–Prince 5(4) pair under a mixed
//! absolute/relative error norm. Steps are clamped so that one step moves at
//! most half the distance to the nearest star. Once a star dominates the
//! field near the curve, the remaining time is completed analytically from
//! the single-star solution `|Y - z|^d = |Y_0 - z|^d - d t`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldModel, Proximity};
use crate::geometry::dist2;

/// When a curve counts as captured by its nearest star `z` at `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapturePolicy {
    /// Capture when `|u - z|^{1-d} >= dominance_factor * |F(u) - g(z - u)|`
    /// and `|u - z|` is at most a quarter of the second-nearest distance.
    pub dominance_factor: f64,
    /// Unconditional capture radius.
    pub hard_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_time: f64,
    pub capture: CapturePolicy,
    pub max_steps: usize,
    /// Distance kept from the truncation boundary; `None` means
    /// `max(2, 0.1 L)`, capped at `L / 2`.
    pub window_margin: Option<f64>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            abs_tol: 1e-9,
            max_time: 50.0,
            capture: CapturePolicy { dominance_factor: 8.0, hard_radius: 1e-4 },
            max_steps: 1_000_000,
            window_margin: None,
        }
    }
}

impl FlowOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.max_time > 0.0
            && self.capture.dominance_factor >= 2.0
            && self.capture.hard_radius > 0.0
            && self.max_steps > 0
            && self.window_margin.is_none_or(|m| m >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid flow options: {self:?}")))
        }
    }

    /// Radius of the region where curves are followed.
    pub fn valid_radius(&self, model: &FieldModel) -> f64 {
        let l = model.radius();
        let margin = self.window_margin.unwrap_or_else(|| (0.1 * l).max(2.0).min(0.5 * l));
        l - margin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Terminal {
    Captured { star: usize, tau: f64 },
    ExitedValidRegion { t: f64 },
    TimeBudgetExceeded,
    StepFailure { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    pub times: Vec<f64>,
    /// Positions, one row of `dim` coordinates per sample.
    pub positions: Vec<f64>,
    pub dim: usize,
    pub terminal: Terminal,
}

impl FlowTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.times.iter().copied().zip(self.positions.chunks_exact(self.dim))
    }

    /// CSV with header `t,x1..xd`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let head: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        writeln!(w, "t,{}", head.join(","))?;
        for (t, y) in self.samples() {
            let row: Vec<String> = y.iter().map(|v| crate::io::real(*v)).collect();
            writeln!(w, "{},{}", crate::io::real(t), row.join(","))?;
        }
        Ok(())
    }

    pub fn terminal_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.terminal)?)
    }
}

/// Basin membership of a starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Basin {
    Star(usize),
    Unresolved(String),
}

impl Basin {
    pub fn star(&self) -> Option<usize> {
        match self {
            Basin::Star(i) => Some(*i),
            Basin::Unresolved(_) => None,
        }
    }
}

impl From<&Terminal> for Basin {
    fn from(t: &Terminal) -> Self {
        match t {
            Terminal::Captured { star, .. } => Basin::Star(*star),
            Terminal::ExitedValidRegion { t } => Basin::Unresolved(format!("left the valid region at t = {t}")),
            Terminal::TimeBudgetExceeded => Basin::Unresolved("time budget exceeded".into()),
            Terminal::StepFailure { reason } => Basin::Unresolved(format!("step failure: {reason}")),
        }
    }
}

/// Full trace of the flow curve from `x0`.
pub fn integrate_flow(model: &FieldModel, x0: &[f64], opts: &FlowOptions) -> Result<FlowTrace> {
    let mut times = Vec::new();
    let mut positions = Vec::new();
    let terminal = run(model, x0, opts, |t, y| {
        times.push(t);
        positions.extend_from_slice(y);
    })?;
    Ok(FlowTrace { times, positions, dim: model.dim(), terminal })
}

/// Terminal state of the flow from `x0` without recording samples.
pub fn flow_terminal(model: &FieldModel, x0: &[f64], opts: &FlowOptions) -> Result<Terminal> {
    run(model, x0, opts, |_, _| {})
}

pub fn basin_of(model: &FieldModel, x0: &[f64], opts: &FlowOptions) -> Result<Basin> {
    Ok(Basin::from(&flow_terminal(model, x0, opts)?))
}

/// Capture time of a captured trace.
pub fn flow_time(trace: &FlowTrace) -> Option<f64> {
    match trace.terminal {
        Terminal::Captured { tau, .. } => Some(tau),
        _ => None,
    }
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn captured(model: &FieldModel, y: &[f64], f: &[f64], prox: &Proximity, policy: &CapturePolicy) -> Option<(usize, f64)> {
    if prox.nearest == usize::MAX {
        return None;
    }
    let d = model.dim();
    let delta = prox.d1;
    let hit = delta <= policy.hard_radius
        || (delta <= 0.25 * prox.d2 && {
            let z = model.config().star(prox.nearest);
            let s = delta.powi(-(d as i32));
            let mut rest = 0.0;
            for k in 0..d {
                let r = f[k] - (z[k] - y[k]) * s;
                rest += r * r;
            }
            delta.powi(1 - d as i32) >= policy.dominance_factor * rest.sqrt()
        });
    hit.then(|| (prox.nearest, delta.powi(d as i32) / d as f64))
}

fn run(model: &FieldModel, x0: &[f64], opts: &FlowOptions, mut record: impl FnMut(f64, &[f64])) -> Result<Terminal> {
    opts.validate()?;
    let d = model.dim();
    if x0.len() != d {
        return Err(Error::Validation(format!("start point has dimension {}, model has {d}", x0.len())));
    }
    let valid = opts.valid_radius(model);
    let valid2 = valid * valid;
    let center = model.center();

    let mut y = x0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; d]; 7];
    let mut prox = match model.probe(&y, &mut k[0]) {
        Ok(p) => p,
        Err(Error::Singularity { star, .. }) => {
            record(0.0, &y);
            return Ok(Terminal::Captured { star, tau: 0.0 });
        }
        Err(Error::Domain(_)) => {
            record(0.0, &y);
            return Ok(Terminal::ExitedValidRegion { t: 0.0 });
        }
        Err(e) => return Err(e),
    };
    let mut t = 0.0;
    record(t, &y);
    if dist2(&y, center) > valid2 {
        return Ok(Terminal::ExitedValidRegion { t });
    }
    if let Some((star, dt)) = captured(model, &y, &k[0], &prox, &opts.capture) {
        return Ok(Terminal::Captured { star, tau: t + dt });
    }

    let mut stage = vec![0.0; d];
    let mut y_new = vec![0.0; d];
    let fnorm = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut h = {
        let n = fnorm(&k[0]);
        let scale = prox.d1.min(1.0);
        if n > 0.0 { 0.1 * scale / n } else { 1e-3 }
    };
    let mut steps = 0usize;
    let mut rejects_in_row = 0usize;
    loop {
        if t >= opts.max_time {
            return Ok(Terminal::TimeBudgetExceeded);
        }
        if steps >= opts.max_steps {
            return Ok(Terminal::StepFailure { reason: format!("step budget of {} exhausted", opts.max_steps) });
        }
        steps += 1;
        let n = fnorm(&k[0]);
        if n > 0.0 {
            h = h.min(0.5 * prox.d1 / n);
        }
        h = h.min(opts.max_time - t);
        let h_min = 1e-14 * t.max(1e-6);
        if !(h > h_min) {
            return Ok(Terminal::StepFailure { reason: format!("step size underflow at t = {t}") });
        }

        let mut stage_prox = prox;
        let mut failed = false;
        for s in 1..7 {
            for i in 0..d {
                let mut acc = 0.0;
                for (j, a) in A[s][..s].iter().enumerate() {
                    acc += a * k[j][i];
                }
                stage[i] = y[i] + h * acc;
            }
            match model.probe(&stage, &mut k[s]) {
                Ok(p) => stage_prox = p,
                Err(Error::Singularity { .. }) | Err(Error::Domain(_)) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if failed {
            h *= 0.25;
            rejects_in_row += 1;
            continue;
        }
        // the seventh stage point is the fifth-order solution
        y_new.copy_from_slice(&stage);
        let mut err = 0.0;
        for i in 0..d {
            let mut e = 0.0;
            for j in 0..7 {
                e += E[j] * k[j][i];
            }
            let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(y_new[i].abs());
            let r = h * e / sc;
            err += r * r;
        }
        let err = (err / d as f64).sqrt();
        if !err.is_finite() || err > 1.0 {
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).max(0.2) } else { 0.2 };
            h *= fac;
            rejects_in_row += 1;
            if rejects_in_row > 100 {
                return Ok(Terminal::StepFailure { reason: format!("repeated step rejection at t = {t}") });
            }
            continue;
        }
        rejects_in_row = 0;
        t += h;
        std::mem::swap(&mut y, &mut y_new);
        k.rotate_right(1);
        prox = stage_prox;
        record(t, &y);
        if dist2(&y, center) > valid2 {
            return Ok(Terminal::ExitedValidRegion { t });
        }
        if let Some((star, dt)) = captured(model, &y, &k[0], &prox, &opts.capture) {
            return Ok(Terminal::Captured { star, tau: t + dt });
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
    }
}
