//! Hierarchical Chebyshev far field.
//!
//! The truncation cube is split into level-0 cells of side `h0`. A point in
//! cell `C` sums the stars of the `(2K+1)^d` cells around `C` exactly; the
//! rest is a tensor Chebyshev interpolant stored per cell. A cell's
//! interpolant is its parent's interpolant evaluated at the cell's nodes plus
//! the direct pull of the stars that are near the parent but not near the
//! cell, so every star is summed exactly once per node. Cells are built
//! lazily on first use and cached.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{inv_pow, Proximity, SINGULAR_DISTANCE};
use crate::error::{Error, Result};
use crate::index::CellIndex;

const MAX_DIM: usize = 8;
const MAX_ORDER: usize = 16;

/// Parameters of the far-field scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarFieldOptions {
    /// Level-0 cell side; defaults to the mean star spacing.
    pub cell_size: Option<f64>,
    /// Chebyshev nodes per axis; defaults to 6 for d = 3 and 5 above.
    pub order: Option<usize>,
    /// Near-zone half-width in cells.
    pub near: usize,
}

impl Default for FarFieldOptions {
    fn default() -> Self {
        Self { cell_size: None, order: None, near: 2 }
    }
}

struct Level {
    n: usize,
    side: f64,
    cells: Vec<OnceLock<Box<[f64]>>>,
}

pub(crate) struct FarField {
    d: usize,
    p: usize,
    near: usize,
    h0: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    n0: usize,
    bucket: CellIndex,
    ids: Vec<usize>,
    /// Levels below the first one whose near zones cover the whole grid.
    levels: Vec<Level>,
    nodes: Vec<f64>,
    to_coef: Vec<f64>,
    child_eval: [Vec<f64>; 2],
}

impl FarField {
    pub(crate) fn build(
        d: usize,
        ids: &[usize],
        coords: &[f64],
        center: &[f64],
        radius: f64,
        intensity: f64,
        opts: &FarFieldOptions,
    ) -> Result<Self> {
        let h0 = opts.cell_size.unwrap_or_else(|| intensity.powf(-1.0 / d as f64));
        let p = opts.order.unwrap_or(if d == 3 { 6 } else { 5 });
        if d > MAX_DIM || !(2..=MAX_ORDER).contains(&p) || !(h0 > 0.0) || opts.near == 0 {
            return Err(Error::Validation(format!(
                "far field needs d <= {MAX_DIM}, 2 <= order <= {MAX_ORDER}, positive cell size and near >= 1"
            )));
        }
        let n0 = ((2.0 * radius / h0).ceil() as usize).max(1);
        let lo: Vec<f64> = center.iter().map(|c| c - radius).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + n0 as f64 * h0).collect();
        let bucket = CellIndex::with_grid(d, coords, lo.clone(), h0, vec![n0; d]);

        let mut levels = Vec::new();
        let mut n = n0;
        let mut side = h0;
        while n > opts.near + 1 {
            let count = n.pow(d as u32);
            levels.push(Level { n, side, cells: (0..count).map(|_| OnceLock::new()).collect() });
            n = n.div_ceil(2);
            side *= 2.0;
        }

        let pi = std::f64::consts::PI;
        let nodes: Vec<f64> = (0..p).map(|j| (pi * (j as f64 + 0.5) / p as f64).cos()).collect();
        let mut to_coef = vec![0.0; p * p];
        for k in 0..p {
            let w = if k == 0 { 1.0 } else { 2.0 } / p as f64;
            for j in 0..p {
                to_coef[k * p + j] = w * (pi * k as f64 * (j as f64 + 0.5) / p as f64).cos();
            }
        }
        let child_eval = [0, 1].map(|s| {
            let mut m = vec![0.0; p * p];
            let mut t = [0.0; MAX_ORDER];
            for j in 0..p {
                chebyshev(0.5 * (nodes[j] - 1.0) + s as f64, p, &mut t);
                m[j * p..(j + 1) * p].copy_from_slice(&t[..p]);
            }
            m
        });

        Ok(Self {
            d,
            p,
            near: opts.near,
            h0,
            lo,
            hi,
            n0,
            bucket,
            ids: ids.to_vec(),
            levels,
            nodes,
            to_coef,
            child_eval,
        })
    }

    /// Star pull at `x` (without compensation). `None` when `x` is outside
    /// the covered cube.
    pub(crate) fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<Option<Proximity>> {
        match self.d {
            3 => self.eval_d::<3>(x, out),
            4 => self.eval_d::<4>(x, out),
            5 => self.eval_d::<5>(x, out),
            6 => self.eval_d::<6>(x, out),
            7 => self.eval_d::<7>(x, out),
            _ => self.eval_d::<8>(x, out),
        }
    }

    fn eval_d<const D: usize>(&self, x: &[f64], out: &mut [f64]) -> Result<Option<Proximity>> {
        let x: &[f64; D] = x.try_into().expect("dimension checked by the model");
        let out: &mut [f64; D] = out.try_into().expect("dimension checked by the model");
        if (0..D).any(|k| !(x[k] >= self.lo[k] && x[k] <= self.hi[k])) {
            return Ok(None);
        }
        let mut cell = [0usize; D];
        self.bucket.bucket_of(x, &mut cell);
        *out = [0.0; D];

        if !self.levels.is_empty() {
            let coef = self.cell(0, &cell);
            let mut t = [[0.0; MAX_ORDER]; D];
            for a in 0..D {
                let xi = 2.0 * (x[a] - self.lo[a]) / self.h0 - 2.0 * cell[a] as f64 - 1.0;
                chebyshev(xi.clamp(-1.0, 1.0), self.p, &mut t[a]);
            }
            contract::<D>(coef, &t, self.p, out);
        }

        let k = self.near;
        let mut blo = [0usize; D];
        let mut bhi = [0usize; D];
        for a in 0..D {
            blo[a] = cell[a].saturating_sub(k);
            bhi[a] = (cell[a] + k).min(self.n0 - 1);
        }
        // (nearest r2, second r2, position of nearest)
        let mut best = (f64::INFINITY, f64::INFINITY, usize::MAX);
        let sorted = self.bucket.sorted_coords();
        self.bucket.for_each_run(&blo, &bhi, |run| {
            for pos in run {
                let z: &[f64; D] = sorted[pos * D..(pos + 1) * D].try_into().unwrap();
                let mut diff = [0.0; D];
                let mut r2 = 0.0;
                for a in 0..D {
                    diff[a] = z[a] - x[a];
                    r2 += diff[a] * diff[a];
                }
                let s = inv_pow(r2, D);
                for a in 0..D {
                    out[a] += diff[a] * s;
                }
                if r2 < best.1 {
                    if r2 < best.0 {
                        best = (r2, best.0, pos);
                    } else {
                        best.1 = r2;
                    }
                }
            }
        });
        let d1 = best.0.sqrt();
        let nearest = if best.2 == usize::MAX { usize::MAX } else { self.ids[self.bucket.id(best.2)] };
        if d1 < SINGULAR_DISTANCE {
            return Err(Error::Singularity { star: nearest, distance: d1 });
        }
        // stars outside the near zone are at least this far away
        let bound = k as f64 * self.h0;
        let mut prox = Proximity { nearest, d1, d2: best.1.sqrt().min(bound) };
        if prox.d1 > bound {
            prox.nearest = usize::MAX;
            prox.d1 = bound;
        }
        Ok(Some(prox))
    }

    fn cell(&self, level: usize, c: &[usize]) -> &[f64] {
        let lv = &self.levels[level];
        let flat = c.iter().fold(0, |acc, &v| acc * lv.n + v);
        lv.cells[flat].get_or_init(|| self.compute(level, c))
    }

    fn compute(&self, level: usize, c: &[usize]) -> Box<[f64]> {
        let (d, p) = (self.d, self.p);
        let np = p.pow(d as u32);
        let lv = &self.levels[level];
        let mut vals = vec![0.0; np * d];

        let mut parent = [0usize; MAX_DIM];
        for a in 0..d {
            parent[a] = c[a] / 2;
        }
        if level + 1 < self.levels.len() {
            let pc = self.cell(level + 1, &parent[..d]);
            let mut src = pc.to_vec();
            for a in 0..d {
                apply_axis(&src, &mut vals, &self.child_eval[c[a] % 2], p, d, a);
                std::mem::swap(&mut src, &mut vals);
            }
            vals = src;
        }

        // node coordinates and accumulators, axis-major
        let mut nx = vec![0.0; d * np];
        for m in 0..np {
            let mut rem = m;
            for a in (0..d).rev() {
                let j = rem % p;
                rem /= p;
                nx[a * np + m] = self.lo[a] + lv.side * (c[a] as f64 + 0.5 * (self.nodes[j] + 1.0));
            }
        }
        let mut acc = vec![0.0; d * np];
        let k = self.near;
        let mut plo = [0usize; MAX_DIM];
        let mut phi = [0usize; MAX_DIM];
        let mut clo = [0usize; MAX_DIM];
        let mut chi = [0usize; MAX_DIM];
        for a in 0..d {
            plo[a] = (2 * parent[a]).saturating_sub(2 * k);
            phi[a] = (2 * (parent[a] + k) + 1).min(lv.n - 1);
            clo[a] = c[a].saturating_sub(k);
            chi[a] = (c[a] + k).min(lv.n - 1);
        }
        let sorted = self.bucket.sorted_coords();
        let mut blo = [0usize; MAX_DIM];
        let mut bhi = [0usize; MAX_DIM];
        // parent near zone minus child near zone as disjoint slabs
        for a in 0..d {
            for part in 0..2 {
                let (s0, s1) = if part == 0 {
                    if clo[a] == plo[a] {
                        continue;
                    }
                    (plo[a], clo[a] - 1)
                } else {
                    if chi[a] == phi[a] {
                        continue;
                    }
                    (chi[a] + 1, phi[a])
                };
                let mut empty = false;
                for b in 0..d {
                    let (r0, r1) = if b < a {
                        (clo[b], chi[b])
                    } else if b == a {
                        (s0, s1)
                    } else {
                        (plo[b], phi[b])
                    };
                    blo[b] = r0 << level;
                    bhi[b] = (((r1 + 1) << level) - 1).min(self.n0 - 1);
                    empty |= blo[b] > bhi[b];
                }
                if empty {
                    continue;
                }
                self.bucket.for_each_run(&blo[..d], &bhi[..d], |run| {
                    for pos in run {
                        let z = &sorted[pos * d..(pos + 1) * d];
                        accumulate(d, np, z, &nx, &mut acc);
                    }
                });
            }
        }
        for m in 0..np {
            for a in 0..d {
                vals[m * d + a] += acc[a * np + m];
            }
        }

        let mut tmp = vec![0.0; np * d];
        for a in 0..d {
            apply_axis(&vals, &mut tmp, &self.to_coef, p, d, a);
            std::mem::swap(&mut vals, &mut tmp);
        }
        vals.into_boxed_slice()
    }
}

#[inline(always)]
fn accumulate(d: usize, np: usize, z: &[f64], nx: &[f64], acc: &mut [f64]) {
    if d == 3 {
        let (x0, rest) = nx.split_at(np);
        let (x1, x2) = rest.split_at(np);
        let (a0, rest) = acc.split_at_mut(np);
        let (a1, a2) = rest.split_at_mut(np);
        for m in 0..np {
            let dx = z[0] - x0[m];
            let dy = z[1] - x1[m];
            let dz = z[2] - x2[m];
            let r2 = dx * dx + dy * dy + dz * dz;
            let s = 1.0 / (r2 * r2.sqrt());
            a0[m] += dx * s;
            a1[m] += dy * s;
            a2[m] += dz * s;
        }
        return;
    }
    for m in 0..np {
        let mut r2 = 0.0;
        for a in 0..d {
            let t = z[a] - nx[a * np + m];
            r2 += t * t;
        }
        let s = inv_pow(r2, d);
        for a in 0..d {
            acc[a * np + m] += (z[a] - nx[a * np + m]) * s;
        }
    }
}

/// `out += sum_m coef[m] * prod_a t[a][m_a]`.
fn contract<const D: usize>(coef: &[f64], t: &[[f64; MAX_ORDER]; D], p: usize, out: &mut [f64; D]) {
    let mut idx = [0usize; D];
    let mut w = [1.0f64; MAX_DIM + 1];
    for a in 0..D {
        w[a + 1] = w[a] * t[a][0];
    }
    for m in coef.chunks_exact(D) {
        let wt = w[D];
        for c in 0..D {
            out[c] += wt * m[c];
        }
        let mut a = D;
        while a > 0 {
            a -= 1;
            idx[a] += 1;
            if idx[a] < p {
                break;
            }
            idx[a] = 0;
        }
        for b in a..D {
            w[b + 1] = w[b] * t[b][idx[b]];
        }
    }
}

/// `T_0(x) .. T_{p-1}(x)`.
fn chebyshev(x: f64, p: usize, t: &mut [f64; MAX_ORDER]) {
    t[0] = 1.0;
    if p > 1 {
        t[1] = x;
    }
    for k in 2..p {
        t[k] = 2.0 * x * t[k - 1] - t[k - 2];
    }
}

/// Applies the `p x p` matrix `mat` along tensor axis `axis` of a `p^d`
/// tensor with `d` components per entry.
fn apply_axis(src: &[f64], dst: &mut [f64], mat: &[f64], p: usize, d: usize, axis: usize) {
    let stride = p.pow((d - 1 - axis) as u32) * d;
    let outer = p.pow(axis as u32);
    dst.fill(0.0);
    for o in 0..outer {
        let base = o * p * stride;
        for j in 0..p {
            let row = &mut dst[base + j * stride..base + (j + 1) * stride];
            for k in 0..p {
                let w = mat[j * p + k];
                let col = &src[base + k * stride..base + (k + 1) * stride];
                for (r, s) in row.iter_mut().zip(col) {
                    *r += w * s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::field::{FarFieldOptions, FieldModel};
    use crate::geometry::{Point, Region, StarConfig};

    fn max_rel_error(d: usize, radius: f64, probe: f64, seed: u64) -> f64 {
        let w = Region::ball(Point::origin(d), radius).unwrap();
        let cfg = StarConfig::sample_poisson(d, w, 1.0, seed).unwrap();
        let exact = FieldModel::over_window(cfg.clone()).unwrap();
        let fast = FieldModel::over_window(cfg).unwrap().with_far_field(FarFieldOptions::default()).unwrap();
        let q = Region::ball(Point::origin(d), probe).unwrap();
        let mut rng = crate::rng::stream(seed, "farfield-test", 0);
        let mut x = vec![0.0; d];
        let mut worst: f64 = 0.0;
        for _ in 0..300 {
            q.sample_uniform(&mut rng, &mut x).unwrap();
            let a = exact.force(&x).unwrap();
            let b = fast.force(&x).unwrap();
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            let diff = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            worst = worst.max(diff / na);
        }
        worst
    }

    #[test]
    fn matches_exact_sum_d3() {
        let e = max_rel_error(3, 12.0, 10.0, 5);
        assert!(e < 1e-4, "relative error {e}");
    }

    #[test]
    fn matches_exact_sum_d4() {
        let e = max_rel_error(4, 6.0, 5.0, 6);
        assert!(e < 1e-4, "relative error {e}");
    }

    #[test]
    fn small_grid_is_exact() {
        // a grid within one near zone never uses interpolants
        let w = Region::ball(Point::origin(3), 2.0).unwrap();
        let cfg = StarConfig::sample_poisson(3, w, 1.0, 2).unwrap();
        let exact = FieldModel::over_window(cfg.clone()).unwrap();
        let opts = FarFieldOptions { cell_size: Some(2.0), ..Default::default() };
        let fast = FieldModel::over_window(cfg).unwrap().with_far_field(opts).unwrap();
        let x = [0.3, -0.2, 0.1];
        let a = exact.force(&x).unwrap();
        let b = fast.force(&x).unwrap();
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-12 * a[k].abs().max(1.0));
        }
    }
}
