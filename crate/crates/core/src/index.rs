//! Uniform bucket grid over star positions.
//!
//! Stars are counting-sorted into cubic buckets stored row-major, so the
//! stars of any run of buckets along the last axis form one contiguous slice.
//! Range queries visit the buckets overlapping the query's bounding box and
//! filter exactly, so results equal a linear scan.

use crate::geometry::{dist2, Region};

#[derive(Debug, Clone)]
pub struct CellIndex {
    dim: usize,
    lo: Vec<f64>,
    side: f64,
    counts: Vec<usize>,
    /// `start[b]..start[b + 1]` indexes `ids`/`coords` for bucket `b`.
    start: Vec<usize>,
    /// Original star indices in bucket order.
    ids: Vec<usize>,
    /// Star coordinates in bucket order, star-major.
    coords: Vec<f64>,
}

impl CellIndex {
    /// Index with buckets sized for about two stars each.
    pub fn build(dim: usize, coords: &[f64]) -> Self {
        let n = coords.len() / dim;
        if n == 0 {
            return Self::with_grid(dim, coords, vec![0.0; dim], 1.0, vec![1; dim]);
        }
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for z in coords.chunks_exact(dim) {
            for k in 0..dim {
                lo[k] = lo[k].min(z[k]);
                hi[k] = hi[k].max(z[k]);
            }
        }
        let volume: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a).max(1e-9)).product();
        let mut side = (2.0 * volume / n as f64).powf(1.0 / dim as f64);
        // keep the bucket count bounded for degenerate extents
        let extent = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0f64, f64::max);
        side = side.max(extent / 256.0).max(1e-9);
        let counts = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| (((b - a) / side).floor() as usize + 1).max(1))
            .collect();
        Self::with_grid(dim, coords, lo, side, counts)
    }

    /// Index on a caller-chosen grid: bucket `i` along axis `k` covers
    /// `[lo_k + i * side, lo_k + (i + 1) * side)`. Points beyond the grid are
    /// clamped into the boundary buckets.
    pub fn with_grid(dim: usize, coords: &[f64], lo: Vec<f64>, side: f64, counts: Vec<usize>) -> Self {
        let n = coords.len() / dim;
        let total: usize = counts.iter().product();
        let mut bucket_of = Vec::with_capacity(n);
        let mut start = vec![0usize; total + 1];
        let mut cell = vec![0usize; dim];
        for z in coords.chunks_exact(dim) {
            for k in 0..dim {
                cell[k] = bucket_coord(z[k], lo[k], side, counts[k]);
            }
            let b = flat(&cell, &counts);
            bucket_of.push(b);
            start[b + 1] += 1;
        }
        for b in 0..total {
            start[b + 1] += start[b];
        }
        let mut fill = start.clone();
        let mut ids = vec![0usize; n];
        for (i, &b) in bucket_of.iter().enumerate() {
            ids[fill[b]] = i;
            fill[b] += 1;
        }
        let mut sorted = Vec::with_capacity(coords.len());
        for &i in &ids {
            sorted.extend_from_slice(&coords[i * dim..(i + 1) * dim]);
        }
        Self { dim, lo, side, counts, start, ids, coords: sorted }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    /// Original index of the star at bucket-order position `pos`.
    pub fn id(&self, pos: usize) -> usize {
        self.ids[pos]
    }

    pub fn sorted_coords(&self) -> &[f64] {
        &self.coords
    }

    /// Bucket coordinate of `x` along every axis (clamped).
    pub fn bucket_of(&self, x: &[f64], out: &mut [usize]) {
        for k in 0..self.dim {
            out[k] = bucket_coord(x[k], self.lo[k], self.side, self.counts[k]);
        }
    }

    /// Calls `f(positions)` for each contiguous run of stars whose buckets lie
    /// in the inclusive bucket box `[blo, bhi]` (already clamped to the grid).
    pub fn for_each_run(&self, blo: &[usize], bhi: &[usize], mut f: impl FnMut(std::ops::Range<usize>)) {
        let d = self.dim;
        if (0..d).any(|k| blo[k] > bhi[k]) {
            return;
        }
        let mut buf = [0usize; 16];
        let mut heap;
        let cur: &mut [usize] = if d <= 16 {
            buf[..d].copy_from_slice(blo);
            &mut buf[..d]
        } else {
            heap = blo.to_vec();
            &mut heap
        };
        loop {
            cur[d - 1] = blo[d - 1];
            let first = flat(cur, &self.counts);
            let last = first + (bhi[d - 1] - blo[d - 1]);
            let run = self.start[first]..self.start[last + 1];
            if !run.is_empty() {
                f(run);
            }
            // advance the row counter over axes 0..d-1
            let mut k = d - 1;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                if cur[k] < bhi[k] {
                    cur[k] += 1;
                    break;
                }
                cur[k] = blo[k];
            }
        }
    }

    /// Clamped bucket box covering the axis-aligned box `[lo, hi]`.
    pub fn bucket_box(&self, lo: &[f64], hi: &[f64]) -> (Vec<usize>, Vec<usize>) {
        let mut blo = vec![0; self.dim];
        let mut bhi = vec![0; self.dim];
        self.bucket_of(lo, &mut blo);
        self.bucket_of(hi, &mut bhi);
        (blo, bhi)
    }

    /// Original indices of stars in `region`, ascending.
    pub fn query(&self, region: &Region) -> Vec<usize> {
        let d = self.dim;
        let mut out = Vec::new();
        match region.bounding_box() {
            Some((lo, hi)) => {
                let (blo, bhi) = self.bucket_box(&lo, &hi);
                self.for_each_run(&blo, &bhi, |run| {
                    for pos in run {
                        if region.contains(&self.coords[pos * d..(pos + 1) * d]) {
                            out.push(self.ids[pos]);
                        }
                    }
                });
            }
            None => {
                for pos in 0..self.ids.len() {
                    if region.contains(&self.coords[pos * d..(pos + 1) * d]) {
                        out.push(self.ids[pos]);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Index and distance of the nearest star to `x`, if any.
    pub fn nearest(&self, x: &[f64]) -> Option<(usize, f64)> {
        if self.ids.is_empty() {
            return None;
        }
        let d = self.dim;
        let mut c = vec![0usize; d];
        self.bucket_of(x, &mut c);
        let max_ring = *self.counts.iter().max().unwrap();
        let mut best: Option<(usize, f64)> = None;
        for ring in 0..=max_ring {
            let blo: Vec<usize> = c.iter().map(|&v| v.saturating_sub(ring)).collect();
            let bhi: Vec<usize> =
                c.iter().zip(&self.counts).map(|(&v, &n)| (v + ring).min(n - 1)).collect();
            self.for_each_run(&blo, &bhi, |run| {
                for pos in run {
                    let r2 = dist2(&self.coords[pos * d..(pos + 1) * d], x);
                    if best.is_none_or(|(_, b)| r2 < b) {
                        best = Some((self.ids[pos], r2));
                    }
                }
            });
            // every star outside the searched box is at least `ring * side` away
            if let Some((_, b)) = best {
                if b.sqrt() <= ring as f64 * self.side {
                    break;
                }
            }
        }
        best.map(|(i, r2)| (i, r2.sqrt()))
    }
}

fn bucket_coord(v: f64, lo: f64, side: f64, n: usize) -> usize {
    let t = ((v - lo) / side).floor();
    if t <= 0.0 {
        0
    } else {
        (t as usize).min(n - 1)
    }
}

fn flat(cell: &[usize], counts: &[usize]) -> usize {
    cell.iter().zip(counts).fold(0, |acc, (&c, &n)| acc * n + c)
}

/// Linear-scan reference for [`CellIndex::query`].
pub fn linear_scan(dim: usize, coords: &[f64], region: &Region) -> Vec<usize> {
    coords
        .chunks_exact(dim)
        .enumerate()
        .filter(|(_, z)| region.contains(z))
        .map(|(i, _)| i)
        .collect()
}
