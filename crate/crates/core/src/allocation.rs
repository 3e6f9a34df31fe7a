//! Allocation maps: basins on grids, Monte Carlo cell volumes, diameters,
//! crossing detection and the stable-marriage baseline.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FarFieldOptions, FieldModel};
use crate::flow::{basin_of, integrate_flow, FlowOptions, FlowTrace, Terminal};
use crate::geometry::{dist2, Point, Region, StarConfig};
use crate::index::CellIndex;
use crate::io::real;
use crate::rng;

/// Largest number of grid cells a map may hold.
pub const MAX_CELLS: usize = 1 << 24;

/// A regular grid of `resolution^d` cells over a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub region: Region,
    pub resolution: usize,
}

impl GridSpec {
    pub fn new(region: Region, resolution: usize) -> Result<Self> {
        let g = Self { region, resolution };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        if !matches!(self.region, Region::Box { .. }) {
            return Err(Error::Validation("grid region must be a box".into()));
        }
        if self.resolution < 2 {
            return Err(Error::Validation("grid resolution must be at least 2".into()));
        }
        let cells = (self.resolution as f64).powi(self.dim() as i32);
        if cells > MAX_CELLS as f64 {
            return Err(Error::Validation(format!("grid has {cells} cells, limit is {MAX_CELLS}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.region.dim()
    }

    pub fn cell_count(&self) -> usize {
        self.resolution.pow(self.dim() as u32)
    }

    fn halfwidth(&self) -> f64 {
        match self.region {
            Region::Box { halfwidth, .. } => halfwidth,
            _ => unreachable!("validated"),
        }
    }

    pub fn cell_side(&self) -> f64 {
        2.0 * self.halfwidth() / self.resolution as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_side().powi(self.dim() as i32)
    }

    /// Multi-index of flat cell `i`, axis 0 slowest.
    pub fn unflatten(&self, mut i: usize) -> Vec<usize> {
        let d = self.dim();
        let mut idx = vec![0; d];
        for a in (0..d).rev() {
            idx[a] = i % self.resolution;
            i /= self.resolution;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &v| acc * self.resolution + v)
    }

    pub fn cell_center(&self, i: usize) -> Vec<f64> {
        let c = self.region.center().coords();
        let h = self.halfwidth();
        let s = self.cell_side();
        self.unflatten(i)
            .iter()
            .zip(c)
            .map(|(&k, &ck)| ck - h + (k as f64 + 0.5) * s)
            .collect()
    }

    /// Cell containing `x`, if inside the grid box.
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        if !self.region.contains(x) {
            return None;
        }
        let c = self.region.center().coords();
        let h = self.halfwidth();
        let s = self.cell_side();
        let idx: Vec<usize> = x
            .iter()
            .zip(c)
            .map(|(&v, &ck)| (((v - ck + h) / s).floor() as usize).min(self.resolution - 1))
            .collect();
        Some(self.flatten(&idx))
    }
}

/// Where an allocation map came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub dim: usize,
    pub config_seed: u64,
    pub star_count: usize,
    pub truncation: Option<Region>,
    pub compensate: Option<bool>,
    pub far_field: Option<FarFieldOptions>,
    pub flow: Option<FlowOptions>,
}

impl Provenance {
    fn of_model(model: &FieldModel, opts: &FlowOptions, far: Option<FarFieldOptions>) -> Self {
        Self {
            method: "gravitational".into(),
            dim: model.dim(),
            config_seed: model.config().seed(),
            star_count: model.config().len(),
            truncation: Some(model.truncation().clone()),
            compensate: Some(model.compensated()),
            far_field: far,
            flow: Some(*opts),
        }
    }
}

/// Owner star (config index) of every grid cell, `None` when unresolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationMap {
    pub grid: GridSpec,
    pub owners: Vec<Option<usize>>,
    pub provenance: Provenance,
}

/// Basins of all cell centers.
pub fn allocate_grid(model: &FieldModel, grid: &GridSpec, opts: &FlowOptions) -> Result<AllocationMap> {
    allocate_grid_with(model, grid, opts, None)
}

/// As [`allocate_grid`], recording the far-field options used to build the
/// model in the provenance.
pub fn allocate_grid_with(
    model: &FieldModel,
    grid: &GridSpec,
    opts: &FlowOptions,
    far: Option<FarFieldOptions>,
) -> Result<AllocationMap> {
    grid.validate()?;
    opts.validate()?;
    if grid.dim() != model.dim() {
        return Err(Error::Validation("grid dimension differs from model".into()));
    }
    let valid = Region::ball(Point::new(model.center().to_vec())?, opts.valid_radius(model).max(f64::MIN_POSITIVE))?;
    if !valid.encloses(&grid.region) {
        return Err(Error::Validation("grid box must lie inside the valid flow region".into()));
    }
    let owners = (0..grid.cell_count())
        .into_par_iter()
        .map(|i| Ok(basin_of(model, &grid.cell_center(i), opts)?.star()))
        .collect::<Result<Vec<_>>>()?;
    Ok(AllocationMap { grid: grid.clone(), owners, provenance: Provenance::of_model(model, opts, far) })
}

impl AllocationMap {
    pub fn resolved_fraction(&self) -> f64 {
        self.owners.iter().filter(|o| o.is_some()).count() as f64 / self.owners.len() as f64
    }

    pub fn owned_cells(&self, star: usize) -> Vec<usize> {
        (0..self.owners.len()).filter(|&i| self.owners[i] == Some(star)).collect()
    }

    /// Number of owned cells times the cell volume.
    pub fn cell_volume(&self, star: usize) -> f64 {
        self.owned_cells(star).len() as f64 * self.grid.cell_volume()
    }

    /// Largest distance between centers of cells owned by `star`.
    pub fn cell_diameter(&self, star: usize) -> Result<f64> {
        let cells = self.owned_cells(star);
        if cells.is_empty() {
            return Err(Error::Domain(format!("star {star} owns no cells")));
        }
        let set: std::collections::HashSet<usize> = cells.iter().copied().collect();
        let d = self.grid.dim();
        let n = self.grid.resolution;
        // extreme points lie on the boundary of the owned set
        let boundary: Vec<Vec<f64>> = cells
            .iter()
            .filter(|&&c| {
                let idx = self.grid.unflatten(c);
                (0..d).any(|a| {
                    let mut lo = idx.clone();
                    let mut hi = idx.clone();
                    let edge = idx[a] == 0 || idx[a] + 1 == n;
                    edge || {
                        lo[a] -= 1;
                        hi[a] += 1;
                        !set.contains(&self.grid.flatten(&lo)) || !set.contains(&self.grid.flatten(&hi))
                    }
                })
            })
            .map(|&c| self.grid.cell_center(c))
            .collect();
        Ok(max_pairwise(&boundary))
    }

    /// Owner of the cell containing `x`.
    pub fn owner_at(&self, x: &[f64]) -> Result<usize> {
        let cell = self
            .grid
            .cell_of(x)
            .ok_or_else(|| Error::Domain(format!("{x:?} lies outside the grid")))?;
        self.owners[cell].ok_or_else(|| Error::Unresolved(format!("cell containing {x:?} is unresolved")))
    }

    /// Diameter of the cell owning `x`.
    pub fn allocation_diameter_at(&self, x: &[f64]) -> Result<f64> {
        self.cell_diameter(self.owner_at(x)?)
    }

    /// The star allocated to the origin. When the origin lies on faces
    /// between grid cells, every touching cell must have the same owner.
    pub fn extra_head_point(&self) -> Result<usize> {
        let d = self.grid.dim();
        let origin = vec![0.0; d];
        let cell = self
            .grid
            .cell_of(&origin)
            .ok_or_else(|| Error::Domain("origin lies outside the grid".into()))?;
        let c = self.grid.region.center().coords();
        let h = self.grid.halfwidth();
        let s = self.grid.cell_side();
        let mut candidates = vec![self.grid.unflatten(cell)];
        for a in 0..d {
            let t = (h - c[a]) / s;
            if t.fract() == 0.0 && t > 0.0 && (t as usize) < self.grid.resolution {
                let more: Vec<Vec<usize>> = candidates
                    .iter()
                    .map(|idx| {
                        let mut j = idx.clone();
                        j[a] = t as usize - 1;
                        j
                    })
                    .collect();
                candidates.extend(more);
            }
        }
        let mut owner = None;
        for idx in candidates {
            match self.owners[self.grid.flatten(&idx)] {
                None => return Err(Error::Unresolved("origin cell is unresolved".into())),
                Some(o) if owner.is_some_and(|p| p != o) => {
                    return Err(Error::Unresolved("origin lies on a boundary between cells".into()))
                }
                Some(o) => owner = Some(o),
            }
        }
        owner.ok_or_else(|| Error::Unresolved("origin cell is unresolved".into()))
    }

    /// Fraction of `star`'s cells in its largest face-connected component.
    pub fn dominant_component_fraction(&self, star: usize) -> f64 {
        let cells = self.owned_cells(star);
        if cells.is_empty() {
            return 0.0;
        }
        let d = self.grid.dim();
        let n = self.grid.resolution;
        let mut seen: HashMap<usize, bool> = cells.iter().map(|&c| (c, false)).collect();
        let mut best = 0;
        for &start in &cells {
            if seen[&start] {
                continue;
            }
            let mut size = 0;
            let mut queue = VecDeque::from([start]);
            seen.insert(start, true);
            while let Some(c) = queue.pop_front() {
                size += 1;
                let idx = self.grid.unflatten(c);
                for a in 0..d {
                    for step in [-1i64, 1] {
                        let v = idx[a] as i64 + step;
                        if v < 0 || v >= n as i64 {
                            continue;
                        }
                        let mut j = idx.clone();
                        j[a] = v as usize;
                        let f = self.grid.flatten(&j);
                        if let Some(s) = seen.get_mut(&f) {
                            if !*s {
                                *s = true;
                                queue.push_back(f);
                            }
                        }
                    }
                }
            }
            best = best.max(size);
        }
        best as f64 / cells.len() as f64
    }

    /// CSV rows `i1..id,owner` with `-1` for unresolved cells.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let d = self.grid.dim();
        let head: Vec<String> = (1..=d).map(|k| format!("i{k}")).collect();
        writeln!(w, "{},owner", head.join(","))?;
        for (i, o) in self.owners.iter().enumerate() {
            let idx: Vec<String> = self.grid.unflatten(i).iter().map(|v| v.to_string()).collect();
            let owner = o.map_or("-1".to_string(), |v| v.to_string());
            writeln!(w, "{},{owner}", idx.join(","))?;
        }
        Ok(())
    }

    /// JSON header with grid, provenance and summary counts.
    pub fn header_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Header<'a> {
            grid: &'a GridSpec,
            provenance: &'a Provenance,
            cells: usize,
            resolved_fraction: f64,
        }
        Ok(serde_json::to_string_pretty(&Header {
            grid: &self.grid,
            provenance: &self.provenance,
            cells: self.owners.len(),
            resolved_fraction: self.resolved_fraction(),
        })?)
    }

    /// CSV rows `x,y,owner` for the plane spanned by axes `a` and `b` through
    /// the cells nearest to coordinate `at` along every other axis.
    pub fn write_slice(&self, mut w: impl Write, a: usize, b: usize, at: f64) -> Result<()> {
        let d = self.grid.dim();
        if a >= d || b >= d || a == b {
            return Err(Error::Validation("slice axes must be two distinct grid axes".into()));
        }
        let c = self.grid.region.center().coords();
        let h = self.grid.halfwidth();
        let s = self.grid.cell_side();
        let n = self.grid.resolution;
        let fixed = |k: usize| ((((at - c[k] + h) / s).floor()).max(0.0) as usize).min(n - 1);
        writeln!(w, "x,y,owner")?;
        let mut idx: Vec<usize> = (0..d).map(fixed).collect();
        for i in 0..n {
            for j in 0..n {
                idx[a] = i;
                idx[b] = j;
                let f = self.grid.flatten(&idx);
                let center = self.grid.cell_center(f);
                let owner = self.owners[f].map_or("-1".to_string(), |v| v.to_string());
                writeln!(w, "{},{},{owner}", real(center[a]), real(center[b]))?;
            }
        }
        Ok(())
    }
}

fn max_pairwise(points: &[Vec<f64>]) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.max(dist2(&points[i], &points[j]));
        }
    }
    best.sqrt()
}

/// Monte Carlo basin volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McVolumes {
    pub region: Region,
    pub samples: u64,
    pub unresolved: u64,
    /// Sample counts per config star index.
    pub counts: HashMap<usize, u64>,
}

impl McVolumes {
    /// Estimated volume of `star`'s basin inside the region.
    pub fn volume(&self, star: usize) -> f64 {
        let v = self.region.volume().unwrap_or(f64::NAN);
        *self.counts.get(&star).unwrap_or(&0) as f64 / self.samples as f64 * v
    }

    pub fn resolved_fraction(&self) -> f64 {
        1.0 - self.unresolved as f64 / self.samples as f64
    }
}

const MC_CHUNK: u64 = 4096;

/// Flows `n_samples` uniform points of `region` to their basins.
pub fn mc_cell_volumes(
    model: &FieldModel,
    region: &Region,
    n_samples: u64,
    seed: u64,
    opts: &FlowOptions,
) -> Result<McVolumes> {
    let d = model.dim();
    region
        .volume()
        .ok_or_else(|| Error::UnsupportedRegion("sampling region must be bounded".into()))?;
    let chunks = n_samples.div_ceil(MC_CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, "mc_cell_volumes", c);
            let n = MC_CHUNK.min(n_samples - c * MC_CHUNK);
            let mut x = vec![0.0; d];
            let mut counts: HashMap<usize, u64> = HashMap::new();
            let mut unresolved = 0;
            for _ in 0..n {
                region.sample_uniform(&mut rng, &mut x)?;
                match basin_of(model, &x, opts)?.star() {
                    Some(s) => *counts.entry(s).or_default() += 1,
                    None => unresolved += 1,
                }
            }
            Ok((counts, unresolved))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts: HashMap<usize, u64> = HashMap::new();
    let mut unresolved = 0;
    for (c, u) in parts {
        unresolved += u;
        for (k, v) in c {
            *counts.entry(k).or_default() += v;
        }
    }
    Ok(McVolumes { region: region.clone(), samples: n_samples, unresolved, counts })
}

/// Basin of the lattice point at `anchor`, grown by breadth-first search
/// over a lattice of the given spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeBasin {
    pub owner: usize,
    pub spacing: f64,
    /// Lattice offsets from the anchor, one row of `d` integers per point.
    pub points: Vec<Vec<i64>>,
    pub diameter: f64,
    /// Whether the search stopped at `max_points` before the basin closed.
    pub truncated: bool,
}

pub fn lattice_basin(
    model: &FieldModel,
    anchor: &[f64],
    spacing: f64,
    max_points: usize,
    opts: &FlowOptions,
) -> Result<LatticeBasin> {
    let d = model.dim();
    let owner = basin_of(model, anchor, opts)?
        .star()
        .ok_or_else(|| Error::Unresolved("anchor point has no basin".into()))?;
    let at = |k: &[i64]| -> Vec<f64> { anchor.iter().zip(k).map(|(a, &i)| a + spacing * i as f64).collect() };
    let mut status: HashMap<Vec<i64>, bool> = HashMap::new();
    let start = vec![0i64; d];
    status.insert(start.clone(), true);
    let mut points = vec![start.clone()];
    let mut frontier = vec![start];
    let mut truncated = false;
    while !frontier.is_empty() {
        let mut next: Vec<Vec<i64>> = Vec::new();
        for p in &frontier {
            for a in 0..d {
                for step in [-1, 1] {
                    let mut q = p.clone();
                    q[a] += step;
                    if !status.contains_key(&q) && !next.contains(&q) {
                        next.push(q);
                    }
                }
            }
        }
        next.sort();
        let owned = next
            .par_iter()
            .map(|q| {
                let x = at(q);
                if !model.in_domain(&x) {
                    return Ok(false);
                }
                Ok(basin_of(model, &x, opts)?.star() == Some(owner))
            })
            .collect::<Result<Vec<bool>>>()?;
        frontier.clear();
        for (q, own) in next.into_iter().zip(owned) {
            status.insert(q.clone(), own);
            if own {
                points.push(q.clone());
                frontier.push(q);
            }
        }
        if points.len() >= max_points {
            truncated = true;
            break;
        }
    }
    let coords: Vec<Vec<f64>> = points.iter().map(|k| k.iter().map(|&i| spacing * i as f64).collect()).collect();
    let boundary: Vec<Vec<f64>> = points
        .iter()
        .zip(&coords)
        .filter(|(k, _)| {
            (0..d).any(|a| {
                [-1, 1].iter().any(|s| {
                    let mut q = (*k).clone();
                    q[a] += s;
                    status.get(&q) != Some(&true)
                })
            })
        })
        .map(|(_, c)| c.clone())
        .collect();
    Ok(LatticeBasin { owner, spacing, points, diameter: max_pairwise(&boundary), truncated })
}

/// Outcome of a crossing search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub crossed: bool,
    /// Index of the first crossing seed.
    pub seed_index: Option<usize>,
    pub witness: Option<FlowTrace>,
    pub seeds_tried: usize,
}

fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Radical inverse of `i` in base `b`.
fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

const PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

/// Seed point `i` for a crossing search around `Q(0, R)`. Seeds cycle over
/// the inner shell, the outer shell and the region between; within each
/// class they follow a randomly shifted Halton sequence, so every prefix is
/// spread evenly.
pub fn crossing_seed(d: usize, r: f64, seed: u64, i: usize) -> Vec<f64> {
    let class = i % 3;
    let j = (i / 3) as u64 + 1;
    let shift: Vec<f64> = {
        use rand::Rng as _;
        let mut g = rng::stream(seed, "crossing_shift", class as u64);
        (0..d + 1).map(|_| g.random::<f64>()).collect()
    };
    let u = |k: usize, j: u64| (radical_inverse(j, PRIMES[k]) + shift[k]).fract();
    match class {
        0 | 1 => {
            let side = if class == 0 { r } else { 2.0 * r };
            let face = ((u(0, j) * (2 * d) as f64) as usize).min(2 * d - 1);
            let axis = face / 2;
            let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
            let mut k = 1;
            (0..d)
                .map(|a| {
                    if a == axis {
                        sign * side
                    } else {
                        let v = side * (2.0 * u(k, j) - 1.0);
                        k += 1;
                        v
                    }
                })
                .collect()
        }
        _ => {
            // walk the sequence until a point lands between the shells
            let mut jj = j;
            loop {
                let x: Vec<f64> = (0..d).map(|k| 2.0 * r * (2.0 * u(k, jj) - 1.0)).collect();
                if sup_norm(&x) > r {
                    return x;
                }
                jj += 1_000_003;
            }
        }
    }
}

/// Searches for a flow curve meeting both `∂Q(0, R)` and `∂Q(0, 2R)`.
pub fn detect_crossing(
    model: &FieldModel,
    r: f64,
    n_seeds: usize,
    seed: u64,
    opts: &FlowOptions,
) -> Result<Crossing> {
    let d = model.dim();
    if !(r > 0.0) {
        return Err(Error::Validation("R must be positive".into()));
    }
    let valid = Region::ball(Point::new(model.center().to_vec())?, opts.valid_radius(model).max(f64::MIN_POSITIVE))?;
    let outer = Region::cube(Point::origin(d), 2.0 * r)?;
    if !valid.encloses(&outer) {
        return Err(Error::Validation("Q(0, 2R) must lie inside the valid flow region".into()));
    }
    for i in 0..n_seeds {
        let x0 = crossing_seed(d, r, seed, i);
        let trace = integrate_flow(model, &x0, opts)?;
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for (_, y) in trace.samples() {
            let m = sup_norm(y);
            lo = lo.min(m);
            hi = hi.max(m);
        }
        // a captured curve ends at its star
        if let Terminal::Captured { star, .. } = trace.terminal {
            let m = sup_norm(model.config().star(star));
            lo = lo.min(m);
            hi = hi.max(m);
        }
        if lo <= r && hi >= 2.0 * r {
            return Ok(Crossing { crossed: true, seed_index: Some(i), witness: Some(trace), seeds_tried: i + 1 });
        }
    }
    Ok(Crossing { crossed: false, seed_index: None, witness: None, seeds_tried: n_seeds })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Held {
    r2: f64,
    site: usize,
}

impl Eq for Held {}

impl Ord for Held {
    // the worst held site (farthest, then highest index) is the heap top
    fn cmp(&self, other: &Self) -> Ordering {
        self.r2.total_cmp(&other.r2).then(self.site.cmp(&other.site))
    }
}

impl PartialOrd for Held {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Stars in increasing distance from a site, produced ring by ring.
struct Candidates {
    buf: Vec<(f64, usize)>,
    pos: usize,
    radius: f64,
    done: bool,
}

impl Candidates {
    fn next(&mut self, index: &CellIndex, coords: &[f64], x: &[f64], step: f64, reach: f64) -> Option<(f64, usize)> {
        let d = x.len();
        while self.pos == self.buf.len() {
            if self.done {
                return None;
            }
            let inner = self.radius;
            self.radius = if inner == 0.0 { step } else { inner * 2.0 };
            if self.radius >= reach {
                self.done = true;
            }
            let ring = Region::annulus(Point::from(x), inner, self.radius).expect("valid ring");
            self.buf = index
                .query(&ring)
                .into_iter()
                .map(|s| (dist2(&coords[s * d..(s + 1) * d], x), s))
                .collect();
            self.buf.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            self.pos = 0;
        }
        self.pos += 1;
        Some(self.buf[self.pos - 1])
    }
}

/// Star quota of the stable-marriage allocation on `grid`.
pub fn stable_marriage_quota(grid: &GridSpec) -> usize {
    (1.0 / grid.cell_volume()).round().max(1.0) as usize
}

/// Site-proposing Gale–Shapley matching of grid cells to stars, each star
/// taking `round(1 / cell_volume)` cells. Preferences are by distance on
/// both sides, ties broken by lower index.
pub fn stable_marriage_allocate(config: &StarConfig, grid: &GridSpec) -> Result<AllocationMap> {
    grid.validate()?;
    if grid.dim() != config.dim() {
        return Err(Error::Validation("grid dimension differs from config".into()));
    }
    let quota = stable_marriage_quota(grid);
    let cells = grid.cell_count();
    if quota * config.len() > cells {
        return Err(Error::Infeasible(format!(
            "{} stars with quota {quota} need more than the {cells} grid cells",
            config.len()
        )));
    }
    let d = config.dim();
    let coords = config.coords();
    let index = CellIndex::build(d, coords);
    let centers: Vec<Vec<f64>> = (0..cells).map(|i| grid.cell_center(i)).collect();
    let (blo, bhi) = config_extent(config, grid);
    let reach = 2.0 * dist2(&blo, &bhi).sqrt() + 1.0;
    let step = grid.cell_side().max((grid.cell_volume() * quota as f64).powf(1.0 / d as f64));

    let mut held: Vec<BinaryHeap<Held>> = (0..config.len()).map(|_| BinaryHeap::new()).collect();
    let mut owner: Vec<Option<usize>> = vec![None; cells];
    let mut cand: Vec<Candidates> =
        (0..cells).map(|_| Candidates { buf: Vec::new(), pos: 0, radius: 0.0, done: false }).collect();
    let mut free: VecDeque<usize> = (0..cells).collect();
    while let Some(site) = free.pop_front() {
        let Some((r2, star)) = cand[site].next(&index, coords, &centers[site], step, reach) else {
            continue;
        };
        let offer = Held { r2, site };
        let h = &mut held[star];
        if h.len() < quota {
            h.push(offer);
            owner[site] = Some(star);
        } else if offer < *h.peek().expect("full heap") {
            let out = h.pop().expect("full heap");
            h.push(offer);
            owner[out.site] = None;
            owner[site] = Some(star);
            free.push_back(out.site);
        } else {
            free.push_front(site);
        }
    }
    Ok(AllocationMap {
        grid: grid.clone(),
        owners: owner,
        provenance: Provenance {
            method: "stable_marriage".into(),
            dim: d,
            config_seed: config.seed(),
            star_count: config.len(),
            truncation: None,
            compensate: None,
            far_field: None,
            flow: None,
        },
    })
}

fn config_extent(config: &StarConfig, grid: &GridSpec) -> (Vec<f64>, Vec<f64>) {
    let (mut lo, mut hi) = grid.region.bounding_box().expect("box");
    for z in config.stars() {
        for k in 0..z.len() {
            lo[k] = lo[k].min(z[k]);
            hi[k] = hi[k].max(z[k]);
        }
    }
    (lo, hi)
}

/// Pairs (site, star) that would both rather be matched to each other.
pub fn blocking_pairs(config: &StarConfig, map: &AllocationMap) -> Result<Vec<(usize, usize)>> {
    let quota = stable_marriage_quota(&map.grid);
    let n = config.len();
    let mut worst: Vec<Option<Held>> = vec![None; n];
    let mut load = vec![0usize; n];
    for (site, o) in map.owners.iter().enumerate() {
        if let Some(s) = *o {
            if s >= n {
                return Err(Error::Validation(format!("owner {s} is not a star")));
            }
            let h = Held { r2: dist2(&map.grid.cell_center(site), config.star(s)), site };
            load[s] += 1;
            if worst[s].is_none_or(|w| h > w) {
                worst[s] = Some(h);
            }
        }
    }
    let sites: Vec<usize> = (0..map.owners.len()).collect();
    let pairs = sites
        .par_iter()
        .map(|&site| {
            let x = map.grid.cell_center(site);
            let mine = map.owners[site].map(|s| (dist2(&x, config.star(s)), s));
            let mut out = Vec::new();
            for star in 0..n {
                if Some(star) == mine.map(|m| m.1) {
                    continue;
                }
                let r2 = dist2(&x, config.star(star));
                let site_prefers = match mine {
                    None => true,
                    Some((m2, ms)) => r2.total_cmp(&m2).then(star.cmp(&ms)).is_lt(),
                };
                if !site_prefers {
                    continue;
                }
                let star_prefers = load[star] < quota || worst[star].is_some_and(|w| Held { r2, site } < w);
                if star_prefers {
                    out.push((site, star));
                }
            }
            out
        })
        .collect::<Vec<_>>();
    Ok(pairs.into_iter().flatten().collect())
}
