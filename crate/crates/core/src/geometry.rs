//! Points, regions and star configurations.

use std::cmp::Ordering;
use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Volume of the unit ball in `R^d`, `pi^{d/2} / Gamma(d/2 + 1)`.
pub fn kappa(d: usize) -> Result<f64> {
    if d < 1 {
        return Err(Error::Domain("kappa needs d >= 1".into()));
    }
    let v = if d % 2 == 0 {
        let k = d / 2;
        let fact: f64 = (1..=k).map(|j| j as f64).product();
        PI.powi(k as i32) / fact
    } else {
        // Gamma(d/2 + 1) = sqrt(pi) * prod_{j=0}^{(d-1)/2} (j + 1/2)
        let k = (d - 1) / 2;
        let prod: f64 = (0..=k).map(|j| j as f64 + 0.5).product();
        PI.powi(k as i32) / prod
    };
    Ok(v)
}

/// Surface area of the unit sphere `S^{d-1}`, equal to `d * kappa_d`.
pub fn sphere_area(d: usize) -> f64 {
    d as f64 * kappa(d).expect("d >= 1")
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// A point of `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation(format!("non-finite coordinate in {coords:?}")));
        }
        Ok(Self { coords })
    }

    pub fn origin(dim: usize) -> Self {
        Self { coords: vec![0.0; dim] }
    }

    /// Point on the first axis at distance `t` from the origin.
    pub fn on_axis(dim: usize, t: f64) -> Self {
        let mut coords = vec![0.0; dim];
        coords[0] = t;
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.coords).sqrt()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        dist2(&self.coords, &other.coords).sqrt()
    }

    pub fn translated(&self, u: &[f64]) -> Point {
        Point { coords: self.coords.iter().zip(u).map(|(a, b)| a + b).collect() }
    }
}

impl From<&[f64]> for Point {
    fn from(c: &[f64]) -> Self {
        Self { coords: c.to_vec() }
    }
}

impl std::ops::Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coords[i]
    }
}

/// A subset of `R^d`.
///
/// Membership is closed on the outer boundary and open on the inner one:
/// an annulus is `{q < |z - c| <= p}`, a ball `{|z - c| <= r}`, a box
/// `c + [-h, h]^d`, and the complement of a ball `{|z - c| > r}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Region {
    Ball { center: Point, radius: f64 },
    Annulus { center: Point, inner: f64, outer: f64 },
    Box { center: Point, halfwidth: f64 },
    ComplementOfBall { center: Point, radius: f64 },
}

impl Region {
    pub fn ball(center: Point, radius: f64) -> Result<Self> {
        let r = Region::Ball { center, radius };
        r.validate()?;
        Ok(r)
    }

    pub fn annulus(center: Point, inner: f64, outer: f64) -> Result<Self> {
        let r = Region::Annulus { center, inner, outer };
        r.validate()?;
        Ok(r)
    }

    pub fn cube(center: Point, halfwidth: f64) -> Result<Self> {
        let r = Region::Box { center, halfwidth };
        r.validate()?;
        Ok(r)
    }

    pub fn complement_of_ball(center: Point, radius: f64) -> Result<Self> {
        let r = Region::ComplementOfBall { center, radius };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Region::Ball { radius, .. } | Region::ComplementOfBall { radius, .. } => {
                radius.is_finite() && *radius > 0.0
            }
            Region::Annulus { inner, outer, .. } => {
                inner.is_finite() && outer.is_finite() && *inner >= 0.0 && outer > inner
            }
            Region::Box { halfwidth, .. } => halfwidth.is_finite() && *halfwidth > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid region parameters: {self:?}")))
        }
    }

    pub fn center(&self) -> &Point {
        match self {
            Region::Ball { center, .. }
            | Region::Annulus { center, .. }
            | Region::Box { center, .. }
            | Region::ComplementOfBall { center, .. } => center,
        }
    }

    pub fn dim(&self) -> usize {
        self.center().dim()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let c = self.center().coords();
        match self {
            Region::Ball { radius, .. } => dist2(x, c) <= radius * radius,
            Region::Annulus { inner, outer, .. } => {
                let r2 = dist2(x, c);
                r2 > inner * inner && r2 <= outer * outer
            }
            Region::Box { halfwidth, .. } => {
                x.iter().zip(c).all(|(a, b)| (a - b).abs() <= *halfwidth)
            }
            Region::ComplementOfBall { radius, .. } => dist2(x, c) > radius * radius,
        }
    }

    /// Lebesgue volume, `None` when infinite.
    pub fn volume(&self) -> Option<f64> {
        let d = self.dim();
        let k = kappa(d).ok()?;
        match self {
            Region::Ball { radius, .. } => Some(k * radius.powi(d as i32)),
            Region::Annulus { inner, outer, .. } => {
                Some(k * (outer.powi(d as i32) - inner.powi(d as i32)))
            }
            Region::Box { halfwidth, .. } => Some((2.0 * halfwidth).powi(d as i32)),
            Region::ComplementOfBall { .. } => None,
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`, `None` when unbounded.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let c = self.center().coords();
        let h = match self {
            Region::Ball { radius, .. } => *radius,
            Region::Annulus { outer, .. } => *outer,
            Region::Box { halfwidth, .. } => *halfwidth,
            Region::ComplementOfBall { .. } => return None,
        };
        Some((c.iter().map(|x| x - h).collect(), c.iter().map(|x| x + h).collect()))
    }

    /// Conservative test that `other` lies inside `self`. Exact for balls in
    /// balls and boxes in boxes; other pairs go through a bounding ball.
    pub fn encloses(&self, other: &Region) -> bool {
        let c = self.center().coords();
        let oc = other.center().coords();
        let d = dist2(c, oc).sqrt();
        if let (Region::Box { halfwidth: h, .. }, Region::Box { halfwidth: oh, .. }) = (self, other) {
            return c.iter().zip(oc).all(|(a, b)| (a - b).abs() + oh <= *h);
        }
        let reach = match other {
            Region::Ball { radius, .. } => *radius,
            Region::Annulus { outer, .. } => *outer,
            Region::Box { halfwidth, .. } => halfwidth * (oc.len() as f64).sqrt(),
            Region::ComplementOfBall { radius: or, .. } => {
                return match self {
                    Region::ComplementOfBall { radius, .. } => d + radius <= *or,
                    _ => false,
                };
            }
        };
        match self {
            Region::Ball { radius, .. } => d + reach <= *radius,
            Region::Annulus { inner, outer, .. } => d + reach <= *outer && d - reach >= *inner,
            Region::Box { halfwidth, .. } => {
                c.iter().zip(oc).all(|(a, b)| (a - b).abs() + reach <= *halfwidth)
            }
            Region::ComplementOfBall { radius, .. } => d - reach > *radius,
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, Region::ComplementOfBall { .. })
    }

    pub fn translated(&self, u: &[f64]) -> Region {
        let mut r = self.clone();
        match &mut r {
            Region::Ball { center, .. }
            | Region::Annulus { center, .. }
            | Region::Box { center, .. }
            | Region::ComplementOfBall { center, .. } => *center = center.translated(u),
        }
        r
    }

    /// Uniform sample from a bounded region by rejection from its bounding box.
    pub fn sample_uniform(&self, rng: &mut rng::Rng, out: &mut [f64]) -> Result<()> {
        let (lo, hi) = self
            .bounding_box()
            .ok_or_else(|| Error::UnsupportedRegion("cannot sample an unbounded region".into()))?;
        loop {
            for (k, o) in out.iter_mut().enumerate() {
                *o = lo[k] + (hi[k] - lo[k]) * rng.random::<f64>();
            }
            if self.contains(out) {
                return Ok(());
            }
        }
    }
}

/// A finite realization of the star process inside a window.
#[derive(Debug, Clone, PartialEq)]
pub struct StarConfig {
    dim: usize,
    intensity: f64,
    seed: u64,
    window: Region,
    coords: Vec<f64>,
    order: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct StarConfigFile {
    dim: usize,
    intensity: f64,
    seed: u64,
    window: Region,
    stars: Vec<Vec<f64>>,
}

impl StarConfig {
    /// Poisson process of the given intensity restricted to `window`.
    ///
    /// The count is drawn first and the positions are then i.i.d. uniform in
    /// the window, so the output is a pure function of the arguments.
    pub fn sample_poisson(dim: usize, window: Region, intensity: f64, seed: u64) -> Result<Self> {
        check_dim(dim, &window)?;
        window.validate()?;
        if !(intensity.is_finite() && intensity > 0.0) {
            return Err(Error::Validation(format!("intensity must be positive, got {intensity}")));
        }
        let volume = window
            .volume()
            .ok_or_else(|| Error::UnsupportedRegion("window has infinite volume".into()))?;
        let mut rng = rng::stream(seed, "sample_poisson", 0);
        let mean = intensity * volume;
        let count = if mean > 0.0 {
            Poisson::new(mean)
                .map_err(|e| Error::Validation(format!("poisson mean {mean}: {e}")))?
                .sample(&mut rng) as usize
        } else {
            0
        };
        let mut coords = vec![0.0; count * dim];
        for chunk in coords.chunks_exact_mut(dim) {
            window.sample_uniform(&mut rng, chunk)?;
        }
        let order = sorted_by_distance(&coords, dim, &vec![0.0; dim]);
        Ok(Self { dim, intensity, seed, window, coords, order })
    }

    /// Configuration with explicitly given stars.
    pub fn from_explicit(dim: usize, points: &[Point], window: Region) -> Result<Self> {
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.dim() != dim {
                return Err(Error::Validation(format!(
                    "point {:?} has dimension {}, expected {dim}",
                    p.coords(),
                    p.dim()
                )));
            }
            coords.extend_from_slice(p.coords());
        }
        Self::from_coords(dim, coords, window, 1.0, 0)
    }

    pub(crate) fn from_coords(
        dim: usize,
        coords: Vec<f64>,
        window: Region,
        intensity: f64,
        seed: u64,
    ) -> Result<Self> {
        check_dim(dim, &window)?;
        window.validate()?;
        if coords.len() % dim != 0 {
            return Err(Error::Validation("coordinate buffer not a multiple of dim".into()));
        }
        for (i, z) in coords.chunks_exact(dim).enumerate() {
            if z.iter().any(|c| !c.is_finite()) {
                return Err(Error::Validation(format!("star {i} has non-finite coordinates")));
            }
            if !window.contains(z) {
                return Err(Error::Validation(format!("star {i} at {z:?} lies outside the window")));
            }
        }
        let n = coords.len() / dim;
        let mut lex: Vec<usize> = (0..n).collect();
        lex.sort_by(|&a, &b| lex_cmp(&coords[a * dim..][..dim], &coords[b * dim..][..dim]));
        for w in lex.windows(2) {
            if coords[w[0] * dim..][..dim] == coords[w[1] * dim..][..dim] {
                return Err(Error::Validation(format!("stars {} and {} coincide", w[0], w[1])));
            }
        }
        let order = sorted_by_distance(&coords, dim, &vec![0.0; dim]);
        Ok(Self { dim, intensity, seed, window, coords, order })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn window(&self) -> &Region {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn star(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn stars(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Flat coordinate buffer, star-major.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Star indices sorted by distance from the origin, ties lexicographic.
    pub fn order_from_origin(&self) -> &[usize] {
        &self.order
    }

    /// Star indices sorted by distance from `origin`, ties lexicographic.
    pub fn order_by_distance(&self, origin: &[f64]) -> Vec<usize> {
        sorted_by_distance(&self.coords, self.dim, origin)
    }

    /// Union of several configurations over the same window (superposition).
    pub fn superpose(parts: &[StarConfig]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Validation("nothing to superpose".into()))?;
        let mut coords = Vec::new();
        let mut intensity = 0.0;
        for p in parts {
            if p.dim != first.dim || p.window != first.window {
                return Err(Error::Validation("superposed configs must share window".into()));
            }
            coords.extend_from_slice(&p.coords);
            intensity += p.intensity;
        }
        let order = sorted_by_distance(&coords, first.dim, &vec![0.0; first.dim]);
        Ok(Self {
            dim: first.dim,
            intensity,
            seed: first.seed,
            window: first.window.clone(),
            coords,
            order,
        })
    }

    /// Every star and the window shifted by `u`.
    pub fn translated(&self, u: &[f64]) -> Self {
        let coords: Vec<f64> = self
            .coords
            .chunks_exact(self.dim)
            .flat_map(|z| z.iter().zip(u).map(|(a, b)| a + b))
            .collect();
        let order = sorted_by_distance(&coords, self.dim, &vec![0.0; self.dim]);
        Self {
            dim: self.dim,
            intensity: self.intensity,
            seed: self.seed,
            window: self.window.translated(u),
            coords,
            order,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = StarConfigFile {
            dim: self.dim,
            intensity: self.intensity,
            seed: self.seed,
            window: self.window.clone(),
            stars: self.stars().map(<[f64]>::to_vec).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: StarConfigFile = serde_json::from_str(text)?;
        let mut coords = Vec::with_capacity(file.stars.len() * file.dim);
        for s in &file.stars {
            if s.len() != file.dim {
                return Err(Error::Validation(format!("star {s:?} has wrong dimension")));
            }
            coords.extend_from_slice(s);
        }
        Self::from_coords(file.dim, coords, file.window, file.intensity, file.seed)
    }
}

fn check_dim(dim: usize, window: &Region) -> Result<()> {
    if dim < 3 {
        return Err(Error::Validation(format!("dimension must be at least 3, got {dim}")));
    }
    if window.dim() != dim {
        return Err(Error::Validation(format!(
            "window has dimension {}, expected {dim}",
            window.dim()
        )));
    }
    Ok(())
}

fn sorted_by_distance(coords: &[f64], dim: usize, origin: &[f64]) -> Vec<usize> {
    let n = coords.len() / dim;
    let keys: Vec<f64> = coords.chunks_exact(dim).map(|z| dist2(z, origin)).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        keys[a]
            .total_cmp(&keys[b])
            .then_with(|| lex_cmp(&coords[a * dim..][..dim], &coords[b * dim..][..dim]))
    });
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p(c: &[f64]) -> Point {
        Point::new(c.to_vec()).unwrap()
    }

    #[test]
    fn kappa_closed_forms() {
        assert_relative_eq!(kappa(1).unwrap(), 2.0, max_relative = 1e-15);
        assert_relative_eq!(kappa(2).unwrap(), PI, max_relative = 1e-15);
        assert_relative_eq!(kappa(3).unwrap(), 4.0 * PI / 3.0, max_relative = 1e-15);
        assert_relative_eq!(kappa(4).unwrap(), PI * PI / 2.0, max_relative = 1e-15);
        assert_relative_eq!(kappa(5).unwrap(), 8.0 * PI * PI / 15.0, max_relative = 1e-15);
        assert!((kappa(3).unwrap() - 4.188790).abs() < 1e-6);
        assert!((kappa(5).unwrap() - 5.263789).abs() < 1e-6);
        assert!(kappa(0).is_err());
    }

    #[test]
    fn kappa_matches_gamma_function() {
        for d in 1..12 {
            let g = statrs::function::gamma::gamma(d as f64 / 2.0 + 1.0);
            assert_relative_eq!(kappa(d).unwrap(), PI.powf(d as f64 / 2.0) / g, max_relative = 1e-13);
        }
    }

    #[test]
    fn annulus_membership_is_half_open() {
        let a = Region::annulus(Point::origin(3), 1.0, 2.0).unwrap();
        assert!(!a.contains(&[1.0, 0.0, 0.0]));
        assert!(a.contains(&[2.0, 0.0, 0.0]));
        assert!(a.contains(&[1.5, 0.0, 0.0]));
        assert!(!a.contains(&[0.5, 0.0, 0.0]));
    }

    #[test]
    fn invalid_regions_rejected() {
        assert!(Region::ball(Point::origin(3), 0.0).is_err());
        assert!(Region::annulus(Point::origin(3), 2.0, 1.0).is_err());
        assert!(Region::cube(Point::origin(3), -1.0).is_err());
    }

    #[test]
    fn explicit_configs() {
        let w = Region::ball(Point::origin(3), 2.0).unwrap();
        let c = StarConfig::from_explicit(3, &[p(&[1.0, 0.0, 0.0])], w).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.order_from_origin(), &[0]);

        let w = Region::ball(Point::origin(3), 3.0).unwrap();
        let c = StarConfig::from_explicit(3, &[p(&[2.0, 0.0, 0.0]), p(&[1.0, 0.0, 0.0])], w).unwrap();
        assert_eq!(c.order_from_origin(), &[1, 0]);

        let w = Region::ball(Point::origin(3), 2.0).unwrap();
        let dup = StarConfig::from_explicit(3, &[p(&[1.0, 0.0, 0.0]), p(&[1.0, 0.0, 0.0])], w.clone());
        assert!(matches!(dup, Err(Error::Validation(_))));
        let outside = StarConfig::from_explicit(3, &[p(&[5.0, 0.0, 0.0])], w);
        assert!(matches!(outside, Err(Error::Validation(_))));
    }

    #[test]
    fn dimension_two_rejected() {
        let w = Region::ball(Point::origin(2), 2.0).unwrap();
        assert!(StarConfig::sample_poisson(2, w, 1.0, 1).is_err());
    }

    #[test]
    fn ordering_from_arbitrary_origin() {
        let w = Region::ball(Point::origin(3), 5.0).unwrap();
        let c = StarConfig::from_explicit(3, &[p(&[1.0, 0.0, 0.0]), p(&[-3.0, 0.0, 0.0])], w).unwrap();
        assert_eq!(c.order_by_distance(&[0.0, 0.0, 0.0]), vec![0, 1]);
        assert_eq!(c.order_by_distance(&[-2.0, 0.0, 0.0]), vec![1, 0]);

        let w = Region::ball(Point::origin(3), 5.0).unwrap();
        let c = StarConfig::from_explicit(3, &[p(&[1.0, 0.0, 0.0]), p(&[-1.0, 0.0, 0.0])], w).unwrap();
        assert_eq!(c.order_by_distance(&[0.0, 0.0, 0.0]), vec![1, 0]);
    }

    #[test]
    fn infinite_window_rejected() {
        let w = Region::complement_of_ball(Point::origin(3), 1.0).unwrap();
        assert!(matches!(
            StarConfig::sample_poisson(3, w, 1.0, 1),
            Err(Error::UnsupportedRegion(_))
        ));
    }

    #[test]
    fn sampling_is_deterministic() {
        let w = Region::ball(Point::origin(3), 4.0).unwrap();
        let a = StarConfig::sample_poisson(3, w.clone(), 1.0, 11).unwrap();
        let b = StarConfig::sample_poisson(3, w.clone(), 1.0, 11).unwrap();
        let c = StarConfig::sample_poisson(3, w, 1.0, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.coords(), c.coords());
        assert!(a.stars().all(|z| a.window().contains(z)));
    }

    #[test]
    fn tiny_window_is_usually_empty() {
        let w = Region::ball(Point::origin(3), 1e-4).unwrap();
        let empty = (0..200)
            .filter(|&s| StarConfig::sample_poisson(3, w.clone(), 1.0, s).unwrap().is_empty())
            .count();
        assert_eq!(empty, 200);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let w = Region::cube(p(&[0.25, -1.0, 3.0]), 2.5).unwrap();
        let a = StarConfig::sample_poisson(3, w, 2.0, 99).unwrap();
        let back = StarConfig::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a.len(), back.len());
        for (x, y) in a.coords().iter().zip(back.coords()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(a, back);
    }

    #[test]
    fn ball_in_box_hit_fraction() {
        // Fraction of Box(0,1) inside Ball(0,1) is kappa_d / 2^d.
        let d = 3;
        let cube = Region::cube(Point::origin(d), 1.0).unwrap();
        let ball = Region::ball(Point::origin(d), 1.0).unwrap();
        let mut rng = rng::stream(5, "hit", 0);
        let n = 1_000_000;
        let mut x = vec![0.0; d];
        let mut hits = 0usize;
        for _ in 0..n {
            cube.sample_uniform(&mut rng, &mut x).unwrap();
            hits += usize::from(ball.contains(&x));
        }
        let frac = hits as f64 / n as f64;
        let want = kappa(d).unwrap() / 8.0;
        let se = (want * (1.0 - want) / n as f64).sqrt();
        assert!((frac - want).abs() < 3.0 * se, "{frac} vs {want}");
    }

    proptest! {
        #[test]
        fn order_sorts_distances(
            pts in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..40),
            origin in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let mut pts = pts;
            pts.sort_by(|a, b| lex_cmp(a, b));
            pts.dedup();
            let points: Vec<Point> = pts.iter().map(|c| p(c)).collect();
            let w = Region::cube(Point::origin(3), 5.0).unwrap();
            let c = StarConfig::from_explicit(3, &points, w).unwrap();
            let ord = c.order_by_distance(&origin);
            let mut seen = vec![false; c.len()];
            for &i in &ord { seen[i] = true; }
            prop_assert!(seen.iter().all(|&s| s));
            for w in ord.windows(2) {
                prop_assert!(dist2(c.star(w[0]), &origin) <= dist2(c.star(w[1]), &origin));
            }
        }
    }
}
