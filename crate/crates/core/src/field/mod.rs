//! Gravitational field, Jacobian and partial potentials of a star configuration.
//!
//! Each star `z` pulls `x` with `g(z - x) = (z - x) / |z - x|^d`. A
//! [`FieldModel`] sums the stars of a truncation ball `B(c, L)` in order of
//! increasing distance from the origin and optionally adds `kappa_d (x - c)`,
//! which cancels the mean pull of the ball. Exact summation is the default;
//! [`FarFieldOptions`] switches force evaluation to a hierarchical
//! interpolation scheme for long flow integrations.

mod centering;
mod farfield;

use std::sync::OnceLock;

use nalgebra::DMatrix;

pub use centering::{mean_field, mean_potential, QUADRATURE_TOL};
pub use farfield::FarFieldOptions;

use crate::error::{Error, Result};
use crate::geometry::{dist2, kappa, Point, Region, StarConfig};
use crate::index::CellIndex;
use farfield::FarField;

pub type ForceValue = Vec<f64>;
pub type PotentialValue = f64;
pub type JacobianValue = DMatrix<f64>;

/// Distance below which an evaluation point is taken to coincide with a star.
pub const SINGULAR_DISTANCE: f64 = 1e-12;

/// Nearest stars seen while evaluating the force at a point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Proximity {
    /// Config index of the nearest star, `usize::MAX` if none.
    pub nearest: usize,
    pub d1: f64,
    /// Distance to the second-nearest star, or a lower bound for it.
    pub d2: f64,
}

impl Proximity {
    fn empty() -> Self {
        Self { nearest: usize::MAX, d1: f64::INFINITY, d2: f64::INFINITY }
    }

    #[inline]
    fn offer(&mut self, id: usize, r2: f64) {
        if r2 < self.d1 {
            self.d2 = self.d1;
            self.d1 = r2;
            self.nearest = id;
        } else if r2 < self.d2 {
            self.d2 = r2;
        }
    }

    fn finish(mut self) -> Self {
        self.d1 = self.d1.sqrt();
        self.d2 = self.d2.sqrt();
        self
    }
}

/// `out += g(z - x)`, returning `|z - x|^2`.
#[inline(always)]
pub(crate) fn add_pull(d: usize, z: &[f64], x: &[f64], out: &mut [f64]) -> f64 {
    let mut r2 = 0.0;
    for k in 0..d {
        let t = z[k] - x[k];
        r2 += t * t;
    }
    let s = inv_pow(r2, d);
    for k in 0..d {
        out[k] += (z[k] - x[k]) * s;
    }
    r2
}

/// `r2^{-d/2}`.
#[inline(always)]
pub(crate) fn inv_pow(r2: f64, d: usize) -> f64 {
    match d {
        3 => 1.0 / (r2 * r2.sqrt()),
        4 => 1.0 / (r2 * r2),
        5 => 1.0 / (r2 * r2 * r2.sqrt()),
        6 => 1.0 / (r2 * r2 * r2),
        _ => r2.powf(-(d as f64) / 2.0),
    }
}

pub struct FieldModel {
    config: StarConfig,
    truncation: Region,
    center: Vec<f64>,
    radius: f64,
    compensate: bool,
    kappa: f64,
    /// Config indices of the stars in the truncation ball, summation order.
    active: Vec<usize>,
    active_coords: Vec<f64>,
    /// Position of each config star in `order_from_origin`.
    rank: Vec<usize>,
    index: OnceLock<CellIndex>,
    far: Option<FarField>,
}

impl std::fmt::Debug for FieldModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldModel")
            .field("dim", &self.config.dim())
            .field("stars", &self.config.len())
            .field("truncation", &self.truncation)
            .field("compensate", &self.compensate)
            .field("active", &self.active.len())
            .field("far_field", &self.far.is_some())
            .finish()
    }
}

impl FieldModel {
    /// Model summing the stars of `truncation`, which must be a ball inside
    /// the config window.
    pub fn new(config: StarConfig, truncation: Region, compensate: bool) -> Result<Self> {
        let Region::Ball { center, radius } = &truncation else {
            return Err(Error::UnsupportedRegion("truncation must be a ball".into()));
        };
        if center.dim() != config.dim() {
            return Err(Error::Validation("truncation dimension differs from config".into()));
        }
        truncation.validate()?;
        if !config.window().encloses(&truncation) {
            return Err(Error::Validation("truncation ball must lie inside the window".into()));
        }
        let d = config.dim();
        let center = center.coords().to_vec();
        let radius = *radius;
        let active: Vec<usize> = config
            .order_from_origin()
            .iter()
            .copied()
            .filter(|&i| truncation.contains(config.star(i)))
            .collect();
        let mut active_coords = Vec::with_capacity(active.len() * d);
        for &i in &active {
            active_coords.extend_from_slice(config.star(i));
        }
        let mut rank = vec![0; config.len()];
        for (r, &i) in config.order_from_origin().iter().enumerate() {
            rank[i] = r;
        }
        Ok(Self {
            kappa: kappa(d)?,
            config,
            truncation,
            center,
            radius,
            compensate,
            active,
            active_coords,
            rank,
            index: OnceLock::new(),
            far: None,
        })
    }

    /// Compensated model truncated to the whole window, which must be a ball.
    pub fn over_window(config: StarConfig) -> Result<Self> {
        let window = config.window().clone();
        Self::new(config, window, true)
    }

    /// Switches force evaluation inside the truncation ball to the
    /// hierarchical far-field scheme.
    pub fn with_far_field(mut self, opts: FarFieldOptions) -> Result<Self> {
        self.far = Some(FarField::build(
            self.config.dim(),
            &self.active,
            &self.active_coords,
            &self.center,
            self.radius,
            self.config.intensity(),
            &opts,
        )?);
        Ok(self)
    }

    pub fn config(&self) -> &StarConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    pub fn truncation(&self) -> &Region {
        &self.truncation
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn compensated(&self) -> bool {
        self.compensate
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn uses_far_field(&self) -> bool {
        self.far.is_some()
    }

    /// Config indices of the summed stars in summation order.
    pub fn active_stars(&self) -> &[usize] {
        &self.active
    }

    /// Lazily built bucket index over all config stars.
    pub fn spatial_index(&self) -> &CellIndex {
        self.index.get_or_init(|| build_spatial_index(&self.config))
    }

    /// Config indices of stars in `region`, in summation order.
    pub fn stars_in(&self, region: &Region) -> Vec<usize> {
        let mut ids = self.spatial_index().query(region);
        ids.sort_unstable_by_key(|&i| self.rank[i]);
        ids
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Validation(format!(
                "point has dimension {}, model has {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("point has non-finite coordinates".into()));
        }
        Ok(())
    }

    /// Whether `x` is a valid force evaluation point (ignoring star hits).
    pub fn in_domain(&self, x: &[f64]) -> bool {
        !self.compensate || dist2(x, &self.center) <= self.radius * self.radius
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        self.check_dim(x)?;
        if !self.in_domain(x) {
            return Err(Error::Domain(format!(
                "point {x:?} lies outside the truncation ball of radius {}",
                self.radius
            )));
        }
        Ok(())
    }

    fn compensation(&self, x: &[f64], out: &mut [f64]) {
        if self.compensate {
            for k in 0..self.dim() {
                out[k] += self.kappa * (x[k] - self.center[k]);
            }
        }
    }

    /// Force at `x` by exact summation, writing into `out`.
    fn exact_into(&self, x: &[f64], out: &mut [f64]) -> Result<Proximity> {
        let d = self.dim();
        out.fill(0.0);
        let mut prox = Proximity::empty();
        for (pos, z) in self.active_coords.chunks_exact(d).enumerate() {
            let r2 = add_pull(d, z, x, out);
            prox.offer(self.active[pos], r2);
        }
        let prox = prox.finish();
        if prox.d1 < SINGULAR_DISTANCE {
            return Err(Error::Singularity { star: prox.nearest, distance: prox.d1 });
        }
        self.compensation(x, out);
        Ok(prox)
    }

    /// Force and nearest-star information, using the far field when enabled.
    pub(crate) fn probe(&self, x: &[f64], out: &mut [f64]) -> Result<Proximity> {
        self.check_domain(x)?;
        if let Some(far) = &self.far {
            if let Some(prox) = far.eval(x, out)? {
                self.compensation(x, out);
                return Ok(prox);
            }
        }
        self.exact_into(x, out)
    }

    /// Compensated truncated force `F(x | B(c, L))`.
    pub fn force(&self, x: &[f64]) -> Result<ForceValue> {
        let mut out = vec![0.0; self.dim()];
        self.probe(x, &mut out)?;
        Ok(out)
    }

    /// Force by exact summation regardless of the far-field setting.
    pub fn force_exact(&self, x: &[f64]) -> Result<ForceValue> {
        self.check_domain(x)?;
        let mut out = vec![0.0; self.dim()];
        self.exact_into(x, &mut out)?;
        Ok(out)
    }

    pub fn force_at(&self, x: &Point) -> Result<ForceValue> {
        self.force(x.coords())
    }

    /// Checks the cases where the partial quantities have closed forms:
    /// an annulus around `y` with `x` in its hole, or a ball around `y`
    /// containing `x`.
    fn check_partial(&self, x: &[f64], a: &Region) -> Result<()> {
        self.check_dim(x)?;
        if a.dim() != self.dim() {
            return Err(Error::Validation("region dimension differs from model".into()));
        }
        let r = dist2(x, a.center().coords()).sqrt();
        let ok = match a {
            Region::Annulus { inner, outer, .. } => r <= if *inner > 0.0 { *inner } else { *outer },
            Region::Ball { radius, .. } => r <= *radius,
            _ => false,
        };
        if !ok {
            return Err(Error::Domain(format!(
                "partial quantities need x inside the hole of an annulus or inside a ball; got {a:?} at distance {r}"
            )));
        }
        self.check_region(a)
    }

    fn check_region(&self, a: &Region) -> Result<()> {
        if !a.is_bounded() {
            return Err(Error::UnsupportedRegion("region must be bounded".into()));
        }
        if !self.config.window().encloses(a) {
            return Err(Error::Domain("region extends beyond the config window".into()));
        }
        Ok(())
    }

    fn star_sum(&self, x: &[f64], ids: &[usize], mut f: impl FnMut(&[f64], f64)) -> Result<()> {
        for &i in ids {
            let z = self.config.star(i);
            let r2 = dist2(z, x);
            if r2.sqrt() < SINGULAR_DISTANCE {
                return Err(Error::Singularity { star: i, distance: r2.sqrt() });
            }
            f(z, r2);
        }
        Ok(())
    }

    /// Partial force `F(x | A)`: the pull of the stars in `A` minus the pull
    /// of a unit density on `A`.
    pub fn force_partial(&self, x: &[f64], a: &Region) -> Result<ForceValue> {
        self.check_partial(x, a)?;
        let d = self.dim();
        let ids = self.stars_in(a);
        let mut out = vec![0.0; d];
        self.star_sum(x, &ids, |z, r2| {
            let s = inv_pow(r2, d);
            for k in 0..d {
                out[k] += (z[k] - x[k]) * s;
            }
        })?;
        let mean = mean_field(a, x)?;
        for k in 0..d {
            out[k] -= mean[k];
        }
        Ok(out)
    }

    /// Partial potential `U(x | A) = (1/(d-2)) [sum_{z in A} -|z-x|^{2-d} + ∫_A |z-x|^{2-d} dz]`.
    pub fn potential_partial(&self, x: &[f64], a: &Region) -> Result<PotentialValue> {
        self.check_partial(x, a)?;
        let d = self.dim();
        let e = 2.0 - d as f64;
        let ids = self.stars_in(a);
        let mut sum = 0.0;
        self.star_sum(x, &ids, |_, r2| sum -= r2.powf(e / 2.0))?;
        Ok((sum + mean_potential(a, x)?) / (d as f64 - 2.0))
    }

    /// Potential difference `U^diff(x, y | A)` for a bounded region `A`.
    pub fn potential_diff(&self, x: &[f64], y: &[f64], a: &Region) -> Result<PotentialValue> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        self.check_region(a)?;
        if x == y {
            return Ok(0.0);
        }
        let d = self.dim();
        let e = (2.0 - d as f64) / 2.0;
        let ids = self.stars_in(a);
        let mut sum = 0.0;
        self.star_sum(x, &ids, |_, r2| sum += r2.powf(e))?;
        self.star_sum(y, &ids, |_, r2| sum -= r2.powf(e))?;
        let centering = mean_potential(a, x)? - mean_potential(a, y)?;
        Ok((sum - centering) / (d as f64 - 2.0))
    }

    /// Jacobian `D_x F(x | B(c, L))` by exact summation.
    pub fn jacobian(&self, x: &[f64]) -> Result<JacobianValue> {
        self.check_domain(x)?;
        let d = self.dim();
        let df = d as f64;
        let mut m = DMatrix::<f64>::zeros(d, d);
        for (pos, z) in self.active_coords.chunks_exact(d).enumerate() {
            let r2 = dist2(z, x);
            if r2.sqrt() < SINGULAR_DISTANCE {
                return Err(Error::Singularity { star: self.active[pos], distance: r2.sqrt() });
            }
            // D_x g(z - x) = (d u u^T - I) / r^d
            let s = inv_pow(r2, d);
            for i in 0..d {
                for j in 0..d {
                    let uu = (z[i] - x[i]) * (z[j] - x[j]) / r2;
                    m[(i, j)] += s * (df * uu - if i == j { 1.0 } else { 0.0 });
                }
            }
        }
        if self.compensate {
            for i in 0..d {
                m[(i, i)] += self.kappa;
            }
        }
        Ok(m)
    }
}

/// `∫_{B(c, L)} (z - x) / |z - x|^d dz = -kappa_d (x - c)` for `|x - c| < L`.
pub fn ball_field_integral(x: &[f64], c: &[f64], radius: f64) -> Result<Vec<f64>> {
    if x.len() != c.len() {
        return Err(Error::Validation("dimension mismatch".into()));
    }
    if !(radius > 0.0) || dist2(x, c) >= radius * radius {
        return Err(Error::Domain("evaluation point must lie strictly inside the ball".into()));
    }
    let k = kappa(x.len())?;
    Ok(x.iter().zip(c).map(|(a, b)| -k * (a - b)).collect())
}

/// Bucket index over the stars of `config`.
pub fn build_spatial_index(config: &StarConfig) -> CellIndex {
    CellIndex::build(config.dim(), config.coords())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model(points: &[[f64; 3]], window: f64, compensate: bool) -> FieldModel {
        let pts: Vec<Point> = points.iter().map(|p| Point::new(p.to_vec()).unwrap()).collect();
        let w = Region::ball(Point::origin(3), window).unwrap();
        let cfg = StarConfig::from_explicit(3, &pts, w.clone()).unwrap();
        FieldModel::new(cfg, w, compensate).unwrap()
    }

    #[test]
    fn single_star_at_origin() {
        let m = model(&[[1.0, 0.0, 0.0]], 2.0, true);
        assert_eq!(m.force(&[0.0; 3]).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn compensation_only() {
        let m = model(&[], 5.0, true);
        let f = m.force(&[1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(f[0], 4.0 * std::f64::consts::PI / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn singular_and_domain_errors() {
        let m = model(&[[1.0, 0.0, 0.0]], 2.0, true);
        assert!(matches!(m.force(&[1.0, 0.0, 0.0]), Err(Error::Singularity { star: 0, .. })));
        assert!(matches!(m.force(&[3.0, 0.0, 0.0]), Err(Error::Domain(_))));
        let free = model(&[[1.0, 0.0, 0.0]], 2.0, false);
        assert!(free.force(&[3.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn annulus_partial_needs_hole() {
        let m = model(&[[1.0, 0.0, 0.0]], 3.0, true);
        let a = Region::annulus(Point::origin(3), 0.5, 2.0).unwrap();
        assert!(m.force_partial(&[0.0; 3], &a).is_ok());
        assert!(matches!(m.force_partial(&[0.9, 0.0, 0.0], &a), Err(Error::Domain(_))));
        let b = Region::cube(Point::origin(3), 1.0).unwrap();
        assert!(matches!(m.force_partial(&[0.0; 3], &b), Err(Error::Domain(_))));
    }

    #[test]
    fn jacobian_trace_is_compensation() {
        let m = model(&[[1.0, 0.3, 0.0], [-0.5, 0.2, 0.7]], 2.0, true);
        let j = m.jacobian(&[0.1, -0.2, 0.3]).unwrap();
        assert_relative_eq!(j.trace(), 3.0 * m.kappa(), max_relative = 1e-12);
        assert!((&j - j.transpose()).amax() < 1e-12);
    }

    #[test]
    fn ball_integral_domain() {
        assert!(ball_field_integral(&[2.0, 0.0, 0.0], &[0.0; 3], 2.0).is_err());
        assert_eq!(ball_field_integral(&[0.0; 3], &[0.0; 3], 2.0).unwrap(), vec![-0.0; 3]);
    }
}
