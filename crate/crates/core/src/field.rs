//! Analytic signed-distance scenes standing in for a trained surface field.
//!
//! A [`Field`] answers two questions at a point: the signed distance (negative
//! inside) and a view-dependent color. Density is derived from the distance by
//! [`sdf_to_density`], the Laplace-CDF transform used by VolSDF-style models.

use serde::{Deserialize, Serialize};

use crate::error::{DomainError, Error, Result};
use crate::geometry::{GridBounds, Ray, Vec3};

/// Gradient magnitudes below this are treated as undefined normals.
pub const MIN_GRADIENT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub sdf: f64,
    pub color: [f64; 3],
}

/// Scalar field interface consumed by the renderer and samplers.
pub trait Field: Send + Sync {
    fn sdf(&self, p: &Vec3) -> f64;

    /// Signed distance plus the color seen along unit direction `v`.
    fn eval(&self, p: &Vec3, v: &Vec3) -> FieldSample;

    /// Central-difference step used by [`Field::normal`].
    fn fd_step(&self) -> f64 {
        1e-4
    }

    /// Normalized central-difference gradient of [`Field::sdf`].
    fn normal(&self, p: &Vec3) -> Result<Vec3> {
        let h = self.fd_step();
        let mut g = Vec3::zeros();
        for axis in 0..3 {
            let mut e = Vec3::zeros();
            e[axis] = h;
            g[axis] = (self.sdf(&(p + e)) - self.sdf(&(p - e))) / (2.0 * h);
        }
        let magnitude = g.norm();
        if !(magnitude >= MIN_GRADIENT) {
            return Err(Error::DegenerateGradient { magnitude, x: p.x, y: p.y, z: p.z });
        }
        Ok(g / magnitude)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityParams {
    /// Peak density (1/m) reached deep inside surfaces.
    pub alpha_scale: f64,
    /// Laplace scale (m); smaller is sharper.
    pub beta: f64,
}

impl DensityParams {
    pub fn new(alpha_scale: f64, beta: f64) -> Result<Self, DomainError> {
        if !(alpha_scale > 0.0 && beta > 0.0 && alpha_scale.is_finite() && beta.is_finite()) {
            return Err(DomainError::new("density alpha_scale and beta must be positive"));
        }
        Ok(Self { alpha_scale, beta })
    }

    /// `alpha_scale = 1 / beta`.
    pub fn from_beta(beta: f64) -> Result<Self, DomainError> {
        Self::new(1.0 / beta, beta)
    }
}

impl Default for DensityParams {
    fn default() -> Self {
        Self { alpha_scale: 100.0, beta: 0.01 }
    }
}

/// `alpha_scale * Psi_beta(-s)` with `Psi_beta` the zero-mean Laplace CDF.
#[inline]
pub fn sdf_to_density(s: f64, params: &DensityParams) -> f64 {
    if s == f64::INFINITY {
        return 0.0;
    }
    let psi = if s >= 0.0 { 0.5 * (-s / params.beta).exp() } else { 1.0 - 0.5 * (s / params.beta).exp() };
    params.alpha_scale * psi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere {
        center: Vec3,
        radius: f64,
    },
    Box {
        center: Vec3,
        half_extents: Vec3,
    },
    /// `{ p : normal . p = offset }`, positive on the `normal` side.
    Plane {
        normal: Vec3,
        offset: f64,
    },
}

impl Shape {
    pub fn validate(&self) -> Result<(), DomainError> {
        match self {
            Shape::Sphere { radius, .. } if !(*radius > 0.0) => Err(DomainError::new("sphere radius must be positive")),
            Shape::Box { half_extents, .. } if !half_extents.iter().all(|h| *h > 0.0) => {
                Err(DomainError::new("box half extents must be positive"))
            }
            Shape::Plane { normal, .. } if (normal.norm() - 1.0).abs() > 1e-9 => {
                Err(DomainError::new("plane normal must be unit length"))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match self {
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Box { center, half_extents } => {
                let q = (p - center).abs() - half_extents;
                let outside = q.map(|c| c.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
            Shape::Plane { normal, offset } => normal.dot(p) - offset,
        }
    }

    /// Analytic outward gradient direction; may be zero at medial points.
    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        match self {
            Shape::Sphere { center, .. } => {
                let d = p - center;
                let n = d.norm();
                if n > 0.0 {
                    d / n
                } else {
                    Vec3::zeros()
                }
            }
            Shape::Box { center, half_extents } => {
                let local = p - center;
                let q = local.abs() - half_extents;
                let sign = local.map(|c| if c < 0.0 { -1.0 } else { 1.0 });
                if q.iter().any(|c| *c > 0.0) {
                    let out = q.map(|c| c.max(0.0));
                    out.component_mul(&sign).normalize()
                } else {
                    // inside: the face with the largest (least negative) q
                    let mut axis = 0;
                    for k in 1..3 {
                        if q[k] > q[axis] {
                            axis = k;
                        }
                    }
                    let mut g = Vec3::zeros();
                    g[axis] = sign[axis];
                    g
                }
            }
            Shape::Plane { normal, .. } => *normal,
        }
    }

    /// Bounding box of the shape's support; `None` for unbounded shapes.
    pub fn aabb(&self) -> Option<(Vec3, Vec3)> {
        match self {
            Shape::Sphere { center, radius } => Some((center - Vec3::repeat(*radius), center + Vec3::repeat(*radius))),
            Shape::Box { center, half_extents } => Some((center - half_extents, center + half_extents)),
            Shape::Plane { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub color: [f64; 3],
}

/// Trilinear value noise added to the scene distance to emulate the noisy
/// geometry of a weakly supervised model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub amplitude: f64,
    pub cell: f64,
    pub seed: u64,
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.amplitude >= 0.0 && self.cell > 0.0) {
            return Err(DomainError::new("noise amplitude must be >= 0 and cell > 0"));
        }
        Ok(())
    }

    fn lattice(&self, i: i64, j: i64, k: i64) -> f64 {
        let mut h = self.seed ^ 0x9E37_79B9_7F4A_7C15;
        for c in [i, j, k] {
            h = splitmix64(h ^ (c as u64));
        }
        // top 53 bits to [-1, 1)
        (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }

    /// Noise value at `p`, bounded by `amplitude`.
    pub fn value(&self, p: &Vec3) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let g = p / self.cell;
        let base = g.map(f64::floor);
        let f = g - base;
        let (i, j, k) = (base.x as i64, base.y as i64, base.z as i64);
        let mut acc = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - f.x } else { f.x };
                    let wy = if dy == 0 { 1.0 - f.y } else { f.y };
                    let wz = if dz == 0 { 1.0 - f.z } else { f.z };
                    acc += wx * wy * wz * self.lattice(i + dx, j + dy, k + dz);
                }
            }
        }
        self.amplitude * acc
    }

    /// Upper bound on the noise gradient magnitude.
    pub fn lipschitz(&self) -> f64 {
        2.0 * self.amplitude / self.cell * 3f64.sqrt()
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Min-union of primitives, optionally perturbed by value noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    primitives: Vec<Primitive>,
    noise: Option<NoiseParams>,
    fd_step: f64,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>, noise: Option<NoiseParams>) -> Result<Self, DomainError> {
        for p in &primitives {
            p.shape.validate()?;
        }
        if let Some(n) = &noise {
            n.validate()?;
        }
        let fd_step = 1e-4 * Self::support_diagonal(&primitives).unwrap_or(1.0);
        Ok(Self { primitives, noise, fd_step })
    }

    /// A scene with no primitives: distance `+inf`, density zero everywhere.
    pub fn empty() -> Self {
        Self { primitives: Vec::new(), noise: None, fd_step: 1e-4 }
    }

    pub fn with_fd_step(mut self, h: f64) -> Result<Self, DomainError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(DomainError::new("finite-difference step must be positive"));
        }
        self.fd_step = h;
        Ok(self)
    }

    pub fn with_noise(mut self, noise: Option<NoiseParams>) -> Result<Self, DomainError> {
        if let Some(n) = &noise {
            n.validate()?;
        }
        self.noise = noise;
        Ok(self)
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn noise(&self) -> Option<&NoiseParams> {
        self.noise.as_ref()
    }

    fn support_diagonal(primitives: &[Primitive]) -> Option<f64> {
        let boxes: Vec<_> = primitives.iter().filter_map(|p| p.shape.aabb()).collect();
        let (first, rest) = boxes.split_first()?;
        let (mut lo, mut hi) = *first;
        for (a, b) in rest {
            lo = lo.inf(a);
            hi = hi.sup(b);
        }
        Some((hi - lo).norm())
    }

    /// True when every bounded primitive lies inside `bounds`.
    pub fn fits_in(&self, bounds: &GridBounds) -> bool {
        self.primitives
            .iter()
            .filter_map(|p| p.shape.aabb())
            .all(|(lo, hi)| bounds.contains(&lo) && bounds.contains(&hi))
    }

    /// Noise-free distance and index of the nearest primitive (lowest index
    /// wins ties).
    #[inline]
    fn nearest(&self, p: &Vec3) -> (f64, Option<usize>) {
        let mut best = f64::INFINITY;
        let mut index = None;
        for (i, prim) in self.primitives.iter().enumerate() {
            let d = prim.shape.sdf(p);
            if d < best {
                best = d;
                index = Some(i);
            }
        }
        (best, index)
    }

    /// Largest slope of the scene distance; `1` without noise.
    pub fn lipschitz(&self) -> f64 {
        1.0 + self.noise.map_or(0.0, |n| n.lipschitz())
    }

    /// First zero crossing of the scene distance along `ray` in
    /// `[t_near, t_far]`, by conservative marching and bisection.
    pub fn first_hit(&self, ray: &Ray, t_near: f64, t_far: f64) -> Option<f64> {
        let lip = self.lipschitz();
        let min_step = 1e-6;
        let mut t = t_near;
        let mut prev_t = t;
        let mut prev_s = self.sdf(&ray.at(t));
        if prev_s <= 0.0 {
            return Some(t);
        }
        while t < t_far {
            let step = (prev_s / lip).max(min_step);
            t = (t + step).min(t_far);
            let s = self.sdf(&ray.at(t));
            if s <= 0.0 {
                let (mut lo, mut hi) = (prev_t, t);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if self.sdf(&ray.at(mid)) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
            if t >= t_far {
                break;
            }
            prev_t = t;
            prev_s = s;
        }
        None
    }
}

impl Field for Scene {
    #[inline]
    fn sdf(&self, p: &Vec3) -> f64 {
        let (d, _) = self.nearest(p);
        match &self.noise {
            Some(n) if d.is_finite() => d + n.value(p),
            _ => d,
        }
    }

    fn eval(&self, p: &Vec3, v: &Vec3) -> FieldSample {
        let (d, index) = self.nearest(p);
        let sdf = match &self.noise {
            Some(n) if d.is_finite() => d + n.value(p),
            _ => d,
        };
        let color = match index {
            Some(i) => {
                let prim = &self.primitives[i];
                let shade = (-prim.shape.gradient(p).dot(v)).max(0.0);
                prim.color.map(|c| (c * shade).clamp(0.0, 1.0))
            }
            None => [0.0; 3],
        };
        FieldSample { sdf, color }
    }

    fn fd_step(&self) -> f64 {
        self.fd_step
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere(center: Vec3, radius: f64, color: [f64; 3]) -> Primitive {
        Primitive { shape: Shape::Sphere { center, radius }, color }
    }

    fn unit_sphere() -> Scene {
        Scene::new(vec![sphere(Vec3::zeros(), 1.0, [0.8, 0.4, 0.2])], None).unwrap()
    }

    #[test]
    fn scene_sdf_examples() {
        let s = unit_sphere();
        assert_eq!(s.sdf(&Vec3::new(2.0, 0.0, 0.0)), 1.0);
        assert_eq!(s.sdf(&Vec3::zeros()), -1.0);
        let plane = Primitive { shape: Shape::Plane { normal: Vec3::y(), offset: -2.0 }, color: [1.0; 3] };
        let s = Scene::new(vec![sphere(Vec3::zeros(), 1.0, [1.0; 3]), plane], None).unwrap();
        assert_eq!(s.sdf(&Vec3::zeros()), -1.0);
        assert_eq!(plane.shape.sdf(&Vec3::zeros()), 2.0);
    }

    #[test]
    fn box_sdf_is_exact() {
        let b = Shape::Box { center: Vec3::zeros(), half_extents: Vec3::new(1.0, 2.0, 3.0) };
        assert_eq!(b.sdf(&Vec3::new(2.0, 0.0, 0.0)), 1.0);
        assert_eq!(b.sdf(&Vec3::new(0.0, 0.0, 0.0)), -1.0);
        assert_abs_diff_eq!(b.sdf(&Vec3::new(2.0, 3.0, 0.0)), 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn invalid_primitives_rejected() {
        assert!(Scene::new(vec![sphere(Vec3::zeros(), 0.0, [1.0; 3])], None).is_err());
        let bad_plane =
            Primitive { shape: Shape::Plane { normal: Vec3::new(0.0, 2.0, 0.0), offset: 0.0 }, color: [1.0; 3] };
        assert!(Scene::new(vec![bad_plane], None).is_err());
        let noise = NoiseParams { amplitude: -0.1, cell: 1.0, seed: 0 };
        assert!(Scene::new(vec![], Some(noise)).is_err());
    }

    #[test]
    fn eval_color_is_view_dependent() {
        let s = unit_sphere();
        let p = Vec3::new(1.0, 0.0, 0.0);
        let facing = s.eval(&p, &-Vec3::x());
        assert_abs_diff_eq!(facing.color[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(facing.color[1], 0.4, epsilon = 1e-12);
        let grazing = s.eval(&p, &Vec3::y());
        assert_eq!(grazing.color, [0.0; 3]);
    }

    #[test]
    fn color_tie_goes_to_lower_index() {
        let a = sphere(Vec3::new(-1.0, 0.0, 0.0), 0.5, [1.0, 0.0, 0.0]);
        let b = sphere(Vec3::new(1.0, 0.0, 0.0), 0.5, [0.0, 1.0, 0.0]);
        let s = Scene::new(vec![a, b], None).unwrap();
        // equidistant point, viewed so both spheres' normals face the viewer
        let p = Vec3::new(0.0, 1.0, 0.0);
        let sample = s.eval(&p, &-Vec3::y());
        assert!(sample.color[0] > 0.0);
        assert_eq!(sample.color[1], 0.0);
    }

    #[test]
    fn density_examples() {
        let params = DensityParams::new(2.0, 0.01).unwrap();
        assert_abs_diff_eq!(sdf_to_density(0.0, &params), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sdf_to_density(0.01, &params), 2.0 * 0.5 * (-1f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(sdf_to_density(0.01, &params) / 2.0, 0.18394, epsilon = 1e-5);
        assert_abs_diff_eq!(sdf_to_density(-0.01, &params) / 2.0, 0.81606, epsilon = 1e-5);
        assert_eq!(sdf_to_density(f64::INFINITY, &params), 0.0);
        assert!(DensityParams::new(0.0, 1.0).is_err());
        assert!(DensityParams::new(1.0, -1.0).is_err());
    }

    #[test]
    fn density_monotone_and_continuous() {
        let params = DensityParams::default();
        let eps = 1e-12;
        assert_abs_diff_eq!(sdf_to_density(-eps, &params), sdf_to_density(eps, &params), epsilon = 1e-6);
        let mut prev = f64::INFINITY;
        for k in -2000..=2000 {
            let s = k as f64 * 5e-5;
            let sigma = sdf_to_density(s, &params);
            assert!(sigma <= prev, "not monotone at s={s}");
            assert!(sigma >= 0.0);
            prev = sigma;
        }
    }

    #[test]
    fn normal_examples() {
        let s = unit_sphere();
        assert_abs_diff_eq!(s.normal(&Vec3::new(2.0, 0.0, 0.0)).unwrap(), Vec3::x(), epsilon = 1e-9);
        let plane = Primitive { shape: Shape::Plane { normal: Vec3::y(), offset: 0.3 }, color: [1.0; 3] };
        let s2 = Scene::new(vec![plane], None).unwrap();
        assert_abs_diff_eq!(s2.normal(&Vec3::new(5.0, -1.0, 2.0)).unwrap(), Vec3::y(), epsilon = 1e-9);
        assert!(matches!(s.normal(&Vec3::zeros()), Err(Error::DegenerateGradient { .. })));
    }

    #[test]
    fn normals_match_analytic_away_from_seams() {
        let s = Scene::new(
            vec![
                sphere(Vec3::new(-1.0, 0.0, 0.0), 0.6, [1.0; 3]),
                Primitive {
                    shape: Shape::Box { center: Vec3::new(1.0, 0.0, 0.0), half_extents: Vec3::repeat(0.4) },
                    color: [1.0; 3],
                },
            ],
            None,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 500 {
            let dir = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            let p = Vec3::new(-1.0, 0.0, 0.0) + dir * rng.random_range(0.65..0.9);
            // keep away from the union seam
            if (p - Vec3::new(-1.0, 0.0, 0.0)).norm() - 0.6 > s.primitives()[1].shape.sdf(&p) - 0.2 {
                continue;
            }
            let n = s.normal(&p).unwrap();
            let angle = n.dot(&dir).clamp(-1.0, 1.0).acos();
            assert!(angle < 1e-4, "angle {angle}");
            checked += 1;
        }
        // box face interior
        let n = s.normal(&Vec3::new(1.6, 0.1, -0.05)).unwrap();
        assert!(n.dot(&Vec3::x()).acos() < 1e-4);
    }

    #[test]
    fn sdf_is_one_lipschitz_without_noise() {
        let s = Scene::new(
            vec![
                sphere(Vec3::new(0.3, 0.0, 0.0), 0.5, [1.0; 3]),
                Primitive {
                    shape: Shape::Box { center: Vec3::new(-0.5, 0.2, 0.1), half_extents: Vec3::new(0.3, 0.2, 0.6) },
                    color: [1.0; 3],
                },
                Primitive { shape: Shape::Plane { normal: Vec3::new(0.0, 0.6, 0.8), offset: -1.0 }, color: [1.0; 3] },
            ],
            None,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let p = Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let q = Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            assert!((s.sdf(&p) - s.sdf(&q)).abs() <= (p - q).norm() + 1e-12);
        }
    }

    #[test]
    fn noise_is_bounded_and_continuous() {
        let n = NoiseParams { amplitude: 0.05, cell: 0.2, seed: 42 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5000 {
            let p = Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let v = n.value(&p);
            assert!(v.abs() <= 0.05);
            let q = p + Vec3::from_fn(|_, _| rng.random_range(-1e-3..1e-3));
            assert!((n.value(&q) - v).abs() <= n.lipschitz() * (q - p).norm() + 1e-12);
        }
        let other = NoiseParams { seed: 43, ..n };
        assert_ne!(n.value(&Vec3::new(0.31, 0.2, 0.1)), other.value(&Vec3::new(0.31, 0.2, 0.1)));
    }

    #[test]
    fn first_hit_matches_closed_form() {
        let s = unit_sphere();
        let ray = Ray::new(Vec3::new(0.0, 0.3, -5.0), Vec3::z()).unwrap();
        let expected = 5.0 - (1.0f64 - 0.09).sqrt();
        assert_abs_diff_eq!(s.first_hit(&ray, 0.0, 10.0).unwrap(), expected, epsilon = 1e-9);
        let miss = Ray::new(Vec3::new(0.0, 1.3, -5.0), Vec3::z()).unwrap();
        assert_eq!(s.first_hit(&miss, 0.0, 10.0), None);
        assert_eq!(Scene::empty().first_hit(&ray, 0.0, 10.0), None);
    }
}
