//! Rays, pinhole cameras and the axis-aligned rendering cube.
//!
//! Conventions: right-handed world frame; the camera looks down its local +z
//! axis with +x to the right and +y down the image. Pixel `(i, j)` covers
//! `[i, i+1) x [j, j+1)` and its center sits at `(i + 0.5, j + 0.5)`.

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::DomainError;

pub type Vec3 = Vector3<f64>;

const UNIT_TOLERANCE: f64 = 1e-9;

/// A ray `p(t) = origin + t * dir` with unit-length `dir`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing `dir`.
    pub fn new(origin: Vec3, dir: Vec3) -> Result<Self, DomainError> {
        let norm = dir.norm();
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(DomainError::new("ray origin must be finite"));
        }
        if !norm.is_finite() || norm < 1e-12 {
            return Err(DomainError::new("ray direction must be finite and nonzero"));
        }
        Ok(Self { origin, dir: dir / norm })
    }

    /// Checked evaluation of the ray at `t >= 0`.
    pub fn point_at(&self, t: f64) -> Result<Vec3, DomainError> {
        if !(t >= 0.0) {
            return Err(DomainError::new(format!("ray parameter must be nonnegative, got {t}")));
        }
        Ok(self.at(t))
    }

    /// Unchecked evaluation for hot loops; callers guarantee `t` is valid.
    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }

    pub fn is_normalized(&self) -> bool {
        (self.dir.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }
}

/// Continuous image-plane coordinates in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Center of the integer pixel `(i, j)`.
    pub fn center(i: usize, j: usize) -> Self {
        Self { u: i as f64 + 0.5, v: j as f64 + 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center.
    pub fn from_fov(width: usize, height: usize, horizontal_fov_deg: f64) -> Self {
        let fx = 0.5 * width as f64 / (0.5 * horizontal_fov_deg.to_radians()).tan();
        Self { fx, fy: fx, cx: 0.5 * width as f64, cy: 0.5 * height as f64, width, height }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinholeCamera {
    /// World-from-camera rigid transform.
    pub pose: Isometry3<f64>,
    pub intrinsics: Intrinsics,
}

impl PinholeCamera {
    pub fn new(pose: Isometry3<f64>, intrinsics: Intrinsics) -> Result<Self, DomainError> {
        let k = &intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(DomainError::new("focal lengths must be positive"));
        }
        if k.width == 0 || k.height == 0 {
            return Err(DomainError::new("image resolution must be nonzero"));
        }
        if !(k.cx >= 0.0 && k.cx < k.width as f64 && k.cy >= 0.0 && k.cy < k.height as f64) {
            return Err(DomainError::new("principal point must lie inside the image"));
        }
        Ok(Self { pose, intrinsics })
    }

    /// Camera at `eye` looking at `target`; `up` is the world direction that
    /// should appear toward the top of the image.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, intrinsics: Intrinsics) -> Result<Self, DomainError> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(DomainError::new("camera target coincides with eye"));
        }
        let z = forward.normalize();
        let x = (-up).cross(&z);
        if x.norm() < 1e-9 {
            return Err(DomainError::new("camera up vector is parallel to the view direction"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rot = nalgebra::Rotation3::from_basis_unchecked(&[x, y, z]);
        let pose = Isometry3::from_parts(Translation3::from(eye), UnitQuaternion::from_rotation_matrix(&rot));
        Self::new(pose, intrinsics)
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn center(&self) -> Vec3 {
        self.pose.translation.vector
    }

    /// Ray through the continuous pixel coordinate `px`.
    pub fn generate_ray(&self, px: PixelCoord) -> Result<Ray, DomainError> {
        let k = &self.intrinsics;
        if !(px.u >= 0.0 && px.u < k.width as f64 && px.v >= 0.0 && px.v < k.height as f64) {
            return Err(DomainError::new(format!("pixel ({}, {}) outside {}x{} image", px.u, px.v, k.width, k.height)));
        }
        let local = Vec3::new((px.u - k.cx) / k.fx, (px.v - k.cy) / k.fy, 1.0);
        let dir = self.pose.rotation * local;
        Ray::new(self.center(), dir)
    }

    /// Ray through the center of integer pixel `(i, j)`.
    pub fn pixel_ray(&self, i: usize, j: usize) -> Result<Ray, DomainError> {
        self.generate_ray(PixelCoord::center(i, j))
    }

    /// Projects a world point to continuous pixel coordinates; `None` behind
    /// the camera.
    pub fn project(&self, p: &Vec3) -> Option<PixelCoord> {
        let local = self.pose.inverse_transform_point(&Point3::from(*p));
        if local.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some(PixelCoord { u: k.fx * local.x / local.z + k.cx, v: k.fy * local.y / local.z + k.cy })
    }
}

/// Axis-aligned rendering cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl GridBounds {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self, DomainError> {
        if !(0..3).all(|i| min[i].is_finite() && max[i].is_finite() && min[i] < max[i]) {
            return Err(DomainError::new("grid bounds need finite min < max on every axis"));
        }
        Ok(Self { min, max })
    }

    pub fn cube(center: Vec3, half: f64) -> Result<Self, DomainError> {
        Self::new(center - Vec3::repeat(half), center + Vec3::repeat(half))
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    /// Closed containment test.
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Slab test. Returns `(t_enter, t_exit)` with `t_enter` clamped to zero for
/// origins inside the cube, or `None` when the forward ray misses it.
pub fn clip_to_bounds(ray: &Ray, bounds: &GridBounds) -> Option<(f64, f64)> {
    let mut t0 = 0.0_f64;
    let mut t1 = f64::INFINITY;
    for axis in 0..3 {
        let o = ray.origin[axis];
        let d = ray.dir[axis];
        if d == 0.0 {
            if o < bounds.min[axis] || o > bounds.max[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let mut near = (bounds.min[axis] - o) * inv;
        let mut far = (bounds.max[axis] - o) * inv;
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
    }
    (t1 > t0).then_some((t0, t1))
}
