//! Ready-made scenes, camera rigs and depth-map helpers shared by tests,
//! benchmarks and the example configuration.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::Result;
use crate::field::{DensityParams, Field, NoiseParams, Primitive, Scene, Shape};
use crate::geometry::{GridBounds, Intrinsics, PinholeCamera, Vec3};
use crate::image::{DepthMap, Image};
use crate::render::{RayTrace, RenderOptions};
use crate::sampling::{Sampler, SamplerConfig, SamplerKind};

pub const ROOM_HALF_EXTENT: f64 = 2.0;
pub const ROOM_FOV_DEG: f64 = 67.0;
/// Near and far of the configured global range for room views.
pub const ROOM_RANGE: (f64, f64) = (0.05, 6.0);
/// Minimum reference weight sum for a rendered depth to count as valid.
pub const MIN_DEPTH_WEIGHT: f64 = 0.5;

fn solid_box(center: [f64; 3], half: [f64; 3], color: [f64; 3]) -> Primitive {
    Primitive { shape: Shape::Box { center: Vec3::from(center), half_extents: Vec3::from(half) }, color }
}

pub fn room_bounds() -> GridBounds {
    GridBounds::cube(Vec3::zeros(), ROOM_HALF_EXTENT).expect("static bounds")
}

/// Closed room (floor, ceiling, four walls) holding two boxes, a sphere and
/// a 6 cm partition.
pub fn room_primitives() -> Vec<Primitive> {
    let shell = [0.9, 0.9, 0.85];
    vec![
        solid_box([0.0, -1.75, 0.0], [1.9, 0.15, 1.9], [0.55, 0.5, 0.45]),
        solid_box([0.0, 1.75, 0.0], [1.9, 0.15, 1.9], shell),
        solid_box([-1.75, 0.0, 0.0], [0.15, 1.9, 1.9], [0.8, 0.75, 0.6]),
        solid_box([1.75, 0.0, 0.0], [0.15, 1.9, 1.9], [0.6, 0.75, 0.8]),
        solid_box([0.0, 0.0, -1.75], [1.9, 1.9, 0.15], [0.7, 0.8, 0.65]),
        solid_box([0.0, 0.0, 1.75], [1.9, 1.9, 0.15], shell),
        solid_box([-0.7, -1.2, -0.5], [0.4, 0.4, 0.4], [0.85, 0.25, 0.2]),
        solid_box([0.8, -1.0, 0.6], [0.3, 0.6, 0.3], [0.2, 0.45, 0.85]),
        Primitive { shape: Shape::Sphere { center: Vec3::new(0.7, -1.1, -0.6), radius: 0.5 }, color: [0.95, 0.8, 0.2] },
        solid_box([-0.5, -0.9, 0.7], [0.8, 0.7, 0.03], [0.3, 0.8, 0.35]),
    ]
}

pub fn room_scene() -> Scene {
    Scene::new(room_primitives(), None).expect("static scene")
}

/// Low-frequency perturbation of the room distance, about 2 cm in size.
pub fn room_noise() -> NoiseParams {
    NoiseParams { amplitude: 0.02, cell: 0.25, seed: 11 }
}

pub fn noisy_room_scene() -> Scene {
    Scene::new(room_primitives(), Some(room_noise())).expect("static scene")
}

pub const ROOM_TARGET: [f64; 3] = [0.0, -1.1, 0.0];

/// Cameras on horizontal rings around the vertical axis, all looking at
/// `target`; `phase` rotates every ring by that many radians.
pub fn ring_cameras(
    rings: &[(f64, f64)],
    per_ring: usize,
    phase: f64,
    target: Vec3,
    intrinsics: Intrinsics,
) -> Result<Vec<PinholeCamera>> {
    let mut cams = Vec::with_capacity(rings.len() * per_ring);
    for (ring, &(radius, height)) in rings.iter().enumerate() {
        // stagger rings so their views interleave
        let offset = phase + ring as f64 * PI / per_ring as f64;
        for k in 0..per_ring {
            let a = offset + 2.0 * PI * k as f64 / per_ring as f64;
            let eye = Vec3::new(radius * a.cos(), height, radius * a.sin());
            cams.push(PinholeCamera::look_at(eye, target, Vec3::y(), intrinsics)?);
        }
    }
    Ok(cams)
}

const ROOM_RINGS: [(f64, f64); 2] = [(1.3, 0.0), (1.3, 0.7)];

/// 24 training views of the room.
pub fn room_train_cameras(width: usize, height: usize) -> Vec<PinholeCamera> {
    ring_cameras(&ROOM_RINGS, 12, 0.0, Vec3::from(ROOM_TARGET), Intrinsics::from_fov(width, height, ROOM_FOV_DEG))
        .expect("static rig")
}

/// Held-out views between the training azimuths.
pub fn room_test_cameras(width: usize, height: usize, count: usize) -> Vec<PinholeCamera> {
    let step = 2.0 * PI / count.max(1) as f64;
    ring_cameras(
        &[(1.2, 0.35)],
        count,
        0.5 * step + 0.13,
        Vec3::from(ROOM_TARGET),
        Intrinsics::from_fov(width, height, ROOM_FOV_DEG),
    )
    .expect("static rig")
}

pub fn sphere_bounds() -> GridBounds {
    GridBounds::cube(Vec3::zeros(), 1.0).expect("static bounds")
}

/// Sphere of radius 0.5 at the origin.
pub fn sphere_scene() -> Scene {
    let p = Primitive { shape: Shape::Sphere { center: Vec3::zeros(), radius: 0.5 }, color: [0.8, 0.5, 0.3] };
    Scene::new(vec![p], None).expect("static scene")
}

/// `n` views on a Fibonacci sphere of `radius`, looking at the origin.
pub fn sphere_cameras(n: usize, radius: f64, width: usize, height: usize, fov_deg: f64) -> Vec<PinholeCamera> {
    let golden = PI * (3.0 - 5f64.sqrt());
    let k = Intrinsics::from_fov(width, height, fov_deg);
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let a = golden * i as f64;
            let eye = radius * Vec3::new(r * a.cos(), y, r * a.sin());
            // avoid a degenerate up vector at the poles
            let up = if y.abs() > 0.99 { Vec3::x() } else { Vec3::y() };
            PinholeCamera::look_at(eye, Vec3::zeros(), up, k).expect("static rig")
        })
        .collect()
}

/// Exact first-hit distances through pixel centers; `None` where the ray
/// finds no surface in `range`.
pub fn analytic_depth_map(scene: &Scene, camera: &PinholeCamera, range: (f64, f64)) -> DepthMap {
    Image::from_fn(camera.width(), camera.height(), |x, y| {
        let ray = camera.pixel_ray(x, y).ok()?;
        scene.first_hit(&ray, range.0, range.1)
    })
}

/// Which per-ray depth a rendered depth map reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthEstimator {
    /// Weight-normalized mean of the sample positions.
    Mean,
    /// First sample at which the accumulated weight reaches half the total.
    Median,
}

/// First sample position whose running weight reaches half the weight sum.
pub fn median_depth(trace: &RayTrace) -> Option<f64> {
    if trace.weight_sum <= 0.0 {
        return None;
    }
    let mut acc = 0.0;
    for (s, w) in trace.samples.iter().zip(&trace.weights) {
        acc += w;
        if acc >= 0.5 * trace.weight_sum {
            return Some(s.t);
        }
    }
    trace.samples.last().map(|s| s.t)
}

/// Dense uniform rendering parameters for depth maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRender {
    pub density: DensityParams,
    pub range: (f64, f64),
    pub samples: usize,
    pub cube: Option<GridBounds>,
    /// Pixels whose weight sum stays below this are left invalid.
    pub min_weight: f64,
    pub estimator: DepthEstimator,
}

impl DepthRender {
    pub fn new(range: (f64, f64), cube: Option<GridBounds>) -> Self {
        Self {
            density: DensityParams::default(),
            range,
            samples: 256,
            cube,
            min_weight: MIN_DEPTH_WEIGHT,
            estimator: DepthEstimator::Median,
        }
    }
}

/// Depth map of `field` seen from `camera`, rendered with a dense uniform
/// sampler. Rows are rendered in parallel.
pub fn rendered_depth_map(field: &dyn Field, camera: &PinholeCamera, opts: &DepthRender) -> Result<DepthMap> {
    let cfg = SamplerConfig {
        kind: SamplerKind::Uniform,
        t_near: opts.range.0,
        t_far: opts.range.1,
        ..SamplerConfig::default()
    }
    .with_budget(opts.samples, 0);
    let render = RenderOptions { normals: false, ..RenderOptions::default() };
    let mut sampler = Sampler::new(cfg, opts.density, render)?;
    if let Some(c) = opts.cube {
        sampler = sampler.clipped_to(c);
    }
    let (w, h) = (camera.width(), camera.height());
    let rows: Vec<Vec<Option<f64>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let ray = camera.pixel_ray(x, y).ok()?;
                    let detail = sampler.render_detailed(field, &ray).ok()?;
                    let trace = detail.trace?;
                    if trace.weight_sum < opts.min_weight {
                        return None;
                    }
                    match opts.estimator {
                        DepthEstimator::Mean => detail.outcome.result.depth,
                        DepthEstimator::Median => median_depth(&trace),
                    }
                })
                .collect()
        })
        .collect();
    Ok(Image::from_vec(w, h, rows.into_iter().flatten().collect())?)
}
