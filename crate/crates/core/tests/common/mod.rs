#![allow(dead_code)]

use tsdf_core::field::Scene;
use tsdf_core::geometry::{GridBounds, PinholeCamera};
use tsdf_core::presets::{analytic_depth_map, sphere_bounds, sphere_cameras, sphere_scene};
use tsdf_core::tsdf::{integrate_frames, TsdfVolume};

/// Fuses exact depth maps of `scene` seen from `cameras` into a `res`^3 grid
/// with truncation `trunc_voxels` voxels.
pub fn fuse(scene: &Scene, bounds: GridBounds, res: usize, trunc_voxels: f64, cameras: &[PinholeCamera]) -> TsdfVolume {
    let voxel = bounds.extent().x / res as f64;
    let mut vol = TsdfVolume::cubic(bounds, res, trunc_voxels * voxel).unwrap();
    let frames: Vec<_> = cameras.iter().map(|c| (c.clone(), analytic_depth_map(scene, c, (0.0, 100.0)))).collect();
    integrate_frames(&mut vol, &frames).unwrap();
    vol
}

pub fn sphere_cams() -> Vec<PinholeCamera> {
    sphere_cameras(32, 2.5, 64, 64, 50.0)
}

/// Radius 0.5 sphere fused at `res`^3 from 32 surrounding views.
pub fn fused_sphere(res: usize) -> TsdfVolume {
    fuse(&sphere_scene(), sphere_bounds(), res, 5.0, &sphere_cams())
}
