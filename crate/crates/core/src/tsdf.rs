//! Dense truncated-SDF grid: fusion of rendered depth maps, voxel traversal
//! and per-ray sample-bound detection.
//!
//! Voxel `(i, j, k)` covers the half-open cell `min + [i, i+1) * voxel` (per
//! axis); values are stored x-fastest as `f32`. Unseen voxels carry `V = -1`
//! and `W = 0`.
//!
//! Fusion follows a single-writer contract: [`TsdfVolume::integrate_ray`] and
//! [`integrate_frames`] take `&mut self` and process rays in input order, so a
//! fixed frame order gives bit-identical grids. Depth maps can be produced in
//! parallel beforehand; once fused the volume is read-only and every query is
//! safe to call from many threads.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use crate::error::{DomainError, Error, Result};
use crate::geometry::{clip_to_bounds, GridBounds, PinholeCamera, Ray, Vec3};
use crate::image::DepthMap;

pub const UNSEEN_VALUE: f32 = -1.0;

const MAGIC: &[u8; 4] = b"TSDF";
const FORMAT_VERSION: u32 = 1;
/// magic + version + res triple + bounds + truncation.
pub const HEADER_LEN: usize = 4 + 4 + 3 * 4 + 6 * 8 + 8;

pub type VoxelIndex = [usize; 3];

/// Detection and fusion hyperparameters, all in meters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TsdfConfig {
    /// Truncation distance `D_T`.
    pub truncation: f64,
    /// Surface criterion `D_s`: phase one stops at `V <= D_s`.
    pub surface: f64,
    /// Consecutive inside confirmations `M` that close the bound.
    pub confirm_steps: usize,
    /// Neighborhood half-width; the inside test scans `(2 nb + 1)^3` voxels.
    pub neighborhood: usize,
    #[serde(default)]
    pub unseen: UnseenRule,
}

/// How unseen voxels (`W = 0`) are treated by the inside test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnseenRule {
    /// Never inside.
    Excluded,
    /// Inside once the ray has passed a seen negative voxel after `t_near`,
    /// i.e. after it crossed an observed surface.
    #[default]
    AfterCrossing,
    /// Always inside, as their stored `-1` suggests.
    Inside,
}

impl TsdfConfig {
    /// Accurate-geometry preset: `D_T = 5`, `D_s = 3` voxels, 5x5x5 block.
    pub fn accurate(voxel_size: f64) -> Self {
        Self {
            truncation: 5.0 * voxel_size,
            surface: 3.0 * voxel_size,
            confirm_steps: 5,
            neighborhood: 2,
            unseen: UnseenRule::AfterCrossing,
        }
    }

    /// Noisy-geometry preset: `D_T = 39`, `D_s = 27` voxels, 7x7x7 block,
    /// 15 confirmations.
    pub fn noisy(voxel_size: f64) -> Self {
        Self {
            truncation: 39.0 * voxel_size,
            surface: 27.0 * voxel_size,
            confirm_steps: 15,
            neighborhood: 3,
            unseen: UnseenRule::AfterCrossing,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.truncation > 0.0 && self.truncation.is_finite()) {
            return Err(DomainError::new("truncation distance must be positive"));
        }
        if !(self.surface > 0.0 && self.surface <= self.truncation) {
            return Err(DomainError::new("surface criterion must lie in (0, truncation]"));
        }
        if self.confirm_steps == 0 || self.neighborhood == 0 {
            return Err(DomainError::new("confirm steps and neighborhood must be >= 1"));
        }
        Ok(())
    }
}

/// Linear back-side down-weighting: 1 in front of the surface, falling to 0
/// at `-truncation`.
#[inline]
pub fn weight_fn(s: f64, truncation: f64) -> f64 {
    if s >= 0.0 {
        1.0
    } else {
        ((truncation + s) / truncation).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VoxelStep {
    /// Entered `index` at parameter `t`.
    Inside(VoxelIndex, f64),
    /// Left the grid at parameter `t`.
    Exit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundStatus {
    Found,
    NoSurface,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleBounds {
    pub t_near: f64,
    pub t_far: f64,
    pub status: BoundStatus,
}

impl SampleBounds {
    pub fn is_found(&self) -> bool {
        self.status == BoundStatus::Found
    }

    pub fn len(&self) -> f64 {
        self.t_far - self.t_near
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    bounds: GridBounds,
    dims: [usize; 3],
    voxel: Vec3,
    truncation: f64,
    values: Vec<f32>,
    weights: Vec<f32>,
}

impl TsdfVolume {
    /// A fully unseen grid.
    pub fn new(bounds: GridBounds, dims: [usize; 3], truncation: f64) -> Result<Self, DomainError> {
        if dims.iter().any(|&n| n == 0 || n > u32::MAX as usize) {
            return Err(DomainError::new("grid resolution must be in 1..=u32::MAX per axis"));
        }
        if !(truncation > 0.0 && truncation.is_finite()) {
            return Err(DomainError::new("truncation distance must be positive"));
        }
        let voxel = bounds.extent().component_div(&Vec3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64));
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self { bounds, dims, voxel, truncation, values: vec![UNSEEN_VALUE; n], weights: vec![0.0; n] })
    }

    /// Cubic grid of `res^3` voxels.
    pub fn cubic(bounds: GridBounds, res: usize, truncation: f64) -> Result<Self, DomainError> {
        Self::new(bounds, [res; 3], truncation)
    }

    pub fn bounds(&self) -> &GridBounds {
        &self.bounds
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    /// Per-axis voxel edge lengths.
    pub fn voxel(&self) -> Vec3 {
        self.voxel
    }

    /// Largest voxel edge; the unit for voxel-relative hyperparameters.
    pub fn voxel_size(&self) -> f64 {
        self.voxel.max()
    }

    pub fn voxel_count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    #[inline]
    fn linear(&self, [i, j, k]: VoxelIndex) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    fn check_index(&self, index: VoxelIndex) -> Result<(), DomainError> {
        if (0..3).any(|a| index[a] >= self.dims[a]) {
            return Err(DomainError::new(format!("voxel index {index:?} outside grid {:?}", self.dims)));
        }
        Ok(())
    }

    /// `(V, W)` at `index`.
    pub fn get(&self, index: VoxelIndex) -> Result<(f32, f32), DomainError> {
        self.check_index(index)?;
        let l = self.linear(index);
        Ok((self.values[l], self.weights[l]))
    }

    #[inline]
    fn value_weight(&self, index: VoxelIndex) -> (f32, f32) {
        let l = self.linear(index);
        (self.values[l], self.weights[l])
    }

    pub fn is_seen(&self, index: VoxelIndex) -> bool {
        self.weights[self.linear(index)] > 0.0
    }

    pub fn seen_count(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    pub fn voxel_of(&self, p: &Vec3) -> Result<VoxelIndex, DomainError> {
        let mut index = [0; 3];
        for a in 0..3 {
            let rel = (p[a] - self.bounds.min[a]) / self.voxel[a];
            let cell = rel.floor();
            if !(cell >= 0.0 && cell < self.dims[a] as f64) {
                return Err(DomainError::new(format!("point ({}, {}, {}) outside grid", p.x, p.y, p.z)));
            }
            index[a] = cell as usize;
        }
        Ok(index)
    }

    /// Like [`Self::voxel_of`] but clamps to the nearest voxel, for points on
    /// or a rounding error past the boundary.
    fn voxel_of_clamped(&self, p: &Vec3) -> VoxelIndex {
        let mut index = [0; 3];
        for a in 0..3 {
            let rel = ((p[a] - self.bounds.min[a]) / self.voxel[a]).floor();
            index[a] = rel.clamp(0.0, (self.dims[a] - 1) as f64) as usize;
        }
        index
    }

    pub fn voxel_center(&self, index: VoxelIndex) -> Result<Vec3, DomainError> {
        self.check_index(index)?;
        Ok(self.center_unchecked(index))
    }

    #[inline]
    fn center_unchecked(&self, index: VoxelIndex) -> Vec3 {
        Vec3::from_fn(|a, _| self.bounds.min[a] + (index[a] as f64 + 0.5) * self.voxel[a])
    }

    /// One Amanatides-Woo step from voxel `index`, entered at `t`: returns
    /// the neighbor across the nearest exit face and the crossing parameter.
    /// Ties across axes step the lowest axis first; the next call then
    /// crosses the remaining face at the same `t`.
    pub fn next_voxel(&self, index: VoxelIndex, t: f64, ray: &Ray) -> VoxelStep {
        let mut best_t = f64::INFINITY;
        let mut best_axis = None;
        for a in 0..3 {
            let d = ray.dir[a];
            if d == 0.0 {
                continue;
            }
            let face_index = if d > 0.0 { index[a] + 1 } else { index[a] };
            let face = self.bounds.min[a] + face_index as f64 * self.voxel[a];
            let ta = (face - ray.origin[a]) / d;
            if ta < best_t {
                best_t = ta;
                best_axis = Some(a);
            }
        }
        let Some(axis) = best_axis else {
            return VoxelStep::Exit(f64::INFINITY);
        };
        let t_next = best_t.max(t);
        let mut next = index;
        if ray.dir[axis] > 0.0 {
            next[axis] += 1;
            if next[axis] >= self.dims[axis] {
                return VoxelStep::Exit(t_next);
            }
        } else {
            if next[axis] == 0 {
                return VoxelStep::Exit(t_next);
            }
            next[axis] -= 1;
        }
        VoxelStep::Inside(next, t_next)
    }

    /// Voxels pierced by `ray` from where it enters the grid (or its origin,
    /// if inside) to where it leaves, with their entry parameters.
    pub fn walk<'a>(&'a self, ray: &'a Ray) -> VoxelWalk<'a> {
        let state = clip_to_bounds(ray, &self.bounds).map(|(t0, _)| (self.voxel_of_clamped(&ray.at(t0)), t0));
        VoxelWalk { volume: self, ray, state }
    }

    /// Fuses one depth observation along `ray`. Returns the number of voxels
    /// updated; rays that miss the grid update nothing.
    pub fn integrate_ray(&mut self, ray: &Ray, depth: f64) -> Result<usize> {
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(DomainError::new(format!("depth must be positive and finite, got {depth}")).into());
        }
        let surface = ray.at(depth);
        let trunc = self.truncation;
        let mut updates = 0;
        let mut cursor = clip_to_bounds(ray, &self.bounds).map(|(t0, _)| (self.voxel_of_clamped(&ray.at(t0)), t0));
        while let Some((index, t)) = cursor {
            let center = self.center_unchecked(index);
            let s = ray.dir.dot(&(surface - center)).clamp(-trunc, trunc);
            if s <= -trunc {
                break;
            }
            let w = weight_fn(s, trunc);
            let l = self.linear(index);
            let (v_old, w_old) = (self.values[l] as f64, self.weights[l] as f64);
            let w_new = w_old + w;
            self.values[l] = ((w_old * v_old + w * s) / w_new) as f32;
            self.weights[l] = w_new as f32;
            updates += 1;
            cursor = match self.next_voxel(index, t, ray) {
                VoxelStep::Inside(next, t_next) => Some((next, t_next)),
                VoxelStep::Exit(_) => None,
            };
        }
        Ok(updates)
    }

    /// True iff every voxel of the `(2 nb + 1)^3` block around `index`
    /// (clipped to the grid) is seen and negative.
    pub fn neighbors_all_negative(&self, index: VoxelIndex, nb: usize) -> bool {
        self.block_inside(index, nb, false)
    }

    /// Like [`Self::neighbors_all_negative`], optionally letting unseen
    /// voxels count as negative.
    pub fn block_inside(&self, index: VoxelIndex, nb: usize, unseen_inside: bool) -> bool {
        let lo: [usize; 3] = std::array::from_fn(|a| index[a].saturating_sub(nb));
        let hi: [usize; 3] = std::array::from_fn(|a| (index[a] + nb).min(self.dims[a] - 1));
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let (v, w) = self.value_weight([i, j, k]);
                    let inside = if w > 0.0 { v < 0.0 } else { unseen_inside };
                    if !inside {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Near/far sampling bound for `ray`.
    ///
    /// Phase one walks voxels until one whose stored value is `<= D_s`
    /// (unseen voxels qualify); its entry parameter is `t_near`. Phase two
    /// keeps walking and counts consecutive voxels whose neighborhood is
    /// entirely inside (negative, or unseen as allowed by
    /// [`TsdfConfig::unseen`]); after `M` in a row, `t_far` is the exit of
    /// the last one. Leaving the grid in phase one yields `NoSurface`; in
    /// phase two the bound falls back to the grid exit (capped by
    /// `global_far`).
    pub fn detect_bounds(&self, ray: &Ray, cfg: &TsdfConfig, global_far: f64) -> Result<SampleBounds, DomainError> {
        let (t_enter, t_exit) =
            clip_to_bounds(ray, &self.bounds).ok_or_else(|| DomainError::new("ray misses the rendering cube"))?;
        let no_surface = SampleBounds { t_near: t_enter, t_far: t_exit, status: BoundStatus::NoSurface };
        let mut index = self.voxel_of_clamped(&ray.at(t_enter));
        let mut t = t_enter;
        loop {
            let (v, _) = self.value_weight(index);
            if (v as f64) <= cfg.surface {
                break;
            }
            match self.next_voxel(index, t, ray) {
                VoxelStep::Inside(next, t_next) => (index, t) = (next, t_next),
                VoxelStep::Exit(_) => return Ok(no_surface),
            }
        }
        let t_near = t;
        let far_cap = t_exit.min(global_far);
        if t_near >= far_cap {
            return Ok(no_surface);
        }
        let mut run = 0;
        let mut crossed = false;
        loop {
            let (v, w) = self.value_weight(index);
            crossed |= w > 0.0 && v < 0.0;
            let unseen_inside = match cfg.unseen {
                UnseenRule::Excluded => false,
                UnseenRule::AfterCrossing => crossed,
                UnseenRule::Inside => true,
            };
            if self.block_inside(index, cfg.neighborhood, unseen_inside) {
                run += 1;
            } else {
                run = 0;
            }
            match self.next_voxel(index, t, ray) {
                VoxelStep::Inside(next, t_next) => (index, t) = (next, t_next),
                VoxelStep::Exit(_) => {
                    return Ok(SampleBounds { t_near, t_far: far_cap, status: BoundStatus::Found });
                }
            }
            if run >= cfg.confirm_steps && t > t_near {
                return Ok(SampleBounds { t_near, t_far: t.min(far_cap), status: BoundStatus::Found });
            }
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for n in self.dims {
            header.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for c in self.bounds.min.iter().chain(self.bounds.max.iter()) {
            header.extend_from_slice(&c.to_le_bytes());
        }
        header.extend_from_slice(&self.truncation.to_le_bytes());
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(4 * self.values.len());
        for arr in [&self.values, &self.weights] {
            buf.clear();
            for x in arr.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header).map_err(|_| Error::Format("truncated header".into()))?;
        if &header[0..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
        let min = Vec3::new(f64_at(20), f64_at(28), f64_at(36));
        let max = Vec3::new(f64_at(44), f64_at(52), f64_at(60));
        let truncation = f64_at(68);
        let bounds = GridBounds::new(min, max).map_err(|e| Error::Format(e.0))?;
        let mut volume = Self::new(bounds, dims, truncation).map_err(|e| Error::Format(e.0))?;
        let mut buf = vec![0u8; 4 * volume.values.len()];
        for arr in [&mut volume.values, &mut volume.weights] {
            r.read_exact(&mut buf).map_err(|_| Error::Format("truncated payload".into()))?;
            for (dst, chunk) in arr.iter_mut().zip(buf.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        Ok(volume)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

pub struct VoxelWalk<'a> {
    volume: &'a TsdfVolume,
    ray: &'a Ray,
    state: Option<(VoxelIndex, f64)>,
}

impl Iterator for VoxelWalk<'_> {
    type Item = (VoxelIndex, f64);

    fn next(&mut self) -> Option<Self::Item> {
        let (index, t) = self.state?;
        self.state = match self.volume.next_voxel(index, t, self.ray) {
            VoxelStep::Inside(next, t_next) => Some((next, t_next)),
            VoxelStep::Exit(_) => None,
        };
        Some((index, t))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FusionStats {
    pub frames: usize,
    pub rays: usize,
    pub voxel_updates: usize,
    /// Voxels that went from unseen to seen.
    pub newly_seen: usize,
    pub wall_time_s: f64,
}

/// Fuses each frame's valid depths (finite, positive) through the matching
/// pixel-center rays, frames and pixels in order.
pub fn integrate_frames(volume: &mut TsdfVolume, frames: &[(PinholeCamera, DepthMap)]) -> Result<FusionStats> {
    for (cam, depth) in frames {
        if depth.dims() != (cam.width(), cam.height()) {
            return Err(DomainError::new(format!(
                "depth map is {}x{} but camera is {}x{}",
                depth.width(),
                depth.height(),
                cam.width(),
                cam.height()
            ))
            .into());
        }
    }
    let start = Instant::now();
    let seen_before = volume.seen_count();
    let mut stats = FusionStats { frames: frames.len(), ..Default::default() };
    for (cam, depth) in frames {
        for y in 0..cam.height() {
            for x in 0..cam.width() {
                let Some(d) = *depth.get(x, y) else { continue };
                if !(d > 0.0 && d.is_finite()) {
                    continue;
                }
                let ray = cam.pixel_ray(x, y)?;
                stats.voxel_updates += volume.integrate_ray(&ray, d)?;
                stats.rays += 1;
            }
        }
    }
    stats.newly_seen = volume.seen_count() - seen_before;
    stats.wall_time_s = start.elapsed().as_secs_f64();
    Ok(stats)
}

/// A ray plus the depth of the surface it should find, if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRay {
    pub ray: Ray,
    pub depth: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BoundStats {
    pub rays: usize,
    pub found: usize,
    pub no_surface: usize,
    /// Mean clipped global range over rays with a found bound.
    pub mean_original_range: f64,
    /// Mean `t_far - t_near` over rays with a found bound.
    pub mean_reduced_range: f64,
    /// Rays whose reference depth lies outside the bound, or that have a
    /// reference depth but no bound.
    pub failures: usize,
}

impl BoundStats {
    pub fn range_ratio(&self) -> f64 {
        self.mean_reduced_range / self.mean_original_range
    }

    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.rays.max(1) as f64
    }
}

/// Sampling-range reduction and bound failures over a ray population.
/// `global` is the configured `(t_near, t_far)`, clipped per ray to the cube.
pub fn bound_stats(volume: &TsdfVolume, rays: &[ReferenceRay], cfg: &TsdfConfig, global: (f64, f64)) -> BoundStats {
    let mut stats = BoundStats { rays: rays.len(), ..Default::default() };
    let (mut orig_sum, mut red_sum) = (0.0, 0.0);
    for r in rays {
        let bounds = volume.detect_bounds(&r.ray, cfg, global.1);
        match bounds {
            Ok(b) if b.is_found() => {
                stats.found += 1;
                let (t0, t1) = clip_to_bounds(&r.ray, volume.bounds()).unwrap_or((global.0, global.1));
                orig_sum += t1.min(global.1) - t0.max(global.0);
                red_sum += b.t_far - b.t_near.max(global.0);
                if let Some(d) = r.depth {
                    if d < b.t_near || d > b.t_far {
                        stats.failures += 1;
                    }
                }
            }
            _ => {
                stats.no_surface += 1;
                if r.depth.is_some() {
                    stats.failures += 1;
                }
            }
        }
    }
    if stats.found > 0 {
        stats.mean_original_range = orig_sum / stats.found as f64;
        stats.mean_reduced_range = red_sum / stats.found as f64;
    }
    stats
}
