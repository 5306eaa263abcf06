//! Scene-config file: schema, parsing and conversion to library types.
//!
//! The file is TOML with an explicit `schema_version`. Every numeric field
//! carries its unit in its name (`_m` meters, `_deg` degrees, `_px` pixels,
//! `_voxels` multiples of the voxel size, `_per_m` inverse meters). Unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tsdf_core::field::{DensityParams, NoiseParams, Primitive, Scene, Shape};
use tsdf_core::geometry::{GridBounds, Intrinsics, PinholeCamera, Vec3};
use tsdf_core::presets::DepthEstimator;
use tsdf_core::sampling::{FineMode, SamplerConfig, SamplerKind};
use tsdf_core::tsdf::{TsdfConfig, UnseenRule};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    pub scene: SceneSection,
    #[serde(default)]
    pub density: DensitySection,
    pub grid: GridSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub reference: ReferenceSection,
    pub cameras: CamerasSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub primitives: Vec<PrimitiveEntry>,
    pub noise: Option<NoiseEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrimitiveEntry {
    Sphere { center_m: [f64; 3], radius_m: f64, color: [f64; 3] },
    Box { center_m: [f64; 3], half_extents_m: [f64; 3], color: [f64; 3] },
    Plane { normal: [f64; 3], offset_m: f64, color: [f64; 3] },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseEntry {
    pub amplitude_m: f64,
    pub cell_m: f64,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    pub alpha_scale_per_m: f64,
    pub beta_m: f64,
}

impl Default for DensitySection {
    fn default() -> Self {
        let d = DensityParams::default();
        Self { alpha_scale_per_m: d.alpha_scale, beta_m: d.beta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsdfPreset {
    Accurate,
    Noisy,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub res: usize,
    pub min_m: [f64; 3],
    pub max_m: [f64; 3],
    #[serde(default = "default_preset")]
    pub preset: TsdfPreset,
    pub truncation_voxels: Option<f64>,
    pub surface_voxels: Option<f64>,
    pub confirm_steps: Option<usize>,
    pub neighborhood_voxels: Option<usize>,
    pub unseen: Option<UnseenRule>,
}

fn default_preset() -> TsdfPreset {
    TsdfPreset::Accurate
}

/// Sampler settings; omitted keys take the library defaults. Without
/// `dt_target_m` the adaptive spacing is calibrated on the training rays.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub kind: Option<SamplerKind>,
    pub n_coarse: Option<usize>,
    pub n_fine: Option<usize>,
    pub dt_target_m: Option<f64>,
    pub n_min: Option<usize>,
    pub n_max: Option<usize>,
    pub tau: Option<f64>,
    pub recovery_samples: Option<usize>,
    pub recovery_fine: Option<usize>,
    pub t_near_m: Option<f64>,
    pub t_far_m: Option<f64>,
    pub jitter: Option<bool>,
    pub seed: Option<u64>,
    pub fine_mode: Option<FineMode>,
}

/// Dense uniform render used for training depth maps and as the metric
/// reference.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    #[serde(default = "default_reference_samples")]
    pub samples: usize,
    #[serde(default = "default_estimator")]
    pub depth_estimator: DepthEstimator,
    #[serde(default = "default_min_weight")]
    pub min_weight: f64,
}

fn default_reference_samples() -> usize {
    256
}

fn default_estimator() -> DepthEstimator {
    DepthEstimator::Median
}

fn default_min_weight() -> f64 {
    tsdf_core::presets::MIN_DEPTH_WEIGHT
}

impl Default for ReferenceSection {
    fn default() -> Self {
        Self {
            samples: default_reference_samples(),
            depth_estimator: default_estimator(),
            min_weight: default_min_weight(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CamerasSection {
    pub width_px: usize,
    pub height_px: usize,
    #[serde(default)]
    pub train: Vec<CameraEntry>,
    #[serde(default)]
    pub test: Vec<CameraEntry>,
}

/// A look-at pose plus either a horizontal field of view or explicit
/// intrinsics.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub eye_m: [f64; 3],
    pub target_m: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    pub fov_deg: Option<f64>,
    pub fx_px: Option<f64>,
    pub fy_px: Option<f64>,
    pub cx_px: Option<f64>,
    pub cy_px: Option<f64>,
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundReference {
    /// Exact first hit of the scene distance.
    Analytic,
    /// Depth of the dense reference render.
    Rendered,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default = "default_bench_samplers")]
    pub samplers: Vec<SamplerKind>,
    /// Budgets as `"<n_coarse>+<n_fine>"`.
    #[serde(default = "default_bench_budgets")]
    pub budgets: Vec<String>,
    /// Test views to average over; all of them when omitted.
    pub views: Option<Vec<usize>>,
    #[serde(default = "default_bound_reference")]
    pub bound_reference: BoundReference,
}

fn default_bench_samplers() -> Vec<SamplerKind> {
    vec![SamplerKind::Hierarchical, SamplerKind::TsdfNaive, SamplerKind::TsdfFull]
}

fn default_bench_budgets() -> Vec<String> {
    vec!["64+32".into(), "6+8".into()]
}

fn default_bound_reference() -> BoundReference {
    BoundReference::Analytic
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            samplers: default_bench_samplers(),
            budgets: default_bench_budgets(),
            views: None,
            bound_reference: default_bound_reference(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_out_dir() }
    }
}

/// Parses `"c+f"` into `(n_coarse, n_fine)`.
pub fn parse_budget(s: &str) -> Result<(usize, usize), String> {
    let (c, f) = s.split_once('+').ok_or_else(|| format!("budget '{s}' is not of the form <coarse>+<fine>"))?;
    let c: usize = c.trim().parse().map_err(|_| format!("bad coarse count in budget '{s}'"))?;
    let f: usize = f.trim().parse().map_err(|_| format!("bad fine count in budget '{s}'"))?;
    if c == 0 {
        return Err(format!("budget '{s}' needs at least one coarse sample"));
    }
    Ok((c, f))
}

pub fn parse_file(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_str(&text)
}

/// Parses and checks the schema version; errors name the offending key path.
pub fn parse_str(text: &str) -> Result<ConfigFile, CliError> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(format!("invalid TOML: {e}")))?;
    let file: ConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{path}: {}", e.into_inner().message().trim()))
    })?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "schema_version: expected {SCHEMA_VERSION}, found {}",
            file.schema_version
        )));
    }
    Ok(file)
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub scene: Scene,
    pub density: DensityParams,
    pub bounds: GridBounds,
    pub res: usize,
    pub tsdf: TsdfConfig,
    pub sampler: SamplerConfig,
    /// Calibrate `sampler.dt_target` on the training rays before rendering.
    pub calibrate_dt: bool,
    pub reference: ReferenceSection,
    pub train: Vec<PinholeCamera>,
    pub test: Vec<PinholeCamera>,
    pub bench: BenchSection,
    pub out_dir: PathBuf,
}

fn cfg_err(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

fn camera(entry: &CameraEntry, width: usize, height: usize, path: &str) -> Result<PinholeCamera, CliError> {
    let explicit = [entry.fx_px, entry.fy_px, entry.cx_px, entry.cy_px];
    let intrinsics = match (entry.fov_deg, explicit) {
        (Some(fov), [None, None, None, None]) => {
            if !(fov > 0.0 && fov < 180.0) {
                return Err(cfg_err(&format!("{path}.fov_deg"), "must lie in (0, 180)"));
            }
            Intrinsics::from_fov(width, height, fov)
        }
        (None, [Some(fx), Some(fy), Some(cx), Some(cy)]) => Intrinsics { fx, fy, cx, cy, width, height },
        _ => return Err(cfg_err(path, "give either fov_deg or all of fx_px, fy_px, cx_px, cy_px")),
    };
    PinholeCamera::look_at(Vec3::from(entry.eye_m), Vec3::from(entry.target_m), Vec3::from(entry.up), intrinsics)
        .map_err(|e| cfg_err(path, e))
}

impl ConfigFile {
    pub fn resolve(&self) -> Result<Settings, CliError> {
        let primitives = self
            .scene
            .primitives
            .iter()
            .map(|p| match *p {
                PrimitiveEntry::Sphere { center_m, radius_m, color } => {
                    Primitive { shape: Shape::Sphere { center: Vec3::from(center_m), radius: radius_m }, color }
                }
                PrimitiveEntry::Box { center_m, half_extents_m, color } => Primitive {
                    shape: Shape::Box { center: Vec3::from(center_m), half_extents: Vec3::from(half_extents_m) },
                    color,
                },
                PrimitiveEntry::Plane { normal, offset_m, color } => {
                    Primitive { shape: Shape::Plane { normal: Vec3::from(normal), offset: offset_m }, color }
                }
            })
            .collect();
        let noise =
            self.scene.noise.as_ref().map(|n| NoiseParams { amplitude: n.amplitude_m, cell: n.cell_m, seed: n.seed });
        let scene = Scene::new(primitives, noise).map_err(|e| cfg_err("scene", e))?;
        let density = DensityParams::new(self.density.alpha_scale_per_m, self.density.beta_m)
            .map_err(|e| cfg_err("density", e))?;

        let g = &self.grid;
        let bounds = GridBounds::new(Vec3::from(g.min_m), Vec3::from(g.max_m)).map_err(|e| cfg_err("grid", e))?;
        let ext = bounds.extent();
        if (ext.x - ext.y).abs() > 1e-9 * ext.x || (ext.x - ext.z).abs() > 1e-9 * ext.x {
            return Err(cfg_err("grid", "bounds must be a cube"));
        }
        if g.res == 0 {
            return Err(cfg_err("grid.res", "must be >= 1"));
        }
        if !scene.fits_in(&bounds) {
            return Err(cfg_err("grid", "bounds do not contain every bounded primitive"));
        }
        let tsdf = tsdf_config(g, ext.x / g.res as f64);
        tsdf.validate().map_err(|e| cfg_err("grid", e))?;

        let s = &self.sampler;
        let d = SamplerConfig::default();
        let sampler = SamplerConfig {
            kind: s.kind.unwrap_or(d.kind),
            n_coarse: s.n_coarse.unwrap_or(d.n_coarse),
            n_fine: s.n_fine.unwrap_or(d.n_fine),
            dt_target: s.dt_target_m.unwrap_or(d.dt_target),
            n_min: s.n_min.unwrap_or(d.n_min),
            n_max: s.n_max.unwrap_or(d.n_max),
            tau: s.tau.unwrap_or(d.tau),
            recovery_samples: s.recovery_samples.unwrap_or(d.recovery_samples),
            recovery_fine: s.recovery_fine.unwrap_or(d.recovery_fine),
            t_near: s.t_near_m.unwrap_or(d.t_near),
            t_far: s.t_far_m.unwrap_or(d.t_far),
            jitter: s.jitter.unwrap_or(d.jitter),
            seed: s.seed.unwrap_or(d.seed),
            fine_mode: s.fine_mode.unwrap_or(d.fine_mode),
        };
        sampler.validate().map_err(|e| cfg_err("sampler", e))?;

        let r = self.reference;
        if r.samples == 0 {
            return Err(cfg_err("reference.samples", "must be >= 1"));
        }
        let c = &self.cameras;
        if c.width_px == 0 || c.height_px == 0 {
            return Err(cfg_err("cameras", "image size must be nonzero"));
        }
        let train = c
            .train
            .iter()
            .enumerate()
            .map(|(i, e)| camera(e, c.width_px, c.height_px, &format!("cameras.train[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let test = c
            .test
            .iter()
            .enumerate()
            .map(|(i, e)| camera(e, c.width_px, c.height_px, &format!("cameras.test[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        if test.is_empty() {
            return Err(cfg_err("cameras.test", "at least one test camera is required"));
        }
        for b in &self.bench.budgets {
            parse_budget(b).map_err(|e| cfg_err("bench.budgets", e))?;
        }
        if let Some(views) = &self.bench.views {
            if let Some(v) = views.iter().find(|v| **v >= test.len()) {
                return Err(cfg_err("bench.views", format!("view {v} out of range ({} test cameras)", test.len())));
            }
        }
        Ok(Settings {
            scene,
            density,
            bounds,
            res: g.res,
            tsdf,
            sampler,
            calibrate_dt: s.dt_target_m.is_none(),
            reference: r,
            train,
            test,
            bench: self.bench.clone(),
            out_dir: self.output.dir.clone(),
        })
    }
}

fn tsdf_config(g: &GridSection, voxel: f64) -> TsdfConfig {
    let base = match g.preset {
        TsdfPreset::Accurate => TsdfConfig::accurate(voxel),
        TsdfPreset::Noisy => TsdfConfig::noisy(voxel),
    };
    TsdfConfig {
        truncation: g.truncation_voxels.map_or(base.truncation, |v| v * voxel),
        surface: g.surface_voxels.map_or(base.surface, |v| v * voxel),
        confirm_steps: g.confirm_steps.unwrap_or(base.confirm_steps),
        neighborhood: g.neighborhood_voxels.unwrap_or(base.neighborhood),
        unseen: g.unseen.unwrap_or(base.unseen),
    }
}

impl Settings {
    pub fn voxel_size(&self) -> f64 {
        self.bounds.extent().x / self.res as f64
    }

    /// Changes the grid resolution, rescaling voxel-relative settings.
    pub fn set_res(&mut self, res: usize) -> Result<(), CliError> {
        if res == 0 {
            return Err(CliError::Config("--grid-res must be >= 1".into()));
        }
        let scale = self.res as f64 / res as f64;
        self.tsdf.truncation *= scale;
        self.tsdf.surface *= scale;
        self.res = res;
        Ok(())
    }
}
