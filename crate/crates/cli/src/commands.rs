//! The four subcommands. Workers only compute; every file is written from
//! the calling thread once rendering has finished.
//!
//! CSV outputs are deterministic for a fixed configuration. Wall-clock
//! timings go to separate `*_timing.csv` sidecars and stdout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use tsdf_core::eval::{fmt_f64, MetricReport};
use tsdf_core::field::{sdf_to_density, Field};
use tsdf_core::geometry::{PinholeCamera, Ray};
use tsdf_core::image::{DepthMap, RgbImage};
use tsdf_core::io;
use tsdf_core::presets::{rendered_depth_map, DepthRender};
use tsdf_core::render::{render_image, Frame, RenderOptions, SampleTag};
use tsdf_core::sampling::{calibrate_dt_target, FineMode, Sampler, SamplerConfig, SamplerKind};
use tsdf_core::tsdf::{bound_stats, integrate_frames, ReferenceRay, TsdfVolume};

use crate::config::{self, BoundReference, Settings};
use crate::error::CliError;
use crate::plot::{self, Plot, Series};

pub const VOLUME_FILE: &str = "volume.tsdf";

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub sampler: Option<SamplerKind>,
    pub budget: Option<(usize, usize)>,
    pub grid_res: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub dt_target_m: Option<f64>,
    pub n_min: Option<usize>,
    pub n_max: Option<usize>,
    pub tau: Option<f64>,
    pub recovery_budget: Option<(usize, usize)>,
    pub t_near_m: Option<f64>,
    pub t_far_m: Option<f64>,
    pub jitter: Option<bool>,
    pub fine_mode: Option<FineMode>,
}

impl Overrides {
    pub fn apply(&self, s: &mut Settings) -> Result<(), CliError> {
        let c = &mut s.sampler;
        if let Some(k) = self.sampler {
            c.kind = k;
        }
        if let Some((n_c, n_f)) = self.budget {
            c.n_coarse = n_c;
            c.n_fine = n_f;
        }
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(dt) = self.dt_target_m {
            c.dt_target = dt;
            s.calibrate_dt = false;
        }
        if let Some(v) = self.n_min {
            c.n_min = v;
        }
        if let Some(v) = self.n_max {
            c.n_max = v;
        }
        if let Some(v) = self.tau {
            c.tau = v;
        }
        if let Some((r_c, r_f)) = self.recovery_budget {
            c.recovery_samples = r_c;
            c.recovery_fine = r_f;
        }
        if let Some(v) = self.t_near_m {
            c.t_near = v;
        }
        if let Some(v) = self.t_far_m {
            c.t_far = v;
        }
        if let Some(v) = self.jitter {
            c.jitter = v;
        }
        if let Some(v) = self.fine_mode {
            c.fine_mode = v;
        }
        c.validate().map_err(|e| CliError::Config(format!("sampler overrides: {}", e.0)))?;
        if let Some(res) = self.grid_res {
            s.set_res(res)?;
        }
        if let Some(out) = &self.out {
            s.out_dir = out.clone();
        }
        Ok(())
    }
}

pub fn load_settings(config_path: &Path, overrides: &Overrides) -> Result<Settings, CliError> {
    let mut s = config::parse_file(config_path)?.resolve()?;
    overrides.apply(&mut s)?;
    Ok(s)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn core_at(path: &Path, e: tsdf_core::Error) -> CliError {
    match e {
        tsdf_core::Error::Io(io) => CliError::io(path, io),
        other => CliError::Core(other),
    }
}

fn csv_line(cells: &[String]) -> String {
    let mut s = cells.join(",");
    s.push('\n');
    s
}

fn depth_render(s: &Settings) -> DepthRender {
    DepthRender {
        density: s.density,
        range: (s.sampler.t_near, s.sampler.t_far),
        samples: s.reference.samples,
        cube: Some(s.bounds),
        min_weight: s.reference.min_weight,
        estimator: s.reference.depth_estimator,
    }
}

/// Renders training depth maps with the dense reference sampler and fuses
/// them into `volume.tsdf`.
pub fn integrate(s: &Settings) -> Result<(), CliError> {
    ensure_dir(&s.out_dir)?;
    let start = Instant::now();
    let opts = depth_render(s);
    let frames = s
        .train
        .iter()
        .map(|cam| Ok((cam.clone(), rendered_depth_map(&s.scene, cam, &opts)?)))
        .collect::<Result<Vec<(PinholeCamera, DepthMap)>, CliError>>()?;
    let depth_s = start.elapsed().as_secs_f64();

    let mut volume = TsdfVolume::cubic(s.bounds, s.res, s.tsdf.truncation)?;
    let stats = integrate_frames(&mut volume, &frames)?;
    let path = s.out_dir.join(VOLUME_FILE);
    volume.save(&path).map_err(|e| core_at(&path, e))?;

    let header =
        ["frames", "rays", "voxel_updates", "newly_seen", "seen_voxels", "voxels", "voxel_size_m", "truncation_m"];
    let row = [
        stats.frames.to_string(),
        stats.rays.to_string(),
        stats.voxel_updates.to_string(),
        stats.newly_seen.to_string(),
        volume.seen_count().to_string(),
        volume.voxel_count().to_string(),
        fmt_f64(volume.voxel_size()),
        fmt_f64(volume.truncation()),
    ];
    write_file(&s.out_dir.join("fusion_stats.csv"), &(header.join(",") + "\n" + &csv_line(&row)))?;
    write_timing(&s.out_dir.join("integrate_timing.csv"), &[("depth_maps", depth_s), ("fusion", stats.wall_time_s)])?;
    println!(
        "fused {} frames ({} rays) into {}^3 grid: {} of {} voxels seen; depth maps {:.2} s, fusion {:.2} s",
        stats.frames,
        stats.rays,
        s.res,
        volume.seen_count(),
        volume.voxel_count(),
        depth_s,
        stats.wall_time_s
    );
    Ok(())
}

fn write_timing(path: &Path, phases: &[(&str, f64)]) -> Result<(), CliError> {
    let mut out = String::from("phase,wall_time_s\n");
    for (name, t) in phases {
        let _ = writeln!(out, "{name},{}", fmt_f64(*t));
    }
    write_file(path, &out)
}

/// Loads the fused volume and checks it matches the configured grid.
fn load_volume(s: &Settings) -> Result<TsdfVolume, CliError> {
    let path = s.out_dir.join(VOLUME_FILE);
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!("{} not found; run `tsdf integrate` first", path.display())));
    }
    let volume = TsdfVolume::load(&path).map_err(|e| core_at(&path, e))?;
    let b = volume.bounds();
    let same_bounds = (b.min - s.bounds.min).norm() < 1e-9 && (b.max - s.bounds.max).norm() < 1e-9;
    if volume.dims() != [s.res; 3] || !same_bounds || (volume.truncation() - s.tsdf.truncation).abs() > 1e-12 {
        return Err(CliError::MissingArtifact(format!(
            "{} was fused with a different grid; rerun `tsdf integrate`",
            path.display()
        )));
    }
    Ok(volume)
}

fn pixel_rays(cams: &[PinholeCamera]) -> Result<Vec<Ray>, CliError> {
    let mut rays = Vec::new();
    for cam in cams {
        for y in 0..cam.height() {
            for x in 0..cam.width() {
                rays.push(cam.pixel_ray(x, y)?);
            }
        }
    }
    Ok(rays)
}

/// Resolves the adaptive spacing for `cfg`: calibrated on the training rays
/// (or `fallback` cameras when there are none) unless set explicitly.
fn resolve_dt(
    s: &Settings,
    volume: Option<&TsdfVolume>,
    cfg: SamplerConfig,
    fallback: &[PinholeCamera],
) -> Result<SamplerConfig, CliError> {
    let (Some(volume), true, SamplerKind::TsdfFull) = (volume, s.calibrate_dt, cfg.kind) else {
        return Ok(cfg);
    };
    let cams = if s.train.is_empty() { fallback } else { &s.train };
    let rays = pixel_rays(cams)?;
    Ok(match calibrate_dt_target(volume, &s.tsdf, &rays, &cfg) {
        Some(dt_target) => SamplerConfig { dt_target, ..cfg },
        None => cfg,
    })
}

fn sampler<'a>(s: &Settings, volume: Option<&'a TsdfVolume>, cfg: SamplerConfig) -> Result<Sampler<'a>, CliError> {
    let opts = RenderOptions::default();
    Ok(match volume {
        Some(v) => Sampler::with_volume(cfg, v, s.tsdf, s.density, opts)?,
        None => Sampler::new(cfg, s.density, opts)?.clipped_to(s.bounds),
    })
}

fn reference_config(s: &Settings) -> SamplerConfig {
    SamplerConfig { kind: SamplerKind::Uniform, ..s.sampler }.with_budget(s.reference.samples, 0)
}

fn reference_frame(s: &Settings, cam: &PinholeCamera) -> Result<Frame, CliError> {
    Ok(render_image(&s.scene, cam, &sampler(s, None, reference_config(s))?))
}

fn test_camera(s: &Settings, view: usize) -> Result<&PinholeCamera, CliError> {
    s.test
        .get(view)
        .ok_or_else(|| CliError::Config(format!("--view {view} out of range ({} test cameras)", s.test.len())))
}

fn needs_volume(s: &Settings, kinds: &[SamplerKind]) -> Result<Option<TsdfVolume>, CliError> {
    if kinds.iter().any(|k| k.needs_volume()) {
        Ok(Some(load_volume(s)?))
    } else {
        Ok(None)
    }
}

const REPORT_COLUMNS: [&str; 13] = [
    "sampler",
    "n_coarse",
    "n_fine",
    "dt_target_m",
    "avg_samples",
    "queries_per_ray",
    "psnr_db",
    "ssim",
    "depth_mae_cm",
    "depth_pixels",
    "normal_err_deg",
    "normal_pixels",
    "recovery_fraction",
];

fn report_row(cfg: &SamplerConfig, r: &MetricReport) -> Vec<String> {
    vec![
        cfg.kind.to_string(),
        cfg.n_coarse.to_string(),
        cfg.n_fine.to_string(),
        fmt_f64(cfg.dt_target),
        fmt_f64(r.avg_samples),
        fmt_f64(r.queries_per_ray),
        fmt_f64(r.psnr_db),
        fmt_f64(r.ssim),
        fmt_f64(r.depth_mae_cm),
        r.depth_pixels.to_string(),
        fmt_f64(r.normal_err_deg),
        r.normal_pixels.to_string(),
        fmt_f64(r.recovery_fraction),
    ]
}

fn write_frame(prefix: &Path, frame: &Frame) -> Result<(), CliError> {
    let with = |suffix: &str| {
        let mut p = prefix.as_os_str().to_owned();
        p.push(suffix);
        PathBuf::from(p)
    };
    let path = with(".png");
    io::write_png(&path, &frame.color).map_err(|e| core_at(&path, e))?;
    let path = with("_color.pfm");
    io::write_pfm_rgb(&path, &frame.color).map_err(|e| core_at(&path, e))?;
    let path = with("_depth.pfm");
    io::write_pfm_gray(&path, &frame.depth.map(|d| d.unwrap_or(0.0))).map_err(|e| core_at(&path, e))?;
    let normals: RgbImage = frame.normal.map(|n| n.map_or([0.0; 3], |n| [n.x, n.y, n.z]));
    let path = with("_normal.pfm");
    io::write_pfm_rgb(&path, &normals).map_err(|e| core_at(&path, e))?;
    let path = with("_weight.pfm");
    io::write_pfm_gray(&path, &frame.weight_sum).map_err(|e| core_at(&path, e))?;
    Ok(())
}

/// Renders one test view with the configured sampler and compares it with
/// the dense reference render of the same view.
pub fn render(s: &Settings, view: usize) -> Result<(), CliError> {
    let cam = test_camera(s, view)?;
    let volume = needs_volume(s, &[s.sampler.kind])?;
    ensure_dir(&s.out_dir)?;

    let start = Instant::now();
    let reference = reference_frame(s, cam)?;
    let reference_s = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let cfg = resolve_dt(s, volume.as_ref(), s.sampler, std::slice::from_ref(cam))?;
    let calibration_s = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let frame = render_image(&s.scene, cam, &sampler(s, volume.as_ref(), cfg)?);
    let render_s = start.elapsed().as_secs_f64();

    let report = MetricReport::compare(&reference, &frame, render_s)?;
    let stem = format!("render_{view}_{}", cfg.kind);
    write_frame(&s.out_dir.join(&stem), &frame)?;
    write_frame(&s.out_dir.join(format!("reference_{view}")), &reference)?;
    write_file(
        &s.out_dir.join(format!("{stem}_metrics.csv")),
        &(REPORT_COLUMNS.join(",") + "\n" + &csv_line(&report_row(&cfg, &report))),
    )?;
    write_timing(
        &s.out_dir.join(format!("{stem}_timing.csv")),
        &[("reference", reference_s), ("calibration", calibration_s), ("render", render_s)],
    )?;
    println!(
        "view {view} {}: {:.2} samples/ray, PSNR {} dB, SSIM {}, depth MAE {} cm; render {:.2} s",
        cfg.kind,
        report.avg_samples,
        fmt_f64(report.psnr_db),
        fmt_f64(report.ssim),
        fmt_f64(report.depth_mae_cm),
        render_s
    );
    Ok(())
}

/// Averages per-view reports; pixel counts are summed.
fn mean_report(reports: &[MetricReport]) -> MetricReport {
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    MetricReport {
        psnr_db: mean(|r| r.psnr_db),
        ssim: mean(|r| r.ssim),
        depth_mae_cm: mean(|r| r.depth_mae_cm),
        depth_pixels: reports.iter().map(|r| r.depth_pixels).sum(),
        normal_err_deg: mean(|r| r.normal_err_deg),
        normal_pixels: reports.iter().map(|r| r.normal_pixels).sum(),
        avg_samples: mean(|r| r.avg_samples),
        queries_per_ray: mean(|r| r.queries_per_ray),
        wall_time_s: reports.iter().map(|r| r.wall_time_s).sum(),
        recovery_fraction: mean(|r| r.recovery_fraction),
    }
}

/// Sweeps samplers by budgets over the selected test views, writing one
/// aggregated row per pair plus the bound statistics of the test rays.
pub fn bench(
    s: &Settings,
    only_sampler: Option<SamplerKind>,
    only_budget: Option<(usize, usize)>,
) -> Result<(), CliError> {
    let kinds: Vec<SamplerKind> = match only_sampler {
        Some(k) => vec![k],
        None => s.bench.samplers.clone(),
    };
    let budgets: Vec<(usize, usize)> = match only_budget {
        Some(b) => vec![b],
        None => s
            .bench
            .budgets
            .iter()
            .map(|b| config::parse_budget(b).map_err(CliError::Config))
            .collect::<Result<_, _>>()?,
    };
    let views: Vec<usize> = s.bench.views.clone().unwrap_or_else(|| (0..s.test.len()).collect());
    let cams: Vec<PinholeCamera> = views.iter().map(|&v| test_camera(s, v).cloned()).collect::<Result<_, _>>()?;
    let volume = needs_volume(s, &kinds)?;
    ensure_dir(&s.out_dir)?;

    let start = Instant::now();
    let references: Vec<Frame> = cams.iter().map(|c| reference_frame(s, c)).collect::<Result<_, _>>()?;
    let mut timing = vec![("reference".to_owned(), start.elapsed().as_secs_f64())];

    let mut table = REPORT_COLUMNS.join(",") + "\n";
    for &kind in &kinds {
        for &(n_c, n_f) in &budgets {
            let base = SamplerConfig { kind, ..s.sampler }.with_budget(n_c, n_f);
            base.validate().map_err(|e| CliError::Config(format!("bench budget {n_c}+{n_f}: {}", e.0)))?;
            let cfg = resolve_dt(s, volume.as_ref(), base, &cams)?;
            let smp = sampler(s, volume.as_ref(), cfg)?;
            let mut reports = Vec::with_capacity(cams.len());
            for (cam, reference) in cams.iter().zip(&references) {
                let start = Instant::now();
                let frame = render_image(&s.scene, cam, &smp);
                reports.push(MetricReport::compare(reference, &frame, start.elapsed().as_secs_f64())?);
            }
            let r = mean_report(&reports);
            table += &csv_line(&report_row(&cfg, &r));
            timing.push((format!("{kind} {n_c}+{n_f}"), r.wall_time_s));
            println!(
                "{kind:>12} {n_c:>3}+{n_f:<3} {:8.2} queries/ray  PSNR {:>9} dB  SSIM {}  {:.2} s",
                r.queries_per_ray,
                fmt_f64(r.psnr_db),
                fmt_f64(r.ssim),
                r.wall_time_s
            );
        }
    }
    write_file(&s.out_dir.join("bench.csv"), &table)?;

    if let Some(volume) = &volume {
        let global = (s.sampler.t_near, s.sampler.t_far);
        let mut refs = Vec::new();
        for (cam, reference) in cams.iter().zip(&references) {
            for y in 0..cam.height() {
                for x in 0..cam.width() {
                    let ray = cam.pixel_ray(x, y)?;
                    let depth = match s.bench.bound_reference {
                        BoundReference::Analytic => s.scene.first_hit(&ray, global.0, global.1),
                        BoundReference::Rendered => reference
                            .depth
                            .get(x, y)
                            .filter(|_| *reference.weight_sum.get(x, y) >= s.reference.min_weight),
                    };
                    refs.push(ReferenceRay { ray, depth });
                }
            }
        }
        let b = bound_stats(volume, &refs, &s.tsdf, global);
        let header =
            "rays,found,no_surface,mean_original_range_m,mean_reduced_range_m,range_ratio,failures,failure_rate\n";
        let row = [
            b.rays.to_string(),
            b.found.to_string(),
            b.no_surface.to_string(),
            fmt_f64(b.mean_original_range),
            fmt_f64(b.mean_reduced_range),
            fmt_f64(if b.found > 0 { b.range_ratio() } else { f64::NAN }),
            b.failures.to_string(),
            fmt_f64(b.failure_rate()),
        ];
        write_file(&s.out_dir.join("bench_bounds.csv"), &(header.to_owned() + &csv_line(&row)))?;
        println!(
            "bounds: {} rays, range {}/{} m, {} failures",
            b.rays,
            fmt_f64(b.mean_reduced_range),
            fmt_f64(b.mean_original_range),
            b.failures
        );
    }
    let phases: Vec<(&str, f64)> = timing.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    write_timing(&s.out_dir.join("bench_timing.csv"), &phases)
}

/// Dense points along the clipped global range in a ray dump.
pub const PROFILE_POINTS: usize = 512;

const PLOT_SIZE: (usize, usize) = (900, 420);

struct DumpRow {
    t: f64,
    voxel: Option<(f32, f32)>,
    sdf: f64,
    sigma: f64,
    weight: Option<f64>,
    tag: &'static str,
}

fn opt_cell(x: Option<f64>) -> String {
    x.map_or_else(String::new, fmt_f64)
}

/// Writes the per-sample and dense profile of one pixel's ray, its bounds
/// and a raster plot of both.
pub fn ray_dump(s: &Settings, view: usize, (px, py): (usize, usize)) -> Result<(), CliError> {
    let cam = test_camera(s, view)?;
    if px >= cam.width() || py >= cam.height() {
        return Err(CliError::Config(format!("--pixel {px},{py} outside the {}x{} image", cam.width(), cam.height())));
    }
    let volume = load_volume(s)?;
    ensure_dir(&s.out_dir)?;
    let cfg = resolve_dt(s, Some(&volume), s.sampler, std::slice::from_ref(cam))?;
    let smp = sampler(s, Some(&volume), cfg)?;
    let ray = cam.pixel_ray(px, py)?;
    let detail = smp.render_detailed(&s.scene, &ray)?;

    let voxel_at = |t: f64| volume.voxel_of(&ray.at(t)).ok().and_then(|i| volume.get(i).ok());
    let mut rows = Vec::new();
    if let Some(tr) = &detail.trace {
        for (i, e) in tr.samples.iter().enumerate() {
            rows.push(DumpRow {
                t: e.t,
                voxel: voxel_at(e.t),
                sdf: e.sample.sdf,
                sigma: tr.sigmas[i],
                weight: Some(tr.weights[i]),
                tag: e.tag.as_str(),
            });
        }
    }
    if let Some((g0, g1)) = detail.global {
        for i in 0..PROFILE_POINTS {
            let t = g0 + (i as f64 + 0.5) * (g1 - g0) / PROFILE_POINTS as f64;
            let sdf = s.scene.sdf(&ray.at(t));
            rows.push(DumpRow {
                t,
                voxel: voxel_at(t),
                sdf,
                sigma: sdf_to_density(sdf, &s.density),
                weight: None,
                tag: "profile",
            });
        }
    }
    rows.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.tag.cmp(b.tag)));

    let mut csv = String::from("t,voxel_value,voxel_weight,field_sdf,sigma,weight,tag\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            fmt_f64(r.t),
            opt_cell(r.voxel.map(|v| v.0 as f64)),
            opt_cell(r.voxel.map(|v| v.1 as f64)),
            fmt_f64(r.sdf),
            fmt_f64(r.sigma),
            opt_cell(r.weight),
            r.tag
        );
    }
    let stem = format!("ray_{view}_{px}_{py}");
    write_file(&s.out_dir.join(format!("{stem}.csv")), &csv)?;

    let found = detail.bounds.filter(|b| b.is_found());
    let status = match (&detail.global, &detail.bounds) {
        (None, _) => "outside_grid",
        (Some(_), Some(b)) if b.is_found() => "found",
        (Some(_), Some(_)) => "no_surface",
        (Some(_), None) => "unbounded",
    };
    let result = &detail.outcome.result;
    let bounds_csv = format!(
        "status,t_near,t_far,global_near,global_far,dt_target_m,recovered,weight_sum,queries,depth\n{status},{},{},{},{},{},{},{},{},{}\n",
        opt_cell(found.map(|b| b.t_near)),
        opt_cell(found.map(|b| b.t_far)),
        opt_cell(detail.global.map(|g| g.0)),
        opt_cell(detail.global.map(|g| g.1)),
        fmt_f64(cfg.dt_target),
        detail.outcome.recovered,
        fmt_f64(result.weight_sum),
        result.queries,
        opt_cell(result.depth),
    );
    write_file(&s.out_dir.join(format!("{stem}_bounds.csv")), &bounds_csv)?;

    let rgb = dump_plot(&rows, detail.global, found.map(|b| (b.t_near, b.t_far)), s.tsdf.truncation)
        .render(PLOT_SIZE.0, PLOT_SIZE.1);
    let path = s.out_dir.join(format!("{stem}.png"));
    io::write_png_rgb8(&path, PLOT_SIZE.0, PLOT_SIZE.1, &rgb).map_err(|e| core_at(&path, e))?;
    println!(
        "ray {view} ({px},{py}): {status}, {} samples, weight sum {}, recovered {}",
        rows.iter().filter(|r| r.tag != "profile").count(),
        fmt_f64(result.weight_sum),
        detail.outcome.recovered
    );
    Ok(())
}

/// Voxel values and field distances are scaled by the truncation distance,
/// density and weights by their maxima.
fn dump_plot(rows: &[DumpRow], global: Option<(f64, f64)>, bounds: Option<(f64, f64)>, truncation: f64) -> Plot {
    let profile: Vec<&DumpRow> = rows.iter().filter(|r| r.tag == "profile").collect();
    let samples: Vec<&DumpRow> = rows.iter().filter(|r| r.tag != "profile").collect();
    let max_sigma = profile.iter().map(|r| r.sigma).fold(0.0, f64::max);
    let max_weight = samples.iter().filter_map(|r| r.weight).fold(0.0, f64::max);
    let scaled = |x: f64, m: f64| if m > 0.0 { x / m } else { 0.0 };
    let mut series = vec![
        Series {
            points: profile.iter().filter_map(|r| r.voxel.map(|v| (r.t, v.0 as f64 / truncation))).collect(),
            color: [30, 80, 220],
        },
        Series { points: profile.iter().map(|r| (r.t, r.sdf / truncation)).collect(), color: [40, 160, 60] },
        Series { points: profile.iter().map(|r| (r.t, scaled(r.sigma, max_sigma))).collect(), color: [240, 140, 0] },
    ];
    series.push(Series {
        points: samples.iter().map(|r| (r.t, scaled(r.weight.unwrap_or(0.0), max_weight))).collect(),
        color: [200, 30, 30],
    });
    let markers = samples
        .iter()
        .map(|r| (r.t, if r.tag == SampleTag::Coarse.as_str() { plot::CYAN } else { plot::MAGENTA }))
        .collect();
    let vlines = bounds.map_or_else(Vec::new, |(a, b)| vec![(a, plot::BLACK), (b, plot::BLACK)]);
    Plot { t_range: global.unwrap_or((0.0, 1.0)), series, vlines, markers }
}
