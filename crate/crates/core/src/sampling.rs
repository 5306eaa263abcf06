//! Sample placement along a ray: uniform, hierarchical coarse/fine, and the
//! TSDF-bounded strategies with adaptive counts and full-range recovery.

use std::str::FromStr;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DomainError, Result};
use crate::field::{splitmix64, DensityParams, Field};
use crate::geometry::{clip_to_bounds, GridBounds, Ray};
use crate::render::{
    evaluate, shade, trace, RayOutcome, RayRenderResult, RaySampler, RayTrace, RenderOptions, SampleSet, SampleTag,
};
use crate::tsdf::{SampleBounds, TsdfConfig, TsdfVolume};

/// Floor added to every coarse weight before normalizing the fine-pass PDF.
pub const PDF_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Uniform,
    Hierarchical,
    TsdfNaive,
    TsdfFull,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] =
        [SamplerKind::Uniform, SamplerKind::Hierarchical, SamplerKind::TsdfNaive, SamplerKind::TsdfFull];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::Hierarchical => "hierarchical",
            SamplerKind::TsdfNaive => "tsdf_naive",
            SamplerKind::TsdfFull => "tsdf_full",
        }
    }

    pub fn needs_volume(self) -> bool {
        matches!(self, SamplerKind::TsdfNaive | SamplerKind::TsdfFull)
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            DomainError::new(format!("unknown sampler '{s}' (expected uniform, hierarchical, tsdf_naive or tsdf_full)"))
        })
    }
}

/// How the fine pass of the bounded samplers is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineMode {
    /// Inverse-CDF of the coarse weights inside the bound.
    Importance,
    /// No fine pass; coarse and fine budgets are spent as one uniform pass.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub n_coarse: usize,
    pub n_fine: usize,
    /// Target coarse spacing for adaptive counts (meters).
    pub dt_target: f64,
    pub n_min: usize,
    pub n_max: usize,
    /// Weight-sum threshold below which a bounded ray is re-rendered over
    /// the global range; `0` disables recovery.
    pub tau: f64,
    pub recovery_samples: usize,
    pub recovery_fine: usize,
    pub t_near: f64,
    pub t_far: f64,
    /// Jittered instead of midpoint quantiles in the inverse-CDF pass.
    pub jitter: bool,
    pub seed: u64,
    pub fine_mode: FineMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::TsdfFull,
            n_coarse: 6,
            n_fine: 6,
            dt_target: 0.05,
            n_min: 2,
            n_max: 64,
            tau: 0.95,
            recovery_samples: 64,
            recovery_fine: 32,
            t_near: 0.05,
            t_far: 6.0,
            jitter: false,
            seed: 0,
            fine_mode: FineMode::Importance,
        }
    }
}

impl SamplerConfig {
    pub fn with_kind(mut self, kind: SamplerKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_budget(mut self, n_coarse: usize, n_fine: usize) -> Self {
        self.n_coarse = n_coarse;
        self.n_fine = n_fine;
        self
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.n_coarse == 0 || self.n_min == 0 || self.recovery_samples == 0 {
            return Err(DomainError::new("n_coarse, n_min and recovery_samples must be >= 1"));
        }
        if self.n_min > self.n_max {
            return Err(DomainError::new("n_min must not exceed n_max"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(DomainError::new("tau must lie in [0, 1]"));
        }
        if !(self.dt_target > 0.0 && self.dt_target.is_finite()) {
            return Err(DomainError::new("dt_target must be positive"));
        }
        if !(self.t_near >= 0.0 && self.t_near < self.t_far && self.t_far.is_finite()) {
            return Err(DomainError::new("global range must satisfy 0 <= t_near < t_far < inf"));
        }
        Ok(())
    }
}

/// Midpoint-stratified samples `t_n + (i + 0.5) (t_f - t_n) / n`.
pub fn uniform_samples(t_n: f64, t_f: f64, n: usize) -> Result<SampleSet, DomainError> {
    if !(t_n < t_f && t_n.is_finite() && t_f.is_finite()) {
        return Err(DomainError::new(format!("inverted sample range [{t_n}, {t_f}]")));
    }
    if n == 0 {
        return Err(DomainError::new("sample count must be >= 1"));
    }
    let step = (t_f - t_n) / n as f64;
    let mut ts: Vec<f64> = (0..n).map(|i| t_n + (i as f64 + 0.5) * step).collect();
    ts.dedup();
    let tags = vec![SampleTag::Coarse; ts.len()];
    SampleSet::new(ts, tags, t_n, t_f)
}

/// Bin edges around each sample: midpoints between neighbors, closed by
/// `near` and `far`.
pub fn bin_edges(ts: &[f64], near: f64, far: f64) -> Vec<f64> {
    let mut edges = Vec::with_capacity(ts.len() + 1);
    edges.push(near);
    edges.extend(ts.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    edges.push(far);
    edges
}

/// Normalized bin masses `(w_i + eps) / sum`.
pub fn bin_masses(weights: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = weights.iter().map(|w| w.max(0.0) + PDF_EPSILON).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|w| w / total).collect()
}

/// `n` stratified quantiles: `(j + 0.5) / n`, or `(j + U) / n` when an RNG
/// is supplied.
pub fn quantiles<R: Rng + ?Sized>(n: usize, rng: Option<&mut R>) -> Vec<f64> {
    match rng {
        None => (0..n).map(|j| (j as f64 + 0.5) / n as f64).collect(),
        Some(rng) => (0..n).map(|j| (j as f64 + rng.random::<f64>()) / n as f64).collect(),
    }
}

/// Inverts the piecewise-constant PDF defined by `weights` over the bins of
/// `ts` at each quantile in `us` (which must be sorted).
pub fn inverse_cdf(ts: &[f64], weights: &[f64], near: f64, far: f64, us: &[f64]) -> Result<Vec<f64>, DomainError> {
    if ts.len() != weights.len() || ts.is_empty() {
        return Err(DomainError::new("weights must match a non-empty sample list"));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(DomainError::new("weights must be nonnegative"));
    }
    let edges = bin_edges(ts, near, far);
    let masses = bin_masses(weights);
    let mut cdf = Vec::with_capacity(masses.len() + 1);
    let mut acc = 0.0;
    cdf.push(0.0);
    for m in &masses {
        acc += m;
        cdf.push(acc);
    }
    let last = masses.len() - 1;
    Ok(us
        .iter()
        .map(|&u| {
            let i = (cdf.partition_point(|c| *c <= u).max(1) - 1).min(last);
            let frac = ((u - cdf[i]) / masses[i]).clamp(0.0, 1.0);
            (edges[i] + frac * (edges[i + 1] - edges[i])).clamp(edges[i], edges[i + 1])
        })
        .collect())
}

/// Fine samples from the coarse weights, merged with the coarse set.
pub fn importance_resample<R: Rng + ?Sized>(
    coarse: &SampleSet,
    weights: &[f64],
    n_fine: usize,
    rng: Option<&mut R>,
) -> Result<SampleSet, DomainError> {
    if n_fine == 0 {
        return Ok(coarse.clone());
    }
    let us = quantiles(n_fine, rng);
    let mut fine = inverse_cdf(coarse.ts(), weights, coarse.near(), coarse.far(), &us)?;
    fine.dedup();
    let tags = vec![SampleTag::Fine; fine.len()];
    let fine = SampleSet::new(fine, tags, coarse.near(), coarse.far())?;
    coarse.merge(&fine)
}

/// Per-ray coarse count proportional to the bound length.
pub fn adaptive_count(range_len: f64, cfg: &SamplerConfig) -> usize {
    let n = (range_len.max(0.0) / cfg.dt_target).ceil();
    if n >= cfg.n_max as f64 {
        cfg.n_max
    } else {
        (n as usize).clamp(cfg.n_min, cfg.n_max)
    }
}

/// Fine count scaled by the same factor as the adaptive coarse count.
pub fn scaled_fine(n_coarse_ray: usize, cfg: &SamplerConfig) -> usize {
    (cfg.n_fine as f64 * n_coarse_ray as f64 / cfg.n_coarse as f64).round() as usize
}

/// Everything a sampler decided for one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayDetail {
    /// Configured range clipped to the rendering cube; `None` if the ray
    /// misses it.
    pub global: Option<(f64, f64)>,
    /// Detected bound (bounded samplers only).
    pub bounds: Option<SampleBounds>,
    /// Samples and composited trace of the pass whose result was kept.
    pub samples: Option<SampleSet>,
    pub trace: Option<RayTrace>,
    pub outcome: RayOutcome,
}

/// A configured sampler, ready to render rays of one field.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    config: SamplerConfig,
    density: DensityParams,
    options: RenderOptions,
    cube: Option<GridBounds>,
    volume: Option<(&'a TsdfVolume, TsdfConfig)>,
}

impl<'a> Sampler<'a> {
    /// Unbounded sampler (`uniform` or `hierarchical`).
    pub fn new(config: SamplerConfig, density: DensityParams, options: RenderOptions) -> Result<Self, DomainError> {
        config.validate()?;
        if config.kind.needs_volume() {
            return Err(DomainError::new(format!("sampler {} needs a fused volume", config.kind)));
        }
        Ok(Self { config, density, options, cube: None, volume: None })
    }

    /// Any sampler kind, with a fused volume available; rays are clipped to
    /// the volume's bounds.
    pub fn with_volume(
        config: SamplerConfig,
        volume: &'a TsdfVolume,
        tsdf: TsdfConfig,
        density: DensityParams,
        options: RenderOptions,
    ) -> Result<Self, DomainError> {
        config.validate()?;
        tsdf.validate()?;
        Ok(Self { config, density, options, cube: Some(*volume.bounds()), volume: Some((volume, tsdf)) })
    }

    /// Clips every global range to `cube`.
    pub fn clipped_to(mut self, cube: GridBounds) -> Self {
        self.cube = Some(cube);
        self
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn global_range(&self, ray: &Ray) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (self.config.t_near, self.config.t_far);
        if let Some(cube) = &self.cube {
            let (a, b) = clip_to_bounds(ray, cube)?;
            lo = lo.max(a);
            hi = hi.min(b);
        }
        (lo < hi).then_some((lo, hi))
    }

    fn ray_rng(&self, ray: &Ray) -> Option<ChaCha8Rng> {
        if !self.config.jitter {
            return None;
        }
        let mut h = splitmix64(self.config.seed);
        for c in ray.origin.iter().chain(ray.dir.iter()) {
            h = splitmix64(h ^ c.to_bits());
        }
        Some(ChaCha8Rng::seed_from_u64(h))
    }

    /// Coarse pass over `[near, far]`, then (optionally) an inverse-CDF fine
    /// pass; coarse evaluations are reused.
    #[allow(clippy::too_many_arguments)]
    fn two_pass(
        &self,
        field: &dyn Field,
        ray: &Ray,
        (near, far): (f64, f64),
        n_coarse: usize,
        n_fine: usize,
        fine_mode: FineMode,
        rng: &mut Option<ChaCha8Rng>,
    ) -> Result<(SampleSet, RayTrace)> {
        if fine_mode == FineMode::Uniform || n_fine == 0 {
            let set = uniform_samples(near, far, n_coarse + n_fine)?;
            let tr = trace(evaluate(field, ray, &set), far, &self.density);
            return Ok((set, tr));
        }
        let coarse = uniform_samples(near, far, n_coarse)?;
        let coarse_eval = evaluate(field, ray, &coarse);
        let coarse_trace = trace(coarse_eval.clone(), far, &self.density);
        let merged = importance_resample(&coarse, &coarse_trace.weights, n_fine, rng.as_mut())?;
        let fine_only: Vec<f64> = merged
            .ts()
            .iter()
            .zip(merged.tags())
            .filter(|(_, tag)| **tag == SampleTag::Fine)
            .map(|(t, _)| *t)
            .collect();
        let fine_set = SampleSet::new(fine_only.clone(), vec![SampleTag::Fine; fine_only.len()], near, far)?;
        let mut all = coarse_eval;
        all.extend(evaluate(field, ray, &fine_set));
        let tr = trace(all, far, &self.density);
        Ok((merged, tr))
    }

    pub fn render_detailed(&self, field: &dyn Field, ray: &Ray) -> Result<RayDetail> {
        let cfg = &self.config;
        let background =
            || RayOutcome { result: RayRenderResult::background(self.options.background), recovered: false };
        let Some(global) = self.global_range(ray) else {
            return Ok(RayDetail { global: None, bounds: None, samples: None, trace: None, outcome: background() });
        };
        let mut rng = self.ray_rng(ray);
        let finish = |set: SampleSet, tr: RayTrace, extra_queries: usize, recovered: bool, bounds| {
            let mut result = shade(field, ray, &tr, &self.options);
            result.queries += extra_queries;
            RayDetail {
                global: Some(global),
                bounds,
                samples: Some(set),
                trace: Some(tr),
                outcome: RayOutcome { result, recovered },
            }
        };
        match cfg.kind {
            SamplerKind::Uniform => {
                let (set, tr) =
                    self.two_pass(field, ray, global, cfg.n_coarse + cfg.n_fine, 0, FineMode::Uniform, &mut rng)?;
                Ok(finish(set, tr, 0, false, None))
            }
            SamplerKind::Hierarchical => {
                let (set, tr) =
                    self.two_pass(field, ray, global, cfg.n_coarse, cfg.n_fine, FineMode::Importance, &mut rng)?;
                Ok(finish(set, tr, 0, false, None))
            }
            SamplerKind::TsdfNaive | SamplerKind::TsdfFull => {
                let (volume, tsdf) = self
                    .volume
                    .ok_or_else(|| DomainError::new(format!("sampler {} needs a fused volume", cfg.kind)))?;
                let bounds = volume.detect_bounds(ray, &tsdf, global.1)?;
                let range = if bounds.is_found() {
                    let near = bounds.t_near.max(global.0);
                    let far = bounds.t_far.min(global.1);
                    (near < far).then_some((near, far))
                } else {
                    None
                };
                let primary = match range {
                    Some(r) => {
                        let (n_c, n_f) = if cfg.kind == SamplerKind::TsdfFull {
                            let n_c = adaptive_count(r.1 - r.0, cfg);
                            (n_c, scaled_fine(n_c, cfg))
                        } else {
                            (cfg.n_coarse, cfg.n_fine)
                        };
                        Some(self.two_pass(field, ray, r, n_c, n_f, cfg.fine_mode, &mut rng)?)
                    }
                    None => None,
                };
                let needs_recovery = cfg.tau > 0.0 && primary.as_ref().is_none_or(|(_, tr)| tr.weight_sum < cfg.tau);
                if !needs_recovery {
                    return Ok(match primary {
                        Some((set, tr)) => finish(set, tr, 0, false, Some(bounds)),
                        None => RayDetail {
                            global: Some(global),
                            bounds: Some(bounds),
                            samples: None,
                            trace: None,
                            outcome: background(),
                        },
                    });
                }
                let (rset, rtr) = self.two_pass(
                    field,
                    ray,
                    global,
                    cfg.recovery_samples,
                    cfg.recovery_fine,
                    FineMode::Importance,
                    &mut rng,
                )?;
                match primary {
                    Some((set, tr)) if tr.weight_sum >= rtr.weight_sum => {
                        let extra = rtr.samples.len();
                        Ok(finish(set, tr, extra, true, Some(bounds)))
                    }
                    Some((_, tr)) => {
                        let extra = tr.samples.len();
                        Ok(finish(rset, rtr, extra, true, Some(bounds)))
                    }
                    None => Ok(finish(rset, rtr, 0, true, Some(bounds))),
                }
            }
        }
    }
}

impl RaySampler for Sampler<'_> {
    fn render(&self, field: &dyn Field, ray: &Ray) -> Result<RayOutcome> {
        Ok(self.render_detailed(field, ray)?.outcome)
    }
}

/// Coarse spacing that makes the adaptive sampler match the naive one's
/// coarse budget on `rays`: starts from mean bound length / `n_coarse` and
/// widens until the mean adaptive count does not exceed `n_coarse`. Returns
/// `None` if no ray has a bound.
pub fn calibrate_dt_target(volume: &TsdfVolume, tsdf: &TsdfConfig, rays: &[Ray], cfg: &SamplerConfig) -> Option<f64> {
    let lens: Vec<f64> = rays
        .iter()
        .filter_map(|ray| {
            let (a, b) = clip_to_bounds(ray, volume.bounds())?;
            let (g0, g1) = (cfg.t_near.max(a), cfg.t_far.min(b));
            if g0 >= g1 {
                return None;
            }
            let bd = volume.detect_bounds(ray, tsdf, g1).ok()?;
            let (near, far) = (bd.t_near.max(g0), bd.t_far.min(g1));
            (bd.is_found() && near < far).then_some(far - near)
        })
        .collect();
    if lens.is_empty() {
        return None;
    }
    let mean = lens.iter().sum::<f64>() / lens.len() as f64;
    let mean_count = |dt: f64| {
        let c = SamplerConfig { dt_target: dt, ..*cfg };
        lens.iter().map(|l| adaptive_count(*l, &c) as f64).sum::<f64>() / lens.len() as f64
    };
    let target = cfg.n_coarse as f64;
    let mut lo = mean / target;
    if mean_count(lo) <= target {
        return Some(lo);
    }
    let mut hi = lo * 2.0;
    while mean_count(hi) > target && hi < 1e6 * lo {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mean_count(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}
