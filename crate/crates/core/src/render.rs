//! Numeric volume rendering along a ray.
//!
//! For sorted samples `t_1 < ... < t_m` inside a bound `[t_n, t_f]`:
//! `alpha_i = 1 - exp(-sigma_i dt_i)`, `T_i = prod_{j<i} (1 - alpha_j)`,
//! `w_i = T_i alpha_i`. Color is `sum w_i c_i` plus residual transmittance
//! over the background, depth is the weight-normalized mean of `t_i`, and the
//! normal is the normalized weighted sum of field gradients. The last segment
//! length is `t_f - t_m`.

use rayon::prelude::*;

use crate::error::{DomainError, Result};
use crate::field::{sdf_to_density, DensityParams, Field, FieldSample};
use crate::geometry::{PinholeCamera, Ray, Vec3};
use crate::image::{DepthMap, Image, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleTag {
    Coarse,
    Fine,
}

impl SampleTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleTag::Coarse => "coarse",
            SampleTag::Fine => "fine",
        }
    }
}

/// Strictly increasing sample parameters inside `[near, far]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    ts: Vec<f64>,
    tags: Vec<SampleTag>,
    near: f64,
    far: f64,
}

impl SampleSet {
    pub fn new(ts: Vec<f64>, tags: Vec<SampleTag>, near: f64, far: f64) -> Result<Self, DomainError> {
        if ts.len() != tags.len() {
            return Err(DomainError::new("sample and tag counts differ"));
        }
        if !(near.is_finite() && far.is_finite() && near <= far) {
            return Err(DomainError::new(format!("invalid sample bound [{near}, {far}]")));
        }
        if ts.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(DomainError::new("sample parameters must be strictly increasing"));
        }
        if let (Some(first), Some(last)) = (ts.first(), ts.last()) {
            if *first < near || *last > far {
                return Err(DomainError::new("samples fall outside their bound"));
            }
        }
        Ok(Self { ts, tags, near, far })
    }

    pub fn ts(&self) -> &[f64] {
        &self.ts
    }

    pub fn tags(&self) -> &[SampleTag] {
        &self.tags
    }

    pub fn near(&self) -> f64 {
        self.near
    }

    pub fn far(&self) -> f64 {
        self.far
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    /// Sorted union; values already present in `self` are not duplicated.
    pub fn merge(&self, other: &SampleSet) -> Result<SampleSet, DomainError> {
        let near = self.near.min(other.near);
        let far = self.far.max(other.far);
        let mut pairs: Vec<(f64, SampleTag)> = self.ts.iter().copied().zip(self.tags.iter().copied()).collect();
        pairs.extend(other.ts.iter().copied().zip(other.tags.iter().copied()));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1 == SampleTag::Fine).cmp(&(b.1 == SampleTag::Fine))));
        pairs.dedup_by(|b, a| a.0 == b.0);
        let (ts, tags) = pairs.into_iter().unzip();
        SampleSet::new(ts, tags, near, far)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayRenderResult {
    pub color: [f64; 3],
    pub depth: Option<f64>,
    pub normal: Option<Vec3>,
    pub weight_sum: f64,
    /// Field (sdf + color) evaluations.
    pub queries: usize,
    /// Gradient evaluations for normal rendering.
    pub normal_queries: usize,
}

impl RayRenderResult {
    /// Result for a ray that never queried the field.
    pub fn background(background: [f64; 3]) -> Self {
        Self { color: background, depth: None, normal: None, weight_sum: 0.0, queries: 0, normal_queries: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub background: [f64; 3],
    /// Only samples with `w_i` above this get a gradient evaluation.
    pub normal_weight_threshold: f64,
    pub normals: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { background: [0.0; 3], normal_weight_threshold: 1e-4, normals: true }
    }
}

#[inline]
pub fn segment_alpha(sigma: f64, dt: f64) -> f64 {
    1.0 - (-sigma * dt).exp()
}

/// Returns `(weights, weight_sum)` for per-segment opacities.
pub fn compose_weights(alphas: &[f64]) -> (Vec<f64>, f64) {
    let mut transmittance = 1.0;
    let mut weights = Vec::with_capacity(alphas.len());
    for a in alphas {
        weights.push(transmittance * a);
        transmittance *= 1.0 - a;
    }
    let sum = weights.iter().sum();
    (weights, sum)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluatedSample {
    pub t: f64,
    pub tag: SampleTag,
    pub sample: FieldSample,
}

/// Evaluates the field at every sample of `set`.
pub fn evaluate(field: &dyn Field, ray: &Ray, set: &SampleSet) -> Vec<EvaluatedSample> {
    set.ts()
        .iter()
        .zip(set.tags())
        .map(|(&t, &tag)| EvaluatedSample { t, tag, sample: field.eval(&ray.at(t), &ray.dir) })
        .collect()
}

/// Per-sample quantities of one composited ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayTrace {
    pub samples: Vec<EvaluatedSample>,
    pub sigmas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub transmittance: Vec<f64>,
    pub weights: Vec<f64>,
    pub weight_sum: f64,
}

/// Composites evaluated samples; they are sorted by `t` first so evaluation
/// order never affects the result.
pub fn trace(mut samples: Vec<EvaluatedSample>, far: f64, params: &DensityParams) -> RayTrace {
    samples.sort_by(|a, b| a.t.total_cmp(&b.t));
    let m = samples.len();
    let mut sigmas = Vec::with_capacity(m);
    let mut alphas = Vec::with_capacity(m);
    for (i, s) in samples.iter().enumerate() {
        let next = if i + 1 < m { samples[i + 1].t } else { far };
        let dt = (next - s.t).max(0.0);
        let sigma = sdf_to_density(s.sample.sdf, params);
        sigmas.push(sigma);
        alphas.push(if dt > 0.0 { segment_alpha(sigma, dt) } else { 0.0 });
    }
    let mut transmittance = Vec::with_capacity(m);
    let mut t_acc = 1.0;
    for a in &alphas {
        transmittance.push(t_acc);
        t_acc *= 1.0 - a;
    }
    let (weights, weight_sum) = compose_weights(&alphas);
    RayTrace { samples, sigmas, alphas, transmittance, weights, weight_sum }
}

/// Turns a trace into color, depth and normal, evaluating gradients where
/// the weight exceeds the configured threshold.
pub fn shade(field: &dyn Field, ray: &Ray, trace: &RayTrace, opts: &RenderOptions) -> RayRenderResult {
    let mut color = [0.0; 3];
    let mut depth_acc = 0.0;
    let mut normal_acc = Vec3::zeros();
    let mut normal_queries = 0;
    for (s, &w) in trace.samples.iter().zip(&trace.weights) {
        for c in 0..3 {
            color[c] += w * s.sample.color[c];
        }
        depth_acc += w * s.t;
        if opts.normals && w > opts.normal_weight_threshold {
            normal_queries += 1;
            if let Ok(n) = field.normal(&ray.at(s.t)) {
                normal_acc += w * n;
            }
        }
    }
    let residual = (1.0 - trace.weight_sum).max(0.0);
    for c in 0..3 {
        color[c] += residual * opts.background[c];
    }
    let (depth, normal) = if trace.weight_sum > 0.0 {
        let n = normal_acc.norm();
        (Some(depth_acc / trace.weight_sum), (n > 0.0).then(|| normal_acc / n))
    } else {
        (None, None)
    };
    RayRenderResult { color, depth, normal, weight_sum: trace.weight_sum, queries: trace.samples.len(), normal_queries }
}

/// Renders one ray over an explicit sample set.
pub fn render_ray(
    field: &dyn Field,
    ray: &Ray,
    samples: &SampleSet,
    params: &DensityParams,
    opts: &RenderOptions,
) -> Result<RayRenderResult> {
    if samples.is_empty() {
        return Err(DomainError::new("cannot render an empty sample set").into());
    }
    let tr = trace(evaluate(field, ray, samples), samples.far(), params);
    Ok(shade(field, ray, &tr, opts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayOutcome {
    pub result: RayRenderResult,
    pub recovered: bool,
}

/// A complete per-ray sampling + rendering strategy.
pub trait RaySampler: Sync {
    fn render(&self, field: &dyn Field, ray: &Ray) -> Result<RayOutcome>;
}

/// Sentinel color for pixels whose ray failed to render.
pub const ERROR_COLOR: [f64; 3] = [1.0, 0.0, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub color: RgbImage,
    pub depth: DepthMap,
    pub normal: Image<Option<Vec3>>,
    pub weight_sum: Image<f64>,
    pub samples: Image<u32>,
    pub total_queries: u64,
    pub normal_queries: u64,
    pub recoveries: u64,
    pub errors: u64,
}

impl Frame {
    pub fn rays(&self) -> usize {
        self.color.len()
    }

    /// Field queries per ray, recovery passes included.
    pub fn avg_samples(&self) -> f64 {
        self.total_queries as f64 / self.rays().max(1) as f64
    }

    pub fn recovery_fraction(&self) -> f64 {
        self.recoveries as f64 / self.rays().max(1) as f64
    }
}

/// Renders every pixel center of `camera`; rows are evaluated in parallel and
/// assembled in row-major order.
pub fn render_image(field: &dyn Field, camera: &PinholeCamera, sampler: &dyn RaySampler) -> Frame {
    let (w, h) = (camera.width(), camera.height());
    let rows: Vec<Vec<Option<RayOutcome>>> = (0..h)
        .into_par_iter()
        .map(|y| (0..w).map(|x| camera.pixel_ray(x, y).ok().and_then(|ray| sampler.render(field, &ray).ok())).collect())
        .collect();
    let outcomes: Vec<Option<RayOutcome>> = rows.into_iter().flatten().collect();

    let mut frame = Frame {
        color: Image::filled(w, h, [0.0; 3]),
        depth: Image::filled(w, h, None),
        normal: Image::filled(w, h, None),
        weight_sum: Image::filled(w, h, 0.0),
        samples: Image::filled(w, h, 0),
        total_queries: 0,
        normal_queries: 0,
        recoveries: 0,
        errors: 0,
    };
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        let (x, y) = (idx % w, idx / w);
        match outcome {
            Some(o) => {
                let r = o.result;
                *frame.color.get_mut(x, y) = r.color;
                *frame.depth.get_mut(x, y) = r.depth;
                *frame.normal.get_mut(x, y) = r.normal;
                *frame.weight_sum.get_mut(x, y) = r.weight_sum;
                *frame.samples.get_mut(x, y) = r.queries as u32;
                frame.total_queries += r.queries as u64;
                frame.normal_queries += r.normal_queries as u64;
                frame.recoveries += o.recovered as u64;
            }
            None => {
                *frame.color.get_mut(x, y) = ERROR_COLOR;
                frame.errors += 1;
            }
        }
    }
    frame
}
