mod common;

use std::collections::BTreeSet;
use std::sync::OnceLock;

use common::fused_sphere;
use proptest::prelude::*;
use tsdf_core::field::DensityParams;
use tsdf_core::geometry::{clip_to_bounds, GridBounds, Intrinsics, PinholeCamera, Ray, Vec3};
use tsdf_core::presets::sphere_scene;
use tsdf_core::render::{render_image, RenderOptions};
use tsdf_core::sampling::{adaptive_count, calibrate_dt_target, scaled_fine, Sampler, SamplerConfig, SamplerKind};
use tsdf_core::tsdf::{TsdfConfig, TsdfVolume};

fn sphere_volume() -> &'static TsdfVolume {
    static VOL: OnceLock<TsdfVolume> = OnceLock::new();
    VOL.get_or_init(|| fused_sphere(32))
}

/// Ray from a random point of the 3x3x3 box around the unit cube, aimed at a
/// random point inside it.
fn ray_into_cube() -> impl Strategy<Value = Ray> {
    (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(-0.9..0.9f64)).prop_filter_map(
        "coincident",
        |(o, p)| {
            let (o, p) = (Vec3::from(o), Vec3::from(p));
            Ray::new(o, p - o).ok()
        },
    )
}

/// Voxels whose box overlaps the clipped ray over a positive length.
fn slab_oracle(vol: &TsdfVolume, ray: &Ray) -> BTreeSet<[usize; 3]> {
    let mut out = BTreeSet::new();
    let Some((t0, t1)) = clip_to_bounds(ray, vol.bounds()) else { return out };
    let [nx, ny, nz] = vol.dims();
    let voxel = vol.voxel();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let lo = vol.bounds().min + Vec3::new(i as f64 * voxel.x, j as f64 * voxel.y, k as f64 * voxel.z);
                let b = GridBounds::new(lo, lo + voxel).unwrap();
                if let Some((a, c)) = clip_to_bounds(ray, &b) {
                    if c.min(t1) - a.max(t0) > 1e-9 {
                        out.insert([i, j, k]);
                    }
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn walk_visits_exactly_the_crossed_voxels(ray in ray_into_cube(), res in 2usize..12) {
        let vol = TsdfVolume::cubic(GridBounds::cube(Vec3::zeros(), 1.0).unwrap(), res, 0.1).unwrap();
        let walked: Vec<[usize; 3]> = vol.walk(&ray).map(|(i, _)| i).collect();
        let set: BTreeSet<_> = walked.iter().copied().collect();
        prop_assert_eq!(set.len(), walked.len());
        prop_assert_eq!(set, slab_oracle(&vol, &ray));
    }

    #[test]
    fn fused_values_stay_in_band_and_weights_grow(
        rays in prop::collection::vec((ray_into_cube(), 0.2..5.0f64), 1..20),
        trunc in 0.05..0.6f64,
    ) {
        let mut vol = TsdfVolume::cubic(GridBounds::cube(Vec3::zeros(), 1.0).unwrap(), 10, trunc).unwrap();
        for (ray, depth) in rays {
            let before = vol.weights().to_vec();
            vol.integrate_ray(&ray, depth).unwrap();
            for (a, b) in before.iter().zip(vol.weights()) {
                prop_assert!(b >= a);
            }
            for (v, w) in vol.values().iter().zip(vol.weights()) {
                if *w > 0.0 {
                    prop_assert!((v.abs() as f64) <= trunc + 1e-6);
                }
            }
        }
    }

    #[test]
    fn wider_truncation_never_narrows_values(ray in ray_into_cube(), depth in 0.2..5.0f64, d1 in 0.05..1.0f64, extra in 0.0..2.0f64) {
        let bounds = GridBounds::cube(Vec3::zeros(), 1.0).unwrap();
        let mut a = TsdfVolume::cubic(bounds, 8, d1).unwrap();
        let mut b = TsdfVolume::cubic(bounds, 8, d1 + extra).unwrap();
        a.integrate_ray(&ray, depth).unwrap();
        b.integrate_ray(&ray, depth).unwrap();
        for i in 0..a.voxel_count() {
            if a.weights()[i] > 0.0 && b.weights()[i] > 0.0 {
                prop_assert!(a.values()[i].abs() <= b.values()[i].abs() + 1e-6);
            }
        }
    }

    #[test]
    fn huge_truncation_keeps_exact_front_distances(ray in ray_into_cube(), depth in 0.2..5.0f64) {
        let mut vol = TsdfVolume::cubic(GridBounds::cube(Vec3::zeros(), 1.0).unwrap(), 8, 10.0).unwrap();
        vol.integrate_ray(&ray, depth).unwrap();
        let surface = ray.at(depth);
        for (idx, _) in vol.walk(&ray) {
            let (v, w) = vol.get(idx).unwrap();
            if w > 0.0 && v >= 0.0 {
                let exact = ray.dir.dot(&(surface - vol.voxel_center(idx).unwrap()));
                prop_assert!((v as f64 - exact).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn found_bounds_are_ordered_inside_the_grid(ray in ray_into_cube(), far in 0.5..8.0f64) {
        let vol = sphere_volume();
        let cfg = TsdfConfig::accurate(vol.voxel_size());
        let b = vol.detect_bounds(&ray, &cfg, far).unwrap();
        let (t0, t1) = clip_to_bounds(&ray, vol.bounds()).unwrap();
        if b.is_found() {
            prop_assert!(b.t_near < b.t_far);
            prop_assert!(b.t_near >= t0 - 1e-9);
            prop_assert!(b.t_far <= t1.min(far) + 1e-9);
        }
    }

    #[test]
    fn samplers_are_deterministic_sorted_and_bounded(ray in ray_into_cube(), kind in 0usize..4, jitter in any::<bool>()) {
        let vol = sphere_volume();
        let kind = SamplerKind::ALL[kind];
        let cfg = SamplerConfig { jitter, t_near: 0.0, t_far: 8.0, ..SamplerConfig::default() }.with_kind(kind).with_budget(8, 8);
        let s = Sampler::with_volume(cfg, vol, TsdfConfig::accurate(vol.voxel_size()), DensityParams::default(), RenderOptions::default()).unwrap();
        let a = s.render_detailed(&sphere_scene(), &ray).unwrap();
        let b = s.render_detailed(&sphere_scene(), &ray).unwrap();
        prop_assert_eq!(&a.samples, &b.samples);
        prop_assert_eq!(&a.outcome, &b.outcome);
        if let Some(set) = &a.samples {
            let ts = set.ts();
            prop_assert!(ts.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(ts.iter().all(|t| *t >= set.near() && *t <= set.far()));
        }
        if let Some(tr) = &a.trace {
            prop_assert!(tr.transmittance.windows(2).all(|w| w[1] <= w[0]));
        }
        let r = &a.outcome.result;
        prop_assert!(r.weight_sum >= 0.0 && r.weight_sum <= 1.0 + 1e-6);
        prop_assert_eq!(r.depth.is_none(), r.weight_sum == 0.0);
    }
}

#[test]
fn average_samples_is_total_queries_over_rays() {
    let vol = sphere_volume();
    let cam =
        PinholeCamera::look_at(Vec3::new(0.3, 0.2, 2.4), Vec3::zeros(), Vec3::y(), Intrinsics::from_fov(24, 24, 45.0))
            .unwrap();
    for kind in SamplerKind::ALL {
        let cfg =
            SamplerConfig { t_near: 0.0, t_far: 8.0, ..SamplerConfig::default() }.with_kind(kind).with_budget(6, 6);
        let s = Sampler::with_volume(
            cfg,
            vol,
            TsdfConfig::accurate(vol.voxel_size()),
            DensityParams::default(),
            RenderOptions::default(),
        )
        .unwrap();
        let frame = render_image(&sphere_scene(), &cam, &s);
        let per_pixel: u64 = frame.samples.pixels().iter().map(|q| *q as u64).sum();
        assert_eq!(per_pixel, frame.total_queries);
        assert_eq!(frame.avg_samples(), frame.total_queries as f64 / 576.0);
    }
}

/// Planned per-ray counts: fine samples that coincide with coarse ones are
/// merged, so realized queries can only be lower.
#[test]
fn calibrated_full_plans_no_more_samples_than_naive() {
    let vol = sphere_volume();
    let tsdf = TsdfConfig::accurate(vol.voxel_size());
    let cam =
        PinholeCamera::look_at(Vec3::new(-0.4, 0.5, 2.3), Vec3::zeros(), Vec3::y(), Intrinsics::from_fov(32, 32, 50.0))
            .unwrap();
    let rays: Vec<Ray> =
        (0..32).flat_map(|y| (0..32).map(move |x| (x, y))).map(|(x, y)| cam.pixel_ray(x, y).unwrap()).collect();
    let base = SamplerConfig { tau: 0.0, t_near: 0.0, t_far: 8.0, ..SamplerConfig::default() };
    let dt_target = calibrate_dt_target(vol, &tsdf, &rays, &base).unwrap();
    let cfg = SamplerConfig { dt_target, ..base }.with_kind(SamplerKind::TsdfFull);
    let s = Sampler::with_volume(cfg, vol, tsdf, DensityParams::default(), RenderOptions::default()).unwrap();
    let mut planned = Vec::new();
    for ray in &rays {
        let d = s.render_detailed(&sphere_scene(), ray).unwrap();
        if let (Some(b), Some((g0, g1))) = (d.bounds, d.global) {
            let (near, far) = (b.t_near.max(g0), b.t_far.min(g1));
            if b.is_found() && near < far {
                let n_c = adaptive_count(far - near, &cfg);
                planned.push(n_c + scaled_fine(n_c, &cfg));
                assert!(d.outcome.result.queries <= n_c + scaled_fine(n_c, &cfg));
            }
        }
    }
    let mean = planned.iter().sum::<usize>() as f64 / planned.len() as f64;
    assert!(mean <= (cfg.n_coarse + cfg.n_fine) as f64, "{mean}");
}
