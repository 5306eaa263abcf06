use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tsdf_cli::config;
use tsdf_core::geometry::Vec3;
use tsdf_core::presets::{
    room_bounds, room_primitives, room_test_cameras, room_train_cameras, sphere_cameras, ROOM_RANGE,
};
use tsdf_core::sampling::SamplerKind;
use tsdf_core::tsdf::{TsdfConfig, TsdfVolume, HEADER_LEN};

const IMG: usize = 24;
const RES: usize = 64;

fn vec3(v: Vec3) -> String {
    format!("[{:?}, {:?}, {:?}]", v.x, v.y, v.z)
}

/// Sphere of radius 0.5 in the unit cube, `train` Fibonacci views and two
/// test views.
fn sphere_toml(out: &Path, train: usize) -> String {
    let mut s = format!(
        r#"schema_version = 1
[[scene.primitives]]
kind = "sphere"
center_m = [0.0, 0.0, 0.0]
radius_m = 0.5
color = [0.8, 0.5, 0.3]

[grid]
res = {RES}
min_m = [-1.0, -1.0, -1.0]
max_m = [1.0, 1.0, 1.0]

[sampler]
t_near_m = 0.05
t_far_m = 6.0

[reference]
samples = 128

[bench]
budgets = ["64+32", "6+8"]

[output]
dir = "{}"

[cameras]
width_px = {IMG}
height_px = {IMG}
"#,
        out.display()
    );
    let train_cams = sphere_cameras(train, 2.5, IMG, IMG, 50.0);
    let views = train_cams.iter().map(|c| ("train", c.center(), 50.0));
    // a close-up filled by the sphere, then an overview with background
    let test = [("test", Vec3::new(0.3, 0.2, 1.1), 30.0), ("test", Vec3::new(0.0, 0.4, 2.4), 50.0)];
    for (name, eye, fov) in views.chain(test) {
        s += &format!("\n[[cameras.{name}]]\neye_m = {}\ntarget_m = [0.0, 0.0, 0.0]\nfov_deg = {fov:?}\n", vec3(eye));
    }
    s
}

struct Fixture {
    _dir: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

fn fixture_from(toml: impl Fn(&Path) -> String) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = dir.path().join("scene.toml");
    std::fs::write(&config, toml(&out)).unwrap();
    Fixture { _dir: dir, config, out }
}

fn fixture(train: usize) -> Fixture {
    fixture_from(|out| sphere_toml(out, train))
}

/// Floor 0.8 m below the center of a coarse grid, fused from one wide
/// top-down view; the test camera sits near the center looking up through
/// the observed free space.
fn floor_toml(out: &Path) -> String {
    format!(
        r#"schema_version = 1
[[scene.primitives]]
kind = "plane"
normal = [0.0, 1.0, 0.0]
offset_m = -0.8
color = [0.5, 0.5, 0.5]

[grid]
res = 16
min_m = [-1.0, -1.0, -1.0]
max_m = [1.0, 1.0, 1.0]

[output]
dir = "{}"

[cameras]
width_px = 64
height_px = 64
train = [{{ eye_m = [0.0, 2.5, 0.0], target_m = [0.0, 0.0, 0.0], up = [0.0, 0.0, 1.0], fov_deg = 100.0 }}]
test = [{{ eye_m = [0.05, 0.0, 0.05], target_m = [0.05, 1.0, 0.05], up = [0.0, 0.0, 1.0], fov_deg = 30.0 }}]
"#,
        out.display()
    )
}

fn tsdf(config: &Path, args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tsdf"));
    cmd.arg("--config").arg(config).args(args);
    match threads {
        Some(n) => cmd.env("TSDF_THREADS", n),
        None => cmd.env_remove("TSDF_THREADS"),
    };
    cmd.output().unwrap()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    (header, lines.map(|l| l.split(',').map(str::to_owned).collect()).collect())
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn room_config_matches_the_presets() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/room.toml");
    let s = config::parse_file(&path).unwrap().resolve().unwrap();
    assert_eq!(s.scene.primitives(), room_primitives().as_slice());
    assert_eq!(s.bounds, room_bounds());
    assert_eq!(s.tsdf, TsdfConfig::accurate(4.0 / 128.0));
    assert_eq!((s.sampler.t_near, s.sampler.t_far), ROOM_RANGE);
    for (got, want) in [(&s.train, room_train_cameras(128, 128)), (&s.test, room_test_cameras(128, 128, 6))] {
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert!((a.center() - b.center()).norm() < 1e-12);
            let (ra, rb) = (a.pixel_ray(3, 70).unwrap(), b.pixel_ray(3, 70).unwrap());
            assert!((ra.dir - rb.dir).norm() < 1e-12);
        }
    }
}

#[test]
fn integrate_writes_a_reproducible_volume_of_the_expected_size() {
    let f = fixture(16);
    ok(tsdf(&f.config, &["integrate"], None));
    let path = f.out.join("volume.tsdf");
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), HEADER_LEN + 2 * RES * RES * RES * 4);

    let (h, rows) = read_csv(&f.out.join("fusion_stats.csv"));
    assert_eq!(rows[0][col(&h, "frames")], "16");
    assert!(rows[0][col(&h, "rays")].parse::<usize>().unwrap() > 0);
    assert!(f.out.join("integrate_timing.csv").exists());

    let stats_before = std::fs::read(f.out.join("fusion_stats.csv")).unwrap();
    ok(tsdf(&f.config, &["integrate"], None));
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(std::fs::read(f.out.join("fusion_stats.csv")).unwrap(), stats_before);
}

#[test]
fn zero_train_views_leave_the_volume_unseen() {
    let f = fixture(0);
    ok(tsdf(&f.config, &["integrate"], None));
    let (h, rows) = read_csv(&f.out.join("fusion_stats.csv"));
    assert_eq!(rows[0][col(&h, "rays")], "0");
    assert_eq!(rows[0][col(&h, "seen_voxels")], "0");
    let v = TsdfVolume::load(f.out.join("volume.tsdf")).unwrap();
    assert_eq!(v.seen_count(), 0);
    assert!(v.values().iter().all(|x| *x == -1.0));
}

#[test]
fn tsdf_samplers_need_a_fused_volume() {
    let f = fixture(4);
    for kind in ["tsdf_full", "tsdf_naive"] {
        let o = tsdf(&f.config, &["render", "--sampler", kind], None);
        assert_eq!(o.status.code(), Some(3));
        assert!(String::from_utf8_lossy(&o.stderr).contains("run `tsdf integrate` first"));
    }
    assert_eq!(tsdf(&f.config, &["bench"], None).status.code(), Some(3));
    assert_eq!(tsdf(&f.config, &["ray-dump", "--pixel", "1,1"], None).status.code(), Some(3));
    // unbounded samplers render without one
    ok(tsdf(&f.config, &["render", "--sampler", "hierarchical", "--budget", "8+8"], None));
}

#[test]
fn bad_configs_exit_2_and_name_the_field() {
    let f = fixture(2);
    let text = std::fs::read_to_string(&f.config).unwrap();
    let cases = [
        (text.replace("radius_m = 0.5", "radius_m = \"big\""), "scene.primitives"),
        (text.replace("res = 64", "res = 64\nvoxel_size_m = 0.1"), "grid"),
        (text.replace("t_near_m = 0.05", "t_near_m = 7.0"), "sampler"),
        (text.replace("[[cameras.test]]", "[[cameras.train]]"), "cameras.test"),
    ];
    for (bad, field) in cases {
        std::fs::write(&f.config, bad).unwrap();
        let o = tsdf(&f.config, &["integrate"], None);
        assert_eq!(o.status.code(), Some(2));
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(field), "{field} not in {err}");
    }
    std::fs::write(&f.config, text).unwrap();
    assert_eq!(tsdf(&f.config, &["render", "--budget", "8"], None).status.code(), Some(2));
    assert_eq!(tsdf(&f.config, &["render", "--view", "9", "--sampler", "uniform"], None).status.code(), Some(2));
    assert_eq!(tsdf(Path::new("/nonexistent.toml"), &["integrate"], None).status.code(), Some(2));
}

#[test]
fn reference_sampler_matches_the_reference_exactly() {
    let f = fixture(2);
    ok(tsdf(&f.config, &["render", "--sampler", "uniform", "--budget", "128+0"], None));
    let (h, rows) = read_csv(&f.out.join("render_0_uniform_metrics.csv"));
    assert_eq!(rows[0][col(&h, "psnr_db")], "inf");
    assert_eq!(rows[0][col(&h, "ssim")], "1.000000");
    assert_eq!(rows[0][col(&h, "depth_mae_cm")], "0.000000");
    for suffix in [".png", "_color.pfm", "_depth.pfm", "_normal.pfm", "_weight.pfm"] {
        assert!(f.out.join(format!("render_0_uniform{suffix}")).exists(), "{suffix}");
    }
}

#[test]
fn bench_sweeps_samplers_by_budgets() {
    let f = fixture(16);
    ok(tsdf(&f.config, &["integrate"], None));
    ok(tsdf(&f.config, &["bench"], None));
    let (h, rows) = read_csv(&f.out.join("bench.csv"));
    assert_eq!(rows.len(), 6);
    let q = |kind: SamplerKind, c: &str| -> (f64, f64) {
        let r = rows.iter().find(|r| r[col(&h, "sampler")] == kind.as_str() && r[col(&h, "n_coarse")] == c).unwrap();
        (r[col(&h, "avg_samples")].parse().unwrap(), r[col(&h, "recovery_fraction")].parse().unwrap())
    };
    for kind in [SamplerKind::Hierarchical, SamplerKind::TsdfNaive, SamplerKind::TsdfFull] {
        assert!(q(kind, "64").0 > q(kind, "6").0, "{kind}");
    }
    // bounded samplers stay within the unbounded budget plus recovery passes
    for (c, budget) in [("64", 96.0), ("6", 14.0)] {
        let (hier, _) = q(SamplerKind::Hierarchical, c);
        assert!(hier <= budget && hier > budget - 2.0, "{hier}");
        for kind in [SamplerKind::TsdfNaive, SamplerKind::TsdfFull] {
            let (full, rec) = q(kind, c);
            assert!(full <= hier + rec * 96.0 + 1e-9, "{kind} {c}: {full} vs {hier}");
        }
    }
    let (bh, brows) = read_csv(&f.out.join("bench_bounds.csv"));
    let ratio: f64 = brows[0][col(&bh, "range_ratio")].parse().unwrap();
    assert!(ratio > 0.0 && ratio < 1.0);
    assert!(f.out.join("bench_timing.csv").exists());
}

#[test]
fn tsdf_full_render_stays_below_the_hierarchical_budget() {
    let f = fixture(16);
    ok(tsdf(&f.config, &["integrate"], None));
    ok(tsdf(&f.config, &["render", "--sampler", "tsdf_full", "--budget", "8+8"], None));
    let (h, rows) = read_csv(&f.out.join("render_0_tsdf_full_metrics.csv"));
    let avg: f64 = rows[0][col(&h, "avg_samples")].parse().unwrap();
    assert!(avg < 16.0, "{avg}");
    let psnr: f64 = rows[0][col(&h, "psnr_db")].parse().unwrap();
    assert!(psnr > 30.0, "{psnr}");
}

/// `(t, voxel value, voxel weight, field sdf, tag)`
type DumpRow = (f64, Option<f64>, Option<f64>, f64, String);

struct Dump {
    rows: Vec<DumpRow>,
    bounds: (Vec<String>, Vec<String>),
}

fn ray_dump(f: &Fixture, pixel: &str) -> Dump {
    ok(tsdf(&f.config, &["ray-dump", "--view", "1", "--pixel", pixel], None));
    let stem = format!("ray_1_{}", pixel.replace(',', "_"));
    let (h, rows) = read_csv(&f.out.join(format!("{stem}.csv")));
    assert_eq!(h, ["t", "voxel_value", "voxel_weight", "field_sdf", "sigma", "weight", "tag"]);
    let opt = |s: &String| (!s.is_empty()).then(|| s.parse().unwrap());
    let rows = rows
        .iter()
        .map(|r| (r[0].parse().unwrap(), opt(&r[1]), opt(&r[2]), r[3].parse().unwrap(), r[6].clone()))
        .collect();
    let (bh, brows) = read_csv(&f.out.join(format!("{stem}_bounds.csv")));
    assert!(f.out.join(format!("{stem}.png")).exists());
    Dump { rows, bounds: (bh, brows[0].clone()) }
}

#[test]
fn ray_dump_profiles() {
    let f = fixture(16);
    ok(tsdf(&f.config, &["integrate"], None));
    let trunc = 5.0 * 2.0 / RES as f64;

    let center = ray_dump(&f, "12,12");
    let (h, b) = &center.bounds;
    assert_eq!(b[col(h, "status")], "found");
    let rows = &center.rows;
    assert!(rows.windows(2).all(|w| w[0].0 <= w[1].0));
    assert!(rows.iter().any(|r| r.4 == "coarse") && rows.iter().any(|r| r.4 == "fine"));
    // seen voxel values run from +D_T through zero to -D_T before the
    // unobserved interior
    let seen: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.4 == "profile" && r.2.is_some_and(|w| w > 0.0)).map(|r| (r.0, r.1.unwrap())).collect();
    let first_neg = seen.iter().position(|s| s.1 < 0.0).unwrap();
    assert!((seen[0].1 - trunc).abs() < 1e-6);
    assert!(seen[..first_neg].windows(2).all(|w| w[1].1 <= w[0].1 + 1e-6));
    let lowest = seen.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    assert!(lowest >= -trunc - 1e-6 && lowest < -0.5 * trunc, "{lowest}");
    let hit = Vec3::new(0.0, 0.4, 2.4).norm() - 0.5;
    let crossing = seen[first_neg].0;
    assert!((crossing - hit).abs() < 2.0 * 2.0 / RES as f64, "{crossing}");

    assert_eq!(tsdf(&f.config, &["ray-dump", "--pixel", "24,3"], None).status.code(), Some(2));
}

#[test]
fn ray_dump_through_observed_free_space() {
    let f = fixture_from(floor_toml);
    ok(tsdf(&f.config, &["integrate"], None));
    // without recovery a no_surface ray is background and queries nothing
    ok(tsdf(&f.config, &["ray-dump", "--pixel", "32,32", "--tau", "0"], None));
    let (h, b) = read_csv(&f.out.join("ray_0_32_32_bounds.csv"));
    assert_eq!(b[0][col(&h, "status")], "no_surface");
    assert_eq!(b[0][col(&h, "t_near")], "");
    assert_eq!(b[0][col(&h, "t_far")], "");
    let (h, rows) = read_csv(&f.out.join("ray_0_32_32.csv"));
    assert!(rows.iter().all(|r| r[col(&h, "tag")] == "profile"));
    // flat profile: every voxel on the way holds the free-space value
    let trunc = 5.0 * 2.0 / 16.0;
    for r in &rows {
        assert!(r[col(&h, "voxel_weight")].parse::<f64>().unwrap() > 0.0);
        assert!((r[col(&h, "voxel_value")].parse::<f64>().unwrap() - trunc).abs() < 1e-6);
    }
}

#[test]
fn outputs_do_not_depend_on_the_thread_count() {
    let f = fixture(8);
    ok(tsdf(&f.config, &["integrate"], Some("1")));
    let volume = std::fs::read(f.out.join("volume.tsdf")).unwrap();
    let files = [
        "render_1_tsdf_full.png",
        "render_1_tsdf_full_color.pfm",
        "render_1_tsdf_full_depth.pfm",
        "render_1_tsdf_full_metrics.csv",
    ];
    let mut runs = Vec::new();
    for threads in ["1", "3"] {
        ok(tsdf(&f.config, &["integrate"], Some(threads)));
        assert_eq!(std::fs::read(f.out.join("volume.tsdf")).unwrap(), volume);
        ok(tsdf(&f.config, &["render", "--view", "1", "--jitter", "true", "--seed", "7"], Some(threads)));
        runs.push(files.map(|n| std::fs::read(f.out.join(n)).unwrap()));
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(tsdf(&f.config, &["integrate"], Some("zero")).status.code(), Some(2));
}
