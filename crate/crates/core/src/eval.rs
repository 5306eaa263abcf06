//! Image and geometry error metrics.
//!
//! All metrics work on linear values as rendered (no gamma). PSNR uses a
//! peak of 1; SSIM is computed on luma with an 11x11 Gaussian window
//! (sigma 1.5), `K1 = 0.01`, `K2 = 0.03`, averaged over window positions
//! that fit entirely inside the image.

use crate::error::DomainError;
use crate::geometry::Vec3;
use crate::image::{DepthMap, Image, RgbImage};
use crate::render::Frame;

pub const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_dims<A, B>(a: &Image<A>, b: &Image<B>) -> Result<(), DomainError> {
    if !a.same_dims(b) {
        return Err(DomainError::new(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64, DomainError> {
    check_dims(a, b)?;
    if a.is_empty() {
        return Err(DomainError::new("empty image"));
    }
    let sum: f64 =
        a.pixels().iter().zip(b.pixels()).map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>()).sum();
    Ok(sum / (3 * a.len()) as f64)
}

/// PSNR in dB for peak 1; `+inf` for identical images.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64, DomainError> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

pub fn luma(img: &RgbImage) -> Image<f64> {
    img.map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> =
        (0..SSIM_WINDOW).map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|x| x / total).collect()
}

/// SSIM of two grayscale images.
pub fn ssim_gray(a: &Image<f64>, b: &Image<f64>) -> Result<f64, DomainError> {
    check_dims(a, b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(DomainError::new(format!("image {w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let g = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let wt = g[dx] * g[dy];
                    let p = *a.get(x0 + dx, y0 + dy);
                    let q = *b.get(x0 + dx, y0 + dy);
                    ma += wt * p;
                    mb += wt * q;
                    aa += wt * p * p;
                    bb += wt * q * q;
                    ab += wt * p * q;
                }
            }
            let va = aa - ma * ma;
            let vb = bb - mb * mb;
            let cov = ab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM of two color images via luma.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64, DomainError> {
    check_dims(a, b)?;
    ssim_gray(&luma(a), &luma(b))
}

/// A mean over the pixels that passed a mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedMean {
    pub value: f64,
    pub count: usize,
}

fn masked_mean<A, B>(
    a: &Image<Option<A>>,
    b: &Image<Option<B>>,
    mask: Option<&Image<bool>>,
    err: impl Fn(&A, &B) -> f64,
) -> Result<MaskedMean, DomainError> {
    check_dims(a, b)?;
    if let Some(m) = mask {
        check_dims(a, m)?;
    }
    let mut sum = 0.0;
    let mut count = 0;
    for (i, (p, q)) in a.pixels().iter().zip(b.pixels()).enumerate() {
        if mask.is_some_and(|m| !m.pixels()[i]) {
            continue;
        }
        if let (Some(p), Some(q)) = (p, q) {
            sum += err(p, q);
            count += 1;
        }
    }
    if count == 0 {
        return Err(DomainError::new("no mutually valid pixels"));
    }
    Ok(MaskedMean { value: sum / count as f64, count })
}

/// Mean absolute depth difference in centimeters over pixels valid in both
/// maps (and in `mask`, if given).
pub fn depth_mae(a: &DepthMap, b: &DepthMap, mask: Option<&Image<bool>>) -> Result<MaskedMean, DomainError> {
    masked_mean(a, b, mask, |p, q| 100.0 * (p - q).abs())
}

/// Mean angle between unit normals in degrees.
pub fn normal_angle_error(
    a: &Image<Option<Vec3>>,
    b: &Image<Option<Vec3>>,
    mask: Option<&Image<bool>>,
) -> Result<MaskedMean, DomainError> {
    masked_mean(a, b, mask, |p, q| p.dot(q).clamp(-1.0, 1.0).acos().to_degrees())
}

/// One row of a benchmark table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    /// `NaN` when no pixel has depth in both frames.
    pub depth_mae_cm: f64,
    pub depth_pixels: usize,
    pub normal_err_deg: f64,
    pub normal_pixels: usize,
    /// Field (sdf + color) queries per ray, recovery passes included.
    pub avg_samples: f64,
    /// Field plus gradient queries per ray.
    pub queries_per_ray: f64,
    pub wall_time_s: f64,
    pub recovery_fraction: f64,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 10] = [
        "psnr_db",
        "ssim",
        "depth_mae_cm",
        "depth_pixels",
        "normal_err_deg",
        "normal_pixels",
        "avg_samples",
        "queries_per_ray",
        "wall_time_s",
        "recovery_fraction",
    ];

    /// Compares `test` against `reference`.
    pub fn compare(reference: &Frame, test: &Frame, wall_time_s: f64) -> Result<Self, DomainError> {
        let (depth_mae_cm, depth_pixels) = match depth_mae(&test.depth, &reference.depth, None) {
            Ok(m) => (m.value, m.count),
            Err(_) => (f64::NAN, 0),
        };
        let (normal_err_deg, normal_pixels) = match normal_angle_error(&test.normal, &reference.normal, None) {
            Ok(m) => (m.value, m.count),
            Err(_) => (f64::NAN, 0),
        };
        let rays = test.rays().max(1) as f64;
        Ok(Self {
            psnr_db: psnr(&test.color, &reference.color)?,
            ssim: ssim(&test.color, &reference.color)?,
            depth_mae_cm,
            depth_pixels,
            normal_err_deg,
            normal_pixels,
            avg_samples: test.avg_samples(),
            queries_per_ray: (test.total_queries + test.normal_queries) as f64 / rays,
            wall_time_s,
            recovery_fraction: test.recovery_fraction(),
        })
    }

    pub fn csv_header() -> String {
        Self::COLUMNS.join(",")
    }

    /// Values in [`Self::COLUMNS`] order; non-finite values print as `inf`,
    /// `-inf` or `nan`.
    pub fn csv_row(&self) -> String {
        [
            fmt_f64(self.psnr_db),
            fmt_f64(self.ssim),
            fmt_f64(self.depth_mae_cm),
            self.depth_pixels.to_string(),
            fmt_f64(self.normal_err_deg),
            self.normal_pixels.to_string(),
            fmt_f64(self.avg_samples),
            fmt_f64(self.queries_per_ray),
            fmt_f64(self.wall_time_s),
            fmt_f64(self.recovery_fraction),
        ]
        .join(",")
    }
}

/// Fixed six-decimal formatting for CSV cells.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.6}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn constant(w: usize, h: usize, v: f64) -> RgbImage {
        Image::filled(w, h, [v; 3])
    }

    #[test]
    fn psnr_examples() {
        let a = constant(4, 4, 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = constant(4, 4, 0.4);
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-9);
        assert_abs_diff_eq!(psnr(&constant(3, 3, 0.0), &constant(3, 3, 1.0)).unwrap(), 0.0, epsilon = 1e-12);
        assert!(psnr(&a, &constant(4, 5, 0.3)).is_err());
    }

    #[test]
    fn ssim_examples() {
        let a = Image::from_fn(16, 16, |x, y| [((x * 7 + y * 3) % 11) as f64 / 10.0; 3]);
        assert_abs_diff_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ssim(&constant(12, 12, 0.5), &constant(12, 12, 0.5)).unwrap(), 1.0, epsilon = 1e-12);
        assert!(ssim(&constant(10, 12, 0.5), &constant(10, 12, 0.5)).is_err());
    }

    #[test]
    fn depth_examples() {
        let a: DepthMap = Image::filled(4, 2, Some(1.0));
        assert_eq!(depth_mae(&a, &a, None).unwrap().value, 0.0);
        let b = a.map(|d| d.map(|d| d + 0.05));
        assert_abs_diff_eq!(depth_mae(&a, &b, None).unwrap().value, 5.0, epsilon = 1e-9);

        let c = Image::from_fn(4, 2, |x, _| Some(1.0 + if x % 2 == 1 { 0.1 } else { 0.0 }));
        let mask = Image::from_fn(4, 2, |x, y| y == 0 && x % 2 == 1 || y == 1 && x % 2 == 1);
        let m = depth_mae(&a, &c, Some(&mask)).unwrap();
        assert_abs_diff_eq!(m.value, 10.0, epsilon = 1e-9);
        assert_eq!(m.count, 4);
        let none: DepthMap = Image::filled(4, 2, None);
        assert!(depth_mae(&a, &none, None).is_err());
    }

    #[test]
    fn normal_examples() {
        let z: Image<Option<Vec3>> = Image::filled(3, 3, Some(Vec3::z()));
        let x: Image<Option<Vec3>> = Image::filled(3, 3, Some(Vec3::x()));
        let mz: Image<Option<Vec3>> = Image::filled(3, 3, Some(-Vec3::z()));
        assert_eq!(normal_angle_error(&z, &z, None).unwrap().value, 0.0);
        assert_abs_diff_eq!(normal_angle_error(&z, &x, None).unwrap().value, 90.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_angle_error(&z, &mz, None).unwrap().value, 180.0, epsilon = 1e-12);
        let empty = Image::filled(3, 3, false);
        assert!(normal_angle_error(&z, &z, Some(&empty)).is_err());
    }

    #[test]
    fn csv_row_has_fixed_columns() {
        let r = MetricReport {
            psnr_db: f64::INFINITY,
            ssim: 1.0,
            depth_mae_cm: 0.0,
            depth_pixels: 4,
            normal_err_deg: f64::NAN,
            normal_pixels: 0,
            avg_samples: 12.5,
            queries_per_ray: 13.0,
            wall_time_s: 0.25,
            recovery_fraction: 0.0,
        };
        assert_eq!(r.csv_row().split(',').count(), MetricReport::COLUMNS.len());
        assert!(r.csv_row().starts_with("inf,1.000000,0.000000,4,nan,0,12.500000"));
    }

    fn rgb_image(w: usize, h: usize) -> impl Strategy<Value = RgbImage> {
        prop::collection::vec(prop::array::uniform3(0.0..1.0f64), w * h)
            .prop_map(move |v| Image::from_vec(w, h, v).unwrap())
    }

    fn depth_map(w: usize, h: usize) -> impl Strategy<Value = DepthMap> {
        prop::collection::vec(prop::option::weighted(0.9, 0.1..5.0f64), w * h)
            .prop_map(move |v| Image::from_vec(w, h, v).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn psnr_is_symmetric(a in rgb_image(6, 5), b in rgb_image(6, 5)) {
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        }

        #[test]
        fn ssim_is_symmetric_and_reflexive(a in rgb_image(12, 13), b in rgb_image(12, 13)) {
            prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn depth_mae_triangle(a in depth_map(5, 4), b in depth_map(5, 4), c in depth_map(5, 4)) {
            let full = |m: &DepthMap| m.map(|d| Some(d.unwrap_or(1.0)));
            let (a, b, c) = (full(&a), full(&b), full(&c));
            let ac = depth_mae(&a, &c, None).unwrap().value;
            let ab = depth_mae(&a, &b, None).unwrap().value;
            let bc = depth_mae(&b, &c, None).unwrap().value;
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn metrics_ignore_layout(a in rgb_image(12, 14), b in rgb_image(12, 14), d in depth_map(12, 14), e in depth_map(12, 14)) {
            prop_assert!((psnr(&a, &b).unwrap() - psnr(&a.transposed(), &b.transposed()).unwrap()).abs() < 1e-9);
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&a.transposed(), &b.transposed()).unwrap()).abs() < 1e-12);
            if let (Ok(x), Ok(y)) = (depth_mae(&d, &e, None), depth_mae(&d.transposed(), &e.transposed(), None)) {
                prop_assert!((x.value - y.value).abs() < 1e-12);
                prop_assert_eq!(x.count, y.count);
            }
        }
    }
}
