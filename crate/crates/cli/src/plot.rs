//! Minimal raster line plot for per-ray profiles.

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const GRAY: Rgb = [200, 200, 200];
pub const BLACK: Rgb = [0, 0, 0];
pub const CYAN: Rgb = [0, 190, 220];
pub const MAGENTA: Rgb = [220, 0, 200];

pub struct Series {
    /// `(t, y)` with `y` in `[-1, 1]`.
    pub points: Vec<(f64, f64)>,
    pub color: Rgb,
}

/// A plot over `t_range` with y spanning `[-1, 1]`.
pub struct Plot {
    pub t_range: (f64, f64),
    pub series: Vec<Series>,
    /// Full-height vertical lines.
    pub vlines: Vec<(f64, Rgb)>,
    /// Short ticks along the bottom edge.
    pub markers: Vec<(f64, Rgb)>,
}

struct Canvas {
    w: usize,
    h: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            let i = 3 * (y as usize * self.w + x as usize);
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb) {
        // Bresenham
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

const MARGIN: i64 = 20;

impl Plot {
    /// Rasterizes to row-major 8-bit RGB.
    pub fn render(&self, width: usize, height: usize) -> Vec<u8> {
        let mut cv = Canvas { w: width, h: height, rgb: vec![255; 3 * width * height] };
        let (x0, x1) = (MARGIN, width as i64 - 1 - MARGIN);
        let (y0, y1) = (MARGIN, height as i64 - 1 - MARGIN);
        let (t0, t1) = self.t_range;
        let span = if t1 > t0 { t1 - t0 } else { 1.0 };
        let px = |t: f64| x0 + ((t - t0) / span * (x1 - x0) as f64).round() as i64;
        let py = |v: f64| {
            let v = if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
            y0 + ((1.0 - v) * 0.5 * (y1 - y0) as f64).round() as i64
        };

        cv.line((x0, py(0.0)), (x1, py(0.0)), GRAY);
        for &(t, c) in &self.vlines {
            if t.is_finite() {
                cv.line((px(t), y0), (px(t), y1), c);
            }
        }
        for s in &self.series {
            for pair in s.points.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                cv.line((px(a.0), py(a.1)), (px(b.0), py(b.1)), s.color);
            }
        }
        for &(t, c) in &self.markers {
            let x = px(t);
            for dx in -1..=1 {
                cv.line((x + dx, y1 - 8), (x + dx, y1), c);
            }
        }
        cv.line((x0, y0), (x1, y0), BLACK);
        cv.line((x0, y1), (x1, y1), BLACK);
        cv.line((x0, y0), (x0, y1), BLACK);
        cv.line((x1, y0), (x1, y1), BLACK);
        cv.rgb
    }
}
