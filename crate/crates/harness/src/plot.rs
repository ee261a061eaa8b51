//! Minimal raster line charts and sample-site overlays.

use deformseg::{SamplingGrid, Tensor};

use crate::error::Result;

const PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.10, 0.10],
    [0.10, 0.45, 0.85],
    [0.10, 0.65, 0.20],
    [0.90, 0.55, 0.05],
    [0.55, 0.20, 0.70],
    [0.30, 0.30, 0.30],
];

struct Canvas {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Self { w, h, data: vec![1.0; w * h * 3] }
    }

    fn set(&mut self, x: i64, y: i64, c: [f64; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            let o = (y as usize * self.w + x as usize) * 3;
            self.data[o..o + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [f64; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, c);
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

    fn into_tensor(self) -> Result<Tensor> {
        Ok(Tensor::new(vec![self.h, self.w, 3], self.data)?)
    }
}

/// Draws each series as a polyline with square markers. The x range spans
/// all points; the y range is `[y_min, y_max]`.
pub fn line_plot(series: &[Vec<(f64, f64)>], width: usize, height: usize, y_range: (f64, f64)) -> Result<Tensor> {
    let mut c = Canvas::new(width, height);
    let margin = 16i64;
    let (x0, y0) = (margin, height as i64 - margin);
    let (x1, y1) = (width as i64 - margin, margin);
    let black = [0.0; 3];
    c.line((x0, y0), (x1, y0), black);
    c.line((x0, y0), (x0, y1), black);

    let xs = series.iter().flatten().map(|p| p.0);
    let lo = xs.clone().fold(f64::INFINITY, f64::min);
    let hi = xs.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (ylo, yhi) = y_range;
    let px = |(x, y): (f64, f64)| {
        let fx = if hi > lo { (x - lo) / span } else { 0.5 };
        let fy = ((y - ylo) / (yhi - ylo)).clamp(0.0, 1.0);
        (
            x0 + (fx * (x1 - x0) as f64).round() as i64,
            y0 + (fy * (y1 - y0) as f64).round() as i64,
        )
    };
    for (s, pts) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        for pair in pts.windows(2) {
            c.line(px(pair[0]), px(pair[1]), color);
        }
        for &p in pts {
            let (x, y) = px(p);
            for d in -2..=2 {
                for e in -2..=2 {
                    c.set(x + d, y + e, color);
                }
            }
        }
    }
    c.into_tensor()
}

/// Copy of `image` with every sample site painted red.
pub fn overlay(image: &Tensor, grid: &SamplingGrid) -> Result<Tensor> {
    let (h, w, ch) = image.hwc()?;
    let mut out = image.clone();
    for &[u, v] in grid.coords() {
        let i = (u * (h - 1) as f64).round() as usize;
        let j = (v * (w - 1) as f64).round() as usize;
        let o = (i * w + j) * ch;
        let px = &mut out.data_mut()[o..o + ch];
        px.fill(0.0);
        px[0] = 1.0;
    }
    Ok(out)
}
