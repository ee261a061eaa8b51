use crate::error::{Error, Result};

/// Truncated, renormalized Gaussian with `σ = r/3` on a `(2r+1)²` support.
///
/// The 2-D weights factor exactly into the outer product of [`Self::taps`],
/// which the separable filters rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    radius: usize,
    sigma: f64,
    weights: Vec<f64>,
    taps: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(radius: usize) -> Result<Self> {
        if radius < 1 {
            return Err(Error::invalid("radius", "must be at least 1"));
        }
        let sigma = radius as f64 / 3.0;
        let r = radius as isize;
        let g = |dx: isize, dy: isize| {
            (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp()
        };

        let mut weights = Vec::with_capacity((2 * radius + 1).pow(2));
        for dy in -r..=r {
            for dx in -r..=r {
                weights.push(g(dx, dy));
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);

        let mut taps: Vec<f64> = (-r..=r).map(|d| g(d, 0)).collect();
        let total: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|w| *w /= total);

        Ok(Self {
            radius,
            sigma,
            weights,
            taps,
        })
    }

    /// Smallest admissible attraction radius for a `h_d × w_d` map: a quarter
    /// of the short axis, rounded up.
    pub fn min_radius_for(h_d: usize, w_d: usize) -> usize {
        h_d.min(w_d).div_ceil(4).max(1)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn size(&self) -> usize {
        2 * self.radius + 1
    }

    /// Row-major `(2r+1) × (2r+1)` weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dy, dx)` from the center.
    pub fn at(&self, dy: isize, dx: isize) -> f64 {
        let r = self.radius as isize;
        self.weights[((dy + r) * (2 * r + 1) + dx + r) as usize]
    }

    /// Normalized 1-D factor of the kernel.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Blurs a single-channel `h × w` raster. Each output is renormalized by
    /// the kernel mass that falls inside the raster, so constants are
    /// preserved up to the border.
    pub fn filter(&self, values: &[f64], h: usize, w: usize) -> Vec<f64> {
        let rows = self.pass(values, h, w, Axis::Rows, true);
        self.pass(&rows, h, w, Axis::Cols, true)
    }

    /// Adjoint of [`Self::filter`]: maps an output gradient to the input.
    pub fn filter_adjoint(&self, grad: &[f64], h: usize, w: usize) -> Vec<f64> {
        let scaled_c = self.scale_by_inverse_mass(grad, h, w, Axis::Cols);
        let cols = self.pass(&scaled_c, h, w, Axis::Cols, false);
        let scaled_r = self.scale_by_inverse_mass(&cols, h, w, Axis::Rows);
        self.pass(&scaled_r, h, w, Axis::Rows, false)
    }

    /// Plain truncated correlation with the normalized kernel (zero outside
    /// the raster, no border renormalization).
    pub fn correlate(&self, values: &[f64], h: usize, w: usize) -> Vec<f64> {
        let rows = self.pass(values, h, w, Axis::Rows, false);
        self.pass(&rows, h, w, Axis::Cols, false)
    }

    /// In-raster kernel mass along one axis at every index.
    fn mass(&self, n: usize) -> Vec<f64> {
        let r = self.radius as isize;
        (0..n as isize)
            .map(|i| {
                (-r..=r)
                    .filter(|d| (0..n as isize).contains(&(i + d)))
                    .map(|d| self.taps[(d + r) as usize])
                    .sum()
            })
            .collect()
    }

    fn scale_by_inverse_mass(&self, values: &[f64], h: usize, w: usize, axis: Axis) -> Vec<f64> {
        let mut out = values.to_vec();
        match axis {
            Axis::Rows => {
                let m = self.mass(h);
                for (i, row) in out.chunks_exact_mut(w).enumerate() {
                    row.iter_mut().for_each(|v| *v /= m[i]);
                }
            }
            Axis::Cols => {
                let m = self.mass(w);
                for row in out.chunks_exact_mut(w) {
                    row.iter_mut().zip(&m).for_each(|(v, mj)| *v /= mj);
                }
            }
        }
        out
    }

    fn pass(&self, values: &[f64], h: usize, w: usize, axis: Axis, renorm: bool) -> Vec<f64> {
        let r = self.radius as isize;
        let mut out = vec![0.0; h * w];
        match axis {
            Axis::Rows => {
                let m = renorm.then(|| self.mass(h));
                for i in 0..h as isize {
                    let dst = &mut out[i as usize * w..(i as usize + 1) * w];
                    for d in -r..=r {
                        let src_i = i + d;
                        if !(0..h as isize).contains(&src_i) {
                            continue;
                        }
                        let t = self.taps[(d + r) as usize];
                        let src = &values[src_i as usize * w..(src_i as usize + 1) * w];
                        dst.iter_mut().zip(src).for_each(|(o, s)| *o += t * s);
                    }
                    if let Some(m) = &m {
                        dst.iter_mut().for_each(|o| *o /= m[i as usize]);
                    }
                }
            }
            Axis::Cols => {
                let m = renorm.then(|| self.mass(w));
                for i in 0..h {
                    let src = &values[i * w..(i + 1) * w];
                    let dst = &mut out[i * w..(i + 1) * w];
                    for (j, o) in dst.iter_mut().enumerate() {
                        let lo = (j as isize - r).max(0);
                        let hi = (j as isize + r).min(w as isize - 1);
                        let mut acc = 0.0;
                        for sj in lo..=hi {
                            acc += self.taps[(sj - j as isize + r) as usize] * src[sj as usize];
                        }
                        *o = match &m {
                            Some(m) => acc / m[j],
                            None => acc,
                        };
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy)]
enum Axis {
    Rows,
    Cols,
}
