//! Differentiable primitives. Each function records its forward value and a
//! backward rule on the tape.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::samplers::{bilinear_split, lattice_position, GaussianKernel};
use crate::tensor::{LabelMap, Tensor};

fn same_shape(tape: &Tape, a: Var, b: Var, what: &str) -> Result<()> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa != sb {
        return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
    }
    Ok(())
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_vec(t.shape(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_vec(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

pub fn add(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, a, b, "add")?;
    let value = zip(tape.value(a), tape.value(b), |x, y| x + y);
    tape.record(
        value,
        &[a, b],
        Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())]),
    )
}

/// Elementwise product.
pub fn mul(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, a, b, "mul")?;
    let value = zip(tape.value(a), tape.value(b), |x, y| x * y);
    tape.record(
        value,
        &[a, b],
        Box::new(|g, p, _| {
            vec![
                Some(zip(g, p[1], |g, y| g * y)),
                Some(zip(g, p[0], |g, x| g * x)),
            ]
        }),
    )
}

pub fn scale(tape: &mut Tape, a: Var, c: f64) -> Result<Var> {
    let value = map(tape.value(a), |x| c * x);
    tape.record(value, &[a], Box::new(move |g, _, _| vec![Some(map(g, |g| c * g))]))
}

/// Sum of all elements, as a 1-element value.
pub fn sum(tape: &mut Tape, a: Var) -> Result<Var> {
    let value = Tensor::scalar(tape.value(a).sum());
    tape.record(
        value,
        &[a],
        Box::new(|g, p, _| vec![Some(Tensor::full(p[0].shape(), g.data()[0]))]),
    )
}

/// Sum of several scalars.
pub fn add_all(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut iter = terms.iter();
    let first = *iter
        .next()
        .ok_or_else(|| Error::invalid("terms", "need at least one term"))?;
    iter.try_fold(first, |acc, &t| add(tape, acc, t))
}

pub fn relu(tape: &mut Tape, x: Var) -> Result<Var> {
    let value = map(tape.value(x), |v| v.max(0.0));
    tape.record(
        value,
        &[x],
        Box::new(|g, p, _| {
            vec![Some(zip(g, p[0], |g, x| if x > 0.0 { g } else { 0.0 }))]
        }),
    )
}

/// Same-size 2-D cross-correlation over an `H × W × Cin` input with a
/// `kh × kw × Cin × Cout` kernel (odd extents, zero padding) plus bias.
pub fn conv2d(tape: &mut Tape, x: Var, kernel: Var, bias: Var) -> Result<Var> {
    let (h, w, cin) = tape.value(x).hwc()?;
    let ks = tape.value(kernel).shape().to_vec();
    let [kh, kw, kcin, cout] = ks[..] else {
        return Err(Error::Shape(format!("conv kernel must be rank 4, got {ks:?}")));
    };
    if kcin != cin {
        return Err(Error::Shape(format!(
            "conv input has {cin} channels, kernel expects {kcin}"
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::Shape(format!("conv kernel extents must be odd, got {kh}×{kw}")));
    }
    if tape.value(bias).shape() != [cout] {
        return Err(Error::Shape(format!(
            "conv bias must be [{cout}], got {:?}",
            tape.value(bias).shape()
        )));
    }
    let geom = ConvGeom {
        h,
        w,
        cin,
        cout,
        kh,
        kw,
    };
    let value = geom.forward(tape.value(x).data(), tape.value(kernel).data(), tape.value(bias).data());
    tape.record(
        Tensor::from_vec(&[h, w, cout], value),
        &[x, kernel, bias],
        Box::new(move |g, p, _| {
            let (dx, dk, db) = geom.backward(g.data(), p[0].data(), p[1].data());
            vec![
                Some(Tensor::from_vec(&[h, w, cin], dx)),
                Some(Tensor::from_vec(&[kh, kw, cin, cout], dk)),
                Some(Tensor::from_vec(&[cout], db)),
            ]
        }),
    )
}

#[derive(Clone, Copy)]
struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeom {
    /// Visits every in-bounds (output pixel, kernel tap, source pixel) triple.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ph, pw) = (self.kh as isize / 2, self.kw as isize / 2);
        for i in 0..self.h as isize {
            for j in 0..self.w as isize {
                let out_px = (i * self.w as isize + j) as usize;
                for ky in 0..self.kh as isize {
                    let si = i + ky - ph;
                    if si < 0 || si >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.kw as isize {
                        let sj = j + kx - pw;
                        if sj < 0 || sj >= self.w as isize {
                            continue;
                        }
                        let tap = (ky * self.kw as isize + kx) as usize;
                        f(out_px, tap, (si * self.w as isize + sj) as usize);
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[f64], k: &[f64], b: &[f64]) -> Vec<f64> {
        let (cin, cout) = (self.cin, self.cout);
        let mut out = Vec::with_capacity(self.h * self.w * cout);
        for _ in 0..self.h * self.w {
            out.extend_from_slice(b);
        }
        self.for_each_tap(|o, tap, s| {
            let dst = &mut out[o * cout..(o + 1) * cout];
            let xs = &x[s * cin..(s + 1) * cin];
            let ws = &k[tap * cin * cout..(tap + 1) * cin * cout];
            for (ci, &xv) in xs.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let row = &ws[ci * cout..(ci + 1) * cout];
                dst.iter_mut().zip(row).for_each(|(d, &wv)| *d += xv * wv);
            }
        });
        out
    }

    fn backward(&self, g: &[f64], x: &[f64], k: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (cin, cout) = (self.cin, self.cout);
        let mut dx = vec![0.0; x.len()];
        let mut dk = vec![0.0; k.len()];
        let mut db = vec![0.0; cout];
        for gp in g.chunks_exact(cout) {
            db.iter_mut().zip(gp).for_each(|(d, &v)| *d += v);
        }
        self.for_each_tap(|o, tap, s| {
            let go = &g[o * cout..(o + 1) * cout];
            let xs = &x[s * cin..(s + 1) * cin];
            let base = tap * cin * cout;
            for ci in 0..cin {
                let row = &k[base + ci * cout..base + (ci + 1) * cout];
                dx[s * cin + ci] += row.iter().zip(go).map(|(a, b)| a * b).sum::<f64>();
                let xv = xs[ci];
                if xv != 0.0 {
                    dk[base + ci * cout..base + (ci + 1) * cout]
                        .iter_mut()
                        .zip(go)
                        .for_each(|(d, &gv)| *d += xv * gv);
                }
            }
        });
        (dx, dk, db)
    }
}

/// Per-channel affine map `y = x·scale_c + shift_c`.
pub fn scale_shift(tape: &mut Tape, x: Var, scale: Var, shift: Var) -> Result<Var> {
    let (h, w, c) = tape.value(x).hwc()?;
    if tape.value(scale).shape() != [c] || tape.value(shift).shape() != [c] {
        return Err(Error::Shape(format!("scale/shift must be [{c}]")));
    }
    let s = tape.value(scale).data().to_vec();
    let b = tape.value(shift).data().to_vec();
    let value: Vec<f64> = tape
        .value(x)
        .data()
        .chunks_exact(c)
        .flat_map(|px| px.iter().zip(&s).zip(&b).map(|((v, s), b)| v * s + b))
        .collect();
    tape.record(
        Tensor::from_vec(&[h, w, c], value),
        &[x, scale, shift],
        Box::new(move |g, p, _| {
            let (xv, sv) = (p[0].data(), p[1].data());
            let mut dx = vec![0.0; xv.len()];
            let mut ds = vec![0.0; c];
            let mut db = vec![0.0; c];
            for ((gp, xp), dxp) in g
                .data()
                .chunks_exact(c)
                .zip(xv.chunks_exact(c))
                .zip(dx.chunks_exact_mut(c))
            {
                for ch in 0..c {
                    dxp[ch] = gp[ch] * sv[ch];
                    ds[ch] += gp[ch] * xp[ch];
                    db[ch] += gp[ch];
                }
            }
            vec![
                Some(Tensor::from_vec(&[h, w, c], dx)),
                Some(Tensor::from_vec(&[c], ds)),
                Some(Tensor::from_vec(&[c], db)),
            ]
        }),
    )
}

fn single_channel(tape: &Tape, x: Var, what: &str) -> Result<(usize, usize)> {
    let (h, w, c) = tape.value(x).hwc()?;
    if c != 1 {
        return Err(Error::Shape(format!("{what} needs one channel, got {c}")));
    }
    Ok((h, w))
}

/// Softmax over all spatial positions of a single-channel map.
pub fn spatial_softmax(tape: &mut Tape, x: Var) -> Result<Var> {
    single_channel(tape, x, "spatial_softmax")?;
    let xv = tape.value(x);
    let m = xv.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xv.data().iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let value = Tensor::from_vec(xv.shape(), e.into_iter().map(|v| v / s).collect());
    tape.record(
        value,
        &[x],
        Box::new(|g, _, y| {
            let dot: f64 = g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            vec![Some(zip(g, y, |g, y| y * (g - dot)))]
        }),
    )
}

/// Blur with a fixed Gaussian kernel; border outputs are renormalized by the
/// in-raster kernel mass.
pub fn gaussian_conv_fixed(tape: &mut Tape, x: Var, k: &GaussianKernel) -> Result<Var> {
    let (h, w) = single_channel(tape, x, "gaussian_conv_fixed")?;
    let value = k.filter(tape.value(x).data(), h, w);
    let k = k.clone();
    tape.record(
        Tensor::from_vec(&[h, w, 1], value),
        &[x],
        Box::new(move |g, _, _| {
            vec![Some(Tensor::from_vec(
                &[h, w, 1],
                k.filter_adjoint(g.data(), h, w),
            ))]
        }),
    )
}

/// Differentiable attraction mapping: turns a single-channel importance map
/// into an `h × w × 2` grid of relative coordinates.
///
/// Each lattice position is replaced by the kernel- and weight-averaged
/// position of its neighborhood; the resulting fields are read at `h × w`
/// uniformly spaced positions by bilinear lookup and divided by the lattice
/// extent.
pub fn attraction_grid(
    tape: &mut Tape,
    d: Var,
    k: &GaussianKernel,
    h: usize,
    w: usize,
) -> Result<Var> {
    let (h_d, w_d) = single_channel(tape, d, "attraction_grid")?;
    if h_d < 2 || w_d < 2 || h < 2 || w < 2 {
        return Err(Error::invalid(
            "size",
            format!("attraction needs map and grid ≥ 2×2, got {h_d}×{w_d} → {h}×{w}"),
        ));
    }
    let min = GaussianKernel::min_radius_for(h_d, w_d);
    if k.radius() < min {
        return Err(Error::invalid(
            "kernel radius",
            format!("{} is below the minimum {min}", k.radius()),
        ));
    }
    let dv = tape.value(d).data();
    if dv.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("d", "attraction weights must be nonnegative"));
    }
    let fields = AttractionFields::compute(dv, h_d, w_d, k);
    let reader = FieldReader::new(h_d, w_d, h, w);
    let raw = reader.read(&fields.u, &fields.v);
    let value: Vec<f64> = raw.iter().map(|c| c.clamp(0.0, 1.0)).collect();
    let k = k.clone();
    tape.record(
        Tensor::from_vec(&[h, w, 2], value),
        &[d],
        Box::new(move |g, _, _| {
            let g_raw: Vec<f64> = g
                .data()
                .iter()
                .zip(&raw)
                .map(|(&g, &r)| if (0.0..=1.0).contains(&r) { g } else { 0.0 })
                .collect();
            let (gu, gv) = reader.read_adjoint(&g_raw);
            let grad = fields.backward(&gu, &gv, &k);
            vec![Some(Tensor::from_vec(&[h_d, w_d, 1], grad))]
        }),
    )
}

struct AttractionFields {
    h_d: usize,
    w_d: usize,
    den: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl AttractionFields {
    fn compute(d: &[f64], h_d: usize, w_d: usize, k: &GaussianKernel) -> Self {
        let di: Vec<f64> = d.iter().enumerate().map(|(p, &x)| x * (p / w_d) as f64).collect();
        let dj: Vec<f64> = d.iter().enumerate().map(|(p, &x)| x * (p % w_d) as f64).collect();
        let den = k.correlate(d, h_d, w_d);
        let num_u = k.correlate(&di, h_d, w_d);
        let num_v = k.correlate(&dj, h_d, w_d);
        let mut u = vec![0.0; h_d * w_d];
        let mut v = vec![0.0; h_d * w_d];
        for p in 0..h_d * w_d {
            if den[p] > 0.0 {
                u[p] = num_u[p] / den[p];
                v[p] = num_v[p] / den[p];
            } else {
                u[p] = (p / w_d) as f64;
                v[p] = (p % w_d) as f64;
            }
        }
        Self {
            h_d,
            w_d,
            den,
            u,
            v,
        }
    }

    fn backward(&self, gu: &[f64], gv: &[f64], k: &GaussianKernel) -> Vec<f64> {
        let n = self.h_d * self.w_d;
        let mut g_num_u = vec![0.0; n];
        let mut g_num_v = vec![0.0; n];
        let mut g_den = vec![0.0; n];
        for p in 0..n {
            let den = self.den[p];
            if den > 0.0 {
                g_num_u[p] = gu[p] / den;
                g_num_v[p] = gv[p] / den;
                g_den[p] = -(gu[p] * self.u[p] + gv[p] * self.v[p]) / den;
            }
        }
        // the truncated correlation matrix is symmetric, so it is its own adjoint
        let a = k.correlate(&g_num_u, self.h_d, self.w_d);
        let b = k.correlate(&g_num_v, self.h_d, self.w_d);
        let c = k.correlate(&g_den, self.h_d, self.w_d);
        (0..n)
            .map(|p| a[p] * (p / self.w_d) as f64 + b[p] * (p % self.w_d) as f64 + c[p])
            .collect()
    }
}

/// Bilinear readout of lattice-unit fields at `h × w` uniform positions.
struct FieldReader {
    h_d: usize,
    w_d: usize,
    rows: Vec<(usize, f64)>,
    cols: Vec<(usize, f64)>,
}

impl FieldReader {
    fn new(h_d: usize, w_d: usize, h: usize, w: usize) -> Self {
        Self {
            h_d,
            w_d,
            rows: (0..h).map(|a| bilinear_split(lattice_position(a, h, h_d), h_d)).collect(),
            cols: (0..w).map(|b| bilinear_split(lattice_position(b, w, w_d), w_d)).collect(),
        }
    }

    fn taps(&self, a: usize, b: usize) -> [(usize, f64); 4] {
        let (i0, fi) = self.rows[a];
        let (j0, fj) = self.cols[b];
        let w_d = self.w_d;
        [
            (i0 * w_d + j0, (1.0 - fi) * (1.0 - fj)),
            (i0 * w_d + j0 + 1, (1.0 - fi) * fj),
            ((i0 + 1) * w_d + j0, fi * (1.0 - fj)),
            ((i0 + 1) * w_d + j0 + 1, fi * fj),
        ]
    }

    /// Interleaved `[u, v]` relative coordinates, unclamped.
    fn read(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let (su, sv) = ((self.h_d - 1) as f64, (self.w_d - 1) as f64);
        let mut out = Vec::with_capacity(self.rows.len() * self.cols.len() * 2);
        for a in 0..self.rows.len() {
            for b in 0..self.cols.len() {
                let t = self.taps(a, b);
                let lu: f64 = t.iter().map(|&(p, wt)| wt * u[p]).sum();
                let lv: f64 = t.iter().map(|&(p, wt)| wt * v[p]).sum();
                out.push(lu / su);
                out.push(lv / sv);
            }
        }
        out
    }

    fn read_adjoint(&self, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (su, sv) = ((self.h_d - 1) as f64, (self.w_d - 1) as f64);
        let n = self.h_d * self.w_d;
        let (mut gu, mut gv) = (vec![0.0; n], vec![0.0; n]);
        for a in 0..self.rows.len() {
            for b in 0..self.cols.len() {
                let o = (a * self.cols.len() + b) * 2;
                for (p, wt) in self.taps(a, b) {
                    gu[p] += wt * g[o] / su;
                    gv[p] += wt * g[o + 1] / sv;
                }
            }
        }
        (gu, gv)
    }
}

/// Bilinear resampling of an `H × W × C` source at an `h × w × 2` grid of
/// relative coordinates. Gradients flow to the source pixels and to the
/// grid coordinates.
pub fn bilinear_sample_diff(tape: &mut Tape, src: Var, grid: Var) -> Result<Var> {
    let (sh, sw, c) = tape.value(src).hwc()?;
    let (h, w, two) = tape.value(grid).hwc()?;
    if two != 2 {
        return Err(Error::Shape(format!("grid needs 2 channels, got {two}")));
    }
    let (su, sv) = ((sh - 1) as f64, (sw - 1) as f64);
    let taps = move |gd: &[f64], o: usize| {
        let (i0, fi) = bilinear_split(gd[o * 2] * su, sh);
        let (j0, fj) = bilinear_split(gd[o * 2 + 1] * sv, sw);
        let i1 = (i0 + 1).min(sh - 1);
        let j1 = (j0 + 1).min(sw - 1);
        (i0, i1, fi, j0, j1, fj)
    };
    let value = {
        let (sd, gd) = (tape.value(src).data(), tape.value(grid).data());
        let mut out = Vec::with_capacity(h * w * c);
        for o in 0..h * w {
            let (i0, i1, fi, j0, j1, fj) = taps(gd, o);
            let px = |i: usize, j: usize, ch: usize| sd[(i * sw + j) * c + ch];
            for ch in 0..c {
                out.push(
                    (1.0 - fi) * ((1.0 - fj) * px(i0, j0, ch) + fj * px(i0, j1, ch))
                        + fi * ((1.0 - fj) * px(i1, j0, ch) + fj * px(i1, j1, ch)),
                );
            }
        }
        out
    };
    tape.record(
        Tensor::from_vec(&[h, w, c], value),
        &[src, grid],
        Box::new(move |g, p, _| {
            let (sd, gd, gg) = (p[0].data(), p[1].data(), g.data());
            let mut dsrc = vec![0.0; sd.len()];
            let mut dgrid = vec![0.0; gd.len()];
            for o in 0..h * w {
                let (i0, i1, fi, j0, j1, fj) = taps(gd, o);
                let px = |i: usize, j: usize, ch: usize| sd[(i * sw + j) * c + ch];
                let (mut du, mut dv) = (0.0, 0.0);
                for ch in 0..c {
                    let go = gg[o * c + ch];
                    if go == 0.0 {
                        continue;
                    }
                    dsrc[(i0 * sw + j0) * c + ch] += go * (1.0 - fi) * (1.0 - fj);
                    dsrc[(i0 * sw + j1) * c + ch] += go * (1.0 - fi) * fj;
                    dsrc[(i1 * sw + j0) * c + ch] += go * fi * (1.0 - fj);
                    dsrc[(i1 * sw + j1) * c + ch] += go * fi * fj;
                    du += go
                        * ((1.0 - fj) * (px(i1, j0, ch) - px(i0, j0, ch))
                            + fj * (px(i1, j1, ch) - px(i0, j1, ch)));
                    dv += go
                        * ((1.0 - fi) * (px(i0, j1, ch) - px(i0, j0, ch))
                            + fi * (px(i1, j1, ch) - px(i1, j0, ch)));
                }
                dgrid[o * 2] = du * su;
                dgrid[o * 2 + 1] = dv * sv;
            }
            vec![
                Some(Tensor::from_vec(p[0].shape(), dsrc)),
                Some(Tensor::from_vec(p[1].shape(), dgrid)),
            ]
        }),
    )
}

/// Mean focal loss `−(1−p_t)^γ log p_t` over non-ignored pixels of an
/// `h × w × K` logit map.
pub fn focal_loss(tape: &mut Tape, logits: Var, target: &LabelMap, gamma: f64) -> Result<Var> {
    let (h, w, k) = tape.value(logits).hwc()?;
    if (target.height(), target.width()) != (h, w) || target.classes() as usize != k {
        return Err(Error::Shape(format!(
            "logits {h}×{w}×{k} vs target {}×{} with {} classes",
            target.height(),
            target.width(),
            target.classes()
        )));
    }
    if gamma < 0.0 {
        return Err(Error::invalid("gamma", "must be ≥ 0"));
    }
    let ignore = target.ignore();
    let labels: Vec<u32> = target.data().to_vec();
    let n = labels.iter().filter(|&&t| t != ignore).count();
    if n == 0 {
        return Err(Error::AllIgnored);
    }

    let z = tape.value(logits).data();
    let mut probs = vec![0.0; z.len()];
    let mut total = 0.0;
    for (px, (zp, pp)) in z.chunks_exact(k).zip(probs.chunks_exact_mut(k)).enumerate() {
        let m = zp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + zp.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        for (p, &v) in pp.iter_mut().zip(zp) {
            *p = (v - lse).exp();
        }
        let t = labels[px];
        if t == ignore {
            continue;
        }
        let logp = zp[t as usize] - lse;
        let q = -logp.exp_m1(); // 1 − p_t
        total += -focal_weight(q, gamma) * logp;
    }
    let n_f = n as f64;
    tape.record(
        Tensor::scalar(total / n_f),
        &[logits],
        Box::new(move |g, p, _| {
            let scale = g.data()[0] / n_f;
            let z = p[0].data();
            let mut dz = vec![0.0; z.len()];
            for (px, (zp, dp)) in z.chunks_exact(k).zip(dz.chunks_exact_mut(k)).enumerate() {
                let t = labels[px];
                if t == ignore {
                    continue;
                }
                let pr = &probs[px * k..(px + 1) * k];
                let m = zp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + zp.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
                let logp = zp[t as usize] - lse;
                let pt = logp.exp();
                let q = -logp.exp_m1();
                // dL/dz_j = a·(δ_tj − p_j)
                let mut a = -focal_weight(q, gamma);
                if gamma > 0.0 && q > 0.0 {
                    a += gamma * q.powf(gamma - 1.0) * pt * logp;
                }
                for (j, d) in dp.iter_mut().enumerate() {
                    let delta = if j == t as usize { 1.0 } else { 0.0 };
                    *d = scale * a * (delta - pr[j]);
                }
            }
            vec![Some(Tensor::from_vec(p[0].shape(), dz))]
        }),
    )
}

fn focal_weight(q: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        q.powf(gamma)
    }
}

/// Mean squared error against a constant target.
pub fn mse_loss(tape: &mut Tape, a: Var, b: &Tensor) -> Result<Var> {
    let av = tape.value(a);
    if av.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "mse: {:?} vs {:?}",
            av.shape(),
            b.shape()
        )));
    }
    let n = av.len() as f64;
    let loss = av
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    let target = b.clone();
    tape.record(
        Tensor::scalar(loss),
        &[a],
        Box::new(move |g, p, _| {
            let s = 2.0 * g.data()[0] / n;
            vec![Some(zip(p[0], &target, |x, y| s * (x - y)))]
        }),
    )
}

/// `coeff · Σ θ²` over all given parameters.
pub fn l2_penalty(tape: &mut Tape, params: &[Var], coeff: f64) -> Result<Var> {
    let mut total = 0.0;
    for &p in params {
        total += tape.value(p).data().iter().map(|v| v * v).sum::<f64>();
    }
    let value = Tensor::scalar(coeff * total);
    tape.record(
        value,
        params,
        Box::new(move |g, p, _| {
            let s = 2.0 * coeff * g.data()[0];
            p.iter().map(|t| Some(map(t, |v| s * v))).collect()
        }),
    )
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::grad_check;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    /// Reduces any output to a scalar through fixed random weights so every
    /// output element gets a distinct cotangent.
    fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
        let shape = tape.value(out).shape().to_vec();
        let r = tape.constant(random(&shape, &mut rng, -1.0, 1.0));
        let p = mul(tape, out, r)?;
        sum(tape, p)
    }

    fn check<F>(f: F, inputs: &[Tensor], tol: f64)
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let r = grad_check(f, inputs, 1e-5, tol).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn identity_conv_and_ones_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[5, 4, 2], &mut rng, -1.0, 1.0);
        let mut k = Tensor::zeros(&[3, 3, 2, 2]);
        // centre tap, channel c → c
        k.data_mut()[(4 * 2) * 2] = 1.0;
        k.data_mut()[(4 * 2 + 1) * 2 + 1] = 1.0;
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.constant(x.clone()), tape.constant(k), tape.constant(Tensor::zeros(&[2])));
        let y = conv2d(&mut tape, xv, kv, bv).unwrap();
        assert_eq!(tape.value(y), &x);

        let ones = tape.constant(Tensor::full(&[5, 5, 1], 1.0));
        let k1 = tape.constant(Tensor::full(&[3, 3, 1, 1], 1.0));
        let b1 = tape.constant(Tensor::zeros(&[1]));
        let y = conv2d(&mut tape, ones, k1, b1).unwrap();
        let yv = tape.value(y);
        assert_eq!(yv.at3(2, 2, 0), 9.0);
        assert_eq!(yv.at3(0, 0, 0), 4.0);
        assert_eq!(yv.at3(0, 2, 0), 6.0);
    }

    #[test]
    fn relu_and_softmax_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 2, 1], vec![-1.0, 0.0, 2.0, -0.5]).unwrap());
        let y = relu(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0, 0.0]);
        let c = tape.constant(Tensor::full(&[3, 4, 1], 7.5));
        let s = spatial_softmax(&mut tape, c).unwrap();
        assert!(tape.value(s).data().iter().all(|&v| (v - 1.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn gaussian_of_delta_is_kernel() {
        let k = GaussianKernel::new(2).unwrap();
        let mut d = Tensor::zeros(&[9, 9, 1]);
        d.data_mut()[4 * 9 + 4] = 1.0;
        let mut tape = Tape::new();
        let x = tape.constant(d);
        let y = gaussian_conv_fixed(&mut tape, x, &k).unwrap();
        for dy in -2isize..=2 {
            for dx in -2isize..=2 {
                let v = tape.value(y).at3((4 + dy) as usize, (4 + dx) as usize, 0);
                assert!((v - k.at(dy, dx)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn focal_gamma_zero_is_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = random(&[2, 3, 4], &mut rng, -2.0, 2.0);
        let lm = LabelMap::new(2, 3, 4, vec![0, 1, 2, 3, 4, 1]).unwrap();
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let l = focal_loss(&mut tape, zv, &lm, 0.0).unwrap();
        let mut ce = 0.0;
        for (px, &t) in lm.data().iter().enumerate() {
            if t == 4 {
                continue;
            }
            let zp = &z.data()[px * 4..px * 4 + 4];
            let lse = zp.iter().map(|v| v.exp()).sum::<f64>().ln();
            ce += lse - zp[t as usize];
        }
        assert!((tape.value(l).data()[0] - ce / 5.0).abs() < 1e-12);

        let all = LabelMap::filled(2, 3, 4, 4).unwrap();
        assert!(matches!(focal_loss(&mut tape, zv, &all, 2.0), Err(Error::AllIgnored)));
    }

    #[test]
    fn elementwise_gradients() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(&[3, 4, 2], &mut rng, -1.0, 1.0);
            let b = random(&[3, 4, 2], &mut rng, -1.0, 1.0);
            check(|t, v| { let o = add(t, v[0], v[1])?; project(t, o, seed) }, &[a.clone(), b.clone()], 1e-5);
            check(|t, v| { let o = mul(t, v[0], v[1])?; project(t, o, seed) }, &[a.clone(), b.clone()], 1e-5);
            check(|t, v| { let o = scale(t, v[0], -2.5)?; project(t, o, seed) }, std::slice::from_ref(&a), 1e-5);
            // keep values away from the kink
            let away = Tensor::new(a.shape().to_vec(), a.data().iter().map(|v| if v.abs() < 0.05 { 0.3 } else { *v }).collect()).unwrap();
            check(|t, v| { let o = relu(t, v[0])?; project(t, o, seed) }, &[away], 1e-5);
        }
    }

    #[test]
    fn conv_and_affine_gradients() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
            let x = random(&[5, 6, 2], &mut rng, -1.0, 1.0);
            let k = random(&[3, 3, 2, 3], &mut rng, -1.0, 1.0);
            let b = random(&[3], &mut rng, -1.0, 1.0);
            check(|t, v| { let o = conv2d(t, v[0], v[1], v[2])?; project(t, o, seed) }, &[x.clone(), k, b], 1e-5);
            let s = random(&[2], &mut rng, 0.5, 1.5);
            let sh = random(&[2], &mut rng, -1.0, 1.0);
            check(|t, v| { let o = scale_shift(t, v[0], v[1], v[2])?; project(t, o, seed) }, &[x, s, sh], 1e-5);
        }
    }

    #[test]
    fn map_operator_gradients() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(20 + seed);
            let x = random(&[6, 7, 1], &mut rng, -1.0, 1.0);
            check(|t, v| { let o = spatial_softmax(t, v[0])?; project(t, o, seed) }, std::slice::from_ref(&x), 1e-5);
            let k = GaussianKernel::new(2).unwrap();
            check(|t, v| { let o = gaussian_conv_fixed(t, v[0], &k)?; project(t, o, seed) }, &[x], 1e-5);

            let d = random(&[8, 8, 1], &mut rng, 0.1, 1.0);
            let k = GaussianKernel::new(2).unwrap();
            check(|t, v| { let o = attraction_grid(t, v[0], &k, 5, 6)?; project(t, o, seed) }, &[d], 1e-5);

            let src = random(&[7, 6, 2], &mut rng, 0.0, 1.0);
            let g = random(&[4, 5, 2], &mut rng, 0.02, 0.98);
            check(|t, v| { let o = bilinear_sample_diff(t, v[0], v[1])?; project(t, o, seed) }, &[src, g], 1e-5);
        }
    }

    #[test]
    fn loss_gradients() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(30 + seed);
            let z = random(&[3, 4, 3], &mut rng, -2.0, 2.0);
            let labels = (0..12).map(|_| rng.random_range(0..4u32)).collect();
            let lm = LabelMap::new(3, 4, 3, labels).unwrap();
            if lm.class_counts()[3] < 12 {
                for gamma in [0.0, 0.5, 2.0] {
                    check(|t, v| focal_loss(t, v[0], &lm, gamma), std::slice::from_ref(&z), 1e-5);
                }
            }
            let target = random(&[3, 4, 1], &mut rng, 0.0, 1.0);
            let a = random(&[3, 4, 1], &mut rng, 0.0, 1.0);
            check(|t, v| mse_loss(t, v[0], &target), std::slice::from_ref(&a), 1e-5);
            let b = random(&[5], &mut rng, -1.0, 1.0);
            check(|t, v| l2_penalty(t, v, 1e-2), &[a, b], 1e-5);
        }
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 2, 1]));
        let b = tape.constant(Tensor::zeros(&[2, 3, 1]));
        assert!(add(&mut tape, a, b).is_err());
        let two = tape.constant(Tensor::zeros(&[2, 2, 2]));
        assert!(spatial_softmax(&mut tape, two).is_err());
        let k = GaussianKernel::new(1).unwrap();
        let d = tape.constant(Tensor::full(&[16, 16, 1], 1.0));
        assert!(attraction_grid(&mut tape, d, &k, 8, 8).is_err());
    }
}
