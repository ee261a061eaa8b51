use super::GaussianKernel;
use crate::error::{Error, Result};
use crate::tensor::{DeformationMap, LabelMap, SamplingGrid, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Nearest,
    Bilinear,
}

/// Evenly spaced grid with corners exactly at 0 and 1.
pub fn uniform_grid(h: usize, w: usize) -> Result<SamplingGrid> {
    if h < 2 || w < 2 {
        return Err(Error::invalid("size", format!("uniform grid needs h, w ≥ 2, got {h}×{w}")));
    }
    let mut coords = Vec::with_capacity(h * w);
    for i in 0..h {
        let u = i as f64 / (h - 1) as f64;
        for j in 0..w {
            coords.push([u, j as f64 / (w - 1) as f64]);
        }
    }
    Ok(SamplingGrid::clamped(h, w, coords))
}

/// Position of output index `a` (of `n_out`) on a lattice of `n_in` cells.
#[inline]
pub(crate) fn lattice_position(a: usize, n_out: usize, n_in: usize) -> f64 {
    if n_out < 2 {
        return 0.0;
    }
    (a as f64 * (n_in - 1) as f64) / (n_out - 1) as f64
}

/// Splits a continuous coordinate on `[0, n-1]` into a base index and the
/// fractional weight of `base + 1`. The base never exceeds `n - 2`, so the
/// last lattice point is reached with weight 1 on the upper neighbor.
#[inline]
pub(crate) fn bilinear_split(x: f64, n: usize) -> (usize, f64) {
    if n < 2 {
        return (0, 0.0);
    }
    let base = (x.floor().max(0.0) as usize).min(n - 2);
    (base, x - base as f64)
}

/// Round-half-up to the nearest lattice index, clamped into range.
#[inline]
pub(crate) fn nearest_index(x: f64, n: usize) -> usize {
    ((x + 0.5).floor().max(0.0) as usize).min(n - 1)
}

fn check_deformation_inputs(h_d: usize, w_d: usize, k: &GaussianKernel) -> Result<()> {
    if h_d < 2 || w_d < 2 {
        return Err(Error::invalid(
            "deformation map",
            format!("needs h_d, w_d ≥ 2, got {h_d}×{w_d}"),
        ));
    }
    let min = GaussianKernel::min_radius_for(h_d, w_d);
    if k.radius() < min {
        return Err(Error::invalid(
            "kernel radius",
            format!(
                "{} is below the minimum {min} for a {h_d}×{w_d} map",
                k.radius()
            ),
        ));
    }
    Ok(())
}

/// Evaluates the attraction mapping on the deformation lattice itself.
///
/// Returns `(U, V)` in lattice index units: each position moves to the
/// kernel- and weight-averaged location of its neighborhood. Positions whose
/// neighborhood carries zero weight keep their own location.
pub fn attraction_fields(
    weights: &[f64],
    h_d: usize,
    w_d: usize,
    k: &GaussianKernel,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_deformation_inputs(h_d, w_d, k)?;
    if weights.len() != h_d * w_d {
        return Err(Error::Shape(format!(
            "{} weights for a {h_d}×{w_d} map",
            weights.len()
        )));
    }
    let r = k.radius() as isize;
    let mut u_field = vec![0.0; h_d * w_d];
    let mut v_field = vec![0.0; h_d * w_d];
    for i in 0..h_d as isize {
        for j in 0..w_d as isize {
            let (mut num_u, mut num_v, mut den) = (0.0, 0.0, 0.0);
            for di in -r..=r {
                let si = i + di;
                if !(0..h_d as isize).contains(&si) {
                    continue;
                }
                for dj in -r..=r {
                    let sj = j + dj;
                    if !(0..w_d as isize).contains(&sj) {
                        continue;
                    }
                    let wk = weights[(si * w_d as isize + sj) as usize] * k.at(di, dj);
                    den += wk;
                    num_u += wk * si as f64;
                    num_v += wk * sj as f64;
                }
            }
            let idx = (i * w_d as isize + j) as usize;
            if den > 0.0 {
                u_field[idx] = num_u / den;
                v_field[idx] = num_v / den;
            } else {
                u_field[idx] = i as f64;
                v_field[idx] = j as f64;
            }
        }
    }
    Ok((u_field, v_field))
}

/// Reads `h × w` relative coordinates from lattice-unit fields by bilinear
/// lookup at uniformly spaced positions.
pub(crate) fn read_fields(
    u_field: &[f64],
    v_field: &[f64],
    h_d: usize,
    w_d: usize,
    h: usize,
    w: usize,
) -> Vec<[f64; 2]> {
    let mut coords = Vec::with_capacity(h * w);
    for a in 0..h {
        let (i0, fi) = bilinear_split(lattice_position(a, h, h_d), h_d);
        for b in 0..w {
            let (j0, fj) = bilinear_split(lattice_position(b, w, w_d), w_d);
            let lerp = |f: &[f64]| {
                let at = |i: usize, j: usize| f[i * w_d + j];
                (1.0 - fi) * ((1.0 - fj) * at(i0, j0) + fj * at(i0, j0 + 1))
                    + fi * ((1.0 - fj) * at(i0 + 1, j0) + fj * at(i0 + 1, j0 + 1))
            };
            coords.push([
                lerp(u_field) / (h_d - 1) as f64,
                lerp(v_field) / (w_d - 1) as f64,
            ]);
        }
    }
    coords
}

/// Sampling grid from raw (not necessarily normalized) nonnegative weights.
pub fn deformation_weights_to_grid(
    weights: &[f64],
    h_d: usize,
    w_d: usize,
    k: &GaussianKernel,
    h: usize,
    w: usize,
) -> Result<SamplingGrid> {
    if h < 2 || w < 2 {
        return Err(Error::invalid("size", format!("grid needs h, w ≥ 2, got {h}×{w}")));
    }
    if weights.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("weights", "must be finite and nonnegative"));
    }
    let (u_field, v_field) = attraction_fields(weights, h_d, w_d, k)?;
    let coords = read_fields(&u_field, &v_field, h_d, w_d, h, w);
    Ok(SamplingGrid::clamped(h, w, coords))
}

/// Deformed sampler: attraction mapping of `d` read out at `h × w`.
pub fn deformation_to_grid(
    d: &DeformationMap,
    k: &GaussianKernel,
    h: usize,
    w: usize,
) -> Result<SamplingGrid> {
    deformation_weights_to_grid(d.values(), d.height(), d.width(), k, h, w)
}

/// Resamples an `H × W × C` image at the grid's relative coordinates.
pub fn grid_sample(src: &Tensor, g: &SamplingGrid, mode: SampleMode) -> Result<Tensor> {
    let (sh, sw, c) = src.hwc()?;
    if sh == 0 || sw == 0 {
        return Err(Error::Shape("grid_sample on an empty image".into()));
    }
    let (h, w) = (g.height(), g.width());
    let scale_u = (sh - 1) as f64;
    let scale_v = (sw - 1) as f64;
    let data = src.data();
    let mut out = Vec::with_capacity(h * w * c);
    for &[u, v] in g.coords() {
        let x = u * scale_u;
        let y = v * scale_v;
        match mode {
            SampleMode::Nearest => {
                let (i, j) = (nearest_index(x, sh), nearest_index(y, sw));
                out.extend_from_slice(&data[(i * sw + j) * c..(i * sw + j + 1) * c]);
            }
            SampleMode::Bilinear => {
                let (i0, fi) = bilinear_split(x, sh);
                let (j0, fj) = bilinear_split(y, sw);
                let i1 = (i0 + 1).min(sh - 1);
                let j1 = (j0 + 1).min(sw - 1);
                let px = |i: usize, j: usize, ch: usize| data[(i * sw + j) * c + ch];
                for ch in 0..c {
                    out.push(
                        (1.0 - fi) * ((1.0 - fj) * px(i0, j0, ch) + fj * px(i0, j1, ch))
                            + fi * ((1.0 - fj) * px(i1, j0, ch) + fj * px(i1, j1, ch)),
                    );
                }
            }
        }
    }
    Ok(Tensor::from_vec(&[h, w, c], out))
}

/// Nearest-mode resampling of class IDs with the same rounding as
/// [`grid_sample`].
pub fn label_sample(src: &LabelMap, g: &SamplingGrid) -> Result<LabelMap> {
    let (sh, sw) = (src.height(), src.width());
    if sh == 0 || sw == 0 {
        return Err(Error::Shape("label_sample on an empty label map".into()));
    }
    let data = g
        .coords()
        .iter()
        .map(|&[u, v]| {
            let i = nearest_index(u * (sh - 1) as f64, sh);
            let j = nearest_index(v * (sw - 1) as f64, sw);
            src.get(i, j)
        })
        .collect();
    Ok(LabelMap::from_parts(
        g.height(),
        g.width(),
        src.classes(),
        data,
    ))
}
