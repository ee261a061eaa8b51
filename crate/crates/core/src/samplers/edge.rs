use super::{grid_sample, uniform_grid, GaussianKernel, SampleMode};
use crate::error::Result;
use crate::tensor::{DeformationMap, LabelMap, Tensor};

/// Marks every pixel with a 4-neighbor of a different class. Ignored pixels
/// are never marked and never compared against.
pub fn edge_map(lm: &LabelMap) -> Tensor {
    let (h, w) = (lm.height(), lm.width());
    let ignore = lm.ignore();
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let c = lm.get(i, j);
            if c == ignore {
                continue;
            }
            let differs = |ni: usize, nj: usize| {
                let n = lm.get(ni, nj);
                n != ignore && n != c
            };
            let edge = (i > 0 && differs(i - 1, j))
                || (i + 1 < h && differs(i + 1, j))
                || (j > 0 && differs(i, j - 1))
                || (j + 1 < w && differs(i, j + 1));
            if edge {
                out[i * w + j] = 1.0;
            }
        }
    }
    Tensor::from_vec(&[h, w, 1], out)
}

/// Simulated edge-driven deformation map: the label's edge map blurred with a
/// radius-`r` Gaussian, bilinearly resampled to `out_h × out_w`, normalized.
/// Labels without edges yield the constant map.
pub fn edge_deformation_target(
    lm: &LabelMap,
    r: usize,
    out_h: usize,
    out_w: usize,
) -> Result<DeformationMap> {
    let kernel = GaussianKernel::new(r)?;
    let edges = edge_map(lm);
    if edges.sum() == 0.0 {
        return Ok(DeformationMap::constant(out_h, out_w));
    }
    let (h, w) = (lm.height(), lm.width());
    let blurred = Tensor::from_vec(&[h, w, 1], kernel.filter(edges.data(), h, w));
    let resampled = grid_sample(&blurred, &uniform_grid(out_h, out_w)?, SampleMode::Bilinear)?;
    DeformationMap::normalized(out_h, out_w, resampled.into_data())
}
