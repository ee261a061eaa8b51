//! One example through the sampler and segmentation head, for training and
//! inference.

use super::{joint_loss, DeformationNet, JointLossConfig, LossTerms, Phase, ToySegNet};
use crate::autodiff::{ops, Tape, Var};
use crate::error::{Error, Result};
use crate::recovery::{nearest_fill, reverse_scatter};
use crate::samplers::{grid_sample, label_sample, uniform_grid, GaussianKernel, SampleMode};
use crate::tensor::{LabelMap, SamplingGrid, Tensor};

/// Output size of the sampler and size of the deformation map it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerGeometry {
    pub out_h: usize,
    pub out_w: usize,
    pub map_h: usize,
    pub map_w: usize,
    pub kernel: GaussianKernel,
}

impl SamplerGeometry {
    /// `factor` scales the deformation map relative to the output; the
    /// attraction kernel radius defaults to the smallest allowed.
    pub fn new(out_h: usize, out_w: usize, factor: usize, kernel_radius: Option<usize>) -> Result<Self> {
        if !(1..=2).contains(&factor) {
            return Err(Error::invalid("map_factor", format!("must be 1 or 2, got {factor}")));
        }
        if out_h < 2 || out_w < 2 {
            return Err(Error::invalid("downsample size", format!("{out_h}×{out_w} is below 2×2")));
        }
        let (map_h, map_w) = (out_h * factor, out_w * factor);
        let min = GaussianKernel::min_radius_for(map_h, map_w);
        let radius = kernel_radius.unwrap_or(min);
        if radius < min {
            return Err(Error::invalid(
                "kernel_radius",
                format!("{radius} is below the minimum {min} for a {map_h}×{map_w} map"),
            ));
        }
        Ok(Self {
            out_h,
            out_w,
            map_h,
            map_w,
            kernel: GaussianKernel::new(radius)?,
        })
    }
}

/// Copy of `image` at `h × w`; the deformation network's input.
/// Each output pixel is the mean over its source cell, so structures thinner
/// than the stride still leave a trace. Upsampling falls back to bilinear.
pub fn low_res_input(image: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (ih, iw, c) = image.hwc()?;
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument {
            arg: "size",
            reason: format!("low-res size {h}x{w}"),
        });
    }
    if h > ih || w > iw {
        return grid_sample(image, &uniform_grid(h, w)?, SampleMode::Bilinear);
    }
    let src = image.data();
    let mut out = vec![0.0; h * w * c];
    for i in 0..h {
        let (r0, r1) = (i * ih / h, (i + 1) * ih / h);
        for j in 0..w {
            let (c0, c1) = (j * iw / w, (j + 1) * iw / w);
            let cell = &mut out[(i * w + j) * c..(i * w + j + 1) * c];
            for y in r0..r1 {
                for x in c0..c1 {
                    for (o, v) in cell.iter_mut().zip(&src[(y * iw + x) * c..(y * iw + x + 1) * c]) {
                        *o += v;
                    }
                }
            }
            let n = ((r1 - r0) * (c1 - c0)) as f64;
            cell.iter_mut().for_each(|o| *o /= n);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

/// Recorded forward pass with handles for reading gradients.
pub struct Forward {
    pub tape: Tape,
    pub deform_vars: Vec<Var>,
    pub seg_vars: Vec<Var>,
    pub map: Option<Var>,
    pub grid: Option<Var>,
    pub logits: Option<Var>,
    pub low_label: Option<LabelMap>,
    pub loss: LossTerms,
}

impl Forward {
    pub fn value(&self, v: Var) -> f64 {
        self.tape.value(v).data()[0]
    }

    /// Backpropagates the total loss and returns `(deform grads, seg grads)`.
    pub fn gradients(mut self) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        self.tape.backward(self.loss.total)?;
        let grads = |vars: &[Var]| vars.iter().map(|&v| self.tape.grad(v)).collect::<Vec<_>>();
        Ok((grads(&self.deform_vars), grads(&self.seg_vars)))
    }
}

/// Learned sampler: deformation network on the low-resolution image,
/// attraction grid, differentiable resampling, segmentation head, joint loss.
/// `target` is the edge-derived map at the deformation map's size; it is
/// required when the edge term is active.
#[allow(clippy::too_many_arguments)]
pub fn forward_deformed(
    deform: &DeformationNet,
    seg: &ToySegNet,
    image: &Tensor,
    i_lr: &Tensor,
    label: &LabelMap,
    target: Option<&Tensor>,
    geo: &SamplerGeometry,
    cfg: &JointLossConfig,
    phase: Phase,
) -> Result<Forward> {
    let mut tape = Tape::new();
    let deform_vars = deform.bind(&mut tape, phase.train_deform);
    let x = tape.constant(i_lr.clone());
    let d = deform.forward(&mut tape, &deform_vars, x)?;

    let (seg_vars, grid, logits, low_label) = if phase.seg_term {
        let grid = ops::attraction_grid(&mut tape, d, &geo.kernel, geo.out_h, geo.out_w)?;
        let src = tape.constant(image.clone());
        let j = ops::bilinear_sample_diff(&mut tape, src, grid)?;
        let seg_vars = seg.bind(&mut tape, phase.train_seg);
        let logits = seg.forward(&mut tape, &seg_vars, j)?;
        let g = SamplingGrid::from_tensor(tape.value(grid))?;
        let low = label_sample(label, &g)?;
        (seg_vars, Some(grid), Some(logits), Some(low))
    } else {
        (Vec::new(), None, None, None)
    };

    let mut trainable = Vec::new();
    if phase.train_deform {
        trainable.extend_from_slice(&deform_vars);
    }
    if phase.train_seg {
        trainable.extend_from_slice(&seg_vars);
    }
    let placeholder;
    let low_ref = match &low_label {
        Some(l) => l,
        None => {
            placeholder = LabelMap::filled(1, 1, seg.classes() as u32, 0)?;
            &placeholder
        }
    };
    let loss = joint_loss(&mut tape, logits, low_ref, Some(d), target, &trainable, cfg, phase)?;
    Ok(Forward {
        tape,
        deform_vars,
        seg_vars,
        map: Some(d),
        grid,
        logits,
        low_label,
        loss,
    })
}

/// Fixed sampler: the image is resampled at `grid` and only the
/// segmentation head is trained, on focal loss plus weight decay.
pub fn forward_fixed(
    seg: &ToySegNet,
    image: &Tensor,
    label: &LabelMap,
    grid: &SamplingGrid,
    cfg: &JointLossConfig,
) -> Result<Forward> {
    let mut tape = Tape::new();
    let j = tape.constant(grid_sample(image, grid, SampleMode::Bilinear)?);
    let seg_vars = seg.bind(&mut tape, true);
    let logits = seg.forward(&mut tape, &seg_vars, j)?;
    let low = label_sample(label, grid)?;
    let phase = Phase {
        seg_term: true,
        edge_term: false,
        train_deform: false,
        train_seg: true,
    };
    let loss = joint_loss(&mut tape, Some(logits), &low, None, None, &seg_vars, cfg, phase)?;
    Ok(Forward {
        tape,
        deform_vars: Vec::new(),
        seg_vars,
        map: None,
        grid: None,
        logits: Some(logits),
        low_label: Some(low),
        loss,
    })
}

/// Per-pixel argmax over the last axis; ties go to the lowest class.
pub fn argmax_labels(logits: &Tensor) -> Result<LabelMap> {
    let (h, w, k) = logits.hwc()?;
    let data = logits
        .data()
        .chunks_exact(k)
        .map(|px| {
            let mut best = 0;
            for (c, &v) in px.iter().enumerate() {
                if v > px[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect();
    LabelMap::new(h, w, k as u32, data)
}

/// Sampling grid the learned sampler uses for `i_lr`.
pub fn deformed_grid(deform: &DeformationNet, i_lr: &Tensor, geo: &SamplerGeometry) -> Result<SamplingGrid> {
    let mut tape = Tape::new();
    let vars = deform.bind(&mut tape, false);
    let x = tape.constant(i_lr.clone());
    let d = deform.forward(&mut tape, &vars, x)?;
    let g = ops::attraction_grid(&mut tape, d, &geo.kernel, geo.out_h, geo.out_w)?;
    SamplingGrid::from_tensor(tape.value(g))
}

/// Low-resolution prediction for `image` sampled at `grid`, and its
/// full-resolution recovery.
pub fn predict(seg: &ToySegNet, image: &Tensor, grid: &SamplingGrid) -> Result<(LabelMap, LabelMap)> {
    let (h, w, _) = image.hwc()?;
    let mut tape = Tape::new();
    let vars = seg.bind(&mut tape, false);
    let j = tape.constant(grid_sample(image, grid, SampleMode::Bilinear)?);
    let logits = seg.forward(&mut tape, &vars, j)?;
    let low = argmax_labels(tape.value(logits))?;
    let full = nearest_fill(&reverse_scatter(&low, grid, h, w)?)?;
    Ok((low, full))
}
