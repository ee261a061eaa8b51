use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{ops, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Zero-mean normal samples with variance `2 / fan_in`.
pub fn he_init(shape: &[usize], fan_in: usize, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    he_init_with(shape, fan_in, &mut rng)
}

fn he_init_with(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::invalid("fan_in", "must be positive"));
    }
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
        .map_err(|e| Error::invalid("fan_in", e.to_string()))?;
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerSpec {
    kernel: usize,
    cin: usize,
    cout: usize,
    /// Learnable per-channel scale/shift followed by ReLU.
    affine_relu: bool,
}

/// Plain stack of same-size convolutions.
#[derive(Debug, Clone, PartialEq)]
struct ConvStack {
    layers: Vec<LayerSpec>,
    params: Vec<Param>,
}

impl ConvStack {
    fn new(prefix: &str, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (i, s) in specs.iter().enumerate() {
            let fan_in = s.kernel * s.kernel * s.cin;
            params.push(Param {
                name: format!("{prefix}.conv{}.weight", i + 1),
                value: he_init_with(&[s.kernel, s.kernel, s.cin, s.cout], fan_in, &mut rng)?,
            });
            params.push(Param {
                name: format!("{prefix}.conv{}.bias", i + 1),
                value: Tensor::zeros(&[s.cout]),
            });
            if s.affine_relu {
                params.push(Param {
                    name: format!("{prefix}.norm{}.scale", i + 1),
                    value: Tensor::full(&[s.cout], 1.0),
                });
                params.push(Param {
                    name: format!("{prefix}.norm{}.shift", i + 1),
                    value: Tensor::zeros(&[s.cout]),
                });
            }
        }
        Ok(Self {
            layers: specs.to_vec(),
            params,
        })
    }

    fn in_channels(&self) -> usize {
        self.layers[0].cin
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable))
            .collect()
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        if vars.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} bound parameters for a network with {}",
                vars.len(),
                self.params.len()
            )));
        }
        let mut h = x;
        let mut it = vars.iter().copied();
        for layer in &self.layers {
            let (k, b) = (it.next().unwrap(), it.next().unwrap());
            h = ops::conv2d(tape, h, k, b)?;
            if layer.affine_relu {
                let (s, t) = (it.next().unwrap(), it.next().unwrap());
                h = ops::scale_shift(tape, h, s, t)?;
                h = ops::relu(tape, h)?;
            }
        }
        Ok(h)
    }
}

macro_rules! param_access {
    ($ty:ty) => {
        impl $ty {
            pub fn params(&self) -> &[Param] {
                &self.stack.params
            }

            pub fn params_mut(&mut self) -> &mut [Param] {
                &mut self.stack.params
            }

            pub fn param_count(&self) -> usize {
                self.stack.params.iter().map(|p| p.value.len()).sum()
            }

            /// Places every parameter on the tape as a leaf.
            pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
                self.stack.bind(tape, trainable)
            }

            pub fn in_channels(&self) -> usize {
                self.stack.in_channels()
            }
        }
    };
}

/// Importance-map predictor: three 3×3 convolutions (24, 24, 3 kernels)
/// each followed by scale/shift and ReLU, a 1×1 convolution to one channel,
/// and a softmax over all positions.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationNet {
    stack: ConvStack,
}

param_access!(DeformationNet);

impl DeformationNet {
    pub const MIN_INPUT: usize = 8;

    pub fn new(in_channels: usize, seed: u64) -> Result<Self> {
        if in_channels == 0 {
            return Err(Error::invalid("in_channels", "must be positive"));
        }
        let specs = [
            LayerSpec { kernel: 3, cin: in_channels, cout: 24, affine_relu: true },
            LayerSpec { kernel: 3, cin: 24, cout: 24, affine_relu: true },
            LayerSpec { kernel: 3, cin: 24, cout: 3, affine_relu: true },
            LayerSpec { kernel: 1, cin: 3, cout: 1, affine_relu: false },
        ];
        Ok(Self {
            stack: ConvStack::new("deform", &specs, seed)?,
        })
    }

    /// `x` is the `h_d × w_d × C` low-resolution image; returns the
    /// `h_d × w_d × 1` deformation map.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let (h, w, c) = tape.value(x).hwc()?;
        if h < Self::MIN_INPUT || w < Self::MIN_INPUT {
            return Err(Error::invalid(
                "input",
                format!("deformation input must be at least 8×8, got {h}×{w}"),
            ));
        }
        if c != self.in_channels() {
            return Err(Error::Shape(format!(
                "deformation net expects {} channels, got {c}",
                self.in_channels()
            )));
        }
        let logits = self.stack.forward(tape, vars, x)?;
        ops::spatial_softmax(tape, logits)
    }
}

/// Binds the network and runs it on a constant input.
pub fn deform_forward(net: &DeformationNet, i_lr: &Tensor, tape: &mut Tape) -> Result<(Var, Vec<Var>)> {
    let vars = net.bind(tape, true);
    let x = tape.constant(i_lr.clone());
    let d = net.forward(tape, &vars, x)?;
    Ok((d, vars))
}

/// Small stand-in segmentation head: four 3×3 convolutions
/// (`C → 16 → 16 → 16 → K`) with scale/shift and ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySegNet {
    stack: ConvStack,
    classes: usize,
}

param_access!(ToySegNet);

impl ToySegNet {
    pub const WIDTH: usize = 16;

    pub fn new(in_channels: usize, classes: usize, seed: u64) -> Result<Self> {
        if in_channels == 0 || classes == 0 {
            return Err(Error::invalid("channels", "must be positive"));
        }
        let w = Self::WIDTH;
        let specs = [
            LayerSpec { kernel: 3, cin: in_channels, cout: w, affine_relu: true },
            LayerSpec { kernel: 3, cin: w, cout: w, affine_relu: true },
            LayerSpec { kernel: 3, cin: w, cout: w, affine_relu: true },
            LayerSpec { kernel: 3, cin: w, cout: classes, affine_relu: false },
        ];
        Ok(Self {
            stack: ConvStack::new("seg", &specs, seed)?,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `h × w × C` image to `h × w × K` logits.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        self.stack.forward(tape, vars, x)
    }
}
