//! Dense arrays and the raster types built on them.
//!
//! Images are stored channels-last (`H × W × C`), row-major. Label maps keep
//! class IDs as `u32` with the ignore class encoded as `classes` (one past the
//! last valid class).

mod io;

pub use io::{
    image_write_ppm, labelmap_read_pgm, labelmap_write_pgm, tensor_from_bytes, tensor_read,
    tensor_to_bytes, tensor_write, DTNS_MAGIC,
};

use crate::error::{Error, Result};

/// Dense row-major `f64` array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking the length and that every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = checked_len(&shape)?;
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Internal constructor for values produced by trusted kernels.
    pub(crate) fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(H, W, C)` of a rank-3 tensor.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::Shape(format!(
                "expected an H×W×C tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn at3(&self, i: usize, j: usize, c: usize) -> f64 {
        let (w, ch) = (self.shape[1], self.shape[2]);
        self.data[(i * w + j) * ch + c]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::ExtentOverflow(shape.iter().map(|&e| e as u64).collect()))
}

/// Integer class raster. Valid IDs are `0..classes`; `classes` itself marks
/// ignored pixels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    classes: u32,
    data: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, classes: u32, data: Vec<u32>) -> Result<Self> {
        if height * width != data.len() {
            return Err(Error::Shape(format!(
                "label map {height}×{width} needs {} entries, got {}",
                height * width,
                data.len()
            )));
        }
        if classes == 0 {
            return Err(Error::invalid("classes", "must be at least 1"));
        }
        if let Some(bad) = data.iter().find(|&&v| v > classes) {
            return Err(Error::invalid(
                "data",
                format!("class id {bad} outside [0, {classes}]"),
            ));
        }
        Ok(Self {
            height,
            width,
            classes,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, classes: u32, class: u32) -> Result<Self> {
        Self::new(height, width, classes, vec![class; height * width])
    }

    pub(crate) fn from_parts(height: usize, width: usize, classes: u32, data: Vec<u32>) -> Self {
        debug_assert_eq!(height * width, data.len());
        Self {
            height,
            width,
            classes,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> u32 {
        self.classes
    }

    /// Sentinel class ID for ignored pixels.
    pub fn ignore(&self) -> u32 {
        self.classes
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.data[i * self.width + j]
    }

    /// Binary `class`-vs-rest relabeling: 1 for `class`, 0 otherwise; ignored
    /// pixels stay ignored (ID 2).
    pub fn binarize(&self, class: u32) -> LabelMap {
        let ignore = self.ignore();
        let data = self
            .data
            .iter()
            .map(|&v| {
                if v == ignore {
                    2
                } else {
                    u32::from(v == class)
                }
            })
            .collect();
        LabelMap::from_parts(self.height, self.width, 2, data)
    }

    /// Per-class pixel counts, length `classes + 1` (last slot counts ignores).
    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.classes as usize + 1];
        for &v in &self.data {
            counts[v as usize] += 1;
        }
        counts
    }
}

/// Nonnegative importance weights over a `height × width` lattice summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DeformationMap {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height * width != values.len() {
            return Err(Error::Shape(format!(
                "deformation map {height}×{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("values", "must be finite and nonnegative"));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::invalid("values", format!("sum {sum} is not 1")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Normalizes arbitrary nonnegative weights to sum 1. All-zero input
    /// yields the constant map.
    pub fn normalized(height: usize, width: usize, mut weights: Vec<f64>) -> Result<Self> {
        if height * width != weights.len() || weights.is_empty() {
            return Err(Error::Shape(format!(
                "deformation map {height}×{width} needs {} values, got {}",
                height * width,
                weights.len()
            )));
        }
        if weights.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("weights", "must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if sum > 0.0 {
            weights.iter_mut().for_each(|v| *v /= sum);
        } else {
            let c = 1.0 / weights.len() as f64;
            weights.iter_mut().for_each(|v| *v = c);
        }
        Ok(Self {
            height,
            width,
            values: weights,
        })
    }

    pub fn constant(height: usize, width: usize) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            values: vec![1.0 / n as f64; n],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.height, self.width, 1], self.values.clone())
    }
}

/// Per-output-pixel relative source coordinates `(u, v) ∈ [0,1]²`; `u` runs
/// along rows, `v` along columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingGrid {
    height: usize,
    width: usize,
    coords: Vec<[f64; 2]>,
}

impl SamplingGrid {
    pub fn new(height: usize, width: usize, coords: Vec<[f64; 2]>) -> Result<Self> {
        if height * width != coords.len() || coords.is_empty() {
            return Err(Error::Shape(format!(
                "grid {height}×{width} needs {} coordinates, got {}",
                height * width,
                coords.len()
            )));
        }
        if coords
            .iter()
            .flatten()
            .any(|c| !c.is_finite() || !(0.0..=1.0).contains(c))
        {
            return Err(Error::invalid("coords", "coordinates must lie in [0, 1]"));
        }
        Ok(Self {
            height,
            width,
            coords,
        })
    }

    /// Builds a grid, clamping every coordinate into `[0, 1]`.
    pub(crate) fn clamped(height: usize, width: usize, mut coords: Vec<[f64; 2]>) -> Self {
        for c in coords.iter_mut().flatten() {
            *c = c.clamp(0.0, 1.0);
        }
        Self {
            height,
            width,
            coords,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn get(&self, i: usize, j: usize) -> [f64; 2] {
        self.coords[i * self.width + j]
    }

    /// Grid as an `h × w × 2` tensor (`[..., 0]` = u, `[..., 1]` = v).
    pub fn to_tensor(&self) -> Tensor {
        let data = self.coords.iter().flatten().copied().collect();
        Tensor::from_vec(&[self.height, self.width, 2], data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w, c) = t.hwc()?;
        if c != 2 {
            return Err(Error::Shape(format!(
                "grid tensor needs 2 channels, got {c}"
            )));
        }
        let coords = t.data().chunks_exact(2).map(|p| [p[0], p[1]]).collect();
        Self::new(h, w, coords)
    }

    pub fn max_abs_diff(&self, other: &SamplingGrid) -> f64 {
        assert_eq!(
            (self.height, self.width),
            (other.height, other.width),
            "grid size mismatch"
        );
        self.coords
            .iter()
            .zip(&other.coords)
            .flat_map(|(a, b)| [(a[0] - b[0]).abs(), (a[1] - b[1]).abs()])
            .fold(0.0, f64::max)
    }
}
