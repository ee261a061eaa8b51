//! Segmentation and sampling-quality measurement.

use std::io::Write;

use crate::error::{Error, Result};
use crate::recovery::recover_label;
use crate::samplers::label_sample;
use crate::tensor::{LabelMap, SamplingGrid};

/// `K × K` counts; rows are ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    /// Adds another matrix of the same size.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape(format!(
                "cannot merge {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Accumulates one label/prediction pair. Pixels ignored in either map are
    /// skipped.
    pub fn accumulate(&mut self, y: &LabelMap, p: &LabelMap) -> Result<()> {
        if (y.height(), y.width()) != (p.height(), p.width()) {
            return Err(Error::Shape(format!(
                "label {}×{} vs prediction {}×{}",
                y.height(),
                y.width(),
                p.height(),
                p.width()
            )));
        }
        if y.classes() != p.classes() || y.classes() as usize != self.classes {
            return Err(Error::Shape(format!(
                "class counts differ: label {}, prediction {}, matrix {}",
                y.classes(),
                p.classes(),
                self.classes
            )));
        }
        let ignore = y.ignore();
        for (&t, &q) in y.data().iter().zip(p.data()) {
            if t == ignore || q == ignore {
                continue;
            }
            self.counts[t as usize * self.classes + q as usize] += 1;
        }
        Ok(())
    }

    /// IoU per class; `None` where the class is absent from both maps.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..self.classes).map(|q| self.get(c, q)).sum();
                let col: u64 = (0..self.classes).map(|t| self.get(t, c)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }
}

pub fn confusion(y: &LabelMap, p: &LabelMap) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(y.classes() as usize);
    cm.accumulate(y, p)?;
    Ok(cm)
}

pub fn iou_per_class(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    cm.iou_per_class()
}

/// Mean over defined entries; `None` if none are defined.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

impl IouReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let per_class = cm.iou_per_class();
        let mean = mean_defined(&per_class);
        Self { per_class, mean }
    }
}

/// IoU between a label and its own downsample-then-recover round trip.
pub fn label_recovery_iou(y: &LabelMap, g: &SamplingGrid) -> Result<IouReport> {
    let recovered = recover_label(y, g)?;
    Ok(IouReport::from_confusion(&confusion(y, &recovered)?))
}

/// Per-class pixel frequencies (fractions of all pixels), length `K`.
pub fn class_frequencies(y: &LabelMap) -> Vec<f64> {
    let counts = y.class_counts();
    let n = y.data().len() as f64;
    counts[..y.classes() as usize]
        .iter()
        .map(|&c| c as f64 / n)
        .collect()
}

/// Relative change of each class's frequency after sampling with `g`;
/// `None` for classes absent from `y`.
pub fn sampling_frequency_ratio(y: &LabelMap, g: &SamplingGrid) -> Result<Vec<Option<f64>>> {
    let sampled = label_sample(y, g)?;
    let orig = class_frequencies(y);
    let after = class_frequencies(&sampled);
    Ok(orig
        .iter()
        .zip(&after)
        .map(|(&fo, &fs)| (fo > 0.0).then(|| (fs - fo) / fo))
        .collect())
}

/// One row of the per-class metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetricsRow {
    pub class_id: u32,
    pub iou: Option<f64>,
    pub recovery_iou: Option<f64>,
    pub freq_orig: f64,
    pub freq_sampled: Option<f64>,
    pub ratio: Option<f64>,
}

pub const CLASS_METRICS_HEADER: &str = "class_id,iou,recovery_iou,freq_orig,freq_sampled,ratio";

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Writes the per-class table as CSV with a mandatory header; undefined
/// values are written as `NA`.
pub fn write_class_metrics_csv<W: Write>(out: &mut W, rows: &[ClassMetricsRow]) -> std::io::Result<()> {
    writeln!(out, "{CLASS_METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.class_id,
            fmt_opt(r.iou),
            fmt_opt(r.recovery_iou),
            r.freq_orig,
            fmt_opt(r.freq_sampled),
            fmt_opt(r.ratio)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::uniform_grid;

    #[test]
    fn worked_two_by_two() {
        let y = LabelMap::new(2, 2, 2, vec![0, 0, 1, 1]).unwrap();
        let p = LabelMap::new(2, 2, 2, vec![0, 1, 1, 1]).unwrap();
        let cm = confusion(&y, &p).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (1, 1, 0, 2));
        let r = IouReport::from_confusion(&cm);
        assert_eq!(r.per_class, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((r.mean.unwrap() - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_absent() {
        let y = LabelMap::new(1, 3, 3, vec![0, 0, 2]).unwrap();
        let cm = confusion(&y, &y).unwrap();
        assert_eq!(cm.trace(), 3);
        let iou = cm.iou_per_class();
        assert_eq!(iou, vec![Some(1.0), None, Some(1.0)]);
        assert_eq!(mean_defined(&iou), Some(1.0));
    }

    #[test]
    fn all_ignored_is_zero_matrix() {
        let y = LabelMap::filled(2, 2, 2, 2).unwrap();
        let p = LabelMap::filled(2, 2, 2, 0).unwrap();
        assert_eq!(confusion(&y, &p).unwrap().total(), 0);
    }

    #[test]
    fn mismatches_rejected() {
        let y = LabelMap::filled(2, 2, 2, 0).unwrap();
        assert!(confusion(&y, &LabelMap::filled(2, 3, 2, 0).unwrap()).is_err());
        assert!(confusion(&y, &LabelMap::filled(2, 2, 3, 0).unwrap()).is_err());
    }

    #[test]
    fn identity_ratios_are_zero() {
        let y = LabelMap::new(2, 3, 3, vec![0, 1, 1, 0, 0, 0]).unwrap();
        let r = sampling_frequency_ratio(&y, &uniform_grid(2, 3).unwrap()).unwrap();
        assert_eq!(r, vec![Some(0.0), Some(0.0), None]);
    }

    #[test]
    fn csv_header_and_na() {
        let mut buf = Vec::new();
        write_class_metrics_csv(
            &mut buf,
            &[ClassMetricsRow {
                class_id: 1,
                iou: None,
                recovery_iou: Some(0.5),
                freq_orig: 0.25,
                freq_sampled: Some(0.5),
                ratio: Some(1.0),
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "class_id,iou,recovery_iou,freq_orig,freq_sampled,ratio\n1,NA,0.5,0.25,0.5,1\n"
        );
    }
}
