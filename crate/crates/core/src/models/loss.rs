use std::fmt;
use std::str::FromStr;

use crate::autodiff::{ops, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Tensor};

/// How the two loss terms are combined over training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingMode {
    /// Focal + scaled edge MSE, both networks trained together.
    Joint,
    /// Focal only; the edge term is dropped.
    SingleLoss,
    /// Stage 1 trains only the deformation net on the edge term; stage 2
    /// freezes it and trains only the segmentation head on focal loss.
    Stage,
    /// Stage 1 as in [`TrainingMode::Stage`]; stage 2 trains both networks on
    /// the joint loss.
    StageJoint,
}

impl TrainingMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainingMode::Joint => "joint",
            TrainingMode::SingleLoss => "single-loss",
            TrainingMode::Stage => "stage",
            TrainingMode::StageJoint => "stage-joint",
        }
    }

    /// Fraction of epochs spent in stage 1 for the staged modes.
    pub const STAGE_ONE_FRACTION: f64 = 0.4;

    /// Which terms and networks are active at `epoch`.
    pub fn phase(self, epoch: usize, total_epochs: usize) -> Phase {
        let in_stage_one =
            (epoch as f64) < Self::STAGE_ONE_FRACTION * total_epochs as f64;
        match self {
            TrainingMode::Joint => Phase::ALL,
            TrainingMode::SingleLoss => Phase {
                seg_term: true,
                edge_term: false,
                train_deform: true,
                train_seg: true,
            },
            TrainingMode::Stage | TrainingMode::StageJoint if in_stage_one => Phase {
                seg_term: false,
                edge_term: true,
                train_deform: true,
                train_seg: false,
            },
            TrainingMode::Stage => Phase {
                seg_term: true,
                edge_term: false,
                train_deform: false,
                train_seg: true,
            },
            TrainingMode::StageJoint => Phase::ALL,
        }
    }
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(TrainingMode::Joint),
            "single-loss" => Ok(TrainingMode::SingleLoss),
            "stage" | "stage-single-loss" => Ok(TrainingMode::Stage),
            "stage-joint" => Ok(TrainingMode::StageJoint),
            other => Err(Error::invalid("mode", format!("unknown training mode {other:?}"))),
        }
    }
}

/// Active loss terms and trainable networks for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Phase {
    pub seg_term: bool,
    pub edge_term: bool,
    pub train_deform: bool,
    pub train_seg: bool,
}

impl Phase {
    pub const ALL: Phase = Phase {
        seg_term: true,
        edge_term: true,
        train_deform: true,
        train_seg: true,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointLossConfig {
    pub gamma: f64,
    pub edge_scale: f64,
    pub l2: f64,
    pub mode: TrainingMode,
}

impl Default for JointLossConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            edge_scale: 100.0,
            l2: 1e-4,
            mode: TrainingMode::Joint,
        }
    }
}

impl JointLossConfig {
    pub fn validate(&self) -> Result<()> {
        if matches!(self.mode, TrainingMode::Joint | TrainingMode::StageJoint) && self.edge_scale <= 0.0 {
            return Err(Error::invalid("edge_scale", "must be positive in joint mode"));
        }
        if self.gamma < 0.0 || self.l2 < 0.0 {
            return Err(Error::invalid("loss config", "gamma and l2 must be ≥ 0"));
        }
        Ok(())
    }
}

/// The loss graph, with its components kept for logging.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub focal: Option<Var>,
    /// Edge MSE already multiplied by the edge scale.
    pub edge: Option<Var>,
    pub l2: Var,
}

/// Segmentation focal loss plus the scaled edge MSE between the predicted and
/// target deformation maps plus L2 weight decay on `params`. Which terms are
/// present is decided by `phase`.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss(
    tape: &mut Tape,
    seg_logits: Option<Var>,
    low_res_label: &LabelMap,
    pred_map: Option<Var>,
    target_map: Option<&Tensor>,
    params: &[Var],
    cfg: &JointLossConfig,
    phase: Phase,
) -> Result<LossTerms> {
    cfg.validate()?;
    let mut terms = Vec::with_capacity(3);
    let focal = match (phase.seg_term, seg_logits) {
        (true, Some(logits)) => {
            let f = ops::focal_loss(tape, logits, low_res_label, cfg.gamma)?;
            terms.push(f);
            Some(f)
        }
        (true, None) => return Err(Error::invalid("seg_logits", "required when the focal term is on")),
        _ => None,
    };
    let edge = match (phase.edge_term, pred_map, target_map) {
        (true, Some(pred), Some(target)) => {
            if tape.value(pred).shape() != target.shape() {
                return Err(Error::Shape(format!(
                    "predicted map {:?} vs target {:?}",
                    tape.value(pred).shape(),
                    target.shape()
                )));
            }
            let mse = ops::mse_loss(tape, pred, target)?;
            let scaled = ops::scale(tape, mse, cfg.edge_scale)?;
            terms.push(scaled);
            Some(scaled)
        }
        (true, _, _) => {
            return Err(Error::invalid("pred_map", "edge term needs predicted and target maps"))
        }
        _ => None,
    };
    let l2 = ops::l2_penalty(tape, params, cfg.l2)?;
    terms.push(l2);
    let total = ops::add_all(tape, &terms)?;
    Ok(LossTerms {
        total,
        focal,
        edge,
        l2,
    })
}

/// Step decay: ×0.1 from half of training, ×0.01 from three quarters.
pub fn lr_schedule(epoch: usize, total_epochs: usize, base_lr: f64) -> f64 {
    let e = epoch as f64;
    let n = total_epochs as f64;
    if e >= 0.75 * n {
        base_lr * 0.01
    } else if e >= 0.5 * n {
        base_lr * 0.1
    } else {
        base_lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_milestones() {
        assert_eq!(lr_schedule(0, 100, 1e-3), 1e-3);
        assert_eq!(lr_schedule(49, 100, 1e-3), 1e-3);
        assert!((lr_schedule(50, 100, 1e-3) - 1e-4).abs() < 1e-18);
        assert!((lr_schedule(90, 100, 1e-3) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn mode_phases() {
        assert_eq!(TrainingMode::Joint.phase(0, 10), Phase::ALL);
        assert!(!TrainingMode::SingleLoss.phase(3, 10).edge_term);
        let s1 = TrainingMode::Stage.phase(3, 10);
        assert!(s1.edge_term && !s1.seg_term && !s1.train_seg);
        let s2 = TrainingMode::Stage.phase(4, 10);
        assert!(!s2.edge_term && s2.seg_term && !s2.train_deform);
        assert_eq!(TrainingMode::StageJoint.phase(4, 10), Phase::ALL);
        assert_eq!("stage".parse::<TrainingMode>().unwrap(), TrainingMode::Stage);
        assert!("bogus".parse::<TrainingMode>().is_err());
    }

    #[test]
    fn joint_edge_scale_must_be_positive() {
        let cfg = JointLossConfig {
            edge_scale: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = JointLossConfig {
            edge_scale: 0.0,
            mode: TrainingMode::SingleLoss,
            ..Default::default()
        };
        assert!(cfg.validate().is_ok());
    }

    fn fixture() -> (Tape, Var, LabelMap, Var, Tensor, Vec<Var>) {
        let mut tape = Tape::new();
        let z: Vec<f64> = (0..24).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect();
        let logits = tape.param(Tensor::new(vec![2, 4, 3], z).unwrap());
        let lm = LabelMap::new(2, 4, 3, vec![0, 1, 2, 3, 1, 1, 0, 2]).unwrap();
        let d: Vec<f64> = (0..8).map(|i| (i + 1) as f64 / 36.0).collect();
        let pred = tape.param(Tensor::new(vec![2, 4, 1], d).unwrap());
        let target = Tensor::full(&[2, 4, 1], 0.125);
        let w = tape.param(Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
        (tape, logits, lm, pred, target, vec![w])
    }

    #[test]
    fn joint_equals_hand_sum() {
        let (mut tape, logits, lm, pred, target, params) = fixture();
        let cfg = JointLossConfig::default();
        let t = joint_loss(&mut tape, Some(logits), &lm, Some(pred), Some(&target), &params, &cfg, Phase::ALL).unwrap();

        // independent recomputation of each term
        let z = tape.value(logits).data().to_vec();
        let mut focal = 0.0;
        let mut n = 0.0;
        for (px, &c) in lm.data().iter().enumerate() {
            if c == lm.ignore() {
                continue;
            }
            let zp = &z[px * 3..px * 3 + 3];
            let s: f64 = zp.iter().map(|v| v.exp()).sum();
            let p = zp[c as usize].exp() / s;
            focal += -(1.0 - p).powi(2) * p.ln();
            n += 1.0;
        }
        focal /= n;
        let mse: f64 = tape.value(pred).data().iter().map(|v| (v - 0.125).powi(2)).sum::<f64>() / 8.0;
        let l2 = 1e-4 * (0.25 + 1.0 + 4.0);
        let expect = focal + 100.0 * mse + l2;
        assert!((tape.value(t.total).data()[0] - expect).abs() < 1e-12);
        assert!((tape.value(t.edge.unwrap()).data()[0] - 100.0 * mse).abs() < 1e-12);
    }

    #[test]
    fn single_loss_drops_edge_term() {
        let (mut tape, logits, lm, pred, target, params) = fixture();
        let cfg = JointLossConfig { mode: TrainingMode::SingleLoss, ..Default::default() };
        let phase = cfg.mode.phase(0, 1);
        let t = joint_loss(&mut tape, Some(logits), &lm, Some(pred), Some(&target), &params, &cfg, phase).unwrap();
        assert!(t.edge.is_none());
        let f = tape.value(t.focal.unwrap()).data()[0];
        let l = tape.value(t.l2).data()[0];
        assert_eq!(tape.value(t.total).data()[0], f + l);
    }

    #[test]
    fn matching_maps_have_zero_edge_term() {
        let (mut tape, logits, lm, pred, _, params) = fixture();
        let same = tape.value(pred).clone();
        let t = joint_loss(&mut tape, Some(logits), &lm, Some(pred), Some(&same), &params, &JointLossConfig::default(), Phase::ALL).unwrap();
        assert_eq!(tape.value(t.edge.unwrap()).data()[0], 0.0);
    }
}
