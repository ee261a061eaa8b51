//! Training and validation of one (sampler, size, seed) run.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use deformseg::metrics::{ConfusionMatrix, IouReport};
use deformseg::models::{
    deformed_grid, forward_deformed, forward_fixed, low_res_input, lr_schedule, predict, AdamState,
    Checkpoint, DeformationNet, Forward, Param, SamplerGeometry, ToySegNet,
};
use deformseg::recovery::recover_label;
use deformseg::samplers::{edge_deformation_target, label_sample};
use deformseg::synthdata::{generate_dataset, Scene};
use deformseg::{LabelMap, SamplingGrid, Tensor};

use crate::config::{ExperimentConfig, SamplerKind};
use crate::error::{HarnessError, Result};
use crate::sampler::fixed_grid;

/// Offset between the training and validation seed ranges.
pub const VAL_SEED_OFFSET: u64 = 1_000_000;

/// Training and validation scenes of a config.
pub fn datasets(cfg: &ExperimentConfig) -> Result<(Vec<Scene>, Vec<Scene>)> {
    let train = generate_dataset(&cfg.scene, cfg.train_scenes, cfg.data_seed)?;
    let val = generate_dataset(&cfg.scene, cfg.val_scenes, cfg.data_seed + VAL_SEED_OFFSET)?;
    Ok((train.scenes, val.scenes))
}

/// Per-scene inputs computed once per run.
struct Prepared<'a> {
    scene: &'a Scene,
    i_lr: Option<Tensor>,
    target: Option<Tensor>,
    grid: Option<SamplingGrid>,
}

fn prepare<'a>(cfg: &ExperimentConfig, geo: &SamplerGeometry, scenes: &'a [Scene], with_target: bool) -> Result<Vec<Prepared<'a>>> {
    scenes
        .iter()
        .map(|scene| {
            if cfg.sampler == SamplerKind::Deformed {
                let target = if with_target {
                    Some(edge_deformation_target(&scene.label, cfg.edge_radius, geo.map_h, geo.map_w)?.to_tensor())
                } else {
                    None
                };
                Ok(Prepared {
                    scene,
                    i_lr: Some(low_res_input(&scene.image, geo.map_h, geo.map_w)?),
                    target,
                    grid: None,
                })
            } else {
                Ok(Prepared {
                    scene,
                    i_lr: None,
                    target: None,
                    grid: Some(fixed_grid(cfg.sampler, &scene.label, geo, cfg.edge_radius, &cfg.energy)?),
                })
            }
        })
        .collect()
}

/// Mean loss components of one epoch and the validation scores after it.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub focal: Option<f64>,
    pub edge: Option<f64>,
    pub l2: f64,
    pub val_miou: Option<f64>,
    pub val_recovery_miou: Option<f64>,
}

pub const TRACE_HEADER: &str = "epoch,lr,loss,focal,edge,l2,val_miou,val_recovery_miou";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        use deformseg::metrics::fmt_opt;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.loss,
            fmt_opt(self.focal),
            fmt_opt(self.edge),
            self.l2,
            fmt_opt(self.val_miou),
            fmt_opt(self.val_recovery_miou)
        )
    }
}

/// Validation scores accumulated over all validation scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub iou: IouReport,
    pub recovery: IouReport,
    /// Pixel counts per class before and after sampling.
    pub counts_orig: Vec<u64>,
    pub counts_sampled: Vec<u64>,
}

fn add_counts(acc: &mut [u64], lm: &LabelMap) {
    for (a, c) in acc.iter_mut().zip(lm.class_counts()) {
        *a += c;
    }
}

/// The trained networks of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Networks {
    pub deform: Option<DeformationNet>,
    pub seg: ToySegNet,
}

impl Networks {
    pub fn init(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let classes = cfg.scene.classes as usize;
        let deform = (cfg.sampler == SamplerKind::Deformed)
            .then(|| DeformationNet::new(3, seed.wrapping_mul(2).wrapping_add(1)))
            .transpose()?;
        Ok(Self {
            deform,
            seg: ToySegNet::new(3, classes, seed.wrapping_mul(2).wrapping_add(2))?,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        if let Some(d) = &self.deform {
            ck.push_params(d.params())?;
        }
        ck.push_params(self.seg.params())?;
        Ok(ck)
    }

    /// Rebuilds networks for `cfg` and loads their parameters from `ck`.
    pub fn from_checkpoint(cfg: &ExperimentConfig, ck: &Checkpoint) -> Result<Self> {
        let mut nets = Self::init(cfg, 0)?;
        if let Some(d) = nets.deform.as_mut() {
            ck.load_params(d.params_mut())?;
        }
        ck.load_params(nets.seg.params_mut())?;
        Ok(nets)
    }
}

fn evaluate(nets: &Networks, val: &[Prepared], geo: &SamplerGeometry, classes: usize) -> Result<Evaluation> {
    let mut cm = ConfusionMatrix::new(classes);
    let mut cm_rec = ConfusionMatrix::new(classes);
    let mut counts_orig = vec![0; classes + 1];
    let mut counts_sampled = vec![0; classes + 1];
    for p in val {
        let grid = match (&nets.deform, &p.grid) {
            (Some(d), _) => deformed_grid(d, p.i_lr.as_ref().expect("deformed scenes carry i_lr"), geo)?,
            (None, Some(g)) => g.clone(),
            (None, None) => unreachable!("fixed samplers carry a grid"),
        };
        let label = &p.scene.label;
        let (_, full) = predict(&nets.seg, &p.scene.image, &grid)?;
        cm.accumulate(label, &full)?;
        cm_rec.accumulate(label, &recover_label(label, &grid)?)?;
        add_counts(&mut counts_orig, label);
        add_counts(&mut counts_sampled, &label_sample(label, &grid)?);
    }
    counts_orig.truncate(classes);
    counts_sampled.truncate(classes);
    Ok(Evaluation {
        iou: IouReport::from_confusion(&cm),
        recovery: IouReport::from_confusion(&cm_rec),
        counts_orig,
        counts_sampled,
    })
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub size: (usize, usize),
    pub seed: u64,
    pub trace: Vec<EpochRecord>,
    pub eval: Evaluation,
    pub checkpoint: Checkpoint,
    pub networks: Networks,
    pub seconds: f64,
}

fn check_finite(what: &str, epoch: usize, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::Divergence(format!("{what} is {v} at epoch {epoch}")))
    }
}

fn new_adam(params: &[Param], cfg: &ExperimentConfig) -> AdamState {
    let mut s = AdamState::new(params, cfg.lr);
    s.beta1 = cfg.beta1;
    s.beta2 = cfg.beta2;
    s.eps = cfg.eps;
    s
}

fn accumulate(acc: &mut Option<Vec<Tensor>>, grads: Vec<Tensor>) {
    match acc {
        None => *acc = Some(grads),
        Some(a) => {
            for (x, g) in a.iter_mut().zip(grads) {
                x.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
            }
        }
    }
}

fn averaged(acc: Option<Vec<Tensor>>, n: usize) -> Option<Vec<Tensor>> {
    acc.map(|mut gs| {
        for g in &mut gs {
            g.data_mut().iter_mut().for_each(|v| *v /= n as f64);
        }
        gs
    })
}

/// Trains one run on prepared data and validates after every epoch.
pub fn train_run(
    cfg: &ExperimentConfig,
    size: (usize, usize),
    seed: u64,
    train: &[Scene],
    val: &[Scene],
) -> Result<RunOutcome> {
    let start = Instant::now();
    let geo = SamplerGeometry::new(size.0, size.1, cfg.map_factor, cfg.kernel_radius)?;
    let classes = cfg.scene.classes as usize;
    let loss_cfg = cfg.loss_config();
    let train_p = prepare(cfg, &geo, train, true)?;
    let val_p = prepare(cfg, &geo, val, false)?;

    let mut nets = Networks::init(cfg, seed)?;
    let mut adam_deform = nets.deform.as_ref().map(|d| new_adam(d.params(), cfg));
    let mut adam_seg = new_adam(nets.seg.params(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_0de7);
    let mut order: Vec<usize> = (0..train_p.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg.epochs, cfg.lr);
        adam_seg.lr = lr;
        if let Some(a) = adam_deform.as_mut() {
            a.lr = lr;
        }
        let phase = cfg.mode.phase(epoch, cfg.epochs);
        order.shuffle(&mut rng);

        let (mut sum_loss, mut sum_focal, mut sum_edge, mut sum_l2) = (0.0, 0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut g_deform = None;
            let mut g_seg = None;
            for &i in batch {
                let p = &train_p[i];
                let f: Forward = match &nets.deform {
                    Some(d) => forward_deformed(
                        d,
                        &nets.seg,
                        &p.scene.image,
                        p.i_lr.as_ref().expect("deformed scenes carry i_lr"),
                        &p.scene.label,
                        p.target.as_ref(),
                        &geo,
                        &loss_cfg,
                        phase,
                    )?,
                    None => forward_fixed(&nets.seg, &p.scene.image, &p.scene.label, p.grid.as_ref().expect("fixed grid"), &loss_cfg)?,
                };
                let total = f.value(f.loss.total);
                check_finite("loss", epoch, total)?;
                sum_loss += total;
                sum_focal += f.loss.focal.map_or(0.0, |v| f.value(v));
                sum_edge += f.loss.edge.map_or(0.0, |v| f.value(v));
                sum_l2 += f.value(f.loss.l2);
                let (gd, gs) = f.gradients()?;
                if phase.train_deform && nets.deform.is_some() {
                    accumulate(&mut g_deform, gd);
                }
                if phase.train_seg && !gs.is_empty() {
                    accumulate(&mut g_seg, gs);
                }
            }
            if let (Some(g), Some(d), Some(a)) = (averaged(g_deform, batch.len()), nets.deform.as_mut(), adam_deform.as_mut()) {
                a.step(d.params_mut(), &g)?;
            }
            if let Some(g) = averaged(g_seg, batch.len()) {
                adam_seg.step(nets.seg.params_mut(), &g)?;
            }
        }
        let n = train_p.len() as f64;
        let eval = evaluate(&nets, &val_p, &geo, classes)?;
        let deformed = nets.deform.is_some();
        let record = EpochRecord {
            epoch,
            lr,
            loss: sum_loss / n,
            focal: (phase.seg_term || !deformed).then_some(sum_focal / n),
            edge: (deformed && phase.edge_term).then_some(sum_edge / n),
            l2: sum_l2 / n,
            val_miou: eval.iou.mean,
            val_recovery_miou: eval.recovery.mean,
        };
        check_finite("mean loss", epoch, record.loss)?;
        trace.push(record);
    }

    let eval = evaluate(&nets, &val_p, &geo, classes)?;
    let mut checkpoint = nets.to_checkpoint()?;
    if let (Some(d), Some(a)) = (&nets.deform, &adam_deform) {
        checkpoint.push_adam("adam.deform", d.params(), a)?;
    }
    checkpoint.push_adam("adam.seg", nets.seg.params(), &adam_seg)?;
    checkpoint.push("meta.epochs", Tensor::scalar(cfg.epochs as f64))?;
    Ok(RunOutcome {
        size,
        seed,
        trace,
        eval,
        checkpoint,
        networks: nets,
        seconds: start.elapsed().as_secs_f64(),
    })
}
