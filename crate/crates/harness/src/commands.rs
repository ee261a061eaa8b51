//! Subcommand implementations. Each writes its artifacts under an output
//! directory with fixed file names.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use deformseg::metrics::{
    confusion, fmt_opt, label_recovery_iou, mean_defined, write_class_metrics_csv, ClassMetricsRow,
    IouReport,
};
use deformseg::models::{deformed_grid, low_res_input, Checkpoint, SamplerGeometry, TrainingMode};
use deformseg::recovery::{nearest_fill, reverse_scatter};
use deformseg::samplers::{grid_sample, label_sample, uniform_grid, SampleMode};
use deformseg::synthdata::{generate_scene, SceneSpec};
use deformseg::tensor::{
    image_write_ppm, labelmap_read_pgm, labelmap_write_pgm, tensor_read, tensor_write,
};
use deformseg::{LabelMap, SamplingGrid};

use crate::config::{ExperimentConfig, SamplerKind};
use crate::error::{HarnessError, Result};
use crate::plot::{line_plot, overlay};
use crate::sampler::{edge_sim_grid, fixed_grid};
use crate::train::{datasets, train_run, Evaluation, Networks, RunOutcome, TRACE_HEADER};

pub const METRICS_CSV: &str = "metrics.csv";
pub const TRACE_CSV: &str = "trace.csv";
pub const TRADEOFF_CSV: &str = "tradeoff.csv";
pub const RUN_CSV: &str = "run.csv";
pub const ARGMAX_CSV: &str = "argmax.csv";
pub const CHECKPOINT_STEM: &str = "checkpoint.dtns";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

fn input_err(what: &str, e: deformseg::Error) -> HarnessError {
    HarnessError::Input(format!("{what}: {e}"))
}

/// Per-class table plus a trailing `mean` row.
pub fn metrics_csv(rows: &[ClassMetricsRow], iou: Option<&IouReport>, recovery: Option<&IouReport>) -> String {
    let mut buf = Vec::new();
    write_class_metrics_csv(&mut buf, rows).expect("writing to memory");
    let mean = |r: Option<&IouReport>| fmt_opt(r.and_then(|r| r.mean));
    writeln!(buf, "mean,{},{},NA,NA,NA", mean(iou), mean(recovery)).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

fn eval_rows(e: &Evaluation) -> Vec<ClassMetricsRow> {
    let total_o: u64 = e.counts_orig.iter().sum();
    let total_s: u64 = e.counts_sampled.iter().sum();
    (0..e.counts_orig.len())
        .map(|c| {
            let fo = e.counts_orig[c] as f64 / total_o.max(1) as f64;
            let fs = e.counts_sampled[c] as f64 / total_s.max(1) as f64;
            ClassMetricsRow {
                class_id: c as u32,
                iou: e.iou.per_class[c],
                recovery_iou: e.recovery.per_class[c],
                freq_orig: fo,
                freq_sampled: Some(fs),
                ratio: (fo > 0.0).then(|| (fs - fo) / fo),
            }
        })
        .collect()
}

/// Writes `trace.csv`, `metrics.csv`, `run.csv` and the checkpoint.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, run: &RunOutcome) -> Result<()> {
    create_dir(dir)?;
    let mut trace = String::from(TRACE_HEADER);
    trace.push('\n');
    for r in &run.trace {
        trace.push_str(&r.csv_row());
        trace.push('\n');
    }
    write_file(&dir.join(TRACE_CSV), trace)?;
    write_file(
        &dir.join(METRICS_CSV),
        metrics_csv(&eval_rows(&run.eval), Some(&run.eval.iou), Some(&run.eval.recovery)),
    )?;
    run.checkpoint.write(dir.join(CHECKPOINT_STEM))?;
    let (h, w) = run.size;
    let rate = (h * w) as f64 / (cfg.scene.height * cfg.scene.width) as f64;
    let mode = if cfg.sampler == SamplerKind::Deformed { cfg.mode.name() } else { "NA" };
    let run_csv = format!(
        "{RUN_HEADER}\n{},{mode},{},{h},{w},{},{},{rate},{},{},{}\n",
        cfg.sampler,
        run.seed,
        cfg.scene.height,
        cfg.scene.width,
        fmt_opt(run.eval.iou.mean),
        fmt_opt(run.eval.recovery.mean),
        run.seconds
    );
    write_file(&dir.join(RUN_CSV), run_csv)
}

pub const RUN_HEADER: &str = "sampler,mode,seed,out_h,out_w,full_h,full_w,downsample_rate,miou,recovery_miou,seconds";

/// Trains every configured (size, seed) pair. A single pair writes straight
/// into `out`; several pairs get one subdirectory each.
pub fn cmd_train(cfg: &ExperimentConfig, seed: Option<u64>, mode: Option<TrainingMode>, out: &Path) -> Result<Vec<RunOutcome>> {
    let mut cfg = cfg.clone();
    if let Some(m) = mode {
        cfg.mode = m;
        cfg.validate()?;
    }
    let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
    let (train, val) = datasets(&cfg)?;
    let single = seeds.len() == 1 && cfg.sizes.len() == 1;
    let mut runs = Vec::new();
    for &size in &cfg.sizes {
        for &s in &seeds {
            let run = train_run(&cfg, size, s, &train, &val)?;
            let dir = if single {
                out.to_path_buf()
            } else {
                out.join(format!("run_{}x{}_seed{s}", size.0, size.1))
            };
            write_run(&dir, &cfg, &run)?;
            runs.push(run);
        }
    }
    Ok(runs)
}

/// Inputs of [`cmd_sample`].
#[derive(Debug, Clone, Default)]
pub struct SampleInputs {
    pub image: PathBuf,
    pub label: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Grid, sampled image (and label) and overlay for one image at the first
/// configured size.
pub fn cmd_sample(cfg: &ExperimentConfig, inputs: &SampleInputs, out: &Path) -> Result<SamplingGrid> {
    let image = tensor_read(&inputs.image).map_err(|e| input_err("image", e))?;
    let (h_full, w_full, ch) = image.hwc().map_err(|e| input_err("image", e))?;
    let label = inputs
        .label
        .as_ref()
        .map(|p| labelmap_read_pgm(p, cfg.scene.classes).map_err(|e| input_err("label", e)))
        .transpose()?;
    if let Some(l) = &label {
        if (l.height(), l.width()) != (h_full, w_full) {
            return Err(HarnessError::Input(format!(
                "label is {}×{}, image {h_full}×{w_full}",
                l.height(),
                l.width()
            )));
        }
    }
    let (h, w) = cfg.sizes[0];
    let geo = SamplerGeometry::new(h, w, cfg.map_factor, cfg.kernel_radius)?;
    let grid = match cfg.sampler {
        SamplerKind::Uniform => uniform_grid(h, w)?,
        SamplerKind::Deformed => {
            let stem = inputs.checkpoint.as_ref().ok_or_else(|| {
                HarnessError::Input("the deformed sampler needs --checkpoint".into())
            })?;
            let ck = Checkpoint::read(stem).map_err(|e| input_err("checkpoint", e))?;
            if ch != 3 {
                return Err(HarnessError::Input(format!("deformed sampler expects 3 channels, got {ch}")));
            }
            let nets = Networks::from_checkpoint(cfg, &ck).map_err(|e| match e {
                HarnessError::Core(c) => input_err("checkpoint", c),
                other => other,
            })?;
            let deform = nets.deform.as_ref().expect("deformed config builds a deformation net");
            deformed_grid(deform, &low_res_input(&image, geo.map_h, geo.map_w)?, &geo)?
        }
        kind => {
            let l = label.as_ref().ok_or_else(|| {
                HarnessError::Input(format!("the {kind} sampler needs --label"))
            })?;
            fixed_grid(kind, l, &geo, cfg.edge_radius, &cfg.energy)?
        }
    };
    create_dir(out)?;
    tensor_write(&grid.to_tensor(), out.join("grid.dtns"))?;
    tensor_write(&grid_sample(&image, &grid, SampleMode::Bilinear)?, out.join("sampled.dtns"))?;
    if let Some(l) = &label {
        labelmap_write_pgm(&label_sample(l, &grid)?, out.join("sampled_label.pgm"))?;
    }
    if ch == 3 {
        image_write_ppm(&overlay(&image, &grid)?, out.join("overlay.ppm"))?;
    }
    Ok(grid)
}

/// Recovers a full-resolution label from a low-resolution prediction and
/// the grid that produced it; writes `recovered.pgm`.
pub fn cmd_recover(grid: &Path, pred: &Path, classes: u32, height: usize, width: usize, out: &Path) -> Result<LabelMap> {
    let g = SamplingGrid::from_tensor(&tensor_read(grid).map_err(|e| input_err("grid", e))?)
        .map_err(|e| input_err("grid", e))?;
    let p = labelmap_read_pgm(pred, classes).map_err(|e| input_err("prediction", e))?;
    let sp = reverse_scatter(&p, &g, height, width).map_err(|e| input_err("recover", e))?;
    let full = nearest_fill(&sp)?;
    create_dir(out)?;
    labelmap_write_pgm(&full, out.join("recovered.pgm"))?;
    Ok(full)
}

/// Per-class IoU of a prediction and/or recovery IoU of a grid against `y`.
/// A low-resolution prediction is first recovered with the grid.
pub fn cmd_eval(label: &Path, pred: Option<&Path>, grid: Option<&Path>, classes: u32, out: &Path) -> Result<String> {
    if pred.is_none() && grid.is_none() {
        return Err(HarnessError::Input("eval needs --pred, --grid or both".into()));
    }
    let y = labelmap_read_pgm(label, classes).map_err(|e| input_err("label", e))?;
    let g = grid
        .map(|p| -> Result<SamplingGrid> {
            let t = tensor_read(p).map_err(|e| input_err("grid", e))?;
            SamplingGrid::from_tensor(&t).map_err(|e| input_err("grid", e))
        })
        .transpose()?;
    let iou = match pred {
        Some(p) => {
            let mut pm = labelmap_read_pgm(p, classes).map_err(|e| input_err("prediction", e))?;
            if (pm.height(), pm.width()) != (y.height(), y.width()) {
                let g = g.as_ref().ok_or_else(|| {
                    HarnessError::Input("low-resolution prediction needs --grid".into())
                })?;
                pm = nearest_fill(&reverse_scatter(&pm, g, y.height(), y.width()).map_err(|e| input_err("prediction", e))?)?;
            }
            Some(IouReport::from_confusion(&confusion(&y, &pm).map_err(|e| input_err("prediction", e))?))
        }
        None => None,
    };
    let recovery = g.as_ref().map(|g| label_recovery_iou(&y, g)).transpose()?;
    let sampled = g.as_ref().map(|g| label_sample(&y, g)).transpose()?;
    let freq_o = deformseg::metrics::class_frequencies(&y);
    let freq_s = sampled.as_ref().map(deformseg::metrics::class_frequencies);
    let rows: Vec<ClassMetricsRow> = (0..classes as usize)
        .map(|c| {
            let fs = freq_s.as_ref().map(|f| f[c]);
            ClassMetricsRow {
                class_id: c as u32,
                iou: iou.as_ref().and_then(|r| r.per_class[c]),
                recovery_iou: recovery.as_ref().and_then(|r| r.per_class[c]),
                freq_orig: freq_o[c],
                freq_sampled: fs,
                ratio: fs.filter(|_| freq_o[c] > 0.0).map(|fs| (fs - freq_o[c]) / freq_o[c]),
            }
        })
        .collect();
    let text = metrics_csv(&rows, iou.as_ref(), recovery.as_ref());
    create_dir(out)?;
    write_file(&out.join(METRICS_CSV), &text)?;
    Ok(text)
}

/// Recovery IoU of the edge-simulated sampler per blur radius and binary
/// class-vs-rest task, with the uniform sampler as baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub radii: Vec<usize>,
    pub seeds: Vec<u64>,
    /// `[seed][class][radius]`; `None` where the class is absent.
    pub edge: Vec<Vec<Vec<Option<f64>>>>,
    /// `[seed][class]`.
    pub uniform: Vec<Vec<Option<f64>>>,
}

impl SweepResult {
    /// Radius with the highest IoU for one seed and class; ties go to the
    /// smaller radius.
    pub fn argmax(&self, seed_idx: usize, class: usize) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (r, v) in self.radii.iter().zip(&self.edge[seed_idx][class]) {
            if let Some(v) = *v {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((*r, v));
                }
            }
        }
        best
    }

    /// Mean over seeds of one class's IoU at each radius.
    pub fn mean_per_radius(&self, class: usize) -> Vec<Option<f64>> {
        (0..self.radii.len())
            .map(|r| mean_defined(&self.edge.iter().map(|s| s[class][r]).collect::<Vec<_>>()))
            .collect()
    }

    pub fn mean_uniform(&self, class: usize) -> Option<f64> {
        mean_defined(&self.uniform.iter().map(|s| s[class]).collect::<Vec<_>>())
    }
}

/// Scenes are generated with each configured seed.
pub fn cmd_sweep_edge(cfg: &ExperimentConfig, out: &Path) -> Result<SweepResult> {
    let (h, w) = cfg.sizes[0];
    let geo = SamplerGeometry::new(h, w, cfg.map_factor, cfg.kernel_radius)?;
    let classes = cfg.scene.classes;
    let mut result = SweepResult {
        radii: cfg.sweep_radii.clone(),
        seeds: cfg.seeds.clone(),
        edge: Vec::new(),
        uniform: Vec::new(),
    };
    let uniform = uniform_grid(h, w)?;
    for &seed in &cfg.seeds {
        let scene = generate_scene(&SceneSpec { seed, ..cfg.scene.clone() })?;
        let mut per_class = Vec::new();
        let mut uni = Vec::new();
        for c in 0..classes {
            let bin = scene.label.binarize(c);
            let present = bin.class_counts()[1] > 0;
            let score = |g: &SamplingGrid| -> Result<Option<f64>> {
                Ok(if present { label_recovery_iou(&bin, g)?.per_class[1] } else { None })
            };
            per_class.push(
                cfg.sweep_radii
                    .iter()
                    .map(|&r| score(&edge_sim_grid(&bin, r, &geo)?))
                    .collect::<Result<Vec<_>>>()?,
            );
            uni.push(score(&uniform)?);
        }
        result.edge.push(per_class);
        result.uniform.push(uni);
    }

    let mut sweep = String::from("seed,class_id,radius,recovery_iou\n");
    let mut argmax = String::from("seed,class_id,best_radius,best_iou,uniform_iou\n");
    for (si, &seed) in result.seeds.iter().enumerate() {
        for c in 0..classes as usize {
            for (ri, r) in result.radii.iter().enumerate() {
                sweep.push_str(&format!("{seed},{c},{r},{}\n", fmt_opt(result.edge[si][c][ri])));
            }
            sweep.push_str(&format!("{seed},{c},uniform,{}\n", fmt_opt(result.uniform[si][c])));
            let best = result.argmax(si, c);
            argmax.push_str(&format!(
                "{seed},{c},{},{},{}\n",
                best.map_or("NA".to_string(), |b| b.0.to_string()),
                fmt_opt(best.map(|b| b.1)),
                fmt_opt(result.uniform[si][c])
            ));
        }
    }
    create_dir(out)?;
    write_file(&out.join(METRICS_CSV), sweep)?;
    write_file(&out.join(ARGMAX_CSV), argmax)?;
    Ok(result)
}

/// One aggregated row of the trade-off table.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    pub sampler: String,
    pub out_h: usize,
    pub out_w: usize,
    pub rate: f64,
    pub runs: usize,
    pub miou: (f64, f64),
    pub recovery_miou: (f64, f64),
    pub seconds: (f64, f64),
}

pub const TRADEOFF_HEADER: &str =
    "sampler,out_h,out_w,downsample_rate,runs,miou_mean,miou_sd,recovery_miou_mean,recovery_miou_sd,seconds_mean,seconds_sd";

/// Mean and sample standard deviation; a single value has deviation 0.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let direct = dir.join(RUN_CSV);
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let mut found = Vec::new();
    if let Ok(entries) = fs::read_dir(dir) {
        for e in entries.flatten() {
            let p = e.path().join(RUN_CSV);
            if p.is_file() {
                found.push(p);
            }
        }
    }
    if found.is_empty() {
        return Err(HarnessError::Input(format!("{}: incomplete run directory (no {RUN_CSV})", dir.display())));
    }
    found.sort();
    Ok(found)
}

struct RunRow {
    sampler: String,
    out_h: usize,
    out_w: usize,
    rate: f64,
    miou: f64,
    recovery: f64,
    seconds: f64,
}

fn parse_run(path: &Path) -> Result<RunRow> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let bad = || HarnessError::Input(format!("{}: malformed run file", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(RUN_HEADER) {
        return Err(bad());
    }
    let f: Vec<&str> = lines.next().ok_or_else(bad)?.split(',').collect();
    if f.len() != 11 {
        return Err(bad());
    }
    let num = |s: &str| -> Result<f64> {
        if s == "NA" {
            Ok(f64::NAN)
        } else {
            s.parse().map_err(|_| bad())
        }
    };
    let (out_h, out_w): (usize, usize) = (f[3].parse().map_err(|_| bad())?, f[4].parse().map_err(|_| bad())?);
    let (full_h, full_w): (usize, usize) = (f[5].parse().map_err(|_| bad())?, f[6].parse().map_err(|_| bad())?);
    Ok(RunRow {
        sampler: f[0].to_string(),
        out_h,
        out_w,
        rate: (out_h * out_w) as f64 / (full_h * full_w) as f64,
        miou: num(f[8])?,
        recovery: num(f[9])?,
        seconds: num(f[10])?,
    })
}

/// Aggregates completed runs into `tradeoff.csv` and two line plots
/// (`tradeoff_miou.ppm`, `tradeoff_recovery.ppm`).
pub fn cmd_report(run_dirs: &[PathBuf], out: &Path) -> Result<Vec<TradeoffRow>> {
    if run_dirs.is_empty() {
        return Err(HarnessError::Input("report needs at least one run directory".into()));
    }
    let mut groups: BTreeMap<(String, usize, usize), Vec<RunRow>> = BTreeMap::new();
    for dir in run_dirs {
        for f in run_files(dir)? {
            let r = parse_run(&f)?;
            groups.entry((r.sampler.clone(), r.out_h, r.out_w)).or_default().push(r);
        }
    }
    let mut rows: Vec<TradeoffRow> = groups
        .into_iter()
        .map(|((sampler, out_h, out_w), runs)| {
            let col = |f: fn(&RunRow) -> f64| mean_sd(&runs.iter().map(f).collect::<Vec<_>>());
            TradeoffRow {
                sampler,
                out_h,
                out_w,
                rate: runs[0].rate,
                runs: runs.len(),
                miou: col(|r| r.miou),
                recovery_miou: col(|r| r.recovery),
                seconds: col(|r| r.seconds),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.sampler.cmp(&b.sampler).then(a.rate.total_cmp(&b.rate)));

    let mut csv = format!("{TRADEOFF_HEADER}\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.sampler, r.out_h, r.out_w, r.rate, r.runs, r.miou.0, r.miou.1, r.recovery_miou.0,
            r.recovery_miou.1, r.seconds.0, r.seconds.1
        ));
    }
    create_dir(out)?;
    write_file(&out.join(TRADEOFF_CSV), csv)?;

    let mut samplers: Vec<&str> = rows.iter().map(|r| r.sampler.as_str()).collect();
    samplers.dedup();
    for (name, pick) in [
        ("tradeoff_miou.ppm", (|r: &TradeoffRow| r.miou.0) as fn(&TradeoffRow) -> f64),
        ("tradeoff_recovery.ppm", |r: &TradeoffRow| r.recovery_miou.0),
    ] {
        let series: Vec<Vec<(f64, f64)>> = samplers
            .iter()
            .map(|s| rows.iter().filter(|r| r.sampler == *s).map(|r| (r.rate, pick(r))).collect())
            .collect();
        image_write_ppm(&line_plot(&series, 320, 240, (0.0, 1.0))?, out.join(name))?;
    }
    Ok(rows)
}
