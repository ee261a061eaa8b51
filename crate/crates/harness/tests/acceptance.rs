//! Acceptance criteria AC-1 … AC-9. Runs as a plain binary so that each
//! criterion prints exactly one PASS/FAIL line; exits nonzero if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use deformseg::autodiff::{grad_check, grad_check_coords, ops, Tape, Var};
use deformseg::models::{
    joint_loss, low_res_input, DeformationNet, JointLossConfig, Phase, SamplerGeometry, ToySegNet, TrainingMode,
};
use deformseg::recovery::{nearest_fill, recover_label, ScatteredPoint, ScatteredPoints};
use deformseg::samplers::{
    deformation_to_grid, deformation_weights_to_grid, edge_deformation_target, edge_energy_optimize, grid_sample,
    label_sample, uniform_grid, EdgeEnergyConfig, GaussianKernel, SampleMode,
};
use deformseg::{DeformationMap, LabelMap, SamplingGrid, Tensor};
use deformseg_harness::commands::{cmd_sweep_edge, cmd_train};
use deformseg_harness::ExperimentConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn random_label(rng: &mut ChaCha8Rng, h: usize, w: usize, classes: u32) -> LabelMap {
    let data = (0..h * w).map(|_| rng.random_range(0..=classes)).collect();
    LabelMap::new(h, w, classes, data).unwrap()
}

/// A few overlapping rectangles on a background.
fn block_label(rng: &mut ChaCha8Rng, h: usize, w: usize) -> LabelMap {
    let mut data = vec![0u32; h * w];
    for class in 1..=3 {
        let (t, l) = (rng.random_range(0..h - 4), rng.random_range(0..w - 4));
        let (bh, bw) = (rng.random_range(3..h / 2), rng.random_range(3..w / 2));
        for i in t..(t + bh).min(h) {
            for j in l..(l + bw).min(w) {
                data[i * w + j] = class;
            }
        }
    }
    LabelMap::new(h, w, 3, data).unwrap()
}

fn project(tape: &mut Tape, out: Var, seed: u64) -> deformseg::Result<Var> {
    let mut r = rng(seed ^ 0x9e37);
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(random(&shape, &mut r, -1.0, 1.0));
    let p = ops::mul(tape, out, w)?;
    ops::sum(tape, p)
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut record = |r: deformseg::autodiff::GradReport| worst = worst.max(r.max_rel_err);
    let gc = |f: &dyn Fn(&mut Tape, &[Var]) -> deformseg::Result<Var>, inputs: &[Tensor]| {
        grad_check(f, inputs, 1e-5, 1e-5).unwrap()
    };
    for seed in 0..5 {
        let mut r = rng(seed);
        let a = random(&[3, 4, 2], &mut r, -1.0, 1.0);
        let b = random(&[3, 4, 2], &mut r, -1.0, 1.0);
        record(gc(&|t, v| { let o = ops::add(t, v[0], v[1])?; project(t, o, seed) }, &[a.clone(), b.clone()]));
        record(gc(&|t, v| { let o = ops::mul(t, v[0], v[1])?; project(t, o, seed) }, &[a.clone(), b.clone()]));
        record(gc(&|t, v| { let o = ops::scale(t, v[0], 1.7)?; project(t, o, seed) }, std::slice::from_ref(&a)));
        let away = Tensor::new(a.shape().to_vec(), a.data().iter().map(|v| if v.abs() < 0.05 { 0.3 } else { *v }).collect()).unwrap();
        record(gc(&|t, v| { let o = ops::relu(t, v[0])?; project(t, o, seed) }, &[away]));

        let x = random(&[5, 6, 2], &mut r, -1.0, 1.0);
        let k = random(&[3, 3, 2, 3], &mut r, -1.0, 1.0);
        let bias = random(&[3], &mut r, -1.0, 1.0);
        record(gc(&|t, v| { let o = ops::conv2d(t, v[0], v[1], v[2])?; project(t, o, seed) }, &[x.clone(), k, bias]));
        let s = random(&[2], &mut r, 0.5, 1.5);
        let sh = random(&[2], &mut r, -1.0, 1.0);
        record(gc(&|t, v| { let o = ops::scale_shift(t, v[0], v[1], v[2])?; project(t, o, seed) }, &[x, s, sh]));

        let m = random(&[6, 7, 1], &mut r, -1.0, 1.0);
        record(gc(&|t, v| { let o = ops::spatial_softmax(t, v[0])?; project(t, o, seed) }, std::slice::from_ref(&m)));
        let kern = GaussianKernel::new(2).unwrap();
        record(gc(&|t, v| { let o = ops::gaussian_conv_fixed(t, v[0], &kern)?; project(t, o, seed) }, &[m]));
        let d = random(&[8, 8, 1], &mut r, 0.1, 1.0);
        record(gc(&|t, v| { let o = ops::attraction_grid(t, v[0], &kern, 5, 6)?; project(t, o, seed) }, &[d]));
        let src = random(&[7, 6, 2], &mut r, 0.0, 1.0);
        let g = random(&[4, 5, 2], &mut r, 0.02, 0.98);
        record(gc(&|t, v| { let o = ops::bilinear_sample_diff(t, v[0], v[1])?; project(t, o, seed) }, &[src, g]));

        let z = random(&[3, 4, 3], &mut r, -2.0, 2.0);
        let lm = LabelMap::new(3, 4, 3, (0..12).map(|i| (i % 4) as u32).collect()).unwrap();
        for gamma in [0.0, 2.0] {
            record(gc(&|t, v| ops::focal_loss(t, v[0], &lm, gamma), std::slice::from_ref(&z)));
        }
        let target = random(&[3, 4, 1], &mut r, 0.0, 1.0);
        let p = random(&[3, 4, 1], &mut r, 0.0, 1.0);
        record(gc(&|t, v| ops::mse_loss(t, v[0], &target), std::slice::from_ref(&p)));
        record(gc(&|t, v| ops::l2_penalty(t, v, 1e-2), &[p]));
    }
    let primitives = worst;

    let mut pipeline = 0.0f64;
    for seed in 0..5 {
        pipeline = pipeline.max(full_pipeline_check(seed));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        primitives < 1e-5 && pipeline < 1e-4 && secs < 120.0,
        format!("max rel err primitives {primitives:.2e} (< 1e-5), pipeline {pipeline:.2e} (< 1e-4), {secs:.1}s (< 120s)"),
    )
}

/// Worst relative error of the joint loss over 20 live θ/φ coordinates on an
/// 8×8 → 4×4 instance.
fn full_pipeline_check(seed: u64) -> f64 {
    let mut r = rng(500 + seed);
    let label = LabelMap::new(8, 8, 3, (0..64).map(|p| if p < 32 { 0 } else if p % 8 < 5 { 1 } else { 2 }).collect()).unwrap();
    let image = Tensor::new(
        vec![8, 8, 3],
        (0..192).map(|i| if (i % 3) as u32 == label.data()[i / 3] { 0.8 } else { 0.2 } + r.random_range(-0.1..0.1)).collect(),
    )
    .unwrap();
    let geo = SamplerGeometry::new(4, 4, 2, None).unwrap();
    let i_lr = low_res_input(&image, geo.map_h, geo.map_w).unwrap();
    let target = edge_deformation_target(&label, 2, geo.map_h, geo.map_w).unwrap().to_tensor();
    let deform = DeformationNet::new(3, 2 * seed + 1).unwrap();
    let seg = ToySegNet::new(3, 3, 2 * seed + 2).unwrap();
    let cfg = JointLossConfig::default();
    let nd = deform.params().len();
    let f = |tape: &mut Tape, vars: &[Var]| -> deformseg::Result<Var> {
        let (dv, sv) = vars.split_at(nd);
        let x = tape.constant(i_lr.clone());
        let d = deform.forward(tape, dv, x)?;
        let grid = ops::attraction_grid(tape, d, &geo.kernel, 4, 4)?;
        let src = tape.constant(image.clone());
        let j = ops::bilinear_sample_diff(tape, src, grid)?;
        let logits = seg.forward(tape, sv, j)?;
        let low = label_sample(&label, &SamplingGrid::from_tensor(tape.value(grid))?)?;
        Ok(joint_loss(tape, Some(logits), &low, Some(d), Some(&target), vars, &cfg, Phase::ALL)?.total)
    };
    let inputs: Vec<Tensor> = deform.params().iter().chain(seg.params()).map(|p| p.value.clone()).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars).unwrap();
    tape.backward(loss).unwrap();
    // exactly-zero coordinates sit behind dead ReLUs; their relative error is
    // rounding noise
    let live = |range: std::ops::Range<usize>| -> Vec<(usize, usize)> {
        range
            .flat_map(|t| (0..inputs[t].len()).map(move |e| (t, e)))
            .filter(|&(t, e)| tape.grad(vars[t]).data()[e].abs() >= 1e-6)
            .collect()
    };
    let (ld, ls) = (live(0..nd), live(nd..inputs.len()));
    let coords: Vec<_> = (0..20)
        .map(|n| {
            let pool = if n % 2 == 0 { &ld } else { &ls };
            pool[r.random_range(0..pool.len())]
        })
        .collect();
    grad_check_coords(f, &inputs, &coords, 1e-6, 1e-4).unwrap().max_rel_err
}

fn ac2() -> Outcome {
    let mut r = rng(2);
    let (mut identity, mut scaling) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let (h_d, w_d) = (r.random_range(8..=64), r.random_range(8..=64));
        let radius = GaussianKernel::min_radius_for(h_d, w_d);
        let k = GaussianKernel::new(radius).unwrap();
        let g = deformation_to_grid(&DeformationMap::constant(h_d, w_d), &k, h_d, w_d).unwrap();
        for i in radius + 1..h_d.saturating_sub(radius + 1) {
            for j in radius + 1..w_d.saturating_sub(radius + 1) {
                let [u, v] = g.get(i, j);
                identity = identity
                    .max((u * (h_d - 1) as f64 - i as f64).abs())
                    .max((v * (w_d - 1) as f64 - j as f64).abs());
            }
        }
        let raw: Vec<f64> = (0..h_d * w_d).map(|_| r.random()).collect();
        let c = 10f64.powf(r.random_range(-6.0..6.0));
        let scaled: Vec<f64> = raw.iter().map(|v| v * c).collect();
        let (h, w) = (r.random_range(2..=h_d), r.random_range(2..=w_d));
        let a = deformation_weights_to_grid(&raw, h_d, w_d, &k, h, w).unwrap();
        let b = deformation_weights_to_grid(&scaled, h_d, w_d, &k, h, w).unwrap();
        scaling = scaling.max(a.max_abs_diff(&b));
    }
    verdict(
        identity < 1e-9 && scaling < 1e-12,
        format!("interior identity dev {identity:.1e} (< 1e-9), scale dev {scaling:.1e} (< 1e-12)"),
    )
}

fn nearest_oracle(points: &[(f64, f64, u32)], h: usize, w: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let mut best = (f64::INFINITY, 0);
            for (n, &(pr, pc, _)) in points.iter().enumerate() {
                let d = (pr - i as f64).powi(2) + (pc - j as f64).powi(2);
                if d < best.0 {
                    best = (d, n);
                }
            }
            out.push(points[best.1].2);
        }
    }
    out
}

fn round_half_up(x: f64, n: usize) -> usize {
    ((x + 0.5).floor().max(0.0) as usize).min(n - 1)
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let mut r = rng(3);
    let mut mismatches = 0;
    for _ in 0..50 {
        let (big_h, big_w) = (r.random_range(2..=64), r.random_range(2..=64));
        let (h, w) = (r.random_range(1..=16.min(big_h)), r.random_range(1..=16.min(big_w)));
        let lm = random_label(&mut r, big_h, big_w, 4);
        let coords: Vec<[f64; 2]> = (0..h * w)
            .map(|_| {
                let snap = |x: f64, n: usize| (x * 2.0 * (n - 1) as f64).round() / (2.0 * (n - 1) as f64);
                [snap(r.random(), big_h), snap(r.random(), big_w)]
            })
            .collect();
        let g = SamplingGrid::new(h, w, coords).unwrap();

        let points: Vec<(f64, f64, u32)> = g
            .coords()
            .iter()
            .map(|&[u, v]| {
                let (x, y) = (u * (big_h - 1) as f64, v * (big_w - 1) as f64);
                (x, y, lm.get(round_half_up(x, big_h), round_half_up(y, big_w)))
            })
            .collect();
        if recover_label(&lm, &g).unwrap().data() != &nearest_oracle(&points, big_h, big_w)[..] {
            mismatches += 1;
        }

        let sp = ScatteredPoints {
            height: big_h,
            width: big_w,
            classes: 4,
            points: points.iter().map(|&(row, col, class)| ScatteredPoint { row, col, class }).collect(),
        };
        if nearest_fill(&sp).unwrap().data() != &nearest_oracle(&points, big_h, big_w)[..] {
            mismatches += 1;
        }

        let img = random(&[big_h, big_w, 2], &mut r, 0.0, 1.0);
        let sampled = grid_sample(&img, &g, SampleMode::Nearest).unwrap();
        for (n, &[u, v]) in g.coords().iter().enumerate() {
            let (i, j) = (round_half_up(u * (big_h - 1) as f64, big_h), round_half_up(v * (big_w - 1) as f64, big_w));
            if sampled.data()[n * 2..n * 2 + 2] != [img.at3(i, j, 0), img.at3(i, j, 1)] {
                mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(mismatches == 0 && secs < 60.0, format!("{mismatches} oracle mismatches over 50 instances, {secs:.1}s"))
}

fn benchmark(extra: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&format!("sizes = 32x32\n{extra}")).unwrap()
}

fn sweep() -> deformseg_harness::commands::SweepResult {
    let seeds: Vec<String> = (0..20).map(|s| s.to_string()).collect();
    let cfg = benchmark(&format!("sampler = edge-sim\nseeds = {}\n", seeds.join(",")));
    let dir = tempfile::tempdir().unwrap();
    cmd_sweep_edge(&cfg, dir.path()).unwrap()
}

fn ac4(s: &deformseg_harness::commands::SweepResult, needle: usize) -> Outcome {
    let per_radius = s.mean_per_radius(needle);
    let (best_r, best) = s
        .radii
        .iter()
        .zip(&per_radius)
        .filter_map(|(&r, v)| v.map(|v| (r, v)))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let uniform = s.mean_uniform(needle).unwrap_or(0.0);
    verdict(
        uniform <= 0.05 && best >= 0.5,
        format!("needle recovery IoU: uniform {uniform:.3} (<= 0.05), edge-sim best {best:.3} at r={best_r} (>= 0.5)"),
    )
}

fn ac5(s: &deformseg_harness::commands::SweepResult, classes: usize) -> Outcome {
    let differing = (0..s.seeds.len())
        .filter(|&i| {
            let radii: BTreeSet<usize> = (0..classes).filter_map(|c| s.argmax(i, c).map(|(r, _)| r)).collect();
            radii.len() > 1
        })
        .count();
    verdict(differing >= 15, format!("argmax radius differs between classes on {differing}/20 seeds (>= 15)"))
}

/// Deformed-sampler benchmark: the map is twice the output size and the edge
/// term is scaled so it is of the same order as the focal term.
const DEFORMED: &str = "sampler = deformed\nedge_scale = 1e6\nseeds = 0,1,2\n";

fn mean_miou(cfg: &ExperimentConfig, mode: Option<TrainingMode>) -> (f64, Vec<f64>, Duration) {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let runs = cmd_train(cfg, None, mode, dir.path()).unwrap();
    let values: Vec<f64> = runs.iter().map(|r| r.eval.iou.mean.unwrap_or(0.0)).collect();
    (values.iter().sum::<f64>() / values.len() as f64, values, start.elapsed())
}

fn fmt_values(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/")
}

fn ac6(joint: &(f64, Vec<f64>, Duration)) -> Outcome {
    let uniform = mean_miou(&benchmark("sampler = uniform\nseeds = 0,1,2\n"), None);
    let secs = (joint.2 + uniform.2).as_secs_f64();
    verdict(
        joint.0 >= uniform.0 + 0.05 && secs <= 1800.0,
        format!(
            "val mIoU joint {:.4} ({}) vs uniform {:.4} ({}): gain {:+.4} (>= +0.05), {secs:.0}s",
            joint.0,
            fmt_values(&joint.1),
            uniform.0,
            fmt_values(&uniform.1),
            joint.0 - uniform.0
        ),
    )
}

fn ac7(joint: &(f64, Vec<f64>, Duration)) -> Outcome {
    let cfg = benchmark(DEFORMED);
    let single = mean_miou(&cfg, Some(TrainingMode::SingleLoss));
    let stage = mean_miou(&cfg, Some(TrainingMode::Stage));
    verdict(
        joint.0 >= single.0 - 0.01 && joint.0 >= stage.0 - 0.01,
        format!("mean mIoU joint {:.4}, single-loss {:.4}, stage-single-loss {:.4} (ties within 0.01)", joint.0, single.0, stage.0),
    )
}

fn ac8() -> Outcome {
    let mut r = rng(8);
    let (mut stiff_dev, mut free_term, mut increases) = (0.0f64, 0.0f64, 0);
    let uniform = uniform_grid(8, 8).unwrap();
    for _ in 0..10 {
        let lm = block_label(&mut r, 32, 32);
        let stiff = edge_energy_optimize(&lm, 8, 8, &EdgeEnergyConfig { lambda: 1e9, ..Default::default() }).unwrap();
        stiff_dev = stiff_dev.max(stiff.grid.max_abs_diff(&uniform) * 31.0);
        let free = edge_energy_optimize(&lm, 8, 8, &EdgeEnergyConfig { lambda: 0.0, ..Default::default() }).unwrap();
        free_term = free_term.max(free.final_distance_term);
        let run = edge_energy_optimize(&lm, 8, 8, &EdgeEnergyConfig::default()).unwrap();
        increases += run.assignment_energies.windows(2).filter(|w| w[1] > w[0]).count();
    }
    verdict(
        stiff_dev < 1e-3 && free_term < 1e-6 && increases == 0,
        format!(
            "lambda=1e9 max deviation {stiff_dev:.1e} px (< 1e-3), lambda=0 distance term {free_term:.1e} (< 1e-6), {increases} energy increases"
        ),
    )
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

fn ac9() -> Outcome {
    let cfg = ExperimentConfig::parse(
        "sampler = deformed\nsizes = 16x16\nheight = 64\nwidth = 64\nneedle_count = 2\ntrain_scenes = 6\nval_scenes = 2\nepochs = 3\nbatch_size = 2\nseeds = 5\n",
    )
    .unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_train(&cfg, None, None, a.path()).unwrap();
    cmd_train(&cfg, None, None, b.path()).unwrap();
    let files = ["trace.csv", "checkpoint.dtns.bin", "checkpoint.dtns.manifest"];
    let same = files.iter().filter(|f| read(&a.path().join(f)) == read(&b.path().join(f))).count();
    verdict(same == files.len(), format!("{same}/{} artifacts byte-identical across two runs", files.len()))
}

fn main() {
    let classes = benchmark("sampler = uniform\n").scene.classes as usize;
    let mut failed = 0;
    let mut report = |name: &str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("{name} PASS: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{name} FAIL: {detail}");
            }
        }
    };
    report("AC-1", ac1());
    report("AC-2", ac2());
    report("AC-3", ac3());
    let s = sweep();
    report("AC-4", ac4(&s, classes - 1));
    report("AC-5", ac5(&s, classes));
    let joint = mean_miou(&benchmark(DEFORMED), Some(TrainingMode::Joint));
    report("AC-6", ac6(&joint));
    report("AC-7", ac7(&joint));
    report("AC-8", ac8());
    report("AC-9", ac9());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
