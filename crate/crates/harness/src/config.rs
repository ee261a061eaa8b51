//! Plain-text `key = value` experiment configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use deformseg::models::{JointLossConfig, TrainingMode};
use deformseg::samplers::EdgeEnergyConfig;
use deformseg::synthdata::SceneSpec;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Uniform,
    EdgeSim,
    EdgeEnergy,
    Deformed,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::EdgeSim => "edge-sim",
            SamplerKind::EdgeEnergy => "edge-energy",
            SamplerKind::Deformed => "deformed",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplerKind::Uniform),
            "edge-sim" => Ok(SamplerKind::EdgeSim),
            "edge-energy" => Ok(SamplerKind::EdgeEnergy),
            "deformed" => Ok(SamplerKind::Deformed),
            other => Err(HarnessError::Config(format!("unknown sampler {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Scene generator settings; its seed field is ignored.
    pub scene: SceneSpec,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub data_seed: u64,
    /// Low-resolution output sizes `(h, w)`.
    pub sizes: Vec<(usize, usize)>,
    pub map_factor: usize,
    pub kernel_radius: Option<usize>,
    pub sampler: SamplerKind,
    pub mode: TrainingMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seeds: Vec<u64>,
    /// Blur radius of the edge-derived deformation target.
    pub edge_radius: usize,
    pub gamma: f64,
    pub edge_scale: f64,
    pub l2: f64,
    pub energy: EdgeEnergyConfig,
    pub sweep_radii: Vec<usize>,
    pub out: Option<PathBuf>,
}

const REQUIRED: &[&str] = &["sampler", "sizes"];

const KNOWN: &[&str] = &[
    "height",
    "width",
    "classes",
    "needle_count",
    "needle_min",
    "needle_max",
    "stripe_period",
    "stripe_amplitude",
    "regions",
    "noise",
    "train_scenes",
    "val_scenes",
    "data_seed",
    "sizes",
    "map_factor",
    "kernel_radius",
    "sampler",
    "mode",
    "epochs",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "seeds",
    "edge_radius",
    "gamma",
    "edge_scale",
    "l2",
    "energy_lambda",
    "energy_iterations",
    "energy_steps",
    "sweep_radii",
    "out",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scene = SceneSpec::default();
        Self {
            sizes: vec![(scene.sample_height, scene.sample_width)],
            scene,
            train_scenes: 48,
            val_scenes: 16,
            data_seed: 1000,
            map_factor: 2,
            kernel_radius: None,
            sampler: SamplerKind::Uniform,
            mode: TrainingMode::Joint,
            epochs: 20,
            batch_size: 4,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seeds: vec![0],
            edge_radius: 21,
            gamma: 2.0,
            edge_scale: 100.0,
            l2: 1e-4,
            energy: EdgeEnergyConfig::default(),
            sweep_radii: (0..11).map(|i| 1 + 2 * i).collect(),
            out: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| HarnessError::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(HarnessError::Config(format!("{key}: empty list")));
    }
    Ok(items)
}

fn parse_size(key: &str, value: &str) -> Result<(usize, usize)> {
    let (h, w) = value
        .split_once('x')
        .ok_or_else(|| HarnessError::Config(format!("{key}: expected HxW, got {value:?}")))?;
    Ok((parse_value(key, h.trim())?, parse_value(key, w.trim())?))
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let Some(&known) = KNOWN.iter().find(|&&k| k == key) else {
                return Err(HarnessError::Config(format!("line {}: unknown key {key:?}", lineno + 1)));
            };
            if seen.contains(&known) {
                return Err(HarnessError::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
            seen.push(known);
            cfg.set(known, value)?;
        }
        for key in REQUIRED {
            if !seen.contains(key) {
                return Err(HarnessError::Config(format!("missing required key {key:?}")));
            }
        }
        cfg.sync_scene_size();
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "height" => self.scene.height = parse_value(key, v)?,
            "width" => self.scene.width = parse_value(key, v)?,
            "classes" => self.scene.classes = parse_value(key, v)?,
            "needle_count" => self.scene.needle_count = parse_value(key, v)?,
            "needle_min" => self.scene.needle_min = parse_value(key, v)?,
            "needle_max" => self.scene.needle_max = parse_value(key, v)?,
            "stripe_period" => self.scene.stripe_period = parse_value(key, v)?,
            "stripe_amplitude" => self.scene.stripe_amplitude = parse_value(key, v)?,
            "regions" => self.scene.regions = parse_value(key, v)?,
            "noise" => self.scene.noise = parse_value(key, v)?,
            "train_scenes" => self.train_scenes = parse_value(key, v)?,
            "val_scenes" => self.val_scenes = parse_value(key, v)?,
            "data_seed" => self.data_seed = parse_value(key, v)?,
            "sizes" => {
                self.sizes = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_size(key, s))
                    .collect::<Result<_>>()?
            }
            "map_factor" => self.map_factor = parse_value(key, v)?,
            "kernel_radius" => {
                self.kernel_radius = if v == "auto" { None } else { Some(parse_value(key, v)?) }
            }
            "sampler" => self.sampler = v.parse()?,
            "mode" => self.mode = parse_mode(v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "beta1" => self.beta1 = parse_value(key, v)?,
            "beta2" => self.beta2 = parse_value(key, v)?,
            "eps" => self.eps = parse_value(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "edge_radius" => self.edge_radius = parse_value(key, v)?,
            "gamma" => self.gamma = parse_value(key, v)?,
            "edge_scale" => self.edge_scale = parse_value(key, v)?,
            "l2" => self.l2 = parse_value(key, v)?,
            "energy_lambda" => self.energy.lambda = parse_value(key, v)?,
            "energy_iterations" => self.energy.iterations = parse_value(key, v)?,
            "energy_steps" => self.energy.steps = parse_value(key, v)?,
            "sweep_radii" => self.sweep_radii = parse_list(key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            _ => unreachable!("key list and setter out of sync: {key}"),
        }
        Ok(())
    }

    /// The scene's stride check uses the finest configured sampling size.
    fn sync_scene_size(&mut self) {
        if let Some(&(h, w)) = self.sizes.iter().max_by_key(|(h, w)| h * w) {
            self.scene.sample_height = h;
            self.scene.sample_width = w;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(HarnessError::Config(m));
        if self.sizes.is_empty() {
            return err("sizes: at least one size required".into());
        }
        for &(h, w) in &self.sizes {
            if h < 2 || w < 2 || h > self.scene.height || w > self.scene.width {
                return err(format!("sizes: {h}x{w} must lie within 2x2..{}x{}", self.scene.height, self.scene.width));
            }
            if self.sampler == SamplerKind::Deformed && (h * self.map_factor < 8 || w * self.map_factor < 8) {
                return err(format!("sizes: deformation map for {h}x{w} would be below 8x8"));
            }
        }
        if !(1..=2).contains(&self.map_factor) {
            return err(format!("map_factor must be 1 or 2, got {}", self.map_factor));
        }
        if self.batch_size == 0 {
            return err("batch_size must be positive".into());
        }
        if self.train_scenes == 0 || self.val_scenes == 0 {
            return err("train_scenes and val_scenes must be positive".into());
        }
        if !(self.lr > 0.0) {
            return err("lr must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return err("adam: need 0 ≤ beta < 1 and eps > 0".into());
        }
        if self.edge_radius == 0 || self.sweep_radii.contains(&0) {
            return err("blur radii must be ≥ 1".into());
        }
        if self.seeds.is_empty() {
            return err("seeds: at least one seed required".into());
        }
        self.loss_config().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.energy.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.scene.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn loss_config(&self) -> JointLossConfig {
        JointLossConfig {
            gamma: self.gamma,
            edge_scale: self.edge_scale,
            l2: self.l2,
            mode: self.mode,
        }
    }
}

pub fn parse_mode(s: &str) -> Result<TrainingMode> {
    s.parse().map_err(|e: deformseg::Error| HarnessError::Config(e.to_string()))
}
