//! Seeded synthetic scenes: a background, a few large rectangular regions,
//! tiny "needle" objects of the last class, and an image-only stripe texture
//! on one region.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{labelmap_write_pgm, tensor_write};
use crate::tensor::{LabelMap, Tensor};

/// Largest allowed expected needle pixel fraction.
pub const MAX_NEEDLE_FRACTION: f64 = 0.01;

const PLACEMENT_ATTEMPTS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Number of classes `K`. Class 0 is background, `K − 1` the needle class.
    pub classes: u32,
    /// Low-resolution size of the benchmark; fixes the uniform stride that
    /// needles must stay below.
    pub sample_height: usize,
    pub sample_width: usize,
    pub needle_count: usize,
    pub needle_min: usize,
    pub needle_max: usize,
    /// Full stripe period in pixels on the distractor region; 0 disables.
    pub stripe_period: usize,
    pub stripe_amplitude: f64,
    pub regions: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    /// The standard benchmark: 256×256 sampled to 32×32 (stride 8), one
    /// striped region and six 2 px needles.
    fn default() -> Self {
        Self {
            height: 256,
            width: 256,
            classes: 3,
            sample_height: 32,
            sample_width: 32,
            needle_count: 6,
            needle_min: 2,
            needle_max: 2,
            stripe_period: 6,
            stripe_amplitude: 0.25,
            regions: 1,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn needle_class(&self) -> u32 {
        self.classes - 1
    }

    /// Uniform sampling stride along the shorter direction.
    pub fn stride(&self) -> f64 {
        (self.height as f64 / self.sample_height as f64)
            .min(self.width as f64 / self.sample_width as f64)
    }

    /// Expected needle area over the whole image: sizes and shapes are drawn
    /// uniformly.
    pub fn expected_needle_fraction(&self) -> f64 {
        if self.needle_count == 0 {
            return 0.0;
        }
        let sizes = self.needle_min..=self.needle_max;
        let n = sizes.clone().count() as f64;
        let mean: f64 = sizes
            .map(|s| 0.5 * (disc_area(s) + s * s) as f64)
            .sum::<f64>()
            / n;
        self.needle_count as f64 * mean / (self.height * self.width) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("size", "scene must be non-empty"));
        }
        if self.sample_height == 0
            || self.sample_width == 0
            || self.sample_height > self.height
            || self.sample_width > self.width
        {
            return Err(Error::invalid("sample size", "must be within 1..=scene size"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("classes", "need a background and a needle class"));
        }
        if self.regions + 2 > self.classes as usize {
            return Err(Error::invalid(
                "regions",
                format!("{} regions need at least {} classes", self.regions, self.regions + 2),
            ));
        }
        if self.needle_count > 0 {
            if self.needle_min == 0 || self.needle_min > self.needle_max {
                return Err(Error::invalid("needle size", "need 1 ≤ min ≤ max"));
            }
            if self.needle_max as f64 >= self.stride() {
                return Err(Error::invalid(
                    "needle_max",
                    format!("{} px is not below the uniform stride {}", self.needle_max, self.stride()),
                ));
            }
            let frac = self.expected_needle_fraction();
            if frac >= MAX_NEEDLE_FRACTION {
                return Err(Error::invalid(
                    "needle_count",
                    format!("expected needle fraction {frac:.4} is not below {MAX_NEEDLE_FRACTION}"),
                ));
            }
        }
        if !(self.noise >= 0.0 && self.stripe_amplitude >= 0.0) {
            return Err(Error::invalid("noise", "noise and stripe amplitude must be ≥ 0"));
        }
        Ok(())
    }
}

/// Pixels covered by a disc inscribed in an `s × s` box.
fn disc_area(s: usize) -> usize {
    (0..s * s).filter(|&k| in_disc(k / s, k % s, s)).count()
}

fn in_disc(di: usize, dj: usize, s: usize) -> bool {
    let c = s as f64 / 2.0;
    let y = di as f64 + 0.5 - c;
    let x = dj as f64 + 0.5 - c;
    y * y + x * x <= c * c
}

/// Base RGB colour of a class; distinct hues around a circle.
pub fn class_color(class: u32, classes: u32) -> [f64; 3] {
    let t = class as f64 / classes as f64;
    std::array::from_fn(|k| 0.5 + 0.4 * (2.0 * PI * (t + k as f64 / 3.0)).cos())
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    top: usize,
    left: usize,
    height: usize,
    width: usize,
}

impl Rect {
    fn contains(&self, i: usize, j: usize) -> bool {
        (self.top..self.top + self.height).contains(&i) && (self.left..self.left + self.width).contains(&j)
    }
}

/// One generated `(image, label)` pair; the image is `H × W × 3` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub image: Tensor,
    pub label: LabelMap,
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    generate_unchecked(spec)
}

fn generate_unchecked(spec: &SceneSpec) -> Result<Scene> {
    let (h, w, k) = (spec.height, spec.width, spec.classes);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels = vec![0u32; h * w];

    let mut rects = Vec::with_capacity(spec.regions);
    for r in 0..spec.regions {
        let rh = rng.random_range((h / 4).max(1)..=(h / 2).max(1));
        let rw = rng.random_range((w / 4).max(1)..=(w / 2).max(1));
        let rect = Rect {
            top: rng.random_range(0..=h - rh),
            left: rng.random_range(0..=w - rw),
            height: rh,
            width: rw,
        };
        let class = r as u32 + 1;
        for i in rect.top..rect.top + rh {
            labels[i * w + rect.left..i * w + rect.left + rw].fill(class);
        }
        rects.push(rect);
    }

    // Needles keep a one-pixel gap from each other so they stay separate.
    let needle = spec.needle_class();
    let mut blocked = vec![false; h * w];
    for n in 0..spec.needle_count {
        let s = rng.random_range(spec.needle_min..=spec.needle_max);
        let disc = rng.random_bool(0.5);
        if s > h || s > w {
            return Err(Error::Infeasible(format!("needle of {s} px does not fit")));
        }
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let top = rng.random_range(0..=h - s);
            let left = rng.random_range(0..=w - s);
            let cells = (0..s * s)
                .map(|c| (c / s, c % s))
                .filter(|&(di, dj)| !disc || in_disc(di, dj, s));
            if cells.clone().any(|(di, dj)| blocked[(top + di) * w + left + dj]) {
                continue;
            }
            for (di, dj) in cells {
                let (i, j) = (top + di, left + dj);
                labels[i * w + j] = needle;
                for bi in i.saturating_sub(1)..(i + 2).min(h) {
                    for bj in j.saturating_sub(1)..(j + 2).min(w) {
                        blocked[bi * w + bj] = true;
                    }
                }
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Infeasible(format!(
                "could not place needle {} of {} after {PLACEMENT_ATTEMPTS} attempts",
                n + 1,
                spec.needle_count
            )));
        }
    }

    let normal = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::invalid("noise", e.to_string()))?;
    let half = (spec.stripe_period / 2).max(1);
    let striped = rects.first().filter(|_| spec.stripe_period > 0);
    let palette: Vec<[f64; 3]> = (0..k).map(|c| class_color(c, k)).collect();
    let mut data = Vec::with_capacity(h * w * 3);
    for i in 0..h {
        for j in 0..w {
            let class = labels[i * w + j];
            let mut offset = 0.0;
            if let Some(r) = striped {
                if class == 1 && r.contains(i, j) {
                    offset = if (j / half).is_multiple_of(2) { spec.stripe_amplitude } else { -spec.stripe_amplitude };
                }
            }
            for c in 0..3 {
                let n = if spec.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                data.push((palette[class as usize][c] + offset + n).clamp(0.0, 1.0));
            }
        }
    }

    Ok(Scene {
        seed: spec.seed,
        image: Tensor::new(vec![h, w, 3], data)?,
        label: LabelMap::new(h, w, k, labels)?,
    })
}

/// `n` scenes from seeds `seed..seed + n`, plus a manifest of per-scene class
/// frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SceneSpec,
    pub scenes: Vec<Scene>,
}

pub fn generate_dataset(spec: &SceneSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n", "dataset needs at least one scene"));
    }
    let scenes = (0..n as u64)
        .map(|i| {
            generate_scene(&SceneSpec {
                seed: seed + i,
                ..spec.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        spec: spec.clone(),
        scenes,
    })
}

impl Dataset {
    /// CSV with columns `index,seed,freq_0,...,freq_{K-1}`.
    pub fn manifest_csv(&self) -> String {
        let k = self.spec.classes as usize;
        let mut out = String::from("index,seed");
        for c in 0..k {
            let _ = write!(out, ",freq_{c}");
        }
        out.push('\n');
        for (i, s) in self.scenes.iter().enumerate() {
            let _ = write!(out, "{i},{}", s.seed);
            for f in crate::metrics::class_frequencies(&s.label) {
                let _ = write!(out, ",{f}");
            }
            out.push('\n');
        }
        out
    }

    /// Writes `scene_NNNN.dtns`, `scene_NNNN.pgm` and `manifest.csv`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, s) in self.scenes.iter().enumerate() {
            tensor_write(&s.image, dir.join(format!("scene_{i:04}.dtns")))?;
            labelmap_write_pgm(&s.label, dir.join(format!("scene_{i:04}.pgm")))?;
        }
        let path = dir.join("manifest.csv");
        fs::write(&path, self.manifest_csv()).map_err(|e| Error::io(path, e))
    }
}
