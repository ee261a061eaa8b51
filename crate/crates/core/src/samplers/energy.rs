//! Boundary-attraction baseline: place samples by minimizing distance to the
//! nearest label boundary plus a lattice-regularity penalty.
//!
//! The energy over sample positions `P` (absolute pixel units) with assigned
//! boundary pixels `B` and uniform positions `U` is
//!
//! ```text
//! E = Σ_a ‖P_a − B_a‖ + λ Σ_{a~b} ‖(P_a − P_b) − (U_a − U_b)‖²
//! ```
//!
//! where `a~b` runs once over every pair of 4-neighbors in the output grid.
//! Minimization alternates a nearest-boundary assignment with proximal
//! gradient steps on the positions.

use super::{edge_map, uniform_grid};
use crate::error::{Error, Result};
use crate::tensor::{LabelMap, SamplingGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeEnergyConfig {
    pub lambda: f64,
    /// Number of assignment/update rounds.
    pub iterations: usize,
    /// Gradient steps per update.
    pub steps: usize,
}

impl Default for EdgeEnergyConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            iterations: 10,
            steps: 50,
        }
    }
}

impl EdgeEnergyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be finite and ≥ 0"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be positive"));
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        0.5 / (1.0 + 4.0 * self.lambda)
    }
}

#[derive(Debug, Clone)]
pub struct EdgeEnergyResult {
    pub grid: SamplingGrid,
    /// Energy immediately after every assignment step.
    pub assignment_energies: Vec<f64>,
    /// Distance term of the final positions against their final assignment.
    pub final_distance_term: f64,
}

/// Boundary pixel coordinates in row-major order.
pub fn boundary_pixels(lm: &LabelMap) -> Vec<[f64; 2]> {
    let e = edge_map(lm);
    let w = lm.width();
    e.data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(p, _)| [(p / w) as f64, (p % w) as f64])
        .collect()
}

/// Nearest boundary pixel; ties go to the earliest in row-major order.
fn nearest_boundary(p: [f64; 2], boundary: &[[f64; 2]]) -> [f64; 2] {
    let mut best = boundary[0];
    let mut best_d = f64::INFINITY;
    for &b in boundary {
        let d = (p[0] - b[0]).powi(2) + (p[1] - b[1]).powi(2);
        if d < best_d {
            best_d = d;
            best = b;
        }
    }
    best
}

struct Problem {
    h: usize,
    w: usize,
    lambda: f64,
    uniform: Vec<[f64; 2]>,
    max: [f64; 2],
}

impl Problem {
    fn distance_term(&self, pos: &[[f64; 2]], assign: &[[f64; 2]]) -> f64 {
        pos.iter()
            .zip(assign)
            .map(|(p, b)| ((p[0] - b[0]).powi(2) + (p[1] - b[1]).powi(2)).sqrt())
            .sum()
    }

    fn neighbor_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (h, w) = (self.h, self.w);
        (0..h * w).flat_map(move |a| {
            let (i, j) = (a / w, a % w);
            let right = (j + 1 < w).then_some((a, a + 1));
            let down = (i + 1 < h).then_some((a, a + w));
            right.into_iter().chain(down)
        })
    }

    fn smooth_term(&self, pos: &[[f64; 2]]) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        let s: f64 = self
            .neighbor_pairs()
            .map(|(a, b)| {
                (0..2)
                    .map(|c| {
                        let dev = (pos[a][c] - pos[b][c]) - (self.uniform[a][c] - self.uniform[b][c]);
                        dev * dev
                    })
                    .sum::<f64>()
            })
            .sum();
        self.lambda * s
    }

    fn energy(&self, pos: &[[f64; 2]], assign: &[[f64; 2]]) -> f64 {
        self.distance_term(pos, assign) + self.smooth_term(pos)
    }

    fn smooth_gradient(&self, pos: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let mut g = vec![[0.0; 2]; pos.len()];
        if self.lambda == 0.0 {
            return g;
        }
        for (a, b) in self.neighbor_pairs() {
            for c in 0..2 {
                let dev = (pos[a][c] - pos[b][c]) - (self.uniform[a][c] - self.uniform[b][c]);
                g[a][c] += 2.0 * self.lambda * dev;
                g[b][c] -= 2.0 * self.lambda * dev;
            }
        }
        g
    }

    /// Gradient step on the smooth term, then the exact proximal step of the
    /// distance term (move toward the assigned pixel by `t`, stopping on it),
    /// then projection into the canvas.
    fn prox_step(&self, pos: &[[f64; 2]], assign: &[[f64; 2]], t: f64) -> Vec<[f64; 2]> {
        let g = self.smooth_gradient(pos);
        pos.iter()
            .zip(&g)
            .zip(assign)
            .map(|((p, gp), b)| {
                let q = [p[0] - t * gp[0], p[1] - t * gp[1]];
                let d = [q[0] - b[0], q[1] - b[1]];
                let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
                let moved = if n <= t {
                    *b
                } else {
                    [q[0] - t * d[0] / n, q[1] - t * d[1] / n]
                };
                [moved[0].clamp(0.0, self.max[0]), moved[1].clamp(0.0, self.max[1])]
            })
            .collect()
    }
}

/// Runs the alternating minimization from the uniform grid and reports the
/// energy trace.
pub fn edge_energy_optimize(
    lm: &LabelMap,
    h: usize,
    w: usize,
    cfg: &EdgeEnergyConfig,
) -> Result<EdgeEnergyResult> {
    cfg.validate()?;
    let start = uniform_grid(h, w)?;
    let boundary = boundary_pixels(lm);
    if boundary.is_empty() {
        return Err(Error::NoBoundary);
    }
    let max = [(lm.height() - 1) as f64, (lm.width() - 1) as f64];
    let uniform: Vec<[f64; 2]> = start
        .coords()
        .iter()
        .map(|&[u, v]| [u * max[0], v * max[1]])
        .collect();
    let problem = Problem {
        h,
        w,
        lambda: cfg.lambda,
        uniform: uniform.clone(),
        max,
    };

    let mut pos = uniform;
    let mut assign = Vec::new();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        assign = pos.iter().map(|&p| nearest_boundary(p, &boundary)).collect();
        let mut current = problem.energy(&pos, &assign);
        trace.push(current);
        for _ in 0..cfg.steps {
            let mut t = cfg.step_size();
            // halve until the step does not increase the energy
            let mut accepted = None;
            for _ in 0..40 {
                let cand = problem.prox_step(&pos, &assign, t);
                let e = problem.energy(&cand, &assign);
                if e <= current {
                    accepted = Some((cand, e));
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some((cand, e)) => {
                    pos = cand;
                    current = e;
                }
                None => break,
            }
        }
    }
    let final_distance_term = problem.distance_term(&pos, &assign);
    let coords = pos
        .iter()
        .map(|p| {
            [
                if max[0] > 0.0 { p[0] / max[0] } else { 0.0 },
                if max[1] > 0.0 { p[1] / max[1] } else { 0.0 },
            ]
        })
        .collect();
    Ok(EdgeEnergyResult {
        grid: SamplingGrid::clamped(h, w, coords),
        assignment_energies: trace,
        final_distance_term,
    })
}

/// Boundary-attraction sampler; errors with [`Error::NoBoundary`] on labels
/// without edges.
pub fn edge_energy_grid(
    lm: &LabelMap,
    h: usize,
    w: usize,
    cfg: &EdgeEnergyConfig,
) -> Result<SamplingGrid> {
    edge_energy_optimize(lm, h, w, cfg).map(|r| r.grid)
}

/// Energy of a grid against its nearest-boundary assignment.
pub fn edge_energy(lm: &LabelMap, g: &SamplingGrid, lambda: f64) -> Result<f64> {
    let boundary = boundary_pixels(lm);
    if boundary.is_empty() {
        return Err(Error::NoBoundary);
    }
    let max = [(lm.height() - 1) as f64, (lm.width() - 1) as f64];
    let uniform = uniform_grid(g.height(), g.width())?
        .coords()
        .iter()
        .map(|&[u, v]| [u * max[0], v * max[1]])
        .collect();
    let pos: Vec<[f64; 2]> = g
        .coords()
        .iter()
        .map(|&[u, v]| [u * max[0], v * max[1]])
        .collect();
    let assign: Vec<[f64; 2]> = pos.iter().map(|&p| nearest_boundary(p, &boundary)).collect();
    let problem = Problem {
        h: g.height(),
        w: g.width(),
        lambda,
        uniform,
        max,
    };
    Ok(problem.energy(&pos, &assign))
}
