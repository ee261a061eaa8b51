//! Non-uniform upsampling: scatter low-resolution labels back to their source
//! positions and fill the canvas by exact nearest neighbor.

use crate::error::{Error, Result};
use crate::samplers::label_sample;
use crate::tensor::{LabelMap, SamplingGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteredPoint {
    pub row: f64,
    pub col: f64,
    pub class: u32,
}

/// Class-labeled points on an `height × width` canvas, in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteredPoints {
    pub height: usize,
    pub width: usize,
    pub classes: u32,
    pub points: Vec<ScatteredPoint>,
}

/// Places each low-resolution pixel at `(u·(H−1), v·(W−1))`.
pub fn reverse_scatter(
    pred: &LabelMap,
    g: &SamplingGrid,
    height: usize,
    width: usize,
) -> Result<ScatteredPoints> {
    if (pred.height(), pred.width()) != (g.height(), g.width()) {
        return Err(Error::Shape(format!(
            "prediction is {}×{} but grid is {}×{}",
            pred.height(),
            pred.width(),
            g.height(),
            g.width()
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::Shape("empty canvas".into()));
    }
    let (su, sv) = ((height - 1) as f64, (width - 1) as f64);
    let points = g
        .coords()
        .iter()
        .zip(pred.data())
        .map(|(&[u, v], &class)| ScatteredPoint {
            row: u * su,
            col: v * sv,
            class,
        })
        .collect();
    Ok(ScatteredPoints {
        height,
        width,
        classes: pred.classes(),
        points,
    })
}

#[inline]
fn dist2(p: &ScatteredPoint, r: f64, c: f64) -> f64 {
    let dr = p.row - r;
    let dc = p.col - c;
    dr * dr + dc * dc
}

/// Uniform bucket grid over the canvas.
struct Buckets {
    cell: f64,
    rows: usize,
    cols: usize,
    start: Vec<usize>,
    items: Vec<usize>,
}

impl Buckets {
    fn build(sp: &ScatteredPoints) -> Self {
        let area = (sp.height * sp.width) as f64;
        let cell = (area / sp.points.len() as f64).sqrt().max(1.0);
        let rows = ((sp.height as f64 / cell).ceil() as usize).max(1);
        let cols = ((sp.width as f64 / cell).ceil() as usize).max(1);
        let index_of = |p: &ScatteredPoint| {
            let r = ((p.row / cell).floor() as usize).min(rows - 1);
            let c = ((p.col / cell).floor() as usize).min(cols - 1);
            r * cols + c
        };
        let mut counts = vec![0usize; rows * cols + 1];
        for p in &sp.points {
            counts[index_of(p) + 1] += 1;
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let mut fill = counts.clone();
        let mut items = vec![0; sp.points.len()];
        // points enter buckets in index order, so each bucket is sorted
        for (idx, p) in sp.points.iter().enumerate() {
            let b = index_of(p);
            items[fill[b]] = idx;
            fill[b] += 1;
        }
        Self {
            cell,
            rows,
            cols,
            start: counts,
            items,
        }
    }

    fn bucket(&self, r: usize, c: usize) -> &[usize] {
        let b = r * self.cols + c;
        &self.items[self.start[b]..self.start[b + 1]]
    }
}

/// Fills every canvas pixel with the class of its Euclidean-nearest point;
/// equidistant points resolve to the smallest list index.
pub fn nearest_fill(sp: &ScatteredPoints) -> Result<LabelMap> {
    if sp.points.is_empty() {
        return Err(Error::EmptyPoints);
    }
    let buckets = Buckets::build(sp);
    let mut out = Vec::with_capacity(sp.height * sp.width);
    for r in 0..sp.height {
        let rf = r as f64;
        let br = ((rf / buckets.cell).floor() as usize).min(buckets.rows - 1);
        for c in 0..sp.width {
            let cf = c as f64;
            let bc = ((cf / buckets.cell).floor() as usize).min(buckets.cols - 1);
            let mut best = (f64::INFINITY, usize::MAX);
            let max_ring = buckets.rows.max(buckets.cols);
            for ring in 0..=max_ring {
                let r_lo = br as isize - ring as isize;
                let r_hi = br + ring;
                let c_lo = bc as isize - ring as isize;
                let c_hi = bc + ring;
                for rr in r_lo.max(0) as usize..=r_hi.min(buckets.rows - 1) {
                    let on_edge_row = rr as isize == r_lo || rr == r_hi;
                    for cc in c_lo.max(0) as usize..=c_hi.min(buckets.cols - 1) {
                        if !on_edge_row && cc as isize != c_lo && cc != c_hi {
                            continue;
                        }
                        for &idx in buckets.bucket(rr, cc) {
                            let d = dist2(&sp.points[idx], rf, cf);
                            if d < best.0 || (d == best.0 && idx < best.1) {
                                best = (d, idx);
                            }
                        }
                    }
                }
                // anything in a farther ring is at least `ring` cells away
                let bound = ring as f64 * buckets.cell;
                if best.1 != usize::MAX && best.0 < bound * bound * (1.0 - 1e-9) {
                    break;
                }
            }
            out.push(sp.points[best.1].class);
        }
    }
    Ok(LabelMap::from_parts(sp.height, sp.width, sp.classes, out))
}

/// Downsample a label with `g`, then upsample it back to its own size.
pub fn recover_label(lm: &LabelMap, g: &SamplingGrid) -> Result<LabelMap> {
    let low = label_sample(lm, g)?;
    let sp = reverse_scatter(&low, g, lm.height(), lm.width())?;
    nearest_fill(&sp)
}
