use deformseg::autodiff::{ops, Tape};
use deformseg::samplers::{
    deformation_to_grid, deformation_weights_to_grid, edge_deformation_target, GaussianKernel,
};
use deformseg::{DeformationMap, LabelMap, SamplingGrid, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Attraction mapping evaluated straight from its definition with an
/// unnormalized Gaussian (the ratio cancels the normalization), then read at
/// `h × w` by bilinear interpolation.
fn oracle_grid(d: &[f64], h_d: usize, w_d: usize, r: usize, h: usize, w: usize) -> Vec<[f64; 2]> {
    let sigma = r as f64 / 3.0;
    let mut fu = vec![0.0; h_d * w_d];
    let mut fv = vec![0.0; h_d * w_d];
    for i in 0..h_d {
        for j in 0..w_d {
            let (mut nu, mut nv, mut den) = (0.0, 0.0, 0.0);
            for si in 0..h_d {
                for sj in 0..w_d {
                    let (di, dj) = (si as f64 - i as f64, sj as f64 - j as f64);
                    if di.abs() > r as f64 || dj.abs() > r as f64 {
                        continue;
                    }
                    let k = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
                    let wk = d[si * w_d + sj] * k;
                    den += wk;
                    nu += wk * si as f64;
                    nv += wk * sj as f64;
                }
            }
            let (u, v) = if den > 0.0 { (nu / den, nv / den) } else { (i as f64, j as f64) };
            fu[i * w_d + j] = u;
            fv[i * w_d + j] = v;
        }
    }
    let lerp = |f: &[f64], x: f64, y: f64| {
        let i0 = (x.floor() as usize).min(h_d - 2);
        let j0 = (y.floor() as usize).min(w_d - 2);
        let (a, b) = (x - i0 as f64, y - j0 as f64);
        let at = |i: usize, j: usize| f[i * w_d + j];
        (1.0 - a) * (1.0 - b) * at(i0, j0)
            + (1.0 - a) * b * at(i0, j0 + 1)
            + a * (1.0 - b) * at(i0 + 1, j0)
            + a * b * at(i0 + 1, j0 + 1)
    };
    let mut out = Vec::new();
    for p in 0..h {
        let x = p as f64 * (h_d - 1) as f64 / (h - 1) as f64;
        for q in 0..w {
            let y = q as f64 * (w_d - 1) as f64 / (w - 1) as f64;
            let u = lerp(&fu, x, y) / (h_d - 1) as f64;
            let v = lerp(&fv, x, y) / (w_d - 1) as f64;
            out.push([u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)]);
        }
    }
    out
}

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> DeformationMap {
    let raw = (0..h * w).map(|_| rng.random::<f64>().powi(3)).collect();
    DeformationMap::normalized(h, w, raw).unwrap()
}

fn max_coord_diff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x[0] - y[0]).abs().max((x[1] - y[1]).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn attraction_matches_double_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for factor in [1, 2] {
        for _ in 0..4 {
            let (h, w) = (rng.random_range(4..=10), rng.random_range(4..=10));
            let (h_d, w_d) = (h * factor, w * factor);
            let r = GaussianKernel::min_radius_for(h_d, w_d) + rng.random_range(0..3);
            let k = GaussianKernel::new(r).unwrap();
            let d = random_map(&mut rng, h_d, w_d);
            let expected = oracle_grid(d.values(), h_d, w_d, r, h, w);

            let g = deformation_to_grid(&d, &k, h, w).unwrap();
            assert!(max_coord_diff(g.coords(), &expected) < 1e-12);

            let mut tape = Tape::new();
            let dv = tape.constant(d.to_tensor());
            let gv = ops::attraction_grid(&mut tape, dv, &k, h, w).unwrap();
            let from_tape = SamplingGrid::from_tensor(tape.value(gv)).unwrap();
            assert!(max_coord_diff(from_tape.coords(), &expected) < 1e-12);
        }
    }
}

#[test]
fn positive_scaling_leaves_grid_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..10 {
        let (h_d, w_d) = (rng.random_range(8..=64), rng.random_range(8..=64));
        let k = GaussianKernel::new(GaussianKernel::min_radius_for(h_d, w_d)).unwrap();
        let raw: Vec<f64> = (0..h_d * w_d).map(|_| rng.random()).collect();
        let c = 10f64.powf(rng.random_range(-6.0..6.0));
        let scaled: Vec<f64> = raw.iter().map(|v| c * v).collect();
        let a = deformation_weights_to_grid(&raw, h_d, w_d, &k, 8, 8).unwrap();
        let b = deformation_weights_to_grid(&scaled, h_d, w_d, &k, 8, 8).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }
}

#[test]
fn constant_map_is_identity_away_from_borders() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let (h_d, w_d) = (rng.random_range(8..=64), rng.random_range(8..=64));
        let r = GaussianKernel::min_radius_for(h_d, w_d);
        let k = GaussianKernel::new(r).unwrap();
        let g = deformation_to_grid(&DeformationMap::constant(h_d, w_d), &k, h_d, w_d).unwrap();
        for i in r + 1..h_d.saturating_sub(r + 1) {
            for j in r + 1..w_d.saturating_sub(r + 1) {
                let [u, v] = g.get(i, j);
                assert!((u * (h_d - 1) as f64 - i as f64).abs() < 1e-9);
                assert!((v * (w_d - 1) as f64 - j as f64).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn raising_one_weight_never_thins_its_neighborhood() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..20 {
        let (h_d, w_d) = (rng.random_range(12..=32), rng.random_range(12..=32));
        let r = GaussianKernel::min_radius_for(h_d, w_d);
        let k = GaussianKernel::new(r).unwrap();
        let mut raw: Vec<f64> = (0..h_d * w_d).map(|_| rng.random()).collect();
        let (pi, pj) = (rng.random_range(0..h_d), rng.random_range(0..w_d));
        let count = |raw: &[f64]| {
            let d = DeformationMap::normalized(h_d, w_d, raw.to_vec()).unwrap();
            deformation_to_grid(&d, &k, h_d, w_d)
                .unwrap()
                .coords()
                .iter()
                .filter(|&&[u, v]| {
                    let (x, y) = (u * (h_d - 1) as f64, v * (w_d - 1) as f64);
                    (x - pi as f64).abs() <= r as f64 && (y - pj as f64).abs() <= r as f64
                })
                .count()
        };
        let before = count(&raw);
        raw[pi * w_d + pj] += 50.0;
        assert!(count(&raw) >= before);
    }
}

#[test]
fn edge_target_is_a_distribution_peaking_on_boundaries() {
    let data = (0..32 * 32).map(|p| u32::from(p % 32 >= 16)).collect();
    let lm = LabelMap::new(32, 32, 2, data).unwrap();
    let d = edge_deformation_target(&lm, 3, 32, 32).unwrap();
    assert!((d.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let row: Vec<f64> = (0..32).map(|j| d.values()[16 * 32 + j]).collect();
    let peak = row.iter().cloned().fold(0.0, f64::max);
    assert!(row[15] == peak || row[16] == peak);
    assert!(row[0] < peak / 100.0);
}

#[test]
fn emitted_grids_stay_in_unit_square() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..10 {
        let (h_d, w_d) = (rng.random_range(8..=40), rng.random_range(8..=40));
        let k = GaussianKernel::new(GaussianKernel::min_radius_for(h_d, w_d)).unwrap();
        let g = deformation_to_grid(&random_map(&mut rng, h_d, w_d), &k, 6, 9).unwrap();
        let t: Tensor = g.to_tensor();
        assert!(t.data().iter().all(|&c| (0.0..=1.0).contains(&c)));
    }
}
