//! Central-difference gradient checking.

use super::tape::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// `(input index, element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).data()[0])
}

/// Checks every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64, tolerance: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |e| (i, e)))
        .collect();
    grad_check_coords(f, inputs, &coords, step, tolerance)
}

/// Checks the listed `(input, element)` coordinates. `f` must map the inputs
/// to a single-element value.
pub fn grad_check_coords<F>(
    f: F,
    inputs: &[Tensor],
    coords: &[(usize, usize)],
    step: f64,
    tolerance: f64,
) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v)).collect();

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        tolerance,
    };
    let mut work = inputs.to_vec();
    for &(i, e) in coords {
        let orig = work[i].data()[e];
        work[i].data_mut()[e] = orig + step;
        let plus = evaluate(&f, &work)?;
        work[i].data_mut()[e] = orig - step;
        let minus = evaluate(&f, &work)?;
        work[i].data_mut()[e] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i].data()[e], numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some((i, e));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops;

    #[test]
    fn linear_function_exact() {
        let w = Tensor::new(vec![3], vec![0.5, -2.0, 3.0]).unwrap();
        let x = Tensor::new(vec![3], vec![1.0, 2.0, -1.0]).unwrap();
        let r = grad_check(
            |t, v| {
                let c = t.constant(w.clone());
                let p = ops::mul(t, v[0], c)?;
                ops::sum(t, p)
            },
            &[x],
            1e-5,
            1e-10,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-10, "{r:?}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn sign_flipped_gradient_reports_two() {
        let x = Tensor::new(vec![2], vec![0.7, -1.3]).unwrap();
        let r = grad_check(
            |t, v| {
                let val = Tensor::scalar(t.value(v[0]).data().iter().map(|a| a * a).sum());
                t.record(
                    val,
                    &[v[0]],
                    Box::new(|g, p, _| {
                        let s = g.data()[0];
                        let d = p[0].data().iter().map(|a| -2.0 * a * s).collect();
                        vec![Some(Tensor::new(p[0].shape().to_vec(), d).unwrap())]
                    }),
                )
            },
            &[x],
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!((r.max_rel_err - 2.0).abs() < 1e-6, "{r:?}");
        assert!(!r.passed());
    }
}
