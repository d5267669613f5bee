//! Central finite-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-4;

/// Entries where both gradients are below this are counted as agreeing
/// zeros; central differences cannot resolve anything smaller at the default
/// step.
pub const ZERO_GRADIENT: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Max over parameter elements of `|ad - fd| / max(|ad|, |fd|)`, skipping
    /// elements where both are below [`ZERO_GRADIENT`].
    pub max_rel_error: f64,
    /// `(parameter, element)` where the maximum occurred.
    pub worst: (usize, usize),
    pub checked: usize,
    /// Elements skipped as zero on both sides.
    pub zeros: usize,
}

/// Compares reverse-mode gradients against central differences.
///
/// `build` records a scalar loss on a fresh tape given the parameter
/// variables; it must be deterministic in the parameter values.
pub fn grad_check<F>(params: &[Tensor<f64>], step: f64, mut build: F) -> Result<GradCheck>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        if !tape.value(loss).item().is_finite() {
            return Err(Error::NonFinite { context: "gradient check loss".into() });
        }
        tape.backward(loss)?;
        vars.iter()
            .zip(params)
            .map(|(&v, p)| tape.grad(v).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect()
    };

    let mut eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.param(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite { context: "gradient check loss".into() });
        }
        Ok(v)
    };

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheck { max_rel_error: 0.0, worst: (0, 0), checked: 0, zeros: 0 };
    for pi in 0..params.len() {
        for ei in 0..params[pi].numel() {
            let orig = params[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[ei] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[ei] = orig;

            let fd = (up - down) / (2.0 * step);
            let ad = analytic[pi][ei];
            report.checked += 1;
            let scale = ad.abs().max(fd.abs());
            if scale < ZERO_GRADIENT {
                report.zeros += 1;
                continue;
            }
            let rel = (ad - fd).abs() / scale;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, ei);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_loss_is_exact() {
        let w = Tensor::new(vec![3], vec![0.2, -1.5, 3.0]).unwrap();
        let x = Tensor::new(vec![3], vec![1.0, 2.0, -0.5]).unwrap();
        let r = grad_check(&[w], DEFAULT_STEP, |tape, v| {
            let c = tape.constant(x.clone());
            let p = tape.mul(v[0], c)?;
            Ok(tape.sum(p))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn unused_parameter_is_a_zero_and_a_wrong_gradient_is_caught() {
        let w = Tensor::new(vec![2], vec![0.5, -1.0]).unwrap();
        let unused = Tensor::new(vec![1], vec![3.0]).unwrap();
        let r = grad_check(&[w.clone(), unused], DEFAULT_STEP, |tape, v| {
            let sq = tape.square(v[0]);
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert_eq!((r.checked, r.zeros), (3, 1));
        assert!(r.max_rel_error < 1e-9);

        // relu at a kink: the tape picks the zero side, differences see half a slope
        let at_kink = Tensor::new(vec![1], vec![0.0]).unwrap();
        let r = grad_check(&[at_kink], DEFAULT_STEP, |tape, v| {
            let h = tape.relu(v[0]);
            Ok(tape.sum(h))
        })
        .unwrap();
        assert!(r.max_rel_error > 0.4, "{r:?}");
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let w = Tensor::new(vec![1], vec![1.0]).unwrap();
        let r = grad_check(&[w], DEFAULT_STEP, |tape, v| {
            let s = tape.scale(v[0], f64::INFINITY);
            Ok(tape.sum(s))
        });
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
