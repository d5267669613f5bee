//! Adam and the step-halving learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// `lr(i) = initial * 0.5^floor(i / halving_period)`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub halving_period: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: 1e-4, halving_period: 10_000 }
    }
}

impl LrSchedule {
    pub fn lr(&self, iteration: u64) -> f64 {
        let halvings = (iteration / self.halving_period).min(i32::MAX as u64) as i32;
        self.initial * 0.5f64.powi(halvings)
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    /// Zeroed moments for parameters of the given shapes.
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let first: Vec<Tensor<T>> = shapes.into_iter().map(|s| Tensor::zeros(s.to_vec())).collect();
        let second = first.clone();
        Self { beta1: BETA1, beta2: BETA2, epsilon: EPSILON, step: 0, first, second }
    }

    /// Restores a saved state; moment tensors must pair up.
    pub fn from_parts(step: u64, first: Vec<Tensor<T>>, second: Vec<Tensor<T>>) -> Result<Self> {
        if first.len() != second.len()
            || first.iter().zip(&second).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape("first and second moment tensors do not pair up"));
        }
        Ok(Self { beta1: BETA1, beta2: BETA2, epsilon: EPSILON, step, first, second })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }

    /// One update. `names` and `iteration` only feed the diagnostics of a
    /// non-finite gradient, which aborts before anything is modified.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[&Tensor<T>],
        names: &[String],
        lr: f64,
        iteration: u64,
    ) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::shape(format!(
                    "parameter {} has shape {:?} but gradient {:?}",
                    names.get(i).map_or("?", |s| s.as_str()),
                    p.shape(),
                    g.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    context: format!(
                        "gradient of {} at iteration {iteration}",
                        names.get(i).map_or("?", |s| s.as_str())
                    ),
                });
            }
        }
        if lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - self.beta1), T::from_f64_lossy(1.0 - self.beta2));
        let (bc1, bc2) = (T::from_f64_lossy(bc1), T::from_f64_lossy(bc2));
        let lr = T::from_f64_lossy(lr);
        let eps = T::from_f64_lossy(self.epsilon);

        for (i, p) in params.iter_mut().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64) -> (Tensor<f64>, Adam<f64>) {
        let p = Tensor::new(vec![1], vec![value]).unwrap();
        let adam = Adam::new([p.shape()]);
        (p, adam)
    }

    #[test]
    fn schedule_halves_every_period() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(0), 1e-4);
        assert_eq!(s.lr(9_999), 1e-4);
        assert_eq!(s.lr(10_000), 5e-5);
        assert_eq!(s.lr(25_000), 2.5e-5);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let (mut p, mut adam) = one_param(0.0);
        let g = Tensor::new(vec![1], vec![1.0]).unwrap();
        adam.step(&mut [&mut p], &[&g], &["w".into()], 1e-4, 0).unwrap();
        let expected = -1e-4 * 1.0 / (1.0 + 1e-8);
        assert!((p.item() - expected).abs() < 1e-10);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut p, mut adam) = one_param(0.7);
        let g = Tensor::new(vec![1], vec![0.0]).unwrap();
        for i in 0..5 {
            adam.step(&mut [&mut p], &[&g], &["w".into()], 1e-3, i).unwrap();
        }
        assert_eq!(p.item(), 0.7);
    }

    #[test]
    fn first_step_moves_against_gradient() {
        for g in [-3.0, -0.01, 0.5, 40.0] {
            let (mut p, mut adam) = one_param(1.0);
            let gt = Tensor::new(vec![1], vec![g]).unwrap();
            adam.step(&mut [&mut p], &[&gt], &["w".into()], 1e-2, 0).unwrap();
            assert!((p.item() - 1.0).signum() == -g.signum());
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter_and_iteration() {
        let (mut p, mut adam) = one_param(1.0);
        let g = Tensor::new(vec![1], vec![f64::NAN]).unwrap();
        let err = adam.step(&mut [&mut p], &[&g], &["fc-1.weight".into()], 1e-3, 42).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fc-1.weight") && msg.contains("42"), "{msg}");
        assert_eq!(p.item(), 1.0);
        assert_eq!(adam.step_count(), 0);
    }
}
