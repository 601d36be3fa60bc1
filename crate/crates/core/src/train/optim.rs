use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam {
        #[serde(default = "beta1")]
        beta1: f64,
        #[serde(default = "beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: beta1(),
            beta2: beta2(),
            eps: adam_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Optimizer::Adam { beta1, beta2, eps } = *self {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::Config(format!(
                    "Adam needs 0 <= beta < 1 and eps > 0, got ({beta1}, {beta2}, {eps})"
                )));
            }
        }
        Ok(())
    }
}

/// Optimizer state for a fixed list of tensors.
#[derive(Clone, Debug)]
pub struct OptimState {
    kind: Optimizer,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(kind: Optimizer, sizes: &[usize]) -> Self {
        let (m, v) = match kind {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam { .. } => (
                sizes.iter().map(|&n| vec![0.0; n]).collect(),
                sizes.iter().map(|&n| vec![0.0; n]).collect(),
            ),
        };
        OptimState { kind, step: 0, m, v }
    }

    /// One update. `rates[i]` is the step size of tensor `i`; a zero rate
    /// leaves the tensor (and its moments) untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], rates: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), rates.len());
        self.step += 1;
        match self.kind {
            Optimizer::Sgd => {
                for ((p, g), &lr) in params.iter_mut().zip(grads).zip(rates) {
                    if lr != 0.0 {
                        p.add_assign_scaled(g, -lr);
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (i, ((p, g), &lr)) in params.iter_mut().zip(grads).zip(rates).enumerate() {
                    if lr == 0.0 {
                        continue;
                    }
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *x -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let g = Tensor::vector(vec![0.5, -1.0]);
        let mut s = OptimState::new(Optimizer::Sgd, &[2]);
        s.step(&mut [&mut p], &[g], &[0.1]);
        assert_eq!(p.data(), &[0.95, 2.1]);
    }

    #[test]
    fn adam_first_step_is_sign_times_rate() {
        let mut p = Tensor::vector(vec![0.0, 0.0, 0.0]);
        let g = Tensor::vector(vec![3.0, -0.01, 0.0]);
        let mut s = OptimState::new(Optimizer::adam(), &[3]);
        s.step(&mut [&mut p], &[g], &[0.01]);
        assert!((p.data()[0] + 0.01).abs() < 1e-9);
        assert!((p.data()[1] - 0.01).abs() < 1e-6);
        assert_eq!(p.data()[2], 0.0);
    }

    #[test]
    fn zero_rate_freezes() {
        let mut p = Tensor::vector(vec![1.0]);
        let mut s = OptimState::new(Optimizer::adam(), &[1]);
        s.step(&mut [&mut p], &[Tensor::vector(vec![1.0])], &[0.0]);
        assert_eq!(p.data(), &[1.0]);
        assert!(Optimizer::Adam { beta1: 1.0, beta2: 0.9, eps: 1e-8 }.validate().is_err());
    }
}
