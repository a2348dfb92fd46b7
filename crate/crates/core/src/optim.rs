//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers, one pair per parameter, in the order the
/// parameters are presented to [`Adam::step`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter and clears its gradient.
    ///
    /// Fails without touching any parameter if a gradient is missing or the
    /// parameter list does not match the shapes seen on earlier steps.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (String, &'a mut Tensor)>) -> Result<()> {
        let mut params: Vec<(String, &mut Tensor)> = params.into_iter().collect();
        if self.moments.is_empty() {
            self.moments = params.iter().map(|(_, p)| (vec![0.0; p.len()], vec![0.0; p.len()])).collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer holds state for {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        for ((name, p), (m, _)) in params.iter().zip(&self.moments) {
            if p.grad().is_none() {
                return Err(Error::MissingGrad(name.clone()));
            }
            if m.len() != p.len() {
                return Err(Error::shape("adam_step", &[m.len()], p.shape()));
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((_, p), (m, v)) in params.iter_mut().zip(&mut self.moments) {
            let g = p.take_grad().expect("checked above");
            for (((w, g), m), v) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Tensor {
        Tensor::vector(&[v]).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = one(1.0);
        w.accumulate_grad(&[1.0]).unwrap();
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() });
        adam.step([("w".to_string(), &mut w)]).unwrap();
        assert!((w.item() - 0.9).abs() < 1e-6);
        assert!(w.grad().is_none(), "grad cleared after step");
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut w = one(1.0);
        w.accumulate_grad(&[0.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step([("w".to_string(), &mut w)]).unwrap();
        assert_eq!(w.item(), 1.0);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut a = one(1.0);
        let mut b = one(1.0);
        a.accumulate_grad(&[1.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        let err = adam
            .step([("a".to_string(), &mut a), ("head.w".to_string(), &mut b)])
            .unwrap_err();
        assert!(matches!(err, Error::MissingGrad(ref n) if n == "head.w"));
        assert_eq!(a.item(), 1.0, "no partial update");
    }

    #[test]
    fn converges_on_quadratic() {
        // f(w) = (w - 2)^2, f'(w) = 2(w - 2)
        let mut w = one(0.0);
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..Default::default() });
        for _ in 0..500 {
            let g = 2.0 * (w.item() - 2.0);
            w.accumulate_grad(&[g]).unwrap();
            adam.step([("w".to_string(), &mut w)]).unwrap();
        }
        assert!((w.item() - 2.0).abs() < 0.05, "w = {}", w.item());
    }
}
