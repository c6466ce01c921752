use super::tensor::{HasParams, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    name: String,
    m: Tensor,
    v: Tensor,
}

/// Bias-corrected Adam. Moments are matched to parameters by position and
/// checked by name on every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    moments: Vec<Moments>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            moments: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step<M: HasParams + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        let mut params = model.params_mut();
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| Moments {
                    name: p.name.clone(),
                    m: Tensor::zeros(p.value.shape()),
                    v: Tensor::zeros(p.value.shape()),
                })
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::ArchitectureMismatch(format!(
                "optimizer tracks {} parameters, model has {}",
                self.moments.len(),
                params.len()
            )));
        }

        self.steps += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        for (p, mom) in params.iter_mut().zip(&mut self.moments) {
            if p.name != mom.name || p.value.shape() != mom.m.shape() {
                return Err(Error::ArchitectureMismatch(format!(
                    "optimizer moment `{}` does not match parameter `{}`",
                    mom.name, p.name
                )));
            }
            let grads = p.grad.data();
            let values = p.value.data_mut();
            let ms = mom.m.data_mut();
            let vs = mom.v.data_mut();
            for k in 0..values.len() {
                let g = grads[k];
                ms[k] = beta1 * ms[k] + (1.0 - beta1) * g;
                vs[k] = beta2 * vs[k] + (1.0 - beta2) * g * g;
                let m_hat = ms[k] / c1;
                let v_hat = vs[k] / c2;
                values[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
