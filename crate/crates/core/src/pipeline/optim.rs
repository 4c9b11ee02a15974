use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use super::AdamConfig;
use crate::error::{Error, Result};
use crate::network::ParamStore;

/// Adam with bias correction. Moments are kept per parameter name so they can be
/// checkpointed and restored exactly.
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that received a gradient.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, var) in params.vars() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let m_prev = match self.m.get(name) {
                Some(m) => m.clone(),
                None => g.zeros_like()?,
            };
            let v_prev = match self.v.get(name) {
                Some(v) => v.clone(),
                None => g.zeros_like()?,
            };
            let g = g.detach();
            let m = ((m_prev * beta1)? + (&g * (1.0 - beta1))?)?.detach();
            let v = ((v_prev * beta2)? + (g.sqr()? * (1.0 - beta2))?)?.detach();
            let denom = ((&v / bc2)?.sqrt()? + epsilon)?;
            let update = ((&m / bc1)? / denom)?;
            var.set(&(var.as_tensor() - (update * lr)?)?.detach())?;
            self.m.insert(name.to_string(), m);
            self.v.insert(name.to_string(), v);
        }
        Ok(())
    }

    /// Moment tensors keyed `adam.m.<param>` / `adam.v.<param>`.
    pub fn state_tensors(&self) -> BTreeMap<String, Tensor> {
        let m = self.m.iter().map(|(k, t)| (format!("adam.m.{k}"), t.clone()));
        let v = self.v.iter().map(|(k, t)| (format!("adam.v.{k}"), t.clone()));
        m.chain(v).collect()
    }

    /// Rebuilds the optimizer from [`Adam::state_tensors`] output and a step count.
    pub fn from_state(config: AdamConfig, step: u64, tensors: &BTreeMap<String, Tensor>) -> Result<Self> {
        let mut adam = Self::new(config);
        adam.step = step;
        for (key, t) in tensors {
            if let Some(name) = key.strip_prefix("adam.m.") {
                adam.m.insert(name.to_string(), t.clone());
            } else if let Some(name) = key.strip_prefix("adam.v.") {
                adam.v.insert(name.to_string(), t.clone());
            }
        }
        if adam.m.len() != adam.v.len() {
            return Err(Error::Config("optimizer state has unmatched moment tensors".into()));
        }
        Ok(adam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut ps = ParamStore::new(0, DType::F64, &Device::Cpu);
        ps.conv2d("c", 1, 1, 1, 1, true, 1.0).unwrap();
        let w0 = ps.get("c.weight").unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()[0];
        // loss = 3 * w; the bias gets no gradient
        let loss = (ps.get("c.weight").unwrap().as_tensor().sum_all().unwrap() * 3.0).unwrap();
        let grads = loss.backward().unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&ps, &grads, 0.1).unwrap();
        let w1 = ps.get("c.weight").unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()[0];
        assert!((w0 - w1 - 0.1).abs() < 1e-6, "{w0} -> {w1}");
        let b1 = ps.get("c.bias").unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()[0];
        assert_eq!(b1, 0.0);
        assert_eq!(adam.step_count(), 1);
        assert_eq!(adam.state_tensors().len(), 2);
    }

    #[test]
    fn state_round_trip() {
        let t = Tensor::new(&[1.0f64], &Device::Cpu).unwrap();
        let mut map = BTreeMap::new();
        map.insert("adam.m.x".to_string(), t.clone());
        map.insert("adam.v.x".to_string(), t.clone());
        let adam = Adam::from_state(AdamConfig::default(), 5, &map).unwrap();
        assert_eq!(adam.step_count(), 5);
        assert_eq!(adam.state_tensors().len(), 2);
        map.remove("adam.v.x");
        assert!(Adam::from_state(AdamConfig::default(), 5, &map).is_err());
    }
}
