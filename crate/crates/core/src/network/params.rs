use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{Conv2d, Conv2dConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Named trainable parameters with deterministic, seeded initialization:
/// fan-in Kaiming normal weights, zero biases.
///
/// Names are dotted paths (`encoder.stem.weight`); the map is ordered so
/// iteration order, parameter counting and serialization are stable.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: device.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn register(&mut self, name: String, tensor: Tensor) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::Config(format!("parameter {name} registered twice")));
        }
        let var = Var::from_tensor(&tensor)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(t)
    }

    fn kaiming(&mut self, shape: &[usize], fan_in: usize, leaky_slope: f64) -> Result<Tensor> {
        let gain = (2.0 / (1.0 + leaky_slope * leaky_slope)).sqrt();
        let std = gain / (fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| normal.sample(&mut self.rng)).collect();
        Ok(Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?)
    }

    /// Registers `<prefix>.weight` (and `<prefix>.bias` when requested) for a square
    /// `kernel x kernel` convolution whose padding keeps the spatial size.
    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        &mut self,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        bias: bool,
        leaky_slope: f64,
    ) -> Result<Conv2d> {
        let fan_in = in_channels * kernel * kernel;
        let w = self.kaiming(&[out_channels, in_channels, kernel, kernel], fan_in, leaky_slope)?;
        let weight = self.register(format!("{prefix}.weight"), w)?;
        let bias = if bias {
            let b = Tensor::zeros(out_channels, self.dtype, &self.device)?;
            Some(self.register(format!("{prefix}.bias"), b)?)
        } else {
            None
        };
        let cfg = Conv2dConfig {
            padding: dilation * (kernel - 1) / 2,
            stride: 1,
            dilation,
            groups: 1,
            ..Default::default()
        };
        Ok(Conv2d::new(weight, bias, cfg))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites a parameter in place; every layer holding it sees the new value.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if var.dims() != value.dims() {
            return Err(Error::Shape(format!(
                "parameter {name}: expected {:?}, got {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Zeroes every parameter whose name starts with `prefix`.
    pub fn zero_prefix(&self, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (name, var) in self.vars.iter().filter(|(k, _)| k.starts_with(prefix)) {
            var.set(&var.zeros_like()?)
                .map_err(|e| Error::Config(format!("{name}: {e}")))?;
            n += 1;
        }
        Ok(n)
    }

    /// Snapshot of all parameter values (detached copies).
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?.detach())))
            .collect()
    }

    /// Loads values for every registered parameter from `tensors`; all names must be present.
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for name in self.vars.keys() {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
            self.set(name, t)?;
        }
        Ok(())
    }
}
