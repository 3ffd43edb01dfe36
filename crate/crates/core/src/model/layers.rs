//! Minimal parameterized layers over candle variables.
//!
//! Initialization draws from a caller-supplied seeded generator so that a
//! model is a pure function of its config and seed.

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Named trainable tensors in registration order.
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocate a parameter filled with U(−bound, bound).
    pub fn uniform(
        &mut self,
        name: String,
        shape: &[usize],
        bound: f64,
        dtype: DType,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        let t = Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)?;
        let v = Var::from_tensor(&t)?;
        self.entries.push((name, v.clone()));
        Ok(v)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn named(&self) -> &[(String, Var)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Euclidean norm over all parameters.
    pub fn global_norm(&self) -> Result<f64> {
        let mut acc = 0.0;
        for (_, v) in &self.entries {
            acc += v
                .as_tensor()
                .to_dtype(DType::F64)?
                .sqr()?
                .sum_all()?
                .to_scalar::<f64>()?;
        }
        Ok(acc.sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dtype: DType,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let weight = store.uniform(
            format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            bound * 3f64.sqrt(),
            dtype,
            rng,
        )?;
        let bias = store.uniform(format!("{name}.bias"), &[out_ch], bound, dtype, rng)?;
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let ys = xs.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        let bias = self.bias.as_tensor().reshape((1, (), 1, 1))?;
        Ok(ys.broadcast_add(&bias)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        dtype: DType,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.uniform(
            format!("{name}.weight"),
            &[out_dim, in_dim],
            bound * 3f64.sqrt(),
            dtype,
            rng,
        )?;
        let bias = store.uniform(format!("{name}.bias"), &[out_dim], bound, dtype, rng)?;
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let ys = xs.matmul(&self.weight.as_tensor().t()?)?;
        Ok(ys.broadcast_add(self.bias.as_tensor())?)
    }
}

/// log σ(x), stable for large |x|.
pub fn log_sigmoid(xs: &Tensor) -> Result<Tensor> {
    // log σ(x) = min(x, 0) − log(1 + e^{−|x|})
    let soft = (xs.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((xs.minimum(0.0)? - soft)?)
}

/// log(1 + eˣ), stable for large |x|.
pub fn softplus(xs: &Tensor) -> Result<Tensor> {
    let soft = (xs.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((xs.maximum(0.0)? + soft)?)
}
