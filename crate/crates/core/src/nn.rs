//! Small neural-network toolkit over candle tensors: named parameter
//! stores with seeded Xavier initialization, convolution, instance
//! normalization, activations and Adam.

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Image, Mask};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;

/// Insertion-ordered named parameters of one network.
#[derive(Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&mut self, name: &str, var: Var) {
        self.entries.push((name.to_string(), var));
    }

    pub fn named(&self) -> &[(String, Var)] {
        &self.entries
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.entries.iter().map(|(_, v)| v)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Squared L2 norm of the gradients held for these parameters.
    pub fn grad_norm_sq(&self, grads: &GradStore) -> Result<f64> {
        let mut total = 0.0;
        for v in self.vars() {
            if let Some(g) = grads.get(v) {
                total += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
            }
        }
        Ok(total)
    }

    /// Deep copy of the current values.
    pub fn snapshot(&self) -> Result<Vec<Tensor>> {
        self.vars().map(|v| Ok(v.as_tensor().copy()?)).collect()
    }

    pub fn restore(&self, values: &[Tensor]) -> Result<()> {
        for (v, t) in self.vars().zip(values) {
            v.set(t)?;
        }
        Ok(())
    }
}

/// Creates parameters under a dotted name prefix.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
    dtype: DType,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, dtype: DType) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
            dtype,
        }
    }

    pub fn pp(&mut self, name: &str) -> ParamBuilder<'_> {
        let prefix = self.full_name(name);
        ParamBuilder {
            store: &mut *self.store,
            rng: &mut *self.rng,
            prefix,
            dtype: self.dtype,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Var> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.insert(name, values, shape)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        self.insert(name, vec![0.0; n], shape)
    }

    fn insert(&mut self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Var> {
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.store.entries.push((self.full_name(name), var.clone()));
        Ok(var)
    }
}

#[derive(Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        pb: &mut ParamBuilder,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let fan_out = out_channels * kernel * kernel;
        let weight = pb.xavier_uniform(
            "weight",
            &[out_channels, in_channels, kernel, kernel],
            fan_in,
            fan_out,
        )?;
        let bias = pb.zeros("bias", &[out_channels])?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        let b = self.bias.reshape((1, self.out_channels(), 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

/// Per-sample, per-channel normalization over the spatial dims (no affine).
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim((2, 3))?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim((2, 3))?;
    Ok(centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?)
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok((x.relu()? - (x.neg()?.relu()? * LEAKY_SLOPE)?)?)
}

pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    Ok(x.upsample_nearest2d(2 * h, 2 * w)?)
}

/// Numerically stable softmax over `dim`.
pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let shift = x.max_keepdim(dim)?.detach();
    let e = x.broadcast_sub(&shift)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(dim)?)?)
}

/// Mean absolute difference.
pub fn l1_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.abs()?.mean_all()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Stacks images into a `(B, 1, H, W)` tensor.
pub fn images_to_tensor(images: &[&Image], dtype: DType) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::InvalidArgument("empty image batch".into()));
    };
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.dims() != (h, w) {
            return Err(Error::Shape(format!(
                "image {} is {:?}, batch expects {:?}",
                img.id,
                img.dims(),
                (h, w)
            )));
        }
        data.extend_from_slice(img.pixels.as_slice());
    }
    Ok(Tensor::from_vec(data, (images.len(), 1, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// One-hot `(B, K+1, H, W)` encoding of label masks.
pub fn masks_to_one_hot(masks: &[&Mask], num_classes: u8, dtype: DType) -> Result<Tensor> {
    let Some(first) = masks.first() else {
        return Err(Error::InvalidArgument("empty mask batch".into()));
    };
    let (h, w) = first.dims();
    let k = num_classes as usize + 1;
    let mut data = vec![0f32; masks.len() * k * h * w];
    for (b, m) in masks.iter().enumerate() {
        if m.dims() != (h, w) {
            return Err(Error::Shape(format!("mask {:?} vs {:?}", m.dims(), (h, w))));
        }
        for (i, &l) in m.labels.as_slice().iter().enumerate() {
            if l as usize >= k {
                return Err(Error::UnknownClass {
                    class_id: l,
                    num_classes,
                });
            }
            data[(b * k + l as usize) * h * w + i] = 1.0;
        }
    }
    Ok(Tensor::from_vec(data, (masks.len(), k, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Per-pixel argmax over dim 1 of a `(B, C, H, W)` tensor.
pub fn argmax_channels(probs: &Tensor) -> Result<Vec<Vec<u8>>> {
    let (b, _, h, w) = probs.dims4()?;
    let idx = probs.argmax_keepdim(1)?.reshape((b, h * w))?;
    Ok(idx
        .to_vec2::<u32>()?
        .into_iter()
        .map(|row| row.into_iter().map(|v| v as u8).collect())
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam over a fixed list of named variables.
pub struct Adam {
    cfg: AdamConfig,
    vars: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(vars: Vec<(String, Var)>, cfg: AdamConfig) -> Result<Self> {
        let m = vars
            .iter()
            .map(|(_, v)| Ok(v.zeros_like()?))
            .collect::<Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self {
            cfg,
            vars,
            m,
            v,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every variable that has a gradient.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (_, var)) in self.vars.iter().enumerate() {
            let Some(g) = grads.get(var) else { continue };
            let g = g.detach();
            let m = ((&self.m[i] * beta1)? + (&g * (1.0 - beta1))?)?;
            let v = ((&self.v[i] * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let denom = ((&v / bc2)?.sqrt()? + eps)?;
            let update = ((&m / bc1)? / denom)?;
            var.set(&(var.as_tensor() - (update * lr)?)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }

    /// Moment tensors keyed `m.<param>` / `v.<param>`.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.vars.len());
        for (i, (name, _)) in self.vars.iter().enumerate() {
            out.push((format!("m.{name}"), self.m[i].clone()));
            out.push((format!("v.{name}"), self.v[i].clone()));
        }
        out
    }

    pub fn load_state(&mut self, step: u64, lookup: impl Fn(&str) -> Option<Tensor>) -> Result<()> {
        for (i, (name, var)) in self.vars.iter().enumerate() {
            for (key, slot) in [(format!("m.{name}"), &mut self.m[i]), (format!("v.{name}"), &mut self.v[i])] {
                let t = lookup(&key)
                    .ok_or_else(|| Error::Shape(format!("optimizer state `{key}` missing")))?;
                if t.dims() != var.dims() {
                    return Err(Error::Shape(format!(
                        "optimizer state `{key}` has shape {:?}, parameter has {:?}",
                        t.dims(),
                        var.dims()
                    )));
                }
                *slot = t.to_dtype(var.dtype())?;
            }
        }
        self.step = step;
        Ok(())
    }
}
