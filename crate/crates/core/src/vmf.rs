//! Learnable von Mises-Fisher kernel bank.
//!
//! Each kernel is a unit direction `mu_j` in feature space. For a unit
//! feature vector `z_i` the vMF likelihood is proportional to
//! `exp(sigma * mu_j . z_i)`; the normalizing constant depends only on the
//! fixed `sigma` and is never computed. Activations are evaluated in the
//! max-shifted form `exp(sigma * (mu_j . z_i - 1))`, which stays in (0, 1]
//! and keeps ratios and argmax of the likelihoods.

use candle_core::{DType, Device, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::{softmax, ParamBuilder, ParamStore};

pub const DEFAULT_NUM_KERNELS: usize = 10;
pub const DEFAULT_SIGMA: f64 = 30.0;
/// Allowed deviation of a feature norm from 1 before `activations` rejects it.
pub const UNIT_TOLERANCE: f64 = 1e-4;
const NORM_FLOOR_SQ: f64 = 1e-24;

#[derive(Clone)]
pub struct KernelBank {
    params: ParamStore,
    mu: Var,
    sigma: f64,
}

impl KernelBank {
    /// Xavier-initialized kernels projected onto the unit sphere.
    pub fn new(
        num_kernels: usize,
        channels: usize,
        sigma: f64,
        rng: &mut ChaCha8Rng,
        dtype: DType,
    ) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        let mut params = ParamStore::new();
        let mu = ParamBuilder::new(&mut params, rng, dtype).xavier_uniform(
            "vmf.mu",
            &[num_kernels, channels],
            channels,
            num_kernels,
        )?;
        let bank = Self { params, mu, sigma };
        bank.renormalize()?;
        Ok(bank)
    }

    /// Bank with the given `(J, C)` directions, rescaled to unit norm.
    pub fn from_directions(directions: &Tensor, sigma: f64) -> Result<Self> {
        let mu = Var::from_tensor(directions)?;
        let mut params = ParamStore::new();
        params.push("vmf.mu", mu.clone());
        let bank = Self { params, mu, sigma };
        bank.renormalize()?;
        Ok(bank)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn mu(&self) -> &Var {
        &self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn num_kernels(&self) -> usize {
        self.mu.dims()[0]
    }

    pub fn channels(&self) -> usize {
        self.mu.dims()[1]
    }

    /// Projects every kernel row back onto the unit sphere.
    pub fn renormalize(&self) -> Result<()> {
        let norms = self.row_norms()?;
        if let Some(j) = norms.iter().position(|&n| !(n > 0.0 && n.is_finite())) {
            return Err(Error::ZeroKernel(j));
        }
        let n = Tensor::from_vec(norms, (self.num_kernels(), 1), &Device::Cpu)?
            .to_dtype(self.mu.dtype())?;
        self.mu.set(&self.mu.as_tensor().broadcast_div(&n)?)?;
        Ok(())
    }

    pub fn row_norms(&self) -> Result<Vec<f64>> {
        Ok(self
            .mu
            .as_tensor()
            .to_dtype(DType::F64)?
            .sqr()?
            .sum_keepdim(1)?
            .sqrt()?
            .flatten_all()?
            .to_vec1::<f64>()?)
    }

    pub fn max_norm_deviation(&self) -> Result<f64> {
        Ok(self
            .row_norms()?
            .into_iter()
            .map(|n| (n - 1.0).abs())
            .fold(0.0, f64::max))
    }
}

/// Unit-normalized features plus the number of all-zero positions that
/// were left at zero.
pub struct NormalizedFeatures {
    pub values: Tensor,
    pub zero_vectors: usize,
}

/// Rescales each spatial position's channel vector of `(B, C, H, W)` to unit
/// length. Zero vectors stay zero.
pub fn normalize_features(z: &Tensor) -> Result<NormalizedFeatures> {
    let sq = z.sqr()?.sum_keepdim(1)?;
    let zero_vectors = sq
        .to_dtype(DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?
        .into_iter()
        .filter(|&s| s == 0.0)
        .count();
    let norm = (sq + NORM_FLOOR_SQ)?.sqrt()?;
    Ok(NormalizedFeatures {
        values: z.broadcast_div(&norm)?,
        zero_vectors,
    })
}

fn check_unit(z: &Tensor) -> Result<()> {
    let norms = z
        .to_dtype(DType::F64)?
        .sqr()?
        .sum_keepdim(1)?
        .sqrt()?
        .flatten_all()?
        .to_vec1::<f64>()?;
    let worst = norms
        .iter()
        .filter(|&&n| n != 0.0)
        .map(|n| (n - 1.0).abs())
        .fold(0.0, f64::max);
    if worst > UNIT_TOLERANCE || norms.iter().any(|n| !n.is_finite()) {
        return Err(Error::NotNormalized(worst));
    }
    Ok(())
}

/// Cosine similarities `mu_j . z_i` as a `(B, J, H, W)` tensor.
pub fn cosine_map(mu: &Tensor, z_unit: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = z_unit.dims4()?;
    let (j, mc) = mu.dims2()?;
    if mc != c {
        return Err(Error::Shape(format!(
            "kernels have {mc} channels, features have {c}"
        )));
    }
    let flat = z_unit.permute((0, 2, 3, 1))?.contiguous()?.reshape((b * h * w, c))?;
    let cos = flat.matmul(&mu.t()?.contiguous()?)?;
    Ok(cos.reshape((b, h, w, j))?.permute((0, 3, 1, 2))?.contiguous()?)
}

/// Kernel activations at every position of a `(B, J, H, W)` grid.
#[derive(Clone, Debug)]
pub struct CompositionMap {
    pub activations: Tensor,
    pub normalized: bool,
}

impl CompositionMap {
    pub fn num_kernels(&self) -> usize {
        self.activations.dims()[1]
    }

    /// Channels of batch element `index` as grids, in kernel order.
    pub fn channel_grids(&self, index: usize) -> Result<Vec<Grid<f32>>> {
        let (_, j, h, w) = self.activations.dims4()?;
        let a = self
            .activations
            .get(index)?
            .to_dtype(DType::F32)?
            .reshape((j, h * w))?
            .to_vec2::<f32>()?;
        a.into_iter().map(|ch| Grid::from_vec(h, w, ch)).collect()
    }
}

/// Activations of `bank` on unit-normalized features `z_unit`.
///
/// Raw mode returns `exp(sigma * (cos - 1))`; normalized mode divides by the
/// per-position sum, i.e. a softmax over kernels with logits `sigma * cos`.
pub fn activations(bank: &KernelBank, z_unit: &Tensor, normalize_over_kernels: bool) -> Result<CompositionMap> {
    activations_with(bank.mu().as_tensor(), bank.sigma(), z_unit, normalize_over_kernels)
}

/// As [`activations`] with an explicit kernel tensor (e.g. a detached copy).
pub fn activations_with(
    mu: &Tensor,
    sigma: f64,
    z_unit: &Tensor,
    normalize_over_kernels: bool,
) -> Result<CompositionMap> {
    check_unit(z_unit)?;
    let cos = cosine_map(mu, z_unit)?;
    let activations = if normalize_over_kernels {
        softmax(&(cos * sigma)?, 1)?
    } else {
        ((cos - 1.0)? * sigma)?.exp()?
    };
    Ok(CompositionMap {
        activations,
        normalized: normalize_over_kernels,
    })
}

/// Clustering objective: `-mean_i max_j mu_j . z_i`, averaged over the batch.
pub fn cluster_loss(bank: &KernelBank, z_unit: &Tensor) -> Result<Tensor> {
    let cos = cosine_map(bank.mu().as_tensor(), z_unit)?;
    Ok(cos.max_keepdim(1)?.mean_all()?.neg()?)
}
