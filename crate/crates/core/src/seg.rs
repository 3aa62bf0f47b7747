//! Segmentation head on composition maps, the Dice objective and the
//! translate-then-segment training path.

use candle_core::{DType, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::data::Mask;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::{argmax_channels, instance_norm, leaky_relu, softmax, upsample2x, Conv2d, ParamBuilder, ParamStore};
use crate::translation::TranslationNets;
use crate::vmf::{activations_with, normalize_features, CompositionMap, KernelBank};

pub const DICE_EPS: f64 = 1e-5;

#[derive(Clone)]
pub struct SegHead {
    params: ParamStore,
    num_classes: u8,
    conv1: Conv2d,
    conv2: Conv2d,
    up: Vec<Conv2d>,
    out: Conv2d,
}

impl SegHead {
    /// `up_stages` learned 2x upsampling stages bring the map to image size.
    pub fn new(
        in_channels: usize,
        width: usize,
        num_classes: u8,
        up_stages: usize,
        rng: &mut ChaCha8Rng,
        dtype: DType,
    ) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut root = ParamBuilder::new(&mut params, rng, dtype);
        let mut pb = root.pp("head");
        let conv1 = Conv2d::new(&mut pb.pp("conv1"), in_channels, width, 3, 1, 1)?;
        let conv2 = Conv2d::new(&mut pb.pp("conv2"), width, width, 3, 1, 1)?;
        let up = (0..up_stages)
            .map(|i| Conv2d::new(&mut pb.pp(&format!("up{i}")), width, width, 3, 1, 1))
            .collect::<Result<_>>()?;
        let out = Conv2d::new(&mut pb.pp("out"), width, num_classes as usize + 1, 1, 1, 0)?;
        Ok(Self {
            params,
            num_classes,
            conv1,
            conv2,
            up,
            out,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn num_classes(&self) -> u8 {
        self.num_classes
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    /// Class probabilities `(B, K+1, H, W)` from a `(B, J, h, w)` map.
    pub fn forward(&self, comp: &Tensor) -> Result<Tensor> {
        let j = comp.dims4()?.1;
        if j != self.in_channels() {
            return Err(Error::Shape(format!(
                "head expects {} channels, composition map has {j}",
                self.in_channels()
            )));
        }
        let mut h = leaky_relu(&instance_norm(&self.conv1.forward(comp)?)?)?;
        h = leaky_relu(&instance_norm(&self.conv2.forward(&h)?)?)?;
        for u in &self.up {
            h = leaky_relu(&instance_norm(&u.forward(&upsample2x(&h)?)?)?)?;
        }
        softmax(&self.out.forward(&h)?, 1)
    }
}

/// Per-pixel class probabilities and their argmax masks.
pub struct SegPrediction {
    pub probs: Tensor,
    pub masks: Vec<Mask>,
}

pub fn segment(head: &SegHead, comp: &CompositionMap) -> Result<SegPrediction> {
    let probs = head.forward(&comp.activations)?;
    let masks = probs_to_masks(&probs, head.num_classes())?;
    Ok(SegPrediction { probs, masks })
}

pub fn probs_to_masks(probs: &Tensor, num_classes: u8) -> Result<Vec<Mask>> {
    let (_, _, h, w) = probs.dims4()?;
    argmax_channels(probs)?
        .into_iter()
        .map(|labels| Mask::new(Grid::from_vec(h, w, labels)?, num_classes))
        .collect()
}

/// Soft Dice loss: `1 - mean over samples and foreground classes of
/// (2·Σp·t + ε) / (Σp + Σt + ε)`.
pub fn dice_loss(probs: &Tensor, target_one_hot: &Tensor) -> Result<Tensor> {
    if probs.dims() != target_one_hot.dims() {
        return Err(Error::Shape(format!(
            "probabilities {:?} vs targets {:?}",
            probs.dims(),
            target_one_hot.dims()
        )));
    }
    let k = probs.dims4()?.1;
    if k < 2 {
        return Err(Error::Shape("need background plus at least one class".into()));
    }
    let inter = (probs * target_one_hot)?.sum((2, 3))?;
    let psum = probs.sum((2, 3))?;
    let tsum = target_one_hot.sum((2, 3))?;
    let dice = ((inter * 2.0)? + DICE_EPS)?.div(&((psum + tsum)? + DICE_EPS)?)?;
    let fg = dice.narrow(1, 1, k - 1)?;
    Ok(fg.mean_all()?.affine(-1.0, 1.0)?)
}

/// The three maps the translate-then-segment path composes.
pub trait SegPath {
    fn encode_source(&self, x: &Tensor) -> Result<Tensor>;
    fn generate_target(&self, z: &Tensor) -> Result<Tensor>;
    fn encode_target(&self, y: &Tensor) -> Result<Tensor>;
}

impl SegPath for TranslationNets {
    fn encode_source(&self, x: &Tensor) -> Result<Tensor> {
        self.enc_x.forward(x)
    }

    fn generate_target(&self, z: &Tensor) -> Result<Tensor> {
        self.gen_y.forward(z)
    }

    fn encode_target(&self, y: &Tensor) -> Result<Tensor> {
        self.enc_y.forward(y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegPathOptions {
    pub normalize_over_kernels: bool,
    /// Whether the segmentation loss updates the kernel bank.
    pub kernel_gradients: bool,
}

impl Default for SegPathOptions {
    fn default() -> Self {
        Self {
            normalize_over_kernels: true,
            kernel_gradients: true,
        }
    }
}

/// Head probabilities from (unnormalized) target-encoder features.
pub fn segment_features(
    z: &Tensor,
    bank: &KernelBank,
    head: &SegHead,
    opts: SegPathOptions,
) -> Result<Tensor> {
    let z_unit = normalize_features(z)?.values;
    let mu = if opts.kernel_gradients {
        bank.mu().as_tensor().clone()
    } else {
        bank.mu().as_tensor().detach()
    };
    let comp = activations_with(&mu, bank.sigma(), &z_unit, opts.normalize_over_kernels)?;
    head.forward(&comp.activations)
}

/// Dice loss of source labels against predictions made on the source batch
/// after translation into the target domain:
/// `head(kernels(enc_y(gen_y(enc_x(x)))))`.
pub fn seg_training_loss(
    x: &Tensor,
    source_one_hot: &Tensor,
    nets: &impl SegPath,
    bank: &KernelBank,
    head: &SegHead,
    opts: SegPathOptions,
) -> Result<Tensor> {
    let fake_y = nets.generate_target(&nets.encode_source(x)?)?;
    let z = nets.encode_target(&fake_y)?;
    dice_loss(&segment_features(&z, bank, head, opts)?, source_one_hot)
}
