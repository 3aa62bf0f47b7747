//! Joint optimization of translation, kernels and head; supervised
//! baselines; validation, cross-validation and checkpoints.
//!
//! One training step in [`Mode::Proposed`]:
//! 1. a shared forward pass through both translation cycles;
//! 2. a discriminator update on real images against detached fakes;
//! 3. a joint update of encoders, generators, kernels and head on
//!    `λ_cycle·cycle + λ_gen·(gen_x + gen_y) + λ_vmf·cluster + λ_seg·dice`,
//!    with the adversarial terms scored by the freshly updated discriminators;
//! 4. kernel rows projected back onto the unit sphere.

mod checkpoint;
mod config;
mod cv;

use candle_core::{Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baseline::UNetSegmenter;
use crate::data::{Image, Sample};
use crate::error::{Error, Result};
use crate::nn::{images_to_tensor, masks_to_one_hot, scalar, Adam};
use crate::seg::{dice_loss, segment_features, SegHead, SegPathOptions};
use crate::translation::{disc_loss, gen_loss, CycleLoss, TranslationNets, DOWNSAMPLING_FACTOR};
use crate::vmf::{activations, cluster_loss, normalize_features, CompositionMap, KernelBank};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, LoadedCheckpoint, TensorEntry};
pub use config::{Mode, TrainConfig};
pub use cv::{
    evaluate, fold_data, run_cross_validation, run_fold, train_epoch, validate, CvOutcome, Dataset,
    EpochLog, FoldData, FoldOutcome, Validation, LOG_HEADER, validation_score,
};

/// Translation networks, kernel bank and segmentation head.
#[derive(Clone)]
pub struct ProposedModel {
    pub nets: TranslationNets,
    pub bank: KernelBank,
    pub head: SegHead,
    /// Whether the head sees kernel-normalized activations.
    pub normalize_over_kernels: bool,
}

#[derive(Clone)]
#[allow(clippy::large_enum_variant)] // built once per run, never moved in bulk
pub enum Model {
    Proposed(ProposedModel),
    Baseline(UNetSegmenter),
}

impl Model {
    pub fn new(cfg: &TrainConfig, image_size: (usize, usize), num_classes: u8, rng: &mut ChaCha8Rng) -> Result<Self> {
        let dtype = cfg.dtype();
        Ok(match cfg.mode {
            Mode::Proposed => {
                let nets = TranslationNets::new(cfg.arch(), image_size, rng, dtype)?;
                let bank = KernelBank::new(cfg.num_kernels, cfg.feature_channels, cfg.sigma, rng, dtype)?;
                let up_stages = DOWNSAMPLING_FACTOR.trailing_zeros() as usize;
                let head = SegHead::new(cfg.num_kernels, cfg.head_width, num_classes, up_stages, rng, dtype)?;
                Model::Proposed(ProposedModel {
                    nets,
                    bank,
                    head,
                    normalize_over_kernels: cfg.normalize_over_kernels,
                })
            }
            Mode::BaselineFs | Mode::BaselineNa => {
                Model::Baseline(UNetSegmenter::new(cfg.unet_width, num_classes, rng, dtype)?)
            }
        })
    }

    /// Parameters updated by the main optimizer (everything but the
    /// discriminators).
    pub fn main_params(&self) -> Vec<(String, Var)> {
        match self {
            Model::Proposed(m) => m
                .nets
                .generator_side()
                .into_iter()
                .chain([m.bank.params(), m.head.params()])
                .flat_map(|s| s.named().iter().cloned())
                .collect(),
            Model::Baseline(u) => u.params().named().to_vec(),
        }
    }

    pub fn disc_params(&self) -> Vec<(String, Var)> {
        match self {
            Model::Proposed(m) => m
                .nets
                .discriminators()
                .into_iter()
                .flat_map(|s| s.named().iter().cloned())
                .collect(),
            Model::Baseline(_) => Vec::new(),
        }
    }

    pub fn named_params(&self) -> Vec<(String, Var)> {
        let mut all = self.main_params();
        all.extend(self.disc_params());
        all
    }

    /// Class probabilities `(B, K+1, H, W)` for target-domain images.
    pub fn predict(&self, y: &Tensor) -> Result<Tensor> {
        match self {
            Model::Proposed(m) => {
                let z = m.nets.enc_y.forward(y)?;
                let opts = SegPathOptions {
                    normalize_over_kernels: m.normalize_over_kernels,
                    kernel_gradients: false,
                };
                segment_features(&z, &m.bank, &m.head, opts)
            }
            Model::Baseline(u) => u.forward(y),
        }
    }

    /// Kernel activations of target-domain images; `None` for baselines.
    pub fn composition(&self, y: &Tensor, normalize_over_kernels: bool) -> Result<Option<CompositionMap>> {
        match self {
            Model::Proposed(m) => {
                let z = normalize_features(&m.nets.enc_y.forward(y)?)?.values;
                Ok(Some(activations(&m.bank, &z, normalize_over_kernels)?))
            }
            Model::Baseline(_) => Ok(None),
        }
    }

    pub fn snapshot(&self) -> Result<Vec<Tensor>> {
        self.named_params().iter().map(|(_, v)| Ok(v.as_tensor().copy()?)).collect()
    }

    pub fn restore(&self, values: &[Tensor]) -> Result<()> {
        for ((_, v), t) in self.named_params().iter().zip(values) {
            v.set(t)?;
        }
        Ok(())
    }
}

/// Mean loss terms of one step (or averaged over an epoch). Terms a mode
/// does not use stay 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub cycle: f64,
    pub gen_x: f64,
    pub gen_y: f64,
    pub disc_x: f64,
    pub disc_y: f64,
    pub vmf: f64,
    pub seg: f64,
    /// Weighted objective of the main (non-discriminator) update.
    pub total: f64,
}

impl LossReport {
    pub(crate) fn accumulate(&mut self, other: &LossReport) {
        self.cycle += other.cycle;
        self.gen_x += other.gen_x;
        self.gen_y += other.gen_y;
        self.disc_x += other.disc_x;
        self.disc_y += other.disc_y;
        self.vmf += other.vmf;
        self.seg += other.seg;
        self.total += other.total;
    }

    pub(crate) fn scaled(&self, s: f64) -> LossReport {
        LossReport {
            cycle: self.cycle * s,
            gen_x: self.gen_x * s,
            gen_y: self.gen_y * s,
            disc_x: self.disc_x * s,
            disc_y: self.disc_y * s,
            vmf: self.vmf * s,
            seg: self.seg * s,
            total: self.total * s,
        }
    }
}

/// Everything that evolves during training.
pub struct TrainState {
    pub cfg: TrainConfig,
    pub image_size: (usize, usize),
    pub class_names: Vec<String>,
    pub model: Model,
    pub(crate) opt_main: Adam,
    pub(crate) opt_disc: Adam,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
}

impl TrainState {
    /// Parameters are drawn from `cfg.seed` on RNG stream `stream`; the same
    /// generator then drives shuffling.
    pub fn new(cfg: TrainConfig, image_size: (usize, usize), class_names: Vec<String>, stream: u64) -> Result<Self> {
        cfg.validate()?;
        let num_classes = u8::try_from(class_names.len())
            .ok()
            .filter(|&k| k > 0)
            .ok_or_else(|| Error::Config(format!("need 1..=255 classes, got {}", class_names.len())))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let model = Model::new(&cfg, image_size, num_classes, &mut rng)?;
        let opt_main = Adam::new(model.main_params(), cfg.adam())?;
        let opt_disc = Adam::new(model.disc_params(), cfg.adam())?;
        Ok(Self {
            cfg,
            image_size,
            class_names,
            model,
            opt_main,
            opt_disc,
            rng,
            epoch: 0,
        })
    }

    pub fn num_classes(&self) -> u8 {
        self.class_names.len() as u8
    }

    pub fn optimizer_steps(&self) -> (u64, u64) {
        (self.opt_main.steps_taken(), self.opt_disc.steps_taken())
    }

    fn seg_options(&self) -> SegPathOptions {
        SegPathOptions {
            normalize_over_kernels: self.cfg.normalize_over_kernels,
            kernel_gradients: self.cfg.kernel_gradients,
        }
    }
}

fn finite(term: &'static str, t: &Tensor) -> Result<f64> {
    let v = scalar(t)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term, value: v })
    }
}

/// One optimization step. `labelled` carries images with masks (source
/// images, or target images for [`Mode::BaselineFs`]); `unlabelled` are
/// target-domain images and are only used in [`Mode::Proposed`].
pub fn train_step(state: &mut TrainState, labelled: &[&Sample], unlabelled: &[&Image]) -> Result<LossReport> {
    let dtype = state.cfg.dtype();
    let k = state.num_classes();
    let images: Vec<&Image> = labelled.iter().map(|s| &s.image).collect();
    let masks = labelled
        .iter()
        .map(|s| {
            s.mask.as_ref().ok_or_else(|| Error::MissingMask {
                id: s.id().to_string(),
                path: std::path::PathBuf::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let x = images_to_tensor(&images, dtype)?;
    let onehot = masks_to_one_hot(&masks, k, dtype)?;
    let cfg = state.cfg.clone();
    let opts = state.seg_options();

    match &state.model {
        Model::Baseline(unet) => {
            let seg = dice_loss(&unet.forward(&x)?, &onehot)?;
            let seg_v = finite("seg", &seg)?;
            state.opt_main.step(&seg.backward()?)?;
            Ok(LossReport {
                seg: seg_v,
                total: seg_v,
                ..Default::default()
            })
        }
        Model::Proposed(m) => {
            let y = images_to_tensor(unlabelled, dtype)?;
            let nets = &m.nets;
            let fwd = nets.cycle_forward(&x, &y)?;

            let dx = disc_loss(&nets.disc_x.forward(&x)?, &nets.disc_x.forward(&fwd.fake_x.detach())?)?;
            let dy = disc_loss(&nets.disc_y.forward(&y)?, &nets.disc_y.forward(&fwd.fake_y.detach())?)?;
            let disc_x = finite("disc_x", &dx)?;
            let disc_y = finite("disc_y", &dy)?;
            let d_total = ((dx + dy)? * cfg.lambda_disc)?;
            state.opt_disc.step(&d_total.backward()?)?;

            let cyc = CycleLoss::from_forward(&fwd, &x, &y)?.total()?;
            let gx = gen_loss(&nets.disc_x.forward(&fwd.fake_x)?)?;
            let gy = gen_loss(&nets.disc_y.forward(&fwd.fake_y)?)?;
            let vmf = cluster_loss(&m.bank, &normalize_features(&fwd.z_y)?.values)?;
            let seg = dice_loss(&segment_features(&fwd.z_fake_y, &m.bank, &m.head, opts)?, &onehot)?;
            let report = LossReport {
                cycle: finite("cycle", &cyc)?,
                gen_x: finite("gen_x", &gx)?,
                gen_y: finite("gen_y", &gy)?,
                disc_x,
                disc_y,
                vmf: finite("vmf", &vmf)?,
                seg: finite("seg", &seg)?,
                total: 0.0,
            };
            let total = ((((cyc * cfg.lambda_cycle)? + ((gx + gy)? * cfg.lambda_gen)?)?
                + (vmf * cfg.lambda_vmf)?)?
                + (seg * cfg.lambda_seg)?)?;
            let total_v = finite("total", &total)?;
            let grads = total.backward()?;
            state.opt_main.step(&grads)?;
            m.bank.renormalize()?;
            Ok(LossReport {
                total: total_v,
                ..report
            })
        }
    }
}
