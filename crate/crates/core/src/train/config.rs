//! Training configuration and its flat `key = value` text form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Connectivity;
use crate::nn::AdamConfig;
use crate::translation::TranslationArch;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Translation, kernels and head trained jointly; no target labels.
    #[default]
    Proposed,
    /// Plain segmenter trained on labelled target images.
    BaselineFs,
    /// Plain segmenter trained on source images, applied to the target.
    BaselineNa,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Proposed, Mode::BaselineFs, Mode::BaselineNa];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Proposed => "proposed",
            Mode::BaselineFs => "baseline-fs",
            Mode::BaselineNa => "baseline-na",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}` (proposed|baseline-fs|baseline-na)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub num_folds: usize,
    pub val_fraction: f64,

    pub lambda_cycle: f64,
    pub lambda_gen: f64,
    pub lambda_disc: f64,
    pub lambda_vmf: f64,
    pub lambda_seg: f64,
    /// Weight of the cycle error in the validation score.
    pub omega: f64,

    pub num_kernels: usize,
    pub sigma: f64,
    pub normalize_over_kernels: bool,
    /// Whether the segmentation loss updates the kernels.
    pub kernel_gradients: bool,

    pub base_width: usize,
    pub feature_channels: usize,
    pub encoder_res_blocks: usize,
    pub generator_res_blocks: usize,
    pub disc_width: usize,
    pub disc_strided_layers: usize,
    pub head_width: usize,
    pub unet_width: usize,

    /// Random horizontal flips of training batches.
    pub augment_flip: bool,
    pub double_precision: bool,
    pub eight_connectivity: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = TranslationArch::default();
        Self {
            mode: Mode::Proposed,
            seed: 0,
            epochs: 200,
            batch_size: 4,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            num_folds: 5,
            val_fraction: crate::data::DEFAULT_VAL_FRACTION,
            lambda_cycle: 10.0,
            lambda_gen: 1.0,
            lambda_disc: 1.0,
            lambda_vmf: 1.0,
            lambda_seg: 5.0,
            omega: 0.1,
            num_kernels: crate::vmf::DEFAULT_NUM_KERNELS,
            sigma: crate::vmf::DEFAULT_SIGMA,
            normalize_over_kernels: true,
            kernel_gradients: true,
            base_width: arch.base_width,
            feature_channels: arch.feature_channels,
            encoder_res_blocks: arch.encoder_res_blocks,
            generator_res_blocks: arch.generator_res_blocks,
            disc_width: arch.disc_width,
            disc_strided_layers: arch.disc_strided_layers,
            head_width: 32,
            unet_width: 32,
            augment_flip: false,
            double_precision: false,
            eight_connectivity: false,
        }
    }
}

macro_rules! config_keys {
    ($($key:ident),* $(,)?) => {
        const KEYS: &[&str] = &[$(stringify!($key)),*];

        impl TrainConfig {
            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => {
                        self.$key = value.parse().map_err(|_| {
                            Error::Config(format!("invalid value `{value}` for `{key}`"))
                        })?;
                    })*
                    _ => {
                        return Err(Error::Config(format!(
                            "unknown key `{key}`; known keys: {}",
                            KEYS.join(", ")
                        )))
                    }
                }
                Ok(())
            }

            /// One `key = value` line per field, in declaration order.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(out.push_str(&format!("{} = {}\n", stringify!($key), self.$key));)*
                out
            }
        }
    };
}

config_keys!(
    mode,
    seed,
    epochs,
    batch_size,
    lr,
    beta1,
    beta2,
    adam_eps,
    num_folds,
    val_fraction,
    lambda_cycle,
    lambda_gen,
    lambda_disc,
    lambda_vmf,
    lambda_seg,
    omega,
    num_kernels,
    sigma,
    normalize_over_kernels,
    kernel_gradients,
    base_width,
    feature_channels,
    encoder_res_blocks,
    generator_res_blocks,
    disc_width,
    disc_strided_layers,
    head_width,
    unet_width,
    augment_flip,
    double_precision,
    eight_connectivity,
);

impl TrainConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        let weights = [
            ("lambda_cycle", self.lambda_cycle),
            ("lambda_gen", self.lambda_gen),
            ("lambda_disc", self.lambda_disc),
            ("lambda_vmf", self.lambda_vmf),
            ("lambda_seg", self.lambda_seg),
            ("omega", self.omega),
        ];
        if let Some((name, w)) = weights.iter().find(|(_, w)| !(*w >= 0.0 && w.is_finite())) {
            return bad(format!("{name} must be non-negative, got {w}"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("num_kernels", self.num_kernels),
            ("base_width", self.base_width),
            ("feature_channels", self.feature_channels),
            ("disc_width", self.disc_width),
            ("head_width", self.head_width),
            ("unet_width", self.unet_width),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be at least 1"));
        }
        if self.num_folds < 2 {
            return bad(format!("num_folds must be at least 2, got {}", self.num_folds));
        }
        if self.disc_strided_layers > 3 {
            return bad(format!("disc_strided_layers must be at most 3, got {}", self.disc_strided_layers));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }

    pub fn arch(&self) -> TranslationArch {
        TranslationArch {
            base_width: self.base_width,
            feature_channels: self.feature_channels,
            encoder_res_blocks: self.encoder_res_blocks,
            generator_res_blocks: self.generator_res_blocks,
            disc_width: self.disc_width,
            disc_strided_layers: self.disc_strided_layers,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn dtype(&self) -> DType {
        if self.double_precision {
            DType::F64
        } else {
            DType::F32
        }
    }

    pub fn connectivity(&self) -> Connectivity {
        if self.eight_connectivity {
            Connectivity::Eight
        } else {
            Connectivity::Four
        }
    }

    /// Keys that change parameter shapes; checkpoints must agree on them.
    pub fn architecture_summary(&self) -> String {
        format!(
            "mode={} kernels={} widths={}/{}/{}/{}/{} blocks={}/{} disc_strided={}",
            self.mode,
            self.num_kernels,
            self.base_width,
            self.feature_channels,
            self.disc_width,
            self.head_width,
            self.unet_width,
            self.encoder_res_blocks,
            self.generator_res_blocks,
            self.disc_strided_layers
        )
    }
}
