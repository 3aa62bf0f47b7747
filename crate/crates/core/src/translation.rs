//! Domain-specific encoders, generators and patch discriminators, with the
//! cross-cycle L1 objective and least-squares adversarial objectives.
//!
//! Naming follows the domain an image *belongs to*: `enc_x`/`gen_x`/`disc_x`
//! act on or produce source-domain images, the `_y` networks the target
//! domain. A source image is translated with `gen_y(enc_x(x))`.

use candle_core::{DType, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::data::{Domain, Image, Spacing};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nn::{
    images_to_tensor, instance_norm, l1_loss, leaky_relu, upsample2x, Conv2d, ParamBuilder,
    ParamStore,
};

/// Spatial reduction from image to feature grid (two stride-2 stages).
pub const DOWNSAMPLING_FACTOR: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TranslationArch {
    /// Stem width; the first downsampling stage doubles it.
    pub base_width: usize,
    /// Channels of the deep feature grid.
    pub feature_channels: usize,
    pub encoder_res_blocks: usize,
    pub generator_res_blocks: usize,
    pub disc_width: usize,
    /// How many of the first three discriminator layers use stride 2.
    pub disc_strided_layers: usize,
}

impl Default for TranslationArch {
    fn default() -> Self {
        Self {
            base_width: 32,
            feature_channels: 64,
            encoder_res_blocks: 4,
            generator_res_blocks: 4,
            disc_width: 64,
            disc_strided_layers: 3,
        }
    }
}

#[derive(Clone)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResBlock {
    fn new(pb: &mut ParamBuilder, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(&mut pb.pp("conv1"), channels, channels, 3, 1, 1)?,
            conv2: Conv2d::new(&mut pb.pp("conv2"), channels, channels, 3, 1, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = leaky_relu(&instance_norm(&self.conv1.forward(x)?)?)?;
        let h = instance_norm(&self.conv2.forward(&h)?)?;
        Ok((x + h)?)
    }
}

fn conv_in_act(conv: &Conv2d, x: &Tensor) -> Result<Tensor> {
    leaky_relu(&instance_norm(&conv.forward(x)?)?)
}

#[derive(Clone)]
pub struct Encoder {
    params: ParamStore,
    stem: Conv2d,
    down: [Conv2d; 2],
    res: Vec<ResBlock>,
}

impl Encoder {
    pub fn new(name: &str, arch: &TranslationArch, rng: &mut ChaCha8Rng, dtype: DType) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut root = ParamBuilder::new(&mut params, rng, dtype);
        let mut pb = root.pp(name);
        let w = arch.base_width;
        let stem = Conv2d::new(&mut pb.pp("stem"), 1, w, 3, 1, 1)?;
        let down = [
            Conv2d::new(&mut pb.pp("down1"), w, 2 * w, 3, 2, 1)?,
            Conv2d::new(&mut pb.pp("down2"), 2 * w, arch.feature_channels, 3, 2, 1)?,
        ];
        let res = (0..arch.encoder_res_blocks)
            .map(|i| ResBlock::new(&mut pb.pp(&format!("res{i}")), arch.feature_channels))
            .collect::<Result<_>>()?;
        Ok(Self {
            params,
            stem,
            down,
            res,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `(B, 1, H, W)` images to `(B, C_z, H/4, W/4)` features.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 || h % DOWNSAMPLING_FACTOR != 0 || w % DOWNSAMPLING_FACTOR != 0 {
            return Err(Error::Shape(format!(
                "encoder expects (B, 1, H, W) with H, W divisible by {DOWNSAMPLING_FACTOR}, got {:?}",
                x.dims()
            )));
        }
        let mut h = conv_in_act(&self.stem, x)?;
        for d in &self.down {
            h = conv_in_act(d, &h)?;
        }
        for r in &self.res {
            h = r.forward(&h)?;
        }
        Ok(h)
    }
}

#[derive(Clone)]
pub struct Generator {
    params: ParamStore,
    res: Vec<ResBlock>,
    up: [Conv2d; 2],
    out: Conv2d,
}

impl Generator {
    pub fn new(name: &str, arch: &TranslationArch, rng: &mut ChaCha8Rng, dtype: DType) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut root = ParamBuilder::new(&mut params, rng, dtype);
        let mut pb = root.pp(name);
        let w = arch.base_width;
        let res = (0..arch.generator_res_blocks)
            .map(|i| ResBlock::new(&mut pb.pp(&format!("res{i}")), arch.feature_channels))
            .collect::<Result<_>>()?;
        let up = [
            Conv2d::new(&mut pb.pp("up1"), arch.feature_channels, 2 * w, 3, 1, 1)?,
            Conv2d::new(&mut pb.pp("up2"), 2 * w, w, 3, 1, 1)?,
        ];
        let out = Conv2d::new(&mut pb.pp("out"), w, 1, 3, 1, 1)?;
        Ok(Self {
            params,
            res,
            up,
            out,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `(B, C_z, h, w)` features to `(B, 1, 4h, 4w)` images in [-1, 1].
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = z.clone();
        for r in &self.res {
            h = r.forward(&h)?;
        }
        for u in &self.up {
            h = conv_in_act(u, &upsample2x(&h)?)?;
        }
        Ok(self.out.forward(&h)?.tanh()?)
    }
}

/// Patch discriminator producing a least-squares score map.
#[derive(Clone)]
pub struct Discriminator {
    params: ParamStore,
    layers: Vec<Conv2d>,
}

impl Discriminator {
    pub fn new(name: &str, arch: &TranslationArch, rng: &mut ChaCha8Rng, dtype: DType) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut root = ParamBuilder::new(&mut params, rng, dtype);
        let mut pb = root.pp(name);
        let dw = arch.disc_width;
        let widths = [1, dw, 2 * dw, 4 * dw];
        let mut layers = Vec::with_capacity(4);
        for i in 0..3 {
            let strided = i < arch.disc_strided_layers;
            let (k, s) = if strided { (4, 2) } else { (3, 1) };
            layers.push(Conv2d::new(
                &mut pb.pp(&format!("layer{i}")),
                widths[i],
                widths[i + 1],
                k,
                s,
                1,
            )?);
        }
        layers.push(Conv2d::new(&mut pb.pp("score"), 4 * dw, 1, 3, 1, 1)?);
        Ok(Self { params, layers })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = leaky_relu(&self.layers[0].forward(x)?)?;
        for l in &self.layers[1..3] {
            h = conv_in_act(l, &h)?;
        }
        self.layers[3].forward(&h)
    }
}

/// Deep features of one image, `C_z × H_z × W_z`.
#[derive(Clone, Debug)]
pub struct FeatureGrid {
    pub values: Tensor,
    pub domain: Domain,
    pub spacing: Spacing,
}

/// Maps batches across domains: encoder of one domain, generator of the other.
pub trait CrossDomain {
    fn source_to_target(&self, x: &Tensor) -> Result<Tensor>;
    fn target_to_source(&self, y: &Tensor) -> Result<Tensor>;
}

#[derive(Clone)]
pub struct TranslationNets {
    pub arch: TranslationArch,
    pub image_size: (usize, usize),
    pub enc_x: Encoder,
    pub enc_y: Encoder,
    pub gen_x: Generator,
    pub gen_y: Generator,
    pub disc_x: Discriminator,
    pub disc_y: Discriminator,
}

impl TranslationNets {
    pub fn new(
        arch: TranslationArch,
        image_size: (usize, usize),
        rng: &mut ChaCha8Rng,
        dtype: DType,
    ) -> Result<Self> {
        if !image_size.0.is_multiple_of(DOWNSAMPLING_FACTOR) || !image_size.1.is_multiple_of(DOWNSAMPLING_FACTOR) {
            return Err(Error::Shape(format!(
                "image size {image_size:?} not divisible by {DOWNSAMPLING_FACTOR}"
            )));
        }
        Ok(Self {
            arch,
            image_size,
            enc_x: Encoder::new("enc_x", &arch, rng, dtype)?,
            enc_y: Encoder::new("enc_y", &arch, rng, dtype)?,
            gen_x: Generator::new("gen_x", &arch, rng, dtype)?,
            gen_y: Generator::new("gen_y", &arch, rng, dtype)?,
            disc_x: Discriminator::new("disc_x", &arch, rng, dtype)?,
            disc_y: Discriminator::new("disc_y", &arch, rng, dtype)?,
        })
    }

    pub fn feature_dims(&self) -> (usize, usize, usize) {
        (
            self.arch.feature_channels,
            self.image_size.0 / DOWNSAMPLING_FACTOR,
            self.image_size.1 / DOWNSAMPLING_FACTOR,
        )
    }

    pub fn encoder(&self, domain: Domain) -> &Encoder {
        match domain {
            Domain::Source => &self.enc_x,
            Domain::Target => &self.enc_y,
        }
    }

    pub fn generator(&self, domain: Domain) -> &Generator {
        match domain {
            Domain::Source => &self.gen_x,
            Domain::Target => &self.gen_y,
        }
    }

    /// Encoder and generator parameters.
    pub fn generator_side(&self) -> Vec<&ParamStore> {
        vec![
            self.enc_x.params(),
            self.enc_y.params(),
            self.gen_x.params(),
            self.gen_y.params(),
        ]
    }

    pub fn discriminators(&self) -> Vec<&ParamStore> {
        vec![self.disc_x.params(), self.disc_y.params()]
    }

    /// Encodes one image with the encoder of the image's own domain.
    pub fn encode(&self, img: &Image) -> Result<FeatureGrid> {
        if img.dims() != self.image_size {
            return Err(Error::Shape(format!(
                "image {} is {:?}, networks expect {:?}",
                img.id,
                img.dims(),
                self.image_size
            )));
        }
        let dtype = self.enc_x.params().named()[0].1.dtype();
        let x = images_to_tensor(&[img], dtype)?;
        let z = self.encoder(img.domain).forward(&x)?.squeeze(0)?;
        Ok(FeatureGrid {
            values: z,
            domain: img.domain,
            spacing: img.spacing,
        })
    }

    /// Renders features into the *other* domain's appearance.
    pub fn generate(&self, z: &FeatureGrid, id: &str) -> Result<Image> {
        let expected = self.feature_dims();
        if z.values.dims3()? != expected {
            return Err(Error::Shape(format!(
                "feature grid {:?}, generator expects {expected:?}",
                z.values.dims()
            )));
        }
        let domain = z.domain.other();
        let img = self.generator(domain).forward(&z.values.unsqueeze(0)?)?;
        let (h, w) = self.image_size;
        let pixels = img.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
        Ok(Image {
            id: id.to_string(),
            domain,
            spacing: z.spacing,
            pixels: Grid::from_vec(h, w, pixels)?,
        })
    }

    /// All intermediate tensors of both translation cycles.
    pub fn cycle_forward(&self, x: &Tensor, y: &Tensor) -> Result<CycleForward> {
        let z_x = self.enc_x.forward(x)?;
        let fake_y = self.gen_y.forward(&z_x)?;
        let z_fake_y = self.enc_y.forward(&fake_y)?;
        let rec_x = self.gen_x.forward(&z_fake_y)?;
        let z_y = self.enc_y.forward(y)?;
        let fake_x = self.gen_x.forward(&z_y)?;
        let z_fake_x = self.enc_x.forward(&fake_x)?;
        let rec_y = self.gen_y.forward(&z_fake_x)?;
        Ok(CycleForward {
            z_x,
            fake_y,
            z_fake_y,
            rec_x,
            z_y,
            fake_x,
            z_fake_x,
            rec_y,
        })
    }
}

impl CrossDomain for TranslationNets {
    fn source_to_target(&self, x: &Tensor) -> Result<Tensor> {
        self.gen_y.forward(&self.enc_x.forward(x)?)
    }

    fn target_to_source(&self, y: &Tensor) -> Result<Tensor> {
        self.gen_x.forward(&self.enc_y.forward(y)?)
    }
}

pub struct CycleForward {
    pub z_x: Tensor,
    pub fake_y: Tensor,
    /// `enc_y(gen_y(enc_x(x)))`: features the segmentation path consumes.
    pub z_fake_y: Tensor,
    pub rec_x: Tensor,
    pub z_y: Tensor,
    pub fake_x: Tensor,
    pub z_fake_x: Tensor,
    pub rec_y: Tensor,
}

/// Per-direction cycle terms.
pub struct CycleLoss {
    pub source: Tensor,
    pub target: Tensor,
}

impl CycleLoss {
    pub fn from_forward(fwd: &CycleForward, x: &Tensor, y: &Tensor) -> Result<Self> {
        Ok(Self {
            source: l1_loss(&fwd.rec_x, x)?,
            target: l1_loss(&fwd.rec_y, y)?,
        })
    }

    pub fn total(&self) -> Result<Tensor> {
        Ok((&self.source + &self.target)?)
    }
}

/// Mean L1 error of translating to the other domain and back, both ways.
pub fn cycle_loss(x: &Tensor, y: &Tensor, map: &impl CrossDomain) -> Result<CycleLoss> {
    let rec_x = map.target_to_source(&map.source_to_target(x)?)?;
    let rec_y = map.source_to_target(&map.target_to_source(y)?)?;
    Ok(CycleLoss {
        source: l1_loss(&rec_x, x)?,
        target: l1_loss(&rec_y, y)?,
    })
}

/// Least-squares generator objective: `½·mean((s − 1)²)`.
pub fn gen_loss(fake_scores: &Tensor) -> Result<Tensor> {
    Ok(((fake_scores - 1.0)?.sqr()?.mean_all()? * 0.5)?)
}

/// Least-squares discriminator objective: `½·mean((r − 1)²) + ½·mean(f²)`.
pub fn disc_loss(real_scores: &Tensor, fake_scores: &Tensor) -> Result<Tensor> {
    let real = ((real_scores - 1.0)?.sqr()?.mean_all()? * 0.5)?;
    let fake = (fake_scores.sqr()?.mean_all()? * 0.5)?;
    Ok((real + fake)?)
}
