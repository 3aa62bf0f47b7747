//! Plain two-level encoder-decoder with skip connections, used for the
//! supervised upper bound (trained on target labels) and the no-adaptation
//! lower bound (trained on source labels, tested on target images).

use candle_core::{DType, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{instance_norm, leaky_relu, softmax, upsample2x, Conv2d, ParamBuilder, ParamStore};

#[derive(Clone)]
struct DoubleConv {
    a: Conv2d,
    b: Conv2d,
}

impl DoubleConv {
    fn new(pb: &mut ParamBuilder, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            a: Conv2d::new(&mut pb.pp("a"), cin, cout, 3, 1, 1)?,
            b: Conv2d::new(&mut pb.pp("b"), cout, cout, 3, 1, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = leaky_relu(&instance_norm(&self.a.forward(x)?)?)?;
        leaky_relu(&instance_norm(&self.b.forward(&h)?)?)
    }
}

#[derive(Clone)]
pub struct UNetSegmenter {
    params: ParamStore,
    num_classes: u8,
    enc1: DoubleConv,
    down1: Conv2d,
    enc2: DoubleConv,
    down2: Conv2d,
    bottleneck: DoubleConv,
    dec2: DoubleConv,
    dec1: DoubleConv,
    out: Conv2d,
}

impl UNetSegmenter {
    pub fn new(width: usize, num_classes: u8, rng: &mut ChaCha8Rng, dtype: DType) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut root = ParamBuilder::new(&mut params, rng, dtype);
        let mut pb = root.pp("unet");
        let w = width;
        Ok(Self {
            enc1: DoubleConv::new(&mut pb.pp("enc1"), 1, w)?,
            down1: Conv2d::new(&mut pb.pp("down1"), w, w, 3, 2, 1)?,
            enc2: DoubleConv::new(&mut pb.pp("enc2"), w, 2 * w)?,
            down2: Conv2d::new(&mut pb.pp("down2"), 2 * w, 2 * w, 3, 2, 1)?,
            bottleneck: DoubleConv::new(&mut pb.pp("bottleneck"), 2 * w, 4 * w)?,
            dec2: DoubleConv::new(&mut pb.pp("dec2"), 6 * w, 2 * w)?,
            dec1: DoubleConv::new(&mut pb.pp("dec1"), 3 * w, w)?,
            out: Conv2d::new(&mut pb.pp("out"), w, num_classes as usize + 1, 1, 1, 0)?,
            num_classes,
            params,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn num_classes(&self) -> u8 {
        self.num_classes
    }

    /// `(B, 1, H, W)` images to `(B, K+1, H, W)` class probabilities.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let e1 = self.enc1.forward(x)?;
        let e2 = self.enc2.forward(&leaky_relu(&self.down1.forward(&e1)?)?)?;
        let b = self.bottleneck.forward(&leaky_relu(&self.down2.forward(&e2)?)?)?;
        let d2 = self.dec2.forward(&Tensor::cat(&[&upsample2x(&b)?, &e2], 1)?)?;
        let d1 = self.dec1.forward(&Tensor::cat(&[&upsample2x(&d2)?, &e1], 1)?)?;
        softmax(&self.out.forward(&d1)?, 1)
    }
}
