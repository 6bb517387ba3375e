use candle_core::{DType, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anatomy::{argmax_decode, GrayImage, LabelMap, NUM_CLASSES};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{self, Builder, Conv2d, ConvTranspose2d, ParamStore};
use crate::rng;
use crate::spadegan::image_batch;
use crate::vae::stacks_from_logits;

pub const CHECKPOINT_KIND: &str = "segmenter";
const EPS: f64 = 1e-5;
/// Inference batch; fixed so predictions do not depend on split size.
const INFER_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegArch {
    pub height: usize,
    pub width: usize,
    /// Widths after the initial block and the two downsampling stages.
    pub channels: [usize; 3],
    /// Bottleneck residuals per encoder stage.
    pub bottlenecks: usize,
}

impl Default for SegArch {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            channels: [16, 64, 128],
            bottlenecks: 2,
        }
    }
}

impl SegArch {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.channels.iter().any(|&c| c < 4) {
            return Err(Error::invalid("segmenter widths must be at least 4"));
        }
        if self.height % 8 != 0 || self.width % 8 != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid(format!(
                "segmenter input {}x{} is not divisible by 8",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// 1x1 reduce, 3x3 (optionally dilated) conv, 1x1 expand, added to the input.
struct Bottleneck {
    reduce: Conv2d,
    conv: Conv2d,
    expand: Conv2d,
}

impl Bottleneck {
    fn new<R: Rng>(b: &mut Builder<'_, R>, ch: usize, dilation: usize) -> Result<Self> {
        let mid = (ch / 4).max(2);
        let g = 2f64.sqrt();
        Ok(Self {
            reduce: Conv2d::same(&mut b.push("reduce"), ch, mid, 1, g)?,
            conv: Conv2d::new(&mut b.push("conv"), mid, mid, 3, 1, dilation, dilation, g)?,
            expand: Conv2d::same(&mut b.push("expand"), mid, ch, 1, 0.5)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = act(&self.reduce.forward(x)?)?;
        let y = act(&self.conv.forward(&y)?)?;
        let y = nn::instance_norm(&self.expand.forward(&y)?, EPS)?;
        Ok(act(&(x + y)?)?)
    }
}

fn act(x: &Tensor) -> Result<Tensor> {
    Ok(nn::leaky_relu(&nn::instance_norm(x, EPS)?, 0.1)?)
}

/// Compact encoder-decoder in the spirit of ENet: a strided initial block,
/// two downsampling stages of residual bottlenecks (the second dilated), a
/// further dilated stage at the lowest resolution, and a transposed-conv
/// decoder with additive skips.
pub struct Segmenter {
    arch: SegArch,
    store: ParamStore,
    initial: Conv2d,
    down1: Conv2d,
    stage1: Vec<Bottleneck>,
    down2: Conv2d,
    stage2: Vec<Bottleneck>,
    stage3: Vec<Bottleneck>,
    up2: ConvTranspose2d,
    dec2: Bottleneck,
    up1: ConvTranspose2d,
    dec1: Bottleneck,
    head: ConvTranspose2d,
}

impl Segmenter {
    pub fn new(arch: SegArch, seed: u64, dtype: DType) -> Result<Self> {
        Self::build(arch, ParamStore::new(dtype), seed)
    }

    fn build(arch: SegArch, mut store: ParamStore, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut init = rng::stream(seed, "seg/init");
        let mut b = Builder::new(&mut store, &mut init);
        let [c0, c1, c2] = arch.channels;
        let g = 2f64.sqrt();
        let initial = Conv2d::new(&mut b.push("initial"), 1, c0, 3, 2, 1, 1, g)?;
        let down1 = Conv2d::new(&mut b.push("down1"), c0, c1, 3, 2, 1, 1, g)?;
        let stage1 = (0..arch.bottlenecks)
            .map(|i| Bottleneck::new(&mut b.push(&format!("stage1.{i}")), c1, 1))
            .collect::<Result<_>>()?;
        let down2 = Conv2d::new(&mut b.push("down2"), c1, c2, 3, 2, 1, 1, g)?;
        let stage2 = (0..arch.bottlenecks)
            .map(|i| Bottleneck::new(&mut b.push(&format!("stage2.{i}")), c2, 1 << (i % 3)))
            .collect::<Result<_>>()?;
        let stage3 = (0..arch.bottlenecks)
            .map(|i| Bottleneck::new(&mut b.push(&format!("stage3.{i}")), c2, 2 << (i % 3)))
            .collect::<Result<_>>()?;
        let up2 = ConvTranspose2d::new(&mut b.push("up2"), c2, c1, 4, 2, 1, g)?;
        let dec2 = Bottleneck::new(&mut b.push("dec2"), c1, 1)?;
        let up1 = ConvTranspose2d::new(&mut b.push("up1"), c1, c0, 4, 2, 1, g)?;
        let dec1 = Bottleneck::new(&mut b.push("dec1"), c0, 1)?;
        let head = ConvTranspose2d::new(&mut b.push("head"), c0, NUM_CLASSES, 4, 2, 1, 1.0)?;
        Ok(Self {
            arch,
            store,
            initial,
            down1,
            stage1,
            down2,
            stage2,
            stage3,
            up2,
            dec2,
            up1,
            dec1,
            head,
        })
    }

    /// Independent copy with its own parameter storage.
    pub fn duplicate(&self) -> Result<Self> {
        Self::build(self.arch.clone(), self.store.duplicate()?, 0)
    }

    pub fn arch(&self) -> &SegArch {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// `(B, 1, H, W)` images to `(B, 4, H, W)` logits.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = images.dims4()?;
        if c != 1 || (h, w) != (self.arch.height, self.arch.width) {
            return Err(Error::invalid(format!(
                "segmenter expects (B, 1, {}, {}) input, got {:?}",
                self.arch.height,
                self.arch.width,
                images.dims()
            )));
        }
        let x0 = act(&self.initial.forward(images)?)?;
        let mut x1 = act(&self.down1.forward(&x0)?)?;
        for blk in &self.stage1 {
            x1 = blk.forward(&x1)?;
        }
        let mut x2 = act(&self.down2.forward(&x1)?)?;
        for blk in self.stage2.iter().chain(&self.stage3) {
            x2 = blk.forward(&x2)?;
        }
        let y1 = act(&(self.up2.forward(&x2)? + &x1)?)?;
        let y1 = self.dec2.forward(&y1)?;
        let y0 = act(&(self.up1.forward(&y1)? + &x0)?)?;
        let y0 = self.dec1.forward(&y0)?;
        Ok(self.head.forward(&y0)?)
    }

    pub fn predict(&self, images: &[GrayImage]) -> Result<Vec<LabelMap>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFER_BATCH) {
            let logits = self.forward(&image_batch(chunk, self.dtype())?)?;
            for stack in stacks_from_logits(&logits)? {
                out.push(argmax_decode(&stack)?);
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        let mut meta = meta;
        if !meta.is_object() {
            meta = serde_json::json!({});
        }
        meta["arch"] = serde_json::to_value(&self.arch)?;
        meta["num_classes"] = NUM_CLASSES.into();
        Ok(Checkpoint {
            kind: CHECKPOINT_KIND.to_string(),
            meta,
            arrays: self.store.to_arrays()?,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, dtype: DType) -> Result<Self> {
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let arch: SegArch = ckpt.meta_field("arch")?;
        let store = ParamStore::from_arrays(&ckpt.arrays, dtype)?;
        let expected: Vec<String> = Self::new(arch.clone(), 0, dtype)?.store.names().map(String::from).collect();
        let found: Vec<String> = store.names().map(String::from).collect();
        if expected != found {
            return Err(Error::invalid("checkpoint arrays do not match the segmenter architecture"));
        }
        Self::build(arch, store, 0)
    }
}
