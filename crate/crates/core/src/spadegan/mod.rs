//! Label-conditioned image synthesis: a style encoder, a generator whose
//! normalization layers are modulated per pixel by the one-hot label map, and
//! a multiscale patch discriminator that sees the image concatenated with the
//! same map.

mod train;

pub use train::{history_csv, train_gan, GanEpoch, GanTrainConfig};

use candle_core::{DType, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anatomy::{GrayImage, LabelMap, NUM_CLASSES};
use crate::checkpoint::Checkpoint;
use crate::error::{ensure_finite, Error, Result};
use crate::nn::{self, Builder, Conv2d, Init, Linear, ParamStore};
use crate::rng;
use crate::vae::onehot_batch;

pub const CHECKPOINT_KIND: &str = "spade-gan";
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanArch {
    pub height: usize,
    pub width: usize,
    pub style_dim: usize,
    /// Output channels of each upsampling block; its length is the depth K.
    pub gen_channels: Vec<usize>,
    pub spade_hidden: usize,
    pub spade_kernel: usize,
    /// Stride-2 conv widths of the style encoder.
    pub style_channels: Vec<usize>,
    /// Width of the first discriminator layer; later layers double it.
    pub disc_channels: usize,
    pub disc_scales: usize,
}

impl Default for GanArch {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            style_dim: 64,
            gen_channels: vec![256, 128, 64, 32],
            spade_hidden: 64,
            spade_kernel: 3,
            style_channels: vec![32, 64, 128, 256],
            disc_channels: 64,
            disc_scales: 2,
        }
    }
}

impl GanArch {
    pub fn depth(&self) -> usize {
        self.gen_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.depth();
        if k == 0 || self.gen_channels.contains(&0) || self.style_channels.contains(&0) {
            return Err(Error::invalid("GAN channel lists must be non-empty and positive"));
        }
        if self.style_dim == 0 || self.spade_hidden == 0 || self.disc_channels == 0 || self.disc_scales == 0 {
            return Err(Error::invalid("GAN widths and scale count must be positive"));
        }
        if self.spade_kernel % 2 == 0 {
            return Err(Error::invalid("spade_kernel must be odd"));
        }
        let f = 1usize << k;
        if self.height % f != 0 || self.width % f != 0 {
            return Err(Error::invalid(format!(
                "resolution {}x{} is not divisible by 2^{k}",
                self.height, self.width
            )));
        }
        let fs = 1usize << self.style_channels.len();
        if self.height % fs != 0 || self.width % fs != 0 {
            return Err(Error::invalid("resolution is not divisible by the style encoder's stride"));
        }
        // Two stride-2 layers per discriminator scale plus 2x pooling between scales.
        let fd = 1usize << (self.disc_scales + 1);
        if self.height % fd != 0 || self.width % fd != 0 {
            return Err(Error::invalid("resolution too small for the discriminator scales"));
        }
        Ok(())
    }
}

/// Spatially-adaptive normalization: per-sample standardization of each
/// channel, then a per-pixel scale and shift predicted from the label map.
pub struct Spade {
    shared: Conv2d,
    gamma: Conv2d,
    beta: Conv2d,
    channels: usize,
    eps: f64,
}

impl Spade {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, channels: usize, hidden: usize, kernel: usize, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::invalid("normalization eps must be positive"));
        }
        let shared = Conv2d::same(&mut b.push("shared"), NUM_CLASSES, hidden, kernel, 2f64.sqrt())?;
        // γ starts near 1 so an untrained block is close to plain normalization.
        b.push("gamma").param("bias", &[channels], Init::Ones)?;
        let gamma = Conv2d::same(&mut b.push("gamma"), hidden, channels, kernel, 0.5)?;
        let beta = Conv2d::same(&mut b.push("beta"), hidden, channels, kernel, 0.5)?;
        Ok(Self {
            shared,
            gamma,
            beta,
            channels,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor, seg: &Tensor) -> Result<Tensor> {
        spade_normalize(x, seg, self)
    }
}

/// `γ(m) ⊙ (x - μ)/sqrt(σ² + ε) + β(m)` with `μ, σ²` per sample and channel.
/// `seg` is the one-hot map already at the feature resolution.
pub fn spade_normalize(x: &Tensor, seg: &Tensor, p: &Spade) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (sb, sc, sh, sw) = seg.dims4()?;
    if (sb, sh, sw) != (b, h, w) || sc != NUM_CLASSES {
        return Err(Error::invalid(format!(
            "label map {:?} does not match features {:?}",
            seg.dims(),
            x.dims()
        )));
    }
    if c != p.channels {
        return Err(Error::invalid(format!("SPADE block built for {} channels, got {c}", p.channels)));
    }
    let normed = nn::instance_norm(x, p.eps)?;
    let actv = p.shared.forward(seg)?.relu()?;
    let gamma = p.gamma.forward(&actv)?;
    let beta = p.beta.forward(&actv)?;
    Ok(((normed * gamma)? + beta)?)
}

/// Nearest-neighbour (top-left) downsampling of a one-hot batch.
pub fn downsample_onehot(seg: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(seg.clone());
    }
    let (b, c, h, w) = seg.dims4()?;
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::invalid(format!("{h}x{w} map is not divisible by {factor}")));
    }
    Ok(seg
        .reshape((b, c, h / factor, factor, w / factor, factor))?
        .narrow(3, 0, 1)?
        .narrow(5, 0, 1)?
        .reshape((b, c, h / factor, w / factor))?
        .contiguous()?)
}

struct ResBlock {
    norm0: Spade,
    conv0: Conv2d,
    norm1: Spade,
    conv1: Conv2d,
    shortcut: Option<(Spade, Conv2d)>,
}

impl ResBlock {
    fn new<R: Rng>(b: &mut Builder<'_, R>, cin: usize, cout: usize, arch: &GanArch) -> Result<Self> {
        let mid = cin.min(cout);
        let (hid, k) = (arch.spade_hidden, arch.spade_kernel);
        let norm0 = Spade::new(&mut b.push("norm0"), cin, hid, k, NORM_EPS)?;
        let conv0 = Conv2d::same(&mut b.push("conv0"), cin, mid, 3, 2f64.sqrt())?;
        let norm1 = Spade::new(&mut b.push("norm1"), mid, hid, k, NORM_EPS)?;
        let conv1 = Conv2d::same(&mut b.push("conv1"), mid, cout, 3, 1.0)?;
        let shortcut = if cin != cout {
            Some((
                Spade::new(&mut b.push("norm_s"), cin, hid, k, NORM_EPS)?,
                Conv2d::same(&mut b.push("conv_s"), cin, cout, 1, 1.0)?.without_bias(),
            ))
        } else {
            None
        };
        Ok(Self {
            norm0,
            conv0,
            norm1,
            conv1,
            shortcut,
        })
    }

    fn forward(&self, x: &Tensor, seg: &Tensor) -> Result<Tensor> {
        let dx = self.conv0.forward(&nn::leaky_relu(&self.norm0.forward(x, seg)?, 0.2)?)?;
        let dx = self.conv1.forward(&nn::leaky_relu(&self.norm1.forward(&dx, seg)?, 0.2)?)?;
        let xs = match &self.shortcut {
            Some((norm, conv)) => conv.forward(&norm.forward(x, seg)?)?,
            None => x.clone(),
        };
        Ok((xs + dx)?)
    }
}

struct Generator {
    project: Linear,
    blocks: Vec<ResBlock>,
    out: Conv2d,
}

struct StyleEncoder {
    convs: Vec<Conv2d>,
    mean: Linear,
    log_var: Linear,
}

struct DiscScale {
    layers: Vec<Conv2d>,
}

/// Per-scale outputs of the discriminator.
pub struct DiscOutput {
    pub logits: Vec<Tensor>,
    /// Activations of every layer except the last, per scale.
    pub features: Vec<Vec<Tensor>>,
}

impl DiscOutput {
    fn detach(&self) -> Self {
        Self {
            logits: self.logits.iter().map(Tensor::detach).collect(),
            features: self.features.iter().map(|f| f.iter().map(Tensor::detach).collect()).collect(),
        }
    }
}

/// Style encoder, generator and discriminator under one parameter store
/// (prefixes `style.`, `gen.`, `disc.`).
pub struct SpadeGan {
    arch: GanArch,
    store: ParamStore,
    style: StyleEncoder,
    generator: Generator,
    disc: Vec<DiscScale>,
    epochs_trained: usize,
}

impl SpadeGan {
    pub fn new(arch: GanArch, seed: u64, dtype: DType) -> Result<Self> {
        Self::build(arch, ParamStore::new(dtype), seed, 0)
    }

    fn build(arch: GanArch, mut store: ParamStore, seed: u64, epochs_trained: usize) -> Result<Self> {
        arch.validate()?;
        let k = arch.depth();
        let (h0, w0) = (arch.height >> k, arch.width >> k);

        let style = {
            let mut init = rng::stream(seed, "gan/init/style");
            let mut b = Builder::new(&mut store, &mut init);
            let mut convs = Vec::new();
            let mut cin = 1;
            for (i, &c) in arch.style_channels.iter().enumerate() {
                convs.push(Conv2d::new(&mut b.push(&format!("style.{i}")), cin, c, 3, 2, 1, 1, 2f64.sqrt())?);
                cin = c;
            }
            let s = arch.style_channels.len();
            let flat = cin * (arch.height >> s) * (arch.width >> s);
            StyleEncoder {
                convs,
                mean: Linear::new(&mut b.push("style.mean"), flat, arch.style_dim, 1.0)?,
                log_var: Linear::new(&mut b.push("style.log_var"), flat, arch.style_dim, 0.1)?,
            }
        };

        let generator = {
            let mut init = rng::stream(seed, "gan/init/gen");
            let mut b = Builder::new(&mut store, &mut init);
            let c0 = arch.gen_channels[0];
            let project = Linear::new(&mut b.push("gen.project"), arch.style_dim, c0 * h0 * w0, 1.0)?;
            let mut blocks = Vec::new();
            let mut cin = c0;
            for (i, &c) in arch.gen_channels.iter().enumerate() {
                blocks.push(ResBlock::new(&mut b.push(&format!("gen.block{i}")), cin, c, &arch)?);
                cin = c;
            }
            let out = Conv2d::same(&mut b.push("gen.out"), cin, 1, 3, 1.0)?;
            Generator { project, blocks, out }
        };

        let disc = {
            let mut init = rng::stream(seed, "gan/init/disc");
            let mut b = Builder::new(&mut store, &mut init);
            let nf = arch.disc_channels;
            let mut scales = Vec::new();
            for s in 0..arch.disc_scales {
                let mut sb = b.push(&format!("disc.scale{s}"));
                let g = 2f64.sqrt();
                let layers = vec![
                    Conv2d::new(&mut sb.push("0"), 1 + NUM_CLASSES, nf, 4, 2, 1, 1, g)?,
                    Conv2d::new(&mut sb.push("1"), nf, 2 * nf, 4, 2, 1, 1, g)?,
                    Conv2d::new(&mut sb.push("2"), 2 * nf, 4 * nf, 3, 1, 1, 1, g)?,
                    Conv2d::new(&mut sb.push("3"), 4 * nf, 1, 3, 1, 1, 1, 1.0)?,
                ];
                scales.push(DiscScale { layers });
            }
            scales
        };

        Ok(Self {
            arch,
            store,
            style,
            generator,
            disc,
            epochs_trained,
        })
    }

    pub fn arch(&self) -> &GanArch {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn epochs_trained(&self) -> usize {
        self.epochs_trained
    }

    pub(crate) fn set_epochs_trained(&mut self, n: usize) {
        self.epochs_trained = n;
    }

    fn check_size(&self, h: usize, w: usize, what: &str) -> Result<()> {
        if (h, w) != (self.arch.height, self.arch.width) {
            return Err(Error::invalid(format!(
                "{what} is {h}x{w}, model resolution is {}x{}",
                self.arch.height, self.arch.width
            )));
        }
        Ok(())
    }

    /// `(B, 1, H, W)` images to style posterior `(mean, log_var)`, each `(B, D_s)`.
    pub fn style_encode_tensor(&self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, c, h, w) = images.dims4()?;
        if c != 1 {
            return Err(Error::invalid("style encoder expects single-channel images"));
        }
        self.check_size(h, w, "image")?;
        let mut x = images.clone();
        for (i, conv) in self.style.convs.iter().enumerate() {
            x = conv.forward(&x)?;
            if i > 0 {
                x = nn::instance_norm(&x, NORM_EPS)?;
            }
            x = nn::leaky_relu(&x, 0.2)?;
        }
        let x = x.reshape((b, ()))?;
        Ok((self.style.mean.forward(&x)?, self.style.log_var.forward(&x)?))
    }

    pub fn style_encode(&self, image: &GrayImage) -> Result<(Vec<f32>, Vec<f32>)> {
        let (m, v) = self.style_encode_tensor(&image_batch(std::slice::from_ref(image), self.dtype())?)?;
        Ok((to_vec(&m)?, to_vec(&v)?))
    }

    /// Style latents `(B, D_s)` and one-hot maps `(B, 4, H, W)` to images
    /// `(B, 1, H, W)` in `[-1, 1]`.
    pub fn generator_forward(&self, z: &Tensor, seg: &Tensor) -> Result<Tensor> {
        let (b, d) = z.dims2()?;
        if d != self.arch.style_dim {
            return Err(Error::invalid(format!(
                "style latent has dimension {d}, expected {}",
                self.arch.style_dim
            )));
        }
        let (sb, sc, h, w) = seg.dims4()?;
        if sb != b || sc != NUM_CLASSES {
            return Err(Error::invalid("label batch does not match the style batch"));
        }
        self.check_size(h, w, "label map")?;
        let k = self.arch.depth();
        let (h0, w0) = (h >> k, w >> k);
        let mut x = self.generator.project.forward(z)?.reshape((b, self.arch.gen_channels[0], h0, w0))?;
        for (i, block) in self.generator.blocks.iter().enumerate() {
            x = nn::upsample2x(&x)?;
            let seg_i = downsample_onehot(seg, 1 << (k - 1 - i))?;
            x = block.forward(&x, &seg_i)?;
        }
        Ok(self.generator.out.forward(&nn::leaky_relu(&x, 0.2)?)?.tanh()?)
    }

    /// Scale `s` sees the image and map average-pooled `s` times.
    pub fn discriminator_forward(&self, images: &Tensor, seg: &Tensor) -> Result<DiscOutput> {
        let (b, _, h, w) = images.dims4()?;
        let (sb, _, sh, sw) = seg.dims4()?;
        if (sb, sh, sw) != (b, h, w) {
            return Err(Error::invalid("image and label map differ in size"));
        }
        self.check_size(h, w, "image")?;
        let mut input = Tensor::cat(&[images, seg], 1)?;
        let mut out = DiscOutput {
            logits: Vec::new(),
            features: Vec::new(),
        };
        for (s, scale) in self.disc.iter().enumerate() {
            if s > 0 {
                input = nn::avg_pool2x(&input)?;
            }
            let mut x = input.clone();
            let mut feats = Vec::new();
            let last = scale.layers.len() - 1;
            for (i, layer) in scale.layers.iter().enumerate() {
                x = layer.forward(&x)?;
                if i == last {
                    break;
                }
                if i > 0 {
                    x = nn::instance_norm(&x, NORM_EPS)?;
                }
                x = nn::leaky_relu(&x, 0.2)?;
                feats.push(x.clone());
            }
            out.logits.push(x);
            out.features.push(feats);
        }
        Ok(out)
    }

    /// Discriminator hinge loss on detached fakes.
    pub fn d_loss(&self, real: &Tensor, fake: &Tensor, seg: &Tensor) -> Result<Tensor> {
        let dr = self.discriminator_forward(real, seg)?;
        let df = self.discriminator_forward(&fake.detach(), seg)?;
        d_hinge(&dr.logits, &df.logits)
    }

    /// Generator objective for a batch; gradients reach the generator and style
    /// encoder through `fake`, `mean` and `log_var`.
    #[allow(clippy::too_many_arguments)]
    pub fn g_loss(
        &self,
        real: &Tensor,
        fake: &Tensor,
        seg: &Tensor,
        mean: &Tensor,
        log_var: &Tensor,
        w: &LossWeights,
    ) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
        let dr = self.discriminator_forward(real, seg)?.detach();
        let df = self.discriminator_forward(fake, seg)?;
        let adv = g_hinge(&df.logits)?;
        let fm = feature_matching(&dr.features, &df.features)?;
        let kl = nn::kl_standard_normal(mean, log_var)?;
        let total = ((&adv + (&fm * w.fm)?)? + (&kl * w.kl)?)?;
        Ok((total, adv, fm, kl))
    }

    /// All loss parts at the current parameters.
    pub fn gan_losses(
        &self,
        real: &Tensor,
        fake: &Tensor,
        seg: &Tensor,
        mean: &Tensor,
        log_var: &Tensor,
        w: &LossWeights,
    ) -> Result<(Tensor, Tensor, GanLossParts)> {
        let d_total = self.d_loss(real, fake, seg)?;
        let (g_total, adv, fm, kl) = self.g_loss(real, fake, seg, mean, log_var, w)?;
        let parts = GanLossParts {
            d_total: ensure_finite("d_total", nn::scalar(&d_total)?)?,
            g_adv: ensure_finite("g_adv", nn::scalar(&adv)?)?,
            g_fm: ensure_finite("g_fm", nn::scalar(&fm)?)?,
            g_kl: ensure_finite("g_kl", nn::scalar(&kl)?)?,
            g_total: ensure_finite("g_total", nn::scalar(&g_total)?)?,
        };
        Ok((g_total, d_total, parts))
    }

    /// Generates images for `maps` with explicit style latents (one row per map).
    /// Runs as one batch; memory grows with `maps.len()`.
    pub fn generate_batch(&self, maps: &[LabelMap], styles: &[Vec<f32>]) -> Result<Vec<GrayImage>> {
        self.ensure_trained()?;
        if maps.len() != styles.len() {
            return Err(Error::invalid("one style vector per map is required"));
        }
        if let Some(s) = styles.iter().find(|s| s.len() != self.arch.style_dim) {
            return Err(Error::invalid(format!(
                "style vector has dimension {}, expected {}",
                s.len(),
                self.arch.style_dim
            )));
        }
        for m in maps {
            self.check_size(m.height(), m.width(), "label map")?;
        }
        let seg = onehot_batch(maps, self.dtype())?;
        let z = nn::tensor_from_f32(styles.concat(), &[maps.len(), self.arch.style_dim], self.dtype())?;
        images_from_tensor(&self.generator_forward(&z, &seg)?)
    }

    fn ensure_trained(&self) -> Result<()> {
        if self.epochs_trained == 0 {
            return Err(Error::invalid("GAN parameters are untrained"));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        let mut meta = meta;
        if !meta.is_object() {
            meta = serde_json::json!({});
        }
        meta["arch"] = serde_json::to_value(&self.arch)?;
        meta["epochs_trained"] = self.epochs_trained.into();
        meta["num_classes"] = NUM_CLASSES.into();
        Ok(Checkpoint {
            kind: CHECKPOINT_KIND.to_string(),
            meta,
            arrays: self.store.to_arrays()?,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, dtype: DType) -> Result<Self> {
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let arch: GanArch = ckpt.meta_field("arch")?;
        let epochs: usize = ckpt.meta_field("epochs_trained")?;
        let store = ParamStore::from_arrays(&ckpt.arrays, dtype)?;
        let expected: Vec<String> = Self::new(arch.clone(), 0, dtype)?.store.names().map(String::from).collect();
        let found: Vec<String> = store.names().map(String::from).collect();
        if expected != found {
            return Err(Error::invalid("checkpoint arrays do not match the GAN architecture"));
        }
        Self::build(arch, store, 0, epochs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub fm: f64,
    pub kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { fm: 10.0, kl: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanLossParts {
    pub d_total: f64,
    pub g_adv: f64,
    pub g_fm: f64,
    pub g_kl: f64,
    pub g_total: f64,
}

/// `mean(relu(1 - real)) + mean(relu(1 + fake))`, averaged over scales.
pub fn d_hinge(real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::invalid("real and fake logits must cover the same scales"));
    }
    let mut terms = Vec::new();
    for (r, f) in real.iter().zip(fake) {
        let lr = r.affine(-1.0, 1.0)?.relu()?.mean_all()?;
        let lf = f.affine(1.0, 1.0)?.relu()?.mean_all()?;
        terms.push((lr + lf)?);
    }
    Ok(Tensor::stack(&terms, 0)?.mean_all()?)
}

/// `-mean(fake)`, averaged over scales.
pub fn g_hinge(fake: &[Tensor]) -> Result<Tensor> {
    if fake.is_empty() {
        return Err(Error::invalid("no discriminator scales"));
    }
    let means = fake.iter().map(Tensor::mean_all).collect::<candle_core::Result<Vec<_>>>()?;
    Ok(Tensor::stack(&means, 0)?.mean_all()?.neg()?)
}

/// Mean over all (scale, layer) pairs of the mean absolute feature difference.
pub fn feature_matching(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<Tensor> {
    let mut terms = Vec::new();
    for (rs, fs) in real.iter().zip(fake) {
        if rs.len() != fs.len() {
            return Err(Error::invalid("feature lists differ in length"));
        }
        for (r, f) in rs.iter().zip(fs) {
            terms.push((f - r)?.abs()?.mean_all()?);
        }
    }
    if terms.is_empty() {
        return Err(Error::invalid("no discriminator features"));
    }
    Ok(Tensor::stack(&terms, 0)?.mean_all()?)
}

/// Where a generated image takes its style from.
pub enum StyleSource<'a> {
    /// A unit-normal draw.
    Random,
    /// The style posterior of a reference slice, sampled once.
    Reference(&'a GrayImage),
}

/// Generates one image for `map`; the style noise comes from `rng`.
pub fn generate_image<R: Rng>(gan: &SpadeGan, map: &LabelMap, style: StyleSource<'_>, rng: &mut R) -> Result<GrayImage> {
    gan.ensure_trained()?;
    let noise = rng::standard_normal_vec(rng, gan.arch.style_dim);
    let z = match style {
        StyleSource::Random => noise,
        StyleSource::Reference(img) => {
            let (m, v) = gan.style_encode(img)?;
            crate::vae::reparameterize(&m, &v, &noise)?
        }
    };
    Ok(gan.generate_batch(std::slice::from_ref(map), &[z])?.remove(0))
}

pub fn image_batch(images: &[GrayImage], dtype: DType) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::invalid("empty image batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::invalid("images in a batch must share one size"));
        }
        data.extend_from_slice(img.as_slice());
    }
    Ok(nn::tensor_from_f32(data, &[images.len(), 1, h, w], dtype)?)
}

pub fn images_from_tensor(t: &Tensor) -> Result<Vec<GrayImage>> {
    let (b, c, h, w) = t.dims4()?;
    if c != 1 {
        return Err(Error::invalid("expected single-channel images"));
    }
    let flat = to_vec(t)?;
    (0..b)
        .map(|i| GrayImage::new(h, w, flat[i * h * w..(i + 1) * h * w].to_vec()))
        .collect()
}

fn to_vec(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?)
}
