//! Anatomical shape VAE over one-hot label maps.
//!
//! The encoder is a stack of stride-2 convolutions followed by two linear
//! heads for the posterior mean and log-variance; the decoder mirrors it with
//! transposed convolutions and emits per-class logits. New shapes come from
//! decoding standard-normal draws and discarding anything that fails the
//! anatomical validity predicates.

mod train;

pub use train::{history_csv, train_vae, VaeEpoch, VaeTrainConfig};

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anatomy::{self, argmax_decode, check_validity, ClassStack, LabelMap, NUM_CLASSES};
use crate::checkpoint::Checkpoint;
use crate::error::{ensure_finite, Error, Result};
use crate::nn::{self, Builder, Conv2d, ConvTranspose2d, Linear, ParamStore};
use crate::rng;

pub const CHECKPOINT_KIND: &str = "shape-vae";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeArch {
    pub height: usize,
    pub width: usize,
    pub latent_dim: usize,
    /// Channels of the first encoder block; doubled per block.
    pub base_channels: usize,
    /// Number of stride-2 blocks on each side.
    pub depth: usize,
}

impl Default for VaeArch {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            latent_dim: 32,
            base_channels: 32,
            depth: 4,
        }
    }
}

impl VaeArch {
    fn channels(&self) -> Vec<usize> {
        (0..self.depth).map(|i| self.base_channels << i).collect()
    }

    fn bottleneck(&self) -> (usize, usize) {
        (self.height >> self.depth, self.width >> self.depth)
    }

    pub fn validate(&self) -> Result<()> {
        let f = 1usize << self.depth;
        if self.depth == 0 || self.latent_dim == 0 || self.base_channels == 0 {
            return Err(Error::invalid("VAE depth, latent_dim and base_channels must be positive"));
        }
        if self.height % f != 0 || self.width % f != 0 {
            return Err(Error::invalid(format!(
                "VAE input {}x{} is not divisible by 2^{}",
                self.height, self.width, self.depth
            )));
        }
        Ok(())
    }
}

/// Posterior parameters for one map, plus the reparameterized draw once taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub mean: Vec<f32>,
    pub log_var: Vec<f32>,
    pub sample: Option<Vec<f32>>,
}

pub struct ShapeVae {
    arch: VaeArch,
    store: ParamStore,
    encoder: Vec<Conv2d>,
    mean_head: Linear,
    log_var_head: Linear,
    decoder_in: Linear,
    decoder: Vec<ConvTranspose2d>,
}

impl ShapeVae {
    pub fn new(arch: VaeArch, seed: u64, dtype: DType) -> Result<Self> {
        Self::build(arch, ParamStore::new(dtype), seed)
    }

    fn build(arch: VaeArch, mut store: ParamStore, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut init = rng::stream(seed, "vae/init");
        let mut b = Builder::new(&mut store, &mut init);
        let ch = arch.channels();
        let (bh, bw) = arch.bottleneck();
        let flat = ch[ch.len() - 1] * bh * bw;
        let mut encoder = Vec::new();
        let mut cin = NUM_CLASSES;
        for (i, &c) in ch.iter().enumerate() {
            encoder.push(Conv2d::new(&mut b.push(&format!("enc.{i}")), cin, c, 4, 2, 1, 1, 2f64.sqrt())?);
            cin = c;
        }
        let mean_head = Linear::new(&mut b.push("enc.mean"), flat, arch.latent_dim, 1.0)?;
        let log_var_head = Linear::new(&mut b.push("enc.log_var"), flat, arch.latent_dim, 0.1)?;
        let decoder_in = Linear::new(&mut b.push("dec.in"), arch.latent_dim, flat, 1.0)?;
        let mut decoder = Vec::new();
        for i in (0..ch.len()).rev() {
            let cout = if i == 0 { NUM_CLASSES } else { ch[i - 1] };
            let gain = if i == 0 { 1.0 } else { 2f64.sqrt() };
            decoder.push(ConvTranspose2d::new(&mut b.push(&format!("dec.{i}")), ch[i], cout, 4, 2, 1, gain)?);
        }
        Ok(Self {
            arch,
            store,
            encoder,
            mean_head,
            log_var_head,
            decoder_in,
            decoder,
        })
    }

    pub fn arch(&self) -> &VaeArch {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// `(B, 4, H, W)` one-hot batch to posterior `(mean, log_var)`, each `(B, D)`.
    pub fn encode_tensor(&self, onehot: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, c, h, w) = onehot.dims4()?;
        if c != NUM_CLASSES || h != self.arch.height || w != self.arch.width {
            return Err(Error::invalid(format!(
                "VAE expects (B, {NUM_CLASSES}, {}, {}) input, got {:?}",
                self.arch.height,
                self.arch.width,
                onehot.dims()
            )));
        }
        let mut x = onehot.clone();
        for conv in &self.encoder {
            x = nn::leaky_relu(&conv.forward(&x)?, 0.2)?;
        }
        let x = x.reshape((b, ()))?;
        Ok((self.mean_head.forward(&x)?, self.log_var_head.forward(&x)?))
    }

    /// `(B, D)` latents to `(B, 4, H, W)` class logits.
    pub fn decode_tensor(&self, z: &Tensor) -> Result<Tensor> {
        let (b, d) = z.dims2()?;
        if d != self.arch.latent_dim {
            return Err(Error::invalid(format!(
                "latent has dimension {d}, VAE expects {}",
                self.arch.latent_dim
            )));
        }
        let ch = self.arch.channels();
        let (bh, bw) = self.arch.bottleneck();
        let mut x = nn::leaky_relu(&self.decoder_in.forward(z)?, 0.2)?.reshape((b, ch[ch.len() - 1], bh, bw))?;
        let last = self.decoder.len() - 1;
        for (i, deconv) in self.decoder.iter().enumerate() {
            x = deconv.forward(&x)?;
            if i != last {
                x = nn::leaky_relu(&x, 0.2)?;
            }
        }
        Ok(x)
    }

    pub fn encode(&self, map: &LabelMap) -> Result<(Vec<f32>, Vec<f32>)> {
        if map.height() != self.arch.height || map.width() != self.arch.width {
            return Err(Error::invalid(format!(
                "map is {}x{}, VAE input size is {}x{}",
                map.height(),
                map.width(),
                self.arch.height,
                self.arch.width
            )));
        }
        let x = onehot_batch(std::slice::from_ref(map), self.dtype())?;
        let (mean, log_var) = self.encode_tensor(&x)?;
        Ok((to_vec(&mean)?, to_vec(&log_var)?))
    }

    pub fn encode_code(&self, map: &LabelMap) -> Result<LatentCode> {
        let (mean, log_var) = self.encode(map)?;
        Ok(LatentCode {
            mean,
            log_var,
            sample: None,
        })
    }

    pub fn decode(&self, z: &[f32]) -> Result<ClassStack> {
        let t = nn::tensor_from_f32(z.to_vec(), &[1, z.len()], self.dtype())?;
        let logits = self.decode_tensor(&t)?;
        stacks_from_logits(&logits).map(|mut v| v.remove(0))
    }

    /// Decodes the posterior mean; the usual reconstruction of a map.
    pub fn reconstruct(&self, map: &LabelMap) -> Result<LabelMap> {
        let (mean, _) = self.encode(map)?;
        argmax_decode(&self.decode(&mean)?)
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Result<Checkpoint> {
        let mut meta = meta;
        if !meta.is_object() {
            meta = serde_json::json!({});
        }
        meta["arch"] = serde_json::to_value(&self.arch)?;
        meta["latent_dim"] = self.arch.latent_dim.into();
        meta["num_classes"] = NUM_CLASSES.into();
        Ok(Checkpoint {
            kind: CHECKPOINT_KIND.to_string(),
            meta,
            arrays: self.store.to_arrays()?,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, dtype: DType) -> Result<Self> {
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let arch: VaeArch = ckpt.meta_field("arch")?;
        let store = ParamStore::from_arrays(&ckpt.arrays, dtype)?;
        let expected: Vec<String> = Self::new(arch.clone(), 0, dtype)?.store.names().map(String::from).collect();
        let found: Vec<String> = store.names().map(String::from).collect();
        if expected != found {
            return Err(Error::invalid("checkpoint arrays do not match the VAE architecture"));
        }
        Self::build(arch, store, 0)
    }
}

pub fn onehot_batch(maps: &[LabelMap], dtype: DType) -> Result<Tensor> {
    let first = maps.first().ok_or_else(|| Error::invalid("empty map batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(maps.len() * NUM_CLASSES * h * w);
    for m in maps {
        if m.height() != h || m.width() != w {
            return Err(Error::invalid("maps in a batch must share one size"));
        }
        data.extend(anatomy::one_hot(m, NUM_CLASSES)?.data);
    }
    Ok(nn::tensor_from_f32(data, &[maps.len(), NUM_CLASSES, h, w], dtype)?)
}

pub fn stacks_from_logits(logits: &Tensor) -> Result<Vec<ClassStack>> {
    let (b, c, h, w) = logits.dims4()?;
    let flat = logits.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    flat.chunks(c * h * w)
        .take(b)
        .map(|chunk| ClassStack::new(c, h, w, chunk.to_vec()))
        .collect()
}

fn to_vec(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?)
}

/// `mean + exp(log_var / 2) * noise`, elementwise.
pub fn reparameterize(mean: &[f32], log_var: &[f32], noise: &[f32]) -> Result<Vec<f32>> {
    if mean.len() != log_var.len() || mean.len() != noise.len() {
        return Err(Error::invalid(format!(
            "reparameterize length mismatch: {} / {} / {}",
            mean.len(),
            log_var.len(),
            noise.len()
        )));
    }
    Ok(mean
        .iter()
        .zip(log_var)
        .zip(noise)
        .map(|((m, lv), e)| m + (lv / 2.0).exp() * e)
        .collect())
}

pub fn reparameterize_tensor(mean: &Tensor, log_var: &Tensor, noise: &Tensor) -> Result<Tensor> {
    Ok(mean.add(&(log_var * 0.5)?.exp()?.mul(noise)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeLossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Graph-building form of the VAE objective: returns `(total, recon, kl)`.
///
/// `recon` is mean per-pixel cross-entropy of the softmaxed logits against the
/// one-hot target; `kl` is `-1/2 Σ (1 + log_var - mean² - exp(log_var))`
/// summed over latent dims and averaged over the batch.
pub fn vae_loss_tensors(
    logits: &Tensor,
    target_onehot: &Tensor,
    mean: &Tensor,
    log_var: &Tensor,
    beta: f64,
) -> Result<(Tensor, Tensor, Tensor)> {
    if logits.dims() != target_onehot.dims() {
        return Err(Error::invalid(format!(
            "logits {:?} and target {:?} differ in shape",
            logits.dims(),
            target_onehot.dims()
        )));
    }
    if mean.dims() != log_var.dims() || mean.dim(0)? != logits.dim(0)? {
        return Err(Error::invalid("latent parameters do not match the batch"));
    }
    let recon = nn::cross_entropy_onehot(logits, target_onehot)?;
    let kl = nn::kl_standard_normal(mean, log_var)?;
    let total = (&recon + (&kl * beta)?)?;
    Ok((total, recon, kl))
}

/// Evaluates the objective for one map, rejecting NaN with the offending part.
pub fn vae_loss(
    logits: &ClassStack,
    target: &LabelMap,
    mean: &[f32],
    log_var: &[f32],
    beta: f64,
) -> Result<VaeLossParts> {
    let dev = Device::Cpu;
    let l = Tensor::from_vec(logits.data.clone(), (1, logits.classes, logits.height, logits.width), &dev)?;
    let t = onehot_batch(std::slice::from_ref(target), DType::F32)?;
    let m = Tensor::from_vec(mean.to_vec(), (1, mean.len()), &dev)?;
    let v = Tensor::from_vec(log_var.to_vec(), (1, log_var.len()), &dev)?;
    let (total, recon, kl) = vae_loss_tensors(&l, &t, &m, &v, beta)?;
    Ok(VaeLossParts {
        recon: ensure_finite("reconstruction loss", nn::scalar(&recon)?)?,
        kl: ensure_finite("KL loss", nn::scalar(&kl)?)?,
        total: ensure_finite("total VAE loss", nn::scalar(&total)?)?,
    })
}

/// Closed-form KL of a diagonal Gaussian from the standard normal, in f64.
pub fn kl_divergence(mean: &[f32], log_var: &[f32]) -> f64 {
    mean.iter()
        .zip(log_var)
        .map(|(&m, &lv)| {
            let (m, lv) = (m as f64, lv as f64);
            -0.5 * (1.0 + lv - m * m - lv.exp())
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct ShapeSamples {
    pub maps: Vec<LabelMap>,
    pub rejected: usize,
}

impl ShapeSamples {
    pub fn rejection_rate(&self) -> f64 {
        let drawn = self.maps.len() + self.rejected;
        if drawn == 0 {
            0.0
        } else {
            self.rejected as f64 / drawn as f64
        }
    }
}

/// Latents are decoded in fixed-size groups so the arithmetic seen by any one
/// draw does not depend on how many maps were requested.
const SAMPLE_GROUP: usize = 16;

/// Rejection-samples `n` anatomically valid maps from the prior.
pub fn sample_shapes<R: Rng>(n: usize, vae: &ShapeVae, rng: &mut R, max_rejects: usize) -> Result<ShapeSamples> {
    let d = vae.latent_dim();
    let mut maps = Vec::with_capacity(n);
    let mut rejected = 0;
    while maps.len() < n {
        let z = rng::standard_normal_vec(rng, SAMPLE_GROUP * d);
        let zt = nn::tensor_from_f32(z, &[SAMPLE_GROUP, d], vae.dtype())?;
        let logits = vae.decode_tensor(&zt)?;
        for stack in stacks_from_logits(&logits)? {
            if maps.len() == n {
                break;
            }
            let map = argmax_decode(&stack)?;
            if check_validity(&map).valid {
                maps.push(map);
            } else {
                rejected += 1;
                if rejected > max_rejects {
                    let accepted = maps.len();
                    return Err(Error::RejectionBudget {
                        accepted,
                        rejected,
                        rate: rejected as f64 / (accepted + rejected) as f64,
                    });
                }
            }
        }
    }
    if rejected > 0 {
        log::info!(
            "sampled {n} shapes, rejected {rejected} ({:.1}%)",
            100.0 * rejected as f64 / (n + rejected) as f64
        );
    }
    Ok(ShapeSamples { maps, rejected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::{generate_phantom, PhantomProfile, PhantomSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn small_arch() -> VaeArch {
        VaeArch {
            height: 32,
            width: 32,
            latent_dim: 8,
            base_channels: 4,
            depth: 3,
        }
    }

    fn phantom(seed: u64, size: usize) -> LabelMap {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s = PhantomSpec::random(&mut rng, size, size, PhantomProfile::A);
        generate_phantom(&s, &mut rng, size, size).unwrap().1
    }

    #[test]
    fn encode_is_deterministic_and_shaped() {
        let vae = ShapeVae::new(small_arch(), 1, DType::F32).unwrap();
        let m = phantom(3, 32);
        let a = vae.encode(&m).unwrap();
        let b = vae.encode(&m).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 8);
        assert_eq!(a.1.len(), 8);
        assert!(a.0.iter().chain(&a.1).all(|v| v.is_finite()));
        assert!(vae.encode(&phantom(3, 64)).is_err());
    }

    #[test]
    fn decode_shape_and_determinism() {
        let vae = ShapeVae::new(small_arch(), 2, DType::F32).unwrap();
        let z = vec![0.3; 8];
        let a = vae.decode(&z).unwrap();
        assert_eq!((a.classes, a.height, a.width), (4, 32, 32));
        assert_eq!(a, vae.decode(&z).unwrap());
        assert!(a.data.iter().all(|v| v.is_finite()));
        assert!(vae.decode(&[0.0; 7]).is_err());
        argmax_decode(&a).unwrap();
    }

    #[test]
    fn reparameterize_examples() {
        let mean = [0.5, -1.0];
        assert_eq!(reparameterize(&mean, &[0.3, 2.0], &[0.0, 0.0]).unwrap(), mean.to_vec());
        assert_eq!(reparameterize(&mean, &[0.0, 0.0], &[0.25, 1.0]).unwrap(), vec![0.75, 0.0]);
        assert!(reparameterize(&mean, &[0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn reparameterize_monte_carlo_variance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let noise = rng::standard_normal_vec(&mut rng, n);
        let s = reparameterize(&vec![0.0; n], &vec![4f32.ln(); n], &noise).unwrap();
        let mean = s.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = s.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((3.8..=4.2).contains(&var), "variance {var}");
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_divergence(&[0.0; 32], &[0.0; 32]), 0.0);
        assert!((kl_divergence(&[1.0; 32], &[0.0; 32]) - 16.0).abs() < 1e-12);
        let per_dim = 0.5 * (4.0 - 4f64.ln() - 1.0);
        assert!((kl_divergence(&[0.0], &[4f32.ln()]) - per_dim).abs() < 1e-6);
        assert!((per_dim - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn loss_parts_match_closed_form() {
        let m = phantom(1, 32);
        let logits = anatomy::one_hot(&m, 4).unwrap();
        let parts = vae_loss(&logits, &m, &[1.0; 32], &[0.0; 32], 0.5).unwrap();
        assert!((parts.kl - 16.0).abs() < 1e-6);
        // One-hot logits put e/(e+3) on the right class everywhere.
        let expected = -(1f64.exp() / (1f64.exp() + 3.0)).ln();
        assert!((parts.recon - expected).abs() < 1e-6);
        assert!((parts.total - (parts.recon + 0.5 * parts.kl)).abs() < 1e-6);
        let err = vae_loss(&logits, &m, &[f32::NAN; 32], &[0.0; 32], 0.5).unwrap_err();
        assert!(err.to_string().contains("KL"), "{err}");
    }

    #[test]
    fn sample_shapes_filters_and_is_seeded() {
        let vae = ShapeVae::new(small_arch(), 3, DType::F32).unwrap();
        // An untrained decoder rarely produces anatomy: the budget must trip.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        match sample_shapes(5, &vae, &mut rng, 20) {
            Err(Error::RejectionBudget { rejected, .. }) => assert_eq!(rejected, 21),
            Ok(s) => assert!(s.maps.iter().all(|m| check_validity(m).valid)),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let vae = ShapeVae::new(small_arch(), 4, DType::F32).unwrap();
        let ckpt = vae.to_checkpoint(serde_json::json!({"seed": 4})).unwrap();
        let back = ShapeVae::from_checkpoint(&Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap(), DType::F32).unwrap();
        let z = vec![0.1; 8];
        assert_eq!(vae.decode(&z).unwrap(), back.decode(&z).unwrap());
        let mut arch = small_arch();
        arch.base_channels = 8;
        let other = ShapeVae::new(arch, 0, DType::F32).unwrap().to_checkpoint(serde_json::Value::Null).unwrap();
        let mut mixed = ckpt.clone();
        mixed.arrays = other.arrays;
        assert!(ShapeVae::from_checkpoint(&mixed, DType::F32).is_err());
    }

    proptest! {
        #[test]
        fn kl_is_non_negative_and_zero_only_at_standard_normal(
            v in proptest::collection::vec((-3.0f32..3.0, -3.0f32..3.0), 1..16)
        ) {
            let (m, lv): (Vec<f32>, Vec<f32>) = v.into_iter().unzip();
            let kl = kl_divergence(&m, &lv);
            prop_assert!(kl >= 0.0);
            let at_origin = m.iter().chain(&lv).all(|&x| x == 0.0);
            prop_assert_eq!(kl == 0.0, at_origin);
        }

        #[test]
        fn reparameterize_is_linear_in_noise(
            v in proptest::collection::vec((-2.0f32..2.0, -2.0f32..2.0, -2.0f32..2.0, -2.0f32..2.0), 1..8),
            a in -2.0f32..2.0,
        ) {
            let mean: Vec<f32> = v.iter().map(|t| t.0).collect();
            let lv: Vec<f32> = v.iter().map(|t| t.1).collect();
            let e1: Vec<f32> = v.iter().map(|t| t.2).collect();
            let e2: Vec<f32> = v.iter().map(|t| t.3).collect();
            let combo: Vec<f32> = e1.iter().zip(&e2).map(|(x, y)| a * x + y).collect();
            let s0 = reparameterize(&mean, &lv, &vec![0.0; mean.len()]).unwrap();
            let s1 = reparameterize(&mean, &lv, &e1).unwrap();
            let s2 = reparameterize(&mean, &lv, &e2).unwrap();
            let sc = reparameterize(&mean, &lv, &combo).unwrap();
            for i in 0..mean.len() {
                let lin = s0[i] + a * (s1[i] - s0[i]) + (s2[i] - s0[i]);
                prop_assert!((sc[i] - lin).abs() < 1e-4 * (1.0 + lin.abs()));
            }
        }
    }
}
