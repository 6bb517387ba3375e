use std::path::Path;
use std::time::Instant;

use candle_core::DType;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{image_batch, GanArch, LossWeights, SpadeGan};
use crate::anatomy::{GrayImage, LabelMap};
use crate::error::{ensure_finite, Error, Result};
use crate::nn;
use crate::rng;
use crate::vae::{onehot_batch, reparameterize_tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weights: LossWeights,
    pub arch: GanArch,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            lr_g: 1e-4,
            lr_d: 4e-4,
            beta1: 0.0,
            beta2: 0.9,
            weights: LossWeights::default(),
            arch: GanArch::default(),
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let betas_ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if self.batch_size == 0 || !(self.lr_g > 0.0) || !(self.lr_d > 0.0) || !betas_ok {
            return Err(Error::invalid("GAN config: batch_size, learning rates or betas out of range"));
        }
        if self.weights.fm < 0.0 || self.weights.kl < 0.0 {
            return Err(Error::invalid("GAN loss weights must be non-negative"));
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> ParamsAdamW {
        ParamsAdamW {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanEpoch {
    pub epoch: usize,
    pub d_total: f64,
    pub g_adv: f64,
    pub g_fm: f64,
    pub g_kl: f64,
    pub wall_seconds: f64,
}

/// Alternating discriminator/generator updates on paired slices. Styles come
/// from the encoder applied to the real slice, reparameterized with seeded noise.
pub fn train_gan(
    images: &[GrayImage],
    maps: &[LabelMap],
    cfg: &GanTrainConfig,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<(SpadeGan, Vec<GanEpoch>)> {
    cfg.validate()?;
    if images.is_empty() || images.len() != maps.len() {
        return Err(Error::invalid("GAN training needs a non-empty paired set"));
    }
    let (h, w) = (cfg.arch.height, cfg.arch.width);
    let sized = |a: usize, b: usize| a == h && b == w;
    if !images.iter().all(|i| sized(i.height(), i.width())) || !maps.iter().all(|m| sized(m.height(), m.width())) {
        return Err(Error::invalid(format!("training pairs must be {h}x{w}")));
    }
    let mut gan = SpadeGan::new(cfg.arch.clone(), seed, DType::F32)?;
    let store = gan.store();
    let mut g_vars = store.vars_with_prefix("gen.");
    g_vars.extend(store.vars_with_prefix("style."));
    let mut opt_g = AdamW::new(g_vars, cfg.adam(cfg.lr_g))?;
    let mut opt_d = AdamW::new(store.vars_with_prefix("disc."), cfg.adam(cfg.lr_d))?;
    let mut shuffle = rng::stream(seed, "gan/shuffle");
    let mut noise_rng = rng::stream(seed, "gan/noise");
    let mut order: Vec<usize> = (0..images.len()).collect();
    let d = cfg.arch.style_dim;
    let mut history = Vec::with_capacity(cfg.epochs);
    let started = Instant::now();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut sums = [0.0f64; 4];
        for idx in order.chunks(cfg.batch_size) {
            let b = idx.len();
            let real_imgs: Vec<GrayImage> = idx.iter().map(|&i| images[i].clone()).collect();
            let batch_maps: Vec<LabelMap> = idx.iter().map(|&i| maps[i].clone()).collect();
            let real = image_batch(&real_imgs, DType::F32)?;
            let seg = onehot_batch(&batch_maps, DType::F32)?;
            let noise = nn::tensor_from_f32(rng::standard_normal_vec(&mut noise_rng, b * d), &[b, d], DType::F32)?;

            let (mean, log_var) = gan.style_encode_tensor(&real)?;
            let z = reparameterize_tensor(&mean, &log_var, &noise)?;
            let fake = gan.generator_forward(&z, &seg)?;

            let d_loss = gan.d_loss(&real, &fake, &seg)?;
            let d_val = ensure_finite("d_total", nn::scalar(&d_loss)?)?;
            opt_d.backward_step(&d_loss)?;

            let (g_total, adv, fm, kl) = gan.g_loss(&real, &fake, &seg, &mean, &log_var, &cfg.weights)?;
            ensure_finite("g_total", nn::scalar(&g_total)?)?;
            let parts = [
                d_val,
                ensure_finite("g_adv", nn::scalar(&adv)?)?,
                ensure_finite("g_fm", nn::scalar(&fm)?)?,
                ensure_finite("g_kl", nn::scalar(&kl)?)?,
            ];
            opt_g.backward_step(&g_total)?;
            for (s, p) in sums.iter_mut().zip(parts) {
                *s += p * b as f64;
            }
        }
        let n = images.len() as f64;
        let row = GanEpoch {
            epoch,
            d_total: sums[0] / n,
            g_adv: sums[1] / n,
            g_fm: sums[2] / n,
            g_kl: sums[3] / n,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "gan epoch {}/{}: d {:.4} adv {:.4} fm {:.4} kl {:.3} ({:.0}s)",
            epoch + 1,
            cfg.epochs,
            row.d_total,
            row.g_adv,
            row.g_fm,
            row.g_kl,
            row.wall_seconds
        );
        history.push(row);
        gan.set_epochs_trained(epoch + 1);
        if let Some(path) = checkpoint {
            let meta = serde_json::json!({ "seed": seed, "config": serde_json::to_value(cfg)? });
            gan.to_checkpoint(meta)?.save(path)?;
        }
    }
    Ok((gan, history))
}

/// `epoch,d_total,g_adv,g_fm,g_kl,wall_seconds`; pass `with_wall = false` for
/// the reproducible projection without timings.
pub fn history_csv(history: &[GanEpoch], with_wall: bool) -> String {
    let mut s = String::from("epoch,d_total,g_adv,g_fm,g_kl");
    s.push_str(if with_wall { ",wall_seconds\n" } else { "\n" });
    for h in history {
        s.push_str(&format!("{},{},{},{},{}", h.epoch, h.d_total, h.g_adv, h.g_fm, h.g_kl));
        if with_wall {
            s.push_str(&format!(",{:.3}", h.wall_seconds));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_arch;
    use super::*;
    use crate::anatomy::{generate_phantom, PhantomProfile, PhantomSpec};
    use crate::spadegan::{generate_image, StyleSource};
    use rand::SeedableRng;

    fn pairs(n: usize) -> (Vec<GrayImage>, Vec<LabelMap>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        (0..n)
            .map(|_| {
                let s = PhantomSpec::random(&mut rng, 32, 32, PhantomProfile::B);
                generate_phantom(&s, &mut rng, 32, 32).unwrap()
            })
            .unzip()
    }

    fn cfg() -> GanTrainConfig {
        GanTrainConfig {
            epochs: 2,
            batch_size: 4,
            arch: tiny_arch(32),
            ..Default::default()
        }
    }

    #[test]
    fn two_epochs_on_ten_pairs() {
        let (imgs, maps) = pairs(10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gan.ckpt");
        let (gan, h) = train_gan(&imgs, &maps, &cfg(), 3, Some(&path)).unwrap();
        assert_eq!(h.len(), 2);
        assert!(h.iter().all(|r| r.d_total >= 0.0 && r.g_fm >= 0.0 && r.g_kl >= 0.0 && r.g_adv.is_finite()));
        assert!(path.exists());
        let csv = history_csv(&h, true);
        assert!(csv.starts_with("epoch,d_total,g_adv,g_fm,g_kl,wall_seconds\n"));
        let mut r = rng::stream(0, "t");
        let img = generate_image(&gan, &maps[0], StyleSource::Random, &mut r).unwrap();
        assert_eq!((img.height(), img.width()), (32, 32));
    }

    #[test]
    fn same_seed_same_history() {
        let (imgs, maps) = pairs(6);
        let (_, a) = train_gan(&imgs, &maps, &cfg(), 11, None).unwrap();
        let (_, b) = train_gan(&imgs, &maps, &cfg(), 11, None).unwrap();
        assert_eq!(history_csv(&a, false), history_csv(&b, false));
    }

    #[test]
    fn rejects_unpaired_data() {
        let (imgs, maps) = pairs(3);
        assert!(train_gan(&imgs, &maps[..2], &cfg(), 0, None).is_err());
        assert!(train_gan(&[], &[], &cfg(), 0, None).is_err());
    }
}
