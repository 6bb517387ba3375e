use std::path::Path;
use std::time::Instant;

use candle_core::DType;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{onehot_batch, reparameterize_tensor, vae_loss_tensors, ShapeVae, VaeArch};
use crate::anatomy::LabelMap;
use crate::error::{ensure_finite, Error, Result};
use crate::nn;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Final KL weight.
    pub beta: f64,
    /// Fraction of epochs over which the KL weight ramps linearly up to `beta`.
    pub warmup_fraction: f64,
    pub arch: VaeArch,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            lr: 2e-4,
            beta: 0.01,
            warmup_fraction: 0.2,
            arch: VaeArch::default(),
        }
    }
}

impl VaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.batch_size == 0 || !(self.lr > 0.0) || self.beta < 0.0 || !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid("VAE config: batch_size, lr, beta or warmup_fraction out of range"));
        }
        Ok(())
    }

    /// KL weight for a zero-based epoch.
    pub fn beta_at(&self, epoch: usize) -> f64 {
        let ramp = self.warmup_fraction * self.epochs as f64;
        if ramp <= 1.0 {
            self.beta
        } else {
            self.beta * ((epoch + 1) as f64 / ramp).min(1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeEpoch {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub beta: f64,
}

/// Trains a fresh VAE on `maps`. When `checkpoint` is given the model is
/// written there after every epoch, so an abort leaves the last good epoch.
pub fn train_vae(
    maps: &[LabelMap],
    cfg: &VaeTrainConfig,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<(ShapeVae, Vec<VaeEpoch>)> {
    cfg.validate()?;
    if maps.is_empty() {
        return Err(Error::invalid("VAE training set is empty"));
    }
    if maps.iter().any(|m| m.height() != cfg.arch.height || m.width() != cfg.arch.width) {
        return Err(Error::invalid(format!(
            "training maps must be {}x{}",
            cfg.arch.height, cfg.arch.width
        )));
    }
    let vae = ShapeVae::new(cfg.arch.clone(), seed, DType::F32)?;
    let mut opt = AdamW::new(
        vae.store().all_vars(),
        ParamsAdamW {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut shuffle = rng::stream(seed, "vae/shuffle");
    let mut noise_rng = rng::stream(seed, "vae/noise");
    let mut order: Vec<usize> = (0..maps.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let started = Instant::now();
    for epoch in 0..cfg.epochs {
        let beta = cfg.beta_at(epoch);
        order.shuffle(&mut shuffle);
        let (mut total, mut recon, mut kl) = (0.0, 0.0, 0.0);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<LabelMap> = idx.iter().map(|&i| maps[i].clone()).collect();
            let x = onehot_batch(&batch, DType::F32)?;
            let (mean, log_var) = vae.encode_tensor(&x)?;
            let noise = rng::standard_normal_vec(&mut noise_rng, batch.len() * vae.latent_dim());
            let noise = nn::tensor_from_f32(noise, &[batch.len(), vae.latent_dim()], DType::F32)?;
            let z = reparameterize_tensor(&mean, &log_var, &noise)?;
            let logits = vae.decode_tensor(&z)?;
            let (loss, r, k) = vae_loss_tensors(&logits, &x, &mean, &log_var, beta)?;
            let w = batch.len() as f64;
            total += w * ensure_finite("total VAE loss", nn::scalar(&loss)?)?;
            recon += w * ensure_finite("reconstruction loss", nn::scalar(&r)?)?;
            kl += w * ensure_finite("KL loss", nn::scalar(&k)?)?;
            opt.backward_step(&loss)?;
        }
        let n = maps.len() as f64;
        let row = VaeEpoch {
            epoch,
            total: total / n,
            recon: recon / n,
            kl: kl / n,
            beta,
        };
        log::info!(
            "vae epoch {}/{}: total {:.4} recon {:.4} kl {:.3} ({:.0}s)",
            epoch + 1,
            cfg.epochs,
            row.total,
            row.recon,
            row.kl,
            started.elapsed().as_secs_f64()
        );
        history.push(row);
        if let Some(path) = checkpoint {
            vae.to_checkpoint(checkpoint_meta(cfg, seed, epoch + 1)?)?.save(path)?;
        }
    }
    Ok((vae, history))
}

pub(crate) fn checkpoint_meta(cfg: &VaeTrainConfig, seed: u64, epochs_done: usize) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "seed": seed,
        "epochs_trained": epochs_done,
        "config": serde_json::to_value(cfg)?,
    }))
}

pub fn history_csv(history: &[VaeEpoch]) -> String {
    let mut s = String::from("epoch,total,recon,kl,beta\n");
    for h in history {
        s.push_str(&format!("{},{},{},{},{}\n", h.epoch, h.total, h.recon, h.kl, h.beta));
    }
    s
}
