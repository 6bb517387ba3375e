use std::path::Path;

use candle_core::DType;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentConfig};
use super::model::{SegArch, Segmenter};
use super::evaluate;
use crate::anatomy::{GrayImage, LabelMap};
use crate::error::{ensure_finite, Error, Result};
use crate::nn;
use crate::rng;
use crate::spadegan::image_batch;
use crate::vae::onehot_batch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub augment: AugmentConfig,
    pub arch: SegArch,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            augment: AugmentConfig::default(),
            arch: SegArch::default(),
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.augment.validate()?;
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::invalid("segmentation config: batch_size and lr must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    /// Multiplier on the base learning rate.
    pub lr_scale: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { epochs: 5, lr_scale: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean foreground Dice on the validation pairs, when there are any.
    pub val_dice: Option<f64>,
}

/// Paired slices borrowed from a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Pairs<'a> {
    pub images: &'a [GrayImage],
    pub maps: &'a [LabelMap],
}

impl<'a> Pairs<'a> {
    pub fn new(images: &'a [GrayImage], maps: &'a [LabelMap]) -> Result<Self> {
        if images.len() != maps.len() {
            return Err(Error::invalid("images and label maps differ in count"));
        }
        Ok(Self { images, maps })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Trains a fresh segmenter with cross-entropy. The returned model is the one
/// with the best validation Dice (the last one when `val` is empty).
pub fn train_seg(
    train: Pairs<'_>,
    val: Pairs<'_>,
    cfg: &SegTrainConfig,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<(Segmenter, Vec<SegEpoch>)> {
    cfg.validate()?;
    let model = Segmenter::new(cfg.arch.clone(), seed, DType::F32)?;
    run(model, train, val, cfg, cfg.epochs, cfg.lr, seed, "seg", checkpoint)
}

/// Continues training a copy of `model` at a reduced learning rate.
pub fn finetune(
    model: &Segmenter,
    train: Pairs<'_>,
    val: Pairs<'_>,
    base: &SegTrainConfig,
    ft: &FinetuneConfig,
    seed: u64,
    checkpoint: Option<&Path>,
) -> Result<(Segmenter, Vec<SegEpoch>)> {
    if !(ft.lr_scale > 0.0) {
        return Err(Error::invalid("finetune lr_scale must be positive"));
    }
    let cfg = SegTrainConfig {
        arch: model.arch().clone(),
        ..base.clone()
    };
    cfg.validate()?;
    let copy = model.duplicate()?;
    run(copy, train, val, &cfg, ft.epochs, cfg.lr * ft.lr_scale, seed, "seg/finetune", checkpoint)
}

#[allow(clippy::too_many_arguments)]
fn run(
    model: Segmenter,
    train: Pairs<'_>,
    val: Pairs<'_>,
    cfg: &SegTrainConfig,
    epochs: usize,
    lr: f64,
    seed: u64,
    stream: &str,
    checkpoint: Option<&Path>,
) -> Result<(Segmenter, Vec<SegEpoch>)> {
    if train.is_empty() {
        return Err(Error::invalid("segmentation training set is empty"));
    }
    let (h, w) = (cfg.arch.height, cfg.arch.width);
    let sized = |i: &GrayImage| (i.height(), i.width()) == (h, w);
    if !train.images.iter().chain(val.images).all(sized) {
        return Err(Error::invalid(format!("segmentation pairs must be {h}x{w}")));
    }
    let mut opt = AdamW::new(
        model.store().all_vars(),
        ParamsAdamW {
            lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut shuffle = rng::stream(seed, &format!("{stream}/shuffle"));
    let mut aug_rng = rng::stream(seed, &format!("{stream}/augment"));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    let mut best: Option<(f64, Segmenter)> = None;
    for epoch in 0..epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let mut imgs = Vec::with_capacity(idx.len());
            let mut maps = Vec::with_capacity(idx.len());
            for &i in idx {
                let (im, m, _) = augment(&train.images[i], &train.maps[i], &mut aug_rng, &cfg.augment)?;
                imgs.push(im);
                maps.push(m);
            }
            let x = image_batch(&imgs, DType::F32)?;
            let target = onehot_batch(&maps, DType::F32)?;
            let loss = nn::cross_entropy_onehot(&model.forward(&x)?, &target)?;
            loss_sum += idx.len() as f64 * ensure_finite("cross-entropy", nn::scalar(&loss)?)?;
            opt.backward_step(&loss)?;
        }
        let val_dice = if val.is_empty() {
            None
        } else {
            Some(evaluate(&model, val.images, val.maps)?.mean)
        };
        let row = SegEpoch {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_dice,
        };
        log::info!(
            "{stream} epoch {}/{epochs}: loss {:.4} val dice {}",
            epoch + 1,
            row.train_loss,
            val_dice.map_or("-".to_string(), |d| format!("{d:.4}"))
        );
        history.push(row);
        let score = val_dice.unwrap_or(f64::NEG_INFINITY);
        let improved = best.as_ref().is_none_or(|(b, _)| score > *b) || val.is_empty();
        if improved {
            match &mut best {
                Some((b, snapshot)) => {
                    *b = score;
                    snapshot.store().assign_from(model.store())?;
                }
                None => best = Some((score, model.duplicate()?)),
            }
            if let Some(path) = checkpoint {
                let meta = serde_json::json!({
                    "seed": seed,
                    "epoch": epoch,
                    "val_dice": val_dice,
                    "config": serde_json::to_value(cfg)?,
                });
                model.to_checkpoint(meta)?.save(path)?;
            }
        }
    }
    let out = match best {
        Some((_, m)) => m,
        None => model,
    };
    Ok((out, history))
}

pub fn history_csv(history: &[SegEpoch]) -> String {
    let mut s = String::from("epoch,train_loss,val_dice\n");
    for h in history {
        let v = h.val_dice.map_or(String::new(), |d| d.to_string());
        s.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, v));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::{generate_phantom, PhantomProfile, PhantomSpec};
    use rand::SeedableRng;

    fn data(n: usize, seed: u64) -> (Vec<GrayImage>, Vec<LabelMap>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let s = PhantomSpec::random(&mut rng, 32, 32, PhantomProfile::A);
                generate_phantom(&s, &mut rng, 32, 32).unwrap()
            })
            .unzip()
    }

    fn cfg(epochs: usize) -> SegTrainConfig {
        SegTrainConfig {
            epochs,
            batch_size: 4,
            arch: SegArch {
                height: 32,
                width: 32,
                channels: [4, 8, 16],
                bottlenecks: 1,
            },
            ..Default::default()
        }
    }

    #[test]
    fn two_epochs_two_rows_and_checkpoint() {
        let (ti, tm) = data(10, 1);
        let (vi, vm) = data(4, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.ckpt");
        let (_, h) = train_seg(Pairs::new(&ti, &tm).unwrap(), Pairs::new(&vi, &vm).unwrap(), &cfg(2), 1, Some(&path)).unwrap();
        assert_eq!(h.len(), 2);
        assert!(h.iter().all(|r| r.train_loss.is_finite() && r.val_dice.is_some()));
        assert!(path.exists());
        assert_eq!(history_csv(&h).lines().count(), 3);
    }

    #[test]
    fn same_seed_same_history() {
        let (ti, tm) = data(8, 3);
        let (vi, vm) = data(3, 4);
        let run = || train_seg(Pairs::new(&ti, &tm).unwrap(), Pairs::new(&vi, &vm).unwrap(), &cfg(2), 9, None).unwrap().1;
        assert_eq!(history_csv(&run()), history_csv(&run()));
    }

    #[test]
    fn zero_epoch_finetune_keeps_parameters() {
        let (ti, tm) = data(6, 5);
        let pairs = Pairs::new(&ti, &tm).unwrap();
        let (model, _) = train_seg(pairs, Pairs::new(&[], &[]).unwrap(), &cfg(1), 2, None).unwrap();
        let ft = FinetuneConfig { epochs: 0, lr_scale: 0.1 };
        let (tuned, h) = finetune(&model, pairs, Pairs::new(&[], &[]).unwrap(), &cfg(1), &ft, 2, None).unwrap();
        assert!(h.is_empty());
        assert_eq!(model.store().to_arrays().unwrap(), tuned.store().to_arrays().unwrap());
        let ft = FinetuneConfig { epochs: 3, lr_scale: 0.1 };
        let (_, h) = finetune(&model, pairs, Pairs::new(&[], &[]).unwrap(), &cfg(1), &ft, 2, None).unwrap();
        assert_eq!(h.len(), 3);
    }
}
