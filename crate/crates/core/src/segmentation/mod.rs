//! Downstream segmentation: network, paired augmentation, training and
//! fine-tuning loops, and Dice evaluation.

mod augment;
mod model;
mod train;

pub use augment::{
    apply_augment, augment, sample_augment_params, transform_image, transform_map, AugmentConfig, AugmentParams,
};
pub use model::{SegArch, Segmenter, CHECKPOINT_KIND};
pub use train::{finetune, history_csv, train_seg, FinetuneConfig, Pairs, SegEpoch, SegTrainConfig};

use serde::{Deserialize, Serialize};

use crate::anatomy::{Class, GrayImage, LabelMap};
use crate::error::{Error, Result};

/// `2|P∩T| / (|P|+|T|)` for one class; `None` when the class is absent from both.
pub fn dice(pred: &LabelMap, truth: &LabelMap, class: Class) -> Result<Option<f64>> {
    if (pred.height(), pred.width()) != (truth.height(), truth.width()) {
        return Err(Error::invalid(format!(
            "prediction {}x{} and truth {}x{} differ in size",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    let id = class.id();
    let (mut p, mut t, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.as_slice().iter().zip(truth.as_slice()) {
        p += (a == id) as usize;
        t += (b == id) as usize;
        both += (a == id && b == id) as usize;
    }
    if p + t == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * both as f64 / (p + t) as f64))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct PerClass {
    pub RV: Option<f64>,
    pub MYO: Option<f64>,
    pub LV: Option<f64>,
}

impl PerClass {
    pub fn get(&self, class: Class) -> Option<f64> {
        match class {
            Class::Rv => self.RV,
            Class::Myo => self.MYO,
            Class::Lv => self.LV,
            Class::Background => None,
        }
    }

    fn set(&mut self, class: Class, v: Option<f64>) {
        match class {
            Class::Rv => self.RV = v,
            Class::Myo => self.MYO = v,
            Class::Lv => self.LV = v,
            Class::Background => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FinetuneTag {
    pub dataset: Option<String>,
    pub epochs: usize,
}

/// What a slice contributes for a class absent from both prediction and truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyRule {
    /// Skip it and count it in `excluded`; apex slices cannot inflate the mean.
    #[default]
    Exclude,
    /// Score it as a perfect 1.0.
    ScoreOne,
}

/// Per-class Dice averaged over the slices admitted by `empty_rule`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    pub regime: Option<String>,
    pub test_split: Option<String>,
    pub finetune: FinetuneTag,
    pub per_class: PerClass,
    /// Mean of the per-class entries that are defined.
    pub mean: f64,
    pub n_slices: usize,
    pub seed: Option<u64>,
    pub empty_rule: EmptyRule,
    /// Slices skipped per class; all zero under `ScoreOne`.
    pub excluded: PerClassCount,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct PerClassCount {
    pub RV: usize,
    pub MYO: usize,
    pub LV: usize,
}

/// Scores paired predictions against truths, excluding both-empty slices.
pub fn evaluate_predictions(preds: &[LabelMap], truths: &[LabelMap]) -> Result<DiceReport> {
    evaluate_predictions_with(preds, truths, EmptyRule::Exclude)
}

pub fn evaluate_predictions_with(preds: &[LabelMap], truths: &[LabelMap], rule: EmptyRule) -> Result<DiceReport> {
    if truths.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    if preds.len() != truths.len() {
        return Err(Error::invalid("one prediction per test slice is required"));
    }
    let mut per_class = PerClass::default();
    let mut excluded = PerClassCount::default();
    for class in Class::FOREGROUND {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (p, t) in preds.iter().zip(truths) {
            match (dice(p, t, class)?, rule) {
                (Some(d), _) => sum += d,
                (None, EmptyRule::ScoreOne) => sum += 1.0,
                (None, EmptyRule::Exclude) => continue,
            }
            n += 1;
        }
        let skipped = truths.len() - n;
        match class {
            Class::Rv => excluded.RV = skipped,
            Class::Myo => excluded.MYO = skipped,
            Class::Lv => excluded.LV = skipped,
            Class::Background => {}
        }
        per_class.set(class, (n > 0).then(|| sum / n as f64));
    }
    let defined: Vec<f64> = Class::FOREGROUND.iter().filter_map(|&c| per_class.get(c)).collect();
    let mean = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(DiceReport {
        regime: None,
        test_split: None,
        finetune: FinetuneTag::default(),
        per_class,
        mean,
        n_slices: truths.len(),
        seed: None,
        empty_rule: rule,
        excluded,
    })
}

pub fn evaluate(model: &Segmenter, images: &[GrayImage], truths: &[LabelMap]) -> Result<DiceReport> {
    evaluate_with(model, images, truths, EmptyRule::Exclude)
}

pub fn evaluate_with(model: &Segmenter, images: &[GrayImage], truths: &[LabelMap], rule: EmptyRule) -> Result<DiceReport> {
    if images.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    if images.len() != truths.len() {
        return Err(Error::invalid("images and label maps differ in count"));
    }
    evaluate_predictions_with(&model.predict(images)?, truths, rule)
}
