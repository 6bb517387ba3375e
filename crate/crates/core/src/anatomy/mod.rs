//! Label maps, grayscale slices, and the operations on them that do not
//! involve a network: one-hot coding, argmax decoding, label downsampling,
//! anatomical validity checks, and the procedural phantom generator.

pub mod io;
mod phantom;
mod validity;

pub use phantom::{generate_phantom, PhantomProfile, PhantomSpec};
pub use validity::{check_validity, ValidityReport, Violation};
use validity::components as validity_components;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Class {
    Background = 0,
    Rv = 1,
    Myo = 2,
    Lv = 3,
}

impl Class {
    pub const ALL: [Class; 4] = [Class::Background, Class::Rv, Class::Myo, Class::Lv];
    pub const FOREGROUND: [Class; 3] = [Class::Rv, Class::Myo, Class::Lv];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Class> {
        Class::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Background => "BG",
            Class::Rv => "RV",
            Class::Myo => "MYO",
            Class::Lv => "LV",
        }
    }
}

/// Grid of class ids: 0 background, 1 RV cavity, 2 myocardium, 3 LV cavity.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("label map must have positive size"));
        }
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "label map data has {} cells, expected {height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&c| c as usize >= NUM_CLASSES) {
            return Err(Error::ClassOutOfRange {
                row: i / width,
                col: i % width,
                class: data[i],
                num_classes: NUM_CLASSES,
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, class: Class) -> Self {
        assert!(height > 0 && width > 0, "label map must have positive size");
        Self {
            height,
            width,
            data: vec![class.id(); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, class: Class) {
        self.data[row * self.width + col] = class.id();
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self, class: Class) -> usize {
        self.data.iter().filter(|&&c| c == class.id()).count()
    }

    /// Shifts content by `(dy, dx)`; vacated cells become background.
    pub fn translated(&self, dy: isize, dx: isize) -> LabelMap {
        let mut out = LabelMap::filled(self.height, self.width, Class::Background);
        for r in 0..self.height {
            for c in 0..self.width {
                let (sr, sc) = (r as isize - dy, c as isize - dx);
                if sr >= 0 && sc >= 0 && (sr as usize) < self.height && (sc as usize) < self.width {
                    out.data[r * self.width + c] = self.get(sr as usize, sc as usize);
                }
            }
        }
        out
    }
}

/// Single-channel slice with intensities in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::invalid(format!(
                "image data has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("image contains non-finite value {v}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// 16-bit code for storage: `v / 32767.5 - 1` decodes it back.
    pub fn encode_u16(value: f32) -> u16 {
        (((value.clamp(-1.0, 1.0) as f64) + 1.0) * 32767.5).round() as u16
    }

    pub fn decode_u16(code: u16) -> f32 {
        (code as f64 / 32767.5 - 1.0) as f32
    }

    /// Snaps every value to the 16-bit storage grid so that writing and
    /// re-reading the image is lossless.
    pub fn quantized(mut self) -> Self {
        for v in &mut self.data {
            *v = Self::decode_u16(Self::encode_u16(*v));
        }
        self
    }

    pub fn mean_over(&self, map: &LabelMap, class: Class) -> Option<f64> {
        let (sum, n) = self
            .data
            .iter()
            .zip(map.as_slice())
            .filter(|(_, &c)| c == class.id())
            .fold((0.0, 0usize), |(s, n), (v, _)| (s + *v as f64, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// `C×H×W` stack of per-class scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStack {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ClassStack {
    pub fn new(classes: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != classes * height * width {
            return Err(Error::invalid(format!(
                "class stack has {} values, expected {classes}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            classes,
            height,
            width,
            data,
        })
    }

    pub fn at(&self, class: usize, row: usize, col: usize) -> f32 {
        self.data[(class * self.height + row) * self.width + col]
    }
}

pub fn one_hot(map: &LabelMap, num_classes: usize) -> Result<ClassStack> {
    let plane = map.height * map.width;
    let mut data = vec![0f32; num_classes * plane];
    for (i, &c) in map.data.iter().enumerate() {
        if c as usize >= num_classes {
            return Err(Error::ClassOutOfRange {
                row: i / map.width,
                col: i % map.width,
                class: c,
                num_classes,
            });
        }
        data[c as usize * plane + i] = 1.0;
    }
    ClassStack::new(num_classes, map.height, map.width, data)
}

/// Per-pixel argmax; ties go to the lowest class id.
pub fn argmax_decode(probs: &ClassStack) -> Result<LabelMap> {
    if probs.classes == 0 || probs.classes > NUM_CLASSES {
        return Err(Error::invalid(format!(
            "cannot decode {} channels into a label map",
            probs.classes
        )));
    }
    if let Some(i) = probs.data.iter().position(|v| v.is_nan()) {
        let plane = probs.height * probs.width;
        let p = i % plane;
        return Err(Error::invalid(format!(
            "NaN score at class {} (row {}, col {})",
            i / plane,
            p / probs.width,
            p % probs.width
        )));
    }
    let plane = probs.height * probs.width;
    let data = (0..plane)
        .map(|p| {
            let mut best = 0;
            for c in 1..probs.classes {
                if probs.data[c * plane + p] > probs.data[best * plane + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(probs.height, probs.width, data)
}

/// Nearest-neighbour subsampling taking the top-left cell of each block.
pub fn downsample_labels(map: &LabelMap, factor: usize) -> Result<LabelMap> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::invalid(format!("downsample factor {factor} is not a power of two")));
    }
    if map.height % factor != 0 || map.width % factor != 0 {
        return Err(Error::invalid(format!(
            "{}x{} map is not divisible by {factor}",
            map.height, map.width
        )));
    }
    let (h, w) = (map.height / factor, map.width / factor);
    let data = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .map(|(r, c)| map.get(r * factor, c * factor))
        .collect();
    LabelMap::new(h, w, data)
}
