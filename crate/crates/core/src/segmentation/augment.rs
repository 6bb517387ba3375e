//! Paired geometric augmentation. A transform is sampled once and applied to
//! the image (bilinear) and the label map (nearest neighbour) alike.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anatomy::{GrayImage, LabelMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub max_rotation_deg: f64,
    pub flip_h_prob: f64,
    pub flip_v_prob: f64,
    /// Largest shift as a fraction of the width (horizontal) or height (vertical).
    pub max_shift: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_rotation_deg: 15.0,
            flip_h_prob: 0.5,
            flip_v_prob: 0.5,
            max_shift: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = 0.0..=1.0;
        if !p.contains(&self.flip_h_prob) || !p.contains(&self.flip_v_prob) {
            return Err(Error::invalid("flip probabilities must lie in [0, 1]"));
        }
        if !(self.max_rotation_deg >= 0.0) || !(self.max_shift >= 0.0) {
            return Err(Error::invalid("augmentation maxima must be non-negative"));
        }
        Ok(())
    }
}

/// One sampled transform: flip, then rotate about the centre, then shift.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentParams {
    pub angle_rad: f64,
    pub flip_h: bool,
    pub flip_v: bool,
    /// Columns to the right.
    pub dx: i64,
    /// Rows down.
    pub dy: i64,
}

impl AugmentParams {
    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    /// Source coordinate (row, col) for an output pixel.
    fn source(&self, r: usize, c: usize, h: usize, w: usize) -> (f64, f64) {
        let (mut y, mut x) = ((r as i64 - self.dy) as f64, (c as i64 - self.dx) as f64);
        if self.angle_rad != 0.0 {
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            let (s, co) = (-self.angle_rad).sin_cos();
            let (oy, ox) = (y - cy, x - cx);
            y = cy + co * oy + s * ox;
            x = cx - s * oy + co * ox;
        }
        if self.flip_v {
            y = h as f64 - 1.0 - y;
        }
        if self.flip_h {
            x = w as f64 - 1.0 - x;
        }
        (y, x)
    }
}

pub fn sample_augment_params<R: Rng>(rng: &mut R, cfg: &AugmentConfig, height: usize, width: usize) -> AugmentParams {
    if !cfg.enabled {
        return AugmentParams::default();
    }
    let max_rad = cfg.max_rotation_deg.to_radians();
    let angle_rad = if max_rad > 0.0 { rng.random_range(-max_rad..=max_rad) } else { 0.0 };
    let flip_h = rng.random_bool(cfg.flip_h_prob);
    let flip_v = rng.random_bool(cfg.flip_v_prob);
    let mx = (cfg.max_shift * width as f64).floor() as i64;
    let my = (cfg.max_shift * height as f64).floor() as i64;
    AugmentParams {
        angle_rad,
        flip_h,
        flip_v,
        dx: rng.random_range(-mx..=mx),
        dy: rng.random_range(-my..=my),
    }
}

pub fn transform_map(map: &LabelMap, p: &AugmentParams) -> LabelMap {
    let (h, w) = (map.height(), map.width());
    let mut data = vec![0u8; h * w];
    for r in 0..h {
        for c in 0..w {
            let (y, x) = p.source(r, c, h, w);
            let (yi, xi) = ((y + 0.5).floor(), (x + 0.5).floor());
            if yi >= 0.0 && xi >= 0.0 && (yi as usize) < h && (xi as usize) < w {
                data[r * w + c] = map.get(yi as usize, xi as usize);
            }
        }
    }
    LabelMap::new(h, w, data).expect("ids come from a valid map")
}

pub fn transform_image(img: &GrayImage, p: &AugmentParams) -> GrayImage {
    let (h, w) = (img.height(), img.width());
    let tap = |y: i64, x: i64| -> f64 {
        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
            img.get(y as usize, x as usize) as f64
        } else {
            -1.0
        }
    };
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (y, x) = p.source(r, c, h, w);
            let (y0, x0) = (y.floor(), x.floor());
            let (fy, fx) = (y - y0, x - x0);
            let (y0, x0) = (y0 as i64, x0 as i64);
            let v = (1.0 - fy) * ((1.0 - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1))
                + fy * ((1.0 - fx) * tap(y0 + 1, x0) + fx * tap(y0 + 1, x0 + 1));
            data.push(v as f32);
        }
    }
    GrayImage::new(h, w, data).expect("size preserved")
}

pub fn apply_augment(img: &GrayImage, map: &LabelMap, p: &AugmentParams) -> Result<(GrayImage, LabelMap)> {
    if (img.height(), img.width()) != (map.height(), map.width()) {
        return Err(Error::invalid("image and label map differ in size"));
    }
    if p.is_identity() {
        return Ok((img.clone(), map.clone()));
    }
    Ok((transform_image(img, p), transform_map(map, p)))
}

/// Samples one transform and applies it to both inputs; returns it as well.
pub fn augment<R: Rng>(
    img: &GrayImage,
    map: &LabelMap,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> Result<(GrayImage, LabelMap, AugmentParams)> {
    let p = sample_augment_params(rng, cfg, map.height(), map.width());
    let (i, m) = apply_augment(img, map, &p)?;
    Ok((i, m, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::{generate_phantom, Class, PhantomProfile, PhantomSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn phantom(seed: u64) -> (GrayImage, LabelMap) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s = PhantomSpec::random(&mut rng, 32, 32, PhantomProfile::A);
        generate_phantom(&s, &mut rng, 32, 32).unwrap()
    }

    #[test]
    fn disabled_is_identity() {
        let (img, map) = phantom(1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let (i, m, p) = augment(&img, &map, &mut rng, &AugmentConfig::disabled()).unwrap();
        assert!(p.is_identity());
        assert_eq!((i, m), (img, map));
    }

    #[test]
    fn double_horizontal_flip_is_identity() {
        let (img, map) = phantom(2);
        let p = AugmentParams {
            flip_h: true,
            ..Default::default()
        };
        let (i1, m1) = apply_augment(&img, &map, &p).unwrap();
        assert_ne!(m1, map);
        let (i2, m2) = apply_augment(&i1, &m1, &p).unwrap();
        assert_eq!((i2, m2), (img, map));
    }

    #[test]
    fn forced_shift_moves_pixels_and_clears_margin() {
        let mut map = LabelMap::filled(32, 32, Class::Background);
        map.set(10, 10, Class::Lv);
        let img = GrayImage::filled(32, 32, 0.5);
        let p = AugmentParams {
            dx: 5,
            ..Default::default()
        };
        let (i, m) = apply_augment(&img, &map, &p).unwrap();
        assert_eq!(m.get(10, 15), Class::Lv.id());
        assert_eq!(m.count(Class::Lv), 1);
        assert!((0..32).all(|r| (0..5).all(|c| m.get(r, c) == 0 && i.get(r, c) == -1.0)));
        assert_eq!(i.get(3, 20), 0.5);
    }

    #[test]
    fn quarter_turn_matches_index_arithmetic() {
        let (_, map) = phantom(3);
        let p = AugmentParams {
            angle_rad: std::f64::consts::FRAC_PI_2,
            ..Default::default()
        };
        let m = transform_map(&map, &p);
        // Output (r, c) reads source (31 - c, r) under a quarter turn about the centre.
        for r in 0..32 {
            for c in 0..32 {
                assert_eq!(m.get(r, c), map.get(31 - c, r), "({r}, {c})");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn image_and_map_share_one_transform(seed in any::<u64>(), pseed in 0u64..50) {
            let (img, map) = phantom(pseed);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (i, m, p) = augment(&img, &map, &mut rng, &AugmentConfig::default()).unwrap();
            prop_assert_eq!(&transform_map(&map, &p), &m);
            prop_assert_eq!(&transform_image(&img, &p), &i);
            prop_assert!(i.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
