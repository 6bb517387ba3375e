//! Procedural short-axis phantoms: an LV blood pool inside a myocardial ring
//! with an RV crescent hugging the ring, rendered as a noisy MR-like slice.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Class, GrayImage, LabelMap};
use crate::error::{Error, Result};

/// Peak amplitude of the smooth background ramp.
const BACKGROUND_RAMP: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    /// (row, col) of the LV centre in pixels.
    pub lv_center: (f64, f64),
    pub lv_radius: f64,
    pub myo_thickness: f64,
    /// Ratio of the ring's long to short axis; 1 gives a circle.
    pub lv_aspect: f64,
    /// Angular extent of the RV crescent, radians.
    pub rv_span: f64,
    /// Angular offset of the crescent centre from the image's left side, radians.
    pub rv_offset: f64,
    /// Maximal radial width of the crescent, pixels.
    pub rv_width: f64,
    pub rotation: f64,
    /// Mean intensity per class, indexed by class id.
    pub intensities: [f64; 4],
    pub noise_std: f64,
}

/// Intensity look of a phantom corpus. Two profiles give two "scanners" so
/// cross-dataset evaluation has something to generalize across.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PhantomProfile {
    #[default]
    A,
    B,
}

impl PhantomProfile {
    fn base(self) -> ([f64; 4], f64) {
        match self {
            PhantomProfile::A => ([-0.5, 0.55, -0.25, 0.7], 0.08),
            PhantomProfile::B => ([-0.35, 0.35, -0.5, 0.5], 0.12),
        }
    }
}

impl std::str::FromStr for PhantomProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(PhantomProfile::A),
            "b" => Ok(PhantomProfile::B),
            other => Err(Error::invalid(format!("unknown phantom profile `{other}`"))),
        }
    }
}

impl PhantomSpec {
    /// Draws a plausible spec that fits a `height × width` frame.
    pub fn random<R: Rng>(rng: &mut R, height: usize, width: usize, profile: PhantomProfile) -> Self {
        let s = height.min(width) as f64;
        let (base, noise) = profile.base();
        let mut intensities = base;
        for v in &mut intensities {
            *v += rng.random_range(-0.05..0.05);
        }
        let jitter = (rng.random_range(-0.06..0.06) * s, rng.random_range(-0.06..0.06) * s);
        let mut spec = Self {
            lv_center: (height as f64 / 2.0 + jitter.0, width as f64 / 2.0 + jitter.1),
            lv_radius: rng.random_range(0.09..0.15) * s,
            myo_thickness: (rng.random_range(0.045..0.07) * s).max(2.5),
            lv_aspect: rng.random_range(0.85..1.18),
            rv_span: rng.random_range(1.7..2.6),
            rv_offset: rng.random_range(-0.3..0.3),
            rv_width: (rng.random_range(0.08..0.14) * s).max(3.0),
            rotation: rng.random_range(-0.5..0.5),
            intensities,
            noise_std: noise * rng.random_range(0.8..1.2),
        };
        let ext = spec.outer_extent();
        let clamp = |v: f64, n: usize| v.clamp(ext, (n as f64 - 1.0 - ext).max(ext));
        spec.lv_center = (clamp(spec.lv_center.0, height), clamp(spec.lv_center.1, width));
        spec
    }

    fn axis_scales(&self) -> (f64, f64) {
        let a = self.lv_aspect.sqrt();
        (a, 1.0 / a)
    }

    /// Radius of the circle that contains every foreground pixel.
    pub fn outer_extent(&self) -> f64 {
        let (a, b) = self.axis_scales();
        (self.lv_radius + self.myo_thickness + self.rv_width) * a.max(b) + 1.5
    }

    fn validate(&self, height: usize, width: usize) -> Result<()> {
        let finite = [
            self.lv_center.0,
            self.lv_center.1,
            self.lv_radius,
            self.myo_thickness,
            self.lv_aspect,
            self.rv_span,
            self.rv_offset,
            self.rv_width,
            self.rotation,
            self.noise_std,
        ]
        .iter()
        .chain(self.intensities.iter())
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("phantom spec contains non-finite values"));
        }
        if self.lv_radius < 1.5 || self.myo_thickness < 2.0 || self.rv_width < 2.0 {
            return Err(Error::invalid(
                "phantom needs lv_radius >= 1.5, myo_thickness >= 2, rv_width >= 2",
            ));
        }
        if !(0.5..=2.0).contains(&self.lv_aspect) || !(0.2..=PI).contains(&self.rv_span) || self.noise_std < 0.0 {
            return Err(Error::invalid("phantom aspect, span, or noise out of range"));
        }
        let ext = self.outer_extent();
        let (cy, cx) = self.lv_center;
        if cy - ext < 0.0 || cx - ext < 0.0 || cy + ext > height as f64 - 1.0 || cx + ext > width as f64 - 1.0 {
            return Err(Error::invalid(format!(
                "phantom geometry (centre {:?}, extent {ext:.1}) does not fit a {height}x{width} frame",
                self.lv_center
            )));
        }
        Ok(())
    }

    fn rasterize(&self, height: usize, width: usize) -> LabelMap {
        let (sa, sb) = self.axis_scales();
        let (sin, cos) = self.rotation.sin_cos();
        let myo_outer = self.lv_radius + self.myo_thickness;
        let rv_centre = PI + self.rv_offset;
        let half_span = self.rv_span / 2.0;
        let mut map = LabelMap::filled(height, width, Class::Background);
        for r in 0..height {
            for c in 0..width {
                let (dy, dx) = (r as f64 - self.lv_center.0, c as f64 - self.lv_center.1);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                let d = ((u / sa).powi(2) + (v / sb).powi(2)).sqrt();
                let class = if d <= self.lv_radius {
                    Class::Lv
                } else if d <= myo_outer {
                    Class::Myo
                } else {
                    let mut dphi = v.atan2(u) - rv_centre;
                    dphi = (dphi + PI).rem_euclid(2.0 * PI) - PI;
                    let t = dphi / half_span;
                    if t.abs() < 1.0 && d <= myo_outer + self.rv_width * (1.0 - t * t).sqrt() {
                        Class::Rv
                    } else {
                        Class::Background
                    }
                };
                map.set(r, c, class);
            }
        }
        keep_largest_component(&mut map, Class::Rv);
        map
    }
}

/// Crescent tips can fragment on the pixel grid; drop all but the largest RV piece.
fn keep_largest_component(map: &mut LabelMap, class: Class) {
    let comps = super::validity_components(map, class);
    if comps.len() <= 1 {
        return;
    }
    let largest = comps.iter().enumerate().max_by_key(|(_, c)| c.len()).map(|(i, _)| i).unwrap_or(0);
    for (i, comp) in comps.iter().enumerate() {
        if i != largest {
            for &p in comp {
                map.data[p] = Class::Background.id();
            }
        }
    }
}

/// Renders a phantom pair. The image is snapped to the 16-bit storage grid.
pub fn generate_phantom<R: Rng>(
    spec: &PhantomSpec,
    rng: &mut R,
    height: usize,
    width: usize,
) -> Result<(GrayImage, LabelMap)> {
    spec.validate(height, width)?;
    let map = spec.rasterize(height, width);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let ramp_dir: f64 = rng.random_range(0.0..2.0 * PI);
    let (rs, rc) = ramp_dir.sin_cos();
    let half = height.max(width) as f64 / 2.0;
    let mut data = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let class = map.get(r, c);
            let mut v = spec.intensities[class as usize] + noise.sample(rng);
            if class == Class::Background.id() {
                let t = ((c as f64 - width as f64 / 2.0) * rc + (r as f64 - height as f64 / 2.0) * rs) / half;
                v += BACKGROUND_RAMP * t;
            }
            data.push(v.clamp(-1.0, 1.0) as f32);
        }
    }
    Ok((GrayImage::new(height, width, data)?.quantized(), map))
}
