use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PreprocessError, RawImage};
use crate::rng::stream_rng;

/// Geometric and photometric augmentation settings.
///
/// Brightness, contrast and saturation factors are drawn from
/// `Uniform[1 - r, 1 + r]`; the hue shift from `Uniform[-r, r]` in turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub horizontal_flip_prob: f64,
    pub vertical_flip_prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub target_size: u32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            horizontal_flip_prob: 0.5,
            vertical_flip_prob: 0.5,
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.1,
            hue: 0.02,
            target_size: 256,
        }
    }
}

impl AugmentConfig {
    /// No flips and no jitter.
    pub fn identity(target_size: u32) -> Self {
        Self {
            horizontal_flip_prob: 0.0,
            vertical_flip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            target_size,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.horizontal_flip_prob == 0.0
            && self.vertical_flip_prob == 0.0
            && self.brightness == 0.0
            && self.contrast == 0.0
            && self.saturation == 0.0
            && self.hue == 0.0
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        for (name, p) in [("horizontal_flip_prob", self.horizontal_flip_prob), ("vertical_flip_prob", self.vertical_flip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(PreprocessError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        for (name, r) in [("brightness", self.brightness), ("contrast", self.contrast), ("saturation", self.saturation)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(PreprocessError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(0.0..=0.5).contains(&self.hue) {
            return Err(PreprocessError::Config("hue must lie in [0, 0.5]".into()));
        }
        if self.target_size == 0 {
            return Err(PreprocessError::Config("target_size must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn flip_horizontal(image: &RawImage) -> RawImage {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let src = image.data();
    let mut data = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let i = (y * w + x) * 3;
            data.extend_from_slice(&src[i..i + 3]);
        }
    }
    RawImage::new(image.width(), image.height(), data).expect("same dimensions")
}

pub(crate) fn flip_vertical(image: &RawImage) -> RawImage {
    let w = image.width() as usize * 3;
    let data = image.data().chunks_exact(w).rev().flatten().copied().collect();
    RawImage::new(image.width(), image.height(), data).expect("same dimensions")
}

fn luminance(p: &[f64]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn rgb_to_hsv(p: &[f64]) -> (f64, f64, f64) {
    let (r, g, b) = (p[0], p[1], p[2]);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    (hue, sat, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Apply brightness, contrast, saturation and hue in that order with the
/// given factors. Each stage clamps to `[0, 255]`; rounding happens once at
/// the end.
pub(crate) fn jitter(image: &RawImage, brightness: f64, contrast: f64, saturation: f64, hue: f64) -> RawImage {
    let mut px: Vec<f64> = image.data().iter().map(|&v| f64::from(v)).collect();
    let clamp = |v: f64| v.clamp(0.0, 255.0);
    if brightness != 1.0 {
        px.iter_mut().for_each(|v| *v = clamp(*v * brightness));
    }
    if contrast != 1.0 {
        let mean = px.chunks_exact(3).map(luminance).sum::<f64>() / (px.len() / 3) as f64;
        px.iter_mut().for_each(|v| *v = clamp((*v - mean) * contrast + mean));
    }
    if saturation != 1.0 {
        for p in px.chunks_exact_mut(3) {
            let gray = luminance(p);
            p.iter_mut().for_each(|v| *v = clamp(gray + (*v - gray) * saturation));
        }
    }
    if hue != 0.0 {
        for p in px.chunks_exact_mut(3) {
            let (h, s, v) = rgb_to_hsv(p);
            let rgb = hsv_to_rgb(h + hue, s, v);
            p.iter_mut().zip(rgb).for_each(|(dst, src)| *dst = clamp(src));
        }
    }
    let data = px.into_iter().map(|v| v.round() as u8).collect();
    RawImage::new(image.width(), image.height(), data).expect("same dimensions")
}

/// Random flips followed by color jitter, deterministic in `rng_seed`.
pub fn augment(image: &RawImage, config: &AugmentConfig, rng_seed: u64) -> RawImage {
    let mut rng = stream_rng(rng_seed, 0xA06);
    let hflip = rng.random::<f64>() < config.horizontal_flip_prob;
    let vflip = rng.random::<f64>() < config.vertical_flip_prob;
    let mut factor = |r: f64, centre: f64| if r > 0.0 { rng.random_range(centre - r..=centre + r) } else { centre };
    let b = factor(config.brightness, 1.0);
    let c = factor(config.contrast, 1.0);
    let s = factor(config.saturation, 1.0);
    let h = factor(config.hue, 0.0);

    let mut out = image.clone();
    if hflip {
        out = flip_horizontal(&out);
    }
    if vflip {
        out = flip_vertical(&out);
    }
    if b != 1.0 || c != 1.0 || s != 1.0 || h != 0.0 {
        out = jitter(&out, b, c, s, h);
    }
    out
}
