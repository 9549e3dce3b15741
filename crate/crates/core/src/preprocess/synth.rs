use rand::seq::SliceRandom;
use rand::Rng;

use super::{PreprocessError, RawImage};
use crate::partition::apportion;
use crate::rng::{derive_seed, stream_rng};

/// Rounded ISIC 2019 class proportions in label order MEL, NV, BCC, AK,
/// BKL, DF, VASC, SCC.
/// The four rare classes share the remaining 9 % equally.
pub const ISIC_PROPORTIONS: [f64; 8] = [0.18, 0.50, 0.13, 0.0225, 0.10, 0.0225, 0.0225, 0.0225];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub id: String,
    pub image: RawImage,
    pub label: usize,
    pub age: Option<u32>,
    pub sex: Option<&'static str>,
    pub anatomical_site: Option<&'static str>,
}

/// Apportion `n` items over `proportions` with floors plus the leftover
/// given to the largest remainders (ties go to the lower index).
pub fn largest_remainder(n: usize, proportions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    apportion(&exact, n)
}

struct ClassStyle {
    color: [f64; 3],
    texture: Texture,
}

#[derive(Clone, Copy)]
enum Texture {
    Plain,
    HorizontalStripes,
    VerticalStripes,
    Rings,
    Checker,
    DarkCore,
    BrightRim,
    Speckle,
}

const STYLES: [ClassStyle; 8] = [
    ClassStyle { color: [80.0, 50.0, 40.0], texture: Texture::Rings },
    ClassStyle { color: [140.0, 95.0, 70.0], texture: Texture::Plain },
    ClassStyle { color: [190.0, 120.0, 130.0], texture: Texture::VerticalStripes },
    ClassStyle { color: [170.0, 110.0, 90.0], texture: Texture::HorizontalStripes },
    ClassStyle { color: [120.0, 90.0, 60.0], texture: Texture::Checker },
    ClassStyle { color: [150.0, 100.0, 80.0], texture: Texture::DarkCore },
    ClassStyle { color: [170.0, 60.0, 80.0], texture: Texture::BrightRim },
    ClassStyle { color: [175.0, 130.0, 120.0], texture: Texture::Speckle },
];

const SITES: [&str; 5] = ["anterior torso", "posterior torso", "upper extremity", "lower extremity", "head/neck"];

fn render(label: usize, size: u32, rng: &mut impl Rng) -> RawImage {
    let style = &STYLES[label % STYLES.len()];
    let s = f64::from(size);
    let tint = rng.random_range(-15.0..15.0);
    let skin = [205.0 + tint, 165.0 + tint, 145.0 + tint];
    let lesion: Vec<f64> = style.color.iter().map(|c| c + rng.random_range(-25.0..25.0)).collect();
    let cx = s / 2.0 + rng.random_range(-s / 6.0..s / 6.0);
    let cy = s / 2.0 + rng.random_range(-s / 6.0..s / 6.0);
    let radius = s * rng.random_range(0.22..0.38);
    let period = (s / 8.0).max(2.0);

    let mut data = Vec::with_capacity((size * size * 3) as usize);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
            let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
            let base: [f64; 3] = if d <= radius {
                let wave = |t: f64| (t * std::f64::consts::TAU / period).sin();
                let shade = match style.texture {
                    Texture::Plain => 0.0,
                    Texture::HorizontalStripes => 30.0 * wave(py),
                    Texture::VerticalStripes => 30.0 * wave(px),
                    Texture::Rings => 30.0 * wave(d),
                    Texture::Checker => 30.0 * wave(px).signum() * wave(py).signum(),
                    Texture::DarkCore => if d < radius * 0.45 { -45.0 } else { 0.0 },
                    Texture::BrightRim => if d > radius * 0.7 { 45.0 } else { 0.0 },
                    Texture::Speckle => if rng.random::<f64>() < 0.25 { -50.0 } else { 0.0 },
                };
                [lesion[0] + shade, lesion[1] + shade, lesion[2] + shade]
            } else {
                skin
            };
            for c in base {
                data.push((c + rng.random_range(-20.0..20.0)).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RawImage::new(size, size, data).expect("rendered dimensions")
}

/// Generate `n` labelled lesion-like images. Class counts follow
/// [`largest_remainder`]; sample order is shuffled so ids carry no label
/// information.
pub fn synth_dataset(
    n: usize,
    proportions: &[f64],
    image_size: u32,
    seed: u64,
) -> Result<Vec<SyntheticSample>, PreprocessError> {
    if proportions.is_empty() || proportions.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(PreprocessError::Config("proportions must be non-negative numbers".into()));
    }
    let sum: f64 = proportions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(PreprocessError::Config(format!("proportions sum to {sum}, expected 1")));
    }
    if n < proportions.len() {
        return Err(PreprocessError::Config(format!("n = {n} is smaller than the class count {}", proportions.len())));
    }
    if image_size < 4 {
        return Err(PreprocessError::Config("image_size must be at least 4".into()));
    }
    let counts = largest_remainder(n, proportions);
    let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(k, &c)| std::iter::repeat_n(k, c)).collect();
    labels.shuffle(&mut stream_rng(seed, 0x5A3D));

    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut rng = stream_rng(derive_seed(seed, &[i as u64]), 0x1A6E);
            let image = render(label, image_size, &mut rng);
            let age = (rng.random::<f64>() < 0.85).then(|| rng.random_range(5..=85u32) / 5 * 5);
            let sex = match rng.random_range(0..10) {
                0 => None,
                1..=5 => Some("male"),
                _ => Some("female"),
            };
            let anatomical_site = (rng.random::<f64>() < 0.9).then(|| SITES[rng.random_range(0..SITES.len())]);
            SyntheticSample { id: format!("img-{i:06}"), image, label, age, sex, anatomical_site }
        })
        .collect())
}
