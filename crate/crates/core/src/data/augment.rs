//! Training-time augmentation, applied in a fixed order: random resized
//! crop, rotation, horizontal flip, vertical flip, color jitter
//! (brightness, contrast, saturation), random grayscale, Gaussian blur.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use super::image::{resize_bilinear, Image};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationConfig {
    /// When false the training path only resizes, like validation.
    pub enabled: bool,
    /// Fraction of the source area kept by the crop.
    pub crop_scale: (f64, f64),
    /// Width/height ratio of the crop.
    pub crop_aspect: (f64, f64),
    pub rotation_degrees: f64,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Multiplicative factor range shared by brightness, contrast and saturation.
    pub jitter_factor_range: (f64, f64),
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub blur_sigma_range: (f64, f64),
    pub blur_kernel: usize,
    pub output_size: usize,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            enabled: true,
            crop_scale: (0.8, 1.0),
            crop_aspect: (3.0 / 4.0, 4.0 / 3.0),
            rotation_degrees: 20.0,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            jitter_factor_range: (0.8, 1.2),
            grayscale_prob: 0.1,
            blur_prob: 0.5,
            blur_sigma_range: (0.1, 2.0),
            blur_kernel: 5,
            output_size: 224,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("hflip_prob", self.hflip_prob),
            ("vflip_prob", self.vflip_prob),
            ("grayscale_prob", self.grayscale_prob),
            ("blur_prob", self.blur_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        for (name, (lo, hi)) in [
            ("crop_scale", self.crop_scale),
            ("crop_aspect", self.crop_aspect),
            ("jitter_factor_range", self.jitter_factor_range),
            ("blur_sigma_range", self.blur_sigma_range),
        ] {
            if !(lo <= hi) || lo <= 0.0 {
                return Err(Error::Config(format!("{name} must be a nonempty positive interval")));
            }
        }
        if self.crop_scale.1 > 1.0 {
            return Err(Error::config("crop_scale upper bound must be at most 1"));
        }
        if !(self.rotation_degrees >= 0.0) {
            return Err(Error::config("rotation_degrees must be nonnegative"));
        }
        if self.blur_kernel == 0 || self.blur_kernel % 2 == 0 {
            return Err(Error::config("blur_kernel must be odd"));
        }
        if self.output_size == 0 {
            return Err(Error::config("output_size must be positive"));
        }
        Ok(())
    }
}

/// Augments with randomness drawn from `(global_seed, epoch, sample_index)`.
pub fn augment_sample(
    img: &Image,
    cfg: &AugmentationConfig,
    global_seed: u64,
    epoch: u64,
    sample_index: u64,
) -> Result<Image> {
    let mut rng = Rng::from_parts(&[global_seed, epoch, sample_index]);
    augment(img, cfg, &mut rng)
}

pub fn augment(img: &Image, cfg: &AugmentationConfig, rng: &mut Rng) -> Result<Image> {
    cfg.validate()?;
    if img.height < 2 || img.width < 2 || img.channels != 3 {
        return Err(Error::Image(format!(
            "augmentation needs an RGB image of at least 2x2, got {}x{}x{}",
            img.height, img.width, img.channels
        )));
    }
    let mut out = random_resized_crop(img, cfg, rng)?;
    let angle = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees);
    out = rotate(&out, angle);
    if rng.bernoulli(cfg.hflip_prob) {
        out = hflip(&out);
    }
    if rng.bernoulli(cfg.vflip_prob) {
        out = vflip(&out);
    }
    let (jl, jh) = cfg.jitter_factor_range;
    let b = rng.uniform(jl, jh) as f32;
    let c = rng.uniform(jl, jh) as f32;
    let s = rng.uniform(jl, jh) as f32;
    adjust_brightness(&mut out, b);
    adjust_contrast(&mut out, c);
    adjust_saturation(&mut out, s);
    if rng.bernoulli(cfg.grayscale_prob) {
        grayscale(&mut out);
    }
    if rng.bernoulli(cfg.blur_prob) {
        let sigma = rng.uniform(cfg.blur_sigma_range.0, cfg.blur_sigma_range.1);
        out = gaussian_blur(&out, cfg.blur_kernel, sigma);
    }
    for v in &mut out.data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Crops a region with area fraction in `crop_scale` and aspect ratio in
/// `crop_aspect`, then resizes it to `output_size`. After ten failed draws it
/// falls back to the largest centered square.
pub fn random_resized_crop(img: &Image, cfg: &AugmentationConfig, rng: &mut Rng) -> Result<Image> {
    let (h, w) = (img.height, img.width);
    let area = (h * w) as f64;
    let mut region = None;
    for _ in 0..10 {
        let target = area * rng.uniform(cfg.crop_scale.0, cfg.crop_scale.1);
        let aspect = rng.uniform(cfg.crop_aspect.0, cfg.crop_aspect.1);
        let cw = Float::round(Float::sqrt(target * aspect)) as usize;
        let ch = Float::round(Float::sqrt(target / aspect)) as usize;
        if (1..=w).contains(&cw) && (1..=h).contains(&ch) {
            let top = rng.below(h - ch + 1);
            let left = rng.below(w - cw + 1);
            region = Some((top, left, ch, cw));
            break;
        }
    }
    let (top, left, ch, cw) = region.unwrap_or_else(|| {
        let side = h.min(w);
        ((h - side) / 2, (w - side) / 2, side, side)
    });
    let crop = img.crop(top, left, ch, cw)?;
    resize_bilinear(&crop, cfg.output_size, cfg.output_size)
}

/// Rotates about the image center by `degrees` (counter-clockwise) with
/// bilinear sampling; samples falling outside the source read as 0.
pub fn rotate(img: &Image, degrees: f64) -> Image {
    if degrees == 0.0 {
        return img.clone();
    }
    let (h, w, c) = (img.height, img.width, img.channels);
    let theta = degrees.to_radians();
    let (sin, cos) = (Float::sin(theta), Float::cos(theta));
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let fetch = |y: isize, x: isize, ch: usize| -> f32 {
        if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
            0.0
        } else {
            img.at(y as usize, x as usize, ch)
        }
    };
    let mut out = Image {
        height: h,
        width: w,
        channels: c,
        data: vec![0.0; h * w * c],
    };
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = x as f64 - cx;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let (x0, y0) = (Float::floor(sx), Float::floor(sy));
            let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let top = fetch(y0, x0, ch) * (1.0 - fx) + fetch(y0, x0 + 1, ch) * fx;
                let bot = fetch(y0 + 1, x0, ch) * (1.0 - fx) + fetch(y0 + 1, x0 + 1, ch) * fx;
                out.set(y, x, ch, (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
            }
        }
    }
    out
}

pub fn hflip(img: &Image) -> Image {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            for ch in 0..img.channels {
                out.set(y, x, ch, img.at(y, img.width - 1 - x, ch));
            }
        }
    }
    out
}

pub fn vflip(img: &Image) -> Image {
    let mut out = img.clone();
    let row = img.width * img.channels;
    for y in 0..img.height {
        let src = (img.height - 1 - y) * row;
        out.data[y * row..(y + 1) * row].copy_from_slice(&img.data[src..src + row]);
    }
    out
}

fn luma(p: &[f32]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

pub fn adjust_brightness(img: &mut Image, factor: f32) {
    for v in &mut img.data {
        *v = (*v * factor).clamp(0.0, 1.0);
    }
}

/// Scales the distance of every value from the mean luma of the image.
pub fn adjust_contrast(img: &mut Image, factor: f32) {
    let n = (img.height * img.width) as f64;
    let mean = (img.data.chunks(3).map(|p| luma(p) as f64).sum::<f64>() / n) as f32;
    for v in &mut img.data {
        *v = ((*v - mean) * factor + mean).clamp(0.0, 1.0);
    }
}

/// Scales each pixel's distance from its own gray value.
pub fn adjust_saturation(img: &mut Image, factor: f32) {
    for p in img.data.chunks_mut(3) {
        let g = luma(p);
        for v in p {
            *v = ((*v - g) * factor + g).clamp(0.0, 1.0);
        }
    }
}

pub fn grayscale(img: &mut Image) {
    for p in img.data.chunks_mut(3) {
        let g = luma(p).clamp(0.0, 1.0);
        p.fill(g);
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(img: &Image, kernel: usize, sigma: f64) -> Image {
    let r = (kernel / 2) as isize;
    let mut weights: Vec<f32> = (-r..=r)
        .map(|i| Float::exp(-((i * i) as f64) / (2.0 * sigma * sigma)) as f32)
        .collect();
    let total: f32 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let (h, w, c) = (img.height, img.width, img.channels);
    let mut tmp = img.clone();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &wt) in weights.iter().enumerate() {
                    acc += wt * img.at(y, reflect(x as isize + k as isize - r, w), ch);
                }
                tmp.set(y, x, ch, acc);
            }
        }
    }
    let mut out = tmp.clone();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &wt) in weights.iter().enumerate() {
                    acc += wt * tmp.at(reflect(y as isize + k as isize - r, h), x, ch);
                }
                out.set(y, x, ch, acc.clamp(0.0, 1.0));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(h: usize, w: usize) -> Image {
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&[x as f32 / w as f32, y as f32 / h as f32, 0.3]);
            }
        }
        Image::new(h, w, 3, data).unwrap()
    }

    #[test]
    fn flips_are_involutions() {
        let img = gradient_image(7, 5);
        assert_eq!(hflip(&hflip(&img)), img);
        assert_eq!(vflip(&vflip(&img)), img);
        assert_ne!(hflip(&img), img);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = gradient_image(9, 6);
        assert_eq!(rotate(&img, 0.0), img);
    }

    #[test]
    fn rotation_keeps_uniform_interior() {
        let img = Image::filled(32, 32, [0.25, 0.5, 0.75]);
        let r = rotate(&img, 17.0);
        for y in 8..24 {
            for x in 8..24 {
                for (ch, want) in [0.25, 0.5, 0.75].into_iter().enumerate() {
                    assert!((r.at(y, x, ch) - want).abs() < 1e-6);
                }
            }
        }
        // corners fall outside the source and get the fill value
        assert!(r.at(0, 0, 0) < 0.25);
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = Image::filled(6, 6, [0.4, 0.4, 0.4]);
        let b = gaussian_blur(&img, 5, 1.3);
        for v in b.data {
            assert!((v - 0.4).abs() < 1e-6);
        }
    }

    #[test]
    fn output_is_sized_and_deterministic() {
        let img = gradient_image(40, 30);
        let cfg = AugmentationConfig {
            output_size: 24,
            ..Default::default()
        };
        let a = augment_sample(&img, &cfg, 1, 2, 3).unwrap();
        let b = augment_sample(&img, &cfg, 1, 2, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.height, a.width, a.channels), (24, 24, 3));
        assert!(a.in_unit_range());
        assert_ne!(a, augment_sample(&img, &cfg, 1, 3, 3).unwrap());
    }

    #[test]
    fn invalid_config() {
        let cfg = AugmentationConfig {
            hflip_prob: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = AugmentationConfig {
            crop_scale: (0.9, 0.8),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
