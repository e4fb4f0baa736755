use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Interleaved (HWC) pixels with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Image(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Image {
            height,
            width,
            channels: 3,
            data,
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + ch] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let at = (y * self.width + x) * self.channels;
        &self.data[at..at + self.channels]
    }

    /// Sub-image of `h×w` starting at row `top`, column `left`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Image> {
        if h == 0 || w == 0 || top + h > self.height || left + w > self.width {
            return Err(Error::Image(format!(
                "crop {h}x{w}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in top..top + h {
            let start = (y * self.width + left) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Image::new(h, w, c, data)
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

fn skip_ws_and_comments(bytes: &[u8], mut i: usize) -> usize {
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else {
            return i;
        }
    }
}

fn header_number(bytes: &[u8], i: &mut usize, what: &str) -> Result<usize> {
    *i = skip_ws_and_comments(bytes, *i);
    let start = *i;
    while *i < bytes.len() && bytes[*i].is_ascii_digit() {
        *i += 1;
    }
    core::str::from_utf8(&bytes[start..*i])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Image(format!("bad PPM {what}")))
}

/// Decodes a binary `P6` PPM with maxval 255 into `[0, 1]` RGB.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let magic = bytes.get(..2).unwrap_or(bytes);
        return Err(Error::Image(format!(
            "unsupported format {:?}: only binary P6 PPM is accepted",
            core::str::from_utf8(magic).unwrap_or("?")
        )));
    }
    let mut i = 2;
    let width = header_number(bytes, &mut i, "width")?;
    let height = header_number(bytes, &mut i, "height")?;
    let maxval = header_number(bytes, &mut i, "maxval")?;
    if maxval != 255 {
        return Err(Error::Image(format!("unsupported PPM maxval {maxval}, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Image("empty PPM image".into()));
    }
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(Error::Image("truncated PPM header".into()));
    }
    i += 1;
    let need = width * height * 3;
    let payload = &bytes[i..];
    if payload.len() < need {
        return Err(Error::Image(format!(
            "truncated PPM payload: {} of {need} bytes",
            payload.len()
        )));
    }
    let data = payload[..need].iter().map(|&b| b as f32 / 255.0).collect();
    Image::new(height, width, 3, data)
}

/// Encodes an RGB image as binary P6, rounding to the nearest byte.
pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(Error::Image("PPM needs 3 channels".into()));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8));
    Ok(out)
}

/// Bilinear resampling with half-pixel centers: the source coordinate of
/// output index `d` is `(d + 0.5)·in/out − 0.5`, clamped to the image.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Image(format!("zero resize target {out_h}x{out_w}")));
    }
    if img.height == 0 || img.width == 0 {
        return Err(Error::Image("cannot resize an empty image".into()));
    }
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = taps(img.height, out_h);
    let xs = taps(img.width, out_w);
    let c = img.channels;
    let mut data = vec![0.0f32; out_h * out_w * c];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for ch in 0..c {
                let top = img.at(y0, x0, ch) * (1.0 - fx) + img.at(y0, x1, ch) * fx;
                let bot = img.at(y1, x0, ch) * (1.0 - fx) + img.at(y1, x1, ch) * fx;
                data[(oy * out_w + ox) * c + ch] = (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0);
            }
        }
    }
    Image::new(out_h, out_w, c, data)
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl NormalizationStats {
    pub const IMAGENET: NormalizationStats = NormalizationStats {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().all(|&s| s > 0.0) {
            Ok(())
        } else {
            Err(Error::config("normalization std must be strictly positive"))
        }
    }
}

impl Default for NormalizationStats {
    fn default() -> Self {
        Self::IMAGENET
    }
}

/// `(x − μ)/σ` per channel, returned channel-first as `[3×H×W]`.
pub fn normalize(img: &Image, stats: &NormalizationStats) -> Result<Tensor<f32>> {
    stats.validate()?;
    if img.channels != 3 {
        return Err(Error::Image("normalize needs an RGB image".into()));
    }
    let (h, w) = (img.height, img.width);
    let mut out = vec![0.0f32; 3 * h * w];
    for ch in 0..3 {
        let (m, s) = (stats.mean[ch], stats.std[ch]);
        for y in 0..h {
            for x in 0..w {
                out[(ch * h + y) * w + x] = (img.at(y, x, ch) - m) / s;
            }
        }
    }
    Tensor::new(&[3, h, w], out)
}

/// Inverse of [`normalize`].
pub fn denormalize(t: &Tensor<f32>, stats: &NormalizationStats) -> Result<Image> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Image(format!("expected a 3xHxW tensor, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut img = Image::new(h, w, 3, vec![0.0; h * w * 3])?;
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                img.set(y, x, ch, t.data()[(ch * h + y) * w + x] * stats.std[ch] + stats.mean[ch]);
            }
        }
    }
    Ok(img)
}
