use alloc::format;
use alloc::vec::Vec;
use num_traits::Float;

use super::{Image, ImageSample};
use crate::rng::Rng;

/// A linearly separable toy set: each image is mid-gray noise with one soft
/// blob, bright for malignant (odd indices) and dark otherwise.
pub fn blob_dataset(n: usize, size: usize, seed: u64) -> Vec<ImageSample> {
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let mut rng = Rng::from_parts(&[seed, i as u64, 0xB10B]);
            let s = size as f64;
            let (cy, cx) = (rng.uniform(0.3, 0.7) * s, rng.uniform(0.3, 0.7) * s);
            let radius = rng.uniform(0.12, 0.2) * s;
            let target = if label == 1 { 0.95 } else { 0.05 };
            let mut img = Image::filled(size, size, [0.5; 3]);
            for y in 0..size {
                for x in 0..size {
                    let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                    let a = Float::exp(-d2 / (2.0 * radius * radius));
                    for c in 0..3 {
                        let noise = rng.uniform(-0.05, 0.05);
                        let v = 0.5 + a * (target - 0.5) + noise;
                        img.set(y, x, c, v.clamp(0.0, 1.0) as f32);
                    }
                }
            }
            ImageSample {
                id: format!("blob_{i:04}"),
                image: img,
                label,
            }
        })
        .collect()
}
