//! Dataset handling and image preprocessing.

mod augment;
mod batch;
mod image;
mod split;
mod synthetic;

pub use augment::{
    adjust_brightness, adjust_contrast, adjust_saturation, augment, augment_sample, gaussian_blur, grayscale,
    hflip, random_resized_crop, rotate, vflip, AugmentationConfig,
};
pub use batch::make_batches;
pub use image::{decode_ppm, denormalize, encode_ppm, normalize, resize_bilinear, Image, NormalizationStats};
pub use split::{stratified_split, DatasetSplits};
pub use synthetic::blob_dataset;

use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};

/// One labelled image; `label` is 1 for malignant, 0 otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub image: Image,
    pub label: u8,
}

const MALIGNANT: [&str; 3] = ["mel", "bcc", "akiec"];
const NON_MALIGNANT: [&str; 4] = ["nv", "bkl", "vasc", "df"];

/// Maps a manifest label (`0`/`1` or a lesion code) to the binary target.
pub fn parse_label(raw: &str) -> Result<u8> {
    let s = raw.trim();
    match s {
        "0" => Ok(0),
        "1" => Ok(1),
        _ if MALIGNANT.contains(&s) => Ok(1),
        _ if NON_MALIGNANT.contains(&s) => Ok(0),
        _ => Err(Error::Label(format!("unknown label code {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lesion_codes() {
        for code in ["mel", "bcc", "akiec", "1"] {
            assert_eq!(parse_label(code).unwrap(), 1);
        }
        for code in ["nv", "bkl", "vasc", "df", "0"] {
            assert_eq!(parse_label(code).unwrap(), 0);
        }
        assert!(parse_label("xyz").is_err());
        assert!(parse_label("2").is_err());
    }
}
