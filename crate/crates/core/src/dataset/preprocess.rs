use std::fs;

use image::imageops::{self, FilterType};
use image::{DynamicImage, Rgb32FImage};
use serde::{Deserialize, Serialize};

use super::{DatasetError, SampleEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPolicy {
    /// Single-channel images are copied into three identical channels.
    ReplicateGrayTo3,
    /// Only three-channel images are accepted.
    Keep3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_height: u32,
    pub target_width: u32,
    pub channel_policy: ChannelPolicy,
    /// Per-channel mean, applied after scaling pixels to [0, 1].
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_height: 224,
            target_width: 224,
            channel_policy: ChannelPolicy::ReplicateGrayTo3,
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

impl PreprocessConfig {
    pub fn with_size(size: u32) -> Self {
        Self {
            target_height: size,
            target_width: size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.target_height == 0 || self.target_width == 0 {
            return Err(DatasetError::InvalidConfig(
                "target dimensions must be positive".into(),
            ));
        }
        if self.std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(DatasetError::InvalidConfig(
                "std components must be positive and finite".into(),
            ));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(DatasetError::InvalidConfig("mean must be finite".into()));
        }
        Ok(())
    }
}

/// A normalized image in height × width × channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl ImageTensor {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Values rearranged channel-major (C × H × W).
    pub fn to_chw(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.values.len()];
        for (i, px) in self.values.chunks_exact(self.channels).enumerate() {
            for (c, v) in px.iter().enumerate() {
                out[c * plane + i] = *v;
            }
        }
        out
    }
}

/// Decodes, resizes and normalizes an already-decoded image.
pub fn preprocess_image(
    img: &DynamicImage,
    cfg: &PreprocessConfig,
    source_name: &str,
) -> Result<ImageTensor, DatasetError> {
    cfg.validate()?;
    let channels = img.color().channel_count();
    match (channels, cfg.channel_policy) {
        (1, ChannelPolicy::ReplicateGrayTo3) | (3, _) => {}
        _ => {
            return Err(DatasetError::UnsupportedChannelCount {
                source_name: source_name.to_string(),
                channels,
            })
        }
    }
    // to_rgb32f scales integer samples into [0, 1] and replicates luma.
    let rgb: Rgb32FImage = img.to_rgb32f();
    let (w, h) = (cfg.target_width, cfg.target_height);
    let rgb = if rgb.dimensions() == (w, h) {
        rgb
    } else {
        imageops::resize(&rgb, w, h, FilterType::Triangle)
    };
    let mut values = rgb.into_raw();
    for px in values.chunks_exact_mut(3) {
        for c in 0..3 {
            px[c] = (px[c].clamp(0.0, 1.0) - cfg.mean[c]) / cfg.std[c];
        }
    }
    Ok(ImageTensor {
        height: h as usize,
        width: w as usize,
        channels: 3,
        values,
    })
}

/// Decodes raw encoded image bytes and preprocesses them.
pub fn preprocess_bytes(
    bytes: &[u8],
    cfg: &PreprocessConfig,
    source_name: &str,
) -> Result<ImageTensor, DatasetError> {
    let img = image::load_from_memory(bytes).map_err(|e| DatasetError::DecodeError {
        source_name: source_name.to_string(),
        message: e.to_string(),
    })?;
    preprocess_image(&img, cfg, source_name)
}

pub fn load_sample(entry: &SampleEntry, cfg: &PreprocessConfig) -> Result<ImageTensor, DatasetError> {
    let bytes = fs::read(&entry.image_path).map_err(|e| DatasetError::io(&entry.image_path, e))?;
    preprocess_bytes(&bytes, cfg, &entry.image_path.to_string_lossy())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use crate::label::parse_label;
    use image::{GrayImage, Luma, Rgba, RgbaImage};
    use std::io::Cursor;

    fn png_bytes(img: DynamicImage) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png).unwrap();
        buf.into_inner()
    }

    fn gradient(w: u32, h: u32) -> DynamicImage {
        DynamicImage::ImageLuma8(GrayImage::from_fn(w, h, |x, y| Luma([((x * 7 + y * 3) % 256) as u8])))
    }

    #[test]
    fn grayscale_is_resized_and_replicated() {
        let t = preprocess_bytes(&png_bytes(gradient(64, 64)), &PreprocessConfig::default(), "g").unwrap();
        assert_eq!(t.shape(), (224, 224, 3));
        assert_eq!(t.values.len(), 224 * 224 * 3);
        for px in t.values.chunks_exact(3) {
            assert_eq!(px[0], px[1]);
            assert_eq!(px[1], px[2]);
        }
        assert!(t.values.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn constant_image_normalizes_to_zero() {
        let value = 100u8;
        let img = DynamicImage::ImageLuma8(GrayImage::from_pixel(37, 53, Luma([value])));
        let m = value as f32 / 255.0;
        let cfg = PreprocessConfig {
            target_height: 20,
            target_width: 30,
            mean: [m; 3],
            std: [1.0; 3],
            ..PreprocessConfig::default()
        };
        let t = preprocess_bytes(&png_bytes(img), &cfg, "c").unwrap();
        assert_eq!(t.shape(), (20, 30, 3));
        assert!(t.values.iter().all(|v| v.abs() < 1e-6), "{:?}", &t.values[..6]);
    }

    #[test]
    fn output_shape_is_independent_of_input_size() {
        let cfg = PreprocessConfig::with_size(16);
        for (w, h) in [(1, 1), (5, 90), (300, 17), (16, 16)] {
            let t = preprocess_image(&gradient(w, h), &cfg, "x").unwrap();
            assert_eq!(t.shape(), (16, 16, 3));
        }
    }

    #[test]
    fn channel_policy_is_enforced() {
        let rgba = DynamicImage::ImageRgba8(RgbaImage::from_pixel(4, 4, Rgba([1, 2, 3, 255])));
        let err = preprocess_image(&rgba, &PreprocessConfig::default(), "a.png").unwrap_err();
        assert!(matches!(err, DatasetError::UnsupportedChannelCount { channels: 4, .. }));

        let keep = PreprocessConfig {
            channel_policy: ChannelPolicy::Keep3,
            ..PreprocessConfig::with_size(4)
        };
        assert!(matches!(
            preprocess_image(&gradient(4, 4), &keep, "g"),
            Err(DatasetError::UnsupportedChannelCount { channels: 1, .. })
        ));
        let rgb = DynamicImage::ImageRgb8(image::RgbImage::from_pixel(4, 4, image::Rgb([255, 0, 128])));
        let t = preprocess_image(&rgb, &keep, "rgb").unwrap();
        assert_eq!(&t.values[..3], &[1.0, -1.0, (128.0 / 255.0 - 0.5) / 0.5]);
    }

    #[test]
    fn corrupt_bytes_fail_to_decode() {
        let err = preprocess_bytes(b"not an image", &PreprocessConfig::default(), "junk").unwrap_err();
        assert!(matches!(err, DatasetError::DecodeError { .. }));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = PreprocessConfig::default();
        cfg.std[1] = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = PreprocessConfig { target_width: 0, ..PreprocessConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn load_sample_reads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        std::fs::write(&path, png_bytes(gradient(9, 9))).unwrap();
        let entry = SampleEntry {
            image_path: path,
            label: parse_label("mri.brain.tumor-test.no-tumor").unwrap(),
            split: Split::Train,
        };
        let t = load_sample(&entry, &PreprocessConfig::with_size(8)).unwrap();
        assert_eq!(t.shape(), (8, 8, 3));
        let chw = t.to_chw();
        assert_eq!(chw[0], t.values[0]);
        assert_eq!(chw[64], t.values[1]);
    }
}
