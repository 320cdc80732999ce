//! Synthetic stand-in for the labeled corpus: procedurally drawn grayscale
//! images, one distinct texture per class, at any scale of the published
//! per-class counts.

use std::f32::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DatasetError, Split};
use crate::label::{catalog, format_label, NUM_CLASSES};

/// Published per-class image counts `(label, train, val)` in catalog order.
pub const REFERENCE_COUNTS: [(&str, usize, usize); NUM_CLASSES] = [
    ("ct-scan.chest.cancer-test.adenocarcinoma", 1093, 274),
    ("ct-scan.chest.cancer-test.benign", 96, 24),
    ("ct-scan.chest.cancer-test.large-cell-carcinoma", 628, 158),
    ("ct-scan.chest.cancer-test.malignant", 448, 113),
    ("ct-scan.chest.cancer-test.normal", 1011, 253),
    ("ct-scan.chest.cancer-test.squamous-cell-carcinoma", 881, 221),
    ("mri.brain.alzheimer-test.mild-demented", 7884, 1972),
    ("mri.brain.alzheimer-test.moderate-demented", 5222, 1306),
    ("mri.brain.alzheimer-test.non-demented", 10242, 2560),
    ("mri.brain.alzheimer-test.very-mild-demented", 8960, 2240),
    ("mri.brain.tumor-test.glioma-tumor", 1881, 471),
    ("mri.brain.tumor-test.meningioma-tumor", 1316, 329),
    ("mri.brain.tumor-test.no-tumor", 400, 100),
    ("mri.brain.tumor-test.pituitary-tumor", 1464, 367),
    ("oct-scan.rential.rential-oct-test.choroidal-neovascularization", 29964, 7491),
    ("oct-scan.rential.rential-oct-test.diabetic-macular-edema", 9278, 2320),
    ("oct-scan.rential.rential-oct-test.multiple-drusen", 7092, 1780),
    ("oct-scan.rential.rential-oct-test.normal", 21254, 5331),
    ("ultrasound.breast.cancer-test.benign", 3780, 945),
    ("ultrasound.breast.cancer-test.malignant", 3553, 889),
    ("ultrasound.breast.cancer-test.normal", 106, 27),
    ("xray.chest.pneumonia-test.covid19", 460, 116),
    ("xray.chest.pneumonia-test.normal", 1266, 317),
    ("xray.chest.pneumonia-test.pneumonia", 3418, 855),
    ("xray.chest.pneumonia-test.turberculosis", 560, 140),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCount {
    pub label: String,
    pub train: usize,
    pub val: usize,
}

pub fn reference_counts() -> Vec<ExpectedCount> {
    scaled_reference_counts(1.0)
}

/// Per-class counts at `scale` of the published table: `round(n · scale)`,
/// never below 1. A scale of exactly 1 reproduces the table.
pub fn scaled_reference_counts(scale: f64) -> Vec<ExpectedCount> {
    let scaled = |n: usize| -> usize {
        if scale == 1.0 {
            n
        } else {
            ((n as f64 * scale).round() as usize).max(1)
        }
    };
    REFERENCE_COUNTS
        .iter()
        .map(|&(label, train, val)| ExpectedCount {
            label: label.to_string(),
            train: scaled(train),
            val: scaled(val),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    /// Fraction of the published counts to generate.
    pub scale: f64,
    /// Fixed `(train, val)` count for every class; overrides `scale`.
    pub per_class: Option<(usize, usize)>,
    /// Side length of the square images, in pixels.
    pub image_size: u32,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            per_class: None,
            image_size: 32,
            seed: 0,
        }
    }
}

impl FixtureConfig {
    pub fn expected_counts(&self) -> Vec<ExpectedCount> {
        match self.per_class {
            Some((train, val)) => catalog()
                .entries()
                .iter()
                .map(|l| ExpectedCount {
                    label: format_label(l),
                    train,
                    val,
                })
                .collect(),
            None => scaled_reference_counts(self.scale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSummary {
    pub root: PathBuf,
    pub expected: Vec<ExpectedCount>,
    pub files_written: usize,
}

/// Draws sample `index` of class `class` in `split`.
///
/// Each class gets a sinusoidal grating with its own orientation (class mod 5)
/// and spatial frequency (class div 5), plus per-sample phase jitter and noise.
pub fn render_class_image(class: usize, split: Split, index: usize, size: u32, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ ((class as u64) << 40) ^ ((split as u64) << 36) ^ index as u64,
    );
    let angle = (class % 5) as f32 * PI / 5.0;
    let cycles = 1.0 + (class / 5) as f32;
    let (dx, dy) = (angle.cos(), angle.sin());
    let phase: f32 = rng.random_range(-0.3..0.3);
    let s = size as f32;
    GrayImage::from_fn(size, size, |x, y| {
        let u = (x as f32 * dx + y as f32 * dy) / s;
        let v = 0.5 + 0.35 * (2.0 * PI * cycles * u + phase).sin();
        let noise: f32 = rng.random_range(-0.08..0.08);
        Luma([((v + noise).clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

/// Writes a synthetic corpus under `root/{train,val}/<label>/NNNNNN.png`.
pub fn generate_fixture(root: &Path, cfg: &FixtureConfig) -> Result<FixtureSummary, DatasetError> {
    if cfg.image_size == 0 {
        return Err(DatasetError::InvalidConfig("image_size must be positive".into()));
    }
    let expected = cfg.expected_counts();
    let mut jobs = Vec::new();
    for (class, exp) in expected.iter().enumerate() {
        for (split, n) in [(Split::Train, exp.train), (Split::Val, exp.val)] {
            let dir = root.join(split.as_str()).join(&exp.label);
            fs::create_dir_all(&dir).map_err(|e| DatasetError::io(&dir, e))?;
            jobs.extend((0..n).map(|i| (class, split, i, dir.join(format!("{i:06}.png")))));
        }
    }
    jobs.par_iter().try_for_each(|(class, split, index, path)| {
        render_class_image(*class, *split, *index, cfg.image_size, cfg.seed)
            .save(path)
            .map_err(|e| DatasetError::DecodeError {
                source_name: path.to_string_lossy().into_owned(),
                message: e.to_string(),
            })
    })?;
    Ok(FixtureSummary {
        root: root.to_path_buf(),
        expected,
        files_written: jobs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{scan_directory, validate_manifest};

    #[test]
    fn table_matches_catalog_and_totals() {
        for ((label, _, _), entry) in REFERENCE_COUNTS.iter().zip(catalog().entries()) {
            assert_eq!(*label, format_label(entry));
        }
        let train: usize = REFERENCE_COUNTS.iter().map(|r| r.1).sum();
        let val: usize = REFERENCE_COUNTS.iter().map(|r| r.2).sum();
        assert_eq!((train, val), (122_257, 30_599));
        assert_eq!(train + val, 152_856);
    }

    #[test]
    fn scaling_rounds_with_floor_of_one() {
        let one_pct = scaled_reference_counts(0.01);
        let benign = &one_pct[1];
        assert_eq!((benign.train, benign.val), (1, 1)); // 0.96 -> 1, 0.24 -> floor 1
        let cnv = &one_pct[14];
        assert_eq!((cnv.train, cnv.val), (300, 75)); // 299.64, 74.91
        assert_eq!(scaled_reference_counts(1.0), reference_counts());
    }

    #[test]
    fn classes_render_differently() {
        let a = render_class_image(0, Split::Train, 0, 16, 1);
        let b = render_class_image(1, Split::Train, 0, 16, 1);
        let a2 = render_class_image(0, Split::Train, 0, 16, 1);
        assert_eq!(a, a2);
        assert_ne!(a, b);
    }

    #[test]
    fn small_fixture_scans_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = FixtureConfig {
            per_class: Some((2, 1)),
            image_size: 8,
            ..FixtureConfig::default()
        };
        let summary = generate_fixture(dir.path(), &cfg).unwrap();
        assert_eq!(summary.files_written, 75);
        let manifest = scan_directory(dir.path()).unwrap();
        let report = validate_manifest(&manifest);
        assert!(report.passed(), "{report}");
        assert!(report.count_mismatches(&summary.expected).is_empty());
        assert_eq!((report.total_train, report.total_val), (50, 25));
    }
}
