//! Labeled image corpus: directory scanning, manifests, validation and
//! class-distribution statistics.
//!
//! Layout on disk is `ROOT/{train,val}/<label>/<image>`, where `<label>` is the
//! dot-delimited hierarchical label.

mod fixture;
mod preprocess;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{catalog, format_label, parse_label, HierarchicalLabel, LabelError};

pub use fixture::{
    generate_fixture, render_class_image, scaled_reference_counts, reference_counts, ExpectedCount,
    FixtureConfig, FixtureSummary, REFERENCE_COUNTS,
};
pub use preprocess::{
    load_sample, preprocess_bytes, preprocess_image, ChannelPolicy, ImageTensor, PreprocessConfig,
};

const IMAGE_EXTENSIONS: [&str; 7] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff", "gif"];
const MANIFEST_MAGIC: &str = "# imagedx-manifest v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no split directory under {root}: expected train/ and/or val/")]
    MissingSplitDirectory { root: PathBuf },
    #[error("directory {path}: {source}")]
    MalformedLabel { path: PathBuf, source: LabelError },
    #[error("dataset under {root} contains no images")]
    EmptyDataset { root: PathBuf },
    #[error("cannot decode image {source_name}: {message}")]
    DecodeError { source_name: String, message: String },
    #[error("unsupported channel count {channels} in {source_name}")]
    UnsupportedChannelCount { source_name: String, channels: u8 },
    #[error("invalid preprocess config: {0}")]
    InvalidConfig(String),
    #[error("manifest line {line}: {message}")]
    ManifestSyntax { line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl DatasetError {
    fn io(path: &Path, source: io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Val];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub image_path: PathBuf,
    pub label: HierarchicalLabel,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub created_at: DateTime<Utc>,
    pub entries: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<SampleEntry>) -> Self {
        Self {
            root: root.into(),
            created_at: Utc::now(),
            entries,
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Writes the manifest as tab-separated `path<TAB>label<TAB>split` records.
    pub fn write_to(&self, mut out: impl Write) -> Result<(), DatasetError> {
        let wrap = |e| DatasetError::io(Path::new("<manifest>"), e);
        writeln!(out, "{MANIFEST_MAGIC}").map_err(wrap)?;
        writeln!(out, "# root={}", self.root.display()).map_err(wrap)?;
        writeln!(
            out,
            "# created_at={}",
            self.created_at.to_rfc3339_opts(SecondsFormat::Millis, true)
        )
        .map_err(wrap)?;
        for (i, entry) in self.entries.iter().enumerate() {
            let path = entry.image_path.to_string_lossy();
            if path.contains(['\t', '\n', '\r']) {
                return Err(DatasetError::ManifestSyntax {
                    line: i + 4,
                    message: format!("path {path:?} contains a tab or newline"),
                });
            }
            writeln!(out, "{path}\t{}\t{}", format_label(&entry.label), entry.split)
                .map_err(wrap)?;
        }
        out.flush().map_err(wrap)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let file = fs::File::create(path).map_err(|e| DatasetError::io(path, e))?;
        self.write_to(BufWriter::new(file))
    }

    pub fn read_from(input: impl BufRead) -> Result<Self, DatasetError> {
        let mut root = PathBuf::new();
        let mut created_at = None;
        let mut entries = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| DatasetError::io(Path::new("<manifest>"), e))?;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix("# ") {
                if let Some(v) = meta.strip_prefix("root=") {
                    root = PathBuf::from(v);
                } else if let Some(v) = meta.strip_prefix("created_at=") {
                    let ts = DateTime::parse_from_rfc3339(v).map_err(|e| {
                        DatasetError::ManifestSyntax {
                            line: lineno,
                            message: format!("bad created_at: {e}"),
                        }
                    })?;
                    created_at = Some(ts.with_timezone(&Utc));
                }
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, label, split] = fields[..] else {
                return Err(DatasetError::ManifestSyntax {
                    line: lineno,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            };
            let label = parse_label(label).map_err(|e| DatasetError::ManifestSyntax {
                line: lineno,
                message: e.to_string(),
            })?;
            let split = split
                .parse()
                .map_err(|message| DatasetError::ManifestSyntax {
                    line: lineno,
                    message,
                })?;
            entries.push(SampleEntry {
                image_path: PathBuf::from(path),
                label,
                split,
            });
        }
        Ok(Self {
            root,
            created_at: created_at.unwrap_or_else(Utc::now),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let file = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
        Self::read_from(io::BufReader::new(file))
    }
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_dir(path: &Path) -> Result<Vec<fs::DirEntry>, DatasetError> {
    let mut entries = fs::read_dir(path)
        .map_err(|e| DatasetError::io(path, e))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| DatasetError::io(path, e))?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

/// Enumerates every image under `root/{train,val}/<label>/`.
///
/// Entries come back sorted by path. A split directory that is absent is
/// treated as empty, but at least one of the two must exist.
pub fn scan_directory(root: &Path) -> Result<DatasetManifest, DatasetError> {
    let mut entries = Vec::new();
    let mut found_split = false;
    for split in Split::ALL {
        let split_dir = root.join(split.as_str());
        if !split_dir.is_dir() {
            continue;
        }
        found_split = true;
        for label_dir in sorted_dir(&split_dir)? {
            let label_path = label_dir.path();
            if !label_path.is_dir() {
                continue;
            }
            let name = label_dir.file_name();
            let name = name.to_string_lossy();
            if name.starts_with('.') {
                continue;
            }
            let label = parse_label(&name).map_err(|source| DatasetError::MalformedLabel {
                path: label_path.clone(),
                source,
            })?;
            for file in sorted_dir(&label_path)? {
                let path = file.path();
                if path.is_file() && is_image_file(&path) {
                    entries.push(SampleEntry {
                        image_path: path,
                        label: label.clone(),
                        split,
                    });
                }
            }
        }
    }
    if !found_split {
        return Err(DatasetError::MissingSplitDirectory {
            root: root.to_path_buf(),
        });
    }
    if entries.is_empty() {
        return Err(DatasetError::EmptyDataset {
            root: root.to_path_buf(),
        });
    }
    entries.sort_by(|a, b| a.image_path.cmp(&b.image_path));
    Ok(DatasetManifest::new(root, entries))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCount {
    pub label: String,
    pub train: usize,
    pub val: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Catalog labels in class order, followed by any unknown labels.
    pub counts: Vec<LabelCount>,
    pub total_train: usize,
    pub total_val: usize,
    pub unknown_labels: Vec<(PathBuf, String)>,
    pub missing_files: Vec<PathBuf>,
    pub duplicates: Vec<PathBuf>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.unknown_labels.is_empty() && self.missing_files.is_empty() && self.duplicates.is_empty()
    }

    pub fn count_for(&self, label: &str) -> Option<&LabelCount> {
        self.counts.iter().find(|c| c.label == label)
    }

    /// Labels whose observed counts differ from `expected`.
    pub fn count_mismatches(&self, expected: &[ExpectedCount]) -> Vec<String> {
        let mut out = Vec::new();
        for exp in expected {
            let (train, val) = self
                .count_for(&exp.label)
                .map(|c| (c.train, c.val))
                .unwrap_or((0, 0));
            if train != exp.train || val != exp.val {
                out.push(format!(
                    "{}: expected train {} val {}, found train {train} val {val}",
                    exp.label, exp.train, exp.val
                ));
            }
        }
        out
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<64} {:>8} {:>8}", "label", "train", "val")?;
        for c in &self.counts {
            writeln!(f, "{:<64} {:>8} {:>8}", c.label, c.train, c.val)?;
        }
        writeln!(f, "{:<64} {:>8} {:>8}", "total", self.total_train, self.total_val)?;
        for (path, label) in &self.unknown_labels {
            writeln!(f, "unknown label {label}: {}", path.display())?;
        }
        for path in &self.missing_files {
            writeln!(f, "missing file: {}", path.display())?;
        }
        for path in &self.duplicates {
            writeln!(f, "duplicate path: {}", path.display())?;
        }
        write!(f, "status: {}", if self.passed() { "ok" } else { "FAILED" })
    }
}

/// Checks a manifest for unknown labels, missing files and duplicate paths,
/// and tallies per-label per-split counts. Never fails; problems are reported.
pub fn validate_manifest(manifest: &DatasetManifest) -> ValidationReport {
    let cat = catalog();
    let mut counts: Vec<LabelCount> = cat
        .entries()
        .iter()
        .map(|l| LabelCount {
            label: format_label(l),
            train: 0,
            val: 0,
        })
        .collect();
    let mut extra: BTreeMap<String, LabelCount> = BTreeMap::new();
    let mut seen = HashSet::with_capacity(manifest.entries.len());
    let mut report = ValidationReport {
        counts: Vec::new(),
        total_train: 0,
        total_val: 0,
        unknown_labels: Vec::new(),
        missing_files: Vec::new(),
        duplicates: Vec::new(),
    };
    for entry in &manifest.entries {
        let slot = match cat.index_of(&entry.label) {
            Some(i) => &mut counts[i],
            None => {
                let name = format_label(&entry.label);
                report
                    .unknown_labels
                    .push((entry.image_path.clone(), name.clone()));
                extra.entry(name.clone()).or_insert(LabelCount {
                    label: name,
                    train: 0,
                    val: 0,
                })
            }
        };
        match entry.split {
            Split::Train => {
                slot.train += 1;
                report.total_train += 1;
            }
            Split::Val => {
                slot.val += 1;
                report.total_val += 1;
            }
        }
        if !seen.insert(&entry.image_path) {
            report.duplicates.push(entry.image_path.clone());
        }
        if !entry.image_path.is_file() {
            report.missing_files.push(entry.image_path.clone());
        }
    }
    counts.extend(extra.into_values());
    report.counts = counts;
    report
}

/// Per-catalog-label counts for one split; labels absent from the split map to 0.
pub fn class_distribution(
    manifest: &DatasetManifest,
    split: Split,
) -> BTreeMap<HierarchicalLabel, usize> {
    let mut dist: BTreeMap<HierarchicalLabel, usize> =
        catalog().entries().iter().map(|l| (l.clone(), 0)).collect();
    for entry in manifest.split(split) {
        if let Some(count) = dist.get_mut(&entry.label) {
            *count += 1;
        }
    }
    dist
}

/// Class index of every entry in `split`, or the first entry whose label is
/// outside the catalog.
pub(crate) fn indexed_split(
    manifest: &DatasetManifest,
    split: Split,
) -> Result<Vec<(&SampleEntry, usize)>, HierarchicalLabel> {
    let cat = catalog();
    let mut cache: HashMap<&HierarchicalLabel, usize> = HashMap::new();
    manifest
        .split(split)
        .map(|e| {
            if let Some(&i) = cache.get(&e.label) {
                return Ok((e, i));
            }
            let i = cat.index_of(&e.label).ok_or_else(|| e.label.clone())?;
            cache.insert(&e.label, i);
            Ok((e, i))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn touch(path: &Path) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, b"x").unwrap();
    }

    #[test]
    fn scans_single_file_layout() {
        let dir = tempdir().unwrap();
        touch(&dir.path().join("train/mri.brain.tumor-test.no-tumor/img1.png"));
        let manifest = scan_directory(dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 1);
        let entry = &manifest.entries[0];
        assert_eq!(entry.split, Split::Train);
        assert_eq!(format_label(&entry.label), "mri.brain.tumor-test.no-tumor");
    }

    #[test]
    fn malformed_label_directory_is_an_error() {
        let dir = tempdir().unwrap();
        touch(&dir.path().join("train/mri.brain/img1.png"));
        let err = scan_directory(dir.path()).unwrap_err();
        assert!(
            matches!(err, DatasetError::MalformedLabel { source: LabelError::SegmentCount { found: 2, .. }, .. }),
            "{err}"
        );
    }

    #[test]
    fn missing_splits_and_empty_dataset() {
        let dir = tempdir().unwrap();
        assert!(matches!(
            scan_directory(dir.path()),
            Err(DatasetError::MissingSplitDirectory { .. })
        ));
        fs::create_dir_all(dir.path().join("train/mri.brain.tumor-test.no-tumor")).unwrap();
        fs::create_dir_all(dir.path().join("val")).unwrap();
        assert!(matches!(
            scan_directory(dir.path()),
            Err(DatasetError::EmptyDataset { .. })
        ));
    }

    #[test]
    fn scan_is_sorted_and_skips_non_images() {
        let dir = tempdir().unwrap();
        let root = dir.path();
        touch(&root.join("val/xray.chest.pneumonia-test.normal/b.png"));
        touch(&root.join("val/xray.chest.pneumonia-test.normal/a.jpg"));
        touch(&root.join("val/xray.chest.pneumonia-test.normal/notes.txt"));
        touch(&root.join("train/xray.chest.pneumonia-test.covid19/z.PNG"));
        let manifest = scan_directory(root).unwrap();
        let names: Vec<_> = manifest
            .entries
            .iter()
            .map(|e| e.image_path.strip_prefix(root).unwrap().to_path_buf())
            .collect();
        assert_eq!(
            names,
            vec![
                PathBuf::from("train/xray.chest.pneumonia-test.covid19/z.PNG"),
                PathBuf::from("val/xray.chest.pneumonia-test.normal/a.jpg"),
                PathBuf::from("val/xray.chest.pneumonia-test.normal/b.png"),
            ]
        );
    }

    #[test]
    fn validation_reports_problems() {
        let dir = tempdir().unwrap();
        let real = dir.path().join("a.png");
        touch(&real);
        let label = parse_label("ct-scan.chest.cancer-test.benign").unwrap();
        let unknown = parse_label("pet.brain.x-test.y").unwrap();
        let manifest = DatasetManifest::new(
            dir.path(),
            vec![
                SampleEntry { image_path: real.clone(), label: label.clone(), split: Split::Train },
                SampleEntry { image_path: real.clone(), label: label.clone(), split: Split::Val },
                SampleEntry { image_path: dir.path().join("nope.png"), label: unknown, split: Split::Val },
            ],
        );
        let report = validate_manifest(&manifest);
        assert!(!report.passed());
        assert_eq!(report.missing_files, vec![dir.path().join("nope.png")]);
        assert_eq!(report.duplicates, vec![real]);
        assert_eq!(report.unknown_labels.len(), 1);
        let c = report.count_for("ct-scan.chest.cancer-test.benign").unwrap();
        assert_eq!((c.train, c.val), (1, 1));
        assert_eq!(report.counts.len(), 26);
        assert_eq!((report.total_train, report.total_val), (1, 2));
    }

    #[test]
    fn empty_manifest_distribution_is_all_zero() {
        let manifest = DatasetManifest::new("/nowhere", vec![]);
        for split in Split::ALL {
            let dist = class_distribution(&manifest, split);
            assert_eq!(dist.len(), 25);
            assert!(dist.values().all(|&c| c == 0));
        }
        assert!(validate_manifest(&manifest).passed());
    }

    #[test]
    fn distribution_iterates_in_catalog_order() {
        let manifest = DatasetManifest::new("/nowhere", vec![]);
        let keys: Vec<_> = class_distribution(&manifest, Split::Train).into_keys().collect();
        assert_eq!(keys, catalog().entries());
    }

    #[test]
    fn manifest_text_round_trip() {
        let manifest = DatasetManifest::new(
            "/data",
            vec![
                SampleEntry {
                    image_path: "/data/train/mri.brain.tumor-test.no-tumor/1.png".into(),
                    label: parse_label("mri.brain.tumor-test.no-tumor").unwrap(),
                    split: Split::Train,
                },
                SampleEntry {
                    image_path: "/data/val/xray.chest.pneumonia-test.covid19/2.png".into(),
                    label: parse_label("xray.chest.pneumonia-test.covid19").unwrap(),
                    split: Split::Val,
                },
            ],
        );
        let mut buf = Vec::new();
        manifest.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains(
            "/data/train/mri.brain.tumor-test.no-tumor/1.png\tmri.brain.tumor-test.no-tumor\ttrain\n"
        ));
        let back = DatasetManifest::read_from(&buf[..]).unwrap();
        assert_eq!(back.entries, manifest.entries);
        assert_eq!(back.root, manifest.root);
        assert_eq!(
            back.created_at.timestamp_millis(),
            manifest.created_at.timestamp_millis()
        );
    }

    #[test]
    fn manifest_syntax_errors_carry_line_numbers() {
        let text = "# imagedx-manifest v1\n/a.png\tmri.brain.tumor-test.no-tumor\n";
        let err = DatasetManifest::read_from(text.as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::ManifestSyntax { line: 2, .. }), "{err}");
        let text = "/a.png\tmri.brain.tumor-test.no-tumor\ttest\n";
        assert!(matches!(
            DatasetManifest::read_from(text.as_bytes()),
            Err(DatasetError::ManifestSyntax { line: 1, .. })
        ));
    }
}
