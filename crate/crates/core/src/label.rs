//! Four-part hierarchical labels (`scan.body-part.test.result`) and the fixed
//! 25-class catalog that defines the classifier's output ordering.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of classes in the catalog.
pub const NUM_CLASSES: usize = 25;

/// Catalog rows in class-index order.
const CATALOG_STRINGS: [&str; NUM_CLASSES] = [
    "ct-scan.chest.cancer-test.adenocarcinoma",
    "ct-scan.chest.cancer-test.benign",
    "ct-scan.chest.cancer-test.large-cell-carcinoma",
    "ct-scan.chest.cancer-test.malignant",
    "ct-scan.chest.cancer-test.normal",
    "ct-scan.chest.cancer-test.squamous-cell-carcinoma",
    "mri.brain.alzheimer-test.mild-demented",
    "mri.brain.alzheimer-test.moderate-demented",
    "mri.brain.alzheimer-test.non-demented",
    "mri.brain.alzheimer-test.very-mild-demented",
    "mri.brain.tumor-test.glioma-tumor",
    "mri.brain.tumor-test.meningioma-tumor",
    "mri.brain.tumor-test.no-tumor",
    "mri.brain.tumor-test.pituitary-tumor",
    "oct-scan.rential.rential-oct-test.choroidal-neovascularization",
    "oct-scan.rential.rential-oct-test.diabetic-macular-edema",
    "oct-scan.rential.rential-oct-test.multiple-drusen",
    "oct-scan.rential.rential-oct-test.normal",
    "ultrasound.breast.cancer-test.benign",
    "ultrasound.breast.cancer-test.malignant",
    "ultrasound.breast.cancer-test.normal",
    "xray.chest.pneumonia-test.covid19",
    "xray.chest.pneumonia-test.normal",
    "xray.chest.pneumonia-test.pneumonia",
    "xray.chest.pneumonia-test.turberculosis",
];

/// Which of the four label positions a token occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelField {
    Scan,
    BodyPart,
    Test,
    Result,
}

impl LabelField {
    pub const ALL: [LabelField; 4] = [
        LabelField::Scan,
        LabelField::BodyPart,
        LabelField::Test,
        LabelField::Result,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LabelField::Scan => "scan",
            LabelField::BodyPart => "body part",
            LabelField::Test => "test",
            LabelField::Result => "result",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("malformed label {raw:?}: expected 4 dot-separated segments, found {found}")]
    SegmentCount { raw: String, found: usize },
    #[error("malformed label {raw:?}: {field} segment {segment:?} is not a lowercase token")]
    BadToken {
        raw: String,
        field: &'static str,
        segment: String,
    },
}

/// A `scan.body-part.test.result` label. Every field is a lowercase token
/// matching `[a-z0-9]+(-[a-z0-9]+)*`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HierarchicalLabel {
    scan_name: String,
    body_part: String,
    test_name: String,
    result: String,
}

/// Returns true if `token` matches `[a-z0-9]+(-[a-z0-9]+)*`.
pub fn is_valid_token(token: &str) -> bool {
    !token.is_empty()
        && token.split('-').all(|part| {
            !part.is_empty()
                && part
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
        })
}

impl HierarchicalLabel {
    pub fn new(
        scan_name: &str,
        body_part: &str,
        test_name: &str,
        result: &str,
    ) -> Result<Self, LabelError> {
        let fields = [scan_name, body_part, test_name, result];
        for (field, segment) in LabelField::ALL.iter().zip(fields) {
            if !is_valid_token(segment) {
                return Err(LabelError::BadToken {
                    raw: fields.join("."),
                    field: field.name(),
                    segment: segment.to_string(),
                });
            }
        }
        Ok(Self {
            scan_name: scan_name.to_string(),
            body_part: body_part.to_string(),
            test_name: test_name.to_string(),
            result: result.to_string(),
        })
    }

    pub fn scan_name(&self) -> &str {
        &self.scan_name
    }

    pub fn body_part(&self) -> &str {
        &self.body_part
    }

    pub fn test_name(&self) -> &str {
        &self.test_name
    }

    pub fn result(&self) -> &str {
        &self.result
    }

    pub fn field(&self, field: LabelField) -> &str {
        match field {
            LabelField::Scan => &self.scan_name,
            LabelField::BodyPart => &self.body_part,
            LabelField::Test => &self.test_name,
            LabelField::Result => &self.result,
        }
    }
}

/// Parses a dot-delimited label string.
pub fn parse_label(raw: &str) -> Result<HierarchicalLabel, LabelError> {
    let segments: Vec<&str> = raw.split('.').collect();
    if segments.len() != 4 {
        return Err(LabelError::SegmentCount {
            raw: raw.to_string(),
            found: segments.len(),
        });
    }
    for (field, segment) in LabelField::ALL.iter().zip(&segments) {
        if !is_valid_token(segment) {
            return Err(LabelError::BadToken {
                raw: raw.to_string(),
                field: field.name(),
                segment: segment.to_string(),
            });
        }
    }
    Ok(HierarchicalLabel {
        scan_name: segments[0].to_string(),
        body_part: segments[1].to_string(),
        test_name: segments[2].to_string(),
        result: segments[3].to_string(),
    })
}

/// Inverse of [`parse_label`].
pub fn format_label(label: &HierarchicalLabel) -> String {
    format!(
        "{}.{}.{}.{}",
        label.scan_name, label.body_part, label.test_name, label.result
    )
}

impl fmt::Display for HierarchicalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_label(self))
    }
}

impl FromStr for HierarchicalLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_label(s)
    }
}

impl Serialize for HierarchicalLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format_label(self))
    }
}

impl<'de> Deserialize<'de> for HierarchicalLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        parse_label(&raw).map_err(serde::de::Error::custom)
    }
}

/// The fixed, ordered set of classes the classifier predicts over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCatalog {
    entries: Vec<HierarchicalLabel>,
    index: HashMap<HierarchicalLabel, usize>,
}

static CATALOG: LazyLock<LabelCatalog> = LazyLock::new(|| {
    let entries: Vec<HierarchicalLabel> = CATALOG_STRINGS
        .iter()
        .map(|s| parse_label(s).expect("catalog entries are well-formed"))
        .collect();
    LabelCatalog::from_entries(entries).expect("catalog entries are distinct")
});

/// The 25-entry catalog.
pub fn catalog() -> &'static LabelCatalog {
    &CATALOG
}

impl LabelCatalog {
    /// Builds a catalog from an ordered list; `None` if entries repeat.
    pub fn from_entries(entries: Vec<HierarchicalLabel>) -> Option<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, label) in entries.iter().enumerate() {
            if index.insert(label.clone(), i).is_some() {
                return None;
            }
        }
        Some(Self { entries, index })
    }

    pub fn entries(&self) -> &[HierarchicalLabel] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, label: &HierarchicalLabel) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label_at(&self, index: usize) -> Option<&HierarchicalLabel> {
        self.entries.get(index)
    }

    pub fn contains(&self, label: &HierarchicalLabel) -> bool {
        self.index.contains_key(label)
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.entries.iter().map(format_label).collect()
    }
}
