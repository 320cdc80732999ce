//! Plain-text metrics file: `key=value` lines after a magic header.
//! The full layout is described in `docs/file-formats.md`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::metrics::{ConfusionMatrix, EvaluationMetrics};
use crate::dataset::Split;
use crate::label::LabelCatalog;

pub const METRICS_MAGIC: &str = "# imagedx-metrics v1";

/// Renders metrics and the confusion matrix. Floats use Rust's shortest
/// round-trip formatting, so parsing a value back yields the same `f64`.
pub fn write_metrics_file(
    split: Split,
    metrics: &EvaluationMetrics,
    cm: &ConfusionMatrix,
    catalog: &LabelCatalog,
) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| {
        writeln!(out, "{k}={v}").expect("writing to a String");
    };
    kv("split", &split);
    kv("samples", &metrics.samples);
    if let Some(loss) = metrics.loss {
        kv("loss", &loss);
    }
    kv("accuracy", &metrics.accuracy);
    kv("averaging", &metrics.averaging.as_str());
    kv("precision", &metrics.precision);
    kv("recall", &metrics.recall);
    kv("f1", &metrics.f1);
    kv("macro_precision", &metrics.macro_avg.precision);
    kv("macro_recall", &metrics.macro_avg.recall);
    kv("macro_f1", &metrics.macro_avg.f1);
    kv("weighted_precision", &metrics.weighted_avg.precision);
    kv("weighted_recall", &metrics.weighted_avg.recall);
    kv("weighted_f1", &metrics.weighted_avg.f1);
    for (i, c) in metrics.per_class.iter().enumerate() {
        let label = catalog
            .label_at(i)
            .map(|l| l.to_string())
            .unwrap_or_else(|| format!("class-{i}"));
        let zero_division = match (c.precision_undefined, c.recall_undefined) {
            (false, false) => "none",
            (true, false) => "precision",
            (false, true) => "recall",
            (true, true) => "both",
        };
        kv(&format!("class.{i:02}.label"), &label);
        kv(&format!("class.{i:02}.support"), &c.support);
        kv(&format!("class.{i:02}.precision"), &c.precision);
        kv(&format!("class.{i:02}.recall"), &c.recall);
        kv(&format!("class.{i:02}.f1"), &c.f1);
        kv(&format!("class.{i:02}.zero_division"), &zero_division);
    }
    kv("confusion_matrix.classes", &cm.num_classes());
    for (i, row) in cm.rows().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        kv(&format!("confusion_matrix.row.{i:02}"), &cells.join(" "));
    }
    format!("{METRICS_MAGIC}\n{out}")
}

/// Parsed metrics file: every key/value pair plus the reassembled matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFile {
    pub values: BTreeMap<String, String>,
    pub confusion: ConfusionMatrix,
}

impl MetricsFile {
    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.values.get(key)?.parse().ok()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (k, v) in &self.values {
            if k.starts_with("confusion_matrix.row.") {
                continue;
            }
            let value = match v.parse::<f64>() {
                Ok(n) if n.is_finite() && !k.ends_with(".label") => serde_json::json!(n),
                _ => serde_json::json!(v),
            };
            map.insert(k.clone(), value);
        }
        let rows: Vec<Vec<u64>> = self.confusion.rows().map(|r| r.to_vec()).collect();
        map.insert("confusion_matrix".into(), serde_json::json!(rows));
        serde_json::Value::Object(map)
    }
}

pub fn parse_metrics_file(text: &str) -> Result<MetricsFile, String> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_MAGIC) {
        return Err("missing metrics header".into());
    }
    let mut values = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", i + 2))?;
        values.insert(k.to_string(), v.to_string());
    }
    let k: usize = values
        .get("confusion_matrix.classes")
        .and_then(|v| v.parse().ok())
        .ok_or("missing confusion_matrix.classes")?;
    let rows = (0..k)
        .map(|i| {
            let key = format!("confusion_matrix.row.{i:02}");
            let row = values.get(&key).ok_or_else(|| format!("missing {key}"))?;
            row.split(' ')
                .filter(|s| !s.is_empty())
                .map(|c| c.parse::<u64>().map_err(|e| format!("{key}: {e}")))
                .collect::<Result<Vec<u64>, String>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let confusion = ConfusionMatrix::from_rows(rows).ok_or("confusion matrix is not square")?;
    Ok(MetricsFile { values, confusion })
}
