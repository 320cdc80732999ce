//! File-backed report store.
//!
//! ```text
//! <root>/objects/<aa>/<sha256>.json   one report, named by the hash of its bytes
//! <root>/index.tsv                     append-only `report_id<TAB>objects/..<TAB>created_at`
//! ```

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::DiagnosisReport;

const INDEX_FILE: &str = "index.tsv";
const OBJECTS_DIR: &str = "objects";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("report {0} not found")]
    NotFound(String),
    #[error("report id {0} already exists")]
    DuplicateId(String),
    #[error("report store {path}: {message}")]
    DiskError { path: PathBuf, message: String },
    #[error("corrupt report {id}: {message}")]
    Corrupt { id: String, message: String },
}

fn disk(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::DiskError {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug)]
pub struct ReportStore {
    root: PathBuf,
    /// report_id -> relative object path. Guarded so index appends are serialized.
    index: Mutex<HashMap<String, String>>,
}

impl ReportStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join(OBJECTS_DIR)).map_err(|e| disk(&root, e))?;
        let store = Self {
            index: Mutex::new(HashMap::new()),
            root,
        };
        store.reload()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn reload(&self) -> Result<(), StoreError> {
        let path = self.root.join(INDEX_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(disk(&path, e)),
        };
        let mut index = self.index.lock().expect("index lock poisoned");
        // A crash mid-append can leave a partial last line; it is ignored.
        for line in text.lines() {
            let mut parts = line.split('\t');
            if let (Some(id), Some(obj), Some(_)) = (parts.next(), parts.next(), parts.next()) {
                index.insert(id.to_string(), obj.to_string());
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.index.lock().expect("index lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.index.lock().expect("index lock poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Writes the report durably, then records it in the index.
    pub fn persist(&self, report: &DiagnosisReport) -> Result<String, StoreError> {
        let bytes = serde_json::to_vec_pretty(report).map_err(|e| disk(&self.root, e))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        let rel = format!("{OBJECTS_DIR}/{}/{digest}.json", &digest[..2]);
        let path = self.root.join(&rel);
        let dir = path.parent().expect("object path has a parent");
        fs::create_dir_all(dir).map_err(|e| disk(dir, e))?;

        let tmp = dir.join(format!(".{digest}.{}.tmp", uuid::Uuid::new_v4().simple()));
        let write = || -> std::io::Result<()> {
            let mut f = File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        if let Err(e) = write() {
            let _ = fs::remove_file(&tmp);
            return Err(disk(&path, e));
        }

        let mut index = self.index.lock().expect("index lock poisoned");
        if index.contains_key(&report.report_id) {
            return Err(StoreError::DuplicateId(report.report_id.clone()));
        }
        let index_path = self.root.join(INDEX_FILE);
        let line = format!(
            "{}\t{rel}\t{}\n",
            report.report_id,
            report.created_at.to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
        );
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index_path)
            .map_err(|e| disk(&index_path, e))?;
        f.write_all(line.as_bytes())
            .and_then(|_| f.sync_data())
            .map_err(|e| disk(&index_path, e))?;
        index.insert(report.report_id.clone(), rel);
        tracing::debug!(report_id = %report.report_id, "report persisted");
        Ok(report.report_id.clone())
    }

    pub fn get(&self, report_id: &str) -> Result<DiagnosisReport, StoreError> {
        let rel = {
            let found = self.index.lock().expect("index lock poisoned").get(report_id).cloned();
            match found {
                Some(rel) => rel,
                None => {
                    // Another process may have written it since we opened.
                    self.reload()?;
                    self.index
                        .lock()
                        .expect("index lock poisoned")
                        .get(report_id)
                        .cloned()
                        .ok_or_else(|| StoreError::NotFound(report_id.to_string()))?
                }
            }
        };
        let path = self.root.join(&rel);
        let bytes = fs::read(&path).map_err(|e| disk(&path, e))?;
        let corrupt = |message: String| StoreError::Corrupt {
            id: report_id.to_string(),
            message,
        };
        let digest = hex::encode(Sha256::digest(&bytes));
        if !rel.ends_with(&format!("{digest}.json")) {
            return Err(corrupt("content does not match its address".into()));
        }
        let report: DiagnosisReport =
            serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
        if report.report_id != report_id {
            return Err(corrupt(format!("object holds report {}", report.report_id)));
        }
        report.validate().map_err(corrupt)?;
        Ok(report)
    }
}
