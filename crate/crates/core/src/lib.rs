//! Medical image diagnosis pipeline: hierarchical labels, dataset ingestion,
//! a DenseNet classifier, prompt synthesis, a chat-completions gateway and
//! structured report generation.

pub mod classifier;
pub mod dataset;
pub mod label;
pub mod llm;
pub mod prompt;
pub mod report;
pub mod server;
pub mod training;

pub use label::{catalog, format_label, parse_label, HierarchicalLabel, LabelCatalog, NUM_CLASSES};
