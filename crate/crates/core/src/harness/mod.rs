//! Dataset ingestion, experiment configuration, artifacts and the pipeline.

mod artifacts;
mod config;
mod pipeline;
mod synthetic;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use artifacts::{
    load_artifact, load_generations, save_artifact, save_generations, ArtifactKind, Manifest,
    MANIFEST_FILE,
};
pub use config::{ExperimentConfig, ScorerChoice};
pub use pipeline::{
    run_pipeline, stage_calibrate, stage_cosine, stage_detect, stage_extract, stage_pca,
    stage_report, stage_sample, stage_score, stage_sweep, stage_train_detector, stage_train_probes,
    CalibratedRecord, DetectionSummary, PipelineOutput, Workspace,
};
pub use synthetic::{init_toy, synthetic_dataset, synthetic_question, SyntheticOptions, ToyFiles};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QARecord {
    pub id: String,
    pub question: String,
    pub gold: Vec<String>,
}

/// Strict JSONL parse: every line must be a record; ids must be unique.
pub fn parse_dataset(text: &str) -> Result<Vec<QARecord>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let rec: QARecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            message: e.to_string(),
            line: Some(n),
            raw: Some(line.to_string()),
        })?;
        if rec.question.trim().is_empty() {
            return Err(Error::Parse {
                message: "empty question".into(),
                line: Some(n),
                raw: Some(line.to_string()),
            });
        }
        if !ids.insert(rec.id.clone()) {
            return Err(Error::Data(format!(
                "duplicate id {:?} at line {n}",
                rec.id
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn ingest(path: &Path) -> Result<Vec<QARecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn emit(records: &[QARecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
