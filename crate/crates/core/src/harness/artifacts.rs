use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, sha256_hex};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Features,
    Probe,
    Detector,
    Generations,
    Calibration,
    Report,
}

impl ArtifactKind {
    pub fn schema(self) -> &'static str {
        match self {
            ArtifactKind::Features => "vucal-features/1",
            ArtifactKind::Probe => "vucal-probe/1",
            ArtifactKind::Detector => "vucal-detector/1",
            ArtifactKind::Generations => "vucal-generations/1",
            ArtifactKind::Calibration => "vucal-calibration/1",
            ArtifactKind::Report => "vucal-report/1",
        }
    }
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    schema_version: &'a str,
    config_hash: &'a str,
    payload: &'a T,
}

#[derive(Deserialize)]
struct Header {
    schema_version: String,
    config_hash: String,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    payload: T,
}

fn check_schema(found: &str, kind: ArtifactKind) -> Result<()> {
    if found != kind.schema() {
        return Err(Error::Versioning {
            expected: kind.schema().into(),
            found: found.into(),
        });
    }
    Ok(())
}

/// Writes a versioned JSON artifact atomically and returns its SHA-256.
pub fn save_artifact<T: Serialize>(
    path: &Path,
    kind: ArtifactKind,
    config_hash: &str,
    value: &T,
) -> Result<String> {
    let mut text = serde_json::to_string_pretty(&EnvelopeOut {
        schema_version: kind.schema(),
        config_hash,
        payload: value,
    })?;
    text.push('\n');
    atomic_write(path, text.as_bytes())?;
    Ok(sha256_hex(text.as_bytes()))
}

/// Loads an artifact, rejecting files of another kind or version. Returns the
/// payload and the config hash recorded with it.
pub fn load_artifact<T: DeserializeOwned>(path: &Path, kind: ArtifactKind) -> Result<(T, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::Parse {
        message: format!("{}: not an artifact: {e}", path.display()),
        line: None,
        raw: None,
    })?;
    check_schema(&header.schema_version, kind)?;
    let env: EnvelopeIn<T> = serde_json::from_str(&text)?;
    Ok((env.payload, header.config_hash))
}

/// JSONL: a header line, then one record per line.
pub fn save_generations<T: Serialize>(
    path: &Path,
    kind: ArtifactKind,
    config_hash: &str,
    records: &[T],
) -> Result<String> {
    let mut text = serde_json::to_string(&serde_json::json!({
        "schema_version": kind.schema(),
        "config_hash": config_hash,
        "count": records.len(),
    }))?;
    text.push('\n');
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())?;
    Ok(sha256_hex(text.as_bytes()))
}

pub fn load_generations<T: DeserializeOwned>(
    path: &Path,
    kind: ArtifactKind,
) -> Result<(Vec<T>, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::parse(format!("{}: empty file", path.display())))?;
    #[derive(Deserialize)]
    struct GenHeader {
        schema_version: String,
        config_hash: String,
        count: usize,
    }
    let h: GenHeader = serde_json::from_str(first).map_err(|e| Error::Parse {
        message: format!("bad header: {e}"),
        line: Some(1),
        raw: Some(first.to_string()),
    })?;
    check_schema(&h.schema_version, kind)?;
    let records = lines
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                message: e.to_string(),
                line: Some(i + 2),
                raw: None,
            })
        })
        .collect::<Result<Vec<T>>>()?;
    if records.len() != h.count {
        return Err(Error::Data(format!(
            "{}: header announces {} records, found {}",
            path.display(),
            h.count,
            records.len()
        )));
    }
    Ok((records, h.config_hash))
}

/// Content hashes of everything an experiment wrote, keyed by relative path.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        if !p.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn record(&mut self, rel: &str, sha: String) {
        self.artifacts.insert(rel.to_string(), sha);
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        atomic_write(&dir.join(MANIFEST_FILE), text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::{Probe, ProbeKind, ProbeLayout, ProbeTarget, PROBE_SCHEMA};

    fn probe() -> Probe {
        Probe {
            schema_version: PROBE_SCHEMA.into(),
            kind: ProbeKind::Regressor,
            layout: ProbeLayout::new(ProbeTarget::Su, vec![3], 2),
            lambda: 1e-3,
            weights: vec![0.1 + 0.2, -1.0 / 3.0],
            bias: std::f64::consts::PI,
        }
    }

    #[test]
    fn probe_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.json");
        save_artifact(&p, ArtifactKind::Probe, "h", &probe()).unwrap();
        let (back, hash): (Probe, String) = load_artifact(&p, ArtifactKind::Probe).unwrap();
        assert_eq!(back, probe());
        assert_eq!(hash, "h");
    }

    #[test]
    fn loading_probe_as_detector_is_versioning_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.json");
        save_artifact(&p, ArtifactKind::Probe, "h", &probe()).unwrap();
        let r: Result<(crate::probes::Detector, String)> =
            load_artifact(&p, ArtifactKind::Detector);
        assert!(matches!(r, Err(Error::Versioning { .. })));
    }

    #[test]
    fn generations_count_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.jsonl");
        let recs: Vec<Vec<u32>> = (0..5).map(|i| vec![i; 10]).collect();
        save_generations(&p, ArtifactKind::Generations, "h", &recs).unwrap();
        let (back, _): (Vec<Vec<u32>>, _) =
            load_generations(&p, ArtifactKind::Generations).unwrap();
        assert_eq!(back, recs);
    }
}
