use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use hiqa_core::dataset::{AnnotationRecord, DatasetConfig, RecordValidator, ValidationReport};
use hiqa_core::policy::{PolicyParams, Vocab};
use serde::Serialize;

use crate::Failure;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Reads annotation JSONL. Unparseable or invalid lines are rejected and
/// reading continues; blank lines are ignored.
pub fn load_records(
    path: &Path,
    config: &DatasetConfig,
) -> Result<(Vec<AnnotationRecord>, ValidationReport), Failure> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    read_records(BufReader::new(file), config).map_err(|e| io_err(path, e))
}

pub fn read_records(
    input: impl BufRead,
    config: &DatasetConfig,
) -> std::io::Result<(Vec<AnnotationRecord>, ValidationReport)> {
    let mut validator = RecordValidator::new(config.clone());
    let mut accepted = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<AnnotationRecord>(&line) {
            Ok(r) => accepted.extend(validator.check(n, r)),
            Err(e) => validator.reject_line(n, None, format!("unparseable record: {e}")),
        }
    }
    Ok((accepted, validator.finish()))
}

pub fn write_snapshot(path: &Path, params: &PolicyParams) -> Result<(), Failure> {
    std::fs::write(path, params.to_bytes()).map_err(|e| io_err(path, e))
}

pub fn read_snapshot(path: &Path, vocab: Arc<Vocab>) -> Result<PolicyParams, Failure> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(PolicyParams::from_bytes(&bytes, vocab)?)
}

/// One JSON value per line.
pub struct JsonlWriter {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self, Failure> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> Result<(), Failure> {
        serde_json::to_writer(&mut self.out, value).map_err(|e| Failure::Io(e.to_string()))?;
        self.out.write_all(b"\n").map_err(|e| io_err(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), Failure> {
        self.out.flush().map_err(|e| io_err(&self.path, e))
    }
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Failure::Validation(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
