//! Labeled execution records and their append-only store.
//!
//! A store is a directory holding `records.jsonl`: one JSON
//! [`ExecutionRecord`] per line, appended as sessions finish.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{bad_line, invalid, Error, Result};
use crate::fsm::HistoryEntry;
use crate::signal::{AnomalyKind, Label, MultimodalSequence, Task};

pub const RECORD_FORMAT_VERSION: u32 = 1;
pub const RECORDS_FILE: &str = "records.jsonl";

/// Operator verdict on one task execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "success" => Ok(Outcome::Success),
            "failure" => Ok(Outcome::Failure),
            other => Err(invalid(format!("unknown label `{other}`"))),
        }
    }
}

/// Fault injected by the simulator, kept for evaluation only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectedFault {
    pub kind: AnomalyKind,
    pub onset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub format_version: u32,
    pub record_id: String,
    pub session_id: String,
    pub task: Option<Task>,
    /// `None` when the session ended without operator feedback.
    pub label: Option<Outcome>,
    pub complete: bool,
    /// Observations of the last motion before the label, truncated where
    /// the motion was interrupted. Absent if fewer than two samples exist.
    pub sequence: Option<MultimodalSequence>,
    pub history: Vec<HistoryEntry>,
    pub first_detection_step: Option<usize>,
    pub injected: Option<InjectedFault>,
}

impl ExecutionRecord {
    pub fn summary(&self) -> RecordSummary {
        RecordSummary {
            record_id: self.record_id.clone(),
            session_id: self.session_id.clone(),
            task: self.task,
            label: self.label,
            complete: self.complete,
            n_steps: self.sequence.as_ref().map_or(0, |s| s.len()),
            flagged: self.first_detection_step.is_some(),
            first_detection_step: self.first_detection_step,
        }
    }

    /// Corpus form of the record: successes become nominal sequences,
    /// failures anomalous ones with the onset taken from the injected
    /// fault, else the first detection, else the start.
    pub fn to_corpus_sequence(&self) -> Option<MultimodalSequence> {
        let label = self.label?;
        if !self.complete {
            return None;
        }
        let mut seq = self.sequence.clone()?;
        match label {
            Outcome::Success => {
                seq.label = Label::Nominal;
                seq.anomaly_onset = None;
                seq.anomaly_kind = None;
            }
            Outcome::Failure => {
                let onset = self
                    .injected
                    .map(|f| f.onset)
                    .or(self.first_detection_step)
                    .unwrap_or(0)
                    .min(seq.len() - 1);
                seq.label = Label::Anomalous;
                seq.anomaly_onset = Some(onset);
                seq.anomaly_kind = self.injected.map(|f| f.kind);
            }
        }
        Some(seq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub record_id: String,
    pub session_id: String,
    pub task: Option<Task>,
    pub label: Option<Outcome>,
    pub complete: bool,
    pub n_steps: usize,
    pub flagged: bool,
    pub first_detection_step: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordFilter {
    pub task: Option<Task>,
    pub label: Option<Outcome>,
}

impl RecordFilter {
    pub fn matches(&self, r: &ExecutionRecord) -> bool {
        self.task.is_none_or(|t| r.task == Some(t)) && self.label.is_none_or(|l| r.label == Some(l))
    }
}

/// Single-writer, append-only record log.
#[derive(Debug)]
pub struct RecordStore {
    dir: PathBuf,
}

impl RecordStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self) -> PathBuf {
        self.dir.join(RECORDS_FILE)
    }

    pub fn append(&self, record: &ExecutionRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(self.path())?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    /// All records in append order. A missing log is an empty store.
    pub fn load(&self) -> Result<Vec<ExecutionRecord>> {
        let f = match File::open(self.path()) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: ExecutionRecord = serde_json::from_str(&line).map_err(|e| bad_line(i + 1, e))?;
            if r.format_version != RECORD_FORMAT_VERSION {
                return Err(Error::InvalidRecord {
                    line: i + 1,
                    message: format!("unsupported format_version {}", r.format_version),
                });
            }
            out.push(r);
        }
        Ok(out)
    }

    pub fn list(&self, filter: &RecordFilter) -> Result<Vec<RecordSummary>> {
        Ok(self
            .load()?
            .iter()
            .filter(|r| filter.matches(r))
            .map(ExecutionRecord::summary)
            .collect())
    }

    /// Labeled, complete records as a corpus, in append order.
    pub fn export_corpus(&self, filter: &RecordFilter) -> Result<Vec<MultimodalSequence>> {
        Ok(self
            .load()?
            .iter()
            .filter(|r| filter.matches(r))
            .filter_map(ExecutionRecord::to_corpus_sequence)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Simulator;

    fn record(id: &str, label: Option<Outcome>, injected: Option<InjectedFault>) -> ExecutionRecord {
        let seq = Simulator::default().generate_nominal(Task::Feeding, 2.0, 4).unwrap();
        ExecutionRecord {
            format_version: RECORD_FORMAT_VERSION,
            record_id: id.into(),
            session_id: "s".into(),
            task: Some(Task::Feeding),
            label,
            complete: label.is_some(),
            sequence: Some(seq),
            history: Vec::new(),
            first_detection_step: Some(7),
            injected,
        }
    }

    #[test]
    fn empty_store_lists_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        assert!(store.list(&RecordFilter::default()).unwrap().is_empty());
        assert!(store.export_corpus(&RecordFilter::default()).unwrap().is_empty());
    }

    #[test]
    fn export_maps_labels_and_onsets() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        store.append(&record("a", Some(Outcome::Success), None)).unwrap();
        let fault = InjectedFault {
            kind: AnomalyKind::LoudSound,
            onset: 5,
        };
        store.append(&record("b", Some(Outcome::Failure), Some(fault))).unwrap();
        store.append(&record("c", Some(Outcome::Failure), None)).unwrap();
        store.append(&record("d", None, None)).unwrap();

        assert_eq!(store.list(&RecordFilter::default()).unwrap().len(), 4);
        let corpus = store.export_corpus(&RecordFilter::default()).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus[0].label, Label::Nominal);
        assert_eq!(corpus[1].anomaly_onset, Some(5));
        assert_eq!(corpus[2].anomaly_onset, Some(7));

        let failures = RecordFilter {
            label: Some(Outcome::Failure),
            ..Default::default()
        };
        assert_eq!(store.list(&failures).unwrap().len(), 2);
        let a = crate::signal::wire::corpus_to_string(&store.export_corpus(&failures).unwrap());
        let b = crate::signal::wire::corpus_to_string(&store.export_corpus(&failures).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_line_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        store.append(&record("a", Some(Outcome::Success), None)).unwrap();
        let mut f = OpenOptions::new().append(true).open(store.path()).unwrap();
        writeln!(f, "{{not json").unwrap();
        match store.load() {
            Err(Error::InvalidRecord { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("column"), "{message}");
            }
            other => panic!("expected InvalidRecord, got {other:?}"),
        }
    }
}
