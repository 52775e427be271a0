use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use super::{Mode, RunError};
use crate::backend::SamplingParams;
use crate::consistency::Polarity;
use crate::parsing::ParseOutcome;
use crate::prompts::AlignmentTarget;

/// Unique key of a logged sample. Ordering is the canonical replay order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleKey {
    pub run_index: u32,
    pub scenario_id: String,
    /// `None` for unaligned prompts.
    pub target: Option<AlignmentTarget>,
    pub polarity: Polarity,
    pub sample_index: u32,
}

impl fmt::Display for SampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let target = self
            .target
            .map_or_else(|| "unaligned".to_string(), |t| t.to_string());
        write!(
            f,
            "run {} / scenario {} / {} / {} #{}",
            self.run_index,
            self.scenario_id,
            target,
            self.polarity.as_str(),
            self.sample_index
        )
    }
}

/// One raw completion together with everything needed to re-score it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub run_index: u32,
    pub scenario_id: String,
    pub prompt_mode: Mode,
    pub target: Option<AlignmentTarget>,
    pub polarity: Polarity,
    pub sample_index: u32,
    pub fingerprint: String,
    /// SHA-256 of the system and user messages.
    pub prompt_hash: String,
    pub params: SamplingParams,
    pub backend_id: String,
    pub latency_ms: u64,
    pub raw_text: String,
    /// Outcome at write time; replay parses `raw_text` again.
    pub parse_outcome: ParseOutcome,
    pub timestamp_ms: u64,
}

impl LogRecord {
    pub fn key(&self) -> SampleKey {
        SampleKey {
            run_index: self.run_index,
            scenario_id: self.scenario_id.clone(),
            target: self.target,
            polarity: self.polarity,
            sample_index: self.sample_index,
        }
    }
}

pub fn run_log_path(out: &Path, run_index: u32, gzip: bool) -> PathBuf {
    let ext = if gzip { "jsonl.gz" } else { "jsonl" };
    out.join("runs").join(format!("{run_index}.{ext}"))
}

/// Append-only JSONL writer for one run.
pub(crate) enum LogSink {
    Plain(BufWriter<File>),
    Gzip(GzEncoder<BufWriter<File>>),
}

impl LogSink {
    pub(crate) fn create(path: &Path, gzip: bool) -> Result<Self, RunError> {
        let file = File::create(path).map_err(|source| RunError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let w = BufWriter::new(file);
        Ok(if gzip {
            LogSink::Gzip(GzEncoder::new(w, Compression::default()))
        } else {
            LogSink::Plain(w)
        })
    }

    fn writer(&mut self) -> &mut dyn Write {
        match self {
            LogSink::Plain(w) => w,
            LogSink::Gzip(w) => w,
        }
    }

    pub(crate) fn append(&mut self, record: &LogRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        let w = self.writer();
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")
    }

    pub(crate) fn finish(self) -> std::io::Result<()> {
        match self {
            LogSink::Plain(mut w) => w.flush(),
            LogSink::Gzip(w) => w.finish()?.flush(),
        }
    }
}

/// Reads a `.jsonl` or `.jsonl.gz` run log. Blank lines are skipped.
pub fn read_log_file(path: &Path) -> Result<Vec<LogRecord>, RunError> {
    let io_err = |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let reader: Box<dyn BufRead> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(BufReader::new(GzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| RunError::LogFormat {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Reads every run log under `{out}/runs`, in file-name order.
pub fn read_run_logs(out: &Path) -> Result<Vec<LogRecord>, RunError> {
    let dir = out.join("runs");
    let entries = std::fs::read_dir(&dir).map_err(|source| RunError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".jsonl") || name.ends_with(".jsonl.gz")
        })
        .collect();
    paths.sort();
    let mut records = Vec::new();
    for p in paths {
        records.extend(read_log_file(&p)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Attribute, Level};
    use crate::parsing::parse;

    fn record(run_index: u32, sample_index: u32) -> LogRecord {
        LogRecord {
            run_index,
            scenario_id: "s1".into(),
            prompt_mode: Mode::AlignedSc,
            target: Some(AlignmentTarget::new(Attribute::Fairness, Level::Low)),
            polarity: Polarity::Negative,
            sample_index,
            fingerprint: "ab".into(),
            prompt_hash: "cd".into(),
            params: SamplingParams::new(0.7, 16, Some(9)).unwrap(),
            backend_id: "mock:oracle".into(),
            latency_ms: 0,
            raw_text: "{\"Answer\": 1}\nwith \"quotes\"".into(),
            parse_outcome: parse("{\"Answer\": 1}", 2).into(),
            timestamp_ms: 1,
        }
    }

    #[test]
    fn plain_and_gzip_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("runs")).unwrap();
        for (run, gzip) in [(0, false), (1, true)] {
            let path = run_log_path(dir.path(), run, gzip);
            let mut sink = LogSink::create(&path, gzip).unwrap();
            sink.append(&record(run, 0)).unwrap();
            sink.append(&record(run, 1)).unwrap();
            sink.finish().unwrap();
            assert_eq!(
                read_log_file(&path).unwrap(),
                vec![record(run, 0), record(run, 1)]
            );
        }
        let all = read_run_logs(dir.path()).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(all[3].run_index, 1);
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("0.jsonl");
        let good = serde_json::to_string(&record(0, 0)).unwrap();
        std::fs::write(&path, format!("{good}\n\nnot json\n")).unwrap();
        match read_log_file(&path) {
            Err(RunError::LogFormat { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected LogFormat, got {other:?}"),
        }
    }

    #[test]
    fn key_order_and_display() {
        let a = record(0, 1).key();
        let b = record(1, 0).key();
        assert!(a < b);
        assert_eq!(
            a.to_string(),
            "run 0 / scenario s1 / fairness_low / negative #1"
        );
    }
}
