//! On-disk layout of a run: newline-delimited records, atomic replacement and
//! the run manifest.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use icl_consistency::{Prediction, PromptInstance, SetupId};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const PROMPTS: &str = "prompts.jsonl";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const MANIFEST: &str = "manifest.json";
pub const FACTORS: &str = "factors.json";
pub const CONFIG_COPY: &str = "config.json";
pub const EVAL_SET: &str = "eval_set.jsonl";
pub const REPORTS: &str = "reports";
pub const PROBE: &str = "probe";

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Streams records into a temporary file that replaces `path` on `finish`.
pub struct AtomicJsonl {
    path: PathBuf,
    tmp: PathBuf,
    out: BufWriter<File>,
    count: usize,
}

impl AtomicJsonl {
    pub fn create(path: &Path) -> Result<Self> {
        let tmp = tmp_path(path);
        let file = File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            tmp,
            out: BufWriter::new(file),
            count: 0,
        })
    }

    pub fn push<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<usize> {
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        drop(self.out);
        fs::rename(&self.tmp, &self.path).with_context(|| format!("replacing {}", self.path.display()))?;
        Ok(self.count)
    }
}

/// Reads every record of a newline-delimited file; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{}:{}: malformed record", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

pub fn read_prompts(path: &Path) -> Result<Vec<PromptInstance>> {
    read_jsonl(path)
}

/// One line of the predictions log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PredictionRecord {
    Answered(Prediction),
    Unanswered {
        setup_id: SetupId,
        data_id: String,
        error: String,
    },
}

impl PredictionRecord {
    pub fn key(&self) -> (SetupId, String) {
        match self {
            PredictionRecord::Answered(p) => (p.setup_id.clone(), p.data_id.clone()),
            PredictionRecord::Unanswered { setup_id, data_id, .. } => (setup_id.clone(), data_id.clone()),
        }
    }

    pub fn is_answered(&self) -> bool {
        matches!(self, PredictionRecord::Answered(_))
    }
}

/// Reads the predictions log. A torn final line (a crash mid-write) is
/// ignored; any other malformed line is an error. Later records win, except
/// that an unanswered record never replaces an answer.
pub fn load_predictions(path: &Path) -> Result<BTreeMap<(SetupId, String), PredictionRecord>> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(_) if i + 1 == lines.len() && !complete => break,
            Err(e) => anyhow::bail!("{}:{}: malformed prediction: {e}", path.display(), i + 1),
        };
        let key = record.key();
        match out.get(&key) {
            Some(PredictionRecord::Answered(_)) if !record.is_answered() => {}
            _ => {
                out.insert(key, record);
            }
        }
    }
    Ok(out)
}

/// Rewrites the predictions log sorted by key with one record per key.
pub fn compact_predictions(path: &Path) -> Result<BTreeMap<(SetupId, String), PredictionRecord>> {
    let records = load_predictions(path)?;
    let mut out = AtomicJsonl::create(path)?;
    for r in records.values() {
        out.push(r)?;
    }
    out.finish()?;
    Ok(records)
}

/// Append-only writer for the predictions log. Drops a torn trailing line
/// left by an interrupted run before appending.
pub struct PredictionLog {
    out: BufWriter<File>,
}

impl PredictionLog {
    pub fn open(path: &Path, truncate: bool) -> Result<Self> {
        if !truncate && path.exists() {
            let text = fs::read(path)?;
            if !text.is_empty() && !text.ends_with(b"\n") {
                let keep = text.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
                OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(!truncate)
            .write(true)
            .truncate(truncate)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, record: &PredictionRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        // Flush per record so an interruption loses at most the line in flight.
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub setups: usize,
    pub prompts: usize,
    pub completed: usize,
    pub unanswered: usize,
    pub masked: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub task: String,
    pub counts: Counts,
    /// Wall-clock seconds per command, from the latest invocation.
    pub timings: BTreeMap<String, f64>,
    pub versions: BTreeMap<String, String>,
    /// Seconds since the Unix epoch of the last update.
    pub updated_at: u64,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Manifest>> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
    }

    pub fn save(&mut self, dir: &Path) -> Result<()> {
        self.updated_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        self.versions
            .insert("harness".into(), env!("CARGO_PKG_VERSION").into());
        let bytes = serde_json::to_vec_pretty(self)?;
        write_atomic(&dir.join(MANIFEST), &bytes)
    }
}
