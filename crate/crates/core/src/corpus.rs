//! Datasets, stable data IDs and sampling.
//!
//! Dataset files are newline-delimited JSON, one record per line:
//!
//! ```text
//! {"id": "r1-validation-17", "field_a": "...", "field_b": "...", "gold": 2, "subset": "r1"}
//! ```
//!
//! `id` and `subset` are optional. Missing IDs are synthesized as
//! `<task>-<split>-<line>` with 1-based line numbers.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: gold label {gold} out of range for {task} (label space size {size})")]
    GoldOutOfRange {
        line: usize,
        gold: i64,
        task: Task,
        size: usize,
    },
    #[error("duplicate data id {0:?}")]
    DuplicateId(String),
    #[error("evaluation sets are drawn from validation data, got a {0} corpus")]
    NotValidation(Split),
    #[error("training pools are built from train data, got a {0} corpus")]
    NotTrain(Split),
    #[error("cannot split {n} records evenly across {subsets} subsets")]
    UnevenSubsets { n: usize, subsets: usize },
    #[error("insufficient records: {}", format_shortfalls(.0))]
    Insufficient(Vec<Shortfall>),
    #[error("label filter {filter} out of range for {task} (label space size {size})")]
    FilterOutOfRange { filter: usize, task: Task, size: usize },
    #[error("pool exhausted: requested {requested}, only {available} records available")]
    PoolExhausted { requested: usize, available: usize },
}

/// Per-subset shortage when sampling an evaluation set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shortfall {
    pub subset: Option<String>,
    pub needed: usize,
    pub available: usize,
}

fn format_shortfalls(items: &[Shortfall]) -> String {
    items
        .iter()
        .map(|s| {
            format!(
                "subset {} needs {} but has {}",
                s.subset.as_deref().unwrap_or("<none>"),
                s.needed,
                s.available
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Anli,
    Mnli,
    Qqp,
}

impl Task {
    /// Canonical label names in label-index order.
    pub fn label_names(self) -> &'static [&'static str] {
        match self {
            Task::Anli | Task::Mnli => &["entailment", "neutral", "contradiction"],
            Task::Qqp => &["not_duplicate", "duplicate"],
        }
    }

    pub fn label_count(self) -> usize {
        self.label_names().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Anli => "anli",
            Task::Mnli => "mnli",
            Task::Qqp => "qqp",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "anli" => Ok(Task::Anli),
            "mnli" => Ok(Task::Mnli),
            "qqp" => Ok(Task::Qqp),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
        })
    }
}

/// One labeled example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRecord {
    pub data_id: String,
    pub task: Task,
    /// Premise, or the first question for QQP.
    pub field_a: String,
    /// Hypothesis, or the second question for QQP.
    pub field_b: String,
    pub gold: usize,
    pub subset: Option<String>,
    pub split: Split,
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    field_a: String,
    field_b: String,
    gold: i64,
    #[serde(default)]
    subset: Option<String>,
}

#[derive(Serialize)]
struct RawRecordOut<'a> {
    id: &'a str,
    field_a: &'a str,
    field_b: &'a str,
    gold: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    subset: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub task: Task,
    pub split: Split,
    pub label_names: Vec<String>,
    pub records: Vec<DataRecord>,
}

impl Corpus {
    /// Builds a corpus from already-constructed records, enforcing the label
    /// range and ID uniqueness.
    pub fn from_records(
        task: Task,
        split: Split,
        records: Vec<DataRecord>,
    ) -> Result<Self, CorpusError> {
        let size = task.label_count();
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.gold >= size {
                return Err(CorpusError::GoldOutOfRange {
                    line: i + 1,
                    gold: r.gold as i64,
                    task,
                    size,
                });
            }
            if !seen.insert(r.data_id.as_str()) {
                return Err(CorpusError::DuplicateId(r.data_id.clone()));
            }
        }
        Ok(Self {
            task,
            split,
            label_names: task.label_names().iter().map(|s| s.to_string()).collect(),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, data_id: &str) -> Option<&DataRecord> {
        self.records.iter().find(|r| r.data_id == data_id)
    }

    pub fn has_subsets(&self) -> bool {
        self.records.iter().any(|r| r.subset.is_some())
    }
}

/// Parses a newline-delimited dataset from any reader.
pub fn parse_dataset(
    reader: impl BufRead,
    task: Task,
    split: Split,
) -> Result<Corpus, CorpusError> {
    let size = task.label_count();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.gold < 0 || raw.gold as usize >= size {
            return Err(CorpusError::GoldOutOfRange {
                line: line_no,
                gold: raw.gold,
                task,
                size,
            });
        }
        let data_id = raw
            .id
            .unwrap_or_else(|| format!("{task}-{split}-{line_no}"));
        if !seen.insert(data_id.clone()) {
            return Err(CorpusError::DuplicateId(data_id));
        }
        records.push(DataRecord {
            data_id,
            task,
            field_a: raw.field_a,
            field_b: raw.field_b,
            gold: raw.gold as usize,
            subset: raw.subset,
            split,
        });
    }
    Ok(Corpus {
        task,
        split,
        label_names: task.label_names().iter().map(|s| s.to_string()).collect(),
        records,
    })
}

pub fn load_dataset(path: &Path, task: Task, split: Split) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(BufReader::new(file), task, split)
}

/// Writes the corpus in the same line format `parse_dataset` reads, always
/// including the data ID.
pub fn write_dataset(corpus: &Corpus, mut out: impl Write) -> std::io::Result<()> {
    for r in &corpus.records {
        let raw = RawRecordOut {
            id: &r.data_id,
            field_a: &r.field_a,
            field_b: &r.field_b,
            gold: r.gold,
            subset: r.subset.as_deref(),
        };
        serde_json::to_writer(&mut out, &raw)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Draws `n` validation records, split evenly across subsets when the corpus
/// has them, and returns them sorted by data ID.
pub fn sample_evaluation_set(
    corpus: &Corpus,
    n: usize,
    seed: u64,
) -> Result<Vec<DataRecord>, CorpusError> {
    if corpus.split != Split::Validation {
        return Err(CorpusError::NotValidation(corpus.split));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut groups: BTreeMap<Option<&str>, Vec<&DataRecord>> = BTreeMap::new();
    for r in &corpus.records {
        groups.entry(r.subset.as_deref()).or_default().push(r);
    }
    let group_count = groups.len().max(1);
    if !n.is_multiple_of(group_count) {
        return Err(CorpusError::UnevenSubsets {
            n,
            subsets: group_count,
        });
    }
    let per_group = n / group_count;
    let shortfalls: Vec<Shortfall> = groups
        .iter()
        .filter(|(_, members)| members.len() < per_group)
        .map(|(subset, members)| Shortfall {
            subset: subset.map(str::to_string),
            needed: per_group,
            available: members.len(),
        })
        .collect();
    if groups.is_empty() {
        return Err(CorpusError::Insufficient(vec![Shortfall {
            subset: None,
            needed: n,
            available: 0,
        }]));
    }
    if !shortfalls.is_empty() {
        return Err(CorpusError::Insufficient(shortfalls));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(n);
    for members in groups.values() {
        for i in index::sample(&mut rng, members.len(), per_group) {
            picked.push(members[i].clone());
        }
    }
    picked.sort_by(|a, b| a.data_id.cmp(&b.data_id));
    Ok(picked)
}

/// Training records available for in-context draws, optionally restricted to
/// one gold label.
#[derive(Debug, Clone)]
pub struct TrainingPool {
    corpus: Arc<Corpus>,
    members: Vec<usize>,
    by_label: Vec<Vec<usize>>,
}

pub fn training_pool(
    corpus: Arc<Corpus>,
    filter: Option<usize>,
) -> Result<TrainingPool, CorpusError> {
    if corpus.split != Split::Train {
        return Err(CorpusError::NotTrain(corpus.split));
    }
    let size = corpus.task.label_count();
    if let Some(f) = filter {
        if f >= size {
            return Err(CorpusError::FilterOutOfRange {
                filter: f,
                task: corpus.task,
                size,
            });
        }
    }
    let mut members = Vec::new();
    let mut by_label = vec![Vec::new(); size];
    for (i, r) in corpus.records.iter().enumerate() {
        if filter.is_none_or(|f| f == r.gold) {
            members.push(i);
            by_label[r.gold].push(i);
        }
    }
    Ok(TrainingPool {
        corpus,
        members,
        by_label,
    })
}

impl TrainingPool {
    pub fn task(&self) -> Task {
        self.corpus.task
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn label_len(&self, label: usize) -> usize {
        self.by_label.get(label).map_or(0, Vec::len)
    }

    /// Draws `n` distinct records, never returning the record with ID `exclude`.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        n: usize,
        exclude: Option<&str>,
    ) -> Result<Vec<&DataRecord>, CorpusError> {
        self.draw_from(&self.members, rng, n, exclude)
    }

    /// Like [`TrainingPool::draw`] but restricted to records with gold `label`.
    pub fn draw_label<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        label: usize,
        n: usize,
        exclude: Option<&str>,
    ) -> Result<Vec<&DataRecord>, CorpusError> {
        let Some(candidates) = self.by_label.get(label) else {
            return Err(CorpusError::FilterOutOfRange {
                filter: label,
                task: self.corpus.task,
                size: self.by_label.len(),
            });
        };
        self.draw_from(candidates, rng, n, exclude)
    }

    fn draw_from<R: Rng + ?Sized>(
        &self,
        candidates: &[usize],
        rng: &mut R,
        n: usize,
        exclude: Option<&str>,
    ) -> Result<Vec<&DataRecord>, CorpusError> {
        let records = &self.corpus.records;
        let excluded_present = exclude
            .map(|id| candidates.iter().any(|&i| records[i].data_id == id))
            .unwrap_or(false);
        let available = candidates.len() - usize::from(excluded_present);
        if n > available {
            return Err(CorpusError::PoolExhausted {
                requested: n,
                available,
            });
        }
        // One spare slot absorbs the excluded record if it gets drawn.
        let take = (n + 1).min(candidates.len());
        let drawn: Vec<&DataRecord> = index::sample(rng, candidates.len(), take)
            .into_iter()
            .map(|i| &records[candidates[i]])
            .filter(|r| exclude != Some(r.data_id.as_str()))
            .take(n)
            .collect();
        Ok(drawn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(text: &str, task: Task, split: Split) -> Result<Corpus, CorpusError> {
        parse_dataset(Cursor::new(text), task, split)
    }

    fn anli_validation(per_round: usize) -> Corpus {
        let mut text = String::new();
        for round in ["r1", "r2", "r3"] {
            for i in 0..per_round {
                text.push_str(&format!(
                    "{{\"id\":\"{round}-validation-{i:03}\",\"field_a\":\"p{i}\",\"field_b\":\"h{i}\",\"gold\":{},\"subset\":\"{round}\"}}\n",
                    i % 3
                ));
            }
        }
        parse(&text, Task::Anli, Split::Validation).unwrap()
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let c = parse("", Task::Anli, Split::Validation).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.label_names, ["entailment", "neutral", "contradiction"]);
    }

    #[test]
    fn missing_ids_are_line_derived() {
        let text = "{\"field_a\":\"a\",\"field_b\":\"b\",\"gold\":0}\n\
                    {\"field_a\":\"c\",\"field_b\":\"d\",\"gold\":1}\n\
                    {\"field_a\":\"e\",\"field_b\":\"f\",\"gold\":2}\n";
        let c = parse(text, Task::Mnli, Split::Train).unwrap();
        let ids: Vec<_> = c.records.iter().map(|r| r.data_id.as_str()).collect();
        assert_eq!(ids, ["mnli-train-1", "mnli-train-2", "mnli-train-3"]);
        assert_eq!(c.records[2].gold, 2);
    }

    #[test]
    fn duplicate_ids_are_named() {
        let text = "{\"id\":\"x\",\"field_a\":\"a\",\"field_b\":\"b\",\"gold\":0}\n\
                    {\"id\":\"x\",\"field_a\":\"c\",\"field_b\":\"d\",\"gold\":1}\n";
        let err = parse(text, Task::Anli, Split::Validation).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(ref id) if id == "x"));
        assert!(err.to_string().contains("\"x\""));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"field_a\":\"a\",\"field_b\":\"b\",\"gold\":0}\n\nnot json\n";
        match parse(text, Task::Anli, Split::Train).unwrap_err() {
            CorpusError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gold_out_of_range_for_qqp() {
        let text = "{\"field_a\":\"a\",\"field_b\":\"b\",\"gold\":2}\n";
        assert!(matches!(
            parse(text, Task::Qqp, Split::Train).unwrap_err(),
            CorpusError::GoldOutOfRange { gold: 2, size: 2, .. }
        ));
    }

    #[test]
    fn evaluation_set_is_balanced_across_rounds() {
        let c = anli_validation(250);
        let picked = sample_evaluation_set(&c, 600, 7).unwrap();
        assert_eq!(picked.len(), 600);
        for round in ["r1", "r2", "r3"] {
            let count = picked
                .iter()
                .filter(|r| r.subset.as_deref() == Some(round))
                .count();
            assert_eq!(count, 200);
        }
        assert!(picked.windows(2).all(|w| w[0].data_id < w[1].data_id));
    }

    #[test]
    fn evaluation_set_is_seed_deterministic() {
        let c = anli_validation(50);
        let a = sample_evaluation_set(&c, 30, 1).unwrap();
        let b = sample_evaluation_set(&c, 30, 1).unwrap();
        let other = sample_evaluation_set(&c, 30, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, other);
        for round in ["r1", "r2", "r3"] {
            let count = |v: &[DataRecord]| v.iter().filter(|r| r.subset.as_deref() == Some(round)).count();
            assert_eq!(count(&a), count(&other));
        }
    }

    #[test]
    fn zero_request_is_empty() {
        let c = anli_validation(3);
        assert!(sample_evaluation_set(&c, 0, 0).unwrap().is_empty());
    }

    #[test]
    fn shortfall_is_reported_per_subset() {
        let c = anli_validation(10);
        match sample_evaluation_set(&c, 60, 0).unwrap_err() {
            CorpusError::Insufficient(s) => {
                assert_eq!(s.len(), 3);
                assert!(s.iter().all(|x| x.needed == 20 && x.available == 10));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            sample_evaluation_set(&c, 10, 0).unwrap_err(),
            CorpusError::UnevenSubsets { n: 10, subsets: 3 }
        ));
    }

    fn train_pool(n: usize, filter: Option<usize>) -> Result<TrainingPool, CorpusError> {
        let mut text = String::new();
        for i in 0..n {
            text.push_str(&format!(
                "{{\"field_a\":\"a{i}\",\"field_b\":\"b{i}\",\"gold\":{}}}\n",
                i % 3
            ));
        }
        let c = parse(&text, Task::Anli, Split::Train).unwrap();
        training_pool(Arc::new(c), filter)
    }

    #[test]
    fn pool_draws_are_distinct() {
        let pool = train_pool(30, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let drawn = pool.draw(&mut rng, 5, None).unwrap();
        let ids: HashSet<_> = drawn.iter().map(|r| &r.data_id).collect();
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn pool_filter_restricts_labels() {
        let pool = train_pool(30, Some(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let drawn = pool.draw(&mut rng, 2, None).unwrap();
        assert!(drawn.iter().all(|r| r.gold == 2));
        assert!(matches!(
            train_pool(30, Some(3)).unwrap_err(),
            CorpusError::FilterOutOfRange { filter: 3, .. }
        ));
    }

    #[test]
    fn pool_exhaustion() {
        let pool = train_pool(4, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = pool.draw(&mut rng, 5, None).unwrap_err();
        assert!(err.to_string().contains("pool exhausted"));
    }

    #[test]
    fn pool_excludes_target() {
        let pool = train_pool(3, None).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let drawn = pool.draw(&mut rng, 2, Some("anli-train-2")).unwrap();
            assert_eq!(drawn.len(), 2);
            assert!(drawn.iter().all(|r| r.data_id != "anli-train-2"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(pool.draw(&mut rng, 3, Some("anli-train-2")).is_err());
    }

    #[test]
    fn validation_corpus_cannot_be_a_pool() {
        let c = anli_validation(1);
        assert!(matches!(
            training_pool(Arc::new(c), None).unwrap_err(),
            CorpusError::NotTrain(Split::Validation)
        ));
    }
}
