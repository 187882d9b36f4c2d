#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use harness::LoadedConfig;
use icl_consistency::corpus::write_dataset;
use icl_consistency::synthetic::{default_subsets, synthetic_corpus};
use icl_consistency::{Split, Task};
use serde_json::{json, Value};

/// Synthetic ANLI validation/train files plus QQP train data in `dir`.
pub fn write_datasets(dir: &Path, seed: u64) {
    let subsets = default_subsets(Task::Anli);
    let write = |name: &str, corpus| {
        let mut bytes = Vec::new();
        write_dataset(&corpus, &mut bytes).unwrap();
        fs::write(dir.join(name), bytes).unwrap();
    };
    write("validation.jsonl", synthetic_corpus(Task::Anli, Split::Validation, 240, &subsets, seed));
    write("train.jsonl", synthetic_corpus(Task::Anli, Split::Train, 60, &subsets, seed + 1));
    write("qqp_train.jsonl", synthetic_corpus(Task::Qqp, Split::Train, 60, &[], seed + 2));
}

pub fn base_config(backend: &str, n_eval: usize, seed: u64) -> Value {
    json!({
        "task": "anli",
        "datasets": {
            "validation": "validation.jsonl",
            "train": "train.jsonl",
            "cross_task_train": "qqp_train.jsonl"
        },
        "n_eval": n_eval,
        "seed": seed,
        "backend": backend,
        "parallelism": 4,
        "output_dir": "out"
    })
}

/// Writes datasets and `config` into `dir`; returns the config path.
pub fn workspace(dir: &Path, config: &Value) -> PathBuf {
    if !dir.join("validation.jsonl").exists() {
        write_datasets(dir, 11);
    }
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

pub fn load(path: &Path) -> LoadedConfig {
    LoadedConfig::load(path).unwrap()
}
