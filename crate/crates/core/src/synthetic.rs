//! Small deterministic corpora for tests, demos and dry runs.
//!
//! Texts are assembled from fixed word lists; gold labels cycle through the
//! label space so every label is equally frequent.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, DataRecord, Split, Task};

const SUBJECTS: &[&str] = &[
    "The committee", "A local farmer", "The orchestra", "My neighbour", "The new bridge",
    "A small startup", "The museum", "Our coach", "The river", "An old novel",
];
const VERBS: &[&str] = &[
    "approved", "repaired", "described", "ignored", "celebrated", "measured", "sold", "painted",
];
const OBJECTS: &[&str] = &[
    "the annual budget", "a wooden fence", "the harvest festival", "three paintings",
    "the city map", "a quiet garden", "the winter schedule", "two old trucks",
];
const QUESTIONS: &[&str] = &[
    "How do I learn to cook rice", "What is the best way to save money",
    "Why is the sky blue", "How can I improve my handwriting", "Where should I travel in spring",
    "What makes a good password", "How do plants grow in the dark", "Why do cats purr",
];

/// Subsets used for synthetic validation splits of a task.
pub fn default_subsets(task: Task) -> Vec<String> {
    match task {
        Task::Anli => ["r1", "r2", "r3"].map(String::from).to_vec(),
        _ => Vec::new(),
    }
}

/// `n` records per subset (or `n` in total without subsets).
pub fn synthetic_corpus(task: Task, split: Split, n: usize, subsets: &[String], seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (task.label_count() as u64) << 32);
    let labels = task.label_count();
    let groups: Vec<Option<&String>> = if subsets.is_empty() {
        vec![None]
    } else {
        subsets.iter().map(Some).collect()
    };
    let mut records = Vec::new();
    for group in groups {
        for i in 0..n {
            let (field_a, field_b) = match task {
                Task::Qqp => (
                    format!("{}?", QUESTIONS.choose(&mut rng).expect("non-empty")),
                    format!("{}?", QUESTIONS.choose(&mut rng).expect("non-empty")),
                ),
                _ => {
                    let subject = SUBJECTS.choose(&mut rng).expect("non-empty");
                    (
                        format!(
                            "{subject} {} {}.",
                            VERBS.choose(&mut rng).expect("non-empty"),
                            OBJECTS.choose(&mut rng).expect("non-empty")
                        ),
                        format!(
                            "{subject} {} {}.",
                            VERBS.choose(&mut rng).expect("non-empty"),
                            OBJECTS.choose(&mut rng).expect("non-empty")
                        ),
                    )
                }
            };
            let data_id = match group {
                Some(s) => format!("{task}-{split}-{s}-{i:05}"),
                None => format!("{task}-{split}-{i:05}"),
            };
            records.push(DataRecord {
                data_id,
                task,
                field_a,
                field_b,
                gold: i % labels,
                subset: group.cloned(),
                split,
            });
        }
    }
    Corpus::from_records(task, split, records).expect("synthetic records are valid")
}
