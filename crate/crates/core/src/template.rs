//! Instruction templates and byte-exact prompt block rendering.
//!
//! A template is plain placeholder substitution: `{field_a}` and `{field_b}`
//! each appear exactly once in the pattern. A rendered block is the
//! substituted pattern, a blank line, then the answer cue.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DataRecord, Task};

/// Cue that closes every block. In-context blocks append the verbalized gold
/// label directly after it.
pub const ANSWER_CUE: &str = "ANSWER: ";

const FIELD_A: &str = "{field_a}";
const FIELD_B: &str = "{field_b}";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed template: {message}")]
    Parse { path: String, message: String },
    #[error("template {id} ({name}): {reason}")]
    Invalid { id: u32, name: String, reason: String },
    #[error("duplicate template_id {id} for task {task}")]
    Duplicate { id: u32, task: Task },
    #[error("no templates found in {0}")]
    NoTemplates(String),
    #[error("template {template_id} is for {template_task} but record {data_id} is {record_task}")]
    TaskMismatch {
        template_id: u32,
        template_task: Task,
        data_id: String,
        record_task: Task,
    },
    #[error("record {data_id} has gold {gold} but template {template_id} has {choices} answer choices")]
    GoldOutOfRange {
        data_id: String,
        gold: usize,
        template_id: u32,
        choices: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    High,
    Low,
    Unrated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionTemplate {
    pub template_id: u32,
    pub name: String,
    pub pattern: String,
    /// Verbalized labels in label-index order.
    pub answer_choices: Vec<String>,
    pub quality: Quality,
    pub task: Task,
    /// Wording not taken verbatim from the source template collection.
    #[serde(default)]
    pub reconstruction: bool,
}

impl InstructionTemplate {
    pub fn validate(&self) -> Result<(), TemplateError> {
        let invalid = |reason: String| TemplateError::Invalid {
            id: self.template_id,
            name: self.name.clone(),
            reason,
        };
        for placeholder in [FIELD_A, FIELD_B] {
            let count = self.pattern.matches(placeholder).count();
            if count != 1 {
                return Err(invalid(format!(
                    "pattern must contain {placeholder} exactly once, found {count}"
                )));
            }
        }
        let expected = self.task.label_count();
        if self.answer_choices.len() != expected {
            return Err(invalid(format!(
                "{} answer choices but task {} has {expected} labels",
                self.answer_choices.len(),
                self.task
            )));
        }
        let mut folded = HashSet::new();
        for choice in &self.answer_choices {
            if !folded.insert(normalize(choice)) {
                return Err(invalid(format!("answer choice {choice:?} is not distinct")));
            }
        }
        Ok(())
    }

    fn substitute(&self, record: &DataRecord) -> String {
        let a = self.pattern.find(FIELD_A).expect("validated pattern");
        let b = self.pattern.find(FIELD_B).expect("validated pattern");
        let (first, first_len, first_val, second, second_len, second_val) = if a < b {
            (a, FIELD_A.len(), &record.field_a, b, FIELD_B.len(), &record.field_b)
        } else {
            (b, FIELD_B.len(), &record.field_b, a, FIELD_A.len(), &record.field_a)
        };
        let mut out = String::with_capacity(
            self.pattern.len() + record.field_a.len() + record.field_b.len() + ANSWER_CUE.len() + 2,
        );
        out.push_str(&self.pattern[..first]);
        out.push_str(first_val);
        out.push_str(&self.pattern[first + first_len..second]);
        out.push_str(second_val);
        out.push_str(&self.pattern[second + second_len..]);
        out
    }

    fn check_task(&self, record: &DataRecord) -> Result<(), TemplateError> {
        if record.task != self.task {
            return Err(TemplateError::TaskMismatch {
                template_id: self.template_id,
                template_task: self.task,
                data_id: record.data_id.clone(),
                record_task: record.task,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Target,
    InContext,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedBlock {
    pub text: String,
    pub kind: BlockKind,
    pub label_space: Vec<String>,
}

/// Renders the unanswered block for the record being predicted.
pub fn render_target(
    template: &InstructionTemplate,
    record: &DataRecord,
) -> Result<RenderedBlock, TemplateError> {
    template.check_task(record)?;
    let mut text = template.substitute(record);
    text.push_str("\n\n");
    text.push_str(ANSWER_CUE);
    Ok(RenderedBlock {
        text,
        kind: BlockKind::Target,
        label_space: template.answer_choices.clone(),
    })
}

/// Renders a solved example: the target block followed by the verbalized gold label.
pub fn render_in_context(
    template: &InstructionTemplate,
    record: &DataRecord,
) -> Result<RenderedBlock, TemplateError> {
    let choice = template
        .answer_choices
        .get(record.gold)
        .ok_or_else(|| TemplateError::GoldOutOfRange {
            data_id: record.data_id.clone(),
            gold: record.gold,
            template_id: template.template_id,
            choices: template.answer_choices.len(),
        })?;
    let mut block = render_target(template, record)?;
    block.text.push_str(choice);
    block.kind = BlockKind::InContext;
    Ok(block)
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Maps model output to a label index by exact match of its first line against
/// the answer choices, ignoring case and surrounding whitespace. `None` means
/// the output is outside the label space.
pub fn match_label(text: &str, template: &InstructionTemplate) -> Option<usize> {
    let first_line = text.trim_start().lines().next().unwrap_or("");
    let needle = normalize(first_line);
    template
        .answer_choices
        .iter()
        .position(|choice| normalize(choice) == needle)
}

const BUNDLED_ANLI: [&str; 15] = [
    include_str!("../assets/templates/anli/01_mnli_crowdsource.json"),
    include_str!("../assets/templates/anli/02_guaranteed_possible_impossible.json"),
    include_str!("../assets/templates/anli/03_always_sometimes_never.json"),
    include_str!("../assets/templates/anli/04_consider_always_sometimes_never.json"),
    include_str!("../assets/templates/anli/05_does_this_imply.json"),
    include_str!("../assets/templates/anli/06_guaranteed_true.json"),
    include_str!("../assets/templates/anli/07_gpt_3_style.json"),
    include_str!("../assets/templates/anli/08_take_the_following_as_truth.json"),
    include_str!("../assets/templates/anli/09_must_be_true.json"),
    include_str!("../assets/templates/anli/10_based_on_the_previous_passage.json"),
    include_str!("../assets/templates/anli/11_should_assume.json"),
    include_str!("../assets/templates/anli/12_can_we_infer.json"),
    include_str!("../assets/templates/anli/13_justified_in_saying.json"),
    include_str!("../assets/templates/anli/14_does_it_follow_that.json"),
    include_str!("../assets/templates/anli/15_claim_true_false_inconclusive.json"),
];

const BUNDLED_QQP: [&str; 1] = [include_str!("../assets/templates/qqp/01_same_question.json")];

/// Templates compiled into the crate. MNLI shares the ANLI wording.
pub fn bundled_templates(task: Task) -> Vec<InstructionTemplate> {
    let sources: &[&str] = match task {
        Task::Anli | Task::Mnli => &BUNDLED_ANLI,
        Task::Qqp => &BUNDLED_QQP,
    };
    sources
        .iter()
        .map(|src| {
            let mut t: InstructionTemplate =
                serde_json::from_str(src).expect("bundled template parses");
            t.task = task;
            t
        })
        .collect()
}

/// Loads every `*.json` template in `dir`, or the bundled set for all tasks
/// when `dir` is `None`. Result is sorted by (task, template_id).
pub fn load_templates(dir: Option<&Path>) -> Result<Vec<InstructionTemplate>, TemplateError> {
    let mut templates = match dir {
        None => [Task::Anli, Task::Mnli, Task::Qqp]
            .into_iter()
            .flat_map(bundled_templates)
            .collect(),
        Some(dir) => read_template_dir(dir)?,
    };
    templates.sort_by_key(|t| (t.task, t.template_id));
    let mut seen = HashSet::new();
    for t in &templates {
        t.validate()?;
        if !seen.insert((t.task, t.template_id)) {
            return Err(TemplateError::Duplicate {
                id: t.template_id,
                task: t.task,
            });
        }
    }
    Ok(templates)
}

fn read_template_dir(dir: &Path) -> Result<Vec<InstructionTemplate>, TemplateError> {
    let io_err = |source| TemplateError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(TemplateError::NoTemplates(dir.display().to_string()));
    }
    paths.sort();
    paths
        .iter()
        .map(|path| {
            let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
                path: path.display().to_string(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|e| TemplateError::Parse {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Looks up a template by task and ID.
pub fn find_template(
    templates: &[InstructionTemplate],
    task: Task,
    id: u32,
) -> Option<&InstructionTemplate> {
    templates
        .iter()
        .find(|t| t.task == task && t.template_id == id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    fn record(a: &str, b: &str, gold: usize, task: Task) -> DataRecord {
        DataRecord {
            data_id: "d1".into(),
            task,
            field_a: a.into(),
            field_b: b.into(),
            gold,
            subset: None,
            split: Split::Validation,
        }
    }

    fn fixture(pattern: &str, choices: &[&str]) -> InstructionTemplate {
        InstructionTemplate {
            template_id: 99,
            name: "fixture".into(),
            pattern: pattern.into(),
            answer_choices: choices.iter().map(|s| s.to_string()).collect(),
            quality: Quality::Unrated,
            task: Task::Anli,
            reconstruction: false,
        }
    }

    #[test]
    fn direct_substitution() {
        let t = fixture("{field_a}|{field_b}", &["x", "y", "z"]);
        let block = render_target(&t, &record("a", "b", 0, Task::Anli)).unwrap();
        assert_eq!(block.text, "a|b\n\nANSWER: ");
        assert_eq!(block.kind, BlockKind::Target);
    }

    #[test]
    fn placeholders_in_field_values_are_not_expanded() {
        let t = fixture("{field_b} then {field_a}", &["x", "y", "z"]);
        let block = render_target(&t, &record("{field_b}", "B", 0, Task::Anli)).unwrap();
        assert_eq!(block.text, "B then {field_b}\n\nANSWER: ");
    }

    #[test]
    fn wrong_task_is_rejected() {
        let t = fixture("{field_a}|{field_b}", &["x", "y", "z"]);
        assert!(matches!(
            render_target(&t, &record("a", "b", 0, Task::Qqp)).unwrap_err(),
            TemplateError::TaskMismatch { .. }
        ));
    }

    #[test]
    fn in_context_appends_gold_choice() {
        let t = fixture("{field_a} {field_b}", &["true", "false", "inconclusive"]);
        let r0 = record("p", "h", 0, Task::Anli);
        let target = render_target(&t, &r0).unwrap();
        let solved = render_in_context(&t, &r0).unwrap();
        assert_eq!(solved.text, format!("{}true", target.text));
        assert!(solved.text.ends_with("ANSWER: true"));
        let r2 = record("p", "h", 2, Task::Anli);
        assert!(render_in_context(&t, &r2).unwrap().text.ends_with("ANSWER: inconclusive"));
        let r3 = record("p", "h", 3, Task::Anli);
        assert!(matches!(
            render_in_context(&t, &r3).unwrap_err(),
            TemplateError::GoldOutOfRange { gold: 3, .. }
        ));
    }

    #[test]
    fn label_matching_is_exact_after_normalization() {
        let t = fixture("{field_a} {field_b}", &["true", "false", "inconclusive"]);
        assert_eq!(match_label(" False\n", &t), Some(1));
        assert_eq!(match_label("definitely", &t), None);
        assert_eq!(match_label("true because the premise says so", &t), None);
        assert_eq!(match_label("INCONCLUSIVE\nextra lines", &t), Some(2));
        assert_eq!(match_label("", &t), None);
    }

    #[test]
    fn validation_catches_bad_templates() {
        assert!(fixture("{field_a}", &["a", "b", "c"]).validate().is_err());
        assert!(fixture("{field_a}{field_a}{field_b}", &["a", "b", "c"]).validate().is_err());
        assert!(fixture("{field_a}{field_b}", &["a", "b"]).validate().is_err());
        assert!(fixture("{field_a}{field_b}", &["Yes", "yes ", "no"]).validate().is_err());
        assert!(fixture("{field_a}{field_b}", &["a", "b", "c"]).validate().is_ok());
    }

    #[test]
    fn bundled_anli_set() {
        let all = load_templates(None).unwrap();
        let anli: Vec<_> = all.iter().filter(|t| t.task == Task::Anli).collect();
        assert_eq!(anli.len(), 15);
        assert_eq!(anli[0].name, "MNLI Crowdsource");
        assert_eq!(anli[13].name, "Does It Follow That");
        assert_eq!(anli[14].name, "Claim True False Inconclusive");
        let verbatim: Vec<_> = anli
            .iter()
            .filter(|t| !t.reconstruction)
            .map(|t| t.template_id)
            .collect();
        assert_eq!(verbatim, [1, 2, 14, 15]);
        let qqp = bundled_templates(Task::Qqp);
        assert_eq!(qqp.len(), 1);
        assert_eq!(qqp[0].answer_choices, ["No", "Yes"]);
    }

    #[test]
    fn empty_directory_has_no_templates() {
        let dir = std::env::temp_dir().join(format!("icl-empty-templates-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let err = load_templates(Some(&dir)).unwrap_err();
        assert!(err.to_string().contains("no templates found"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
