use std::path::PathBuf;

use icl_consistency::template::{bundled_templates, render_in_context, render_target, ANSWER_CUE};
use icl_consistency::{DataRecord, Split, Task};
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    id: String,
    field_a: String,
    field_b: String,
    gold: usize,
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn record() -> DataRecord {
    let f: Fixture = serde_json::from_str(&std::fs::read_to_string(golden("lil_jon_record.json")).unwrap()).unwrap();
    DataRecord {
        data_id: f.id,
        task: Task::Anli,
        field_a: f.field_a,
        field_b: f.field_b,
        gold: f.gold,
        subset: None,
        split: Split::Validation,
    }
}

#[test]
fn quoted_templates_render_byte_exact() {
    let templates = bundled_templates(Task::Anli);
    let record = record();
    for (id, file) in [
        (1, "mnli_crowdsource.txt"),
        (2, "guaranteed_possible_impossible.txt"),
        (14, "does_it_follow_that.txt"),
        (15, "claim_true_false_inconclusive.txt"),
    ] {
        let t = templates.iter().find(|t| t.template_id == id).unwrap();
        assert!(!t.reconstruction, "template {id} should be verbatim");
        let expected = std::fs::read(golden(file)).unwrap();
        let rendered = render_target(t, &record).unwrap();
        assert_eq!(rendered.text.as_bytes(), expected.as_slice(), "template {id} ({file})");
        assert!(rendered.text.ends_with(ANSWER_CUE));

        let solved = render_in_context(t, &record).unwrap();
        assert!(solved.text.starts_with(&rendered.text));
        assert_eq!(&solved.text[rendered.text.len()..], t.answer_choices[record.gold]);
    }
}

#[test]
fn bundled_names_and_flags() {
    let templates = bundled_templates(Task::Anli);
    assert_eq!(templates.len(), 15);
    let names: Vec<&str> = templates.iter().map(|t| t.name.as_str()).collect();
    let published = [
        "MNLI Crowdsource",
        "Guaranteed Possible Impossible",
        "Always Sometimes Never",
        "Consider Always Sometimes Never",
        "Does This Imply",
        "Guaranteed True",
        "GPT 3 Style",
        "Take the Following as Truth",
        "Must Be True",
        "Based on the Previous Passage",
        "Should Assume",
        "Can We Infer",
        "Justified in Saying",
        "Does It Follow That",
        "Claim True False Inconclusive",
    ];
    assert_eq!(names, published);
    for (i, t) in templates.iter().enumerate() {
        assert_eq!(t.template_id as usize, i + 1);
    }
    assert_eq!(templates.iter().filter(|t| !t.reconstruction).count(), 4);
}
