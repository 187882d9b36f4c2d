//! Realizes setups as concrete prompts.
//!
//! Every prompt draws its in-context examples from a private RNG seeded by a
//! stable hash of `(seed, setup prompt key, data_id)`, so the text of a prompt
//! does not depend on generation order or thread count.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, DataRecord, Task, TrainingPool};
use crate::design::{
    self, DesignError, FactorSet, Level, Realization, Setup, SetupId,
};
use crate::hashing::stable_hash64;
use crate::template::{self, find_template, InstructionTemplate, TemplateError, ANSWER_CUE};

/// Separator between consecutive blocks: one blank line.
pub const BLOCK_SEPARATOR: &str = "\n\n";

const FEW_SHOTS: usize = 2;
const MANY_SHOTS: usize = 5;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("setup requires in-context examples from {0} but no {0} training pool was provided")]
    MissingPool(Task),
    #[error("no template {id} for task {task}")]
    UnknownTemplate { task: Task, id: u32 },
    #[error("no templates available for task {0}")]
    NoTemplates(Task),
    #[error("setup {setup_id}, data {data_id}: {message}")]
    Constraint {
        setup_id: SetupId,
        data_id: String,
        message: String,
    },
}

/// A fully rendered prompt with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub setup_id: SetupId,
    pub data_id: String,
    pub text: String,
    pub label_space: Vec<String>,
    /// `(data_id, template_id)` of each in-context example, in prompt order.
    pub in_context_ids: Vec<(String, u32)>,
    pub target_template_id: u32,
    /// Gold label of the target; read only by mock backends and scoring.
    pub gold: Option<usize>,
    /// Byte offset where the target block starts in `text`.
    pub target_offset: usize,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl PromptInstance {
    pub fn key(&self) -> (SetupId, String) {
        (self.setup_id.clone(), self.data_id.clone())
    }

    /// Everything before the target block, including the trailing separator.
    pub fn context_prefix(&self) -> &str {
        &self.text[..self.target_offset]
    }
}

/// Which templates realize the `hp_instructions` and `instructions` factors.
/// Index 0 of each pair is used when `instructions` is absent or irrelevant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetTemplates {
    pub high: [u32; 2],
    pub low: [u32; 2],
}

impl Default for TargetTemplates {
    fn default() -> Self {
        // 14 'Does It Follow That', 15 'Claim True False Inconclusive';
        // 1 'MNLI Crowdsource', 2 'Guaranteed Possible Impossible'.
        Self {
            high: [14, 15],
            low: [1, 2],
        }
    }
}

/// Training pools keyed by task: the target task's own pool and, for the
/// `cross_task` factor, a QQP pool.
#[derive(Debug, Clone)]
pub struct Pools {
    pub target: TrainingPool,
    pub cross_task: Option<TrainingPool>,
}

/// One chosen in-context example.
#[derive(Debug, Clone, Copy)]
pub struct Selected<'a> {
    pub record: &'a DataRecord,
    pub template: &'a InstructionTemplate,
}

/// Everything needed to turn `(setup, target record)` into a prompt.
#[derive(Debug, Clone)]
pub struct PromptGenerator {
    pub factors: FactorSet,
    pub pools: Pools,
    pub templates: Vec<InstructionTemplate>,
    pub target_templates: TargetTemplates,
    pub seed: u64,
    /// Forces every target onto one template (template probing runs).
    pub target_template_override: Option<u32>,
}

impl PromptGenerator {
    pub fn new(
        factors: FactorSet,
        pools: Pools,
        templates: Vec<InstructionTemplate>,
        target_templates: TargetTemplates,
        seed: u64,
    ) -> Self {
        Self {
            factors,
            pools,
            templates,
            target_templates,
            seed,
            target_template_override: None,
        }
    }

    pub fn with_target_template(mut self, template_id: u32) -> Self {
        self.target_template_override = Some(template_id);
        self
    }

    pub fn target_task(&self) -> Task {
        self.pools.target.task()
    }

    fn rng_for(&self, setup_id: &SetupId, data_id: &str) -> ChaCha8Rng {
        let key = self.factors.prompt_key(setup_id);
        let seed = stable_hash64([
            self.seed.to_le_bytes().as_slice(),
            key.as_bytes(),
            data_id.as_bytes(),
        ]);
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn template(&self, task: Task, id: u32) -> Result<&InstructionTemplate, SampleError> {
        find_template(&self.templates, task, id).ok_or(SampleError::UnknownTemplate { task, id })
    }

    fn templates_for(&self, task: Task) -> Vec<&InstructionTemplate> {
        self.templates.iter().filter(|t| t.task == task).collect()
    }

    /// Target template ID implied by the setup.
    pub fn target_template_id(&self, setup: &Setup) -> u32 {
        if let Some(id) = self.target_template_override {
            return id;
        }
        let group = if self.factors.is_present(setup, design::HP_INSTRUCTIONS) {
            self.target_templates.high
        } else {
            self.target_templates.low
        };
        group[usize::from(self.factors.is_present(setup, design::INSTRUCTIONS))]
    }

    pub fn shots(&self, setup: &Setup) -> usize {
        if self.factors.is_present(setup, design::N_SHOTS) {
            MANY_SHOTS
        } else {
            FEW_SHOTS
        }
    }

    fn source_pool(&self, setup: &Setup) -> Result<&TrainingPool, SampleError> {
        if self.factors.is_present(setup, design::CROSS_TASK) {
            self.pools
                .cross_task
                .as_ref()
                .ok_or(SampleError::MissingPool(Task::Qqp))
        } else {
            Ok(&self.pools.target)
        }
    }

    /// Template used for in-context examples of `task` when `cross_templates`
    /// is absent: the target template for the target task, otherwise the
    /// lowest-numbered template of that task.
    fn fixed_in_context_template(
        &self,
        setup: &Setup,
        task: Task,
    ) -> Result<&InstructionTemplate, SampleError> {
        if task == self.target_task() {
            self.template(task, self.target_template_id(setup))
        } else {
            self.templates_for(task)
                .into_iter()
                .min_by_key(|t| t.template_id)
                .ok_or(SampleError::NoTemplates(task))
        }
    }

    /// Chooses the in-context examples and their templates for one prompt.
    pub fn select_in_context<'a>(
        &'a self,
        setup: &Setup,
        target: &DataRecord,
    ) -> Result<Vec<Selected<'a>>, SampleError> {
        let setup_id = setup.id();
        let mut rng = self.rng_for(&setup_id, &target.data_id);
        let pool = self.source_pool(setup)?;
        let k = self.shots(setup);
        let classes = pool.task().label_count();
        let exclude = Some(target.data_id.as_str());

        let mut records: Vec<&DataRecord> = if self.factors.is_present(setup, design::ONE_LABEL) {
            let label = rng.random_range(0..classes);
            pool.draw_label(&mut rng, label, k, exclude)?
        } else if self.factors.is_present(setup, design::BALANCED_LABELS) {
            let mut counts = vec![k / classes; classes];
            for extra in index::sample(&mut rng, classes, k % classes) {
                counts[extra] += 1;
            }
            let mut drawn = Vec::with_capacity(k);
            for (label, &count) in counts.iter().enumerate() {
                drawn.extend(pool.draw_label(&mut rng, label, count, exclude)?);
            }
            drawn
        } else {
            pool.draw(&mut rng, k, exclude)?
        };
        records.shuffle(&mut rng);

        let task = pool.task();
        if self.factors.is_present(setup, design::CROSS_TEMPLATES) {
            let candidates = self.templates_for(task);
            if candidates.is_empty() {
                return Err(SampleError::NoTemplates(task));
            }
            Ok(records
                .into_iter()
                .map(|record| Selected {
                    record,
                    template: candidates[rng.random_range(0..candidates.len())],
                })
                .collect())
        } else {
            let template = self.fixed_in_context_template(setup, task)?;
            Ok(records
                .into_iter()
                .map(|record| Selected { record, template })
                .collect())
        }
    }

    /// Assembles the prompt text from a selection and checks it against the
    /// setup's constraints.
    pub fn compose_prompt(
        &self,
        setup: &Setup,
        target: &DataRecord,
        selection: &[Selected<'_>],
    ) -> Result<PromptInstance, SampleError> {
        let setup_id = setup.id();
        let target_template = self.template(target.task, self.target_template_id(setup))?;

        let picks: Vec<(&DataRecord, u32)> = selection
            .iter()
            .map(|s| (s.record, s.template.template_id))
            .collect();
        if let Some(message) = self.check_selection(setup, target, &picks).into_iter().next() {
            return Err(SampleError::Constraint {
                setup_id,
                data_id: target.data_id.clone(),
                message,
            });
        }

        let (text, target_offset) = self.render_text(setup, target_template, target, selection)?;
        let mut metadata = BTreeMap::new();
        if self.balance_vacuous(setup) {
            metadata.insert("balance_vacuous".to_string(), serde_json::Value::Bool(true));
        }
        Ok(PromptInstance {
            setup_id,
            data_id: target.data_id.clone(),
            text,
            label_space: target_template.answer_choices.clone(),
            in_context_ids: selection
                .iter()
                .map(|s| (s.record.data_id.clone(), s.template.template_id))
                .collect(),
            target_template_id: target_template.template_id,
            gold: Some(target.gold),
            target_offset,
            metadata,
        })
    }

    fn balance_vacuous(&self, setup: &Setup) -> bool {
        self.factors.is_present(setup, design::BALANCED_LABELS)
            && self.factors.is_present(setup, design::ONE_LABEL)
    }

    fn render_text(
        &self,
        setup: &Setup,
        target_template: &InstructionTemplate,
        target: &DataRecord,
        selection: &[Selected<'_>],
    ) -> Result<(String, usize), SampleError> {
        let mut text = String::new();
        for (factor, level) in self.factors.factors().iter().zip(&setup.levels) {
            if let (Realization::Prefix { text: prefix }, Level::Present) = (&factor.realize, level) {
                text.push_str(prefix);
                text.push_str(BLOCK_SEPARATOR);
            }
        }
        for s in selection {
            text.push_str(&template::render_in_context(s.template, s.record)?.text);
            text.push_str(BLOCK_SEPARATOR);
        }
        let offset = text.len();
        text.push_str(&template::render_target(target_template, target)?.text);
        Ok((text, offset))
    }

    /// Constraint violations of an in-context selection, as messages.
    fn check_selection(
        &self,
        setup: &Setup,
        target: &DataRecord,
        picks: &[(&DataRecord, u32)],
    ) -> Vec<String> {
        let mut problems = Vec::new();
        let k = self.shots(setup);
        if picks.len() != k {
            problems.push(format!("expected {k} in-context examples, found {}", picks.len()));
        }
        let expected_task = if self.factors.is_present(setup, design::CROSS_TASK) {
            Task::Qqp
        } else {
            self.target_task()
        };
        let mut ids = HashSet::new();
        for (record, _) in picks {
            if record.task != expected_task {
                problems.push(format!(
                    "in-context record {} is {} but the setup requires {expected_task}",
                    record.data_id, record.task
                ));
            }
            if record.data_id == target.data_id {
                problems.push(format!("target {} appears among its own examples", target.data_id));
            }
            if !ids.insert(record.data_id.as_str()) {
                problems.push(format!("in-context record {} repeated", record.data_id));
            }
        }

        let classes = expected_task.label_count();
        let mut counts = vec![0usize; classes];
        for (record, _) in picks {
            if let Some(c) = counts.get_mut(record.gold) {
                *c += 1;
            }
        }
        if self.factors.is_present(setup, design::ONE_LABEL) {
            if counts.iter().filter(|&&c| c > 0).count() > 1 {
                problems.push(format!("one_label requires a single label, got counts {counts:?}"));
            }
        } else if self.factors.is_present(setup, design::BALANCED_LABELS) {
            let max = counts.iter().max().copied().unwrap_or(0);
            let min = counts.iter().min().copied().unwrap_or(0);
            if max - min > 1 {
                problems.push(format!("balanced_labels violated, label counts {counts:?}"));
            }
        }

        if self.factors.is_present(setup, design::CROSS_TEMPLATES) {
            for (record, template_id) in picks {
                if find_template(&self.templates, record.task, *template_id).is_none() {
                    problems.push(format!(
                        "in-context record {} uses unknown {} template {template_id}",
                        record.data_id, record.task
                    ));
                }
            }
        } else {
            for (record, template_id) in picks {
                match self.fixed_in_context_template(setup, record.task) {
                    Ok(t) if t.template_id == *template_id => {}
                    Ok(t) => problems.push(format!(
                        "in-context record {} uses template {template_id}, expected {}",
                        record.data_id, t.template_id
                    )),
                    Err(e) => problems.push(e.to_string()),
                }
            }
        }
        problems
    }

    /// Renders one prompt.
    pub fn prompt(&self, setup: &Setup, target: &DataRecord) -> Result<PromptInstance, SampleError> {
        let selection = self.select_in_context(setup, target)?;
        self.compose_prompt(setup, target, &selection)
    }

    /// Lazily yields every prompt in `(setup_id, data_id)` order.
    pub fn generate_all<'a>(
        &'a self,
        setups: &'a [Setup],
        eval_set: &'a [DataRecord],
    ) -> impl Iterator<Item = Result<PromptInstance, SampleError>> + 'a {
        self.generate_from(setups, eval_set, None)
    }

    /// Like [`generate_all`](Self::generate_all), starting at the first key
    /// not smaller than `start`.
    pub fn generate_from<'a>(
        &'a self,
        setups: &'a [Setup],
        eval_set: &'a [DataRecord],
        start: Option<(SetupId, String)>,
    ) -> impl Iterator<Item = Result<PromptInstance, SampleError>> + 'a {
        let mut setups: Vec<&Setup> = setups.iter().collect();
        setups.sort();
        let mut records: Vec<&DataRecord> = eval_set.iter().collect();
        records.sort_by(|a, b| a.data_id.cmp(&b.data_id));
        setups.into_iter().flat_map(move |setup| {
            let id = setup.id();
            let start = start.clone();
            records
                .clone()
                .into_iter()
                .filter(move |r| {
                    start
                        .as_ref()
                        .is_none_or(|(s, d)| (&id, &r.data_id) >= (s, d))
                })
                .map(move |r| self.prompt(setup, r))
        })
    }

    /// All prompts of one setup, rendered in parallel, sorted by data ID.
    pub fn generate_setup(
        &self,
        setup: &Setup,
        eval_set: &[DataRecord],
    ) -> Result<Vec<PromptInstance>, SampleError> {
        let mut out: Vec<PromptInstance> = eval_set
            .par_iter()
            .map(|r| self.prompt(setup, r))
            .collect::<Result<_, _>>()?;
        out.sort_by(|a, b| a.data_id.cmp(&b.data_id));
        Ok(out)
    }

    /// Parallel counterpart of [`generate_all`](Self::generate_all) with the
    /// same output order.
    pub fn generate_all_par(
        &self,
        setups: &[Setup],
        eval_set: &[DataRecord],
    ) -> Result<Vec<PromptInstance>, SampleError> {
        let mut setups: Vec<&Setup> = setups.iter().collect();
        setups.sort();
        let mut out = Vec::with_capacity(setups.len() * eval_set.len());
        for setup in setups {
            out.extend(self.generate_setup(setup, eval_set)?);
        }
        Ok(out)
    }
}

/// A broken constraint found by [`PromptValidator`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub setup_id: SetupId,
    pub data_id: String,
    pub message: String,
}

/// Re-derives every constraint of a prompt from its setup ID and the corpora.
pub struct PromptValidator<'a> {
    generator: &'a PromptGenerator,
    targets: HashMap<&'a str, &'a DataRecord>,
    examples: HashMap<(Task, &'a str), &'a DataRecord>,
}

impl<'a> PromptValidator<'a> {
    pub fn new(generator: &'a PromptGenerator, eval_set: &'a [DataRecord]) -> Self {
        let mut examples = HashMap::new();
        for pool in std::iter::once(&generator.pools.target).chain(generator.pools.cross_task.as_ref()) {
            for r in &pool.corpus().records {
                examples.insert((r.task, r.data_id.as_str()), r);
            }
        }
        Self {
            generator,
            targets: eval_set.iter().map(|r| (r.data_id.as_str(), r)).collect(),
            examples,
        }
    }

    pub fn validate(&self, prompt: &PromptInstance) -> Vec<Violation> {
        let violation = |message: String| Violation {
            setup_id: prompt.setup_id.clone(),
            data_id: prompt.data_id.clone(),
            message,
        };
        let g = self.generator;
        let setup = match g.factors.decode(&prompt.setup_id) {
            Ok(s) => s,
            Err(e) => return vec![violation(e.to_string())],
        };
        let Some(&target) = self.targets.get(prompt.data_id.as_str()) else {
            return vec![violation(format!("unknown data id {}", prompt.data_id))];
        };
        let mut out = Vec::new();
        if prompt.gold != Some(target.gold) {
            out.push(violation(format!(
                "gold {:?} does not match dataset gold {}",
                prompt.gold, target.gold
            )));
        }

        let expected_target = g.target_template_id(&setup);
        if prompt.target_template_id != expected_target {
            out.push(violation(format!(
                "target template {} but setup implies {expected_target}",
                prompt.target_template_id
            )));
        }

        // Resolve each example against whichever pool knows it; a record from
        // the wrong task surfaces as a task violation rather than a lookup failure.
        let mut picks = Vec::with_capacity(prompt.in_context_ids.len());
        for (id, template_id) in &prompt.in_context_ids {
            let found = [g.target_task(), Task::Qqp]
                .iter()
                .find_map(|task| self.examples.get(&(*task, id.as_str())));
            match found {
                Some(&record) => picks.push((record, *template_id)),
                None => out.push(violation(format!("unknown in-context record {id}"))),
            }
        }
        out.extend(
            g.check_selection(&setup, target, &picks)
                .into_iter()
                .map(&violation),
        );

        let k = g.shots(&setup);
        let cues = prompt.text.matches(ANSWER_CUE).count();
        if cues != k + 1 {
            out.push(violation(format!("expected {} answer cues, found {cues}", k + 1)));
        }
        if !prompt.text.ends_with(ANSWER_CUE) {
            out.push(violation("text does not end with the answer cue".to_string()));
        }
        let vacuous = prompt.metadata.get("balance_vacuous") == Some(&serde_json::Value::Bool(true));
        if vacuous != g.balance_vacuous(&setup) {
            out.push(violation("balance_vacuous metadata inconsistent with setup".to_string()));
        }

        // Exact re-rendering catches any textual drift from the recorded provenance.
        if out.is_empty() {
            let rerender = g.template(target.task, prompt.target_template_id).and_then(|tt| {
                let selection: Vec<Selected<'_>> = picks
                    .iter()
                    .map(|(record, tid)| {
                        g.template(record.task, *tid)
                            .map(|template| Selected { record, template })
                    })
                    .collect::<Result<_, _>>()?;
                let expected_space = &tt.answer_choices;
                let (text, offset) = g.render_text(&setup, tt, target, &selection)?;
                Ok((text, offset, expected_space.clone()))
            });
            match rerender {
                Ok((text, offset, space)) => {
                    if text != prompt.text {
                        out.push(violation("text differs from re-rendered prompt".to_string()));
                    }
                    if offset != prompt.target_offset {
                        out.push(violation("target_offset differs from re-rendered prompt".to_string()));
                    }
                    if space != prompt.label_space {
                        out.push(violation("label_space differs from target template".to_string()));
                    }
                }
                Err(e) => out.push(violation(e.to_string())),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{training_pool, Corpus, Split};
    use crate::design::{default_factor_set, ExclusionRule};
    use crate::template::load_templates;
    use std::sync::Arc;

    fn records(task: Task, split: Split, n: usize, prefix: &str) -> Vec<DataRecord> {
        (0..n)
            .map(|i| DataRecord {
                data_id: format!("{prefix}-{i:04}"),
                task,
                field_a: format!("premise {i}."),
                field_b: format!("hypothesis {i}."),
                gold: i % task.label_count(),
                subset: None,
                split,
            })
            .collect()
    }

    fn generator(seed: u64) -> PromptGenerator {
        let train = Corpus::from_records(Task::Anli, Split::Train, records(Task::Anli, Split::Train, 60, "anli-train")).unwrap();
        let qqp = Corpus::from_records(Task::Qqp, Split::Train, records(Task::Qqp, Split::Train, 40, "qqp-train")).unwrap();
        PromptGenerator::new(
            default_factor_set(Task::Anli, ExclusionRule::Nesting).unwrap(),
            Pools {
                target: training_pool(Arc::new(train), None).unwrap(),
                cross_task: Some(training_pool(Arc::new(qqp), None).unwrap()),
            },
            load_templates(None).unwrap(),
            TargetTemplates::default(),
            seed,
        )
    }

    fn setup(g: &PromptGenerator, id: &str) -> Setup {
        g.factors.decode(&id.into()).unwrap()
    }

    fn target() -> DataRecord {
        records(Task::Anli, Split::Validation, 1, "anli-val").remove(0)
    }

    #[test]
    fn balanced_five_shots_split_two_two_one() {
        let g = generator(0);
        let s = setup(&g, "1010020");
        for seed in 0..50 {
            let g = PromptGenerator { seed, ..g.clone() };
            let picks = g.select_in_context(&s, &target()).unwrap();
            assert_eq!(picks.len(), 5);
            let mut counts = [0; 3];
            for p in &picks {
                counts[p.record.gold] += 1;
            }
            counts.sort();
            assert_eq!(counts, [1, 2, 2]);
        }
    }

    #[test]
    fn one_label_shares_gold() {
        let g = generator(1);
        let s = setup(&g, "1000021");
        let picks = g.select_in_context(&s, &target()).unwrap();
        assert_eq!(picks.len(), 5);
        assert!(picks.iter().all(|p| p.record.gold == picks[0].record.gold));
    }

    #[test]
    fn cross_task_uses_qqp() {
        let g = generator(2);
        let s = setup(&g, "0000120");
        let picks = g.select_in_context(&s, &target()).unwrap();
        assert_eq!(picks.len(), 2);
        assert!(picks.iter().all(|p| p.record.task == Task::Qqp && p.template.task == Task::Qqp));
    }

    #[test]
    fn missing_qqp_pool_is_an_error() {
        let mut g = generator(2);
        g.pools.cross_task = None;
        let s = setup(&g, "0000120");
        assert!(matches!(
            g.select_in_context(&s, &target()).unwrap_err(),
            SampleError::MissingPool(Task::Qqp)
        ));
    }

    #[test]
    fn target_template_follows_hp_and_instructions() {
        let g = generator(0);
        assert_eq!(g.target_template_id(&setup(&g, "0000020")), 1);
        assert_eq!(g.target_template_id(&setup(&g, "0100000")), 14);
        assert_eq!(g.target_template_id(&setup(&g, "0100010")), 15);
        let p = g.prompt(&setup(&g, "0100010"), &target()).unwrap();
        assert_eq!(p.target_template_id, 15);
        assert!(p.text.ends_with("true, false, or inconclusive?\n\nANSWER: "));
    }

    #[test]
    fn prompt_structure() {
        let g = generator(3);
        let p = g.prompt(&setup(&g, "0100000"), &target()).unwrap();
        assert_eq!(p.text.matches("ANSWER:").count(), 3);
        assert!(p.text.ends_with("ANSWER: "));
        assert!(!p.text.contains("\n\n\n"));
        assert_eq!(p.in_context_ids.len(), 2);
        assert!(p.text[p.target_offset..].starts_with("Given that premise 0."));
        assert_eq!(p.label_space, ["Yes", "Maybe", "No"]);
    }

    #[test]
    fn vacuous_balance_is_recorded() {
        let g = generator(3);
        let p = g.prompt(&setup(&g, "0010021"), &target()).unwrap();
        assert_eq!(p.metadata.get("balance_vacuous"), Some(&serde_json::Value::Bool(true)));
        let q = g.prompt(&setup(&g, "0010020"), &target()).unwrap();
        assert!(q.metadata.is_empty());
    }

    #[test]
    fn determinism_is_order_independent() {
        let g = generator(9);
        let setups = g.factors.enumerate();
        let eval = records(Task::Anli, Split::Validation, 4, "anli-val");
        let seq: Vec<_> = g.generate_all(&setups, &eval).collect::<Result<_, _>>().unwrap();
        let par = g.generate_all_par(&setups, &eval).unwrap();
        assert_eq!(seq, par);
        assert_eq!(seq.len(), 96 * 4);
        let mut rev = eval.clone();
        rev.reverse();
        let single = g.prompt(&setups[40], &rev[1]).unwrap();
        let found = seq
            .iter()
            .find(|p| p.setup_id == setups[40].id() && p.data_id == rev[1].data_id)
            .unwrap();
        assert_eq!(&single, found);
    }

    #[test]
    fn resume_from_key() {
        let g = generator(9);
        let setups = g.factors.enumerate();
        let eval = records(Task::Anli, Split::Validation, 3, "anli-val");
        let all: Vec<_> = g.generate_all(&setups, &eval).map(Result::unwrap).collect();
        let start = all[100].key();
        let rest: Vec<_> = g
            .generate_from(&setups, &eval, Some(start))
            .map(Result::unwrap)
            .collect();
        assert_eq!(rest, all[100..]);
    }

    #[test]
    fn generated_prompts_validate() {
        let g = generator(4);
        let setups = g.factors.enumerate();
        let eval = records(Task::Anli, Split::Validation, 3, "anli-val");
        let validator = PromptValidator::new(&g, &eval);
        for p in g.generate_all_par(&setups, &eval).unwrap() {
            assert!(validator.validate(&p).is_empty(), "{:?}", validator.validate(&p));
        }
    }

    #[test]
    fn composition_rejects_constraint_violations() {
        let g = generator(4);
        let s = setup(&g, "0000020");
        let t = target();
        let mut picks = g.select_in_context(&s, &t).unwrap();
        picks.pop();
        assert!(matches!(
            g.compose_prompt(&s, &t, &picks).unwrap_err(),
            SampleError::Constraint { .. }
        ));
    }
}
