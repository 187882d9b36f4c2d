//! Factors, full factorial setup enumeration and the setup-ID codec.
//!
//! Each factor occupies one digit of a setup ID: `0` absent, `1` present,
//! `2` irrelevant (its applicability condition does not hold). Applicability
//! conditions are conjunctions of `name=value` terms over factors with a
//! smaller position, so a setup can be decoded left to right.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Task;

pub const N_SHOTS: &str = "n_shots";
pub const HP_INSTRUCTIONS: &str = "hp_instructions";
pub const BALANCED_LABELS: &str = "balanced_labels";
pub const CROSS_TEMPLATES: &str = "cross_templates";
pub const CROSS_TASK: &str = "cross_task";
pub const INSTRUCTIONS: &str = "instructions";
pub const ONE_LABEL: &str = "one_label";
/// Run-annotation factor consumed by the runner: calibrated labels are used
/// for setups where it is present.
pub const CALIBRATION: &str = "calibration";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DesignError {
    #[error("default factor set is defined for anli and mnli, not {0}")]
    UnsupportedTask(Task),
    #[error("factor {name} has position {found}, expected {expected}")]
    BadPosition {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("duplicate factor name {0:?}")]
    DuplicateName(String),
    #[error("unknown factor {0:?}")]
    UnknownFactor(String),
    #[error("cyclic applicability: {factor} depends on {depends_on}, which does not precede it")]
    Cycle { factor: String, depends_on: String },
    #[error("malformed condition {0:?}: expected name=0 or name=1")]
    BadCondition(String),
    #[error("setup id {id:?} has {found} digits, expected {expected}")]
    WrongLength {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("setup id {id:?}: invalid digit {digit:?} at position {position}")]
    BadDigit {
        id: String,
        position: usize,
        digit: char,
    },
    #[error("setup id {id:?}: factor {factor} at position {position} is {actual} but the digit says {digit}")]
    ApplicabilityMismatch {
        id: String,
        factor: String,
        position: usize,
        actual: &'static str,
        digit: char,
    },
}

/// Level of one factor within a setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Absent,
    Present,
    Irrelevant,
}

impl Level {
    pub fn digit(self) -> char {
        match self {
            Level::Absent => '0',
            Level::Present => '1',
            Level::Irrelevant => '2',
        }
    }

    pub fn from_digit(c: char) -> Option<Self> {
        match c {
            '0' => Some(Level::Absent),
            '1' => Some(Level::Present),
            '2' => Some(Level::Irrelevant),
            _ => None,
        }
    }

    pub fn is_present(self) -> bool {
        self == Level::Present
    }

    /// 0/1 indicator for regressions; `None` when irrelevant.
    pub fn indicator(self) -> Option<f64> {
        match self {
            Level::Absent => Some(0.0),
            Level::Present => Some(1.0),
            Level::Irrelevant => None,
        }
    }
}

/// One `name=value` term of an applicability conjunction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Condition {
    pub factor: String,
    pub present: bool,
}

impl Condition {
    pub fn new(factor: &str, present: bool) -> Self {
        Self {
            factor: factor.to_string(),
            present,
        }
    }
}

impl FromStr for Condition {
    type Err = DesignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, value) = s
            .split_once('=')
            .ok_or_else(|| DesignError::BadCondition(s.to_string()))?;
        let present = match value.trim() {
            "0" => false,
            "1" => true,
            _ => return Err(DesignError::BadCondition(s.to_string())),
        };
        let name = name.trim();
        if name.is_empty() {
            return Err(DesignError::BadCondition(s.to_string()));
        }
        Ok(Self::new(name, present))
    }
}

impl TryFrom<String> for Condition {
    type Error = DesignError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Condition> for String {
    fn from(c: Condition) -> Self {
        c.to_string()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.factor, u8::from(self.present))
    }
}

/// How a factor's presence is realized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Realization {
    /// One of the built-in prompt factors, realized by the sampler by name.
    Builtin,
    /// Prepends `text` to the whole prompt when present.
    Prefix { text: String },
    /// Changes nothing in the prompt; tags results (model variant, calibration).
    Annotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub position: usize,
    /// Conjunction; empty means always applicable.
    #[serde(default)]
    pub applicable_when: Vec<Condition>,
    #[serde(default = "default_realization")]
    pub realize: Realization,
}

fn default_realization() -> Realization {
    Realization::Builtin
}

impl Factor {
    pub fn new(name: &str, position: usize) -> Self {
        Self {
            name: name.to_string(),
            position,
            applicable_when: Vec::new(),
            realize: Realization::Builtin,
        }
    }

    pub fn when(mut self, condition: Condition) -> Self {
        self.applicable_when.push(condition);
        self
    }

    pub fn realized_by(mut self, realize: Realization) -> Self {
        self.realize = realize;
        self
    }
}

/// The two readings of how the seven default factors collapse to 96 setups.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionRule {
    /// `instructions` applies only when `hp_instructions` is present.
    #[default]
    Nesting,
    /// `one_label` applies only when `balanced_labels` is absent.
    MutualExclusion,
}

/// Assignment of levels to factors, in factor position order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Setup {
    pub levels: Vec<Level>,
}

impl Setup {
    pub fn id(&self) -> SetupId {
        encode_setup_id(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SetupId(pub String);

impl SetupId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SetupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SetupId {
    fn from(s: &str) -> Self {
        SetupId(s.to_string())
    }
}

pub fn encode_setup_id(setup: &Setup) -> SetupId {
    SetupId(setup.levels.iter().map(|l| l.digit()).collect())
}

/// Validated, position-ordered list of factors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Factor>", into = "Vec<Factor>")]
pub struct FactorSet {
    factors: Vec<Factor>,
}

impl TryFrom<Vec<Factor>> for FactorSet {
    type Error = DesignError;

    fn try_from(factors: Vec<Factor>) -> Result<Self, Self::Error> {
        FactorSet::new(factors)
    }
}

impl From<FactorSet> for Vec<Factor> {
    fn from(set: FactorSet) -> Self {
        set.factors
    }
}

impl FactorSet {
    pub fn new(mut factors: Vec<Factor>) -> Result<Self, DesignError> {
        factors.sort_by_key(|f| f.position);
        let mut positions: HashMap<&str, usize> = HashMap::new();
        for (expected, f) in factors.iter().enumerate() {
            if f.position != expected {
                return Err(DesignError::BadPosition {
                    name: f.name.clone(),
                    expected,
                    found: f.position,
                });
            }
            if positions.insert(f.name.as_str(), f.position).is_some() {
                return Err(DesignError::DuplicateName(f.name.clone()));
            }
        }
        for f in &factors {
            for c in &f.applicable_when {
                match positions.get(c.factor.as_str()) {
                    None => return Err(DesignError::UnknownFactor(c.factor.clone())),
                    Some(&p) if p >= f.position => {
                        return Err(DesignError::Cycle {
                            factor: f.name.clone(),
                            depends_on: c.factor.clone(),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(Self { factors })
    }

    pub fn empty() -> Self {
        Self {
            factors: Vec::new(),
        }
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.factors.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    pub fn factor(&self, name: &str) -> Option<&Factor> {
        self.factors.iter().find(|f| f.name == name)
    }

    /// Level of `name` in `setup`; factors missing from the set read as absent.
    pub fn level(&self, setup: &Setup, name: &str) -> Level {
        self.position(name)
            .and_then(|p| setup.levels.get(p).copied())
            .unwrap_or(Level::Absent)
    }

    pub fn is_present(&self, setup: &Setup, name: &str) -> bool {
        self.level(setup, name).is_present()
    }

    pub fn assignment(&self, setup: &Setup) -> BTreeMap<String, Level> {
        self.factors
            .iter()
            .zip(&setup.levels)
            .map(|(f, l)| (f.name.clone(), *l))
            .collect()
    }

    fn applicable(&self, position: usize, prefix: &[Level]) -> bool {
        self.factors[position].applicable_when.iter().all(|c| {
            let p = self.position(&c.factor).expect("validated condition");
            match prefix[p] {
                Level::Present => c.present,
                Level::Absent => !c.present,
                Level::Irrelevant => false,
            }
        })
    }

    /// Recomputes applicability of every factor after `from`, forcing newly
    /// inapplicable factors to irrelevant and newly applicable ones to absent.
    fn normalize_after(&self, levels: &mut [Level], from: usize) {
        for p in from + 1..levels.len() {
            let applicable = self.applicable(p, &levels[..p]);
            levels[p] = match (applicable, levels[p]) {
                (false, _) => Level::Irrelevant,
                (true, Level::Irrelevant) => Level::Absent,
                (true, level) => level,
            };
        }
    }

    pub fn decode(&self, id: &SetupId) -> Result<Setup, DesignError> {
        let digits: Vec<char> = id.0.chars().collect();
        if digits.len() != self.factors.len() {
            return Err(DesignError::WrongLength {
                id: id.0.clone(),
                expected: self.factors.len(),
                found: digits.len(),
            });
        }
        let mut levels = Vec::with_capacity(digits.len());
        for (position, &digit) in digits.iter().enumerate() {
            let level = Level::from_digit(digit).ok_or_else(|| DesignError::BadDigit {
                id: id.0.clone(),
                position,
                digit,
            })?;
            let applicable = self.applicable(position, &levels);
            if applicable == (level == Level::Irrelevant) {
                return Err(DesignError::ApplicabilityMismatch {
                    id: id.0.clone(),
                    factor: self.factors[position].name.clone(),
                    position,
                    actual: if applicable { "applicable" } else { "inapplicable" },
                    digit,
                });
            }
            levels.push(level);
        }
        Ok(Setup { levels })
    }

    /// Every valid setup, sorted by setup ID.
    pub fn enumerate(&self) -> Vec<Setup> {
        let mut out = Vec::new();
        let mut levels = Vec::with_capacity(self.factors.len());
        self.extend(&mut levels, &mut out);
        out.sort();
        out
    }

    fn extend(&self, levels: &mut Vec<Level>, out: &mut Vec<Setup>) {
        let p = levels.len();
        if p == self.factors.len() {
            out.push(Setup {
                levels: levels.clone(),
            });
            return;
        }
        let choices: &[Level] = if self.applicable(p, levels) {
            &[Level::Absent, Level::Present]
        } else {
            &[Level::Irrelevant]
        };
        for &level in choices {
            levels.push(level);
            self.extend(levels, out);
            levels.pop();
        }
    }

    /// Appends a user-defined factor at the next position.
    pub fn register_custom_factor(&self, factor: Factor) -> Result<FactorSet, DesignError> {
        if self.position(&factor.name).is_some() {
            return Err(DesignError::DuplicateName(factor.name));
        }
        if factor.position != self.factors.len() {
            return Err(DesignError::BadPosition {
                name: factor.name,
                expected: self.factors.len(),
                found: factor.position,
            });
        }
        let mut factors = self.factors.clone();
        factors.push(factor);
        FactorSet::new(factors)
    }

    /// Pairs of setups that differ only in `name` (absent first, present
    /// second). Factors whose applicability depends on `name` take their
    /// matched counterpart level: absent when they become applicable,
    /// irrelevant when they stop applying. Each participating setup appears in
    /// exactly one pair.
    pub fn pairs_differing_in(
        &self,
        setups: &[Setup],
        name: &str,
    ) -> Result<Vec<(Setup, Setup)>, DesignError> {
        let p = self
            .position(name)
            .ok_or_else(|| DesignError::UnknownFactor(name.to_string()))?;
        let index: HashSet<&Setup> = setups.iter().collect();
        let flip = |s: &Setup, level: Level| {
            let mut levels = s.levels.clone();
            levels[p] = level;
            self.normalize_after(&mut levels, p);
            Setup { levels }
        };
        let mut pairs: Vec<(Setup, Setup)> = setups
            .iter()
            .filter(|s| s.levels.get(p) == Some(&Level::Absent))
            .filter_map(|s0| {
                let s1 = flip(s0, Level::Present);
                (index.contains(&s1) && flip(&s1, Level::Absent) == *s0)
                    .then(|| (s0.clone(), s1))
            })
            .collect();
        pairs.sort();
        pairs.dedup();
        Ok(pairs)
    }

    /// Setup ID with the digits of annotation factors blanked out. Setups that
    /// differ only in annotations share this key, and so share their prompts.
    pub fn prompt_key(&self, id: &SetupId) -> String {
        id.0.chars()
            .zip(&self.factors)
            .map(|(c, f)| {
                if f.realize == Realization::Annotation {
                    '-'
                } else {
                    c
                }
            })
            .collect()
    }

    pub fn annotation_names(&self) -> Vec<&str> {
        self.factors
            .iter()
            .filter(|f| f.realize == Realization::Annotation)
            .map(|f| f.name.as_str())
            .collect()
    }
}

/// The seven built-in factors in setup-ID digit order.
pub fn default_factor_set(task: Task, rule: ExclusionRule) -> Result<FactorSet, DesignError> {
    if task == Task::Qqp {
        return Err(DesignError::UnsupportedTask(task));
    }
    let mut instructions = Factor::new(INSTRUCTIONS, 5);
    let mut one_label = Factor::new(ONE_LABEL, 6);
    match rule {
        ExclusionRule::Nesting => instructions = instructions.when(Condition::new(HP_INSTRUCTIONS, true)),
        ExclusionRule::MutualExclusion => {
            one_label = one_label.when(Condition::new(BALANCED_LABELS, false))
        }
    }
    FactorSet::new(vec![
        Factor::new(N_SHOTS, 0),
        Factor::new(HP_INSTRUCTIONS, 1),
        Factor::new(BALANCED_LABELS, 2),
        Factor::new(CROSS_TEMPLATES, 3),
        Factor::new(CROSS_TASK, 4),
        instructions,
        one_label,
    ])
}

pub fn enumerate_setups(factors: &FactorSet) -> Vec<Setup> {
    factors.enumerate()
}

pub fn decode_setup_id(id: &SetupId, factors: &FactorSet) -> Result<Setup, DesignError> {
    factors.decode(id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_set() -> FactorSet {
        default_factor_set(Task::Anli, ExclusionRule::Nesting).unwrap()
    }

    /// Independent count: all 2^n binary assignments, filtered by the
    /// nesting rule, with no use of the enumerator.
    fn brute_force_count(nested: bool) -> usize {
        (0u32..128)
            .filter(|bits| !nested || bits & (1 << 1) != 0 || bits & (1 << 5) == 0)
            .count()
    }

    #[test]
    fn default_set_order_and_nesting() {
        let set = default_set();
        assert_eq!(
            set.names(),
            [N_SHOTS, HP_INSTRUCTIONS, BALANCED_LABELS, CROSS_TEMPLATES, CROSS_TASK, INSTRUCTIONS, ONE_LABEL]
        );
        assert_eq!(
            set.factor(INSTRUCTIONS).unwrap().applicable_when,
            [Condition::new(HP_INSTRUCTIONS, true)]
        );
        assert_eq!(set.enumerate().len(), 96);
        assert_eq!(brute_force_count(true), 96);
    }

    #[test]
    fn removing_nesting_gives_full_product() {
        let mut factors = default_set().factors().to_vec();
        factors[5].applicable_when.clear();
        let set = FactorSet::new(factors).unwrap();
        assert_eq!(set.enumerate().len(), 128);
        assert_eq!(brute_force_count(false), 128);
    }

    #[test]
    fn mutual_exclusion_reading_also_gives_96() {
        let set = default_factor_set(Task::Mnli, ExclusionRule::MutualExclusion).unwrap();
        assert_eq!(set.enumerate().len(), 96);
    }

    #[test]
    fn qqp_has_no_default_set() {
        assert_eq!(
            default_factor_set(Task::Qqp, ExclusionRule::Nesting).unwrap_err(),
            DesignError::UnsupportedTask(Task::Qqp)
        );
    }

    #[test]
    fn small_products() {
        assert_eq!(FactorSet::empty().enumerate(), vec![Setup { levels: vec![] }]);
        let two = FactorSet::new(vec![Factor::new("a", 0), Factor::new("b", 1)]).unwrap();
        let ids: Vec<_> = two.enumerate().iter().map(|s| s.id().0).collect();
        assert_eq!(ids, ["00", "01", "10", "11"]);
    }

    #[test]
    fn codec_examples() {
        let set = default_set();
        let all_absent = Setup {
            levels: vec![
                Level::Absent,
                Level::Absent,
                Level::Absent,
                Level::Absent,
                Level::Absent,
                Level::Irrelevant,
                Level::Absent,
            ],
        };
        assert_eq!(all_absent.id().0, "0000020");
        assert_eq!(set.decode(&"0000020".into()).unwrap(), all_absent);
        assert_eq!(
            set.decode(&"1111111".into()).unwrap().levels,
            vec![Level::Present; 7]
        );
        assert!(matches!(
            set.decode(&"2111111".into()).unwrap_err(),
            DesignError::ApplicabilityMismatch { position: 0, .. }
        ));
        assert!(matches!(
            set.decode(&"0000000".into()).unwrap_err(),
            DesignError::ApplicabilityMismatch { position: 5, .. }
        ));
        assert!(matches!(
            set.decode(&"000".into()).unwrap_err(),
            DesignError::WrongLength { .. }
        ));
        assert!(matches!(
            set.decode(&"00000x0".into()).unwrap_err(),
            DesignError::BadDigit { .. }
        ));
    }

    #[test]
    fn forward_reference_is_a_cycle() {
        let err = FactorSet::new(vec![
            Factor::new("a", 0).when(Condition::new("b", true)),
            Factor::new("b", 1),
        ])
        .unwrap_err();
        assert!(matches!(err, DesignError::Cycle { .. }));
        let err = FactorSet::new(vec![Factor::new("a", 0).when(Condition::new("a", true))]).unwrap_err();
        assert!(matches!(err, DesignError::Cycle { .. }));
    }

    #[test]
    fn positions_must_be_contiguous() {
        let err = FactorSet::new(vec![Factor::new("a", 0), Factor::new("b", 2)]).unwrap_err();
        assert!(matches!(err, DesignError::BadPosition { expected: 1, found: 2, .. }));
    }

    #[test]
    fn custom_factors() {
        let set = default_set();
        let calibrated = set
            .register_custom_factor(Factor::new(CALIBRATION, 7).realized_by(Realization::Annotation))
            .unwrap();
        assert_eq!(calibrated.enumerate().len(), 192);

        let never = Factor::new("never", 7)
            .when(Condition::new(N_SHOTS, true))
            .when(Condition::new(N_SHOTS, false));
        assert_eq!(set.register_custom_factor(never).unwrap().enumerate().len(), 96);

        assert_eq!(
            set.register_custom_factor(Factor::new(ONE_LABEL, 7)).unwrap_err(),
            DesignError::DuplicateName(ONE_LABEL.into())
        );
        assert!(matches!(
            set.register_custom_factor(Factor::new("late", 9)).unwrap_err(),
            DesignError::BadPosition { .. }
        ));
    }

    #[test]
    fn pair_counts() {
        let set = default_set();
        let setups = set.enumerate();
        let count = |name| set.pairs_differing_in(&setups, name).unwrap().len();
        assert_eq!(count(ONE_LABEL), 48);
        assert_eq!(count(INSTRUCTIONS), 32);
        assert_eq!(count(HP_INSTRUCTIONS), 32);
        assert_eq!(count(N_SHOTS), 48);
        assert!(set.pairs_differing_in(&setups[..1], ONE_LABEL).unwrap().is_empty());
        assert_eq!(
            set.pairs_differing_in(&setups, "nope").unwrap_err(),
            DesignError::UnknownFactor("nope".into())
        );
    }

    #[test]
    fn pairs_differ_only_in_the_named_factor() {
        let set = default_set();
        let setups = set.enumerate();
        for (p, f) in set.factors().iter().enumerate() {
            let pairs = set.pairs_differing_in(&setups, &f.name).unwrap();
            let mut seen = HashSet::new();
            for (a, b) in &pairs {
                assert_eq!(a.levels[p], Level::Absent);
                assert_eq!(b.levels[p], Level::Present);
                assert!(seen.insert(a.clone()) && seen.insert(b.clone()));
                for q in 0..set.len() {
                    let dependent = set.factors()[q]
                        .applicable_when
                        .iter()
                        .any(|c| c.factor == f.name);
                    if q != p && !dependent {
                        assert_eq!(a.levels[q], b.levels[q]);
                    }
                }
            }
        }
    }

    #[test]
    fn condition_strings() {
        let c: Condition = "hp_instructions=1".parse().unwrap();
        assert_eq!(c, Condition::new(HP_INSTRUCTIONS, true));
        assert_eq!(c.to_string(), "hp_instructions=1");
        assert!("x=2".parse::<Condition>().is_err());
        assert!("x".parse::<Condition>().is_err());
        let json = serde_json::to_string(&default_set()).unwrap();
        let back: FactorSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, default_set());
    }

    #[test]
    fn annotation_digits_are_blanked_in_prompt_key() {
        let set = default_set()
            .register_custom_factor(Factor::new(CALIBRATION, 7).realized_by(Realization::Annotation))
            .unwrap();
        assert_eq!(set.prompt_key(&"00000201".into()), "0000020-");
        assert_eq!(set.prompt_key(&"00000200".into()), "0000020-");
    }
}
