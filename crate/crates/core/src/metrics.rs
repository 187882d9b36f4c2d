//! Agreement and consistency metrics over a complete prediction table.
//!
//! Cells holding a prediction outside the label space are masked: they count
//! as incorrect for accuracy and are dropped from every agreement pair and
//! entropy distribution.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::design::{DesignError, FactorSet, SetupId};
use crate::model::PredictedLabel;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{} cells missing, first: {}", .0.len(), format_keys(.0))]
    MissingCells(Vec<(SetupId, String)>),
    #[error("gold label {gold} for {data_id} outside a {label_count}-label space")]
    GoldOutOfRange {
        data_id: String,
        gold: usize,
        label_count: usize,
    },
    #[error("unknown setup {0}")]
    UnknownSetup(SetupId),
    #[error("{0} needs at least {1} setups")]
    TooFewSetups(&'static str, usize),
    #[error("template consistency needs at least two templates, got {0}")]
    TooFewTemplates(usize),
    #[error("unknown template {0}")]
    UnknownTemplate(u32),
    #[error("prediction lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Design(#[from] DesignError),
}

fn format_keys(keys: &[(SetupId, String)]) -> String {
    keys.iter()
        .take(5)
        .map(|(s, d)| format!("({s}, {d})"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Predictions for every `(setup, data point)` cell plus gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    setups: Vec<SetupId>,
    data: Vec<String>,
    gold: Vec<usize>,
    label_count: usize,
    /// Setup-major; `None` marks a masked cell.
    cells: Vec<Option<usize>>,
}

impl EvalTable {
    /// Builds a rectangular table. Every `setups × gold` cell must be present
    /// in `predictions`; labels outside `0..label_count` are masked.
    pub fn new(
        setups: Vec<SetupId>,
        gold: BTreeMap<String, usize>,
        label_count: usize,
        predictions: &HashMap<(SetupId, String), PredictedLabel>,
    ) -> Result<Self, MetricsError> {
        Self::build(setups, gold, label_count, predictions, false)
    }

    /// Like [`EvalTable::new`] but missing cells are masked instead of rejected.
    pub fn new_partial(
        setups: Vec<SetupId>,
        gold: BTreeMap<String, usize>,
        label_count: usize,
        predictions: &HashMap<(SetupId, String), PredictedLabel>,
    ) -> Result<Self, MetricsError> {
        Self::build(setups, gold, label_count, predictions, true)
    }

    fn build(
        mut setups: Vec<SetupId>,
        gold: BTreeMap<String, usize>,
        label_count: usize,
        predictions: &HashMap<(SetupId, String), PredictedLabel>,
        allow_missing: bool,
    ) -> Result<Self, MetricsError> {
        setups.sort();
        setups.dedup();
        for (data_id, &g) in &gold {
            if g >= label_count {
                return Err(MetricsError::GoldOutOfRange {
                    data_id: data_id.clone(),
                    gold: g,
                    label_count,
                });
            }
        }
        let data: Vec<String> = gold.keys().cloned().collect();
        let mut cells = Vec::with_capacity(setups.len() * data.len());
        let mut missing = Vec::new();
        for s in &setups {
            for d in &data {
                match predictions.get(&(s.clone(), d.clone())) {
                    Some(label) => cells.push(label.index().filter(|&i| i < label_count)),
                    None => {
                        missing.push((s.clone(), d.clone()));
                        cells.push(None);
                    }
                }
            }
        }
        if !missing.is_empty() && !allow_missing {
            return Err(MetricsError::MissingCells(missing));
        }
        Ok(Self {
            setups,
            gold: gold.into_values().collect(),
            data,
            label_count,
            cells,
        })
    }

    pub fn setups(&self) -> &[SetupId] {
        &self.setups
    }

    pub fn data_ids(&self) -> &[String] {
        &self.data
    }

    pub fn gold(&self) -> &[usize] {
        &self.gold
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    fn setup_index(&self, id: &SetupId) -> Option<usize> {
        self.setups.binary_search(id).ok()
    }

    /// Predictions of one setup, in data-ID order.
    pub fn row(&self, id: &SetupId) -> Option<&[Option<usize>]> {
        let i = self.setup_index(id)?;
        let n = self.data.len();
        Some(&self.cells[i * n..(i + 1) * n])
    }

    fn rows(&self) -> impl Iterator<Item = &[Option<usize>]> {
        // chunks() rejects a zero size; an empty data axis has no rows to yield.
        let n = self.data.len().max(1);
        self.cells.chunks(n).take(if self.data.is_empty() { 0 } else { self.setups.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskReport {
    pub masked: Vec<(SetupId, String)>,
    pub count: usize,
    pub total: usize,
}

/// Lists the cells whose prediction is outside the label space.
pub fn mask_invalid(table: &EvalTable) -> MaskReport {
    let mut masked = Vec::new();
    for (s, row) in table.setups.iter().zip(table.rows()) {
        for (d, cell) in table.data.iter().zip(row) {
            if cell.is_none() {
                masked.push((s.clone(), d.clone()));
            }
        }
    }
    MaskReport {
        count: masked.len(),
        total: table.cells.len(),
        masked,
    }
}

/// Fraction of data points predicted correctly; masked cells count as wrong.
pub fn accuracy(table: &EvalTable, setup: &SetupId) -> Result<f64, MetricsError> {
    let row = table
        .row(setup)
        .ok_or_else(|| MetricsError::UnknownSetup(setup.clone()))?;
    if row.is_empty() {
        return Ok(0.0);
    }
    let correct = row
        .iter()
        .zip(&table.gold)
        .filter(|(p, g)| **p == Some(**g))
        .count();
    Ok(correct as f64 / row.len() as f64)
}

pub fn accuracy_by_setup(table: &EvalTable) -> BTreeMap<SetupId, f64> {
    table
        .setups
        .iter()
        .map(|s| (s.clone(), accuracy(table, s).expect("setup from table")))
        .collect()
}

/// Square contingency table of paired ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct Contingency {
    counts: Vec<u64>,
    labels: usize,
    masked: u64,
}

impl Contingency {
    pub fn new(labels: usize) -> Self {
        Self {
            counts: vec![0; labels * labels],
            labels,
            masked: 0,
        }
    }

    /// Records one pair; pairs with a masked side are only counted as masked.
    pub fn add(&mut self, a: Option<usize>, b: Option<usize>) {
        match (a, b) {
            (Some(a), Some(b)) if a < self.labels && b < self.labels => {
                self.counts[a * self.labels + b] += 1
            }
            _ => self.masked += 1,
        }
    }

    pub fn used(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn masked(&self) -> u64 {
        self.masked
    }

    /// κ = (P_o − P_e) / (1 − P_e). NaN without usable pairs, and when chance
    /// agreement is certain but observed agreement is not perfect.
    pub fn kappa(&self) -> f64 {
        let n = self.used() as f64;
        if n == 0.0 {
            return f64::NAN;
        }
        let k = self.labels;
        let observed: u64 = (0..k).map(|i| self.counts[i * k + i]).sum();
        let p_o = observed as f64 / n;
        let mut p_e = 0.0;
        for c in 0..k {
            let row: u64 = (0..k).map(|j| self.counts[c * k + j]).sum();
            let col: u64 = (0..k).map(|i| self.counts[i * k + c]).sum();
            p_e += (row as f64 / n) * (col as f64 / n);
        }
        if p_e >= 1.0 {
            return if p_o >= 1.0 { 1.0 } else { f64::NAN };
        }
        (p_o - p_e) / (1.0 - p_e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaStats {
    #[serde(serialize_with = "serialize_real")]
    pub kappa: f64,
    pub used: u64,
    pub masked: u64,
}

/// Cohen's κ between two equally long prediction lists. Pairs where either
/// side is masked are dropped.
pub fn cohen_kappa(
    a: &[Option<usize>],
    b: &[Option<usize>],
    label_count: usize,
) -> Result<KappaStats, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let mut table = Contingency::new(label_count);
    for (x, y) in a.iter().zip(b) {
        table.add(*x, *y);
    }
    Ok(KappaStats {
        kappa: table.kappa(),
        used: table.used(),
        masked: table.masked(),
    })
}

/// How per-factor agreement is aggregated over setup pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaMode {
    /// One contingency table over all pairs and data points.
    #[default]
    Pooled,
    /// Mean of per-setup-pair κ values (undefined pairs skipped).
    MeanPerPair,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorKappa {
    pub factor: String,
    #[serde(serialize_with = "serialize_real")]
    pub kappa: f64,
    pub setup_pairs: usize,
    pub used_pairs: u64,
    pub masked_pairs: u64,
}

/// Agreement of predictions before and after toggling `factor`, over every
/// matched setup pair and data point.
pub fn factor_kappa(
    table: &EvalTable,
    factors: &FactorSet,
    factor: &str,
    mode: KappaMode,
) -> Result<FactorKappa, MetricsError> {
    let setups = table
        .setups
        .iter()
        .map(|id| factors.decode(id))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs = factors.pairs_differing_in(&setups, factor)?;
    let mut pooled = Contingency::new(table.label_count);
    let mut per_pair = Vec::with_capacity(pairs.len());
    for (s0, s1) in &pairs {
        let a = table.row(&s0.id()).expect("pair from table setups");
        let b = table.row(&s1.id()).expect("pair from table setups");
        let mut local = Contingency::new(table.label_count);
        for (x, y) in a.iter().zip(b) {
            pooled.add(*x, *y);
            local.add(*x, *y);
        }
        per_pair.push(local.kappa());
    }
    let kappa = match mode {
        KappaMode::Pooled => pooled.kappa(),
        KappaMode::MeanPerPair => mean_defined(&per_pair),
    };
    Ok(FactorKappa {
        factor: factor.to_string(),
        kappa,
        setup_pairs: pairs.len(),
        used_pairs: pooled.used(),
        masked_pairs: pooled.masked(),
    })
}

fn mean_defined(values: &[f64]) -> f64 {
    let defined: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaReport {
    /// In factor position order.
    pub per_factor: Vec<FactorKappa>,
    /// Mean over factors with a defined κ.
    #[serde(serialize_with = "serialize_real")]
    pub kappa_avg: f64,
}

pub fn kappa_report(
    table: &EvalTable,
    factors: &FactorSet,
    mode: KappaMode,
) -> Result<KappaReport, MetricsError> {
    let per_factor = factors
        .names()
        .into_iter()
        .map(|name| factor_kappa(table, factors, name, mode))
        .collect::<Result<Vec<_>, _>>()?;
    let values: Vec<f64> = per_factor.iter().map(|f| f.kappa).collect();
    Ok(KappaReport {
        kappa_avg: mean_defined(&values),
        per_factor,
    })
}

/// Shannon entropy in bits of a count vector.
pub fn entropy_bits(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub total_entropy: f64,
    /// `1 / total_entropy`, or +∞ (written as `"inf"`) when predictions never change.
    #[serde(serialize_with = "serialize_real")]
    pub c_pi: f64,
    pub per_item_entropy: BTreeMap<String, f64>,
}

/// Inverse of the summed per-item prediction entropy across setups.
pub fn model_consistency(table: &EvalTable) -> Result<ConsistencyReport, MetricsError> {
    if table.setups.len() < 2 {
        return Err(MetricsError::TooFewSetups("model consistency", 2));
    }
    let n = table.data.len();
    let mut per_item_entropy = BTreeMap::new();
    let mut total = 0.0;
    for (d, data_id) in table.data.iter().enumerate() {
        let mut counts = vec![0u64; table.label_count];
        for s in 0..table.setups.len() {
            if let Some(label) = table.cells[s * n + d] {
                counts[label] += 1;
            }
        }
        let h = entropy_bits(&counts);
        total += h;
        per_item_entropy.insert(data_id.clone(), h);
    }
    Ok(ConsistencyReport {
        total_entropy: total,
        c_pi: if total > 0.0 { 1.0 / total } else { f64::INFINITY },
        per_item_entropy,
    })
}

/// How one template's predictions are compared against the others.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateConsistencyMode {
    /// Mean of κ against each other template.
    #[default]
    PairwiseMean,
    /// κ against the pooled predictions of all other templates.
    OneVsRest,
}

/// c_λ of `template_id`: its agreement with the other templates on the same
/// data points.
pub fn template_consistency(
    predictions_by_template: &BTreeMap<u32, Vec<Option<usize>>>,
    template_id: u32,
    label_count: usize,
    mode: TemplateConsistencyMode,
) -> Result<f64, MetricsError> {
    if predictions_by_template.len() < 2 {
        return Err(MetricsError::TooFewTemplates(predictions_by_template.len()));
    }
    let own = predictions_by_template
        .get(&template_id)
        .ok_or(MetricsError::UnknownTemplate(template_id))?;
    let others = predictions_by_template
        .iter()
        .filter(|(id, _)| **id != template_id)
        .map(|(_, p)| p);
    match mode {
        TemplateConsistencyMode::PairwiseMean => {
            let mut kappas = Vec::new();
            for other in others {
                kappas.push(cohen_kappa(own, other, label_count)?.kappa);
            }
            Ok(kappas.iter().sum::<f64>() / kappas.len() as f64)
        }
        TemplateConsistencyMode::OneVsRest => {
            let mut table = Contingency::new(label_count);
            for other in others {
                if other.len() != own.len() {
                    return Err(MetricsError::LengthMismatch(own.len(), other.len()));
                }
                for (x, y) in own.iter().zip(other) {
                    table.add(*x, *y);
                }
            }
            Ok(table.kappa())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityReport {
    /// Entropy of all unmasked predictions pooled together.
    pub prediction_entropy: f64,
    /// Entropy of the gold label distribution, H(Y).
    pub gold_entropy: f64,
    pub prediction_counts: Vec<u64>,
    pub masked: u64,
    /// Set when prediction entropy is below half of H(Y): the model leans
    /// toward predicting a single label.
    pub single_label_bias: bool,
}

pub fn prediction_diversity(table: &EvalTable) -> DiversityReport {
    let mut counts = vec![0u64; table.label_count];
    let mut masked = 0;
    for cell in &table.cells {
        match cell {
            Some(label) => counts[*label] += 1,
            None => masked += 1,
        }
    }
    let mut gold_counts = vec![0u64; table.label_count];
    for &g in &table.gold {
        gold_counts[g] += 1;
    }
    let prediction_entropy = entropy_bits(&counts);
    let gold_entropy = entropy_bits(&gold_counts);
    DiversityReport {
        prediction_entropy,
        gold_entropy,
        single_label_bias: prediction_entropy < 0.5 * gold_entropy,
        prediction_counts: counts,
        masked,
    }
}

/// Writes non-finite reals as strings (`"inf"`, `"-inf"`, `"nan"`), which JSON
/// cannot represent as numbers.
pub fn serialize_real<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}
