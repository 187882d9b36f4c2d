//! Label prediction from pluggable model backends.
//!
//! A backend scores every verbalized label of a prompt's target template.
//! The predicted label is the greedy argmax. Scores can be corrected with
//! contextual calibration: divide by the label distribution the same backend
//! produces for content-free inputs, then renormalize.

mod http;
mod mock;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DataRecord, Split};
use crate::design::SetupId;
use crate::sampler::PromptInstance;
use crate::template::{self, match_label, InstructionTemplate};

pub use http::{HttpBackend, HttpMode, HttpOptions};
pub use mock::{BiasedBackend, ConstantBackend, FreeTextBackend, HashBackend, OracleBackend, UniformBackend};

/// Content-free strings used when none are configured.
pub const DEFAULT_CONTENT_FREE: [&str; 3] = ["N/A", "", "[MASK]"];

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("server returned {status}: {body}")]
    Server { status: u16, body: String },
    #[error("endpoint refused echo/logprobs ({0}); use the free-generation mode instead")]
    LogprobsUnsupported(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
    #[error(transparent)]
    Template(#[from] template::TemplateError),
}

impl BackendError {
    /// Whether repeating the same request may succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::Timeout(_) => true,
            BackendError::Server { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("content-free probability for label {0} is zero")]
    ZeroContentFree(usize),
    #[error("score vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("calibration expects normalized scores")]
    NotNormalized,
    #[error("content-free input list is empty")]
    NoContentFreeInputs,
}

/// One score per label of the target template; higher means more likely.
///
/// Unnormalized scores are non-negative weights. Normalized scores are a
/// probability distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub scores: Vec<f64>,
    pub normalized: bool,
}

impl LabelScores {
    pub fn weights(scores: Vec<f64>) -> Self {
        Self {
            scores,
            normalized: false,
        }
    }

    /// Softmax over log-likelihoods.
    pub fn from_log_likelihoods(logps: &[f64]) -> Self {
        let max = logps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logps.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        Self {
            scores: exp.into_iter().map(|e| e / total).collect(),
            normalized: true,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn is_valid(&self) -> bool {
        let finite = self.scores.iter().all(|s| s.is_finite());
        if !self.normalized {
            return finite;
        }
        let sum: f64 = self.scores.iter().sum();
        finite && self.scores.iter().all(|&s| s >= 0.0) && (sum - 1.0).abs() <= NORMALIZATION_TOLERANCE
    }

    /// Rescales non-negative weights to sum to one; all-zero weights become uniform.
    pub fn normalize(&self) -> LabelScores {
        if self.normalized {
            return self.clone();
        }
        let total: f64 = self.scores.iter().map(|s| s.max(0.0)).sum();
        let n = self.scores.len() as f64;
        let scores = if total > 0.0 {
            self.scores.iter().map(|s| s.max(0.0) / total).collect()
        } else {
            vec![1.0 / n; self.scores.len()]
        };
        LabelScores {
            scores,
            normalized: true,
        }
    }
}

/// Greedy label choice: argmax, ties going to the lowest index.
pub fn predict_greedy(scores: &LabelScores) -> usize {
    let mut best = 0;
    for (i, &s) in scores.scores.iter().enumerate().skip(1) {
        if s > scores.scores[best] {
            best = i;
        }
    }
    best
}

/// Contextual calibration: `q_i ∝ p_i / cf_i`.
pub fn calibrate(scores: &LabelScores, cf: &LabelScores) -> Result<LabelScores, CalibrationError> {
    if !scores.normalized || !cf.normalized {
        return Err(CalibrationError::NotNormalized);
    }
    if scores.len() != cf.len() {
        return Err(CalibrationError::LengthMismatch(scores.len(), cf.len()));
    }
    if let Some(i) = cf.scores.iter().position(|&c| c <= 0.0) {
        return Err(CalibrationError::ZeroContentFree(i));
    }
    let ratios: Vec<f64> = scores
        .scores
        .iter()
        .zip(&cf.scores)
        .map(|(p, c)| p / c)
        .collect();
    let total: f64 = ratios.iter().sum();
    Ok(LabelScores {
        scores: ratios.into_iter().map(|r| r / total).collect(),
        normalized: true,
    })
}

/// Whether the backend scores labels or generates free text that is matched
/// against the answer choices afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendMode {
    Scoring,
    Generation,
}

pub trait Backend: Send + Sync {
    fn score_labels(&self, prompt: &PromptInstance) -> Result<LabelScores, BackendError>;

    fn complete(&self, _prompt: &PromptInstance) -> Result<String, BackendError> {
        Err(BackendError::Unsupported("free-text generation"))
    }

    fn mode(&self) -> BackendMode {
        BackendMode::Scoring
    }

    /// Identifier written into every prediction.
    fn tag(&self) -> String;
}

/// Averages the normalized label distributions the backend assigns when the
/// target fields of `shape` are replaced by each content-free string.
pub fn content_free_scores(
    backend: &dyn Backend,
    shape: &PromptInstance,
    target_template: &InstructionTemplate,
    cf_inputs: &[String],
) -> Result<LabelScores, BackendError> {
    if cf_inputs.is_empty() {
        return Err(BackendError::Config(CalibrationError::NoContentFreeInputs.to_string()));
    }
    let mut mean = vec![0.0; shape.label_space.len()];
    for cf in cf_inputs {
        let prompt = content_free_prompt(shape, target_template, cf)?;
        let scores = backend.score_labels(&prompt)?.normalize();
        if scores.len() != mean.len() {
            return Err(BackendError::Protocol(format!(
                "backend returned {} scores for {} labels",
                scores.len(),
                mean.len()
            )));
        }
        for (m, s) in mean.iter_mut().zip(&scores.scores) {
            *m += s;
        }
    }
    let n = cf_inputs.len() as f64;
    Ok(LabelScores {
        scores: mean.into_iter().map(|m| m / n).collect(),
        normalized: true,
    })
}

/// Rebuilds `shape` with both target fields replaced by `cf`. The gold label
/// of the result is unknown.
pub fn content_free_prompt(
    shape: &PromptInstance,
    target_template: &InstructionTemplate,
    cf: &str,
) -> Result<PromptInstance, BackendError> {
    let record = DataRecord {
        data_id: format!("content-free:{cf}"),
        task: target_template.task,
        field_a: cf.to_string(),
        field_b: cf.to_string(),
        gold: 0,
        subset: None,
        split: Split::Validation,
    };
    let block = template::render_target(target_template, &record)?;
    let mut prompt = shape.clone();
    prompt.text = format!("{}{}", shape.context_prefix(), block.text);
    prompt.gold = None;
    prompt.data_id = record.data_id;
    Ok(prompt)
}

/// A label index, or a marker for output outside the label space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredictedLabel {
    Label(usize),
    Invalid,
}

impl PredictedLabel {
    pub fn index(self) -> Option<usize> {
        match self {
            PredictedLabel::Label(i) => Some(i),
            PredictedLabel::Invalid => None,
        }
    }
}

impl From<Option<usize>> for PredictedLabel {
    fn from(v: Option<usize>) -> Self {
        v.map_or(PredictedLabel::Invalid, PredictedLabel::Label)
    }
}

impl fmt::Display for PredictedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictedLabel::Label(i) => write!(f, "{i}"),
            PredictedLabel::Invalid => f.write_str("INVALID"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LabelRepr {
    Index(usize),
    Text(String),
}

impl Serialize for PredictedLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PredictedLabel::Label(i) => LabelRepr::Index(*i).serialize(s),
            PredictedLabel::Invalid => LabelRepr::Text("INVALID".into()).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for PredictedLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match LabelRepr::deserialize(d)? {
            LabelRepr::Index(i) => Ok(PredictedLabel::Label(i)),
            LabelRepr::Text(t) if t == "INVALID" => Ok(PredictedLabel::Invalid),
            LabelRepr::Text(t) => Err(serde::de::Error::custom(format!("bad label {t:?}"))),
        }
    }
}

/// Model output for one `(setup, data point)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub setup_id: SetupId,
    pub data_id: String,
    /// Label used for scoring: calibrated when `calibrated` is set.
    pub label: PredictedLabel,
    /// Uncalibrated greedy label.
    pub raw_label: PredictedLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrated_label: Option<PredictedLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<LabelScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    pub calibrated: bool,
    pub model_tag: String,
}

/// Obtains a prediction for one prompt. `cf` enables calibration; with
/// `use_calibrated` the calibrated label becomes the scored label.
pub fn predict(
    backend: &dyn Backend,
    prompt: &PromptInstance,
    target_template: &InstructionTemplate,
    cf: Option<&LabelScores>,
    use_calibrated: bool,
) -> Result<Prediction, BackendError> {
    let tag = backend.tag();
    match backend.mode() {
        BackendMode::Generation => {
            let text = backend.complete(prompt)?;
            let label = PredictedLabel::from(match_label(&text, target_template));
            Ok(Prediction {
                setup_id: prompt.setup_id.clone(),
                data_id: prompt.data_id.clone(),
                label,
                raw_label: label,
                calibrated_label: None,
                scores: None,
                raw_text: Some(text),
                calibrated: false,
                model_tag: tag,
            })
        }
        BackendMode::Scoring => {
            let scores = backend.score_labels(prompt)?;
            if scores.len() != prompt.label_space.len() || !scores.is_valid() {
                return Err(BackendError::Protocol(format!(
                    "invalid scores {:?} for {} labels",
                    scores.scores,
                    prompt.label_space.len()
                )));
            }
            let normalized = scores.normalize();
            let raw = PredictedLabel::Label(predict_greedy(&normalized));
            let calibrated_label = match cf {
                Some(cf) => Some(PredictedLabel::Label(predict_greedy(
                    &calibrate(&normalized, cf).map_err(|e| BackendError::Config(e.to_string()))?,
                ))),
                None => None,
            };
            let use_cal = use_calibrated && calibrated_label.is_some();
            Ok(Prediction {
                setup_id: prompt.setup_id.clone(),
                data_id: prompt.data_id.clone(),
                label: if use_cal { calibrated_label.unwrap_or(raw) } else { raw },
                raw_label: raw,
                calibrated_label,
                scores: Some(normalized),
                raw_text: None,
                calibrated: use_cal,
                model_tag: tag,
            })
        }
    }
}

/// Builds a backend from its URI.
///
/// * `mock:oracle`, `mock:uniform`
/// * `mock:constant:<label>`
/// * `mock:hash:<seed>`
/// * `mock:freetext:<seed>`
/// * `mock:biased:<w0>,<w1>,...[:<epsilon>]`
/// * `http://...` / `https://...` completions endpoint (see [`HttpOptions`])
pub fn backend_from_uri(uri: &str, http: Option<HttpOptions>) -> Result<Box<dyn Backend>, BackendError> {
    let bad = |msg: &str| BackendError::Config(format!("{uri}: {msg}"));
    if uri.starts_with("http://") || uri.starts_with("https://") {
        let mut options = http.unwrap_or_default();
        options.url = uri.to_string();
        return Ok(Box::new(HttpBackend::new(options)?));
    }
    let Some(rest) = uri.strip_prefix("mock:") else {
        return Err(bad("unknown backend scheme"));
    };
    let mut parts = rest.split(':');
    let kind = parts.next().unwrap_or_default();
    let arg = parts.next();
    let extra = parts.next();
    let parse_u64 = |s: Option<&str>, what: &str| {
        s.ok_or_else(|| bad(&format!("missing {what}")))?
            .parse::<u64>()
            .map_err(|_| bad(&format!("bad {what}")))
    };
    let backend: Box<dyn Backend> = match kind {
        "oracle" => Box::new(OracleBackend),
        "uniform" => Box::new(UniformBackend),
        "constant" => Box::new(ConstantBackend::new(parse_u64(arg, "label")? as usize)),
        "hash" => Box::new(HashBackend::new(parse_u64(arg, "seed")?)),
        "freetext" => Box::new(FreeTextBackend::new(parse_u64(arg, "seed")?)),
        "biased" => {
            let bias = arg
                .ok_or_else(|| bad("missing bias weights"))?
                .split(',')
                .map(|w| w.trim().parse::<f64>().map_err(|_| bad("bad bias weight")))
                .collect::<Result<Vec<_>, _>>()?;
            let epsilon = match extra {
                Some(e) => e.parse::<f64>().map_err(|_| bad("bad epsilon"))?,
                None => mock::DEFAULT_BIAS_EPSILON,
            };
            Box::new(BiasedBackend::new(bias, epsilon)?)
        }
        _ => return Err(bad("unknown mock backend")),
    };
    Ok(backend)
}
