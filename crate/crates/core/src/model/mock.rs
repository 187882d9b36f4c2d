//! Analytically defined backends for tests and dry runs.

use super::{Backend, BackendError, BackendMode, LabelScores};
use crate::hashing::stable_hash64;
use crate::sampler::PromptInstance;

pub(super) const DEFAULT_BIAS_EPSILON: f64 = 0.5;

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Scores 1 on the gold label and 0 elsewhere; uniform when gold is unknown.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleBackend;

impl Backend for OracleBackend {
    fn score_labels(&self, prompt: &PromptInstance) -> Result<LabelScores, BackendError> {
        let n = prompt.label_space.len();
        Ok(match prompt.gold {
            Some(g) if g < n => LabelScores::weights(one_hot(n, g)),
            _ => LabelScores::weights(vec![1.0; n]),
        })
    }

    fn tag(&self) -> String {
        "mock:oracle".into()
    }
}

/// Equal score for every label.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformBackend;

impl Backend for UniformBackend {
    fn score_labels(&self, prompt: &PromptInstance) -> Result<LabelScores, BackendError> {
        Ok(LabelScores::weights(vec![1.0; prompt.label_space.len()]))
    }

    fn tag(&self) -> String {
        "mock:uniform".into()
    }
}

/// Always prefers one label.
#[derive(Debug, Clone, Copy)]
pub struct ConstantBackend {
    label: usize,
}

impl ConstantBackend {
    pub fn new(label: usize) -> Self {
        Self { label }
    }
}

impl Backend for ConstantBackend {
    fn score_labels(&self, prompt: &PromptInstance) -> Result<LabelScores, BackendError> {
        let n = prompt.label_space.len();
        if self.label >= n {
            return Err(BackendError::Config(format!(
                "constant label {} outside a {n}-label space",
                self.label
            )));
        }
        Ok(LabelScores::weights(one_hot(n, self.label)))
    }

    fn tag(&self) -> String {
        format!("mock:constant:{}", self.label)
    }
}

/// Pseudo-random scores derived from a hash of the prompt text.
#[derive(Debug, Clone, Copy)]
pub struct HashBackend {
    seed: u64,
}

impl HashBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl Backend for HashBackend {
    fn score_labels(&self, prompt: &PromptInstance) -> Result<LabelScores, BackendError> {
        let seed = self.seed.to_le_bytes();
        let scores = (0..prompt.label_space.len() as u64)
            .map(|i| {
                let h = stable_hash64([seed.as_slice(), prompt.text.as_bytes(), &i.to_le_bytes()]);
                (h >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        Ok(LabelScores::weights(scores))
    }

    fn tag(&self) -> String {
        format!("mock:hash:{}", self.seed)
    }
}

/// Generation-mode backend returning one of the answer choices or, for about
/// one prompt in `labels + 1`, text outside the label space.
#[derive(Debug, Clone, Copy)]
pub struct FreeTextBackend {
    seed: u64,
}

impl FreeTextBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl Backend for FreeTextBackend {
    fn score_labels(&self, _prompt: &PromptInstance) -> Result<LabelScores, BackendError> {
        Err(BackendError::Unsupported("label scoring"))
    }

    fn complete(&self, prompt: &PromptInstance) -> Result<String, BackendError> {
        let n = prompt.label_space.len() as u64;
        let h = stable_hash64([self.seed.to_le_bytes().as_slice(), prompt.text.as_bytes()]);
        Ok(match (h % (n + 1)) as usize {
            i if i < prompt.label_space.len() => format!(" {}\n", prompt.label_space[i]),
            _ => " I am not sure.".to_string(),
        })
    }

    fn mode(&self) -> BackendMode {
        BackendMode::Generation
    }

    fn tag(&self) -> String {
        format!("mock:freetext:{}", self.seed)
    }
}

/// A label-biased oracle: weights `bias_i * (onehot(gold)_i + epsilon)`.
///
/// Content-free prompts (unknown gold) receive `bias` itself, so calibrating
/// with the backend's own content-free scores divides the bias back out.
#[derive(Debug, Clone)]
pub struct BiasedBackend {
    bias: Vec<f64>,
    epsilon: f64,
}

impl BiasedBackend {
    pub fn new(bias: Vec<f64>, epsilon: f64) -> Result<Self, BackendError> {
        if bias.is_empty() || bias.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(BackendError::Config("bias weights must be positive".into()));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(BackendError::Config("epsilon must be positive".into()));
        }
        Ok(Self { bias, epsilon })
    }
}

impl Backend for BiasedBackend {
    fn score_labels(&self, prompt: &PromptInstance) -> Result<LabelScores, BackendError> {
        let n = prompt.label_space.len();
        if n != self.bias.len() {
            return Err(BackendError::Config(format!(
                "{} bias weights for a {n}-label space",
                self.bias.len()
            )));
        }
        let scores = match prompt.gold {
            Some(g) if g < n => self
                .bias
                .iter()
                .enumerate()
                .map(|(i, b)| b * (f64::from(u8::from(i == g)) + self.epsilon))
                .collect(),
            _ => self.bias.clone(),
        };
        Ok(LabelScores::weights(scores))
    }

    fn tag(&self) -> String {
        let weights: Vec<String> = self.bias.iter().map(|b| b.to_string()).collect();
        format!("mock:biased:{}:{}", weights.join(","), self.epsilon)
    }
}
