//! Run configuration: one JSON document, paths relative to its own location.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use icl_consistency::design::{
    default_factor_set, Condition, ExclusionRule, Factor, FactorSet, Realization,
};
use icl_consistency::metrics::{KappaMode, TemplateConsistencyMode};
use icl_consistency::model::{HttpMode, HttpOptions, DEFAULT_CONTENT_FREE};
use icl_consistency::sampler::TargetTemplates;
use icl_consistency::Task;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const API_KEY_ENV: &str = "HARNESS_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Datasets {
    pub validation: PathBuf,
    pub train: PathBuf,
    /// QQP training data for the `cross_task` factor.
    #[serde(default)]
    pub cross_task_train: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomFactor {
    pub name: String,
    #[serde(default)]
    pub applicable_when: Vec<Condition>,
    pub realize: Realization,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorConfig {
    #[serde(default)]
    pub exclusion_rule: ExclusionRule,
    /// Subset of the built-in factors to keep, in their default order.
    #[serde(default)]
    pub builtin: Option<Vec<String>>,
    /// Appended after the built-in factors, in listed order.
    #[serde(default)]
    pub custom: Vec<CustomFactor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub mode: HttpMode,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            model: String::new(),
            mode: HttpMode::default(),
            timeout_secs: default_timeout(),
            max_attempts: default_attempts(),
            backoff_ms: default_backoff(),
            max_tokens: default_max_tokens(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Setup used for every template; defaults to the first enumerated setup.
    #[serde(default)]
    pub setup: Option<String>,
    /// Templates to probe; defaults to every template of the task.
    #[serde(default)]
    pub templates: Option<Vec<u32>>,
    /// Data points per template; defaults to `n_eval`.
    #[serde(default)]
    pub n_eval: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub datasets: Datasets,
    /// `"bundled"` or a directory of template files.
    #[serde(default = "bundled")]
    pub templates: String,
    #[serde(default)]
    pub factors: FactorConfig,
    #[serde(default)]
    pub target_templates: Option<TargetTemplates>,
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    #[serde(default)]
    pub seed: u64,
    pub backend: String,
    #[serde(default)]
    pub http: HttpConfig,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub calibration: bool,
    #[serde(default = "default_content_free")]
    pub content_free_inputs: Vec<String>,
    /// Levels of annotation factors this model run represents; setups with
    /// other levels are left to other runs.
    #[serde(default)]
    pub model_annotations: BTreeMap<String, bool>,
    pub output_dir: PathBuf,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub bonferroni: bool,
    #[serde(default)]
    pub kappa_mode: KappaMode,
    #[serde(default)]
    pub template_consistency: TemplateConsistencyMode,
    #[serde(default)]
    pub probe: ProbeConfig,
}

fn bundled() -> String {
    "bundled".into()
}
fn default_n_eval() -> usize {
    600
}
fn default_parallelism() -> usize {
    8
}
fn default_alpha() -> f64 {
    0.05
}
fn default_content_free() -> Vec<String> {
    DEFAULT_CONTENT_FREE.iter().map(|s| s.to_string()).collect()
}
fn default_timeout() -> f64 {
    60.0
}
fn default_attempts() -> u32 {
    5
}
fn default_backoff() -> u64 {
    500
}
fn default_max_tokens() -> u32 {
    8
}

/// A parsed config plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    /// The file exactly as read, copied into the output directory.
    pub raw: String,
    pub hash: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&raw, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(raw: &str, base_dir: &Path) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        let config: RunConfig = serde_json::from_value(value.clone())
            .map_err(|e| CliError::Config(e.to_string()))?;
        // Key order and whitespace do not change the hash.
        let hash = Sha256::digest(value.to_string().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let loaded = Self {
            config,
            base_dir: base_dir.to_path_buf(),
            raw: raw.to_string(),
            hash,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        let bad = |m: String| Err(CliError::Config(m));
        if c.task == Task::Qqp {
            return bad("task must be anli or mnli; qqp is only an in-context source".into());
        }
        if c.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if !(c.alpha > 0.0 && c.alpha < 1.0) {
            return bad(format!("alpha must be in (0, 1), got {}", c.alpha));
        }
        if c.calibration && c.content_free_inputs.is_empty() {
            return bad("calibration needs at least one content-free input".into());
        }
        if !(c.http.timeout_secs.is_finite() && c.http.timeout_secs > 0.0) {
            return bad("http.timeout_secs must be positive".into());
        }
        for f in &c.factors.custom {
            if f.realize == Realization::Builtin {
                return bad(format!("custom factor {} must be realized as prefix or annotation", f.name));
            }
        }
        let factors = self.factor_set()?;
        for name in c.model_annotations.keys() {
            if !factors.annotation_names().contains(&name.as_str()) {
                return bad(format!("model_annotations names {name:?}, which is not an annotation factor"));
            }
        }
        for (what, path) in [
            ("datasets.validation", Some(&c.datasets.validation)),
            ("datasets.train", Some(&c.datasets.train)),
            ("datasets.cross_task_train", c.datasets.cross_task_train.as_ref()),
        ] {
            if let Some(path) = path {
                let p = self.resolve(path);
                if !p.is_file() {
                    return bad(format!("{what}: {} does not exist", p.display()));
                }
            }
        }
        if factors.position(icl_consistency::design::CROSS_TASK).is_some()
            && c.datasets.cross_task_train.is_none()
        {
            return bad("the cross_task factor needs datasets.cross_task_train".into());
        }
        if let Some(dir) = self.template_dir() {
            if !dir.is_dir() {
                return bad(format!("template directory {} does not exist", dir.display()));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn template_dir(&self) -> Option<PathBuf> {
        (self.config.templates != "bundled").then(|| self.resolve(Path::new(&self.config.templates)))
    }

    pub fn factor_set(&self) -> Result<FactorSet, CliError> {
        let c = &self.config.factors;
        let design_err = |e: icl_consistency::design::DesignError| CliError::Config(e.to_string());
        let defaults = default_factor_set(self.config.task, c.exclusion_rule).map_err(design_err)?;
        let mut kept: Vec<Factor> = match &c.builtin {
            None => defaults.factors().to_vec(),
            Some(names) => {
                for n in names {
                    if defaults.position(n).is_none() {
                        return Err(CliError::Config(format!("unknown built-in factor {n:?}")));
                    }
                }
                defaults
                    .factors()
                    .iter()
                    .filter(|f| names.contains(&f.name))
                    .cloned()
                    .collect()
            }
        };
        for (i, f) in kept.iter_mut().enumerate() {
            f.position = i;
        }
        let mut set = FactorSet::new(kept).map_err(design_err)?;
        for custom in &c.custom {
            let mut factor = Factor::new(&custom.name, set.len()).realized_by(custom.realize.clone());
            for cond in &custom.applicable_when {
                factor = factor.when(cond.clone());
            }
            set = set.register_custom_factor(factor).map_err(design_err)?;
        }
        Ok(set)
    }

    pub fn target_templates(&self) -> TargetTemplates {
        self.config.target_templates.unwrap_or_default()
    }

    pub fn http_options(&self) -> HttpOptions {
        let h = &self.config.http;
        HttpOptions {
            url: self.config.backend.clone(),
            model: h.model.clone(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs_f64(h.timeout_secs),
            mode: h.mode,
            max_attempts: h.max_attempts,
            backoff: Duration::from_millis(h.backoff_ms),
            max_tokens: h.max_tokens,
        }
    }
}
