//! Experiment configuration: one JSON file mirroring the library's config
//! types plus data paths and per-command options, with CLI overrides applied
//! on top.

use serde::Deserialize;

use hscp_core::model::HierarchySpec;
use hscp_core::optimizer::AmsGradConfig;
use hscp_core::synthlab::FitMethod;
use hscp_core::trainer::FitConfig;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub hierarchy: Option<HierarchySection>,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub perturb: PerturbSection,
    pub synth: Option<SynthSection>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub grid: GridSection,
    pub method: Option<String>,
    pub output: Option<String>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchySection {
    pub widths: Vec<usize>,
    pub sparsity: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_alpha() -> f64 {
    1e-3
}

fn default_beta() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub max_outer_iterations: usize,
    pub convergence_tol: f64,
    pub inner_attack_steps: usize,
    pub adversarial_iterations: Option<usize>,
    pub seed: u64,
    pub record_trace: bool,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        let fit = FitConfig::default();
        let opt = AmsGradConfig::default();
        Self {
            max_outer_iterations: fit.max_outer_iterations,
            convergence_tol: fit.convergence_tol,
            inner_attack_steps: fit.inner_attack_steps,
            adversarial_iterations: None,
            seed: 0,
            record_trace: true,
            eta: opt.eta,
            beta1: opt.beta1,
            beta2: opt.beta2,
            epsilon: opt.epsilon,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbSection {
    pub magnitude_factor: f64,
    /// "pooled" (one sigma over all entries) or "per-subject".
    pub sigma_scope: String,
}

impl Default for PerturbSection {
    fn default() -> Self {
        Self { magnitude_factor: 0.1, sigma_scope: "pooled".into() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub node_count: usize,
    pub subject_count: usize,
    pub time_points: usize,
    #[serde(default = "default_sparsity_fraction")]
    pub sparsity_fraction: f64,
    #[serde(default)]
    pub gaussian_sigma: f64,
    #[serde(default)]
    pub poisson_mean: f64,
}

fn default_sparsity_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset directory (written by `simulate`, read by `fit`/`eval`/`grid`).
    pub dataset: Option<String>,
    /// Ground-truth directory for accuracy evaluation.
    pub truth: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// "accuracy" (archives vs truth) or "reproducibility" (split-sample).
    pub kind: String,
    /// Model archive directories for accuracy evaluation.
    pub archives: Vec<String>,
    /// Methods to benchmark in reproducibility mode.
    pub methods: Vec<String>,
    pub n_runs: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            kind: "accuracy".into(),
            archives: Vec::new(),
            methods: vec!["hscp".into(), "adv-hscp".into()],
            n_runs: 20,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub exponents: Vec<f64>,
    pub n_runs: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { exponents: vec![-2.0, -1.0, 0.0, 1.0], n_runs: 20 }
    }
}

impl ExperimentConfig {
    pub fn load(path: &str) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("reading config {path}: {e}")))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::invalid(format!("parsing config {path}: {e}")))
    }

    pub fn hierarchy_spec(&self) -> Result<HierarchySpec, CliError> {
        let section = self
            .hierarchy
            .as_ref()
            .ok_or_else(|| CliError::invalid("config is missing the \"hierarchy\" section"))?;
        Ok(HierarchySpec::new(
            section.widths.clone(),
            section.sparsity.clone(),
            section.alpha,
            section.beta,
        ))
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            max_outer_iterations: self.fit.max_outer_iterations,
            convergence_tol: self.fit.convergence_tol,
            inner_attack_steps: self.fit.inner_attack_steps,
            adversarial_iterations: self.fit.adversarial_iterations,
            seed: self.fit.seed,
            record_trace: self.fit.record_trace,
            optimizer: AmsGradConfig {
                eta: self.fit.eta,
                beta1: self.fit.beta1,
                beta2: self.fit.beta2,
                epsilon: self.fit.epsilon,
            },
        }
    }

    pub fn method(&self) -> Result<FitMethod, CliError> {
        parse_method(self.method.as_deref().unwrap_or("hscp"))
    }
}

pub fn parse_method(name: &str) -> Result<FitMethod, CliError> {
    match name {
        "hscp" => Ok(FitMethod::Hscp),
        "adv-hscp" => Ok(FitMethod::AdvHscp),
        other => Err(CliError::invalid(format!(
            "unknown method {other:?}; expected \"hscp\" or \"adv-hscp\""
        ))),
    }
}

pub fn method_name(method: FitMethod) -> &'static str {
    match method {
        FitMethod::Hscp => "hscp",
        FitMethod::AdvHscp => "adv-hscp",
    }
}
