//! Experiment configuration files.
//!
//! One experiment per TOML file:
//!
//! ```toml
//! iterations = 500
//! seeds = [0, 1, 2]
//! output_dir = "results/bilinear"
//!
//! [problem]
//! kind = "bilinear"
//! d = 1000
//! mu = 0.1
//! L = 100.0
//!
//! [solvers.sliding]
//! inner = "eg"
//!
//! [solvers.extragradient]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vi_sliding::{InnerConfig, InnerMethod};

use crate::BenchError;

/// Overrides `output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "VI_BENCH_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Write wall-clock seconds to the `elapsed_s` column; zeros otherwise.
    #[serde(default = "yes")]
    pub record_elapsed: bool,
    pub problem: ProblemConfig,
    pub solvers: SolversConfig,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemConfig {
    Bilinear(BilinearConfig),
    Logistic(AdversarialConfig),
    Nllsq(AdversarialConfig),
}

impl ProblemConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemConfig::Bilinear(_) => "bilinear",
            ProblemConfig::Logistic(_) => "logistic",
            ProblemConfig::Nllsq(_) => "nllsq",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    /// Random SPD matrix with spectrum in `[mu, L]`.
    Spd,
    /// `L` times the identity: a rotation coupling with Lipschitz constant `L`.
    Rotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilinearConfig {
    pub d: usize,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(default = "default_coupling")]
    pub coupling: Coupling,
    /// Weight of the regularizer, i.e. `L_q`.
    #[serde(default = "one")]
    pub regularization: f64,
    /// Keep iterates in `[-w, w]^{2d}`.
    #[serde(default)]
    pub box_half_width: Option<f64>,
}

fn default_mu() -> f64 {
    0.1
}

fn default_coupling() -> Coupling {
    Coupling::Spd
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialConfig {
    pub dataset: PathBuf,
    #[serde(default = "tenth")]
    pub beta_x: f64,
    #[serde(default = "tenth")]
    pub beta_y: f64,
    #[serde(default = "tenth")]
    pub delta: f64,
    /// Rows kept per seed; `None` keeps the whole dataset.
    #[serde(default = "default_subsample")]
    pub subsample: Option<usize>,
    #[serde(default)]
    pub full_dataset: bool,
    #[serde(default)]
    pub normalize: bool,
    #[serde(default)]
    pub n_features: Option<usize>,
    /// Skip the sampled estimate and use this `L_p`.
    #[serde(default)]
    pub lipschitz_p: Option<f64>,
    #[serde(default = "default_lp_trials")]
    pub lipschitz_trials: usize,
    #[serde(default = "yes")]
    pub constrained: bool,
}

fn tenth() -> f64 {
    0.1
}

fn default_subsample() -> Option<usize> {
    Some(200)
}

fn default_lp_trials() -> usize {
    1000
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolversConfig {
    #[serde(default)]
    pub sliding: Option<SlidingConfig>,
    #[serde(default)]
    pub extragradient: Option<ExtragradientConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerKind {
    Eg,
    Eag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlidingConfig {
    #[serde(default = "default_inner")]
    pub inner: InnerKind,
    #[serde(default = "default_max_inner")]
    pub max_inner: usize,
    #[serde(default)]
    pub fixed_inner: Option<usize>,
    #[serde(default)]
    pub abs_tol: Option<f64>,
    #[serde(default)]
    pub inner_step: Option<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
}

impl Default for SlidingConfig {
    fn default() -> Self {
        Self {
            inner: default_inner(),
            max_inner: default_max_inner(),
            fixed_inner: None,
            abs_tol: None,
            inner_step: None,
            theta: None,
            eta: None,
        }
    }
}

fn default_inner() -> InnerKind {
    InnerKind::Eg
}

fn default_max_inner() -> usize {
    10_000
}

impl SlidingConfig {
    pub fn inner_config(&self) -> InnerConfig {
        let method = match self.inner {
            InnerKind::Eg => InnerMethod::Eg,
            InnerKind::Eag => InnerMethod::Eag,
        };
        InnerConfig {
            method,
            max_inner: self.max_inner,
            abs_tol: self.abs_tol,
            eg_step: self.inner_step.filter(|_| method == InnerMethod::Eg),
            eag_step: self.inner_step.filter(|_| method == InnerMethod::Eag),
            fixed_iters: self.fixed_inner,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtragradientConfig {
    #[serde(default)]
    pub gamma: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    /// Reads, resolves relative paths against the file's directory, applies
    /// the output directory override, and validates.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        config.output_dir = base.join(&config.output_dir);
        if let ProblemConfig::Logistic(a) | ProblemConfig::Nllsq(a) = &mut config.problem {
            a.dataset = base.join(&a.dataset);
        }
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            config.output_dir = PathBuf::from(dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.solvers.sliding.is_none() && self.solvers.extragradient.is_none() {
            return bad("no solvers configured".into());
        }
        match &self.problem {
            ProblemConfig::Bilinear(b) => {
                if b.d == 0 {
                    return bad("d must be positive".into());
                }
                if !(b.mu > 0.0 && b.mu <= b.l) && b.coupling == Coupling::Spd {
                    return bad(format!("need 0 < mu <= L, got mu={} L={}", b.mu, b.l));
                }
                if !(b.l > 0.0) {
                    return bad(format!("L must be positive, got {}", b.l));
                }
                if !(b.regularization > 0.0) {
                    return bad("regularization must be positive".into());
                }
            }
            ProblemConfig::Logistic(a) | ProblemConfig::Nllsq(a) => {
                if !a.dataset.is_file() {
                    return bad(format!("dataset {} does not exist", a.dataset.display()));
                }
                if a.subsample == Some(0) {
                    return bad("subsample must be positive".into());
                }
                if !(a.delta >= 0.0 && a.beta_x >= 0.0 && a.beta_y >= 0.0) {
                    return bad("beta_x, beta_y and delta must be nonnegative".into());
                }
                if a.lipschitz_p.is_some_and(|l| !(l > 0.0)) {
                    return bad("lipschitz_p must be positive".into());
                }
                if a.lipschitz_trials == 0 {
                    return bad("lipschitz_trials must be positive".into());
                }
            }
        }
        if let Some(s) = &self.solvers.sliding {
            if s.max_inner == 0 {
                return bad("max_inner must be positive".into());
            }
            for (name, v) in [("theta", s.theta), ("eta", s.eta), ("inner_step", s.inner_step)] {
                if v.is_some_and(|v| !(v > 0.0)) {
                    return bad(format!("{name} must be positive"));
                }
            }
        }
        if let Some(e) = &self.solvers.extragradient {
            if e.gamma.is_some_and(|g| !(g > 0.0)) {
                return bad("gamma must be positive".into());
            }
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.problem.kind().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BILINEAR: &str = r#"
iterations = 10
seeds = [1, 2]
output_dir = "out"

[problem]
kind = "bilinear"
d = 5
L = 10.0

[solvers.sliding]
[solvers.extragradient]
gamma = 0.01
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(BILINEAR).unwrap();
        c.validate().unwrap();
        assert!(c.record_elapsed);
        match &c.problem {
            ProblemConfig::Bilinear(b) => {
                assert_eq!((b.d, b.mu, b.l, b.regularization), (5, 0.1, 10.0, 1.0));
                assert_eq!(b.coupling, Coupling::Spd);
            }
            other => panic!("{other:?}"),
        }
        let s = c.solvers.sliding.as_ref().unwrap();
        assert_eq!(s.inner_config(), InnerConfig::default());
        assert_eq!(c.solvers.extragradient.as_ref().unwrap().gamma, Some(0.01));
        assert_eq!(c.name(), "bilinear");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml(&BILINEAR.replace("d = 5", "d = 5\ndd = 1")).is_err());
        let c = ExperimentConfig::from_toml(&BILINEAR.replace("seeds = [1, 2]", "seeds = []")).unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::from_toml(&BILINEAR.replace("gamma = 0.01", "gamma = -1.0")).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn missing_dataset_is_a_config_error() {
        let text = r#"
iterations = 1
seeds = [0]
output_dir = "out"
[problem]
kind = "logistic"
dataset = "/definitely/not/here"
[solvers.sliding]
"#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert!(matches!(c.validate(), Err(BenchError::Config(_))));
    }
}
