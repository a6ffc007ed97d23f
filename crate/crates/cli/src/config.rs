//! JSON run configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use ofw_core::gradients::LinkFunction;
use ofw_core::metrics::Cadence;
use ofw_core::solvers::ScheduleClock;
use ofw_core::workloads::{self, ClassificationSpec, Workload};
use ofw_core::{ConstraintSet, PowerIterConfig, RunOptions, SolverKind, StepSchedule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub workload: WorkloadSpec,
    pub solver: SolverSpec,
    pub horizon: usize,
    #[serde(default = "one")]
    pub batch: usize,
    #[serde(default = "one")]
    pub inner_repeats: usize,
    #[serde(default)]
    pub cadence: Cadence,
    /// Directory receiving `trace.csv` and `summary.json`.
    pub output: PathBuf,
    /// Replaces the synthetic sample stream.
    #[serde(default)]
    pub data: Option<DataFile>,
    /// Independent runs, one per seed, written to `output/seed-<seed>/`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub metrics: MetricsSpec,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSpec {
    FixedDesignLasso {
        n: usize,
        m: usize,
        sparsity_frac: f64,
        sigma_w: f64,
        r_factor: f64,
        seed: u64,
    },
    RandomDesignLasso {
        n: usize,
        m: usize,
        sparsity_frac: f64,
        sigma_w: f64,
        r_factor: f64,
        seed: u64,
    },
    MatrixCompletion {
        m1: usize,
        m2: usize,
        rank: usize,
        noise_var: f64,
        r_factor: f64,
        #[serde(default = "gaussian")]
        link: LinkFunction,
        #[serde(default)]
        power: Option<PowerIterConfig>,
        seed: u64,
    },
    Classification(ClassificationSpec),
}

fn gaussian() -> LinkFunction {
    LinkFunction::Gaussian
}

impl WorkloadSpec {
    pub fn seed(&self) -> u64 {
        match self {
            WorkloadSpec::FixedDesignLasso { seed, .. }
            | WorkloadSpec::RandomDesignLasso { seed, .. }
            | WorkloadSpec::MatrixCompletion { seed, .. } => *seed,
            WorkloadSpec::Classification(spec) => spec.seed,
        }
    }

    /// Generates the workload, with `seed` replacing the configured one.
    pub fn build(&self, seed: u64) -> ofw_core::Result<Workload> {
        match *self {
            WorkloadSpec::FixedDesignLasso {
                n,
                m,
                sparsity_frac,
                sigma_w,
                r_factor,
                ..
            } => workloads::gen_fixed_design_lasso(n, m, sparsity_frac, sigma_w, r_factor, seed),
            WorkloadSpec::RandomDesignLasso {
                n,
                m,
                sparsity_frac,
                sigma_w,
                r_factor,
                ..
            } => workloads::gen_random_design_lasso(n, m, sparsity_frac, sigma_w, r_factor, seed),
            WorkloadSpec::MatrixCompletion {
                m1,
                m2,
                rank,
                noise_var,
                r_factor,
                link,
                power,
                ..
            } => {
                let mut w = workloads::gen_mc(m1, m2, rank, noise_var, r_factor, link, seed)?;
                if let (Some(cfg), ConstraintSet::TraceNormBall { power, .. }) =
                    (power, &mut w.constraint)
                {
                    cfg.validate()?;
                    *power = cfg;
                }
                Ok(w)
            }
            WorkloadSpec::Classification(spec) => {
                workloads::gen_classification(&ClassificationSpec { seed, ..spec })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub kind: SolverKind,
    pub schedule: StepSchedule,
    #[serde(default)]
    pub clock: ScheduleClock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFile {
    pub format: DataFormat,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// `k,l,y` lines, 0-based indices.
    McTriplets,
    /// `label index:value ...` lines, 1-based indices.
    LabeledSparse,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    /// Also record `‖∇F_t − ∇f‖` at each evaluation.
    #[serde(default)]
    pub grad_errors: bool,
    /// Window in rounds for the fitted slopes; defaults to `[max(1, T/100), T]`.
    #[serde(default)]
    pub slope_window: Option<[f64; 2]>,
    /// Iterations of the exact-gradient reference solve used when `f*` is unknown.
    #[serde(default)]
    pub reference_budget: Option<usize>,
}

/// A configuration problem, located in the source file when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path.display())?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
            if let Some(col) = self.column {
                write!(f, ":{col}")?;
            }
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// A parsed and validated config together with its digest.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub digest: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: None,
            column: None,
            message: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    /// Parses and validates `text`; `origin` only labels error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<LoadedConfig, ConfigError> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError {
            path: origin.to_path_buf(),
            line: Some(e.line()),
            column: Some(e.column()),
            message: e.to_string(),
        })?;
        if let Err((key, message)) = config.validate() {
            return Err(ConfigError {
                path: origin.to_path_buf(),
                line: locate(text, key),
                column: None,
                message: format!("{key}: {message}"),
            });
        }
        let digest = config.digest();
        Ok(LoadedConfig { config, digest })
    }

    /// SHA-256 of the canonical serialization: defaults filled in, keys sorted.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds
            .clone()
            .unwrap_or_else(|| vec![self.workload.seed()])
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            batch: self.batch,
            inner_repeats: self.inner_repeats,
            cadence: self.cadence,
            clock: self.solver.clock,
            ..RunOptions::new(self.solver.kind, self.solver.schedule, self.horizon)
        }
    }

    pub fn slope_window(&self) -> (f64, f64) {
        match self.metrics.slope_window {
            Some([lo, hi]) => (lo, hi),
            None => ((self.horizon / 100).max(1) as f64, self.horizon as f64),
        }
    }

    /// Checks everything that can fail before samples are drawn. Errors name the
    /// offending key.
    fn validate(&self) -> Result<(), (&'static str, String)> {
        self.solver
            .schedule
            .validate()
            .map_err(|e| ("schedule", e.to_string()))?;
        if let Some([lo, hi]) = self.metrics.slope_window {
            if !(lo > 0.0 && lo < hi) {
                return Err((
                    "slope_window",
                    format!("need 0 < lo < hi, got [{lo}, {hi}]"),
                ));
            }
        }
        if self.metrics.reference_budget == Some(0) {
            return Err(("reference_budget", "must be >= 1".into()));
        }
        if matches!(&self.seeds, Some(s) if s.is_empty()) {
            return Err(("seeds", "list is empty".into()));
        }
        if let Some(data) = &self.data {
            let ok = matches!(
                (data.format, &self.workload),
                (
                    DataFormat::McTriplets,
                    WorkloadSpec::MatrixCompletion { .. }
                ) | (DataFormat::LabeledSparse, WorkloadSpec::Classification(_))
            );
            if !ok {
                return Err((
                    "format",
                    format!(
                        "{:?} data does not match the {} workload",
                        data.format,
                        self.workload.kind_name()
                    ),
                ));
            }
        }
        let workload = self
            .workload
            .build(self.workload.seed())
            .map_err(|e| ("workload", e.to_string()))?;
        self.run_options()
            .validate(&workload.constraint)
            .map_err(|e| (self.offending_run_key(), e.to_string()))
    }

    fn offending_run_key(&self) -> &'static str {
        if self.horizon == 0 {
            "horizon"
        } else if self.batch == 0 {
            "batch"
        } else if self.inner_repeats == 0 {
            "inner_repeats"
        } else {
            "solver"
        }
    }
}

impl WorkloadSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            WorkloadSpec::FixedDesignLasso { .. } => "fixed_design_lasso",
            WorkloadSpec::RandomDesignLasso { .. } => "random_design_lasso",
            WorkloadSpec::MatrixCompletion { .. } => "matrix_completion",
            WorkloadSpec::Classification(_) => "classification",
        }
    }
}

/// 1-based line of the first occurrence of `"key"`.
fn locate(text: &str, key: &str) -> Option<usize> {
    let quoted = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&quoted))
        .map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "workload": {"kind": "fixed_design_lasso", "n": 10, "m": 5, "sparsity_frac": 0.2,
               "sigma_w": 1.0, "r_factor": 1.1, "seed": 3},
  "solver": {"kind": "ofw", "schedule": {"kind": "harmonic", "k": 2}},
  "horizon": 10,
  "output": "out"
}"#;

    fn parse(text: &str) -> Result<LoadedConfig, ConfigError> {
        RunConfig::parse(text, Path::new("c.json"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(MINIMAL).unwrap().config;
        assert_eq!(
            (c.batch, c.inner_repeats, c.cadence),
            (1, 1, Cadence::Geometric)
        );
        assert_eq!(c.seeds(), vec![3]);
        assert_eq!(c.slope_window(), (1.0, 10.0));
    }

    #[test]
    fn digest_ignores_formatting_and_explicit_defaults() {
        let a = parse(MINIMAL).unwrap().digest;
        let explicit = MINIMAL.replace(
            "\"horizon\": 10,",
            "\"horizon\": 10, \"batch\": 1, \"cadence\": \"geometric\",",
        );
        let b = parse(&explicit).unwrap().digest;
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        let c = parse(&MINIMAL.replace("\"seed\": 3", "\"seed\": 4"))
            .unwrap()
            .digest;
        assert_ne!(a, c);
    }

    #[test]
    fn unknown_field_is_located() {
        let text = MINIMAL.replace("\"horizon\": 10,", "\"horizon\": 10,\n  \"bogus\": 1,");
        let e = parse(&text).unwrap_err();
        assert_eq!(e.line, Some(6));
        assert!(e.message.contains("bogus"), "{e}");
    }

    #[test]
    fn oaw_on_trace_ball_is_rejected() {
        let text = r#"{
  "workload": {"kind": "matrix_completion", "m1": 4, "m2": 5, "rank": 2,
               "noise_var": 1.0, "r_factor": 1.1, "seed": 1},
  "solver": {"kind": "oaw", "schedule": {"kind": "harmonic", "k": 2}},
  "horizon": 10,
  "output": "out"
}"#;
        let e = parse(text).unwrap_err();
        assert_eq!(e.line, Some(4));
        assert!(e.to_string().starts_with("c.json:4: solver:"), "{e}");
    }

    #[test]
    fn mismatched_data_format_is_rejected() {
        let text = MINIMAL.replace(
            "\"horizon\": 10,",
            "\"horizon\": 10,\n  \"data\": {\"format\": \"mc_triplets\", \"path\": \"x.csv\"},",
        );
        let e = parse(&text).unwrap_err();
        assert!(e.message.starts_with("format:"), "{e}");
    }

    #[test]
    fn classification_spec_parses_inline() {
        let text = r#"{
  "workload": {"kind": "classification", "m1": 3, "m2": 3, "rank": 1, "n_train": 50,
               "flip_frac": 0.1, "constraint": {"kind": "l1", "radius": 1.0}, "seed": 2},
  "solver": {"kind": "oaw", "schedule": {"kind": "power", "alpha": 0.75}},
  "horizon": 20,
  "output": "out"
}"#;
        let c = parse(text).unwrap().config;
        assert_eq!(c.workload.seed(), 2);
        assert!(parse(&text.replace("\"seed\": 2", "\"seed\": 2, \"extra\": 0")).is_err());
    }

    #[test]
    fn bad_schedule_and_window() {
        assert!(parse(&MINIMAL.replace("\"k\": 2", "\"k\": 0"))
            .unwrap_err()
            .message
            .starts_with("schedule"));
        let text = MINIMAL.replace(
            "\"horizon\": 10,",
            "\"horizon\": 10, \"metrics\": {\"slope_window\": [5, 2]},",
        );
        assert!(parse(&text)
            .unwrap_err()
            .message
            .starts_with("slope_window"));
        assert_eq!(
            parse(&MINIMAL.replace("\"horizon\": 10", "\"horizon\": 0"))
                .unwrap_err()
                .line,
            Some(5)
        );
    }
}
