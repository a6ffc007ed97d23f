//! Wires a config into workload, oracle, solver and writers.

use std::path::PathBuf;

use ofw_core::exec::{self, Execution};
use ofw_core::gradients::Sample;
use ofw_core::metrics::{Cadence, Evaluator};
use ofw_core::workloads::REFERENCE_BUDGET;
use ofw_core::{solvers, Params, Shape, Trace};
use thiserror::Error;

use crate::config::{DataFormat, LoadedConfig, RunConfig};
use crate::ingest::{self, IngestError};
use crate::output::{self, Summary, SummaryInput};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] ofw_core::Error),
    #[error("{path}: {source}")]
    Ingest { path: PathBuf, source: IngestError },
    #[error("writing {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// The result of one seed.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    pub summary: Summary,
}

/// Runs every configured seed, concurrently when built with `parallel`, and writes
/// one trace and summary per seed.
pub fn run_config(loaded: &LoadedConfig) -> Result<Vec<RunOutcome>, RunError> {
    let config = &loaded.config;
    let data = load_data(config)?;
    let seeds = config.seeds();
    let results = exec::map_slice(Execution::default(), &seeds, |&seed| {
        let dir = match config.seeds {
            Some(_) => config.output.join(format!("seed-{seed}")),
            None => config.output.clone(),
        };
        let (trace, summary) = run_seed(config, &loaded.digest, seed, data.as_deref())?;
        output::write_outputs(&dir, &trace, &summary).map_err(|source| RunError::Output {
            path: dir.clone(),
            source,
        })?;
        Ok(RunOutcome { seed, dir, summary })
    });
    results.into_iter().collect()
}

/// One run without touching the filesystem.
pub fn run_seed(
    config: &RunConfig,
    digest: &str,
    seed: u64,
    data: Option<&[Sample]>,
) -> Result<(Trace, Summary), RunError> {
    let mut workload = config.workload.build(seed)?;
    let has_exact_gradient = workload
        .gradient(&Params::zeros(workload.shape()))
        .is_some();
    if data.is_none() && workload.f_star.is_none() && has_exact_gradient {
        workload =
            workload.with_reference(config.metrics.reference_budget.unwrap_or(REFERENCE_BUDGET))?;
    }
    let mut oracle = workload.oracle();
    let opts = config.run_options();
    let evaluator = workload.evaluator(config.metrics.grad_errors);
    let trace = match data {
        // The synthetic model says nothing about external data, so nothing is evaluated.
        Some(samples) => solvers::run(
            &opts,
            &mut oracle,
            &workload.constraint,
            samples.iter().cloned(),
            None,
        )?,
        None => solvers::run(
            &opts,
            &mut oracle,
            &workload.constraint,
            workload.stream(),
            Some(&evaluator as &dyn Evaluator),
        )?,
    };
    let summary = Summary::new(
        SummaryInput {
            digest,
            seed,
            workload: workload.name.clone(),
            solver: config.solver.kind,
            schedule: config.solver.schedule,
            horizon: config.horizon,
            f_star: if data.is_some() {
                None
            } else {
                workload.f_star
            },
            every_round: config.cadence == Cadence::Every,
            window: config.slope_window(),
        },
        &trace,
    );
    Ok((trace, summary))
}

fn load_data(config: &RunConfig) -> Result<Option<Vec<Sample>>, RunError> {
    let Some(file) = &config.data else {
        return Ok(None);
    };
    let shape = config.workload.build(config.workload.seed())?.shape();
    let err = |source| RunError::Ingest {
        path: file.path.clone(),
        source,
    };
    let samples = match file.format {
        DataFormat::McTriplets => {
            let Shape::Matrix(rows, cols) = shape else {
                unreachable!("validated against the workload")
            };
            ingest::ingest_mc_triplets(&file.path, Some((rows, cols)))
                .map_err(err)?
                .into_iter()
                .map(Sample::Mc)
                .collect()
        }
        DataFormat::LabeledSparse => ingest::ingest_labeled_sparse(&file.path, Some(shape.len()))
            .map_err(err)?
            .samples
            .into_iter()
            .map(Sample::Labeled)
            .collect(),
    };
    Ok(Some(samples))
}
