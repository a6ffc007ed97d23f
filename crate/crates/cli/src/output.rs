//! Trace CSV and JSON summary writers.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use ofw_core::metrics::{self, Evaluation};
use ofw_core::workloads::FStar;
use ofw_core::{SolverKind, StepKind, StepSchedule, Trace};
use serde::Serialize;

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";

pub const TRACE_HEADER: [&str; 11] = [
    "t",
    "n_t",
    "kind",
    "gamma",
    "g_fw",
    "g_aw",
    "h_t",
    "grad_err_inf",
    "grad_err_op",
    "f_value",
    "elapsed_ns",
];

fn field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per solver step; evaluation columns are filled on the step whose
/// iterate was evaluated and left empty elsewhere.
pub fn write_trace<W: Write>(out: W, trace: &Trace) -> io::Result<()> {
    let mut csv = csv::Writer::from_writer(out);
    csv.write_record(TRACE_HEADER)?;
    let mut evals = trace.evaluations.iter().peekable();
    for r in &trace.records {
        let mut eval: Option<&Evaluation> = None;
        while let Some(e) = evals.next_if(|e| e.step <= r.t) {
            if e.step == r.t {
                eval = Some(e);
            }
        }
        csv.write_record([
            r.t.to_string(),
            r.n_t.to_string(),
            r.kind.label().to_string(),
            r.gamma_hat.to_string(),
            r.g_fw.to_string(),
            field(r.g_aw),
            field(eval.and_then(|e| e.h)),
            field(eval.and_then(|e| e.grad_err_inf)),
            field(eval.and_then(|e| e.grad_err_op)),
            field(eval.and_then(|e| e.f_value)),
            r.elapsed_ns.to_string(),
        ])?;
    }
    csv.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KindCounts {
    pub fw: usize,
    pub away: usize,
    pub drop: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Slope {
    Fit {
        slope: f64,
        intercept: f64,
        r2: f64,
        points: usize,
        window: [f64; 2],
    },
    Unavailable {
        unavailable: String,
    },
}

impl Slope {
    pub fn fit(series: &[(f64, f64)], window: (f64, f64)) -> Slope {
        match metrics::loglog_slope(series, window) {
            Ok(f) => Slope::Fit {
                slope: f.slope,
                intercept: f.intercept,
                r2: f.r2,
                points: f.points,
                window: [f.window.0, f.window.1],
            },
            Err(e) => Slope::Unavailable {
                unavailable: e.to_string(),
            },
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Slope::Fit { slope, .. } => Some(*slope),
            Slope::Unavailable { .. } => None,
        }
    }
}

/// Per-run summary. Everything except `wall_clock_ns` is a deterministic
/// function of the config and seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub config_digest: String,
    pub seed: u64,
    pub workload: String,
    pub solver: SolverKind,
    pub schedule: StepSchedule,
    pub horizon: usize,
    pub rounds_completed: usize,
    pub steps: usize,
    pub truncated: bool,
    pub steps_by_kind: KindCounts,
    pub f_star: Option<FStar>,
    pub final_h_t: Option<f64>,
    /// Some `h_t` fell below the reporting floor of a reference optimum.
    pub h_clamped: bool,
    pub h_slope: Slope,
    pub grad_err_slope: Slope,
    /// `min g_FW` over the second half of the rounds.
    pub min_gap_tail: Option<f64>,
    /// Only with the `every` cadence, where all played iterates are evaluated.
    pub average_regret: Option<f64>,
    pub drop_lemma_violations: usize,
    pub lmo_unconverged: usize,
    pub link_saturated: bool,
    pub wall_clock_ns: u64,
}

pub struct SummaryInput<'a> {
    pub digest: &'a str,
    pub seed: u64,
    pub workload: String,
    pub solver: SolverKind,
    pub schedule: StepSchedule,
    pub horizon: usize,
    pub f_star: Option<FStar>,
    pub every_round: bool,
    pub window: (f64, f64),
}

impl Summary {
    pub fn new(input: SummaryInput<'_>, trace: &Trace) -> Summary {
        let average_regret = match input.f_star {
            Some(star) if input.every_round && !trace.f_values().is_empty() => {
                metrics::average_regret(&trace.f_values(), star.value()).ok()
            }
            _ => None,
        };
        Summary {
            config_digest: input.digest.to_string(),
            seed: input.seed,
            workload: input.workload,
            solver: input.solver,
            schedule: input.schedule,
            horizon: input.horizon,
            rounds_completed: trace.rounds_completed,
            steps: trace.records.len(),
            truncated: trace.truncated,
            steps_by_kind: KindCounts {
                fw: trace.count(StepKind::FrankWolfe),
                away: trace.count(StepKind::Away),
                drop: trace.count(StepKind::Drop),
            },
            f_star: input.f_star,
            final_h_t: trace.final_h(),
            h_clamped: trace.evaluations.iter().any(|e| e.h_clamped),
            h_slope: Slope::fit(&trace.h_series(), input.window),
            grad_err_slope: Slope::fit(&trace.grad_err_series(), input.window),
            min_gap_tail: metrics::min_gap_tail(&trace.records, input.horizon).ok(),
            average_regret,
            drop_lemma_violations: trace.drop_lemma_violations,
            lmo_unconverged: trace.lmo_unconverged,
            link_saturated: trace.link_saturated,
            wall_clock_ns: u64::try_from(trace.wall_clock_ns).unwrap_or(u64::MAX),
        }
    }
}

pub fn write_outputs(dir: &Path, trace: &Trace, summary: &Summary) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut csv = BufWriter::new(File::create(dir.join(TRACE_FILE))?);
    write_trace(&mut csv, trace)?;
    csv.flush()?;
    let mut json = BufWriter::new(File::create(dir.join(SUMMARY_FILE))?);
    serde_json::to_writer_pretty(&mut json, summary)?;
    writeln!(json)?;
    json.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ofw_core::StepRecord;

    #[test]
    fn evaluation_columns_land_on_their_step() {
        let records = (1..=3)
            .map(|t| StepRecord {
                t,
                n_t: t,
                gamma_hat: 0.5,
                g_fw: 1.0,
                ..StepRecord::default()
            })
            .collect();
        let trace = Trace {
            records,
            evaluations: vec![Evaluation {
                round: 2,
                step: 2,
                h: Some(0.25),
                ..Evaluation::default()
            }],
            ..Trace::default()
        };
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "t,n_t,kind,gamma,g_fw,g_aw,h_t,grad_err_inf,grad_err_op,f_value,elapsed_ns"
        );
        assert_eq!(lines[1], "1,1,FW,0.5,1,,,,,,0");
        assert_eq!(lines[2], "2,2,FW,0.5,1,,0.25,,,,0");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn slope_serializes_with_window_or_reason() {
        let series: Vec<(f64, f64)> = (1..=10).map(|t| (t as f64, 1.0 / t as f64)).collect();
        let fit = Slope::fit(&series, (1.0, 10.0));
        assert!((fit.value().unwrap() + 1.0).abs() < 1e-12);
        let json = serde_json::to_value(&fit).unwrap();
        assert_eq!(json["window"], serde_json::json!([1.0, 10.0]));
        let none = serde_json::to_value(Slope::fit(&[], (1.0, 10.0))).unwrap();
        assert!(none["unavailable"].is_string());
    }
}
