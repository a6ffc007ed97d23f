use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ofw_cli::RunConfig;
use ofw_core::verify::{self, LmoVariant, Suite, Verifier, LMO_CHECK_POWER};
use ofw_core::PowerIterConfig;

#[derive(Parser)]
#[command(
    name = "ofw",
    version,
    about = "Online Frank-Wolfe experiments and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run { config: PathBuf },
    /// Run the verification suites (`all` or one suite name).
    Verify {
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = verify::DEFAULT_SEED)]
        seed: u64,
        /// Print outcomes as JSON lines.
        #[arg(long)]
        json: bool,
    },
    /// Compare LMOs with exhaustive scans or a dense SVD on random gradients.
    LmoCheck {
        /// `l1`, `polytope`, or `ROWSxCOLS` for trace-norm balls up to that size.
        dims: String,
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Power-iteration cap for the trace-norm LMO.
        #[arg(long, default_value_t = LMO_CHECK_POWER.max_iter)]
        max_iter: usize,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Run { config } => run(config),
        Command::Verify { suite, seed, json } => run_verify(&suite, seed, json),
        Command::LmoCheck {
            dims,
            trials,
            seed,
            max_iter,
        } => lmo_check(&dims, trials, seed, max_iter),
    }
}

fn run(path: PathBuf) -> Result<bool> {
    let loaded = RunConfig::load(&path)?;
    println!("config {} digest {}", path.display(), loaded.digest);
    for o in ofw_cli::run_config(&loaded)? {
        let s = &o.summary;
        let h = s.final_h_t.map_or("-".into(), |h| format!("{h:.4e}"));
        let slope = s.h_slope.value().map_or("-".into(), |v| format!("{v:.3}"));
        println!(
            "seed {}: {} steps ({} FW, {} AW, {} drop), final h_t {h}, h_t slope {slope} -> {}",
            o.seed,
            s.steps,
            s.steps_by_kind.fw,
            s.steps_by_kind.away,
            s.steps_by_kind.drop,
            o.dir.display()
        );
    }
    Ok(true)
}

fn run_verify(name: &str, seed: u64, json: bool) -> Result<bool> {
    let suites = if name == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![Suite::from_name(name)?]
    };
    let verifier = Verifier::new(seed);
    let mut all_passed = true;
    for suite in suites {
        let outcome = verifier.run(suite);
        all_passed &= outcome.passed;
        if json {
            println!("{}", serde_json::to_string(&outcome)?);
        } else {
            println!("{outcome}");
        }
    }
    Ok(all_passed)
}

fn parse_variant(dims: &str) -> Result<LmoVariant> {
    Ok(match dims {
        "l1" => LmoVariant::L1,
        "polytope" => LmoVariant::Polytope,
        _ => {
            let (r, c) = dims
                .split_once(['x', 'X'])
                .with_context(|| format!("dims {dims:?} is not l1, polytope or ROWSxCOLS"))?;
            let max_rows: usize = r.parse().with_context(|| format!("bad row count {r:?}"))?;
            let max_cols: usize = c
                .parse()
                .with_context(|| format!("bad column count {c:?}"))?;
            if max_rows == 0 || max_cols == 0 {
                bail!("dims must be positive, got {dims}");
            }
            LmoVariant::Trace { max_rows, max_cols }
        }
    })
}

fn lmo_check(dims: &str, trials: usize, seed: u64, max_iter: usize) -> Result<bool> {
    let variant = parse_variant(dims)?;
    if trials == 0 {
        bail!("trials must be >= 1");
    }
    let power = PowerIterConfig {
        max_iter,
        ..LMO_CHECK_POWER
    };
    let report = verify::lmo_check(variant, trials, seed, &power)?;
    let passed = report.mismatches == 0 && report.max_relative_error <= 1e-6;
    println!(
        "[{}] {:?}: {} trials, {} mismatches, max relative error {:.2e}, {} unconverged (max_iter {max_iter})",
        if passed { "PASS" } else { "FAIL" },
        report.variant,
        report.trials,
        report.mismatches,
        report.max_relative_error,
        report.unconverged
    );
    Ok(passed)
}
