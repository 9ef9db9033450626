mod export;
mod verify;

use clap::{Parser, Subcommand, ValueEnum};
use qsmooth::costs::{CostId, EstimatorId};
use qsmooth::pipeline::{jump_time_average_all, BlockRun, PipelineOptions, Quadrature};
use qsmooth::Params;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "qsmooth", version, about = "State estimators for a partially observed driven qubit")]
struct Cli {
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one estimator's trajectory and the filtered baseline.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        estimator: EstimatorId,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-time costs of every estimator, optionally the block-length average.
    Costs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jump_average: bool,
        /// Restrict output to one cost (c5 gives one number per estimator).
        #[arg(long)]
        only: Option<CostId>,
    },
    /// Run a property suite and print a pass/fail table.
    Verify {
        suite: Suite,
        /// Configuration to check.  Without one, the Monte Carlo suite uses a finer
        /// step and grid than the reference run so that discretisation bias stays below
        /// the sampling error.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        trajectories: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    McCrossCheck,
    ClassicalEquivalence,
    Invariants,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<qsmooth::Error> for Failure {
    fn from(e: qsmooth::Error) -> Self {
        let (code, kind) = match e {
            qsmooth::Error::InvalidParams(_) => (2, "config"),
            ref e if e.is_numerical() => (3, "numerical"),
            _ => (3, "module"),
        };
        Failure { code, kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 2, kind: "io", message: e.to_string() }
    }
}

fn usage(message: String) -> Failure {
    Failure { code: 2, kind: "usage", message }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<Params, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure { code: 2, kind: "config", message: format!("{}: {e}", path.display()) })?;
    let mut params: Params =
        serde_json::from_str(&text).map_err(|e| Failure { code: 2, kind: "config", message: format!("{}: {e}", path.display()) })?;
    if let Some(s) = seed {
        params.seed = s;
    }
    params.validate()?;
    Ok(params)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure { code: 3, kind: "serialize", message: e.to_string() })?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn estimate(params: &Params, estimator: EstimatorId, out: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(out)?;
    let opts = PipelineOptions { skip_q4: estimator != EstimatorId::Q4, ..Default::default() };
    let run = BlockRun::with_options(params, &opts)?;
    let record: Option<&[f64]> = match estimator {
        EstimatorId::Q5 => Some(&run.q5.best.us.values),
        EstimatorId::Q6 | EstimatorId::Q7 => Some(&run.local_record.record.values),
        _ => None,
    };
    export::trajectory(params, &run.times, &run.estimates[&estimator], record).write(&out.join(format!("{estimator}.csv")))?;
    export::trajectory(params, &run.times, &run.estimates[&EstimatorId::Filtered], None).write(&out.join("filtered.csv"))?;
    export::effects(params, &run.effects).write(&out.join("effects.csv"))?;
    if estimator == EstimatorId::Q5 {
        let (csv, meta) = export::cdj(params, &run.q5.best, run.q5.roots.len());
        csv.write(&out.join("q5_cdj.csv"))?;
        write_json(&out.join("q5_cdj.json"), &meta)?;
    }
    for (t, pdf) in &run.pdf_snapshots {
        export::pdf(params, pdf).write(&out.join(format!("pdf_t{t}.csv")))?;
    }
    Ok(())
}

fn costs(params: &Params, out: &Path, jump_average: bool, only: Option<CostId>) -> Result<(), Failure> {
    std::fs::create_dir_all(out)?;
    let skip_q4 = only.is_some_and(|c| c != CostId::C5 && c != CostId::C67 && c != CostId::C3);
    let run = BlockRun::with_options(params, &PipelineOptions { skip_q4, ..Default::default() })?;
    let c5: serde_json::Map<String, serde_json::Value> =
        run.c5.iter().map(|(id, v)| (id.name().to_string(), serde_json::json!(v))).collect();
    let c5 = serde_json::json!({ "c5": c5, "flags": run.flags, "config_sha256": export::config_hash(params) });
    write_json(&out.join("c5.json"), &c5)?;
    if only == Some(CostId::C5) {
        println!("{}", serde_json::to_string_pretty(&c5["c5"]).unwrap_or_default());
    } else {
        for (id, rep) in &run.reports {
            export::per_time_costs(params, rep, only).write(&out.join(format!("costs_{id}.csv")))?;
        }
        write_json(&out.join("reports.json"), &run.reports.values().map(|r| (r.estimator, &r.flags, &r.jump_averaged)).collect::<Vec<_>>())?;
    }
    if jump_average {
        let avg = jump_time_average_all(params, &Quadrature::default())?;
        let table = avg.table();
        export::table(params, &table).write(&out.join("jump_average_table.csv"))?;
        write_json(&out.join("jump_average.json"), &avg)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| usage(format!("thread pool: {e}")))?;
    match cli.command {
        Command::Estimate { config, estimator, out } => {
            estimate(&load_config(&config, cli.seed)?, estimator, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Costs { config, out, jump_average, only } => {
            costs(&load_config(&config, cli.seed)?, &out, jump_average, only)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { suite, config, trajectories } => {
            let params = match config {
                Some(c) => load_config(&c, cli.seed)?,
                None if matches!(suite, Suite::McCrossCheck) => {
                    Params::reference(0.5).with_dt(5e-4).with_grid(4096).with_seed(cli.seed.unwrap_or(2026))
                }
                None => Params::reference(0.5).with_seed(cli.seed.unwrap_or(0)),
            };
            let checks = match suite {
                Suite::McCrossCheck => verify::mc_cross_check(&params, trajectories)?,
                Suite::ClassicalEquivalence => verify::classical_equivalence(params.seed)?,
                Suite::Invariants => verify::invariants(&params)?,
            };
            let ok = verify::print(&checks);
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": msg.trim() }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("{}", serde_json::json!({ "error": f.kind, "message": f.message }));
            ExitCode::from(f.code)
        }
    }
}
