use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oracle_ql::agent::PolicyBundle;
use oracle_ql::config::ExperimentConfig;
use oracle_ql::eval::{constraint_bands_csv, state_bands_csv, Comparison, EvalReport};
use oracle_ql::pipeline::{evaluate, train_stage, tune_stage, PolicySource};
use oracle_ql::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "oqlearn", version, about = "Constrained Q-learning with oracle constraint networks and tuned backoffs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train Q and constraint networks; writes <out>/bundle and <out>/training_log.jsonl.
    Train(Common),
    /// Tune deployment backoffs; writes <out>/bundle_tuned, <out>/tuning.json and <out>/tuning_report.txt.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Bundle to tune [default: <out>/bundle].
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Joint violation budget, overriding tune.omega.
        #[arg(long)]
        omega: Option<f64>,
    },
    /// Monte Carlo evaluation; writes eval_<label>.json, bands_<label>.csv and state_bands_<label>.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Bundle directory, or `nmpc` for the model-predictive baseline.
        #[arg(long)]
        bundle: String,
        /// Episode count, overriding eval.n_eval.
        #[arg(long)]
        n_eval: Option<usize>,
    },
    /// Tabulate evaluation reports; writes <out>/comparison.txt and <out>/comparison.csv.
    Compare {
        /// Report files (eval_*.json).
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Experiment seed, overriding seed.
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Config(String),
    NotConverged,
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = ExperimentConfig::load(&common.config).map_err(|e| match e {
        Error::Io { .. } => Failure::Config(e.to_string()),
        e => Failure::from(e),
    })?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
    Ok((cfg, out))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(common) => {
            let (cfg, out) = load_config(&common)?;
            let env = cfg.environment.build()?;
            let log_path = out.join("training_log.jsonl");
            let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io_failure(&log_path, e))?);
            let mut log_err = None;
            let outcome = train_stage(env.as_ref(), &cfg, |rec| {
                log::info!(
                    "iteration {}: eps {:.3}, return {:.4}, violation rate {:.3}, q loss {:.3e}",
                    rec.iteration,
                    rec.epsilon,
                    rec.mean_return,
                    rec.violation_rate,
                    rec.q_loss
                );
                let line = serde_json::to_string(rec).expect("record serializes");
                if let Err(e) = writeln!(log, "{line}") {
                    log_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = log_err {
                return Err(io_failure(&log_path, e));
            }
            log.flush().map_err(|e| io_failure(&log_path, e))?;
            let dir = out.join("bundle");
            outcome.bundle.save(&dir)?;
            println!("bundle written to {}", dir.display());
            Ok(())
        }
        Command::Tune { common, bundle, omega } => {
            let (mut cfg, out) = load_config(&common)?;
            if let Some(w) = omega {
                cfg.tune.omega = w;
                cfg.tune.validate()?;
            }
            let env = cfg.environment.build()?;
            let bundle = PolicyBundle::load(&bundle.unwrap_or_else(|| out.join("bundle")))?;
            let (tuned, result) = tune_stage(env.as_ref(), &bundle, &cfg.tune, cfg.seeds().tune)?;
            let dir = out.join("bundle_tuned");
            tuned.save(&dir)?;
            let report = result.report(&tuned.constraint_names);
            write(&out.join("tuning_report.txt"), &report)?;
            write(&out.join("tuning.json"), &(serde_json::to_string_pretty(&result).expect("result serializes") + "\n"))?;
            print!("{report}");
            if result.converged {
                Ok(())
            } else {
                Err(Failure::NotConverged)
            }
        }
        Command::Eval { common, bundle, n_eval } => {
            let (cfg, out) = load_config(&common)?;
            let n_eval = n_eval.unwrap_or(cfg.eval.n_eval);
            if n_eval == 0 {
                return Err(Failure::Config("--n-eval must be at least 1".into()));
            }
            let env = cfg.environment.build()?;
            let loaded;
            let (source, label) = if bundle == "nmpc" {
                (PolicySource::Nmpc(&cfg.nmpc), "nmpc".to_string())
            } else {
                let path = Path::new(&bundle);
                loaded = PolicyBundle::load(path)?;
                let label = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "bundle".into());
                (PolicySource::Bundle(&loaded), label)
            };
            let result = evaluate(env.as_ref(), source, &label, n_eval, cfg.seeds().eval)?;
            result.report.save(&out.join(format!("eval_{label}.json")))?;
            let spec = env.spec();
            write(&out.join(format!("bands_{label}.csv")), &constraint_bands_csv(spec, &result.trajectories, &cfg.eval.percentiles))?;
            write(&out.join(format!("state_bands_{label}.csv")), &state_bands_csv(spec, &result.trajectories, &cfg.eval.percentiles))?;
            let r = &result.report;
            println!(
                "{label}: joint violation {:.4}, objective {:.4} +- {:.4}, solve time {:.3e} s",
                r.joint_violation_probability, r.objective_mean, r.objective_std, r.solve_time_mean
            );
            Ok(())
        }
        Command::Compare { reports, out } => {
            let reports = reports.iter().map(|p| EvalReport::load(p)).collect::<Result<Vec<_>, _>>()?;
            let cmp = Comparison::new(&reports).map_err(|e| Failure::Config(e.to_string()))?;
            std::fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
            let text = cmp.to_text();
            write(&out.join("comparison.txt"), &text)?;
            write(&out.join("comparison.csv"), &cmp.to_csv())?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::NotConverged) => {
            eprintln!("backoff tuning did not converge; the closest acceptable backoffs were saved");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
