use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use symreg::ensemble::{predict_ensemble, predictions_to_tsv, rashomon_set};
use symreg::experiments::{generate, run_grid, GeneratorSpec, SearchSettings};
use symreg::likelihood::parse_numeric_csv;
use symreg::prior::{fit_prior_hyperparams, TargetMoments};
use symreg::sampler::{map_model, read_trace, sample_posterior, write_trace};
use symreg::score::description_length;
use symreg::{parse_expression, Dataset, Error, ErrorKind, PriorHyperparams, RunConfig};

/// Bayesian symbolic regression.
#[derive(Parser)]
#[command(name = "symreg", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Name of the target column in CSV input (default: last column).
    #[arg(long, global = true)]
    target: Option<String>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset from a generator spec and write it as CSV.
    Generate { spec: PathBuf },
    /// Sample the posterior over expressions for a dataset.
    Search {
        data: PathBuf,
        /// Prior coefficients (TSV); defaults to the built-in table.
        #[arg(long)]
        hyperparams: Option<PathBuf>,
        /// Description-length window of the Rashomon report.
        #[arg(long, default_value_t = 2.0)]
        delta: f64,
    },
    /// Fit and score a single expression.
    Score {
        data: PathBuf,
        expression: String,
        #[arg(long)]
        hyperparams: Option<PathBuf>,
    },
    /// Model-averaged predictions from a trace at query points.
    Predict { trace: PathBuf, query: PathBuf },
    /// Run a recovery grid over sample sizes and noise levels.
    Experiment {
        spec: PathBuf,
        #[arg(long)]
        hyperparams: Option<PathBuf>,
    },
    /// Fit prior coefficients to target operator moments.
    PriorFit { targets: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Io => 3,
                ErrorKind::Numerical => 4,
            })
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(io_err(path))
}

fn out_dir(cli: &Cli, default: &str) -> Result<PathBuf, Error> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

/// Writes to `--out` when given, else to stdout.
fn emit(cli: &Cli, text: &str) -> Result<(), Error> {
    match &cli.out {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    Ok(match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn load_hyperparams(path: Option<&PathBuf>, cfg: &RunConfig) -> Result<PriorHyperparams, Error> {
    match path {
        Some(p) => PriorHyperparams::read(p),
        None => Ok(PriorHyperparams::surrogate(&cfg.sampler.basis)),
    }
}

fn json_text(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json serializes");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli)?;
    let say = |msg: String| {
        if !cli.quiet {
            eprintln!("{msg}");
        }
    };
    match &cli.command {
        Command::Generate { spec } => {
            let mut spec = GeneratorSpec::read(spec)?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let data = generate(&spec)?;
            emit(&cli, &data.to_csv())?;
            say(format!("generated {} rows", data.n()));
        }
        Command::Search { data, hyperparams, delta } => {
            let data = Dataset::read_csv(data, cli.target.as_deref())?;
            let hp = load_hyperparams(hyperparams.as_ref(), &cfg)?;
            let fit = cfg.fit.resolve(true);
            let dir = out_dir(&cli, "symreg-search")?;
            write_file(&dir.join("config.toml"), &cfg.to_toml())?;
            say(format!("searching {} rows, {} feature(s)", data.n(), data.n_features()));
            let trace = sample_posterior(&data, &hp, &fit, &cfg.score, &cfg.sampler)?;
            write_trace(&trace, &dir.join("trace.jsonl"))?;
            let map = map_model(&trace)?;
            let report = json!({
                "expression": map.tree.to_string(),
                "signature": map.tree.signature().as_str(),
                "params": map.fit.theta_hat,
                "sse": map.fit.sse,
                "converged": map.fit.converged,
                "score": map.score,
                "models_scored": trace.models_scored,
                "stats": trace.stats,
            });
            write_file(&dir.join("map.json"), &json_text(&report))?;
            write_file(&dir.join("rashomon.tsv"), &rashomon_set(&trace, *delta)?.to_tsv())?;
            println!("{}", map.tree);
        }
        Command::Score { data, expression, hyperparams } => {
            let data = Dataset::read_csv(data, cli.target.as_deref())?;
            let tree = parse_expression(expression, data.n_features())?;
            let hp = load_hyperparams(hyperparams.as_ref(), &cfg)?;
            let (fit, score) = description_length(&tree, &data, &hp, &cfg.fit.resolve(false), &cfg.score)?;
            let report = json!({
                "expression": tree.to_string(),
                "params": fit.theta_hat,
                "sse": fit.sse,
                "converged": fit.converged,
                "score": score,
            });
            emit(&cli, &json_text(&report))?;
        }
        Command::Predict { trace, query } => {
            let trace = read_trace(trace)?;
            if trace.records.is_empty() {
                return Err(Error::Empty("trace"));
            }
            let text = fs::read_to_string(query).map_err(io_err(query))?;
            let (mut header, mut rows) =
                parse_numeric_csv(&text).map_err(|e| Error::Format { path: query.clone(), msg: e.to_string() })?;
            let target = cli.target.clone().unwrap_or_else(|| "y".to_string());
            if let Some(t) = header.iter().position(|h| *h == target) {
                header.remove(t);
                rows.iter_mut().for_each(|r| {
                    r.remove(t);
                });
            }
            let preds = rows
                .iter()
                .map(|x| predict_ensemble(&trace, x, &cfg.ensemble))
                .collect::<Result<Vec<_>, _>>()?;
            emit(&cli, &predictions_to_tsv(&preds, &header))?;
        }
        Command::Experiment { spec, hyperparams } => {
            let base = GeneratorSpec::read(spec)?;
            let hp = load_hyperparams(hyperparams.as_ref(), &cfg)?;
            let settings = SearchSettings {
                hp,
                fit: cfg.fit.resolve(true),
                score: cfg.score.clone(),
                sampler: cfg.sampler.clone(),
            };
            let dir = out_dir(&cli, "symreg-experiment")?;
            write_file(&dir.join("config.toml"), &cfg.to_toml())?;
            say(format!(
                "running {} cell(s) for `{}`",
                cfg.experiment.ns.len() * cfg.experiment.sigmas.len(),
                base.model
            ));
            let result = run_grid(&base, &cfg.experiment, &settings, Some(&dir))?;
            let failed = result.cells.iter().filter(|c| c.outcome.is_err()).count();
            print!("{}", result.summary_tsv());
            if failed > 0 {
                say(format!("{failed} cell(s) failed"));
            }
        }
        Command::PriorFit { targets } => {
            let targets = TargetMoments::read(targets)?;
            let dir = out_dir(&cli, "symreg-prior")?;
            write_file(&dir.join("config.toml"), &cfg.to_toml())?;
            let report = fit_prior_hyperparams(&targets, &cfg.sampler, &cfg.prior)?;
            report.hyperparams.write(&dir.join("hyperparams.tsv"))?;
            write_file(&dir.join("report.json"), &(report.to_json() + "\n"))?;
            say(format!(
                "{} after {} iteration(s), max moment error {:.4}",
                if report.converged { "converged" } else { "not converged" },
                report.iterations,
                report.max_error
            ));
        }
    }
    Ok(())
}
