use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use feedlab::analysis::{analyze, experiments_present, AnalysisOptions};
use feedlab::experiment::StudyConfig;
use feedlab::model::{Experiment, Post};
use feedlab::scoring::{political_fraction, qualifies, LexiconOracle, RemoteInferenceClient, ScoringBackend};
use feedlab::service::{serve, AppState, ServiceConfig, ENV_STORE};
use feedlab::sim::{run_study, SimConfig};
use feedlab::stats::{power_simulation, PowerConfig, PowerModel};
use feedlab::store::{read_bundle, read_jsonl, write_bundle};

#[derive(Parser)]
#[command(name = "feedlab", version, about = "Feed reranking experiment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Reduce,
    Increase,
}

impl From<ExperimentArg> for Experiment {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::Reduce => Experiment::Reduce,
            ExperimentArg::Increase => Experiment::Increase,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Md,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Lmm,
    Ols,
}

#[derive(Subcommand)]
enum Command {
    /// Screen a participant's feed sample for eligibility.
    Screen {
        /// JSONL file with one post per line.
        #[arg(long)]
        posts: PathBuf,
    },
    /// Run a synthetic study and write a bundle.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        participants: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyze a bundle and write its tables.
    Analyze {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_enum)]
        experiment: Option<ExperimentArg>,
        /// Defaults to `{bundle}/analysis`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        ri_draws: Option<usize>,
    },
    /// Simulated power of the treatment effect test.
    Power {
        #[arg(long)]
        effect: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        sims: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "lmm")]
        model: ModelArg,
    },
    /// Serve the extension protocol over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, env = ENV_STORE)]
        store: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the analysis of a bundle.
    Report {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
    },
}

fn load_config(path: Option<&Path>) -> Result<SimConfig> {
    match path {
        Some(p) => {
            let src = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(SimConfig::from_toml(&src)?)
        }
        None => Ok(SimConfig::default()),
    }
}

fn backend() -> Arc<dyn ScoringBackend> {
    match RemoteInferenceClient::from_env() {
        Some(remote) => Arc::new(remote),
        None => {
            tracing::info!("no remote scorer configured, using the lexicon oracle");
            Arc::new(LexiconOracle::bundled())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Screen { posts } => {
            let posts: Vec<Post> = read_jsonl(&posts)?;
            let rt = tokio::runtime::Runtime::new()?;
            let fraction = rt.block_on(political_fraction(&posts, backend().as_ref()))?;
            println!("qualified: {} ({fraction:.3})", qualifies(fraction));
        }
        Command::Simulate { config, seed, participants, out } => {
            let mut c = load_config(config.as_deref())?;
            if let Some(s) = seed {
                c.master_seed = s;
            }
            if let Some(n) = participants {
                c = c.with_participants(n);
            }
            let data = run_study(&c)?;
            let m = write_bundle(&data, &out)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Analyze { bundle, experiment, out, ri_draws } => {
            let data = read_bundle(&bundle)?;
            let out = out.unwrap_or_else(|| bundle.join("analysis"));
            let exps: Vec<Experiment> = match experiment {
                Some(e) => vec![e.into()],
                None => experiments_present(&data).into_iter().collect(),
            };
            if exps.is_empty() {
                bail!("bundle has no enrolled participants");
            }
            for e in exps {
                let mut opts = AnalysisOptions::new(e);
                if let Some(d) = ri_draws {
                    opts.ri_draws = d;
                }
                let report = analyze(&data, &opts)?;
                for f in report.write_tables(&out)? {
                    println!("{}", out.join(f).display());
                }
            }
        }
        Command::Power { effect, n, sims, seed, model } => {
            let mut c = PowerConfig::pilot(effect, n);
            c.n_sims = sims;
            c.seed = seed;
            c.model = match model {
                ModelArg::Lmm => PowerModel::Lmm,
                ModelArg::Ols => PowerModel::Ols,
            };
            let est = power_simulation(&c)?;
            println!("{}", serde_json::to_string_pretty(&est)?);
        }
        Command::Serve { addr, store, seed } => {
            let mut config = ServiceConfig::new(store);
            config.study = StudyConfig { master_seed: seed, ..StudyConfig::default() };
            let state = AppState::open(config, backend())?;
            tokio::runtime::Runtime::new()?.block_on(serve(&addr, state))?;
        }
        Command::Report { bundle, format } => {
            let data = read_bundle(&bundle)?;
            for e in experiments_present(&data) {
                let report = analyze(&data, &AnalysisOptions::new(e))?;
                match format {
                    Format::Md => println!("{}", report.to_markdown()),
                    Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
                    Format::Csv => {
                        for (name, bytes) in report.tables() {
                            if name.ends_with(".csv") {
                                println!("# {name}\n{}", String::from_utf8_lossy(&bytes));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().skip(1).map(ToString::to_string).collect();
            eprintln!("{}", serde_json::json!({ "error": e.to_string(), "causes": chain }));
            ExitCode::FAILURE
        }
    }
}
