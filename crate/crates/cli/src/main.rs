use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use deepcat_cli::{
    cohort_to_dir, format_report, parse_selectors, read_bank, read_policy, resolve_bank, simulate_session,
    summarize_bank, train_to_dir, write_bank, Config,
};
use deepcat_core::mirt::generate_bank;
use deepcat_harness::Selector;

#[derive(Parser)]
#[command(
    name = "deepcat",
    version,
    about = "Bayesian multidimensional adaptive testing engine"
)]
struct Cli {
    /// JSON configuration file; every section is optional.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Item bank utilities.
    Bank {
        #[command(subcommand)]
        command: BankCommand,
    },
    /// Single simulated sessions.
    Session {
        #[command(subcommand)]
        command: SessionCommand,
    },
    /// Head-to-head cohort simulations.
    Cohort {
        #[command(subcommand)]
        command: CohortCommand,
    },
    /// Train a Q-learning selection policy.
    Train {
        #[command(flatten)]
        bank: BankArg,
        /// Output directory for checkpoints and the training log.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Compare a trained policy against the configured selectors.
    Evaluate {
        #[command(flatten)]
        bank: BankArg,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP service (CAT_BIND, CAT_DATA_DIR, CAT_SAMPLES).
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BankArg {
    /// Bank JSON file; generated from the `bank` config section when omitted.
    #[arg(long)]
    bank: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BankCommand {
    /// Generate a synthetic bank from the `bank` config section.
    Generate {
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Print a summary of a bank file.
    Inspect { path: PathBuf },
}

#[derive(Subcommand)]
enum SessionCommand {
    Run {
        #[command(flatten)]
        bank: BankArg,
        #[arg(long, default_value = "mi")]
        selector: String,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// True trait, comma separated; drawn from N(0, I) when omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        examinee_seed: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CohortCommand {
    Run {
        #[command(flatten)]
        bank: BankArg,
        /// Overrides the `selectors` config entry.
        #[arg(long, value_delimiter = ',')]
        selectors: Option<Vec<String>>,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn load_policy(path: Option<&PathBuf>) -> Result<Option<Arc<deepcat_rl::QNetwork>>> {
    path.map(|p| read_policy(p).map(Arc::new)).transpose()
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Bank { command } => match command {
            BankCommand::Generate { out } => {
                let bank = generate_bank(&cfg.bank)?;
                write_bank(&out, &bank)?;
                println!("{}", serde_json::to_string_pretty(&summarize_bank(&bank))?);
            }
            BankCommand::Inspect { path } => {
                let bank = read_bank(&path)?;
                println!("{}", serde_json::to_string_pretty(&summarize_bank(&bank))?);
            }
        },
        Command::Session {
            command:
                SessionCommand::Run {
                    bank,
                    selector,
                    policy,
                    theta,
                    examinee_seed,
                    out,
                },
        } => {
            let bank = resolve_bank(bank.bank.as_deref(), &cfg)?;
            let selector = Selector::parse(&selector, load_policy(policy.as_ref())?)?;
            let record = simulate_session(&bank, &selector, &cfg.session, theta, examinee_seed)?;
            let json = serde_json::to_string_pretty(&record)?;
            match out {
                Some(p) => std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{json}"),
            }
        }
        Command::Cohort {
            command:
                CohortCommand::Run {
                    bank,
                    selectors,
                    policy,
                    out,
                },
        } => {
            let bank = resolve_bank(bank.bank.as_deref(), &cfg)?;
            let ids = selectors.unwrap_or_else(|| cfg.selector_ids());
            let selectors = parse_selectors(&ids, load_policy(policy.as_ref())?)?;
            let report = cohort_to_dir(&bank, &selectors, &cfg.cohort, out.as_ref())?;
            print!("{}", format_report(&report));
        }
        Command::Train { bank, out } => {
            let bank = resolve_bank(bank.bank.as_deref(), &cfg)?;
            let outcome = train_to_dir(&bank, &cfg, &out, |row| {
                eprintln!(
                    "episode {:>7}  epsilon {:.3}  mean reward {:>7.3}  loss {:.5}",
                    row.episode, row.epsilon, row.mean_reward_500, row.loss
                )
            })?;
            if let Some(reason) = &outcome.diverged {
                eprintln!("training stopped early: {reason}");
            }
            println!(
                "best checkpoint: episode {} (mean reward {:?}); {} environment steps",
                outcome.best_episode, outcome.best_mean_reward, outcome.steps
            );
        }
        Command::Evaluate { bank, policy, out } => {
            let bank = resolve_bank(bank.bank.as_deref(), &cfg)?;
            let net = Arc::new(read_policy(&policy)?);
            let mut ids = cfg.selector_ids();
            ids.retain(|id| id != "qlearning");
            ids.insert(0, "qlearning".into());
            let selectors = parse_selectors(&ids, Some(net))?;
            let report = cohort_to_dir(&bank, &selectors, &cfg.cohort, out.as_ref())?;
            print!("{}", format_report(&report));
        }
        Command::Serve { bind, data_dir } => {
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
                )
                .init();
            let mut scfg = deepcat_service::ServiceConfig::from_env().map_err(anyhow::Error::msg)?;
            if let Some(b) = bind {
                scfg.bind = b.parse().with_context(|| format!("bind address {b}"))?;
            }
            if let Some(d) = data_dir {
                scfg.data_dir = d;
            }
            tokio::runtime::Runtime::new()?.block_on(deepcat_service::serve(scfg))?;
        }
    }
    Ok(())
}
