use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nmtprobe::diagnostics::{gradcheck_suite, COMPONENTS};
use nmtprobe::evalreport::{pct, render_matrix};
use nmtprobe::pipeline::{to_json, Overrides, RunConfig, Workspace};
use nmtprobe::probe::ProbeKind;
use nmtprobe::repr::{Combiner, RepScheme};
use nmtprobe::seq2seq::Profile;
use nmtprobe::{Error, Result};

/// Train translation encoders, dump sentence representations and probe them for NLI.
#[derive(Parser)]
#[command(name = "nmtprobe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `out` next to the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["concat_last", "maxpool"])]
    scheme: Option<String>,
    #[arg(long, value_parser = ["concat", "infersent"])]
    combiner: Option<String>,
    #[arg(long, value_parser = ["linear", "mlp"])]
    probe: Option<String>,
    #[arg(long, value_parser = ["desk", "paper"])]
    profile: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the named encoders (all when none given).
    TrainNmt {
        #[command(flatten)]
        common: Common,
        #[arg(long = "encoder")]
        encoders: Vec<String>,
    },
    /// Write context and hypothesis dumps for every split of a dataset.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        encoder: String,
        #[arg(long)]
        dataset: String,
    },
    TrainProbe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        encoder: String,
        #[arg(long)]
        dataset: String,
    },
    /// Test the probe trained on `--train` against the test split of `--test`.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        encoder: String,
        #[arg(long)]
        train: String,
        #[arg(long)]
        test: String,
    },
    /// Run the full encoder × dataset matrix and write report.json / report.txt.
    Matrix {
        #[command(flatten)]
        common: Common,
    },
    /// Majority baselines per split and attribute.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: String,
    },
    /// Finite-difference check of every differentiable component.
    Gradcheck {
        /// First of the ten seeds.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Break one component's gradient on purpose.
        #[arg(long, hide = true, value_parser = COMPONENTS)]
        corrupt: Option<String>,
    },
}

fn overrides(c: &Common) -> Result<Overrides> {
    Ok(Overrides {
        seed: c.seed,
        out: c.out.clone(),
        scheme: c.scheme.as_deref().map(str::parse::<RepScheme>).transpose()?,
        combiner: c.combiner.as_deref().map(str::parse::<Combiner>).transpose()?,
        probe: c.probe.as_deref().map(str::parse::<ProbeKind>).transpose()?,
        profile: c.profile.as_deref().map(str::parse::<Profile>).transpose()?,
    })
}

fn workspace(c: &Common) -> Result<Workspace> {
    Ok(Workspace::new(RunConfig::load(&c.config, &overrides(c)?)?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainNmt { common, encoders } => {
            print!("{}", to_json(&workspace(&common)?.cmd_train_nmt(&encoders)?));
        }
        Command::Extract { common, encoder, dataset } => {
            print!("{}", to_json(&workspace(&common)?.cmd_extract(&encoder, &dataset)?));
        }
        Command::TrainProbe { common, encoder, dataset } => {
            print!("{}", to_json(&workspace(&common)?.cmd_train_probe(&encoder, &dataset)?));
        }
        Command::Evaluate { common, encoder, train, test } => {
            let r = workspace(&common)?.cmd_evaluate(&encoder, &train, &test)?;
            print!("{}", to_json(&r));
            eprintln!("accuracy {} (majority {})", pct(r.accuracy()), pct(r.majority_baseline()));
        }
        Command::Matrix { common } => {
            let mut ws = workspace(&common)?;
            let report = ws.cmd_matrix()?;
            if let Some(m) = &report.matrix {
                print!("{}", render_matrix(m));
            }
            log::info!("cache: {} hits, {} misses", ws.stats.hits, ws.stats.misses);
            eprintln!("report written to {}", ws.out().join("report.json").display());
        }
        Command::Baseline { common, dataset } => {
            print!("{}", to_json(&workspace(&common)?.cmd_baseline(&dataset)?));
        }
        Command::Gradcheck { seed, seeds, corrupt } => {
            let seeds: Vec<u64> = (seed..seed + seeds.max(1)).collect();
            let suite = gradcheck_suite(&seeds, corrupt.as_deref())?;
            print!("{}", suite.render());
            if !suite.passed() {
                return Err(Error::Check(format!(
                    "above tolerance {:e}: {}",
                    suite.tolerance,
                    suite.failures().join(", ")
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
