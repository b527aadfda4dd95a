use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use driftbound_cli::config::{DataSource, ExperimentConfig, SynthSpec, ValidationScale};
use driftbound_cli::{commands, CliError, CliResult};

#[derive(Parser)]
#[command(name = "driftbound", version, about = "Convergence bounds for the hierarchical normal Gibbs sampler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config (a run manifest also works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k_max: Option<u64>,
    /// Worker threads for the parallel parts (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Full,
    Quick,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic observations satisfying the data assumption.
    SynthData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        center: Option<f64>,
    },
    /// Bound terms for k = 1..=k_max.
    BoundCurve {
        #[command(flatten)]
        common: Common,
    },
    /// Constants and mixing certificate across sample sizes.
    SweepN {
        #[command(flatten)]
        common: Common,
        /// Comma-separated sample sizes; overrides the config.
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
    },
    /// Ensemble traces and empirical TV against the bound.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the acceptance suite; exit code 3 if any criterion fails.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        scale: Option<Scale>,
        /// Comma-separated criterion ids (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<u32>>,
    },
}

fn load(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(k) = common.k_max {
        cfg.k_max = k;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let common = match &cli.command {
        Command::SynthData { common, .. }
        | Command::BoundCurve { common }
        | Command::SweepN { common, .. }
        | Command::Simulate { common }
        | Command::Validate { common, .. } => common,
    };
    if let Some(t) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let mut cfg = load(common)?;
    let manifest = match cli.command {
        Command::SynthData { n, center, .. } => {
            let base = match &cfg.data {
                DataSource::Synth(s) => s.clone(),
                DataSource::File(_) => SynthSpec {
                    n: 100,
                    center: 2.0,
                    exact_center: true,
                },
            };
            cfg.data = DataSource::Synth(SynthSpec {
                n: n.unwrap_or(base.n),
                center: center.unwrap_or(base.center),
                ..base
            });
            commands::synth_data(&cfg, None)?
        }
        Command::BoundCurve { .. } => commands::bound_curve(&cfg, None)?,
        Command::SweepN { n_list, .. } => {
            if let Some(l) = n_list {
                cfg.n_list = l;
            }
            commands::sweep_n(&cfg, None)?
        }
        Command::Simulate { .. } => commands::simulate(&cfg, None)?,
        Command::Validate { scale, only, .. } => {
            if let Some(s) = scale {
                cfg.validation_scale = match s {
                    Scale::Full => ValidationScale::Full,
                    Scale::Quick => ValidationScale::Quick,
                };
            }
            let (manifest, report) = commands::validate(&cfg, None, only.as_deref())?;
            for c in &report.criteria {
                println!("{}", c.line());
            }
            if !report.all_pass {
                let failed: Vec<String> =
                    report.criteria.iter().filter(|c| !c.pass).map(|c| c.id.to_string()).collect();
                eprintln!("wrote {}", cfg.output_dir.join("validation_report.json").display());
                return Err(CliError::Validation(format!("criteria {} failed", failed.join(", "))));
            }
            manifest
        }
    };
    for a in &manifest.artifacts {
        println!("{}  {}", a.sha256, cfg.output_dir.join(&a.path).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("driftbound: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
