use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use countsel::cli::{cmd_gen, cmd_path, cmd_run, RunConfig};
use countsel::synth::SynthSpec;
use countsel::{Error, Result};

#[derive(Parser)]
#[command(name = "countsel", version, about = "Sparse Poisson regression with nested cross-validation")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Override the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl Overrides {
    fn apply(self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(o) = self.output_dir {
            cfg.output_dir = o;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Nested cross-validation; writes report.json, metrics.csv, predictions.csv.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Synthetic dataset; writes data.csv, truth.json, run.toml.
    Gen {
        /// TOML generator spec. Without it the built-in demo is used.
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "synth")]
        output_dir: PathBuf,
    },
    /// One full-data lasso path; writes path.csv.
    Path {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn load_config(path: &PathBuf, overrides: Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: Args) -> Result<()> {
    match args.command {
        Command::Run { config, overrides } => {
            let cfg = load_config(&config, overrides)?;
            let (report, out) = cmd_run(&cfg)?;
            println!("{:<22} {:>12} {:>12} {:>8}", "method", "deviance", "w.deviance", "Pa(%)");
            for m in report.metric_rows() {
                println!(
                    "{:<22} {:>12.4} {:>12.4} {:>8.2}",
                    m.method, m.deviance, m.weighted_deviance, m.predictive_power
                );
            }
            eprintln!("wrote {}", out.report.display());
        }
        Command::Gen {
            spec,
            seed,
            output_dir,
        } => {
            let mut s = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => SynthSpec::demo(0),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let (d, truth, out) = cmd_gen(&s, &output_dir)?;
            println!("{} rows, support: {}", d.n_rows(), truth.support.join(", "));
            eprintln!("wrote {}", out.data.display());
        }
        Command::Path { config, overrides } => {
            let cfg = load_config(&config, overrides)?;
            let (rows, out) = cmd_path(&cfg)?;
            println!("{} lambdas", rows.len());
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
