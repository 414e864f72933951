use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use tunnelscope::config::{parse_config, ExperimentKind};
use tunnelscope::runner::{resolve_out_dir, run};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Tunnel,
    Ood,
    Stitch,
    Develop,
    Sweep,
    Shorter,
    Metrics,
}

impl From<Kind> for ExperimentKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Tunnel => Self::Tunnel,
            Kind::Ood => Self::Ood,
            Kind::Stitch => Self::Stitch,
            Kind::Develop => Self::Develop,
            Kind::Sweep => Self::Sweep,
            Kind::Shorter => Self::Shorter,
            Kind::Metrics => Self::Metrics,
        }
    }
}

/// Train small MLPs and measure where their representations stop improving.
#[derive(Debug, Parser)]
#[command(name = "tunnelscope", version)]
struct Cli {
    /// Experiment to run.
    #[arg(value_enum)]
    kind: Kind,

    /// JSON config file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Dotted override such as `train.learning_rate=0.1`; repeatable, applied
    /// after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory (falls back to the config's `out`, then
    /// TUNNELSCOPE_OUT).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Base seed; same as `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads for per-layer and per-cell parallelism.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tunnelscope: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: &Cli) -> tunnelscope::Result<()> {
    tunnelscope::par::init_global_threads(cli.threads).map_err(tunnelscope::Error::Config)?;
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = parse_config(Some(cli.kind.into()), cli.config.as_deref(), &overrides)?;
    let env = std::env::var("TUNNELSCOPE_OUT").ok();
    let out = resolve_out_dir(cli.out.as_deref(), &cfg, env.as_deref())?;
    let summary = run(&cfg, &out)?;
    println!("{}", summary.summary);
    println!("wrote {} files to {}", summary.manifest.len(), summary.out_dir.display());
    Ok(())
}
