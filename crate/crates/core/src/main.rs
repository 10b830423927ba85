use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use h2oflow::commands;
use h2oflow::config::RunConfig;
use h2oflow::Error;

/// Diffusion over human-to-object flows and the affordances they imply.
#[derive(Parser, Debug)]
#[command(name = "h2oflow", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set tau_contact=20`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed; overrides `seed` from the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset of interaction samples
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the denoiser on a generated dataset
    Train {
        /// Dataset directory written by `gen-data`
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to write
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to continue from
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Loss log, one `step total simple vlb` line per logged step
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Sample human interactions for the object stored in a sample file
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sample file whose object is used
        #[arg(long)]
        object: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the affordance bundle for an object
    Affordance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        object: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted affordances against generator ground truth
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate at each configured object occlusion level
    OcclusionSweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit body pose and shape to the human points of a sample file
    FitBody {
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a planar arm to the predicted human affordances
    CrossEmbody {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        object: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write colorized point clouds for an affordance bundle
    ExportViz {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        object: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> h2oflow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            commands::require_input(p)?;
            RunConfig::from_file(p)?
        }
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.apply_one(k.trim(), v.trim(), 0)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.finalize().map_err(|e| match e {
        Error::InvalidConfig(m) => Error::Usage(m),
        other => other,
    })
}

fn inputs(cmd: &Command) -> Vec<&Path> {
    match cmd {
        Command::GenData { .. } => vec![],
        Command::Train { data, resume, .. } => std::iter::once(data.as_path()).chain(resume.as_deref()).collect(),
        Command::Sample { checkpoint, object, .. }
        | Command::Affordance { checkpoint, object, .. }
        | Command::CrossEmbody { checkpoint, object, .. } => vec![checkpoint, object],
        Command::Eval { checkpoint, .. } | Command::OcclusionSweep { checkpoint, .. } => vec![checkpoint],
        Command::FitBody { targets, .. } => vec![targets],
        Command::ExportViz { bundle, object, .. } => vec![bundle, object],
    }
}

fn run(cli: &Cli) -> h2oflow::Result<String> {
    let cfg = load_config(&cli.common)?;
    for p in inputs(&cli.command) {
        commands::require_input(p)?;
    }
    match &cli.command {
        Command::GenData { out } => commands::gen_data(&cfg, out),
        Command::Train { data, out, resume, log } => {
            commands::train(&cfg, data, out, resume.as_deref(), log.as_deref())
        }
        Command::Sample { checkpoint, object, out } => commands::sample(&cfg, checkpoint, object, out),
        Command::Affordance { checkpoint, object, out } => commands::affordance(&cfg, checkpoint, object, out),
        Command::Eval { checkpoint, out } => commands::eval(&cfg, checkpoint, out),
        Command::OcclusionSweep { checkpoint, out } => commands::occlusion_sweep(&cfg, checkpoint, out),
        Command::FitBody { targets, out } => commands::fit_body(&cfg, targets, out),
        Command::CrossEmbody { checkpoint, object, out } => commands::cross_embody(&cfg, checkpoint, object, out),
        Command::ExportViz { bundle, object, out } => commands::export_viz(&cfg, bundle, object, out),
    }
}

fn set_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("H2O_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| format!("H2O_THREADS must be a number, got `{v}`"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let keys = format!("Configuration keys (file or --set):\n  {}", RunConfig::KEYS.join(", "));
    let parsed = Cli::command()
        .after_help(keys)
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = set_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e @ (Error::Usage(_) | Error::Config { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
