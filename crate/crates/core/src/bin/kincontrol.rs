use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kincontrol::config::{ControlChoice, RunConfig, PRESETS};
use kincontrol::experiment::{describe, run_experiment, synthesize_dp};
use kincontrol::Error;

#[derive(Parser)]
#[command(
    version,
    about = "Binary DP feedback deployed in a two-population Boltzmann particle scheme"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the feedback, run the particle scheme and write CSV outputs.
    Run(RunArgs),
    /// Solve the binary DP of a configuration and save the value grid.
    SynthesizeDp {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a configuration and print a summary.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// One of test1, test2, test2-noleaders, test3a, test3b.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Run without leader control.
    #[arg(long)]
    no_control: bool,
    /// Use full-size sample counts (10⁶ followers, 5×10⁵ leaders) and the subsampled control estimator.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::GridFormat { .. } => 2,
        Error::NonConvergence { .. } | Error::NoStabilizingSolution(_) => 3,
        Error::InfeasibleCounts { .. } | Error::EmptyFollowerSet | Error::EmptySampleSet => 4,
        Error::Persist { .. } | Error::Io(_) | Error::Csv(_) => 5,
    }
}

fn run(args: RunArgs) -> Result<(), Error> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(name), _) => RunConfig::preset(name)?,
        (None, Some(path)) => RunConfig::load(path)?,
        (None, None) => {
            return Err(Error::validation(
                "preset",
                format!("pass --preset ({}) or --config", PRESETS.join(", ")),
            ))
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(w) = args.workers {
        cfg.output.workers = w;
    }
    if args.no_control {
        cfg.control = ControlChoice::None;
    }
    if args.paper_scale {
        cfg.full_scale();
    }
    if let Some(out) = args.out {
        cfg.output.dir = out;
    }
    if cfg.output.cache_dir.is_none() {
        cfg.output.cache_dir = Some(cfg.output.dir.join("dp-cache"));
    }
    cfg.validate()?;
    let out = run_experiment(&cfg)?;
    if let Some(dp) = &out.dp {
        eprintln!(
            "feedback: {:?} ({}), residual {:.3e}, {:.1}s",
            dp.method, dp.source, dp.residual, dp.seconds
        );
    }
    if let Some(last) = out.record.final_snapshot() {
        println!(
            "t = {:.4}: mean_F = {:.6}, mean_L = {:.6}, cost = {:.6}",
            last.t, last.mean_f, last.mean_l, last.cost_accum
        );
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::SynthesizeDp { config, out } => RunConfig::load(&config).and_then(|cfg| {
            let s = synthesize_dp(&cfg, &out)?;
            println!(
                "wrote {} ({:?}, {} iterations, residual {:.3e}, {:.1}s)",
                out.display(),
                s.method,
                s.iterations,
                s.residual,
                s.seconds
            );
            Ok(())
        }),
        Command::Validate { config } => RunConfig::load(&config).map(|cfg| {
            describe(&cfg, std::io::stdout()).ok();
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
