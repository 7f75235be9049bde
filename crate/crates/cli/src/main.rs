use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tpfv::pipeline::{Pipeline, RunConfig, StageSummary};
use tpfv::synthetic::{write_fixture, FixtureSpec};
use tpfv::Error;

#[derive(Parser)]
#[command(name = "tpfv", version, about = "Trajectory-pooled Fisher Vector pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Recompute outputs that already exist.
    #[arg(long)]
    force: bool,
    /// Replace every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Pool trajectory descriptors for every video.
    Pool(RunArgs),
    /// Fit the PCA projection and GMM vocabulary on the whole manifest.
    Fit(RunArgs),
    /// Encode every video as Fisher Vectors.
    Encode(RunArgs),
    /// Train linear classifiers on all encoded videos.
    Train(RunArgs),
    /// Run the per-fold pipeline and write the evaluation report.
    Evaluate(RunArgs),
    /// Run the built-in invariant checks.
    Selftest,
    /// Write a synthetic dataset with a matching config.json.
    GenerateFixture {
        #[arg(long)]
        out: PathBuf,
        /// Per-frame action-unit labels instead of classes.
        #[arg(long)]
        multilabel: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(args: &RunArgs) -> tpfv::Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        let cwd = std::env::current_dir().unwrap_or_default();
        cfg.output = Some(if out.is_absolute() { out.clone() } else { cwd.join(out) });
    }
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn print_summary(s: &StageSummary, out: &Path) {
    println!("{}: {} written, {} reused in {}", s.command, s.written, s.skipped, out.display());
}

fn run_stage(args: &RunArgs, stage: &str) -> tpfv::Result<()> {
    let cfg = load_config(args)?;
    let pipeline = Pipeline::new(cfg, args.force)?;
    let out = pipeline.output().to_path_buf();
    let work = || -> tpfv::Result<()> {
        match stage {
            "pool" => print_summary(&pipeline.pool()?, &out),
            "fit" => print_summary(&pipeline.fit()?, &out),
            "encode" => print_summary(&pipeline.encode()?, &out),
            "train" => print_summary(&pipeline.train()?, &out),
            _ => {
                let r = pipeline.evaluate()?;
                println!(
                    "evaluate: accuracy {:.4} ({}/{}) over {} folds",
                    r.aggregate.accuracy,
                    r.aggregate.correct,
                    r.aggregate.total,
                    r.folds.len()
                );
                if let Some(f1) = &r.f1 {
                    println!("evaluate: mean F1-segment {:.4}", f1.mean_f1);
                }
                if let Some(v) = &r.video_majority {
                    println!("evaluate: frame-majority video accuracy {:.4}", v.accuracy);
                }
                println!("report: {}", out.join("report").join("report.json").display());
            }
        }
        Ok(())
    };
    match args.workers {
        Some(0) => Err(Error::Config {
            field: "--workers".into(),
            message: "must be >= 1".into(),
        }),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config {
                field: "--workers".into(),
                message: e.to_string(),
            })?
            .install(work),
        None => work(),
    }
}

fn selftest() -> bool {
    let checks = tpfv::selftest::run();
    for c in &checks {
        if c.passed {
            println!("PASS {}", c.name);
        } else {
            println!("FAIL {}: {}", c.name, c.detail);
        }
    }
    checks.iter().all(|c| c.passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Pool(a) => run_stage(a, "pool"),
        Command::Fit(a) => run_stage(a, "fit"),
        Command::Encode(a) => run_stage(a, "encode"),
        Command::Train(a) => run_stage(a, "train"),
        Command::Evaluate(a) => run_stage(a, "evaluate"),
        Command::Selftest => {
            return if selftest() { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
        Command::GenerateFixture { out, multilabel, seed } => {
            let mut spec = if *multilabel { FixtureSpec::multilabel() } else { FixtureSpec::default() };
            if let Some(s) = seed {
                spec.seed = *s;
            }
            write_fixture(out, &spec).map(|f| println!("fixture: {}", f.config.display()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 1 })
        }
    }
}
