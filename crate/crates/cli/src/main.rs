use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use groundaware_cli::commands::{cmd_eval, cmd_filter_audit, cmd_postopt, cmd_priors, cmd_stats, cmd_synth, STATS_FILE};
use groundaware_cli::{with_jobs, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "groundaware", version, about = "Ground-aware monocular 3D detection toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset root holding `calib/` and `label_2/`.
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    /// File listing frame IDs, one per line.
    #[arg(long, global = true)]
    split: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override any configuration key, e.g. `--set hill.step_alpha=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-anchor depth and orientation statistics over the split.
    Stats,
    /// Report how many anchors the ground filter keeps.
    FilterAudit {
        /// Statistics file; defaults to `<out>/anchor_stats.txt`.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Height tolerance in meters, or `inf`.
        #[arg(long)]
        tolerance: Option<String>,
    },
    /// Write per-frame ground disparity priors.
    Priors,
    /// Refine predicted observation angles (and optionally depth).
    Postopt {
        #[arg(long)]
        predictions: PathBuf,
        /// `angle` or `angle-depth`.
        #[arg(long)]
        variables: Option<String>,
    },
    /// Average precision of predictions against ground truth.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        /// Ground-truth label directory; defaults to `<data-root>/label_2`.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Comma-separated classes, e.g. `Car,Pedestrian`.
        #[arg(long)]
        classes: Option<String>,
    },
    /// Generate a synthetic dataset in the output directory.
    Synth {
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn build_config(g: &Global) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &g.data_root {
        cfg.data_root = p.clone();
    }
    if let Some(p) = &g.split {
        cfg.split = Some(p.clone());
    }
    if let Some(p) = &g.out {
        cfg.out = p.clone();
    }
    if g.jobs.is_some() {
        cfg.jobs = g.jobs;
    }
    for kv in &g.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Input(format!("--set expects KEY=VALUE, got {kv}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = build_config(&cli.global)?;
    match cli.command {
        Command::Stats => {
            let summary = with_jobs(cfg.jobs, || cmd_stats(&cfg))??;
            println!("{} frames, statistics in {}", summary.frames, summary.path.display());
            print!("{}", summary.table());
        }
        Command::FilterAudit { stats, tolerance } => {
            if let Some(t) = tolerance {
                cfg.set("ground_tolerance", &t)?;
            }
            let stats = stats.unwrap_or_else(|| cfg.out.join(STATS_FILE));
            let audit = with_jobs(cfg.jobs, || cmd_filter_audit(&cfg, &stats))??;
            print!("{}", audit.report());
        }
        Command::Priors => {
            let n = with_jobs(cfg.jobs, || cmd_priors(&cfg))??;
            println!("{n} prior maps written to {}", cfg.out.join("priors").display());
        }
        Command::Postopt { predictions, variables } => {
            if let Some(v) = variables {
                cfg.set("hill.variables", &v)?;
            }
            let s = with_jobs(cfg.jobs, || cmd_postopt(&cfg, &predictions))??;
            println!(
                "{} frames, {} detections, mean IoU {:.4} -> {:.4}, {} frames skipped",
                s.frames,
                s.detections,
                s.mean_initial_iou,
                s.mean_final_iou,
                s.skipped_frames.len()
            );
        }
        Command::Eval { predictions, gt, classes } => {
            if let Some(c) = classes {
                cfg.set("eval.classes", &c)?;
            }
            let gt = gt.unwrap_or_else(|| cfg.label_dir());
            let report = with_jobs(cfg.jobs, || cmd_eval(&cfg, &predictions, &gt))??;
            print!("{}", report.to_table());
            let absent = report.absent();
            if !absent.is_empty() {
                return Err(CliError::Compute(format!("{} metrics undefined (no ground truth)", absent.len())));
            }
        }
        Command::Synth { frames, seed } => {
            if let Some(f) = frames {
                cfg.synth_frames = f;
            }
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            let n = with_jobs(cfg.jobs, || cmd_synth(&cfg))??;
            println!("{n} frames written to {}", cfg.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
