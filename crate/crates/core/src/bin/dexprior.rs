use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use dexprior::pipeline::{
    cmd_eval, cmd_finetune, cmd_pretrain, cmd_retarget, cmd_synth, cmd_validate, list_clips, Manifest, PipelineConfig, Split, SynthOptions,
};

#[derive(Parser)]
#[command(name = "dexprior", version, about = "Retarget human hand clips and train trajectory policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's paths.out)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Retarget clips into robot trajectories
    Retarget {
        #[command(flatten)]
        common: Common,
        /// Worker threads
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Seed (recorded for reproducibility; retargeting itself is deterministic)
        #[arg(long)]
        seed: u64,
        /// Clip files; defaults to every *.jsonl in the config's clip directory
        clips: Vec<PathBuf>,
    },
    /// Generate synthetic clips, demos and ground truth
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        tasks: usize,
        #[arg(long, default_value_t = 4)]
        clips: usize,
        #[arg(long, default_value_t = 5)]
        demos: usize,
        #[arg(long, default_value_t = 10)]
        test: usize,
        #[arg(long, default_value_t = 60)]
        frames: usize,
    },
    /// Train on the manifest's retargeted human demos
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Train on robot demos, starting from a pretrained checkpoint if given
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
    },
    /// Evaluate a checkpoint on one manifest split
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
    /// Check a config and optionally a manifest and a metrics file
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<(PipelineConfig, PathBuf)> {
    let cfg = PipelineConfig::load(&common.config)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.paths.out.clone());
    Ok((cfg, out))
}

fn manifest(path: &Path) -> Result<Manifest> {
    Manifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Retarget { common, jobs, seed, clips } => {
            let (cfg, out) = load(&common)?;
            let clips = if clips.is_empty() && cfg.paths.clips.is_dir() {
                list_clips(&cfg.paths.clips)?
            } else {
                clips
            };
            log::info!("retargeting {} clips (seed {seed}, {jobs} jobs)", clips.len());
            let r = cmd_retarget(&cfg, &clips, &out, jobs.max(1))?;
            println!("retarget: {} clips, {} ok, {} failed", r.total, r.succeeded, r.failed);
            for (class, n) in &r.failures {
                println!("  {class:?}: {n}");
            }
        }
        Command::Synth {
            seed,
            out,
            tasks,
            clips,
            demos,
            test,
            frames,
        } => {
            let opts = SynthOptions {
                tasks,
                clips_per_task: clips,
                demos_per_task: demos,
                test_per_task: test,
                frames,
            };
            let r = cmd_synth(seed, &opts, &out)?;
            println!("synth: {} clips, {} demos in {}", r.clips.len(), r.demos.len(), out.display());
        }
        Command::Pretrain { common, manifest: m, seed } => {
            let (cfg, out) = load(&common)?;
            let r = cmd_pretrain(&cfg, &manifest(&m)?, seed, &out)?;
            println!("pretrain: {} samples, final loss {:.6}, checkpoint {}", r.samples, r.losses.last().copied().unwrap_or(f64::NAN), r.checkpoint);
        }
        Command::Finetune {
            common,
            manifest: m,
            checkpoint,
            seed,
        } => {
            let (cfg, out) = load(&common)?;
            if checkpoint.is_none() {
                println!("finetune: no checkpoint given, training the robot-only baseline from scratch");
            }
            let r = cmd_finetune(&cfg, &manifest(&m)?, checkpoint.as_deref(), seed, &out)?;
            println!(
                "finetune ({}): {} samples, final loss {:.6}, checkpoint {}",
                r.init,
                r.samples,
                r.losses.last().copied().unwrap_or(f64::NAN),
                r.checkpoint
            );
        }
        Command::Eval {
            common,
            manifest: m,
            checkpoint,
            split,
        } => {
            let (_, out) = load(&common)?;
            let metrics = cmd_eval(&manifest(&m)?, &checkpoint, split, &out)?;
            println!("eval ({split:?}): {} samples, mean L1 {:.6}", metrics.overall.count, metrics.overall.mean_l1);
            for (task, mt) in &metrics.tasks {
                println!("  {task}: mean L1 {:.6} (wrist {:.6}, hand {:.6})", mt.mean_l1, mt.wrist_l1, mt.hand_l1);
            }
        }
        Command::Validate { config, manifest: m, metrics } => {
            let cfg = PipelineConfig::load(&config)?;
            let m = m.as_deref().map(manifest).transpose()?;
            cmd_validate(&cfg, m.as_ref(), metrics.as_deref())?;
            println!("ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
