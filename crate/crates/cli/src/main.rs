use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use styleprior_cli::commands;
use styleprior_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "styleprior", version, about = "Invert a style-based generator and use it as an image prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic sprite dataset to PNGs plus a factor manifest
    GenData(Common),
    /// Train a generator with latent optimization on a PNG dataset
    Train(Common),
    /// Recover latent codes for one image
    Invert(Common),
    /// Fill a masked region using the generator as prior
    Inpaint(Common),
    /// Super-resolve a low-resolution image using the generator as prior
    Sr(Common),
    /// Transfer the motion of a source video onto a target identity
    Reanimate(Common),
    /// Strategy, inpainting and super-resolution tables on a fixed suite
    Eval(Common),
}

#[derive(Args)]
struct Common {
    /// key=value file applied before any flag
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// noise, global or per-layer
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    iterations: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    mask_seed: Option<u64>,
    #[arg(long)]
    sr_factor: Option<usize>,
    /// Smoothing window in frames (odd)
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    pose_scale: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Directory of source frames
    #[arg(long)]
    source: Option<PathBuf>,
    /// Target still, or a directory of stills
    #[arg(long)]
    target: Option<PathBuf>,
    /// Dataset directory written by gen-data
    #[arg(long)]
    data: Option<PathBuf>,
    /// Any config key, e.g. --set epochs=20; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>, String> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| format!("--set expects KEY=VALUE, got `{s}`"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let named = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("checkpoint", path(&self.checkpoint)),
            ("out_dir", path(&self.out_dir)),
            ("strategy", self.strategy.clone()),
            ("iterations", self.iterations.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("mask_seed", self.mask_seed.map(|v| v.to_string())),
            ("sr_factor", self.sr_factor.map(|v| v.to_string())),
            ("window", self.window.map(|v| v.to_string())),
            ("pose_scale", self.pose_scale.map(|v| v.to_string())),
            ("jobs", self.jobs.map(|v| v.to_string())),
            ("input", path(&self.input)),
            ("mask", path(&self.mask)),
            ("source", path(&self.source)),
            ("target", path(&self.target)),
            ("data", path(&self.data)),
        ];
        out.extend(named.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        Ok(out)
    }

    fn resolve(&self) -> anyhow::Result<Result<RunConfig, String>> {
        let text = match &self.config {
            Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?),
            None => None,
        };
        let overrides = match self.overrides() {
            Ok(o) => o,
            Err(e) => return Ok(Err(e)),
        };
        Ok(RunConfig::build(text.as_deref(), &overrides).map_err(|e| e.to_string()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&RunConfig) -> anyhow::Result<()>) = match &cli.command {
        Command::GenData(c) => (c, commands::gen_data),
        Command::Train(c) => (c, commands::train),
        Command::Invert(c) => (c, commands::invert_cmd),
        Command::Inpaint(c) => (c, commands::inpaint_cmd),
        Command::Sr(c) => (c, commands::sr_cmd),
        Command::Reanimate(c) => (c, commands::reanimate_cmd),
        Command::Eval(c) => (c, commands::eval_cmd),
    };
    let cfg = match common.resolve() {
        Ok(Ok(cfg)) => cfg,
        Ok(Err(usage)) => {
            eprintln!("error: {usage}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    match run(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
