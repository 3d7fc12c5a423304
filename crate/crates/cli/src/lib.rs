//! `skillab` command-line driver.
//!
//! Exit codes: 0 success, 1 failed check or ablation variant, 2 bad
//! configuration, checkpoint or arguments.

pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use skillab::checkpoint::{resolve_checkpoint, Checkpoint};
use skillab::config::RunConfig;
use skillab::eval::{self, AblationOptions, Suite};
use skillab::nets::{standard_suite, GradCheckReport};
use skillab::trainer::{self, Trainer};

/// Environment variable naming the root directory for new runs.
pub const RUN_ROOT_ENV: &str = "SKILLAB_RUN_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "skillab", version, about = "Multi-discriminator skill discovery on a toy quadruped")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one run.
    Train(TrainArgs),
    /// Roll out every skill of a checkpoint and score state coverage.
    Eval(EvalArgs),
    /// Train and compare the variants of an ablation suite.
    Ablation(AblationArgs),
    /// Finite-difference checks of the orthogonalisation and expert mixture.
    Gradcheck(GradcheckArgs),
    /// Render SVG plots from a run or ablation directory.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML run config; omitted means preset defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `full` or `desk-scale`; overrides the file's preset.
    #[arg(long)]
    pub preset: Option<String>,
    /// Dotted-path override such as `training.iterations=10`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> skillab::Result<RunConfig> {
        let mut overrides = Vec::new();
        if let Some(p) = &self.preset {
            overrides.push(format!("preset=\"{p}\""));
        }
        overrides.extend(self.overrides.iter().cloned());
        match &self.config {
            Some(path) => RunConfig::load(path, &overrides),
            None => RunConfig::from_toml_str("", &overrides),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory; defaults to `$SKILLAB_RUN_ROOT/<name>`.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Run name under the run root; defaults to architecture, seed and config hash.
    #[arg(long)]
    pub name: Option<String>,
    /// Print a progress line every this many iterations (0 = silent).
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file, or a run directory (newest checkpoint is used).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Rollout length per skill in control steps.
    #[arg(long)]
    pub duration: Option<usize>,
    /// Score every motion channel instead of velocities and gravity.
    #[arg(long)]
    pub all_channels: bool,
    /// Config the checkpoint must agree with.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to `eval_iter_NNNNNN` beside the checkpoints.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    /// `discriminator` or `policy`.
    #[arg(long)]
    pub suite: Suite,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Subset of the suite's variants, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Store of finished runs shared between ablations; defaults to `<out>/runs`.
    #[arg(long)]
    pub run_store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Negates every analytic gradient; the checks must then fail.
    #[arg(long, hide = true)]
    pub inject_sign_flip: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Run directory (metrics.jsonl) or ablation directory (CSV outputs).
    pub dir: PathBuf,
    /// Where to write the SVGs; defaults to `<dir>/plots`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure together with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn check(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: message.into(),
        }
    }
}

impl From<skillab::Error> for Failure {
    fn from(e: skillab::Error) -> Self {
        let code = if e.is_config() { EXIT_CONFIG } else { EXIT_FAILURE };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablation(a) => cmd_ablation(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Plot(a) => cmd_plot(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Directory a `train` invocation writes to.
pub fn train_run_dir(args: &TrainArgs, cfg: &RunConfig) -> skillab::Result<PathBuf> {
    if let Some(d) = &args.run_dir {
        return Ok(d.clone());
    }
    let name = match &args.name {
        Some(n) => n.clone(),
        None => format!(
            "{}-seed{}-{}",
            cfg.policy.architecture.name(),
            cfg.training.seed,
            eval::config_hash(cfg)?
        ),
    };
    Ok(run_root().join(name))
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), Failure> {
    let cfg = args.config.resolve()?;
    let dir = train_run_dir(args, &cfg)?;
    let total = cfg.training.iterations;
    eprintln!("training {} iterations into {}", total, dir.display());
    let every = args.log_every;
    let out = trainer::train_with(Trainer::new(cfg)?, &dir, |m| {
        if every > 0 && (m.iteration % every == 0 || m.iteration == total) {
            let acc: Vec<String> = m.disc_accuracy.iter().map(|a| format!("{a:.3}")).collect();
            eprintln!(
                "iter {:>6}/{total}  r_skill {:+.4}  r_reg {:+.4}  acc [{}]  kl {:.4}",
                m.iteration,
                m.mean_skill_reward,
                m.mean_reg_reward,
                acc.join(" "),
                m.approx_kl
            );
        }
    })?;
    println!("{}", out.final_checkpoint.display());
    Ok(())
}

/// Rejects a checkpoint whose networks or environment differ from `cfg`.
pub fn check_compatible(ckpt: &Checkpoint, cfg: &RunConfig) -> Result<(), Failure> {
    let c = &ckpt.config;
    let mut diffs = Vec::new();
    if c.env != cfg.env {
        diffs.push("env");
    }
    if c.skills != cfg.skills {
        diffs.push("skills");
    }
    if c.policy_spec() != cfg.policy_spec() {
        diffs.push("policy");
    }
    if c.value_spec() != cfg.value_spec() {
        diffs.push("value");
    }
    if c.discriminator.assignment != cfg.discriminator.assignment || c.discriminator.hidden != cfg.discriminator.hidden {
        diffs.push("discriminator");
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Failure::config(format!(
            "checkpoint does not match the config in section(s): {}",
            diffs.join(", ")
        )))
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), Failure> {
    let path = resolve_checkpoint(&args.checkpoint)?;
    let ckpt = Checkpoint::load(&path)?;
    if let Some(cfg_path) = &args.config {
        check_compatible(&ckpt, &RunConfig::load(cfg_path, &[])?)?;
    }
    ckpt.env()?;
    let bins = args.bins.unwrap_or(ckpt.config.eval.bins);
    let duration = args.duration.unwrap_or(ckpt.config.eval.duration_steps);
    let all = args.all_channels || ckpt.config.eval.all_channels;
    let out = match &args.out {
        Some(o) => o.clone(),
        None => {
            let base = path.parent().and_then(Path::parent).unwrap_or(Path::new("."));
            base.join(format!("eval_iter_{:06}", ckpt.iteration))
        }
    };
    let (trajs, report) = eval::evaluate_checkpoint(&ckpt, bins, duration, all)?;
    std::fs::create_dir_all(&out).map_err(skillab::Error::from)?;
    eval::write_trajectories(&out.join("trajectories"), ckpt.config.env.layout()?, &trajs)?;
    std::fs::write(
        out.join("coverage.json"),
        serde_json::to_string_pretty(&report).map_err(skillab::Error::from)?,
    )
    .map_err(skillab::Error::from)?;
    let text = report.to_text();
    std::fs::write(out.join("coverage.txt"), &text).map_err(skillab::Error::from)?;
    print!("{text}");
    Ok(())
}

pub fn cmd_ablation(args: &AblationArgs) -> Result<(), Failure> {
    let mut cfg_args = args.config.clone();
    if cfg_args.config.is_none() && cfg_args.preset.is_none() {
        cfg_args.preset = Some("desk-scale".into());
    }
    let base = cfg_args.resolve()?;
    let mut opts = AblationOptions::new(&args.out, &base, args.seeds.clone());
    opts.variants = args.variants.clone();
    if let Some(store) = &args.run_store {
        opts.run_store = store.clone();
    }
    let report = eval::run_ablation(args.suite, &base, &opts)?;
    print!("{}", report.to_text());
    if let Err(e) = plot::plot_dir(&args.out, &args.out.join("plots")) {
        eprintln!("warning: plots not rendered: {e}");
    }
    if report.failed() {
        return Err(Failure::check("one or more variants failed; see report.txt"));
    }
    Ok(())
}

pub fn format_gradcheck(reports: &[GradCheckReport]) -> String {
    let mut s = format!("{:<26} {:>8} {:>14} {:>6}\n", "check", "params", "max_rel_error", "pass");
    for r in reports {
        s.push_str(&format!(
            "{:<26} {:>8} {:>14.3e} {:>6}\n",
            r.name,
            r.num_components,
            r.max_relative_error,
            if r.passed { "ok" } else { "FAIL" }
        ));
    }
    s
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(), Failure> {
    let reports = standard_suite(args.seed, args.inject_sign_flip)?;
    print!("{}", format_gradcheck(&reports));
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::check("gradient check failed"))
    }
}

pub fn cmd_plot(args: &PlotArgs) -> Result<(), Failure> {
    if !args.dir.is_dir() {
        return Err(Failure::config(format!("{} is not a directory", args.dir.display())));
    }
    let out = args.out.clone().unwrap_or_else(|| args.dir.join("plots"));
    let written = plot::plot_dir(&args.dir, &out).map_err(Failure::check)?;
    if written.is_empty() {
        return Err(Failure::config(format!(
            "nothing to plot in {} (expected metrics.jsonl, reward_curves.csv or scatter_seed*.csv)",
            args.dir.display()
        )));
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
