//! Skill rollouts, per-dimension normalisation, the binned coverage metric
//! and the discriminator/policy ablation harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{checkpoint_path, Checkpoint};
use crate::config::RunConfig;
use crate::discriminator::{default_assignment, DiscriminatorAssignment};
use crate::env::ToyQuadruped;
use crate::error::{Error, Result};
use crate::layout::{Action, Channel, ChannelLayout};
use crate::nets::{Architecture, GaussianPolicy};
use crate::trainer::{self, read_metrics, IterationMetrics};

pub const DEFAULT_BINS: usize = 50;
/// 20 s at 50 Hz.
pub const DEFAULT_DURATION_STEPS: usize = 1000;
/// Iterations averaged for the final skill reward of a run.
pub const REWARD_WINDOW: usize = 20;

/// One skill's deterministic rollout. Row `t` is the state after step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub skill: usize,
    pub motion: Array2<f64>,
    /// Clipped actions actually applied.
    pub actions: Array2<f64>,
}

/// Runs every skill for `duration_steps` steps with the mean action. An
/// episode that tips over is reset and continued under the same skill.
pub fn rollout_policy(env: &ToyQuadruped, policy: &GaussianPolicy, num_skills: usize, duration_steps: usize) -> Result<Vec<Trajectory>> {
    let layout = env.layout();
    let (md, j) = (layout.motion_dim(), layout.joint_count());
    let in_dim = layout.policy_dim() + num_skills;
    if policy.spec().input_dim != in_dim || policy.spec().action_dim != j {
        return Err(Error::Config(format!(
            "policy expects input {} and {} actions; environment with {num_skills} skills needs {in_dim} and {j}",
            policy.spec().input_dim,
            policy.spec().action_dim
        )));
    }
    let mut states: Vec<_> = (0..num_skills).map(|k| env.reset(k as u64)).collect();
    let mut obs: Vec<_> = states.iter().map(|s| env.observe(s)).collect();
    let mut out: Vec<Trajectory> = (0..num_skills)
        .map(|k| Trajectory {
            skill: k,
            motion: Array2::zeros((duration_steps, md)),
            actions: Array2::zeros((duration_steps, j)),
        })
        .collect();
    let mut x = Array2::zeros((num_skills, in_dim));
    for t in 0..duration_steps {
        for (k, mut row) in x.rows_mut().into_iter().enumerate() {
            row.slice_mut(s![..md]).assign(&ndarray::aview1(obs[k].as_slice()));
            row.slice_mut(s![md..md + j]).assign(&ndarray::aview1(states[k].prev_action.as_slice()));
            row.slice_mut(s![md + j..]).fill(0.0);
            row[md + j + k] = 1.0;
        }
        let mean = policy.mean(x.view())?;
        for k in 0..num_skills {
            let action = Action::new(mean.row(k).to_vec());
            let step = env.step(&states[k], &action)?;
            out[k].motion.row_mut(t).assign(&ndarray::aview1(step.obs.as_slice()));
            out[k].actions.row_mut(t).assign(&ndarray::aview1(step.state.prev_action.as_slice()));
            if step.terminated {
                states[k] = env.reset(k as u64);
                obs[k] = env.observe(&states[k]);
            } else {
                // Truncation is a training-time limit; evaluation runs on.
                let mut s = step.state;
                s.step_count = 0;
                states[k] = s;
                obs[k] = step.obs;
            }
        }
    }
    Ok(out)
}

/// Rollouts of every skill of a checkpoint.
pub fn rollout_skills(ckpt: &Checkpoint, duration_steps: usize) -> Result<Vec<Trajectory>> {
    let env = ckpt.env()?;
    let policy = ckpt.policy()?;
    rollout_policy(&env, &policy, ckpt.config.skills.num_skills, duration_steps)
}

pub fn trajectory_header(layout: ChannelLayout) -> Vec<String> {
    let mut h = vec!["t".to_string(), "skill".to_string()];
    h.extend(layout.labels());
    h.extend((1..=layout.joint_count()).map(|i| format!("a_{i}")));
    h
}

pub fn write_trajectory_csv(path: &Path, layout: ChannelLayout, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trajectory_header(layout))?;
    for t in 0..traj.motion.nrows() {
        let mut rec = vec![t.to_string(), traj.skill.to_string()];
        rec.extend(traj.motion.row(t).iter().map(|v| v.to_string()));
        rec.extend(traj.actions.row(t).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `skill_XXX.csv` per trajectory and returns the paths.
pub fn write_trajectories(dir: &Path, layout: ChannelLayout, trajs: &[Trajectory]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    trajs
        .iter()
        .map(|t| {
            let p = dir.join(format!("skill_{:03}.csv", t.skill));
            write_trajectory_csv(&p, layout, t)?;
            Ok(p)
        })
        .collect()
}

/// Motion columns scored by coverage: `v`, `ω`, `g`, or every channel.
pub fn coverage_columns(layout: ChannelLayout, all_channels: bool) -> Vec<usize> {
    let channels: &[Channel] = if all_channels {
        &Channel::ALL
    } else {
        &[Channel::LinVel, Channel::AngVel, Channel::Gravity]
    };
    channels.iter().flat_map(|&c| layout.span(c)).collect()
}

/// Stacks the selected motion columns of all trajectories.
pub fn stack_columns(trajs: &[Trajectory], columns: &[usize]) -> Array2<f64> {
    let n: usize = trajs.iter().map(|t| t.motion.nrows()).sum();
    let mut out = Array2::zeros((n, columns.len()));
    let mut r = 0;
    for t in trajs {
        for row in t.motion.rows() {
            for (c, &col) in columns.iter().enumerate() {
                out[[r, c]] = row[col];
            }
            r += 1;
        }
    }
    out
}

/// Per-dimension min-max ranges fitted on pooled data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn fit(datasets: &[ArrayView2<f64>]) -> Result<Self> {
        let d = datasets
            .first()
            .ok_or_else(|| Error::Domain("no data to normalise".into()))?
            .ncols();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        let mut rows = 0;
        for data in datasets {
            if data.ncols() != d {
                return Err(Error::Layout("datasets differ in width".into()));
            }
            for row in data.rows() {
                for (c, &v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::Numeric(format!("non-finite value in column {c}")));
                    }
                    min[c] = min[c].min(v);
                    max[c] = max[c].max(v);
                }
                rows += 1;
            }
        }
        if rows == 0 {
            return Err(Error::Domain("no data to normalise".into()));
        }
        Ok(Self { min, max })
    }

    /// Maps each column to `[0, 1]`; constant columns map to 0.5.
    pub fn apply(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        if data.ncols() != self.min.len() {
            return Err(Error::Layout("data width differs from the fitted normaliser".into()));
        }
        let mut out = data.to_owned();
        for (c, mut col) in out.columns_mut().into_iter().enumerate() {
            let (lo, hi) = (self.min[c], self.max[c]);
            if hi > lo {
                col.mapv_inplace(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0));
            } else {
                col.fill(0.5);
            }
        }
        Ok(out)
    }
}

pub fn normalize_per_dimension(data: ArrayView2<f64>) -> Result<Array2<f64>> {
    Normalizer::fit(&[data])?.apply(data)
}

/// Fraction of occupied bins per dimension and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub labels: Vec<String>,
    pub ratios: Vec<f64>,
    pub mean: f64,
    pub bins: usize,
    pub samples: usize,
}

impl CoverageReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "coverage over {} samples, {} bins", self.samples, self.bins);
        let _ = writeln!(s, "{:<10} {:>8}", "dimension", "ratio");
        for (l, r) in self.labels.iter().zip(&self.ratios) {
            let _ = writeln!(s, "{l:<10} {r:>8.4}");
        }
        let _ = writeln!(s, "{:<10} {:>8.4}", "mean", self.mean);
        s
    }
}

/// Bin index of a value in `[0, 1]`; the right edge joins the last bin.
pub fn bin_index(x: f64, bins: usize) -> usize {
    ((x * bins as f64).floor() as usize).min(bins - 1)
}

/// Coverage of data already normalised to `[0, 1]`.
pub fn coverage(data: ArrayView2<f64>, bins: usize) -> Result<CoverageReport> {
    let labels = (1..=data.ncols()).map(|i| format!("dim_{i}")).collect();
    coverage_labeled(data, bins, labels)
}

pub fn coverage_labeled(data: ArrayView2<f64>, bins: usize, labels: Vec<String>) -> Result<CoverageReport> {
    if bins == 0 {
        return Err(Error::Domain("bin count must be positive".into()));
    }
    let (n, d) = data.dim();
    if n == 0 || d == 0 {
        return Err(Error::Domain("coverage of empty data".into()));
    }
    if labels.len() != d {
        return Err(Error::Layout("one label per dimension required".into()));
    }
    let mut ratios = Vec::with_capacity(d);
    for (c, col) in data.columns().into_iter().enumerate() {
        let mut occupied = vec![false; bins];
        for &x in col {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Domain(format!("value {x} in column {c} lies outside [0, 1]")));
            }
            occupied[bin_index(x, bins)] = true;
        }
        ratios.push(occupied.iter().filter(|&&o| o).count() as f64 / bins as f64);
    }
    let mean = ratios.iter().sum::<f64>() / d as f64;
    Ok(CoverageReport {
        labels,
        ratios,
        mean,
        bins,
        samples: n,
    })
}

/// Evaluation of one checkpoint normalised on its own data.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, bins: usize, duration_steps: usize, all_channels: bool) -> Result<(Vec<Trajectory>, CoverageReport)> {
    let trajs = rollout_skills(ckpt, duration_steps)?;
    let layout = ckpt.config.env.layout()?;
    let cols = coverage_columns(layout, all_channels);
    let data = stack_columns(&trajs, &cols);
    let normed = normalize_per_dimension(data.view())?;
    let labels = layout.labels();
    let report = coverage_labeled(normed.view(), bins, cols.iter().map(|&c| labels[c].clone()).collect())?;
    Ok((trajs, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Discriminator,
    Policy,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discriminator" => Ok(Suite::Discriminator),
            "policy" => Ok(Suite::Policy),
            other => Err(Error::Config(format!(
                "unknown ablation suite `{other}` (expected `discriminator` or `policy`)"
            ))),
        }
    }
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Discriminator => "discriminator",
            Suite::Policy => "policy",
        }
    }

    pub fn variants(self) -> &'static [&'static str] {
        match self {
            Suite::Discriminator => &["SD1", "SD2", "SD3", "MD"],
            Suite::Policy => &["MLP", "MoE", "OMoE"],
        }
    }
}

/// The base config with one variant applied.
pub fn variant_config(base: &RunConfig, suite: Suite, variant: &str) -> Result<RunConfig> {
    use Channel::*;
    let mut cfg = base.clone();
    match (suite, variant) {
        (Suite::Discriminator, "SD1") => {
            cfg.discriminator.assignment = DiscriminatorAssignment::single(&[LinVel, AngVel])?
        }
        (Suite::Discriminator, "SD2") => {
            cfg.discriminator.assignment =
                DiscriminatorAssignment::single(&[LinVel, AngVel, Gravity])?
        }
        (Suite::Discriminator, "SD3") => cfg.discriminator.assignment = DiscriminatorAssignment::single(&Channel::ALL)?,
        (Suite::Discriminator, "MD") => cfg.discriminator.assignment = default_assignment(base.env.layout()?),
        (Suite::Policy, "MLP") => cfg.policy.architecture = Architecture::Mlp,
        (Suite::Policy, "MoE") => cfg.policy.architecture = Architecture::Moe,
        (Suite::Policy, "OMoE") => cfg.policy.architecture = Architecture::Omoe,
        _ => {
            return Err(Error::Config(format!(
                "unknown variant `{variant}` for the {} suite",
                suite.name()
            )))
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone)]
pub struct AblationOptions {
    pub seeds: Vec<u64>,
    /// Subset of the suite's variants; empty means all.
    pub variants: Vec<String>,
    pub out_dir: PathBuf,
    /// Shared store of finished runs keyed by config hash; runs with an
    /// identical config are trained once.
    pub run_store: PathBuf,
    pub bins: usize,
    pub duration_steps: usize,
    pub all_channels: bool,
}

impl AblationOptions {
    pub fn new(out_dir: &Path, base: &RunConfig, seeds: Vec<u64>) -> Self {
        Self {
            seeds,
            variants: Vec::new(),
            out_dir: out_dir.to_path_buf(),
            run_store: out_dir.join("runs"),
            bins: base.eval.bins,
            duration_steps: base.eval.duration_steps,
            all_channels: base.eval.all_channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub coverage: Option<f64>,
    /// Mean skill reward over the last iterations.
    pub final_skill_reward: Option<f64>,
    pub policy_params: Option<usize>,
    pub run_dir: Option<PathBuf>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub mean_coverage: Option<f64>,
    pub mean_final_skill_reward: Option<f64>,
    pub completed_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: Suite,
    pub rows: Vec<AblationRow>,
    pub summary: Vec<VariantSummary>,
    /// Per-iteration mean skill reward, keyed by variant then seed.
    pub curves: BTreeMap<String, BTreeMap<u64, Vec<f64>>>,
}

impl AblationReport {
    pub fn row(&self, variant: &str, seed: u64) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant && r.seed == seed)
    }

    pub fn summary_for(&self, variant: &str) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }

    pub fn failed(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} ablation", self.suite.name());
        let _ = writeln!(s, "{:<8} {:>6} {:>10} {:>12} {:>10}", "variant", "seed", "coverage", "skill_reward", "params");
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<8} {:>6} {:>10} {:>12} {:>10}{}",
                r.variant,
                r.seed,
                fmt(r.coverage),
                fmt(r.final_skill_reward),
                r.policy_params.map_or("-".into(), |p| p.to_string()),
                r.error.as_ref().map_or(String::new(), |e| format!("  error: {e}"))
            );
        }
        for m in &self.summary {
            let _ = writeln!(
                s,
                "{:<8} {:>6} {:>10} {:>12}",
                m.variant,
                "mean",
                fmt(m.mean_coverage),
                fmt(m.mean_final_skill_reward)
            );
        }
        s
    }
}

/// Short hex digest of a config's canonical TOML.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let text = cfg.to_toml_string()?;
    Ok(hex::encode(&Sha256::digest(text.as_bytes())[..8]))
}

/// Trains `cfg` into the run store unless an identical finished run exists.
pub fn train_or_reuse(cfg: &RunConfig, run_store: &Path) -> Result<(PathBuf, Vec<IterationMetrics>)> {
    let dir = run_store.join(config_hash(cfg)?);
    let final_ckpt = checkpoint_path(&dir, cfg.training.iterations);
    let echo = dir.join(trainer::CONFIG_ECHO);
    if final_ckpt.exists() && std::fs::read_to_string(&echo).ok() == Some(cfg.to_toml_string()?) {
        if let Ok(m) = read_metrics(&dir.join(trainer::METRICS_LOG)) {
            if m.len() == cfg.training.iterations {
                return Ok((dir, m));
            }
        }
    }
    let out = trainer::train(cfg, &dir)?;
    Ok((dir, out.metrics))
}

fn trailing_mean(curve: &[f64], window: usize) -> Option<f64> {
    if curve.is_empty() {
        return None;
    }
    let tail = &curve[curve.len().saturating_sub(window)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Trains every variant for every seed, then scores coverage per seed with
/// normalisation pooled across the variants of that seed.
pub fn run_ablation(suite: Suite, base: &RunConfig, opts: &AblationOptions) -> Result<AblationReport> {
    let variants: Vec<String> = if opts.variants.is_empty() {
        suite.variants().iter().map(|s| s.to_string()).collect()
    } else {
        for v in &opts.variants {
            if !suite.variants().contains(&v.as_str()) {
                return Err(Error::Config(format!("unknown variant `{v}` for the {} suite", suite.name())));
            }
        }
        opts.variants.clone()
    };
    if opts.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    std::fs::create_dir_all(&opts.out_dir)?;
    let layout = base.env.layout()?;
    let cols = coverage_columns(layout, opts.all_channels);
    let labels: Vec<String> = {
        let l = layout.labels();
        cols.iter().map(|&c| l[c].clone()).collect()
    };

    let mut rows = Vec::new();
    let mut curves: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for &seed in &opts.seeds {
        let mut trained: Vec<(usize, Array2<f64>)> = Vec::new();
        for v in &variants {
            let mut row = AblationRow {
                variant: v.clone(),
                seed,
                coverage: None,
                final_skill_reward: None,
                policy_params: None,
                run_dir: None,
                error: None,
            };
            let attempt = (|| -> Result<(PathBuf, Vec<IterationMetrics>, Array2<f64>, usize)> {
                let mut cfg = variant_config(base, suite, v)?;
                cfg.training.seed = seed;
                let (dir, metrics) = train_or_reuse(&cfg, &opts.run_store)?;
                let ckpt = Checkpoint::load(&checkpoint_path(&dir, cfg.training.iterations))?;
                let trajs = rollout_skills(&ckpt, opts.duration_steps)?;
                Ok((dir, metrics, stack_columns(&trajs, &cols), ckpt.policy.len()))
            })();
            match attempt {
                Ok((dir, metrics, data, params)) => {
                    let curve: Vec<f64> = metrics.iter().map(|m| m.mean_skill_reward).collect();
                    row.final_skill_reward = trailing_mean(&curve, REWARD_WINDOW);
                    row.policy_params = Some(params);
                    row.run_dir = Some(dir);
                    curves.entry(v.clone()).or_default().insert(seed, curve);
                    trained.push((rows.len(), data));
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            rows.push(row);
        }
        if trained.is_empty() {
            continue;
        }
        let views: Vec<ArrayView2<f64>> = trained.iter().map(|(_, d)| d.view()).collect();
        let norm = Normalizer::fit(&views)?;
        let mut scatter = Vec::new();
        for (idx, data) in &trained {
            let normed = norm.apply(data.view())?;
            let rep = coverage_labeled(normed.view(), opts.bins, labels.clone())?;
            rows[*idx].coverage = Some(rep.mean);
            scatter.push((rows[*idx].variant.clone(), normed));
        }
        write_scatter(&opts.out_dir.join(format!("scatter_seed{seed}.csv")), &labels, &scatter)?;
    }

    let summary = variants
        .iter()
        .map(|v| {
            let done: Vec<&AblationRow> = rows.iter().filter(|r| &r.variant == v && r.error.is_none()).collect();
            let mean = |f: &dyn Fn(&AblationRow) -> Option<f64>| {
                let xs: Vec<f64> = done.iter().filter_map(|r| f(r)).collect();
                (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
            };
            VariantSummary {
                variant: v.clone(),
                mean_coverage: mean(&|r| r.coverage),
                mean_final_skill_reward: mean(&|r| r.final_skill_reward),
                completed_seeds: done.len(),
            }
        })
        .collect();
    let report = AblationReport {
        suite,
        rows,
        summary,
        curves,
    };
    write_ablation_outputs(&opts.out_dir, &report)?;
    Ok(report)
}

/// Every 10th normalised sample per variant, for state-scatter plots.
fn write_scatter(path: &Path, labels: &[String], data: &[(String, Array2<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["variant".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (variant, d) in data {
        for row in d.rows().into_iter().step_by(10) {
            let mut rec = vec![variant.clone()];
            rec.extend(row.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ablation_outputs(dir: &Path, report: &AblationReport) -> Result<()> {
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    std::fs::write(dir.join("report.txt"), report.to_text())?;
    let mut w = csv::Writer::from_path(dir.join("coverage_table.csv"))?;
    w.write_record(["variant", "seed", "coverage", "final_skill_reward", "policy_params", "error"])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &report.rows {
        w.write_record([
            r.variant.clone(),
            r.seed.to_string(),
            opt(r.coverage),
            opt(r.final_skill_reward),
            r.policy_params.map_or(String::new(), |p| p.to_string()),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    for m in &report.summary {
        w.write_record([
            m.variant.clone(),
            "mean".into(),
            opt(m.mean_coverage),
            opt(m.mean_final_skill_reward),
            String::new(),
            String::new(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("reward_curves.csv"))?;
    w.write_record(["variant", "seed", "iteration", "mean_skill_reward"])?;
    for (v, seeds) in &report.curves {
        for (seed, curve) in seeds {
            for (i, r) in curve.iter().enumerate() {
                w.write_record([v.clone(), seed.to_string(), (i + 1).to_string(), r.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Concatenates datasets row-wise.
pub fn union(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    concatenate(Axis(0), &[a, b]).map_err(|e| Error::Layout(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent counter: sort each column's bin ids and count distinct.
    fn brute_force(data: &Array2<f64>, bins: usize) -> Vec<f64> {
        data.columns()
            .into_iter()
            .map(|col| {
                let mut ids: Vec<i64> = col
                    .iter()
                    .map(|&x| {
                        let mut b = 0i64;
                        while b + 1 < bins as i64 && x >= (b + 1) as f64 / bins as f64 {
                            b += 1;
                        }
                        b
                    })
                    .collect();
                ids.sort();
                ids.dedup();
                ids.len() as f64 / bins as f64
            })
            .collect()
    }

    #[test]
    fn normalization_examples() {
        let d = array![[0.0, 3.0], [5.0, 3.0], [10.0, 3.0]];
        let n = normalize_per_dimension(d.view()).unwrap();
        assert_eq!(n.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        assert_eq!(n.column(1).to_vec(), vec![0.5, 0.5, 0.5]);
        assert!(normalize_per_dimension(Array2::<f64>::zeros((0, 2)).view()).is_err());
    }

    #[test]
    fn normalized_extrema_are_zero_and_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Array2::from_shape_fn((200, 5), |_| rng.random_range(-40.0..7.0));
        let n = normalize_per_dimension(d.view()).unwrap();
        for col in n.columns() {
            assert_eq!(col.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
            assert_eq!(col.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
        }
    }

    #[test]
    fn coverage_examples() {
        let c = coverage(Array2::from_elem((100, 9), 0.37).view(), 50).unwrap();
        assert!(c.ratios.iter().all(|&r| r == 0.02));
        let centers = Array2::from_shape_fn((50, 9), |(i, _)| (i as f64 + 0.5) / 50.0);
        assert_eq!(coverage(centers.view(), 50).unwrap().mean, 1.0);
        let edge = array![[1.0], [0.0]];
        assert_eq!(coverage(edge.view(), 50).unwrap().ratios, vec![2.0 / 50.0]);
        assert!(matches!(coverage(array![[1.5]].view(), 50), Err(Error::Domain(_))));
        assert!(matches!(coverage(array![[0.5]].view(), 0), Err(Error::Domain(_))));
        assert!(matches!(coverage(Array2::<f64>::zeros((0, 3)).view(), 50), Err(Error::Domain(_))));
    }

    #[test]
    fn coverage_matches_brute_force_counter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..20 {
            let d = Array2::from_shape_fn((2000, 9), |(_, c)| {
                let x: f64 = rng.random_range(0.0..1.0);
                if c % 3 == trial % 3 { x * 0.3 } else { x }
            });
            assert_eq!(coverage(d.view(), 50).unwrap().ratios, brute_force(&d, 50));
        }
    }

    fn unit_data() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 1..60)
    }

    fn to_array(rows: &[Vec<f64>]) -> Array2<f64> {
        Array2::from_shape_fn((rows.len(), 3), |(r, c)| rows[r][c])
    }

    proptest! {
        #[test]
        fn coverage_is_permutation_invariant(rows in unit_data(), seed in 0u64..1000) {
            let a = to_array(&rows);
            let mut perm: Vec<usize> = (0..rows.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let b = a.select(Axis(0), &perm);
            prop_assert_eq!(coverage(a.view(), 10).unwrap().ratios, coverage(b.view(), 10).unwrap().ratios);
        }

        #[test]
        fn coverage_is_monotone_and_union_dominates(x in unit_data(), y in unit_data()) {
            let (a, b) = (to_array(&x), to_array(&y));
            let u = union(a.view(), b.view()).unwrap();
            let (ca, cb, cu) = (
                coverage(a.view(), 20).unwrap(),
                coverage(b.view(), 20).unwrap(),
                coverage(u.view(), 20).unwrap(),
            );
            for d in 0..3 {
                prop_assert!(cu.ratios[d] >= ca.ratios[d] && cu.ratios[d] >= cb.ratios[d]);
            }
        }

        #[test]
        fn normalization_is_idempotent(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 2..40)) {
            let a = Array2::from_shape_fn((rows.len(), 2), |(r, c)| rows[r][c]);
            let n1 = normalize_per_dimension(a.view()).unwrap();
            let n2 = normalize_per_dimension(n1.view()).unwrap();
            for (p, q) in n1.iter().zip(n2.iter()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }

    fn tiny_config() -> RunConfig {
        let mut c = RunConfig::desk_scale();
        c.training.num_envs = 4;
        c.training.iterations = 2;
        c.training.checkpoint_every = 0;
        c.ppo.steps_per_iteration = 4;
        c.policy.expert_hidden = vec![8];
        c.policy.feature_dim = 8;
        c.policy.gate_hidden = vec![4];
        c.policy.mlp_hidden = vec![8];
        c.value.hidden = vec![8];
        c.discriminator.hidden = vec![8];
        c.discriminator.training.batch_size = 16;
        c.eval.duration_steps = 30;
        c
    }

    #[test]
    fn rollouts_are_deterministic_and_cover_all_skills() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let out = trainer::train(&cfg, dir.path()).unwrap();
        let ck = Checkpoint::load(&out.final_checkpoint).unwrap();
        let a = rollout_skills(&ck, 30).unwrap();
        let b = rollout_skills(&ck, 30).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        let files = write_trajectories(&dir.path().join("traj"), ck.config.env.layout().unwrap(), &a).unwrap();
        assert_eq!(files.len(), 8);
        let text = std::fs::read_to_string(&files[0]).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("t,skill,v_x,v_y,v_z,w_x,w_y,w_z,g_x,g_y,g_z,q_1"));
        assert!(header.ends_with("dq_4,a_1,a_2,a_3,a_4"));
        assert_eq!(text.lines().count(), 31);
    }

    #[test]
    fn constant_policy_covers_one_bin() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let env = ToyQuadruped::new(cfg.env.clone()).unwrap();
        let mut policy = GaussianPolicy::new(cfg.policy_spec(), &mut rng).unwrap();
        policy.zero_head();
        let trajs = rollout_policy(&env, &policy, 8, 50).unwrap();
        let data = stack_columns(&trajs, &coverage_columns(env.layout(), false));
        let rep = coverage(normalize_per_dimension(data.view()).unwrap().view(), 50).unwrap();
        assert!((rep.mean - 0.02).abs() < 1e-15);
    }

    #[test]
    fn variants_differ_only_in_the_ablated_setting() {
        let base = RunConfig::desk_scale();
        let md = variant_config(&base, Suite::Discriminator, "MD").unwrap();
        assert_eq!(md.discriminator.assignment, DiscriminatorAssignment::multi());
        let sd3 = variant_config(&base, Suite::Discriminator, "SD3").unwrap();
        assert_eq!(sd3.discriminator.assignment.num_heads(), 1);
        assert!(sd3.discriminator.assignment.covers_all_channels());
        let moe = variant_config(&base, Suite::Policy, "MoE").unwrap();
        let omoe = variant_config(&base, Suite::Policy, "OMoE").unwrap();
        assert_eq!(moe.policy_spec().omoe_spec().num_experts, omoe.policy_spec().omoe_spec().num_experts);
        assert!(!moe.policy_spec().omoe_spec().orthogonalize && omoe.policy_spec().omoe_spec().orthogonalize);
        assert!(variant_config(&base, Suite::Policy, "SD1").is_err());
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn ablation_emits_one_row_per_variant_and_seed() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let opts = AblationOptions::new(dir.path(), &cfg, vec![0, 1]);
        let rep = run_ablation(Suite::Discriminator, &cfg, &opts).unwrap();
        assert_eq!(rep.rows.len(), 8);
        assert!(!rep.failed());
        for r in &rep.rows {
            let c = r.coverage.unwrap();
            assert!(c > 0.0 && c <= 1.0);
        }
        assert_eq!(rep.summary.len(), 4);
        let table = std::fs::read_to_string(dir.path().join("coverage_table.csv")).unwrap();
        assert_eq!(table.lines().count(), 1 + 8 + 4);
        // MD with the default config is the OMoE policy run: reused, not retrained.
        let again = run_ablation(
            Suite::Policy,
            &cfg,
            &AblationOptions { variants: vec!["OMoE".into()], ..AblationOptions::new(dir.path(), &cfg, vec![0]) },
        )
        .unwrap();
        assert_eq!(again.rows[0].run_dir, rep.row("MD", 0).unwrap().run_dir);
        assert_eq!(again.rows[0].final_skill_reward, rep.row("MD", 0).unwrap().final_skill_reward);
    }
}
