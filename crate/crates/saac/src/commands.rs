//! The `train`, `eval`, `project-states`, `compare`, `grad-check` and
//! `oracle-check` commands.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use saac_core::adversary::Variant;
use saac_core::diagnostics::{gradient_suite, oracle_suite};
use saac_core::pca::pca;
use saac_core::policy::{Deterministic, SquashedGaussianPolicy};
use saac_core::trainer::{evaluate, stream, AgentCritic, MetricsRow, StateRecord, TrainConfig, Trainer};
use saac_core::Rng;

use crate::config::{self, parse_config};
use crate::io::{self, ProjectedState, SummaryRow, CONFIG_FILE, METRICS_FILE, STATES_FILE};
use crate::snapshot;

/// What `train` runs: one job per (variant, seed) pair.
#[derive(Debug, Clone, Default)]
pub struct RunSpec {
    pub config: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
    /// Empty means the configured seed.
    pub seeds: Vec<u64>,
    /// Empty means the configured variant.
    pub variants: Vec<Variant>,
    pub out: PathBuf,
}

impl RunSpec {
    pub fn base_config(&self) -> Result<TrainConfig> {
        Ok(parse_config(self.config.as_deref(), &self.overrides)?)
    }

    /// Every (variant, seed) job, variants outermost.
    pub fn jobs(&self) -> Result<Vec<TrainConfig>> {
        let base = self.base_config()?;
        let seeds = if self.seeds.is_empty() { vec![base.seed] } else { self.seeds.clone() };
        let variants = if self.variants.is_empty() { vec![base.variant] } else { self.variants.clone() };
        let mut jobs = Vec::new();
        for &variant in &variants {
            for &seed in &seeds {
                let mut c = base.clone();
                c.variant = variant;
                c.seed = seed;
                c.validate()?;
                jobs.push(c);
            }
        }
        Ok(jobs)
    }
}

pub fn run_dir(out: &Path, variant: Variant, seed: u64) -> PathBuf {
    out.join(variant.name()).join(seed.to_string())
}

/// Runs one job into `dir`, appending metrics and states at every
/// evaluation so an aborted run keeps what it produced.
pub fn train_one(config: &TrainConfig, dir: &Path) -> Result<Vec<MetricsRow>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(CONFIG_FILE), config::render(config))?;
    let metrics = dir.join(METRICS_FILE);
    let states = dir.join(STATES_FILE);
    let mut trainer = Trainer::new(config.clone())?;
    io::create_metrics(&metrics)?;
    io::create_states(&states, trainer.learners.agent.policy.state_dim())?;

    let mut written = 0;
    let mut record = |t: &mut Trainer| -> Result<()> {
        let row = t.evaluate_now()?;
        io::append_metrics(&metrics, &row)?;
        io::append_states(&states, &t.states()[written..])?;
        written = t.states().len();
        Ok(())
    };
    record(&mut trainer)?;
    while trainer.steps() < config.total_steps {
        trainer.env_step()?;
        if trainer.steps() % config.eval_interval == 0 {
            record(&mut trainer)?;
        }
    }
    save_snapshots(&trainer, dir)?;
    Ok(trainer.rows().to_vec())
}

fn save_snapshots(trainer: &Trainer, dir: &Path) -> Result<()> {
    let l = &trainer.learners;
    snapshot::save(&dir.join("agent_policy.bin"), l.agent.policy.trunk())?;
    match &l.agent.critic {
        AgentCritic::Twin(c) => {
            snapshot::save(&dir.join("agent_q1.bin"), &c.online[0])?;
            snapshot::save(&dir.join("agent_q2.bin"), &c.online[1])?;
        }
        AgentCritic::Quantile(c) => snapshot::save(&dir.join("agent_quantiles.bin"), &c.online)?,
    }
    if let Some(adv) = &l.adversary {
        snapshot::save(&dir.join("adversary_policy.bin"), adv.policy.trunk())?;
        if let Some(c) = &adv.critic {
            snapshot::save(&dir.join("adversary_q1.bin"), &c.online[0])?;
            snapshot::save(&dir.join("adversary_q2.bin"), &c.online[1])?;
        }
    }
    Ok(())
}

/// Arguments that make a child process run exactly one job.
fn child_args(spec: &RunSpec, variant: Variant, seed: u64) -> Vec<String> {
    let mut args = vec!["train".to_string()];
    if let Some(c) = &spec.config {
        args.extend(["--config".to_string(), c.display().to_string()]);
    }
    for (k, v) in &spec.overrides {
        args.extend(["--set".to_string(), format!("{k}={v}")]);
    }
    args.extend([
        "--seeds".to_string(),
        seed.to_string(),
        "--variants".to_string(),
        variant.name().to_string(),
        "--out".to_string(),
        spec.out.display().to_string(),
        "--jobs".to_string(),
        "1".to_string(),
    ]);
    args
}

/// Runs every job, in this process when `jobs <= 1`, otherwise as up to
/// `jobs` concurrent child processes of `exe`. Fails if any job failed;
/// outputs of the others are kept.
pub fn cmd_train(spec: &RunSpec, jobs: usize, exe: Option<&Path>) -> Result<()> {
    let all = spec.jobs()?;
    let mut failed = Vec::new();
    if jobs <= 1 {
        for c in &all {
            let dir = run_dir(&spec.out, c.variant, c.seed);
            let start = Instant::now();
            match train_one(c, &dir) {
                Ok(rows) => {
                    let last = rows.last().copied();
                    eprintln!(
                        "{} seed {}: {} steps, return {:.3}, failures {} in {:.1}s",
                        c.variant,
                        c.seed,
                        c.total_steps,
                        last.map_or(f64::NAN, |r| r.eval_return_mean),
                        last.map_or(0.0, |r| r.cum_failures),
                        start.elapsed().as_secs_f64()
                    );
                }
                Err(e) => {
                    eprintln!("{} seed {}: aborted: {e:#}", c.variant, c.seed);
                    failed.push(format!("{}/{}", c.variant, c.seed));
                }
            }
        }
    } else {
        let exe = match exe {
            Some(p) => p.to_path_buf(),
            None => std::env::current_exe()?,
        };
        let mut pending: VecDeque<&TrainConfig> = all.iter().collect();
        let mut running: Vec<(String, Child)> = Vec::new();
        while !pending.is_empty() || !running.is_empty() {
            while running.len() < jobs {
                let Some(c) = pending.pop_front() else { break };
                let child = Command::new(&exe)
                    .args(child_args(spec, c.variant, c.seed))
                    .spawn()
                    .with_context(|| format!("spawning {}", exe.display()))?;
                running.push((format!("{}/{}", c.variant, c.seed), child));
            }
            let mut i = 0;
            while i < running.len() {
                if let Some(status) = running[i].1.try_wait()? {
                    let (label, _) = running.swap_remove(i);
                    if !status.success() {
                        failed.push(label);
                    }
                } else {
                    i += 1;
                }
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }
    ensure!(failed.is_empty(), "{} run(s) aborted: {}", failed.len(), failed.join(", "));
    Ok(())
}

/// Evaluation of a finished run's saved policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub failures: f64,
}

pub fn load_policy(dir: &Path) -> Result<(TrainConfig, SquashedGaussianPolicy)> {
    let config = parse_config(Some(&dir.join(CONFIG_FILE)), &[])?;
    let env = config.env.build()?;
    let trunk = snapshot::load(&dir.join("agent_policy.bin"))?;
    let policy = SquashedGaussianPolicy::from_trunk(trunk, env.action_low(), env.action_high())?;
    Ok((config, policy))
}

/// Runs the saved deterministic policy of `dir` for `episodes` episodes
/// (the configured count when `None`).
pub fn cmd_eval(dir: &Path, episodes: Option<usize>) -> Result<EvalSummary> {
    let (config, policy) = load_policy(dir)?;
    let episodes = episodes.unwrap_or(config.eval_episodes);
    let mut env = config.env.build()?;
    let mut rng = Rng::with_stream(config.seed, stream::EVAL);
    let result = evaluate(&Deterministic(&policy), &mut env, episodes, &mut rng)?;
    Ok(EvalSummary {
        episodes,
        return_mean: result.mean_return().unwrap_or(f64::NAN),
        return_std: result.std_return().unwrap_or(f64::NAN),
        failures: result.failures,
    })
}

/// Stage index of `step`: how many boundaries it has reached.
pub fn stage_of(step: usize, boundaries: &[usize]) -> usize {
    boundaries.iter().filter(|&&b| step >= b).count()
}

/// Result of `project-states`.
#[derive(Debug, Clone)]
pub struct Projection {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
    pub rank_deficient: bool,
    pub points: Vec<ProjectedState>,
}

/// Projects visited states onto their top two principal directions.
/// Without explicit boundaries the step range is cut into thirds. A
/// missing second component projects to 0.
pub fn project_states(states: &[StateRecord], boundaries: Option<&[usize]>) -> Result<Projection> {
    ensure!(states.len() >= 3, "need at least 3 states, got {}", states.len());
    let data: Vec<&[f64]> = states.iter().map(|s| s.state.as_slice()).collect();
    let p = pca(&data, 2)?;
    let max_step = states.iter().map(|s| s.step).max().unwrap_or(0);
    let default = [max_step.div_ceil(3), (2 * max_step).div_ceil(3)];
    let boundaries = boundaries.unwrap_or(&default);
    let points = states
        .iter()
        .map(|s| {
            let xy = p.project(&s.state)?;
            Ok(ProjectedState {
                step: s.step,
                stage: stage_of(s.step, boundaries),
                pc1: xy.first().copied().unwrap_or(0.0),
                pc2: xy.get(1).copied().unwrap_or(0.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Projection {
        mean: p.mean,
        components: p.components,
        variances: p.variances,
        rank_deficient: p.rank_deficient,
        points,
    })
}

pub fn cmd_project_states(files: &[PathBuf], boundaries: Option<&[usize]>, output: Option<&Path>) -> Result<Projection> {
    ensure!(!files.is_empty(), "no states files given");
    let mut states = Vec::new();
    for f in files {
        states.extend(io::read_states(f)?);
    }
    let projection = project_states(&states, boundaries)?;
    match output {
        Some(path) => io::write_projection(path, &projection.points)?,
        None => {
            std::io::stdout().write_all(&projection_csv(&projection.points)?)?;
        }
    }
    Ok(projection)
}

fn projection_csv(points: &[ProjectedState]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(io::PROJECTION_HEADER)?;
    for p in points {
        w.write_record([p.step.to_string(), p.stage.to_string(), p.pc1.to_string(), p.pc2.to_string()])?;
    }
    Ok(w.into_inner()?)
}

/// Metrics of every seed under a variant directory, in seed order.
pub fn load_variant(dir: &Path) -> Result<Vec<Vec<MetricsRow>>> {
    let mut seeds: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let seed = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.parse().ok());
        if let Some(seed) = seed {
            if path.join(METRICS_FILE).is_file() {
                seeds.push((seed, path));
            }
        }
    }
    ensure!(!seeds.is_empty(), "{} holds no completed runs", dir.display());
    seeds.sort();
    seeds.iter().map(|(_, p)| io::read_metrics(&p.join(METRICS_FILE))).collect()
}

/// Seed-mean return curve over the evaluation steps all seeds share.
pub fn mean_curve(runs: &[Vec<MetricsRow>]) -> Result<Vec<(usize, f64)>> {
    ensure!(!runs.is_empty(), "no runs");
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let step = runs[0][i].step;
            ensure!(runs.iter().all(|r| r[i].step == step), "seeds disagree on evaluation steps");
            let mean = runs.iter().map(|r| r[i].eval_return_mean).sum::<f64>() / runs.len() as f64;
            Ok((step, mean))
        })
        .collect()
}

/// First step at which the curve reaches `threshold`.
pub fn steps_to_reach(curve: &[(usize, f64)], threshold: f64) -> Option<usize> {
    curve.iter().find(|(_, r)| *r >= threshold).map(|(s, _)| *s)
}

/// Threshold at `fraction` of the maximum `m`, measured from |m| so that
/// negative returns still yield a threshold below the maximum.
pub fn threshold(m: f64, fraction: f64) -> f64 {
    m - (1.0 - fraction) * m.abs()
}

/// baseline steps / variant steps. A variant that never reaches the
/// threshold scores 0; reaching it at step 0 scores infinity unless the
/// baseline did too.
pub fn efficiency(baseline_steps: usize, variant_steps: Option<usize>) -> f64 {
    match variant_steps {
        None => 0.0,
        Some(0) if baseline_steps == 0 => 1.0,
        Some(v) => baseline_steps as f64 / v as f64,
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Summary rows for `variants` measured against `baseline`.
pub fn compare_runs(baseline: &[Vec<MetricsRow>], variants: &[(String, Vec<Vec<MetricsRow>>)], fraction: f64) -> Result<Vec<SummaryRow>> {
    let base_curve = mean_curve(baseline)?;
    let Some(max) = base_curve.iter().map(|(_, r)| *r).filter(|r| !r.is_nan()).reduce(f64::max) else {
        bail!("baseline has no finite evaluation returns");
    };
    let thr = threshold(max, fraction);
    let base_steps = steps_to_reach(&base_curve, thr).context("baseline never reaches its own threshold")?;
    variants
        .iter()
        .map(|(name, runs)| {
            let curve = mean_curve(runs)?;
            let failures: Vec<f64> = runs.iter().map(|r| r.last().map_or(0.0, |x| x.cum_failures)).collect();
            let (failures_mean, failures_std) = mean_std(&failures);
            Ok(SummaryRow {
                variant: name.clone(),
                efficiency: efficiency(base_steps, steps_to_reach(&curve, thr)),
                failures_mean,
                failures_std,
                seeds: runs.len(),
            })
        })
        .collect()
}

fn dir_label(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Compares variant directories (each holding `<seed>/metrics.csv`)
/// against `baseline`. Without explicit directories every subdirectory of
/// `out` is compared, the baseline included.
pub fn cmd_compare(baseline: &Path, dirs: &[PathBuf], out: Option<&Path>, fraction: f64) -> Result<Vec<SummaryRow>> {
    ensure!(baseline.is_dir(), "baseline {} not found", baseline.display());
    let dirs: Vec<PathBuf> = if dirs.is_empty() {
        let root = out.context("give run directories or an output root")?;
        let mut found: Vec<PathBuf> = fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        found.sort();
        found
    } else {
        dirs.to_vec()
    };
    let base = load_variant(baseline)?;
    let variants = dirs
        .iter()
        .map(|d| Ok((dir_label(d), load_variant(d)?)))
        .collect::<Result<Vec<_>>>()?;
    compare_runs(&base, &variants, fraction)
}

/// Prints one line per gradient check; true when all pass.
pub fn cmd_grad_check(seed: u64, out: &mut dyn Write) -> Result<bool> {
    let mut ok = true;
    writeln!(out, "check,max_rel_error,max_abs_error,result")?;
    for e in gradient_suite(seed)? {
        ok &= e.report.passed;
        writeln!(
            out,
            "{},{:e},{:e},{}",
            e.name,
            e.report.max_rel_error,
            e.report.max_abs_error,
            if e.report.passed { "PASS" } else { "FAIL" }
        )?;
    }
    Ok(ok)
}

/// Prints one line per oracle cross-check; true when all pass.
pub fn cmd_oracle_check(out: &mut dyn Write) -> Result<bool> {
    let mut ok = true;
    writeln!(out, "check,value,result")?;
    for line in oracle_suite()? {
        ok &= line.passed;
        writeln!(out, "{},{},{}", line.name, line.value, if line.passed { "PASS" } else { "FAIL" })?;
    }
    Ok(ok)
}
