//! Experiment runner: expert training, demonstration recording, baseline
//! versus pretrained learning curves across seeds, and summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::algo::{eval_seeds, exact_eta, mean_return, Acer, Ddpg, StepMetrics};
use crate::config::{Algorithm, ExperimentConfig, Variant};
use crate::demo::{record_demonstrations, Demonstration};
use crate::error::{Error, Result};
use crate::mdp::{make_builtin, Action, ActionSpace, Environment, SimRng, TabularMdp};
use crate::nn::Mlp;
use crate::oracle::{optimal_policy, solve_policy};
use crate::policy::{state_of, Actor};

/// PD gains of the point-mass reference controller.
pub const POINT_MASS_KP: f64 = 1.0;
pub const POINT_MASS_KD: f64 = 1.5;

/// `a = clip(-kp p - kd v)` per axis.
pub fn point_mass_reference(obs: &[f64]) -> Vec<f64> {
    (0..2).map(|i| (-POINT_MASS_KP * obs[i] - POINT_MASS_KD * obs[i + 2]).clamp(-1.0, 1.0)).collect()
}

/// Turns a policy's evaluation into a normalized score.
pub enum Scorer {
    /// Tabular environments: exact `eta(pi)`, scored as `eta / eta*`.
    Exact { mdp: TabularMdp, eta_star: f64 },
    /// Everything else: mean return over fixed episodes, scored between a
    /// uniform random policy (0) and a reference controller (1).
    Returns { env: Box<dyn Environment>, seeds: Vec<u64>, random: f64, reference: f64 },
}

impl Scorer {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let mut env = make_builtin(&cfg.env, &cfg.env_params)?;
        if let Some(mdp) = env.tabular() {
            let mdp = mdp.clone();
            let eta_star = solve_policy(&mdp, &optimal_policy(&mdp))?.eta;
            if !(eta_star > 0.0) {
                return Err(Error::config("normalized scores need a positive optimal return"));
            }
            return Ok(Scorer::Exact { mdp, eta_star });
        }
        if cfg.env != "point_mass" {
            return Err(Error::config(format!("no reference controller for {}", cfg.env)));
        }
        let seeds = eval_seeds(cfg.eval_episodes);
        let ActionSpace::Continuous { low, high } = env.action_space() else {
            return Err(Error::config("point_mass must have continuous actions"));
        };
        let mut rng = SimRng::seed_from_u64(0x5EED);
        let random = mean_return(env.as_mut(), &seeds, |_| {
            Ok(Action::Continuous(low.iter().zip(&high).map(|(&l, &h)| rng.random_range(l..h)).collect()))
        })?;
        let reference = mean_return(env.as_mut(), &seeds, |o| Ok(Action::Continuous(point_mass_reference(o))))?;
        Ok(Scorer::Returns { env, seeds, random, reference })
    }

    pub fn normalize(&self, eval_return: f64) -> f64 {
        match self {
            Scorer::Exact { eta_star, .. } => eval_return / eta_star,
            Scorer::Returns { random, reference, .. } => (eval_return - random) / (reference - random),
        }
    }
}

/// One training run of either algorithm.
pub enum Learner {
    Acer(Box<Acer>),
    Ddpg(Box<Ddpg>),
}

impl Learner {
    pub fn new(cfg: &ExperimentConfig, demos: Option<Demonstration>, seed: u64) -> Result<Self> {
        let env = make_builtin(&cfg.env, &cfg.env_params)?;
        Ok(match cfg.algorithm {
            Algorithm::Acer => Learner::Acer(Box::new(Acer::new(env, cfg.acer.clone(), cfg.pretrain.clone(), demos, seed)?)),
            Algorithm::Ddpg => Learner::Ddpg(Box::new(Ddpg::new(env, cfg.ddpg.clone(), cfg.pretrain.clone(), demos, seed)?)),
        })
    }

    pub fn step(&mut self) -> Result<StepMetrics> {
        match self {
            Learner::Acer(a) => a.step(),
            Learner::Ddpg(d) => d.step(),
        }
    }

    pub fn simulation_steps(&self) -> u64 {
        match self {
            Learner::Acer(a) => a.simulation_steps(),
            Learner::Ddpg(d) => d.simulation_steps(),
        }
    }

    /// Raw evaluation: exact `eta` on tabular environments, mean noise-free return otherwise.
    pub fn evaluate(&self, scorer: &mut Scorer) -> Result<f64> {
        match (self, scorer) {
            (Learner::Acer(a), Scorer::Exact { mdp, .. }) => exact_eta(&a.model, mdp),
            (Learner::Ddpg(d), Scorer::Returns { env, seeds, .. }) => d.evaluate(env.as_mut(), seeds),
            (Learner::Ddpg(_), Scorer::Exact { .. }) => Err(Error::config("ddpg needs a continuous environment")),
            (Learner::Acer(_), Scorer::Returns { .. }) => Err(Error::config("acer runs only on tabular environments")),
        }
    }

    pub fn actor(&self) -> &dyn Actor {
        match self {
            Learner::Acer(a) => &a.model,
            Learner::Ddpg(d) => &d.model.actor,
        }
    }

    pub fn network(&self) -> &Mlp {
        match self {
            Learner::Acer(a) => &a.model.net,
            Learner::Ddpg(d) => &d.model.actor.net,
        }
    }
}

/// One learning-curve row, written at every evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub step: u64,
    pub simulation_steps: u64,
    pub episode_return: Option<f64>,
    pub eval_return: f64,
    pub score: f64,
    pub j: Option<f64>,
    pub critic_grad_norm: f64,
    pub actor_grad_norm: f64,
    pub pretraining_active: bool,
}

pub const CURVE_HEADER: &str =
    "step,simulation_steps,episode_return,eval_return,score,J,critic_grad_norm,actor_grad_norm,pretraining_active";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.step,
            r.simulation_steps,
            opt(r.episode_return),
            r.eval_return,
            r.score,
            opt(r.j),
            r.critic_grad_norm,
            r.actor_grad_norm,
            u8::from(r.pretraining_active)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub rows: Vec<CurveRow>,
    /// Simulation steps at the first evaluation with `score >= threshold`.
    pub steps_to_threshold: Option<u64>,
}

/// Trains one learner, evaluating every `eval_every` simulation steps (and at 0).
pub fn run_single(cfg: &ExperimentConfig, variant: Variant, seed: u64, demos: Option<&Demonstration>) -> Result<RunResult> {
    let demos = match variant {
        Variant::Baseline => None,
        Variant::Pretrained => Some(demos.ok_or_else(|| Error::config("pretrained variant needs demonstrations"))?.clone()),
    };
    let mut scorer = Scorer::new(cfg)?;
    let mut learner = Learner::new(cfg, demos, seed)?;
    let mut rows = Vec::new();
    let mut reached = None;
    let mut last = StepMetrics::default();
    let mut last_episode = None;
    let mut next_eval = 0;
    loop {
        let sim = learner.simulation_steps();
        if sim >= next_eval {
            let eval_return = learner.evaluate(&mut scorer)?;
            let score = scorer.normalize(eval_return);
            if !(eval_return.is_finite() && score.is_finite()) {
                return Err(Error::numeric(format!("non-finite evaluation at step {sim} (seed {seed})")));
            }
            rows.push(CurveRow {
                step: last.step,
                simulation_steps: sim,
                episode_return: last_episode,
                eval_return,
                score,
                j: if last.pretraining_active { last.j } else { None },
                critic_grad_norm: last.critic_grad_norm,
                actor_grad_norm: last.actor_grad_norm,
                pretraining_active: last.pretraining_active,
            });
            if reached.is_none() && score >= cfg.threshold {
                reached = Some(sim);
                if cfg.stop_at_threshold {
                    break;
                }
            }
            while next_eval <= sim {
                next_eval += cfg.eval_every;
            }
        }
        if sim >= cfg.total_steps {
            break;
        }
        last = learner.step()?;
        if last.episode_return.is_some() {
            last_episode = last.episode_return;
        }
    }
    Ok(RunResult { variant, seed, rows, steps_to_threshold: reached })
}

/// Median and quartiles of steps-to-threshold; runs that never reached it count as infinite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub seeds: usize,
    pub reached: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Linear-interpolation quantile of sorted data; infinite neighbours give infinity.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    if lo == hi {
        return sorted[lo];
    }
    if sorted[hi].is_infinite() {
        return f64::INFINITY;
    }
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(variant: Variant, runs: &[RunResult]) -> VariantSummary {
    let mut steps: Vec<f64> = runs
        .iter()
        .filter(|r| r.variant == variant)
        .map(|r| r.steps_to_threshold.map_or(f64::INFINITY, |s| s as f64))
        .collect();
    steps.sort_by(f64::total_cmp);
    VariantSummary {
        variant,
        seeds: steps.len(),
        reached: steps.iter().filter(|s| s.is_finite()).count(),
        median: quantile(&steps, 0.5),
        q1: quantile(&steps, 0.25),
        q3: quantile(&steps, 0.75),
    }
}

pub fn summary_csv(summaries: &[VariantSummary]) -> String {
    let mut out = String::from("variant,seeds,reached,median_steps_to_threshold,q1,q3\n");
    for s in summaries {
        let _ = writeln!(out, "{},{},{},{},{},{}", s.variant.name(), s.seeds, s.reached, s.median, s.q1, s.q3);
    }
    out
}

/// Runs every `(variant, seed)` pair, in parallel up to the available cores.
pub fn run_all(cfg: &ExperimentConfig, demos: Option<&Demonstration>) -> Result<Vec<RunResult>> {
    let jobs: Vec<(Variant, u64)> = cfg.variants.iter().flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len()).max(1);
    let mut results = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(workers) {
        let chunk_results: Vec<Result<RunResult>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&(v, s)| scope.spawn(move || run_single(cfg, v, s, demos)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::numeric("training worker panicked"))))
                .collect()
        });
        for r in chunk_results {
            results.push(r?);
        }
    }
    Ok(results)
}

/// What an experiment wrote.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub runs: Vec<RunResult>,
    pub summaries: Vec<VariantSummary>,
    pub dir: PathBuf,
}

pub fn curve_path(dir: &Path, variant: Variant, seed: u64) -> PathBuf {
    dir.join(variant.name()).join(format!("seed_{seed}.csv"))
}

/// Loads, or generates, the demonstrations an experiment needs.
pub fn obtain_demos(cfg: &ExperimentConfig, dir: &Path) -> Result<Option<Demonstration>> {
    if !cfg.needs_demos() {
        return Ok(None);
    }
    match &cfg.demos.path {
        Some(path) if path.exists() => Ok(Some(Demonstration::load(path)?)),
        Some(path) => Err(Error::config(format!("demonstration file {} does not exist", path.display()))),
        None if cfg.demos.generate => Ok(Some(make_expert(cfg, &dir.join("expert"))?.demos)),
        None => Err(Error::config("no demonstration path given and generation disabled")),
    }
}

/// Full protocol: resolved config, demonstrations, curves per seed, summary.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutput> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let demos = obtain_demos(cfg, dir)?;
    let runs = run_all(cfg, demos.as_ref())?;
    for v in &cfg.variants {
        fs::create_dir_all(dir.join(v.name()))?;
    }
    for r in &runs {
        fs::write(curve_path(dir, r.variant, r.seed), curve_csv(&r.rows))?;
    }
    let summaries: Vec<VariantSummary> = cfg.variants.iter().map(|&v| summarize(v, &runs)).collect();
    fs::write(dir.join("summary.csv"), summary_csv(&summaries))?;
    Ok(ExperimentOutput { runs, summaries, dir: dir.to_path_buf() })
}

/// What `make-expert` reports alongside its files.
#[derive(Debug, Clone, Serialize)]
pub struct ExpertReport {
    pub env: String,
    pub simulation_steps: u64,
    pub eval_return: f64,
    pub score: f64,
    /// Optimal `eta*` (tabular) or the reference controller's return.
    pub optimum: f64,
    /// Uniform random policy's return, where it defines the zero of the score.
    pub random_return: Option<f64>,
    /// Mean discounted return of the recorded trajectories, with its standard
    /// error, where rewards are a known function of the state.
    pub demo_discounted_return: Option<(f64, f64)>,
    pub demo_trajectories: usize,
    pub demo_pairs: usize,
    #[serde(skip)]
    pub demos: Demonstration,
}

/// Mean and standard error of `sum_t gamma^t r(s_t)` over demonstration trajectories.
pub fn demo_discounted_return(demos: &Demonstration, mdp: &TabularMdp) -> Result<(f64, f64)> {
    let returns = demos
        .trajectories
        .iter()
        .map(|traj| {
            let mut discount = 1.0;
            let mut total = 0.0;
            for step in traj {
                total += discount * mdp.reward()[state_of(&step.obs)?];
                discount *= mdp.gamma();
            }
            Ok(total)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Trains the baseline until its normalized score reaches the expert
/// threshold and records demonstrations without noise. Returns the report
/// and the trained learner; nothing touches the filesystem.
pub fn train_expert(cfg: &ExperimentConfig) -> Result<(ExpertReport, Learner)> {
    cfg.validate()?;
    let mut scorer = Scorer::new(cfg)?;
    let mut learner = Learner::new(cfg, None, cfg.demos.expert_seed)?;
    let threshold = cfg.demos.expert_threshold;
    let mut best = f64::NEG_INFINITY;
    let mut next_eval = 0;
    let (eval_return, score) = loop {
        let sim = learner.simulation_steps();
        if sim >= next_eval {
            let r = learner.evaluate(&mut scorer)?;
            let score = scorer.normalize(r);
            best = best.max(score);
            if score >= threshold {
                break (r, score);
            }
            while next_eval <= sim {
                next_eval += cfg.eval_every;
            }
        }
        if sim >= cfg.demos.expert_budget {
            return Err(Error::config(format!(
                "expert did not reach score {threshold} within {} simulation steps (best {best:.4})",
                cfg.demos.expert_budget
            )));
        }
        learner.step()?;
    };
    let (optimum, random_return) = match &scorer {
        Scorer::Exact { eta_star, .. } => {
            if score >= 1.0 - 1e-12 {
                return Err(Error::config("expert reached the optimum; it must stay suboptimal"));
            }
            (*eta_star, None)
        }
        Scorer::Returns { random, reference, .. } => {
            if !(eval_return > *random) {
                return Err(Error::config("expert does not beat the random policy"));
            }
            (*reference, Some(*random))
        }
    };
    let mut env = make_builtin(&cfg.env, &cfg.env_params)?;
    let demos = record_demonstrations(learner.actor(), env.as_mut(), cfg.demos.episodes, cfg.demos.expert_seed.wrapping_add(1))?;
    let demo_discounted = match &scorer {
        Scorer::Exact { mdp, .. } => Some(demo_discounted_return(&demos, mdp)?),
        Scorer::Returns { .. } => None,
    };
    let report = ExpertReport {
        env: cfg.env.clone(),
        simulation_steps: learner.simulation_steps(),
        eval_return,
        score,
        optimum,
        random_return,
        demo_discounted_return: demo_discounted,
        demo_trajectories: demos.trajectories.len(),
        demo_pairs: demos.n_pairs(),
        demos,
    };
    Ok((report, learner))
}

/// [`train_expert`], then writes `expert.snapshot`, `demos.jsonl` and `expert.json` into `dir`.
pub fn make_expert(cfg: &ExperimentConfig, dir: &Path) -> Result<ExpertReport> {
    let (report, learner) = train_expert(cfg)?;
    fs::create_dir_all(dir)?;
    let meta = serde_json::json!({ "score": report.score, "eval_return": report.eval_return, "seed": cfg.demos.expert_seed });
    learner.network().write_snapshot(fs::File::create(dir.join("expert.snapshot"))?, Some(algorithm_kind(cfg)), meta)?;
    report.demos.save(&dir.join("demos.jsonl"))?;
    fs::write(dir.join("expert.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

fn algorithm_kind(cfg: &ExperimentConfig) -> &'static str {
    match cfg.algorithm {
        Algorithm::Acer => "acer-shared-actor-critic",
        Algorithm::Ddpg => "ddpg-actor",
    }
}
