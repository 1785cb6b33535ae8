//! MDP interface, the explicit tabular MDP used by the oracles, and the
//! built-in environments (`chain`, `gridworld`, `point_mass`).
//!
//! Rewards are a function of the state being left: a step taken from `s_t`
//! reports `r(s_t)`. Episode caps are truncations, not terminals, so every
//! tabular environment is exactly the infinite-horizon MDP it exposes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub type SimRng = ChaCha8Rng;
pub type Observation = Vec<f64>;

const PROB_TOL: f64 = 1e-12;

/// Explicit finite MDP `{S, A, P, r, rho0, gamma}` with state-only rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Flattened `P[s][a][s']`.
    transition: Vec<f64>,
    reward: Vec<f64>,
    rho0: Vec<f64>,
    gamma: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        rho0: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::config("MDP needs at least one state and one action"));
        }
        check_len("transition tensor", transition.len(), n_states * n_actions * n_states)?;
        check_len("reward vector", reward.len(), n_states)?;
        check_len("initial distribution", rho0.len(), n_states)?;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::config(format!("discount {gamma} outside (0, 1)")));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::numeric("non-finite reward"));
        }
        for (i, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row).map_err(|e| {
                Error::config(format!("P[{}][{}] is not a distribution: {e}", i / n_actions, i % n_actions))
            })?;
        }
        check_distribution(&rho0).map_err(|e| Error::config(format!("rho0: {e}")))?;
        Ok(Self { n_states, n_actions, transition, reward, rho0, gamma })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn rho0(&self) -> &[f64] {
        &self.rho0
    }

    /// `P[s][a][.]`
    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::config(format!("discount {gamma} outside (0, 1)")));
        }
        self.gamma = gamma;
        Ok(self)
    }
}

fn check_distribution(p: &[f64]) -> std::result::Result<(), String> {
    if let Some(x) = p.iter().find(|x| !(**x >= 0.0)) {
        return Err(format!("entry {x} is negative or NaN"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(format!("sums to {total}"));
    }
    Ok(())
}

/// Draws an index from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` a hair below 1; fall back to the last supported index.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn one_hot(index: usize, len: usize) -> Observation {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    /// Flat float encoding used by demonstration files.
    pub fn to_floats(&self) -> Vec<f64> {
        match self {
            Action::Discrete(a) => vec![*a as f64],
            Action::Continuous(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    /// Number of floats one action occupies in a flat encoding.
    pub fn flat_dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Continuous { low, .. } => low.len(),
        }
    }

    pub fn decode(&self, floats: &[f64]) -> Result<Action> {
        match self {
            ActionSpace::Discrete(n) => {
                check_len("discrete action", floats.len(), 1)?;
                let a = floats[0];
                if a < 0.0 || a.fract() != 0.0 || a as usize >= *n {
                    return Err(Error::config(format!("invalid discrete action {a}")));
                }
                Ok(Action::Discrete(a as usize))
            }
            ActionSpace::Continuous { low, .. } => {
                check_len("continuous action", floats.len(), low.len())?;
                Ok(Action::Continuous(floats.to_vec()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub next_state: Observation,
    pub reward: f64,
    /// True terminal: the continuation is worth zero.
    pub terminal: bool,
    /// Episode cap reached; the state itself is not terminal.
    pub truncated: bool,
}

impl EnvStep {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// A resettable simulator. Instances are independent single-threaded state machines.
pub trait Environment: Send {
    fn name(&self) -> &str;
    fn obs_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn max_steps(&self) -> usize;
    /// Starts a new episode; the start state and all later transitions are
    /// a deterministic function of `seed`.
    fn reset(&mut self, seed: u64) -> Observation;
    fn step(&mut self, action: &Action) -> Result<EnvStep>;
    /// The exact MDP behind a tabular environment.
    fn tabular(&self) -> Option<&TabularMdp> {
        None
    }
    /// Current tabular state index, when there is one.
    fn state_index(&self) -> Option<usize> {
        None
    }
}

/// Samples a [`TabularMdp`], emitting one-hot observations.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    name: String,
    mdp: TabularMdp,
    max_steps: usize,
    state: usize,
    t: usize,
    done: bool,
    rng: SimRng,
}

impl TabularEnv {
    pub fn new(name: impl Into<String>, mdp: TabularMdp, max_steps: usize) -> Self {
        Self {
            name: name.into(),
            mdp,
            max_steps,
            state: 0,
            t: 0,
            // Stepping before the first reset is a usage error.
            done: true,
            rng: SimRng::seed_from_u64(0),
        }
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }
}

impl Environment for TabularEnv {
    fn name(&self) -> &str {
        &self.name
    }

    fn obs_dim(&self) -> usize {
        self.mdp.n_states
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(self.mdp.n_actions)
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = SimRng::seed_from_u64(seed);
        self.state = sample_categorical(&self.mdp.rho0, &mut self.rng);
        self.t = 0;
        self.done = false;
        one_hot(self.state, self.mdp.n_states)
    }

    fn step(&mut self, action: &Action) -> Result<EnvStep> {
        if self.done {
            return Err(Error::usage("step called on a finished episode; reset first"));
        }
        let a = match action {
            Action::Discrete(a) if *a < self.mdp.n_actions => *a,
            other => return Err(Error::usage(format!("invalid action {other:?} for {}", self.name))),
        };
        let reward = self.mdp.reward[self.state];
        self.state = sample_categorical(self.mdp.next_state_probs(self.state, a), &mut self.rng);
        self.t += 1;
        let truncated = self.t >= self.max_steps;
        self.done = truncated;
        Ok(EnvStep {
            next_state: one_hot(self.state, self.mdp.n_states),
            reward,
            terminal: false,
            truncated,
        })
    }

    fn tabular(&self) -> Option<&TabularMdp> {
        Some(&self.mdp)
    }

    fn state_index(&self) -> Option<usize> {
        Some(self.state)
    }
}

/// Knobs for the built-in environments. Unused fields are ignored by the
/// environments they do not apply to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    /// Number of chain states.
    pub n: usize,
    pub width: usize,
    pub height: usize,
    /// Goal cell as `(column, row)`.
    pub goal: (usize, usize),
    /// Probability that a tabular move is replaced by a different one.
    pub slip: f64,
    pub gamma: f64,
    /// Episode cap; 0 selects the environment's default.
    pub max_steps: usize,
    /// Point-mass integration step.
    pub dt: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            n: 5,
            width: 4,
            height: 4,
            goal: (3, 3),
            slip: 0.0,
            gamma: 0.99,
            max_steps: 0,
            dt: 0.1,
        }
    }
}

pub const GRIDWORLD_CAP: usize = 100;
pub const CHAIN_CAP: usize = 1000;
pub const POINT_MASS_CAP: usize = 200;

/// Registry of built-in environments.
pub fn make_builtin(name: &str, params: &EnvParams) -> Result<Box<dyn Environment>> {
    let cap = |default: usize| if params.max_steps == 0 { default } else { params.max_steps };
    match name {
        "chain" => Ok(Box::new(TabularEnv::new(name, chain_mdp(params)?, cap(CHAIN_CAP)))),
        "gridworld" => Ok(Box::new(TabularEnv::new(name, gridworld_mdp(params)?, cap(GRIDWORLD_CAP)))),
        "point_mass" => Ok(Box::new(PointMass::new(params.dt, cap(POINT_MASS_CAP)))),
        other => Err(Error::config(format!(
            "unknown environment '{other}' (expected chain, gridworld or point_mass)"
        ))),
    }
}

/// `n`-state chain. Action 0 moves left, 1 moves right; with probability `slip`
/// the move is reversed. The ends are walls. Reward 1 in the rightmost state,
/// start in the leftmost.
pub fn chain_mdp(params: &EnvParams) -> Result<TabularMdp> {
    let n = params.n;
    if n < 2 {
        return Err(Error::config("chain needs at least 2 states"));
    }
    check_prob("slip", params.slip)?;
    let mut p = vec![0.0; n * 2 * n];
    for s in 0..n {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(n - 1);
        for a in 0..2 {
            let (intended, reversed) = if a == 0 { (left, right) } else { (right, left) };
            let row = &mut p[(s * 2 + a) * n..(s * 2 + a + 1) * n];
            row[intended] += 1.0 - params.slip;
            row[reversed] += params.slip;
        }
    }
    let mut reward = vec![0.0; n];
    reward[n - 1] = 1.0;
    TabularMdp::new(n, 2, p, reward, one_hot(0, n), params.gamma)
}

pub const GRID_UP: usize = 0;
pub const GRID_RIGHT: usize = 1;
pub const GRID_DOWN: usize = 2;
pub const GRID_LEFT: usize = 3;

/// `width x height` grid, cell index `row * width + col`, start at `(0, 0)`.
/// Actions up/right/down/left; bumping a wall stays put. With probability
/// `slip` one of the other three moves happens instead (uniformly). The goal
/// cell pays 1 and is absorbing.
pub fn gridworld_mdp(params: &EnvParams) -> Result<TabularMdp> {
    let (w, h) = (params.width, params.height);
    if w == 0 || h == 0 || w * h < 2 {
        return Err(Error::config("gridworld needs at least 2 cells"));
    }
    let (gc, gr) = params.goal;
    if gc >= w || gr >= h {
        return Err(Error::config(format!("goal {:?} outside {w}x{h} grid", params.goal)));
    }
    check_prob("slip", params.slip)?;
    let n = w * h;
    let goal = gr * w + gc;
    let mv = |s: usize, a: usize| -> usize {
        let (r, c) = (s / w, s % w);
        match a {
            GRID_UP if r > 0 => s - w,
            GRID_RIGHT if c + 1 < w => s + 1,
            GRID_DOWN if r + 1 < h => s + w,
            GRID_LEFT if c > 0 => s - 1,
            _ => s,
        }
    };
    let mut p = vec![0.0; n * 4 * n];
    for s in 0..n {
        for a in 0..4 {
            let row = &mut p[(s * 4 + a) * n..(s * 4 + a + 1) * n];
            if s == goal {
                row[s] = 1.0;
                continue;
            }
            for b in 0..4 {
                let prob = if b == a { 1.0 - params.slip } else { params.slip / 3.0 };
                row[mv(s, b)] += prob;
            }
        }
    }
    let mut reward = vec![0.0; n];
    reward[goal] = 1.0;
    TabularMdp::new(n, 4, p, reward, one_hot(0, n), params.gamma)
}

fn check_prob(what: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(format!("{what} = {p} is not a probability")))
    }
}

/// 2D double integrator: observation `(x, y, vx, vy)`, action an acceleration
/// in `[-1, 1]^2`, reward `-(|p|^2 + 0.1 |v|^2)` of the current state.
/// Integrated with velocity Verlet, which is exactly time-reversible. The
/// arena is a box: a coordinate leaving `[-POINT_MASS_POS_BOUND, POINT_MASS_POS_BOUND]`
/// is clamped with its velocity zeroed, and speeds are clamped per axis.
#[derive(Debug, Clone)]
pub struct PointMass {
    dt: f64,
    max_steps: usize,
    state: [f64; 4],
    t: usize,
    done: bool,
}

pub const POINT_MASS_START_POS: f64 = 1.0;
pub const POINT_MASS_START_VEL: f64 = 0.2;
pub const POINT_MASS_POS_BOUND: f64 = 2.0;
pub const POINT_MASS_VEL_BOUND: f64 = 3.0;

impl PointMass {
    pub fn new(dt: f64, max_steps: usize) -> Self {
        Self { dt, max_steps, state: [0.0; 4], t: 0, done: true }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    /// Places the mass at an arbitrary state and starts a fresh episode there.
    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
        self.t = 0;
        self.done = false;
    }

    pub fn state_reward(s: &[f64]) -> f64 {
        -(s[0] * s[0] + s[1] * s[1] + 0.1 * (s[2] * s[2] + s[3] * s[3]))
    }

    /// One integration step, without clipping or bookkeeping.
    pub fn integrate(state: [f64; 4], accel: [f64; 2], dt: f64) -> [f64; 4] {
        let [x, y, vx, vy] = state;
        let hx = vx + 0.5 * dt * accel[0];
        let hy = vy + 0.5 * dt * accel[1];
        let nx = x + dt * hx;
        let ny = y + dt * hy;
        [nx, ny, hx + 0.5 * dt * accel[0], hy + 0.5 * dt * accel[1]]
    }

    /// Applies the arena walls and the speed limit.
    pub fn confine(mut s: [f64; 4]) -> [f64; 4] {
        for i in 0..2 {
            if s[i].abs() > POINT_MASS_POS_BOUND {
                s[i] = s[i].clamp(-POINT_MASS_POS_BOUND, POINT_MASS_POS_BOUND);
                s[i + 2] = 0.0;
            }
            s[i + 2] = s[i + 2].clamp(-POINT_MASS_VEL_BOUND, POINT_MASS_VEL_BOUND);
        }
        s
    }
}

impl Environment for PointMass {
    fn name(&self) -> &str {
        "point_mass"
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous { low: vec![-1.0; 2], high: vec![1.0; 2] }
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = SimRng::seed_from_u64(seed);
        let p = POINT_MASS_START_POS;
        let v = POINT_MASS_START_VEL;
        self.state = [
            rng.random_range(-p..=p),
            rng.random_range(-p..=p),
            rng.random_range(-v..=v),
            rng.random_range(-v..=v),
        ];
        self.t = 0;
        self.done = false;
        self.state.to_vec()
    }

    fn step(&mut self, action: &Action) -> Result<EnvStep> {
        if self.done {
            return Err(Error::usage("step called on a finished episode; reset first"));
        }
        let a = match action {
            Action::Continuous(a) if a.len() == 2 => a,
            other => return Err(Error::usage(format!("invalid action {other:?} for point_mass"))),
        };
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric("non-finite action"));
        }
        let accel = [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)];
        let reward = Self::state_reward(&self.state);
        self.state = Self::confine(Self::integrate(self.state, accel, self.dt));
        self.t += 1;
        let truncated = self.t >= self.max_steps;
        self.done = truncated;
        Ok(EnvStep { next_state: self.state.to_vec(), reward, terminal: false, truncated })
    }
}

/// Rolls one episode with `act`, returning visited observations, the actions
/// taken and the undiscounted return.
pub fn rollout<F>(env: &mut dyn Environment, seed: u64, mut act: F) -> Result<(Vec<Observation>, Vec<Action>, f64)>
where
    F: FnMut(&[f64]) -> Result<Action>,
{
    let mut obs = env.reset(seed);
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut total = 0.0;
    loop {
        let a = act(&obs)?;
        let step = env.step(&a)?;
        let done = step.done();
        total += step.reward;
        states.push(std::mem::replace(&mut obs, step.next_state));
        actions.push(a);
        if done {
            break;
        }
    }
    Ok((states, actions, total))
}
