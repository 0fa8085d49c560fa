//! Independent tabular Q-learning, one table per agent per scenario.
//!
//! All agents of a scenario learn at the same time in the shared board, each
//! from its own observation and reward stream. After training, one greedy
//! evaluation episode is rolled out and recorded as the scenario's trace.
//!
//! Seeds are derived, never drawn: episode `k` of scenario `id` under master
//! seed `m` always uses `episode_seed(m, id, k)`, so scenarios can be trained
//! in any order or in parallel without changing a single byte of output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{self, AgentAction, EnvError, GameState, Observation, ScenarioConfig};
use crate::trace::{self, EpisodeTrace, StepRecord};

pub const STATE_BITS: usize = 11;
pub const NUM_STATES: usize = 1 << STATE_BITS;
pub const NUM_ACTIONS: usize = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("non-finite Q value {value} at state {state}, action {action}")]
    NonFinite { state: usize, action: usize, value: f64 },
    #[error("invalid training spec: {0}")]
    Spec(String),
    #[error("duplicate scenario id {0}")]
    DuplicateScenario(String),
    #[error("scenario {scenario_id} failed: {source}")]
    Scenario {
        scenario_id: String,
        #[source]
        source: Box<TrainError>,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub episodes: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub eval_epsilon: f64,
    pub master_seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            episodes: 500,
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            eval_epsilon: 0.0,
            master_seed: 0,
        }
    }
}

impl TrainSpec {
    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }

    pub fn with_episodes(mut self, episodes: usize) -> Self {
        self.episodes = episodes;
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(TrainError::Spec(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(TrainError::Spec(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(unit(self.epsilon_start) && unit(self.epsilon_end) && unit(self.eval_epsilon)) {
            return Err(TrainError::Spec("epsilons must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Exploration rate for training episode `episode`, linear from start to end.
    pub fn epsilon(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.epsilon_start;
        }
        let frac = episode as f64 / (self.episodes - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Action-value table over packed observations.
#[derive(Debug, Clone, PartialEq)]
pub struct QPolicy {
    pub agent_id: usize,
    table: Vec<f64>,
    pub hyperparameters: TrainSpec,
}

impl QPolicy {
    pub fn zeros(agent_id: usize, hyperparameters: TrainSpec) -> Self {
        QPolicy { agent_id, table: vec![0.0; NUM_STATES * NUM_ACTIONS], hyperparameters }
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.table[state * NUM_ACTIONS..(state + 1) * NUM_ACTIONS]
    }

    pub fn get(&self, state: usize, action: AgentAction) -> f64 {
        self.table[state * NUM_ACTIONS + action.index()]
    }

    pub fn set(&mut self, state: usize, action: AgentAction, value: f64) {
        self.table[state * NUM_ACTIONS + action.index()] = value;
    }

    /// Lowest-index action among the maxima of row `state`.
    pub fn greedy(&self, state: usize) -> AgentAction {
        let row = self.row(state);
        let mut best = 0;
        for (i, &q) in row.iter().enumerate().skip(1) {
            if q > row[best] {
                best = i;
            }
        }
        AgentAction::ALL[best]
    }

    fn max_value(&self, state: usize) -> f64 {
        self.row(state).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Little-endian f64 dump, state-major.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.table.iter().flat_map(|q| q.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(agent_id: usize, hyperparameters: TrainSpec, bytes: &[u8]) -> Option<Self> {
        if bytes.len() != NUM_STATES * NUM_ACTIONS * 8 {
            return None;
        }
        let table = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Some(QPolicy { agent_id, table, hyperparameters })
    }
}

/// Bit `i` of the state index is observation bit `i`.
pub fn pack_state(obs: &Observation) -> usize {
    obs.bits().iter().enumerate().fold(0, |acc, (i, &b)| acc | (usize::from(b) << i))
}

/// Epsilon-greedy action choice. The generator is only consulted when
/// `epsilon > 0`.
pub fn select_action<R: Rng + ?Sized>(policy: &QPolicy, state: usize, epsilon: f64, rng: &mut R) -> AgentAction {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        AgentAction::ALL[rng.gen_range(0..NUM_ACTIONS)]
    } else {
        policy.greedy(state)
    }
}

/// One-step Q-learning update of the single entry `(state, action)`.
#[allow(clippy::too_many_arguments)]
pub fn q_update(
    policy: &mut QPolicy,
    state: usize,
    action: AgentAction,
    reward: f64,
    next_state: usize,
    terminal: bool,
    alpha: f64,
    gamma: f64,
) -> Result<(), TrainError> {
    let bootstrap = if terminal { 0.0 } else { gamma * policy.max_value(next_state) };
    let q = policy.get(state, action);
    let value = q + alpha * (reward + bootstrap - q);
    if !value.is_finite() {
        return Err(TrainError::NonFinite { state, action: action.index(), value });
    }
    policy.set(state, action, value);
    Ok(())
}

fn hash_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// `SHA-256(len‖"episode" ‖ len‖master_le ‖ len‖scenario_id ‖ len‖episode_le)`, first 8 bytes LE.
pub fn episode_seed(master_seed: u64, scenario_id: &str, episode: u64) -> u64 {
    hash_seed(&[b"episode", &master_seed.to_le_bytes(), scenario_id.as_bytes(), &episode.to_le_bytes()])
}

/// Seed of the canonical evaluation episode, independent of the episode count.
pub fn eval_seed(master_seed: u64, scenario_id: &str) -> u64 {
    hash_seed(&[b"eval", &master_seed.to_le_bytes(), scenario_id.as_bytes()])
}

/// Exploration draws use stream 1 of the episode seed; the board uses stream 0.
fn exploration_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Plays one episode to termination. With `learn` set, every agent updates its
/// own table after each step. Returns the recorded step log.
fn play_episode(
    game: &mut GameState,
    policies: &mut [QPolicy],
    epsilon: f64,
    rng: &mut ChaCha8Rng,
    learn: Option<(f64, f64)>,
    record: bool,
) -> Result<Vec<StepRecord>, TrainError> {
    let mut steps = Vec::new();
    let mut states = vec![0usize; policies.len()];
    let mut actions = BTreeMap::new();
    while !game.is_terminal() {
        actions.clear();
        for id in game.alive_ids().collect::<Vec<_>>() {
            let s = pack_state(&env::observe(game, id)?);
            states[id] = s;
            actions.insert(id, select_action(&policies[id], s, epsilon, rng));
        }
        let heads = trace::heads(game);
        let outcome = game.step(&actions)?;
        if let Some((alpha, gamma)) = learn {
            let done = game.is_terminal();
            for (&id, &a) in &actions {
                let alive = game.snakes[id].alive;
                let next = if alive { pack_state(&env::observe(game, id)?) } else { 0 };
                let r = outcome.rewards[&id];
                q_update(&mut policies[id], states[id], a, r, next, !alive || done, alpha, gamma)?;
            }
        }
        if record {
            steps.push(trace::record_step(game, &heads, &actions, &outcome));
        }
    }
    Ok(steps)
}

/// Trained policies plus the canonical evaluation trace of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub policies: Vec<QPolicy>,
    pub trace: EpisodeTrace,
}

pub fn train_scenario(config: &ScenarioConfig, spec: &TrainSpec) -> Result<ScenarioRun, TrainError> {
    spec.validate()?;
    config.validate()?;
    let mut policies: Vec<QPolicy> = (0..config.num_agents).map(|id| QPolicy::zeros(id, spec.clone())).collect();
    for episode in 0..spec.episodes {
        let seed = episode_seed(spec.master_seed, &config.scenario_id, episode as u64);
        let mut game = env::new_game(config, seed)?;
        let mut rng = exploration_rng(seed);
        play_episode(&mut game, &mut policies, spec.epsilon(episode), &mut rng, Some((spec.alpha, spec.gamma)), false)?;
    }
    let seed = eval_seed(spec.master_seed, &config.scenario_id);
    let trace = evaluate(config, &policies, seed, spec.eval_epsilon)?;
    Ok(ScenarioRun { config: config.clone(), policies, trace })
}

/// Rolls out one episode with fixed policies. Reproducible from
/// `(config, policies, seed, epsilon)` alone.
pub fn evaluate(
    config: &ScenarioConfig,
    policies: &[QPolicy],
    seed: u64,
    epsilon: f64,
) -> Result<EpisodeTrace, TrainError> {
    let mut game = env::new_game(config, seed)?;
    let mut rng = exploration_rng(seed);
    let mut policies = policies.to_vec();
    let steps = play_episode(&mut game, &mut policies, epsilon, &mut rng, None, true)?;
    Ok(EpisodeTrace::new(config.clone(), seed, steps))
}

/// Trains every scenario of `grid` on up to `parallel` worker threads.
/// Output is in grid order and identical for any worker count.
pub fn run_grid(grid: &[ScenarioConfig], spec: &TrainSpec, parallel: usize) -> Result<Vec<ScenarioRun>, TrainError> {
    spec.validate()?;
    let mut seen = std::collections::BTreeSet::new();
    for c in grid {
        if !seen.insert(c.scenario_id.as_str()) {
            return Err(TrainError::DuplicateScenario(c.scenario_id.clone()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| TrainError::Pool(e.to_string()))?;
    let results: Vec<Result<ScenarioRun, TrainError>> =
        pool.install(|| grid.par_iter().map(|c| train_scenario(c, spec)).collect());
    results
        .into_iter()
        .zip(grid)
        .map(|(r, c)| {
            r.map_err(|e| TrainError::Scenario { scenario_id: c.scenario_id.clone(), source: Box::new(e) })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySidecar {
    pub scenario_id: String,
    pub agent_id: usize,
    pub hyperparameters: TrainSpec,
}

/// Writes `agent-<id>.bin` and `agent-<id>.json` under `dir`; returns the
/// binary paths.
pub fn write_policies(dir: &Path, scenario_id: &str, policies: &[QPolicy]) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::with_capacity(policies.len());
    for p in policies {
        let bin = dir.join(format!("agent-{}.bin", p.agent_id));
        fs::File::create(&bin)?.write_all(&p.to_le_bytes())?;
        let sidecar = PolicySidecar {
            scenario_id: scenario_id.to_owned(),
            agent_id: p.agent_id,
            hyperparameters: p.hyperparameters.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar).map_err(std::io::Error::other)?;
        fs::write(dir.join(format!("agent-{}.json", p.agent_id)), json + "\n")?;
        out.push(bin);
    }
    Ok(out)
}

pub fn read_policy(bin: &Path) -> std::io::Result<QPolicy> {
    let sidecar: PolicySidecar = serde_json::from_slice(&fs::read(bin.with_extension("json"))?)?;
    let bytes = fs::read(bin)?;
    QPolicy::from_le_bytes(sidecar.agent_id, sidecar.hyperparameters, &bytes).ok_or_else(|| {
        std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: wrong table size", bin.display()))
    })
}
