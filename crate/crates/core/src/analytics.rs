//! Aggregations behind the config, scenario and interaction views.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{spawn_snakes, AgentAction, EventKind, GameMode, ScenarioConfig, DEATH_LEVELS, TIME_LEVELS};
use crate::trace::{AgentKey, DatasetIndex, EpisodeTrace, IndexEntry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("unknown agents: {}", join(.0))]
    UnknownAgent(Vec<AgentKey>),
    #[error("duplicate agents: {}", join(.0))]
    DuplicateAgent(Vec<AgentKey>),
    #[error("invalid scenario {scenario_id}: {message}")]
    InvalidScenario { scenario_id: String, message: String },
}

fn join(keys: &[AgentKey]) -> String {
    keys.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// Anything that can resolve a scenario id to its config.
pub trait ScenarioLookup {
    fn scenario_config(&self, scenario_id: &str) -> Option<&ScenarioConfig>;
}

impl ScenarioLookup for DatasetIndex {
    fn scenario_config(&self, scenario_id: &str) -> Option<&ScenarioConfig> {
        self.config(scenario_id)
    }
}

impl ScenarioLookup for BTreeMap<String, EpisodeTrace> {
    fn scenario_config(&self, scenario_id: &str) -> Option<&ScenarioConfig> {
        self.get(scenario_id).map(|t| &t.config)
    }
}

impl ScenarioLookup for BTreeMap<String, IndexEntry> {
    fn scenario_config(&self, scenario_id: &str) -> Option<&ScenarioConfig> {
        self.get(scenario_id).map(|e| &e.config)
    }
}

/// Rejects unknown and repeated keys, naming every offender once.
pub fn validate_selection(selection: &[AgentKey], lookup: &impl ScenarioLookup) -> Result<(), AnalyticsError> {
    let mut seen = BTreeSet::new();
    let mut unknown = Vec::new();
    let mut dupes = BTreeSet::new();
    for key in selection {
        let known = lookup.scenario_config(&key.scenario_id).is_some_and(|c| key.agent_id < c.num_agents);
        if !known && !unknown.contains(key) {
            unknown.push(key.clone());
        }
        if !seen.insert(key) {
            dupes.insert(key.clone());
        }
    }
    if !unknown.is_empty() {
        return Err(AnalyticsError::UnknownAgent(unknown));
    }
    if !dupes.is_empty() {
        return Err(AnalyticsError::DuplicateAgent(dupes.into_iter().collect()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeCounts {
    pub walls: u64,
    pub wrap: u64,
}

impl ModeCounts {
    fn bump(&mut self, mode: GameMode) {
        match mode {
            GameMode::Walls => self.walls += 1,
            GameMode::Wrap => self.wrap += 1,
        }
    }
}

/// Environment settings of a selection, counted once per selected agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigDistribution {
    pub total: u64,
    pub game_mode: ModeCounts,
    /// Keys 2, 3 and 4 are always present.
    pub agent_count: BTreeMap<usize, u64>,
    /// Rows follow `time_levels`, columns `death_levels`.
    pub reward_heatmap: [[u64; 3]; 4],
    pub time_levels: [f64; 4],
    pub death_levels: [f64; 3],
    /// Agents whose reward levels fall outside the heatmap axes.
    pub off_grid: u64,
}

impl ConfigDistribution {
    pub fn empty() -> Self {
        ConfigDistribution {
            total: 0,
            game_mode: ModeCounts::default(),
            agent_count: [(2, 0), (3, 0), (4, 0)].into_iter().collect(),
            reward_heatmap: [[0; 3]; 4],
            time_levels: TIME_LEVELS,
            death_levels: DEATH_LEVELS,
            off_grid: 0,
        }
    }

    fn add(&mut self, cfg: &ScenarioConfig) {
        self.total += 1;
        self.game_mode.bump(cfg.game_mode);
        *self.agent_count.entry(cfg.num_agents).or_default() += 1;
        let row = TIME_LEVELS.iter().position(|&t| t == cfg.time_reward);
        let col = DEATH_LEVELS.iter().position(|&d| d == cfg.death_reward);
        match (row, col) {
            (Some(r), Some(c)) => self.reward_heatmap[r][c] += 1,
            _ => self.off_grid += 1,
        }
    }

    pub fn heatmap_total(&self) -> u64 {
        self.reward_heatmap.iter().flatten().sum()
    }
}

pub fn config_distribution(
    selection: &[AgentKey],
    lookup: &impl ScenarioLookup,
) -> Result<ConfigDistribution, AnalyticsError> {
    validate_selection(selection, lookup)?;
    let mut dist = ConfigDistribution::empty();
    for key in selection {
        dist.add(lookup.scenario_config(&key.scenario_id).expect("validated"));
    }
    Ok(dist)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCounts {
    pub straight: u64,
    pub turn_left: u64,
    pub turn_right: u64,
}

impl ActionCounts {
    fn bump(&mut self, a: AgentAction) {
        match a {
            AgentAction::Straight => self.straight += 1,
            AgentAction::TurnLeft => self.turn_left += 1,
            AgentAction::TurnRight => self.turn_right += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.straight + self.turn_left + self.turn_right
    }

    /// All zero when no action was taken.
    pub fn rates(&self) -> ActionRates {
        let n = self.total();
        if n == 0 {
            return ActionRates::default();
        }
        let n = n as f64;
        ActionRates {
            straight: self.straight as f64 / n,
            turn_left: self.turn_left as f64 / n,
            turn_right: self.turn_right as f64 / n,
        }
    }

    fn merge(&mut self, other: &ActionCounts) {
        self.straight += other.straight;
        self.turn_left += other.turn_left;
        self.turn_right += other.turn_right;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionRates {
    pub straight: f64,
    pub turn_left: f64,
    pub turn_right: f64,
}

/// Signed reward totals by source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub fruit: f64,
    pub time: f64,
    pub death: f64,
}

impl RewardBreakdown {
    fn from_counts(cfg: &ScenarioConfig, fruits: u64, alive_steps: u64, deaths: u64) -> Self {
        RewardBreakdown {
            fruit: cfg.fruit_reward * fruits as f64,
            time: cfg.time_reward * alive_steps as f64,
            death: cfg.death_reward * deaths as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBreakdown {
    pub agent_id: usize,
    pub action_counts: ActionCounts,
    pub action_rates: ActionRates,
    pub reward_breakdown: RewardBreakdown,
    pub fruits: u64,
    pub alive_steps: u64,
    pub died: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario_id: String,
    pub config: ScenarioConfig,
    /// Pooled over every agent of the scenario.
    pub action_counts: ActionCounts,
    pub action_rates: ActionRates,
    pub reward_breakdown: RewardBreakdown,
    pub agents: Vec<AgentBreakdown>,
}

pub fn scenario_summary(trace: &EpisodeTrace) -> ScenarioSummary {
    let cfg = &trace.config;
    let n = cfg.num_agents;
    let mut counts = vec![ActionCounts::default(); n];
    let mut fruits = vec![0u64; n];
    let mut deaths = vec![0u64; n];
    for step in &trace.steps {
        for a in &step.agents {
            if let (Some(action), Some(c)) = (a.action, counts.get_mut(a.agent_id)) {
                c.bump(action);
            }
        }
        for e in &step.events {
            let bucket = match e.kind {
                EventKind::FruitEaten => &mut fruits,
                EventKind::Death => &mut deaths,
            };
            if let Some(v) = bucket.get_mut(e.agent_id) {
                *v += 1;
            }
        }
    }
    let agents: Vec<AgentBreakdown> = (0..n)
        .map(|id| AgentBreakdown {
            agent_id: id,
            action_counts: counts[id],
            action_rates: counts[id].rates(),
            reward_breakdown: RewardBreakdown::from_counts(cfg, fruits[id], counts[id].total(), deaths[id]),
            fruits: fruits[id],
            alive_steps: counts[id].total(),
            died: deaths[id] > 0,
        })
        .collect();
    let mut pooled = ActionCounts::default();
    agents.iter().for_each(|a| pooled.merge(&a.action_counts));
    let reward_breakdown = RewardBreakdown::from_counts(
        cfg,
        fruits.iter().sum(),
        pooled.total(),
        deaths.iter().sum(),
    );
    ScenarioSummary {
        scenario_id: cfg.scenario_id.clone(),
        config: cfg.clone(),
        action_counts: pooled,
        action_rates: pooled.rates(),
        reward_breakdown,
        agents,
    }
}

/// Summaries of the distinct scenarios covering `selection`, by id.
pub fn selection_scenarios(
    selection: &[AgentKey],
    traces: &BTreeMap<String, EpisodeTrace>,
) -> Result<Vec<ScenarioSummary>, AnalyticsError> {
    validate_selection(selection, traces)?;
    let ids: BTreeSet<&str> = selection.iter().map(|k| k.scenario_id.as_str()).collect();
    Ok(ids.into_iter().map(|id| scenario_summary(&traces[id])).collect())
}

/// Head visits per cell, `grid[y][x]`, counting the spawn cell once.
pub fn visit_heatmap(trace: &EpisodeTrace, agent_id: usize) -> Result<Vec<Vec<u32>>, AnalyticsError> {
    let cfg = &trace.config;
    if agent_id >= cfg.num_agents {
        return Err(AnalyticsError::UnknownAgent(vec![AgentKey::new(trace.scenario_id(), agent_id)]));
    }
    let invalid = |message: String| AnalyticsError::InvalidScenario { scenario_id: cfg.scenario_id.clone(), message };
    let snakes = spawn_snakes(cfg).map_err(|e| invalid(e.to_string()))?;
    let spawn = snakes[agent_id].head().ok_or_else(|| invalid("snake spawned without a body".into()))?;
    let (w, h) = (cfg.grid_width as usize, cfg.grid_height as usize);
    let mut grid = vec![vec![0u32; w]; h];
    let heads = std::iter::once(spawn).chain(trace.agent_steps(agent_id).filter(|s| s.action.is_some()).filter_map(|s| s.head));
    for c in heads {
        let (x, y) = (usize::try_from(c.x), usize::try_from(c.y));
        match (x, y) {
            (Ok(x), Ok(y)) if x < w && y < h => grid[y][x] += 1,
            _ => return Err(invalid(format!("head {:?} outside the board", (c.x, c.y)))),
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardType {
    Fruit,
    Death,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMarker {
    pub tick: u32,
    pub agent_id: usize,
    pub kind: EventKind,
    pub reward_type: RewardType,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub agent_id: usize,
    pub reward: f64,
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineTick {
    pub tick: u32,
    pub agents: Vec<TimelinePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTimeline {
    pub ticks: Vec<TimelineTick>,
    pub markers: Vec<EventMarker>,
}

pub fn reward_timeline(trace: &EpisodeTrace) -> RewardTimeline {
    let mut cumulative = vec![0.0; trace.config.num_agents];
    let mut ticks = Vec::with_capacity(trace.steps.len());
    let mut markers = Vec::new();
    for step in &trace.steps {
        let agents = step
            .agents
            .iter()
            .map(|a| {
                // Dead agents hold their total.
                let reward = if a.action.is_some() { a.reward } else { 0.0 };
                if a.action.is_some() {
                    cumulative[a.agent_id] += a.reward;
                }
                TimelinePoint { agent_id: a.agent_id, reward, cumulative: cumulative[a.agent_id] }
            })
            .collect();
        ticks.push(TimelineTick { tick: step.tick, agents });
        markers.extend(step.events.iter().map(|e| EventMarker {
            tick: e.tick,
            agent_id: e.agent_id,
            kind: e.kind,
            reward_type: match e.kind {
                EventKind::FruitEaten => RewardType::Fruit,
                EventKind::Death => RewardType::Death,
            },
        }));
    }
    RewardTimeline { ticks, markers }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentInteraction {
    pub agent_id: usize,
    pub visits: Vec<Vec<u32>>,
    pub alive_steps: u32,
    pub total_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionDetail {
    pub scenario_id: String,
    pub grid_width: i32,
    pub grid_height: i32,
    pub agents: Vec<AgentInteraction>,
    pub timeline: Vec<TimelineTick>,
    pub markers: Vec<EventMarker>,
}

pub fn interaction_detail(trace: &EpisodeTrace) -> Result<InteractionDetail, AnalyticsError> {
    let agents = trace
        .summary
        .iter()
        .map(|s| {
            Ok(AgentInteraction {
                agent_id: s.agent_id,
                visits: visit_heatmap(trace, s.agent_id)?,
                alive_steps: s.alive_steps,
                total_reward: s.total_reward,
            })
        })
        .collect::<Result<_, AnalyticsError>>()?;
    let RewardTimeline { ticks, markers } = reward_timeline(trace);
    Ok(InteractionDetail {
        scenario_id: trace.scenario_id().to_owned(),
        grid_width: trace.config.grid_width,
        grid_height: trace.config.grid_height,
        agents,
        timeline: ticks,
        markers,
    })
}
