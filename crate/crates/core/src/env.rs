//! Multi-agent snake gridworld.
//!
//! Every alive snake moves one cell per tick, all at the same time. Actions
//! are relative to the current heading, so a snake can never reverse into its
//! own neck. Collisions are resolved against the post-move heads and the
//! pre-move bodies, where a tail counts as vacated unless its owner is about
//! to eat:
//!
//! | situation                                  | outcome                     |
//! |--------------------------------------------|-----------------------------|
//! | head leaves the grid (walls mode)          | `Death(Wall)`               |
//! | head enters a cell of its own body         | `Death(SelfCollision)`      |
//! | head enters a cell of another snake's body | `Death(AgentCollision)`     |
//! | two or more heads enter the same free cell | all of them `Death(HeadOn)` |
//! | head enters a fruit cell and survives      | `FruitEaten`, grows by one  |
//!
//! Dead snakes are removed from the board immediately. The board always holds
//! one fruit per alive snake (while free cells remain), and new fruit is drawn
//! uniformly over the free cells from the game's own seeded generator.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default board side length.
pub const GRID_SIZE: i32 = 16;
/// Default episode step cap.
pub const MAX_STEPS: u32 = 400;
/// Length of a freshly spawned snake.
pub const INITIAL_LENGTH: usize = 3;
/// Reward for eating one fruit, shared by every scenario.
pub const FRUIT_REWARD: f64 = 1.0;
/// Most snakes a board supports (one per corner).
pub const MAX_AGENTS: usize = 4;

/// Per-alive-step reward levels of the default grid, in heatmap order.
pub const TIME_LEVELS: [f64; 4] = [-0.02, -0.01, 0.0, 0.01];
/// Death reward levels of the default grid, in heatmap order.
pub const DEATH_LEVELS: [f64; 3] = [-0.5, -1.0, -2.0];
/// Agent counts of the default grid.
pub const AGENT_COUNTS: [usize; 3] = [2, 3, 4];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameMode {
    /// Leaving the board is fatal.
    Walls,
    /// The board is a torus.
    Wrap,
}

impl GameMode {
    pub const ALL: [GameMode; 2] = [GameMode::Walls, GameMode::Wrap];

    pub fn as_str(self) -> &'static str {
        match self {
            GameMode::Walls => "walls",
            GameMode::Wrap => "wrap",
        }
    }
}

impl fmt::Display for GameMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One environment setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario_id: String,
    pub game_mode: GameMode,
    pub num_agents: usize,
    pub fruit_reward: f64,
    pub time_reward: f64,
    pub death_reward: f64,
    pub grid_width: i32,
    pub grid_height: i32,
    pub max_steps: u32,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Builds a config on the default 16×16 board with the derived id.
    pub fn new(game_mode: GameMode, num_agents: usize, time_reward: f64, death_reward: f64) -> Self {
        ScenarioConfig {
            scenario_id: scenario_id(game_mode, num_agents, time_reward, death_reward),
            game_mode,
            num_agents,
            fruit_reward: FRUIT_REWARD,
            time_reward,
            death_reward,
            grid_width: GRID_SIZE,
            grid_height: GRID_SIZE,
            max_steps: MAX_STEPS,
            seed: 0,
        }
    }

    pub fn with_grid(mut self, width: i32, height: i32) -> Self {
        self.grid_width = width;
        self.grid_height = height;
        self
    }

    pub fn with_max_steps(mut self, max_steps: u32) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::Config(format!("{}: {msg}", self.scenario_id)));
        if self.num_agents == 0 || self.num_agents > MAX_AGENTS {
            return bad(format!("num_agents must be in 1..={MAX_AGENTS}, got {}", self.num_agents));
        }
        if !(self.fruit_reward.is_finite() && self.fruit_reward > 0.0) {
            return bad(format!("fruit_reward must be > 0, got {}", self.fruit_reward));
        }
        if !(self.death_reward.is_finite() && self.death_reward <= 0.0) {
            return bad(format!("death_reward must be <= 0, got {}", self.death_reward));
        }
        if !self.time_reward.is_finite() {
            return bad("time_reward must be finite".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        let min_side = self.grid_width.min(self.grid_height);
        if min_side < 4 {
            return bad(format!(
                "grid {}x{} too small for corner spawns",
                self.grid_width, self.grid_height
            ));
        }
        // Snakes and fruit must leave at least one free cell, otherwise the
        // first fruit eaten can never be replaced.
        let needed = self.num_agents * (INITIAL_LENGTH + 1);
        let cells = (self.grid_width * self.grid_height) as usize;
        if needed >= cells {
            return bad(format!(
                "{} snakes of length {INITIAL_LENGTH} plus {} fruits need more than {cells} cells",
                self.num_agents, self.num_agents
            ));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        (self.grid_width * self.grid_height) as usize
    }
}

/// Canonical scenario id: a pure, injective function of the varied axes.
pub fn scenario_id(game_mode: GameMode, num_agents: usize, time_reward: f64, death_reward: f64) -> String {
    format!("{game_mode}-n{num_agents}-t{time_reward}-d{death_reward}")
}

/// The 72-scenario experiment grid: mode × agents × time reward × death reward.
pub fn default_grid() -> Vec<ScenarioConfig> {
    let mut grid = Vec::with_capacity(72);
    for mode in GameMode::ALL {
        for n in AGENT_COUNTS {
            for time in TIME_LEVELS {
                for death in DEATH_LEVELS {
                    grid.push(ScenarioConfig::new(mode, n, time, death));
                }
            }
        }
    }
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[derive(Serialize, Deserialize)]
#[serde(from = "(i32, i32)", into = "(i32, i32)")]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    fn offset(self, heading: Heading) -> Cell {
        let (dx, dy) = heading.delta();
        Cell::new(self.x + dx, self.y + dy)
    }
}

impl From<(i32, i32)> for Cell {
    fn from((x, y): (i32, i32)) -> Self {
        Cell { x, y }
    }
}

impl From<Cell> for (i32, i32) {
    fn from(c: Cell) -> Self {
        (c.x, c.y)
    }
}

/// Compass heading. North is towards row 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    const CLOCKWISE: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }

    pub fn turn(self, action: AgentAction) -> Heading {
        let i = self.index();
        match action {
            AgentAction::Straight => self,
            AgentAction::TurnLeft => Self::CLOCKWISE[(i + 3) % 4],
            AgentAction::TurnRight => Self::CLOCKWISE[(i + 1) % 4],
        }
    }
}

/// Relative action. The declaration order is the greedy tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentAction {
    Straight,
    TurnLeft,
    TurnRight,
}

impl AgentAction {
    pub const ALL: [AgentAction; 3] = [AgentAction::Straight, AgentAction::TurnLeft, AgentAction::TurnRight];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<AgentAction> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    FruitEaten,
    Death,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeathCause {
    Wall,
    SelfCollision,
    AgentCollision,
    HeadOn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEvent {
    pub tick: u32,
    pub agent_id: usize,
    pub kind: EventKind,
    pub death_cause: Option<DeathCause>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snake {
    pub agent_id: usize,
    /// Head first. Empty once the snake is dead.
    pub body: VecDeque<Cell>,
    pub heading: Heading,
    pub alive: bool,
}

impl Snake {
    pub fn head(&self) -> Option<Cell> {
        self.body.front().copied()
    }

    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }
}

/// The parts of a [`ScenarioConfig`] the simulation needs on every tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rules {
    pub game_mode: GameMode,
    pub width: i32,
    pub height: i32,
    pub max_steps: u32,
    pub fruit_reward: f64,
    pub time_reward: f64,
    pub death_reward: f64,
}

impl From<&ScenarioConfig> for Rules {
    fn from(c: &ScenarioConfig) -> Self {
        Rules {
            game_mode: c.game_mode,
            width: c.grid_width,
            height: c.grid_height,
            max_steps: c.max_steps,
            fruit_reward: c.fruit_reward,
            time_reward: c.time_reward,
            death_reward: c.death_reward,
        }
    }
}

impl Rules {
    fn in_bounds(&self, c: Cell) -> bool {
        (0..self.width).contains(&c.x) && (0..self.height).contains(&c.y)
    }

    /// Where a head moving from `from` along `heading` ends up; `None` means
    /// it left a walled board.
    fn advance(&self, from: Cell, heading: Heading) -> Option<Cell> {
        let next = from.offset(heading);
        match self.game_mode {
            GameMode::Walls => self.in_bounds(next).then_some(next),
            GameMode::Wrap => Some(Cell::new(next.x.rem_euclid(self.width), next.y.rem_euclid(self.height))),
        }
    }

    fn cell_index(&self, c: Cell) -> usize {
        (c.y * self.width + c.x) as usize
    }
}

/// Result of one simultaneous move.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Ordered by agent id.
    pub events: Vec<StepEvent>,
    /// One entry per agent that was alive when the step began.
    pub rewards: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub rules: Rules,
    pub tick: u32,
    pub snakes: Vec<Snake>,
    /// In spawn order.
    pub fruits: Vec<Cell>,
    pub rng: ChaCha8Rng,
}

/// Deterministic corner spawns, agent `i` in slot `i`: top-left heading east,
/// bottom-right heading west, top-right heading south, bottom-left heading
/// north. Bodies trail back towards their corner.
pub fn spawn_snakes(config: &ScenarioConfig) -> Result<Vec<Snake>, EnvError> {
    config.validate()?;
    let (w, h) = (config.grid_width, config.grid_height);
    let margin = ((w.min(h) - 4) / 2).min(2);
    let len = INITIAL_LENGTH as i32;
    let slots = [
        (Cell::new(margin + len - 1, margin), Heading::E),
        (Cell::new(w - 1 - margin - (len - 1), h - 1 - margin), Heading::W),
        (Cell::new(w - 1 - margin, margin + len - 1), Heading::S),
        (Cell::new(margin, h - 1 - margin - (len - 1)), Heading::N),
    ];
    Ok(slots
        .iter()
        .take(config.num_agents)
        .enumerate()
        .map(|(agent_id, &(head, heading))| {
            let (dx, dy) = heading.delta();
            let body = (0..len).map(|k| Cell::new(head.x - dx * k, head.y - dy * k)).collect();
            Snake { agent_id, body, heading, alive: true }
        })
        .collect())
}

/// Starts a game at tick 0 with corner spawns and seeded fruit.
pub fn new_game(config: &ScenarioConfig, seed: u64) -> Result<GameState, EnvError> {
    let snakes = spawn_snakes(config)?;
    let mut state = GameState {
        rules: Rules::from(config),
        tick: 0,
        snakes,
        fruits: Vec::with_capacity(config.num_agents),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    state.replenish_fruit();
    Ok(state)
}

impl GameState {
    /// Builds an arbitrary position, mostly for tests and hand-made setups.
    /// Agent ids must equal their index in `snakes`.
    pub fn from_parts(rules: Rules, snakes: Vec<Snake>, fruits: Vec<Cell>, seed: u64) -> Self {
        debug_assert!(snakes.iter().enumerate().all(|(i, s)| s.agent_id == i));
        GameState { rules, tick: 0, snakes, fruits, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn alive_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.snakes.iter().filter(|s| s.alive).map(|s| s.agent_id)
    }

    pub fn alive_count(&self) -> usize {
        self.snakes.iter().filter(|s| s.alive).count()
    }

    pub fn snake(&self, agent_id: usize) -> Option<&Snake> {
        self.snakes.get(agent_id)
    }

    /// True once every snake is dead or the step cap is reached.
    pub fn is_terminal(&self) -> bool {
        self.alive_count() == 0 || self.tick >= self.rules.max_steps
    }

    fn is_occupied(&self, c: Cell) -> bool {
        self.snakes.iter().any(|s| s.alive && s.body.contains(&c))
    }

    fn free_cells(&self) -> Vec<Cell> {
        let r = &self.rules;
        let mut taken = vec![false; (r.width * r.height) as usize];
        for s in self.snakes.iter().filter(|s| s.alive) {
            for &c in &s.body {
                taken[r.cell_index(c)] = true;
            }
        }
        for &f in &self.fruits {
            taken[r.cell_index(f)] = true;
        }
        (0..r.height)
            .flat_map(|y| (0..r.width).map(move |x| Cell::new(x, y)))
            .filter(|&c| !taken[r.cell_index(c)])
            .collect()
    }

    /// Restores one fruit per alive snake. Surplus fruit is dropped newest
    /// first; missing fruit is drawn uniformly from the free cells.
    fn replenish_fruit(&mut self) {
        let target = self.alive_count();
        self.fruits.truncate(target);
        if self.fruits.len() == target {
            return;
        }
        let mut free = self.free_cells();
        while self.fruits.len() < target && !free.is_empty() {
            let pick = self.rng.gen_range(0..free.len());
            self.fruits.push(free.remove(pick));
        }
    }

    /// Advances every alive snake by one cell.
    ///
    /// `actions` must be keyed by exactly the alive agent ids.
    pub fn step(&mut self, actions: &BTreeMap<usize, AgentAction>) -> Result<StepOutcome, EnvError> {
        let alive: Vec<usize> = self.alive_ids().collect();
        if !actions.keys().copied().eq(alive.iter().copied()) {
            let unexpected: Vec<usize> = actions.keys().filter(|id| !alive.contains(id)).copied().collect();
            let missing: Vec<usize> = alive.iter().filter(|id| !actions.contains_key(id)).copied().collect();
            return Err(EnvError::Protocol(format!(
                "tick {}: actions for dead or unknown agents {unexpected:?}, missing actions for {missing:?}",
                self.tick
            )));
        }

        let rules = self.rules;
        struct Plan {
            id: usize,
            heading: Heading,
            target: Option<Cell>,
            eats: bool,
        }
        let plans: Vec<Plan> = alive
            .iter()
            .map(|&id| {
                let snake = &self.snakes[id];
                let heading = snake.heading.turn(actions[&id]);
                let target = rules.advance(snake.body[0], heading);
                let eats = target.is_some_and(|t| self.fruits.contains(&t));
                Plan { id, heading, target, eats }
            })
            .collect();

        // Obstacles: pre-move bodies, minus the tail of every snake that is
        // not about to grow.
        let mut owner: Vec<Option<usize>> = vec![None; (rules.width * rules.height) as usize];
        for p in &plans {
            let body = &self.snakes[p.id].body;
            let keep = if p.eats { body.len() } else { body.len() - 1 };
            for &c in body.iter().take(keep) {
                owner[rules.cell_index(c)] = Some(p.id);
            }
        }
        let mut heads_at: Vec<u8> = vec![0; owner.len()];
        for t in plans.iter().filter_map(|p| p.target) {
            heads_at[rules.cell_index(t)] += 1;
        }

        let tick = self.tick;
        let mut events = Vec::new();
        let mut rewards = BTreeMap::new();
        let mut eaten = Vec::new();
        for p in &plans {
            let cause = match p.target {
                None => Some(DeathCause::Wall),
                Some(t) => {
                    let i = rules.cell_index(t);
                    match owner[i] {
                        Some(o) if o == p.id => Some(DeathCause::SelfCollision),
                        Some(_) => Some(DeathCause::AgentCollision),
                        None if heads_at[i] > 1 => Some(DeathCause::HeadOn),
                        None => None,
                    }
                }
            };
            let mut reward = rules.time_reward;
            let snake = &mut self.snakes[p.id];
            match (cause, p.target) {
                (Some(cause), _) => {
                    reward += rules.death_reward;
                    snake.alive = false;
                    snake.body.clear();
                    events.push(StepEvent { tick, agent_id: p.id, kind: EventKind::Death, death_cause: Some(cause) });
                }
                (None, Some(t)) => {
                    snake.heading = p.heading;
                    snake.body.push_front(t);
                    if p.eats {
                        reward += rules.fruit_reward;
                        eaten.push(t);
                        events.push(StepEvent { tick, agent_id: p.id, kind: EventKind::FruitEaten, death_cause: None });
                    } else {
                        snake.body.pop_back();
                    }
                }
                (None, None) => unreachable!("a move off the board is always a wall death"),
            }
            rewards.insert(p.id, reward);
        }

        self.fruits.retain(|f| !eaten.contains(f));
        self.tick += 1;
        self.replenish_fruit();
        Ok(StepOutcome { events, rewards })
    }
}

/// The 11-bit egocentric observation.
///
/// Bit order: danger straight, danger left, danger right; heading N, E, S, W;
/// nearest fruit north, south, west, east.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Observation(pub [bool; 11]);

impl Observation {
    pub const DANGER_STRAIGHT: usize = 0;
    pub const DANGER_LEFT: usize = 1;
    pub const DANGER_RIGHT: usize = 2;
    pub const HEADING_N: usize = 3;
    pub const FRUIT_N: usize = 7;
    pub const FRUIT_S: usize = 8;
    pub const FRUIT_W: usize = 9;
    pub const FRUIT_E: usize = 10;

    pub fn bits(&self) -> &[bool; 11] {
        &self.0
    }
}

/// Signed per-axis displacement from `from` to `to`, returned as the number of
/// steps needed in the positive and negative direction (a `None` side is not
/// a shortest route).
fn axis_routes(from: i32, to: i32, extent: i32, wrap: bool) -> (Option<i32>, Option<i32>) {
    if from == to {
        return (None, None);
    }
    if !wrap {
        let d = to - from;
        return if d > 0 { (Some(d), None) } else { (None, Some(-d)) };
    }
    let fwd = (to - from).rem_euclid(extent);
    let bwd = extent - fwd;
    match fwd.cmp(&bwd) {
        std::cmp::Ordering::Less => (Some(fwd), None),
        std::cmp::Ordering::Greater => (None, Some(bwd)),
        std::cmp::Ordering::Equal => (Some(fwd), Some(bwd)),
    }
}

fn axis_distance(routes: (Option<i32>, Option<i32>)) -> i32 {
    match routes {
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => 0,
    }
}

/// Observation for one alive agent.
pub fn observe(state: &GameState, agent_id: usize) -> Result<Observation, EnvError> {
    let snake = state
        .snake(agent_id)
        .filter(|s| s.alive)
        .ok_or_else(|| EnvError::Protocol(format!("cannot observe dead or unknown agent {agent_id}")))?;
    let rules = &state.rules;
    let head = snake.body[0];
    let mut bits = [false; 11];

    for (slot, action) in AgentAction::ALL.into_iter().enumerate() {
        bits[slot] = match rules.advance(head, snake.heading.turn(action)) {
            None => true,
            Some(c) => state.is_occupied(c),
        };
    }
    bits[Observation::HEADING_N + snake.heading.index()] = true;

    let wrap = rules.game_mode == GameMode::Wrap;
    let nearest = state
        .fruits
        .iter()
        .map(|&f| {
            let dx = axis_routes(head.x, f.x, rules.width, wrap);
            let dy = axis_routes(head.y, f.y, rules.height, wrap);
            (axis_distance(dx) + axis_distance(dy), f.y, f.x, dx, dy)
        })
        .min_by_key(|&(d, y, x, _, _)| (d, y, x));
    if let Some((_, _, _, (east, west), (south, north))) = nearest {
        bits[Observation::FRUIT_N] = north.is_some();
        bits[Observation::FRUIT_S] = south.is_some();
        bits[Observation::FRUIT_W] = west.is_some();
        bits[Observation::FRUIT_E] = east.is_some();
    }
    Ok(Observation(bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rules(mode: GameMode, w: i32, h: i32) -> Rules {
        Rules {
            game_mode: mode,
            width: w,
            height: h,
            max_steps: MAX_STEPS,
            fruit_reward: 1.0,
            time_reward: -0.01,
            death_reward: -1.0,
        }
    }

    fn snake(agent_id: usize, cells: &[(i32, i32)], heading: Heading) -> Snake {
        Snake { agent_id, body: cells.iter().map(|&c| Cell::from(c)).collect(), heading, alive: true }
    }

    fn all(action: AgentAction, state: &GameState) -> BTreeMap<usize, AgentAction> {
        state.alive_ids().map(|id| (id, action)).collect()
    }

    #[test]
    fn new_game_counts() {
        let cfg = ScenarioConfig::new(GameMode::Walls, 2, -0.01, -1.0);
        let g = new_game(&cfg, 7).unwrap();
        assert_eq!(g.tick, 0);
        assert_eq!(g.alive_count(), 2);
        assert_eq!(g.fruits.len(), 2);
        assert_eq!(g.snakes.iter().map(Snake::len).sum::<usize>(), 6);
        assert_eq!(g, new_game(&cfg, 7).unwrap());
    }

    #[test]
    fn spawns_point_inward_and_are_disjoint() {
        let cfg = ScenarioConfig::new(GameMode::Walls, 4, 0.0, -1.0);
        let snakes = spawn_snakes(&cfg).unwrap();
        let heads: Vec<_> = snakes.iter().map(|s| (s.head().unwrap(), s.heading)).collect();
        assert_eq!(
            heads,
            vec![
                (Cell::new(4, 2), Heading::E),
                (Cell::new(11, 13), Heading::W),
                (Cell::new(13, 4), Heading::S),
                (Cell::new(2, 11), Heading::N),
            ]
        );
        let mut cells: Vec<Cell> = snakes.iter().flat_map(|s| s.body.iter().copied()).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 12);
    }

    #[test]
    fn tiny_board_is_rejected() {
        // Corner layout fits exactly: 12 body cells leave 4 free cells for 4
        // fruits and nothing for a replacement.
        let cfg = ScenarioConfig::new(GameMode::Walls, 4, 0.0, -1.0).with_grid(4, 4);
        assert!(matches!(new_game(&cfg, 0), Err(EnvError::Config(_))));
        let cfg = ScenarioConfig::new(GameMode::Walls, 3, 0.0, -1.0).with_grid(4, 4);
        assert!(new_game(&cfg, 0).is_ok());
    }

    #[test]
    fn invalid_rewards_are_rejected() {
        let mut cfg = ScenarioConfig::new(GameMode::Walls, 2, 0.0, 0.5);
        assert!(cfg.validate().is_err());
        cfg.death_reward = -1.0;
        cfg.fruit_reward = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn straight_move_on_wrap_board() {
        let mut g = GameState::from_parts(
            rules(GameMode::Wrap, 5, 5),
            vec![snake(0, &[(2, 2), (1, 2), (0, 2)], Heading::E)],
            vec![Cell::new(0, 0)],
            1,
        );
        let out = g.step(&all(AgentAction::Straight, &g)).unwrap();
        assert_eq!(g.snakes[0].head(), Some(Cell::new(3, 2)));
        assert_eq!(out.rewards[&0], -0.01);
        assert!(out.events.is_empty());
        assert_eq!(g.tick, 1);
    }

    #[test]
    fn wrap_crosses_the_edge() {
        let mut g = GameState::from_parts(
            rules(GameMode::Wrap, 5, 5),
            vec![snake(0, &[(4, 2), (3, 2), (2, 2)], Heading::E)],
            vec![Cell::new(0, 0)],
            1,
        );
        g.step(&all(AgentAction::Straight, &g)).unwrap();
        assert_eq!(g.snakes[0].head(), Some(Cell::new(0, 2)));
    }

    #[test]
    fn wall_death_sums_terms() {
        let mut g = GameState::from_parts(
            rules(GameMode::Walls, 5, 5),
            vec![snake(0, &[(4, 2), (3, 2), (2, 2)], Heading::E)],
            vec![Cell::new(0, 0)],
            1,
        );
        let out = g.step(&all(AgentAction::Straight, &g)).unwrap();
        assert_eq!(out.rewards[&0], -0.01 + -1.0);
        assert!((out.rewards[&0] - -1.01).abs() < 1e-15);
        assert_eq!(
            out.events,
            vec![StepEvent { tick: 0, agent_id: 0, kind: EventKind::Death, death_cause: Some(DeathCause::Wall) }]
        );
        assert!(g.snakes[0].is_empty());
        assert!(g.is_terminal());
        assert!(g.fruits.is_empty());
    }

    /// Two-agent collision table, enumerated by hand.
    #[test]
    fn two_agent_collision_table() {
        let r = rules(GameMode::Walls, 9, 9);
        let causes = |out: &StepOutcome| -> Vec<(usize, Option<DeathCause>)> {
            out.events.iter().filter(|e| e.kind == EventKind::Death).map(|e| (e.agent_id, e.death_cause)).collect()
        };

        // Heads enter the same free cell (4,4).
        let mut g = GameState::from_parts(
            r,
            vec![snake(0, &[(3, 4), (2, 4), (1, 4)], Heading::E), snake(1, &[(5, 4), (6, 4), (7, 4)], Heading::W)],
            vec![Cell::new(0, 0), Cell::new(8, 8)],
            3,
        );
        let out = g.step(&all(AgentAction::Straight, &g)).unwrap();
        assert_eq!(causes(&out), vec![(0, Some(DeathCause::HeadOn)), (1, Some(DeathCause::HeadOn))]);
        assert!(g.snakes.iter().all(|s| s.body.is_empty() && !s.alive));
        assert!(g.fruits.is_empty(), "fruit count tracks the alive count");

        // Heads swap cells: each runs into the other's pre-move head.
        let mut g = GameState::from_parts(
            r,
            vec![snake(0, &[(3, 4), (2, 4), (1, 4)], Heading::E), snake(1, &[(4, 4), (5, 4), (6, 4)], Heading::W)],
            vec![Cell::new(0, 0), Cell::new(8, 8)],
            3,
        );
        let out = g.step(&all(AgentAction::Straight, &g)).unwrap();
        assert_eq!(causes(&out), vec![(0, Some(DeathCause::AgentCollision)), (1, Some(DeathCause::AgentCollision))]);

        // Head into the other's mid body; the other survives.
        let mut g = GameState::from_parts(
            r,
            vec![snake(0, &[(4, 3), (4, 2), (4, 1)], Heading::S), snake(1, &[(5, 4), (4, 4), (3, 4)], Heading::E)],
            vec![Cell::new(0, 0), Cell::new(8, 8)],
            3,
        );
        let out = g.step(&all(AgentAction::Straight, &g)).unwrap();
        assert_eq!(causes(&out), vec![(0, Some(DeathCause::AgentCollision))]);
        assert_eq!(g.snakes[1].head(), Some(Cell::new(6, 4)));

        // Head into the other's tail, which is vacated this tick.
        let mut g = GameState::from_parts(
            r,
            vec![snake(0, &[(3, 3), (3, 2), (3, 1)], Heading::S), snake(1, &[(5, 4), (4, 4), (3, 4)], Heading::E)],
            vec![Cell::new(0, 0), Cell::new(8, 8)],
            3,
        );
        let out = g.step(&all(AgentAction::Straight, &g)).unwrap();
        assert!(causes(&out).is_empty());

        // Same, but the other snake eats this tick so its tail stays.
        let mut g = GameState::from_parts(
            r,
            vec![snake(0, &[(3, 3), (3, 2), (3, 1)], Heading::S), snake(1, &[(5, 4), (4, 4), (3, 4)], Heading::E)],
            vec![Cell::new(6, 4), Cell::new(8, 8)],
            3,
        );
        let out = g.step(&all(AgentAction::Straight, &g)).unwrap();
        assert_eq!(causes(&out), vec![(0, Some(DeathCause::AgentCollision))]);
        assert_eq!(g.snakes[1].len(), 4);
    }

    #[test]
    fn self_collision() {
        // Length-5 snake curled so that turning left re-enters its body.
        let mut g = GameState::from_parts(
            rules(GameMode::Walls, 9, 9),
            vec![snake(0, &[(4, 4), (4, 5), (3, 5), (3, 4), (3, 3)], Heading::N)],
            vec![Cell::new(0, 0)],
            3,
        );
        let mut actions = BTreeMap::new();
        actions.insert(0, AgentAction::TurnLeft);
        let out = g.step(&actions).unwrap();
        assert_eq!(out.events[0].death_cause, Some(DeathCause::SelfCollision));
    }

    #[test]
    fn eating_grows_and_replenishes() {
        let mut g = GameState::from_parts(
            rules(GameMode::Walls, 9, 9),
            vec![snake(0, &[(3, 4), (2, 4), (1, 4)], Heading::E)],
            vec![Cell::new(4, 4)],
            3,
        );
        let out = g.step(&all(AgentAction::Straight, &g)).unwrap();
        assert_eq!(out.events[0].kind, EventKind::FruitEaten);
        assert_eq!(out.rewards[&0], -0.01 + 1.0);
        assert_eq!(g.snakes[0].len(), 4);
        assert_eq!(g.fruits.len(), 1);
        assert!(!g.snakes[0].body.contains(&g.fruits[0]));
    }

    #[test]
    fn protocol_errors() {
        let cfg = ScenarioConfig::new(GameMode::Walls, 2, -0.01, -1.0);
        let mut g = new_game(&cfg, 1).unwrap();
        let mut actions = all(AgentAction::Straight, &g);
        actions.insert(5, AgentAction::Straight);
        assert!(matches!(g.step(&actions), Err(EnvError::Protocol(_))));
        let mut actions = all(AgentAction::Straight, &g);
        actions.remove(&1);
        assert!(matches!(g.step(&actions), Err(EnvError::Protocol(_))));
    }

    #[test]
    fn observation_examples() {
        let lone = |mode, head: (i32, i32), fruit: (i32, i32)| {
            GameState::from_parts(
                rules(mode, 16, 16),
                vec![snake(0, &[head, (head.0 - 1, head.1), (head.0 - 2, head.1)], Heading::E)],
                vec![Cell::from(fruit)],
                0,
            )
        };
        let o = observe(&lone(GameMode::Walls, (8, 8), (12, 8)), 0).unwrap();
        assert_eq!(o.0, [false, false, false, false, true, false, false, false, false, false, true]);

        let o = observe(&lone(GameMode::Walls, (15, 8), (0, 0)), 0).unwrap();
        assert!(o.0[Observation::DANGER_STRAIGHT]);
        assert!(!o.0[Observation::DANGER_LEFT]);
        let o = observe(&lone(GameMode::Wrap, (15, 8), (0, 0)), 0).unwrap();
        assert!(!o.0[Observation::DANGER_STRAIGHT]);

        // NE diagonal: dx = +1, dy = -1.
        let o = observe(&lone(GameMode::Walls, (8, 8), (9, 7)), 0).unwrap();
        assert_eq!(&o.0[7..], &[true, false, false, true]);
    }

    #[test]
    fn observation_is_wrap_aware() {
        let g = GameState::from_parts(
            rules(GameMode::Wrap, 16, 16),
            vec![snake(0, &[(1, 8), (0, 8), (15, 8)], Heading::E)],
            vec![Cell::new(14, 8)],
            0,
        );
        let o = observe(&g, 0).unwrap();
        assert_eq!(&o.0[7..], &[false, false, true, false]);
        // Half a board away both ways counts for both directions.
        let g = GameState::from_parts(
            rules(GameMode::Wrap, 16, 16),
            vec![snake(0, &[(4, 8), (3, 8), (2, 8)], Heading::E)],
            vec![Cell::new(12, 8)],
            0,
        );
        assert_eq!(&observe(&g, 0).unwrap().0[7..], &[false, false, true, true]);
        // Own neck is danger for a right turn after heading north.
        let g = GameState::from_parts(
            rules(GameMode::Walls, 16, 16),
            vec![snake(0, &[(4, 4), (4, 5), (5, 5), (5, 4)], Heading::N)],
            vec![Cell::new(12, 8)],
            0,
        );
        let o = observe(&g, 0).unwrap();
        assert_eq!(&o.0[..3], &[false, false, true]);
    }

    #[test]
    fn terminal_conditions() {
        let cfg = ScenarioConfig::new(GameMode::Walls, 2, -0.01, -1.0);
        let mut g = new_game(&cfg, 1).unwrap();
        assert!(!g.is_terminal());
        g.tick = MAX_STEPS;
        assert!(g.is_terminal());
        let mut g = new_game(&cfg, 1).unwrap();
        for s in &mut g.snakes {
            s.alive = false;
            s.body.clear();
        }
        assert!(g.is_terminal());
    }

    #[test]
    fn default_grid_shape() {
        let grid = default_grid();
        assert_eq!(grid.len(), 72);
        assert_eq!(grid.iter().map(|c| c.num_agents).sum::<usize>(), 216);
        let mut ids: Vec<_> = grid.iter().map(|c| c.scenario_id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 72);
        assert!(grid.iter().all(|c| c.fruit_reward == 1.0 && c.validate().is_ok()));
        assert_eq!(grid[0].scenario_id, "walls-n2-t-0.02-d-0.5");
    }

    #[test]
    fn config_json_keys() {
        let cfg = ScenarioConfig::new(GameMode::Wrap, 3, 0.01, -2.0);
        let v = serde_json::to_value(&cfg).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(
            keys,
            [
                "death_reward",
                "fruit_reward",
                "game_mode",
                "grid_height",
                "grid_width",
                "max_steps",
                "num_agents",
                "scenario_id",
                "seed",
                "time_reward"
            ]
        );
        assert_eq!(v["game_mode"], "wrap");
        let back: ScenarioConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
    }

    fn action_strategy() -> impl Strategy<Value = AgentAction> {
        (0usize..3).prop_map(|i| AgentAction::ALL[i])
    }

    fn run_with(
        cfg: &ScenarioConfig,
        seed: u64,
        script: &[Vec<AgentAction>],
    ) -> Vec<(String, Vec<StepEvent>, BTreeMap<usize, f64>)> {
        let mut g = new_game(cfg, seed).unwrap();
        let mut log = Vec::new();
        for row in script {
            if g.is_terminal() {
                break;
            }
            let actions: BTreeMap<_, _> = g.alive_ids().map(|id| (id, row[id])).collect();
            let out = g.step(&actions).unwrap();
            log.push((serde_json::to_string(&g).unwrap(), out.events, out.rewards));
        }
        log
    }

    fn check_occupancy(g: &GameState) {
        let mut seen = std::collections::HashSet::new();
        for s in g.snakes.iter().filter(|s| s.alive) {
            assert!(s.len() >= INITIAL_LENGTH);
            for w in s.body.iter().collect::<Vec<_>>().windows(2) {
                let (dx, dy) = ((w[0].x - w[1].x).abs(), (w[0].y - w[1].y).abs());
                let dx = dx.min(g.rules.width - dx);
                let dy = dy.min(g.rules.height - dy);
                assert_eq!(dx + dy, 1, "body must be contiguous");
            }
            for c in &s.body {
                assert!(seen.insert(*c), "bodies overlap at {c:?}");
            }
        }
        for f in &g.fruits {
            assert!(!seen.contains(f), "fruit on a body");
        }
        let free = g.cell_count() - seen.len() - g.fruits.len();
        if free > 0 {
            assert_eq!(g.fruits.len(), g.alive_count());
        }
    }

    impl GameState {
        fn cell_count(&self) -> usize {
            (self.rules.width * self.rules.height) as usize
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn deterministic_replay(
            seed in any::<u64>(),
            n in 1usize..=4,
            wrap in any::<bool>(),
            script in proptest::collection::vec(proptest::collection::vec(action_strategy(), 4), 1..150),
        ) {
            let mode = if wrap { GameMode::Wrap } else { GameMode::Walls };
            let cfg = ScenarioConfig::new(mode, n, -0.01, -1.0).with_grid(8, 8);
            prop_assert_eq!(run_with(&cfg, seed, &script), run_with(&cfg, seed, &script));
        }

        #[test]
        fn occupancy_growth_and_rewards(
            seed in any::<u64>(),
            n in 1usize..=4,
            wrap in any::<bool>(),
            script in proptest::collection::vec(proptest::collection::vec(action_strategy(), 4), 1..200),
        ) {
            let mode = if wrap { GameMode::Wrap } else { GameMode::Walls };
            let cfg = ScenarioConfig::new(mode, n, 0.01, -2.0).with_grid(8, 8);
            let mut g = new_game(&cfg, seed).unwrap();
            let mut eaten = vec![0usize; n];
            let mut alive_steps = vec![0usize; n];
            let mut died = vec![false; n];
            let mut total = vec![0.0f64; n];
            check_occupancy(&g);
            for row in &script {
                if g.is_terminal() { break; }
                let actions: BTreeMap<_, _> = g.alive_ids().map(|id| (id, row[id])).collect();
                let out = g.step(&actions).unwrap();
                for (&id, &r) in &out.rewards {
                    alive_steps[id] += 1;
                    total[id] += r;
                }
                for e in &out.events {
                    prop_assert!(!died[e.agent_id], "event after death");
                    match e.kind {
                        EventKind::FruitEaten => eaten[e.agent_id] += 1,
                        EventKind::Death => died[e.agent_id] = true,
                    }
                }
                check_occupancy(&g);
                for s in g.snakes.iter().filter(|s| s.alive) {
                    prop_assert_eq!(s.len(), INITIAL_LENGTH + eaten[s.agent_id]);
                }
            }
            for id in 0..n {
                let expect = cfg.time_reward * alive_steps[id] as f64
                    + cfg.fruit_reward * eaten[id] as f64
                    + if died[id] { cfg.death_reward } else { 0.0 };
                prop_assert!((total[id] - expect).abs() < 1e-9);
            }
        }

        /// Away from the boundary the two modes are indistinguishable.
        #[test]
        fn modes_agree_off_boundary(
            seed in any::<u64>(),
            script in proptest::collection::vec(action_strategy(), 1..40),
        ) {
            let make = |mode| GameState::from_parts(
                Rules { game_mode: mode, ..rules(mode, 16, 16) },
                vec![snake(0, &[(8, 8), (7, 8), (6, 8)], Heading::E)],
                vec![Cell::new(9, 8)],
                seed,
            );
            let mut walls = make(GameMode::Walls);
            let mut wrap = make(GameMode::Wrap);
            for &a in &script {
                let head = walls.snakes[0].head().unwrap();
                let next = head.offset(walls.snakes[0].heading.turn(a));
                if !(1..15).contains(&next.x) || !(1..15).contains(&next.y) { break; }
                let actions: BTreeMap<_, _> = [(0, a)].into_iter().collect();
                let a1 = walls.step(&actions).unwrap();
                let a2 = wrap.step(&actions).unwrap();
                prop_assert_eq!(a1, a2);
                prop_assert_eq!(&walls.snakes, &wrap.snakes);
                prop_assert_eq!(&walls.fruits, &wrap.fruits);
                if !walls.snakes[0].alive { break; }
            }
        }
    }
}
