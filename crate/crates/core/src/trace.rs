//! Episode traces and the on-disk dataset.
//!
//! A trace file is JSON Lines:
//!
//! ```text
//! {"schema":"marlviz-trace/1","config":{...},"eval_seed":N}
//! {"tick":0,"agents":[{"agent_id":0,"action":"straight","head":[5,2],"reward":-0.01},...],"events":[...]}
//! ...
//! {"summary":{"agents":[...]}}
//! ```
//!
//! Each step line records, per agent, the action taken at that tick, the head
//! cell after the move and the reward. A snake that dies during the tick keeps
//! its pre-move head. Agents that were already dead carry `null` for both the
//! action and the head. Floats are written as the shortest decimal that reads
//! back to the same `f64`, so replay can compare rewards exactly.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{self, AgentAction, Cell, DeathCause, EventKind, GameState, ScenarioConfig, StepEvent, StepOutcome};
use crate::training::{self, ScenarioRun, TrainSpec};

pub const TRACE_SCHEMA: &str = "marlviz-trace/1";
pub const DATASET_SCHEMA: &str = "marlviz-dataset/1";
pub const MANIFEST_FILE: &str = "dataset.json";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Format { path: PathBuf, line: usize, message: String },
    #[error("{}: summary of agent {agent_id} disagrees with the step log: {detail}", path.display())]
    Integrity { path: PathBuf, agent_id: usize, detail: String },
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("no {MANIFEST_FILE} in {}", .0.display())]
    NotFound(PathBuf),
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
    #[error("dataset is missing traces for scenarios {0:?}")]
    MissingTraces(Vec<String>),
}

/// Globally unique agent identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentKey {
    pub scenario_id: String,
    pub agent_id: usize,
}

impl AgentKey {
    pub fn new(scenario_id: impl Into<String>, agent_id: usize) -> Self {
        AgentKey { scenario_id: scenario_id.into(), agent_id }
    }
}

impl std::fmt::Display for AgentKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}", self.scenario_id, self.agent_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub agent_id: usize,
    pub action: Option<AgentAction>,
    pub head: Option<Cell>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tick: u32,
    /// Every agent of the scenario, ascending id.
    pub agents: Vec<AgentStep>,
    pub events: Vec<StepEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent_id: usize,
    pub fruits: u32,
    pub alive_steps: u32,
    pub death_tick: Option<u32>,
    pub death_cause: Option<DeathCause>,
    pub total_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub config: ScenarioConfig,
    pub eval_seed: u64,
    pub steps: Vec<StepRecord>,
    pub summary: Vec<AgentSummary>,
}

impl EpisodeTrace {
    pub fn new(config: ScenarioConfig, eval_seed: u64, steps: Vec<StepRecord>) -> Self {
        let summary = summarize(config.num_agents, &steps);
        EpisodeTrace { config, eval_seed, steps, summary }
    }

    pub fn scenario_id(&self) -> &str {
        &self.config.scenario_id
    }

    pub fn agent_keys(&self) -> impl Iterator<Item = AgentKey> + '_ {
        (0..self.config.num_agents).map(|id| AgentKey::new(self.scenario_id(), id))
    }

    /// The entries of one agent, tick by tick.
    pub fn agent_steps(&self, agent_id: usize) -> impl Iterator<Item = &AgentStep> + '_ {
        self.steps.iter().filter_map(move |s| s.agents.get(agent_id))
    }
}

/// Per-agent totals recomputed from a step log.
pub fn summarize(num_agents: usize, steps: &[StepRecord]) -> Vec<AgentSummary> {
    let mut out: Vec<AgentSummary> = (0..num_agents)
        .map(|agent_id| AgentSummary {
            agent_id,
            fruits: 0,
            alive_steps: 0,
            death_tick: None,
            death_cause: None,
            total_reward: 0.0,
        })
        .collect();
    for step in steps {
        for a in &step.agents {
            if let (Some(_), Some(s)) = (a.action, out.get_mut(a.agent_id)) {
                s.alive_steps += 1;
                s.total_reward += a.reward;
            }
        }
        for e in &step.events {
            let Some(s) = out.get_mut(e.agent_id) else { continue };
            match e.kind {
                EventKind::FruitEaten => s.fruits += 1,
                EventKind::Death => {
                    s.death_tick = Some(e.tick);
                    s.death_cause = e.death_cause;
                }
            }
        }
    }
    out
}

/// Current head of every snake, dead ones as `None`.
pub fn heads(game: &GameState) -> Vec<Option<Cell>> {
    game.snakes.iter().map(|s| if s.alive { s.head() } else { None }).collect()
}

/// Builds the record of the step that just moved `game` forward.
pub fn record_step(
    game: &GameState,
    pre_heads: &[Option<Cell>],
    actions: &BTreeMap<usize, AgentAction>,
    outcome: &StepOutcome,
) -> StepRecord {
    let agents = game
        .snakes
        .iter()
        .map(|s| match actions.get(&s.agent_id) {
            Some(&a) => AgentStep {
                agent_id: s.agent_id,
                action: Some(a),
                head: if s.alive { s.head() } else { pre_heads[s.agent_id] },
                reward: outcome.rewards[&s.agent_id],
            },
            None => AgentStep { agent_id: s.agent_id, action: None, head: None, reward: 0.0 },
        })
        .collect();
    StepRecord { tick: game.tick - 1, agents, events: outcome.events.clone() }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
    config: ScenarioConfig,
    eval_seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SummaryLine {
    summary: SummaryBody,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SummaryBody {
    agents: Vec<AgentSummary>,
}

fn json_line<T: Serialize>(out: &mut String, value: &T) {
    out.push_str(&serde_json::to_string(value).expect("trace types always serialize"));
    out.push('\n');
}

/// Serializes a trace to its JSONL text.
pub fn to_jsonl(trace: &EpisodeTrace) -> String {
    let mut out = String::new();
    json_line(
        &mut out,
        &Header { schema: TRACE_SCHEMA.to_owned(), config: trace.config.clone(), eval_seed: trace.eval_seed },
    );
    for step in &trace.steps {
        json_line(&mut out, step);
    }
    json_line(&mut out, &SummaryLine { summary: SummaryBody { agents: trace.summary.clone() } });
    out
}

/// Writes `contents` next to `path` and renames it into place.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = File::create(&tmp)?;
    f.write_all(contents)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)
}

pub fn write_trace(trace: &EpisodeTrace, path: &Path) -> Result<(), TraceError> {
    write_atomic(path, to_jsonl(trace).as_bytes())
        .map_err(|source| TraceError::Io { path: path.to_owned(), source })
}

pub fn read_trace(path: &Path) -> Result<EpisodeTrace, TraceError> {
    let file = File::open(path).map_err(|source| TraceError::Io { path: path.to_owned(), source })?;
    parse_trace(BufReader::new(file), path)
}

fn parse_trace<R: BufRead>(reader: R, path: &Path) -> Result<EpisodeTrace, TraceError> {
    let format = |line: usize, message: String| TraceError::Format { path: path.to_owned(), line, message };
    let mut header: Option<Header> = None;
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut summary: Option<Vec<AgentSummary>> = None;
    let mut last_good = 0;

    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|source| TraceError::Io { path: path.to_owned(), source })?;
        if summary.is_some() {
            return Err(format(n, "content after the summary line".into()));
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| format(n, format!("malformed JSON ({e}); last good line is {last_good}")))?;
        let Some(h) = &header else {
            let h: Header = serde_json::from_value(value).map_err(|e| format(n, format!("bad header: {e}")))?;
            if h.schema != TRACE_SCHEMA {
                return Err(format(n, format!("unsupported schema {:?}", h.schema)));
            }
            header = Some(h);
            last_good = n;
            continue;
        };
        if value.get("summary").is_some() {
            let s: SummaryLine = serde_json::from_value(value).map_err(|e| format(n, format!("bad summary: {e}")))?;
            summary = Some(s.summary.agents);
        } else {
            let step: StepRecord =
                serde_json::from_value(value).map_err(|e| format(n, format!("bad step record: {e}")))?;
            check_step(&step, steps.len(), h.config.num_agents).map_err(|m| format(n, m))?;
            steps.push(step);
        }
        last_good = n;
    }

    let header = header.ok_or_else(|| format(1, "empty trace file".into()))?;
    let summary = summary.ok_or_else(|| format(last_good, format!("missing summary line; last good line is {last_good}")))?;
    let trace = EpisodeTrace { config: header.config, eval_seed: header.eval_seed, steps, summary };
    check_summary(&trace).map_err(|(agent_id, detail)| TraceError::Integrity { path: path.to_owned(), agent_id, detail })?;
    Ok(trace)
}

fn check_step(step: &StepRecord, expected_tick: usize, num_agents: usize) -> Result<(), String> {
    if step.tick as usize != expected_tick {
        return Err(format!("tick {} out of sequence, expected {expected_tick}", step.tick));
    }
    if step.agents.len() != num_agents {
        return Err(format!("{} agent entries, expected {num_agents}", step.agents.len()));
    }
    for (i, a) in step.agents.iter().enumerate() {
        if a.agent_id != i {
            return Err(format!("agent entry {i} has id {}", a.agent_id));
        }
        if a.action.is_some() != a.head.is_some() {
            return Err(format!("agent {i}: action and head must both be null or both set"));
        }
    }
    Ok(())
}

/// Compares the stored summary against a recomputation.
pub fn check_summary(trace: &EpisodeTrace) -> Result<(), (usize, String)> {
    let expected = summarize(trace.config.num_agents, &trace.steps);
    if trace.summary.len() != expected.len() {
        return Err((trace.summary.len(), format!("{} summaries for {} agents", trace.summary.len(), expected.len())));
    }
    for (got, want) in trace.summary.iter().zip(&expected) {
        if got != want {
            return Err((want.agent_id, format!("stored {got:?}, recomputed {want:?}")));
        }
    }
    Ok(())
}

/// First point where a trace and its re-simulation disagree.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("diverges at tick {tick}: {detail}")]
pub struct Divergence {
    pub tick: usize,
    pub detail: String,
}

/// Re-simulates the recorded actions from `(config, eval_seed)` and checks
/// every head, reward and event.
pub fn replay_verify(trace: &EpisodeTrace) -> Result<(), Divergence> {
    let diverge = |tick: usize, detail: String| Divergence { tick, detail };
    let mut game = env::new_game(&trace.config, trace.eval_seed).map_err(|e| diverge(0, e.to_string()))?;
    let mut actions = BTreeMap::new();
    for (i, rec) in trace.steps.iter().enumerate() {
        if game.is_terminal() {
            return Err(diverge(i, "episode was already over".into()));
        }
        actions.clear();
        actions.extend(rec.agents.iter().filter_map(|a| a.action.map(|act| (a.agent_id, act))));
        let pre = heads(&game);
        let outcome = game.step(&actions).map_err(|e| diverge(i, e.to_string()))?;
        let expected = record_step(&game, &pre, &actions, &outcome);
        if expected != *rec {
            return Err(diverge(i, describe_mismatch(rec, &expected)));
        }
    }
    if !game.is_terminal() {
        return Err(diverge(trace.steps.len(), "trace ends before the episode does".into()));
    }
    check_summary(trace).map_err(|(agent, d)| diverge(trace.steps.len(), format!("agent {agent}: {d}")))
}

fn describe_mismatch(recorded: &StepRecord, simulated: &StepRecord) -> String {
    for (r, s) in recorded.agents.iter().zip(&simulated.agents) {
        if r.head != s.head {
            return format!("agent {} head recorded {:?}, simulated {:?}", r.agent_id, r.head, s.head);
        }
        if r.reward != s.reward {
            return format!("agent {} reward recorded {}, simulated {}", r.agent_id, r.reward, s.reward);
        }
    }
    if recorded.events != simulated.events {
        return format!("events recorded {:?}, simulated {:?}", recorded.events, simulated.events);
    }
    "step record differs".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scenario_id: String,
    pub config: ScenarioConfig,
    /// Relative to the dataset root.
    pub trace: String,
    pub policies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub train_spec: TrainSpec,
    /// Sorted by scenario id.
    pub scenarios: Vec<ManifestEntry>,
}

/// Writes traces, policies and `dataset.json` under `root`.
pub fn write_dataset(root: &Path, runs: &[ScenarioRun], spec: &TrainSpec) -> Result<Manifest, TraceError> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| TraceError::Io { path, source }
    };
    let traces = root.join("traces");
    fs::create_dir_all(&traces).map_err(io(&traces))?;
    let mut runs: Vec<&ScenarioRun> = runs.iter().collect();
    runs.sort_by(|a, b| a.config.scenario_id.cmp(&b.config.scenario_id));

    let mut scenarios = Vec::with_capacity(runs.len());
    for run in runs {
        let id = &run.config.scenario_id;
        let trace_rel = format!("traces/{id}.jsonl");
        write_trace(&run.trace, &root.join(&trace_rel))?;
        let policy_dir = root.join("policies").join(id);
        let bins = training::write_policies(&policy_dir, id, &run.policies).map_err(io(&policy_dir))?;
        let policies = bins
            .iter()
            .map(|b| format!("policies/{id}/{}", b.file_name().unwrap().to_string_lossy()))
            .collect();
        scenarios.push(ManifestEntry { scenario_id: id.clone(), config: run.config.clone(), trace: trace_rel, policies });
    }
    let manifest = Manifest { schema: DATASET_SCHEMA.to_owned(), train_spec: spec.clone(), scenarios };
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_atomic(&path, json.as_bytes()).map_err(io(&path))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub config: ScenarioConfig,
    pub trace_path: PathBuf,
}

/// Lookup structure over a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub train_spec: TrainSpec,
    pub entries: BTreeMap<String, IndexEntry>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every agent, ordered by key.
    pub fn agents(&self) -> Vec<AgentKey> {
        self.entries
            .iter()
            .flat_map(|(id, e)| (0..e.config.num_agents).map(move |a| AgentKey::new(id.clone(), a)))
            .collect()
    }

    pub fn config(&self, scenario_id: &str) -> Option<&ScenarioConfig> {
        self.entries.get(scenario_id).map(|e| &e.config)
    }

    pub fn contains(&self, key: &AgentKey) -> bool {
        self.config(&key.scenario_id).is_some_and(|c| key.agent_id < c.num_agents)
    }

    pub fn grid(&self) -> Vec<ScenarioConfig> {
        self.entries.values().map(|e| e.config.clone()).collect()
    }

    /// Loads every trace, keyed by scenario id.
    pub fn load_traces(&self) -> Result<BTreeMap<String, EpisodeTrace>, TraceError> {
        self.entries.iter().map(|(id, e)| Ok((id.clone(), read_trace(&e.trace_path)?))).collect()
    }
}

pub fn index_dataset(root: &Path) -> Result<DatasetIndex, ManifestError> {
    let path = root.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|_| ManifestError::NotFound(root.to_owned()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes)
        .map_err(|e| ManifestError::Invalid { path: path.clone(), message: e.to_string() })?;
    if manifest.schema != DATASET_SCHEMA {
        return Err(ManifestError::Invalid { path, message: format!("unsupported schema {:?}", manifest.schema) });
    }
    let mut entries = BTreeMap::new();
    let mut missing = Vec::new();
    for e in manifest.scenarios {
        if e.config.scenario_id != e.scenario_id {
            return Err(ManifestError::Invalid {
                path,
                message: format!("entry {} embeds config {}", e.scenario_id, e.config.scenario_id),
            });
        }
        let trace_path = root.join(&e.trace);
        if !trace_path.is_file() {
            missing.push(e.scenario_id.clone());
        }
        if entries.insert(e.scenario_id.clone(), IndexEntry { config: e.config, trace_path }).is_some() {
            return Err(ManifestError::Invalid { path, message: format!("duplicate scenario {}", e.scenario_id) });
        }
    }
    if !missing.is_empty() {
        return Err(ManifestError::MissingTraces(missing));
    }
    Ok(DatasetIndex { root: root.to_owned(), train_spec: manifest.train_spec, entries })
}
