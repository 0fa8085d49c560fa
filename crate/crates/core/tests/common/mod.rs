//! Reference implementations written without reusing library code paths.
#![allow(dead_code)]

use std::collections::BTreeMap;

use marlviz_core::analytics::ConfigDistribution;
use marlviz_core::env::{AgentAction, EventKind, GameMode, ScenarioConfig};
use marlviz_core::features::Autoencoder;
use marlviz_core::trace::{AgentKey, EpisodeTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_symmetric(seed: u64, n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = rng.gen_range(-1.0..1.0);
            a[i][j] = v;
            a[j][i] = v;
        }
    }
    a
}

/// Cyclic Jacobi rotations until the off-diagonal mass vanishes. Returns
/// eigenpairs sorted by descending eigenvalue.
pub fn jacobi_eigen(matrix: &[Vec<f64>]) -> Vec<(f64, Vec<f64>)> {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n).map(|j| (a[j][j], v.iter().map(|row| row[j]).collect())).collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    pairs
}

/// Naive double loop over samples, with the mean taken first.
pub fn naive_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for r in rows {
                s += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
            c[i][j] = s / (n as f64 - 1.0);
        }
    }
    c
}

/// Central differences of the batch loss for every parameter.
pub fn finite_difference_gradient(ae: &Autoencoder, batch: &[Vec<f64>], h: f64) -> Vec<f64> {
    let mut probe = ae.clone();
    let n = ae.as_slice().len();
    (0..n)
        .map(|i| {
            let orig = probe.as_slice()[i];
            probe.as_mut_slice()[i] = orig + h;
            let up = probe.batch_loss(batch).unwrap();
            probe.as_mut_slice()[i] = orig - h;
            let down = probe.batch_loss(batch).unwrap();
            probe.as_mut_slice()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn random_batch(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
}

/// Action counts per agent, in `[straight, left, right]` order.
pub fn recount_actions(trace: &EpisodeTrace) -> Vec<[u64; 3]> {
    let mut out = vec![[0u64; 3]; trace.config.num_agents];
    for step in &trace.steps {
        for a in &step.agents {
            match a.action {
                Some(AgentAction::Straight) => out[a.agent_id][0] += 1,
                Some(AgentAction::TurnLeft) => out[a.agent_id][1] += 1,
                Some(AgentAction::TurnRight) => out[a.agent_id][2] += 1,
                None => {}
            }
        }
    }
    out
}

/// `(fruits, deaths)` per agent from the event lists.
pub fn recount_events(trace: &EpisodeTrace) -> Vec<(u64, u64)> {
    let mut out = vec![(0u64, 0u64); trace.config.num_agents];
    for step in &trace.steps {
        for e in &step.events {
            if e.kind == EventKind::FruitEaten {
                out[e.agent_id].0 += 1;
            } else {
                out[e.agent_id].1 += 1;
            }
        }
    }
    out
}

/// Per-cell head counts via a map, including the spawn position.
pub fn recount_visits(trace: &EpisodeTrace, agent_id: usize, spawn: (i32, i32)) -> BTreeMap<(i32, i32), u32> {
    let mut m = BTreeMap::new();
    *m.entry(spawn).or_insert(0) += 1;
    for step in &trace.steps {
        let a = &step.agents[agent_id];
        if a.action.is_none() {
            continue;
        }
        let h = a.head.expect("alive agents have a head");
        *m.entry((h.x, h.y)).or_insert(0) += 1;
    }
    m
}

/// Running totals per agent, tick by tick.
pub fn recount_cumulative(trace: &EpisodeTrace) -> Vec<Vec<f64>> {
    let n = trace.config.num_agents;
    let mut running = vec![0.0; n];
    let mut out = Vec::new();
    for step in &trace.steps {
        for agent in 0..n {
            let a = &step.agents[agent];
            if a.action.is_some() {
                running[agent] = running[agent] + a.reward;
            }
        }
        out.push(running.clone());
    }
    out
}

pub fn recount_distribution(keys: &[AgentKey], configs: &BTreeMap<String, ScenarioConfig>) -> ConfigDistribution {
    let time_levels = [-0.02, -0.01, 0.0, 0.01];
    let death_levels = [-0.5, -1.0, -2.0];
    let mut d = ConfigDistribution::empty();
    for k in keys {
        let c = &configs[&k.scenario_id];
        d.total += 1;
        if c.game_mode == GameMode::Walls {
            d.game_mode.walls += 1;
        } else {
            d.game_mode.wrap += 1;
        }
        *d.agent_count.entry(c.num_agents).or_insert(0) += 1;
        let mut placed = false;
        for (r, t) in time_levels.iter().enumerate() {
            for (col, dl) in death_levels.iter().enumerate() {
                if *t == c.time_reward && *dl == c.death_reward {
                    d.reward_heatmap[r][col] += 1;
                    placed = true;
                }
            }
        }
        if !placed {
            d.off_grid += 1;
        }
    }
    d
}

/// Evaluation traces of every eighth default scenario after a short training.
pub fn small_traces(episodes: usize) -> BTreeMap<String, EpisodeTrace> {
    use marlviz_core::env::default_grid;
    use marlviz_core::training::{run_grid, TrainSpec};
    let grid: Vec<ScenarioConfig> = default_grid().into_iter().step_by(8).collect();
    let spec = TrainSpec::default().with_episodes(episodes).with_seed(7);
    run_grid(&grid, &spec, 4)
        .unwrap()
        .into_iter()
        .map(|r| (r.trace.scenario_id().to_owned(), r.trace))
        .collect()
}
