use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use marlviz_api::LoadedDataset;
use marlviz_core::analytics::scenario_summary;
use marlviz_core::artifacts::{read_features, read_json, write_features, write_json, write_projection};
use marlviz_core::canonical::to_canonical_json;
use marlviz_core::env::{default_grid, ScenarioConfig};
use marlviz_core::features::{embed, AeTrainConfig};
use marlviz_core::projection::fit_project;
use marlviz_core::trace::{index_dataset, read_trace, replay_verify, write_dataset};
use marlviz_core::training::{run_grid, TrainSpec};

/// Train snake-playing agent populations, embed their behavior and serve the
/// analytics views.
#[derive(Debug, Parser)]
#[command(name = "marlviz", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the default 72-scenario experiment grid.
    Grid {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every scenario of a grid and write traces, policies and manifest.
    Run {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "MARLVIZ_SEED")]
        seed: u64,
        #[arg(long, default_value_t = TrainSpec::default().episodes)]
        episodes: usize,
        /// Worker threads; output does not depend on it.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Descriptors, autoencoder and latent feature vectors for a dataset.
    Embed {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "MARLVIZ_SEED")]
        seed: u64,
        #[arg(long, default_value_t = AeTrainConfig::default().epochs)]
        epochs: usize,
    },
    /// PCA of the feature vectors to the 2D overview scatter.
    Project {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-simulate every trace and compare against the log.
    Verify {
        #[arg(long)]
        data: PathBuf,
    },
    /// Print one scenario summary as JSON.
    Summarize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scenario: String,
    },
    /// Serve the HTTP API (and optionally the UI).
    Serve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        projection: PathBuf,
        #[arg(long, default_value_t = marlviz_api::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Directory of built UI assets served at `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

fn grid(out: &Path) -> Result<()> {
    let grid = default_grid();
    write_json(out, &grid)?;
    println!("wrote {} scenarios to {}", grid.len(), out.display());
    Ok(())
}

fn run(grid: &Path, out: &Path, seed: u64, episodes: usize, parallel: usize) -> Result<()> {
    let grid: Vec<ScenarioConfig> = read_json(grid)?;
    let spec = TrainSpec::default().with_seed(seed).with_episodes(episodes);
    let runs = run_grid(&grid, &spec, parallel)?;
    let manifest = write_dataset(out, &runs, &spec)?;
    let agents: usize = grid.iter().map(|c| c.num_agents).sum();
    println!("wrote {} scenarios ({agents} agents) to {}", manifest.scenarios.len(), out.display());
    Ok(())
}

fn embed_cmd(data: &Path, out: &Path, seed: u64, epochs: usize) -> Result<()> {
    let traces = index_dataset(data)?.load_traces()?;
    let cfg = AeTrainConfig { epochs, seed, ..AeTrainConfig::default() };
    let e = embed(&traces, &cfg)?;
    write_features(out, &e.features, &e.trained.history)?;
    println!(
        "embedded {} agents, loss {:.6} -> {:.6}",
        e.features.len(),
        e.trained.initial_loss(),
        e.trained.final_loss()
    );
    Ok(())
}

fn project(features: &Path, out: &Path) -> Result<()> {
    let p = fit_project(&read_features(features)?)?;
    write_projection(out, &p)?;
    if p.degenerate {
        eprintln!("warning: top two eigenvalues coincide; axes within the plane are arbitrary");
    }
    println!("projected {} points, explained variance {:.4}", p.points.len(), p.explained_variance_ratio);
    Ok(())
}

fn verify(data: &Path) -> Result<()> {
    let index = index_dataset(data)?;
    let mut failures = Vec::new();
    for entry in index.entries.values() {
        let name = entry.trace_path.display();
        match read_trace(&entry.trace_path) {
            Err(e) => failures.push(e.to_string()),
            Ok(t) => {
                if let Err(d) = replay_verify(&t) {
                    failures.push(format!("{name}: {d}"));
                }
            }
        }
    }
    if !failures.is_empty() {
        bail!("{} of {} traces failed verification: {}", failures.len(), index.len(), failures.join("; "));
    }
    println!("verified {0}/{0} traces", index.len());
    Ok(())
}

fn summarize(data: &Path, scenario: &str) -> Result<()> {
    let index = index_dataset(data)?;
    let entry = index.entries.get(scenario).with_context(|| format!("unknown scenario {scenario}"))?;
    let trace = read_trace(&entry.trace_path)?;
    println!("{}", to_canonical_json(&scenario_summary(&trace))?);
    Ok(())
}

fn serve(data: &Path, features: &Path, projection: &Path, addr: SocketAddr, ui_dir: Option<PathBuf>) -> Result<()> {
    let dataset = LoadedDataset::load(data, features, projection)?;
    if let Some(dir) = &ui_dir {
        if !dir.is_dir() {
            bail!("ui directory {} does not exist", dir.display());
        }
    }
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("serving {} scenarios on http://{addr}", dataset.traces.len());
    rt.block_on(marlviz_api::serve(addr, dataset, ui_dir)).with_context(|| format!("serving on {addr}"))
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Grid { out } => grid(&out),
        Command::Run { grid, out, seed, episodes, parallel } => run(&grid, &out, seed, episodes, parallel),
        Command::Embed { data, out, seed, epochs } => embed_cmd(&data, &out, seed, epochs),
        Command::Project { features, out } => project(&features, &out),
        Command::Verify { data } => verify(&data),
        Command::Summarize { data, scenario } => summarize(&data, &scenario),
        Command::Serve { data, features, projection, port, host, ui_dir } => {
            serve(&data, &features, &projection, SocketAddr::new(host, port), ui_dir)
        }
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let message: Vec<&str> = rendered.lines().take_while(|l| !l.starts_with("Usage:")).collect();
            eprintln!("{}", one_line(&message.join(" ")));
            return ExitCode::FAILURE;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
