//! Batch entry point: `simulate`, `explore`, `relocalize` and `evaluate`.
//!
//! Exit codes are stable for scripts: 0 success, 2 usage or configuration
//! error, 3 runtime failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::backend::{explore, keyframe_index, relocalize_frame, RelocalizationResult};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::eval::{ate_rmse, read_tum, submap_stats, tracking_percentage, write_tum, Alignment, MetricsReport, Stamped};
use crate::frontend::FrameObservation;
use crate::graph::{parse as parse_graph, serialize as serialize_graph};
use crate::sim::{Dataset, WorldSpec};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "submap-slam", version, about = "Submap-based pose-graph SLAM on simulated monocular data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlignArg {
    None,
    Rigid,
    Sim,
}

impl From<AlignArg> for Alignment {
    fn from(a: AlignArg) -> Self {
        match a {
            AlignArg::None => Alignment::None,
            AlignArg::Rigid => Alignment::Rigid,
            AlignArg::Sim => Alignment::Similarity,
        }
    }
}

/// Where the frames come from: an exported dataset or a seeded standard world.
#[derive(Debug, Clone, clap::Args)]
pub struct Source {
    /// Dataset directory written by `simulate`.
    #[arg(long, conflicts_with = "seed")]
    pub dataset: Option<PathBuf>,
    /// Generate the standard world with this seed instead.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Settings {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration field, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a world and export it as a dataset directory.
    Simulate {
        /// World specification file (`key = value`); the standard world otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Override one world field, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the exploration loop over a dataset.
    Explore {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        settings: Settings,
        /// Only explore the first `split` fraction of the frames.
        #[arg(long)]
        split: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize the held-out frames against a fixed graph.
    Relocalize {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        settings: Settings,
        /// Graph file written by `explore`.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// ATE RMSE of a TUM trajectory against a reference.
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = AlignArg::Sim)]
        align: AlignArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit code for an error: bad input is a usage error, the rest is runtime.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Parse { .. } | Error::NoActiveVertices => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Runs one subcommand and returns its one-line summary.
pub fn run(command: &Command) -> Result<String> {
    match command {
        Command::Simulate { spec, seed, overrides, out } => simulate(spec.as_deref(), *seed, overrides, out),
        Command::Explore { source, settings, split, out } => explore_cmd(source, settings, *split, out),
        Command::Relocalize { source, settings, graph, split, out } => relocalize_cmd(source, settings, graph, *split, out),
        Command::Evaluate { est, gt, align, out } => evaluate(est, gt, (*align).into(), out.as_deref()),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(dir: &Path, name: &str, body: impl AsRef<[u8]>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(path, e))
}

fn json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

fn load_config(settings: &Settings) -> Result<SystemConfig> {
    let mut config = match &settings.config {
        Some(path) => SystemConfig::from_text(&read(path)?)?,
        None => SystemConfig::default(),
    };
    for pair in &settings.overrides {
        config.set_pair(pair)?;
    }
    Ok(config)
}

fn load_source(source: &Source) -> Result<Dataset> {
    match (&source.dataset, source.seed) {
        (Some(dir), _) => Dataset::load(dir),
        (None, Some(seed)) => Dataset::generate(&WorldSpec::standard(seed)),
        (None, None) => Err(Error::config("dataset", "pass --dataset DIR or --seed N")),
    }
}

fn simulate(spec_path: Option<&Path>, seed: u64, overrides: &[String], out: &Path) -> Result<String> {
    let mut spec = match spec_path {
        Some(path) => WorldSpec::from_text(&read(path)?)?,
        None => WorldSpec::standard(seed),
    };
    for pair in overrides {
        spec.set_pair(pair)?;
    }
    let data = Dataset::generate(&spec)?;
    data.export(out)?;
    Ok(format!(
        "simulated {} frames, {} measurable pairs, {} failure windows -> {}",
        data.len(),
        data.measurements.len(),
        spec.failure_windows.len(),
        out.display()
    ))
}

#[derive(Debug, Serialize)]
struct Timing {
    wall_seconds: f64,
}

fn explore_cmd(source: &Source, settings: &Settings, split: Option<f64>, out: &Path) -> Result<String> {
    let config = load_config(settings)?;
    let data = load_source(source)?;
    let range = match split {
        Some(f) => data.split(f)?.0,
        None => 0..data.len(),
    };
    let start = Instant::now();
    let run = explore(&data.observations(range), &data, &config)?;
    let wall = start.elapsed().as_secs_f64();

    let trajectory: Vec<Stamped> = run
        .graph
        .active_vertices()
        .map(|v| Stamped { timestamp: data.frames[v.id as usize].timestamp, pose: v.pose })
        .collect();
    let keyframes = run.stats.keyframe_count;
    let mut metrics = MetricsReport {
        ate_rmse: ate_rmse(&trajectory, &data.groundtruth(), Alignment::Similarity).ok(),
        tracking_percentage: (keyframes > 0).then(|| tracking_percentage(keyframes, keyframes)).transpose()?,
        ..MetricsReport::default()
    };
    if let Ok(stats) = submap_stats(&run.state.keyframes_per_submap()) {
        metrics = metrics.with_submaps(stats);
    }

    write(out, "trajectory.tum", write_tum(&trajectory))?;
    write(out, "graph.txt", serialize_graph(&run.graph))?;
    write(out, "stats.json", json(&run.stats))?;
    write(out, "events.csv", run.events_csv())?;
    write(out, "metrics.json", metrics.to_json())?;
    write(out, "metrics.csv", format!("{}\n{}\n", MetricsReport::CSV_HEADER, metrics.to_csv_row()))?;
    write(out, "timing.json", json(&Timing { wall_seconds: wall }))?;
    Ok(format!(
        "explored {} frames: {} keyframes, {} submaps, {} merges, finished={}, ate={} -> {}",
        run.stats.frames_processed,
        keyframes,
        run.stats.submap_count,
        run.stats.merges.len(),
        run.stats.finished,
        metrics.ate_rmse.map_or("n/a".into(), |a| format!("{a:.4}")),
        out.display()
    ))
}

/// Outcome of localising a run of frames against a fixed map.
#[derive(Debug, Clone)]
pub struct RelocalizationRun {
    pub results: Vec<RelocalizationResult>,
    pub metrics: MetricsReport,
}

impl RelocalizationRun {
    pub const CSV_HEADER: &'static str = "frame,localized,loops,open_loops,tx,ty,tz,qw,qx,qy,qz";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.results {
            let pose = match r.pose {
                Some(p) => {
                    let t = p.translation();
                    let [w, x, y, z] = p.quaternion_wxyz();
                    format!("{},{},{},{w},{x},{y},{z}", t.x, t.y, t.z)
                }
                None => ",,,,,,".to_string(),
            };
            out.push_str(&format!("{},{},{},{},{pose}\n", r.frame_index, r.localized as u8, r.loops, r.open_loops));
        }
        out
    }
}

/// Localises `held_out` frames of `data` against `map`; the map is only read.
pub fn relocalize_frames(
    data: &Dataset,
    map: &crate::graph::Graph,
    held_out: std::ops::Range<usize>,
    config: &SystemConfig,
) -> Result<RelocalizationRun> {
    if map.active_vertices().next().is_none() {
        return Err(Error::NoActiveVertices);
    }
    let all = data.observations(0..data.len());
    let mut descriptors: BTreeMap<u64, FrameObservation> = BTreeMap::new();
    for v in map.vertices() {
        let obs = all.get(v.id as usize).ok_or(Error::UnknownVertex(v.id))?;
        descriptors.insert(v.id, obs.clone());
    }
    let index = keyframe_index(map, &descriptors);
    let results = all[held_out.clone()]
        .iter()
        .map(|f| relocalize_frame(f, map, &index, data, config))
        .collect::<Result<Vec<_>>>()?;
    let localized: Vec<Stamped> = results
        .iter()
        .filter_map(|r| r.pose.map(|pose| Stamped { timestamp: data.frames[r.frame_index as usize].timestamp, pose }))
        .collect();
    let metrics = MetricsReport {
        ate_rmse: ate_rmse(&localized, &data.groundtruth(), Alignment::Similarity).ok(),
        tracking_percentage: Some(tracking_percentage(held_out.len().max(1), localized.len())?),
        ..MetricsReport::default()
    };
    Ok(RelocalizationRun { results, metrics })
}

fn relocalize_cmd(source: &Source, settings: &Settings, graph: &Path, split: f64, out: &Path) -> Result<String> {
    let config = load_config(settings)?;
    let map = parse_graph(&read(graph)?)?;
    if map.active_vertices().next().is_none() {
        return Err(Error::NoActiveVertices);
    }
    let data = load_source(source)?;
    let (_, held_out) = data.split(split)?;
    let count = held_out.len();
    let run = relocalize_frames(&data, &map, held_out, &config)?;
    write(out, "relocalization.csv", run.to_csv())?;
    write(out, "metrics.json", run.metrics.to_json())?;
    write(out, "metrics.csv", format!("{}\n{}\n", MetricsReport::CSV_HEADER, run.metrics.to_csv_row()))?;
    Ok(format!(
        "relocalized {} of {count} held-out frames (tp {:.3}), ate={} -> {}",
        run.results.iter().filter(|r| r.localized).count(),
        run.metrics.tracking_percentage.unwrap_or(0.0),
        run.metrics.ate_rmse.map_or("n/a".into(), |a| format!("{a:.4}")),
        out.display()
    ))
}

fn evaluate(est: &Path, gt: &Path, align: Alignment, out: Option<&Path>) -> Result<String> {
    let estimated = read_tum(&read(est)?)?;
    let reference = read_tum(&read(gt)?)?;
    let metrics = MetricsReport { ate_rmse: Some(ate_rmse(&estimated, &reference, align)?), ..MetricsReport::default() };
    if let Some(dir) = out {
        write(dir, "metrics.json", metrics.to_json())?;
        write(dir, "metrics.csv", format!("{}\n{}\n", MetricsReport::CSV_HEADER, metrics.to_csv_row()))?;
    }
    Ok(metrics.to_json().trim_end().to_string())
}
