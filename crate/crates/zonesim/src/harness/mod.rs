//! Experiment orchestration: run configuration, deterministic single runs,
//! rate sweeps with parallel seeded rounds, result persistence and report
//! emission.

mod io;
mod report;
mod svg;

pub use io::{read_series_csv, read_summary};
pub use report::{emit_report, ReportFormat, ReportPaths, TrendRow};

use crate::demand::{build_od_weights, generate_arrivals, DemandError, DemandModel};
use crate::engine::{RunOutput, SimError, SimParams, Simulation};
use crate::metrics::{
    aggregate, capacity_analysis, Aggregate, CapacityVerdict, MetricsError, TripRecord,
    CAPACITY_SLOPE_THRESHOLD,
};
use crate::net::RoadNetwork;
use crate::topo::{build_traditional_grid, build_zonal_grid, BuildError, GridSpec, LightMode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "ZONESIM_OUT";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("no results found under {0}")]
    EmptyResults(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Zonal,
    TradStatic,
    TradAdaptive,
}

impl Topology {
    pub const ALL: [Topology; 3] = [Topology::Zonal, Topology::TradStatic, Topology::TradAdaptive];

    pub fn as_str(&self) -> &'static str {
        match self {
            Topology::Zonal => "zonal",
            Topology::TradStatic => "trad-static",
            Topology::TradAdaptive => "trad-adaptive",
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Topology {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zonal" => Ok(Topology::Zonal),
            "trad-static" => Ok(Topology::TradStatic),
            "trad-adaptive" => Ok(Topology::TradAdaptive),
            other => Err(format!(
                "unknown topology `{other}` (expected zonal, trad-static or trad-adaptive)"
            )),
        }
    }
}

/// Fully resolved configuration of one run; its serialized form is the
/// fingerprint input, so the fingerprint changes iff a semantic input does.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub topology: Topology,
    pub grid: GridSpec,
    /// Vehicle insertion rate, vehicles/hour/zone.
    pub rate: f64,
    pub seed: u64,
    pub duration: f64,
    pub dt: f64,
    pub hot_pair_count: u32,
    pub hot_multiplier: f64,
    pub sigma: f64,
    pub log_sample: u32,
    pub record_trajectories: bool,
    pub dynamic_rerouting: bool,
}

impl RunConfig {
    pub fn new(topology: Topology, grid: GridSpec, rate: f64, seed: u64) -> Self {
        RunConfig {
            topology,
            grid,
            rate,
            seed,
            duration: 1800.0,
            dt: 1.0,
            hot_pair_count: 18,
            hot_multiplier: 2.0,
            sigma: 0.0,
            log_sample: 1000,
            record_trajectories: false,
            dynamic_rerouting: false,
        }
    }

    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("run config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_network(&self) -> Result<RoadNetwork, BuildError> {
        let mut grid = self.grid.clone();
        match self.topology {
            Topology::Zonal => build_zonal_grid(&grid),
            Topology::TradStatic => {
                grid.light_mode = LightMode::Static;
                build_traditional_grid(&grid)
            }
            Topology::TradAdaptive => {
                grid.light_mode = LightMode::Adaptive;
                build_traditional_grid(&grid)
            }
        }
    }

    pub fn demand_model(&self) -> DemandModel {
        DemandModel {
            rate_per_zone: self.rate,
            zone_count: self.grid.zone_count(),
            duration: self.duration,
            hot_pair_count: self.hot_pair_count,
            hot_multiplier: self.hot_multiplier,
            seed: self.seed,
        }
    }

    pub fn sim_params(&self) -> SimParams {
        let mut params = SimParams {
            dt: self.dt,
            duration: self.duration,
            seed: self.seed,
            log_sample: self.log_sample,
            record_trajectories: self.record_trajectories,
            dynamic_rerouting: self.dynamic_rerouting,
            ..SimParams::default()
        };
        params.cf.sigma = self.sigma;
        params
    }
}

/// Warmup used for capacity analysis: the first quarter of the horizon.
pub fn default_warmup(duration: f64) -> f64 {
    duration * 0.25
}

/// Aggregated views of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub spawned: usize,
    /// Unfiltered aggregate over every spawned vehicle.
    pub all: Option<Aggregate>,
    /// Aggregate over completed trips only.
    pub completed: Option<Aggregate>,
    pub capacity: Option<CapacityVerdict>,
}

/// Everything produced by one run, in memory.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: RunConfig,
    pub fingerprint: String,
    pub output: RunOutput,
    pub summary: RunSummary,
    pub wall_clock: f64,
}

pub fn summarize(trips: &[TripRecord], output: &RunOutput, duration: f64) -> RunSummary {
    let completed: Vec<TripRecord> =
        trips.iter().filter(|t| t.completed).cloned().collect();
    RunSummary {
        spawned: trips.len(),
        all: aggregate(trips).ok(),
        completed: aggregate(&completed).ok(),
        capacity: capacity_analysis(
            &output.series,
            default_warmup(duration),
            CAPACITY_SLOPE_THRESHOLD,
        )
        .ok(),
    }
}

/// Execute one run: build the network, generate demand, simulate, compute
/// metrics. Deterministic for a fixed configuration.
pub fn run_single(config: &RunConfig) -> Result<RunResult, HarnessError> {
    let started = Instant::now();
    let net = config.build_network()?;
    let dm = config.demand_model();
    let weights = build_od_weights(&net, &dm)?;
    let schedule = generate_arrivals(&dm, &weights)?;
    let sim = Simulation::new(&net, &schedule, config.sim_params())?;
    let output = sim.run()?;
    let summary = summarize(&output.trips, &output, config.duration);
    Ok(RunResult {
        fingerprint: config.fingerprint(),
        config: config.clone(),
        summary,
        wall_clock: started.elapsed().as_secs_f64(),
        output,
    })
}

// ---------------------------------------------------------------------
// Sweep configuration (TOML document)
// ---------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub demand: DemandSettings,
    pub sweep: SweepSettings,
    pub sim: SimSettings,
    pub output: OutputSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid: GridSpec::default(),
            demand: DemandSettings::default(),
            sweep: SweepSettings::default(),
            sim: SimSettings::default(),
            output: OutputSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandSettings {
    pub duration: f64,
    pub hot_pair_count: u32,
    pub hot_multiplier: f64,
    pub base_seed: u64,
}

impl Default for DemandSettings {
    fn default() -> Self {
        DemandSettings { duration: 1800.0, hot_pair_count: 18, hot_multiplier: 2.0, base_seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub topologies: Vec<Topology>,
    pub rate_start: f64,
    pub rate_stop: f64,
    pub rate_step: f64,
    pub rounds: u32,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            topologies: Topology::ALL.to_vec(),
            rate_start: 100.0,
            rate_stop: 400.0,
            rate_step: 15.0,
            rounds: 4,
            jobs: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub dt: f64,
    pub sigma: f64,
    pub log_sample: u32,
    pub trajectories: bool,
    pub dynamic_rerouting: bool,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            dt: 1.0,
            sigma: 0.0,
            log_sample: 1000,
            trajectories: false,
            dynamic_rerouting: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSettings {
    pub dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn rates(&self) -> Vec<f64> {
        let mut rates = Vec::new();
        let mut rate = self.sweep.rate_start;
        while rate <= self.sweep.rate_stop + 1e-9 {
            rates.push(rate);
            rate += self.sweep.rate_step;
        }
        rates
    }

    /// Output root: explicit config, else `$ZONESIM_OUT`, else `./results`.
    pub fn output_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("results"))
    }

    pub fn run_config(&self, topology: Topology, rate: f64, seed: u64) -> RunConfig {
        RunConfig {
            topology,
            grid: self.grid.clone(),
            rate,
            seed,
            duration: self.demand.duration,
            dt: self.sim.dt,
            hot_pair_count: self.demand.hot_pair_count,
            hot_multiplier: self.demand.hot_multiplier,
            sigma: self.sim.sigma,
            log_sample: self.sim.log_sample,
            record_trajectories: self.sim.trajectories,
            dynamic_rerouting: self.sim.dynamic_rerouting,
        }
    }
}

/// Format a rate for directory names: `150`, `152.5`.
pub fn format_rate(rate: f64) -> String {
    if (rate - rate.round()).abs() < 1e-9 {
        format!("{}", rate.round() as i64)
    } else {
        format!("{rate}")
    }
}

/// One cell of an executed sweep.
#[derive(Debug)]
pub struct SweepRun {
    pub config: RunConfig,
    pub dir: PathBuf,
    /// False when a matching fingerprint was already on disk.
    pub executed: bool,
    pub summary: Option<RunSummary>,
    pub result: Option<RunResult>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub out_dir: PathBuf,
    pub runs: Vec<SweepRun>,
}

/// Execute the topology x rate x round matrix. Rounds are dispatched over a
/// worker pool; each run is written to its own directory and runs whose
/// fingerprint already exists on disk are skipped, so interrupted sweeps
/// resume idempotently. Failures are recorded per run and do not stop the
/// sweep.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome, HarnessError> {
    let out_dir = cfg.output_dir();
    std::fs::create_dir_all(&out_dir)?;
    let mut planned: Vec<(RunConfig, PathBuf)> = Vec::new();
    for &topology in &cfg.sweep.topologies {
        for &rate in &cfg.rates() {
            for round in 0..cfg.sweep.rounds {
                let seed = cfg.demand.base_seed + round as u64;
                let run_cfg = cfg.run_config(topology, rate, seed);
                let dir = out_dir
                    .join(topology.as_str())
                    .join(format!("rate_{}", format_rate(rate)))
                    .join(format!("seed_{seed}"));
                planned.push((run_cfg, dir));
            }
        }
    }

    let execute = |(run_cfg, dir): &(RunConfig, PathBuf)| -> SweepRun {
        let fingerprint = run_cfg.fingerprint();
        if let Ok(meta) = io::read_meta(dir) {
            if meta.fingerprint == fingerprint {
                let summary = read_summary(dir).ok();
                return SweepRun {
                    config: run_cfg.clone(),
                    dir: dir.clone(),
                    executed: false,
                    summary,
                    result: None,
                    error: None,
                };
            }
        }
        match run_single(run_cfg).and_then(|result| {
            io::write_run(dir, &result)?;
            Ok(result)
        }) {
            Ok(result) => SweepRun {
                config: run_cfg.clone(),
                dir: dir.clone(),
                executed: true,
                summary: Some(result.summary.clone()),
                result: Some(result),
                error: None,
            },
            Err(err) => SweepRun {
                config: run_cfg.clone(),
                dir: dir.clone(),
                executed: true,
                summary: None,
                result: None,
                error: Some(err.to_string()),
            },
        }
    };

    let runs: Vec<SweepRun> = if cfg.sweep.jobs == 1 {
        planned.iter().map(execute).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.sweep.jobs)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        pool.install(|| planned.par_iter().map(execute).collect())
    };

    // Merged per-topology summary tables.
    for &topology in &cfg.sweep.topologies {
        let rows: Vec<&SweepRun> =
            runs.iter().filter(|r| r.config.topology == topology).collect();
        io::write_merged_csv(&out_dir.join(topology.as_str()).join("merged.csv"), &rows)?;
    }
    Ok(SweepOutcome { out_dir, runs })
}
