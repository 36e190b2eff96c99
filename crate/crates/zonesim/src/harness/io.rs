//! Result persistence. Every per-run artifact except `meta.json` is a pure
//! function of the run configuration, so re-running a fingerprint
//! reproduces the files byte for byte; `meta.json` carries the wall clock
//! and is excluded from that guarantee.

use super::{HarnessError, RunConfig, RunResult, RunSummary, SweepRun};
use crate::engine::{StopCause, StopInterval};
use crate::metrics::{RunSeries, SeriesRow, TripRecord};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Serialize, Deserialize)]
pub struct RunMeta {
    pub fingerprint: String,
    pub config: RunConfig,
    pub wall_clock: f64,
}

#[derive(Serialize, Deserialize)]
struct SummaryDoc {
    fingerprint: String,
    #[serde(flatten)]
    summary: RunSummary,
}

pub fn write_run(dir: &Path, result: &RunResult) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    write_trips_csv(&dir.join("trips.csv"), &result.output.trips)?;
    write_series_csv(&dir.join("series.csv"), &result.output.series)?;
    let summary = SummaryDoc {
        fingerprint: result.fingerprint.clone(),
        summary: result.summary.clone(),
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    if !result.output.stops.is_empty() {
        write_stops_csv(&dir.join("stops.csv"), &result.output.stops)?;
    }
    if !result.output.greens.is_empty() {
        let mut w = csv::Writer::from_path(dir.join("greens.csv"))?;
        w.write_record(["signal", "phase", "end_time", "duration", "nominal"])?;
        for g in &result.output.greens {
            w.write_record(&[
                g.signal.to_string(),
                g.phase.to_string(),
                g.end_time.to_string(),
                g.duration.to_string(),
                g.nominal.to_string(),
            ])?;
        }
        w.flush()?;
    }
    if !result.output.prolongs.is_empty() {
        let mut w = csv::Writer::from_path(dir.join("prolongs.csv"))?;
        w.write_record(["signal", "phase", "time", "max_time_loss"])?;
        for p in &result.output.prolongs {
            w.write_record(&[
                p.signal.to_string(),
                p.phase.to_string(),
                p.time.to_string(),
                p.max_time_loss.to_string(),
            ])?;
        }
        w.flush()?;
    }
    if !result.output.trajectories.is_empty() {
        let mut w = csv::Writer::from_path(dir.join("trajectories.csv"))?;
        w.write_record(["step", "vehicle", "edge", "offset", "speed", "accel"])?;
        for row in &result.output.trajectories {
            w.write_record(&[
                row.step.to_string(),
                row.vehicle.to_string(),
                row.edge.to_string(),
                row.offset.to_string(),
                row.speed.to_string(),
                row.accel.to_string(),
            ])?;
        }
        w.flush()?;
    }
    // Wall clock lives only here.
    let meta = RunMeta {
        fingerprint: result.fingerprint.clone(),
        config: result.config.clone(),
        wall_clock: result.wall_clock,
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<RunMeta, HarnessError> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?)
}

pub fn read_summary(dir: &Path) -> Result<RunSummary, HarnessError> {
    let doc: SummaryDoc = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)?;
    Ok(doc.summary)
}

pub fn write_trips_csv(path: &Path, trips: &[TripRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "vehicle",
        "spawn_time",
        "insert_time",
        "finish_time",
        "completed",
        "drive_time",
        "distance",
        "energy_output",
        "energy_input",
        "energy_lost",
        "energy_used",
        "mean_progress_rate",
        "mean_speed_deviation",
        "halts",
        "sampled",
    ])?;
    for t in trips {
        w.write_record(&[
            t.vehicle.to_string(),
            t.spawn_time.to_string(),
            t.insert_time.map_or_else(String::new, |v| v.to_string()),
            t.finish_time.map_or_else(String::new, |v| v.to_string()),
            t.completed.to_string(),
            t.drive_time.to_string(),
            t.distance.to_string(),
            t.energy.output.to_string(),
            t.energy.input.to_string(),
            t.energy.lost.to_string(),
            t.energy.used.to_string(),
            t.mean_progress_rate.to_string(),
            t.mean_speed_deviation.to_string(),
            t.halts.to_string(),
            t.sampled.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_series_csv(path: &Path, series: &RunSeries) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "time", "present", "inserted", "completed", "queued"])?;
    for r in &series.rows {
        w.write_record(&[
            r.step.to_string(),
            r.time.to_string(),
            r.present.to_string(),
            r.inserted.to_string(),
            r.completed.to_string(),
            r.queued.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series_csv(path: &Path) -> Result<RunSeries, HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(SeriesRow {
            step: record[0].parse().unwrap_or(0),
            time: record[1].parse().unwrap_or(0.0),
            present: record[2].parse().unwrap_or(0),
            inserted: record[3].parse().unwrap_or(0),
            completed: record[4].parse().unwrap_or(0),
            queued: record[5].parse().unwrap_or(0),
        });
    }
    let dt = if rows.len() >= 2 { rows[1].time - rows[0].time } else { 1.0 };
    Ok(RunSeries { dt, rows })
}

fn write_stops_csv(path: &Path, stops: &[StopInterval]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["vehicle", "start", "end", "cause"])?;
    for s in stops {
        let cause = match s.cause {
            StopCause::Signal => "signal",
            StopCause::Queue => "queue",
            StopCause::Merge => "merge",
        };
        w.write_record(&[
            s.vehicle.to_string(),
            s.start.to_string(),
            s.end.to_string(),
            cause.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (rate, seed) with the headline metrics of the run.
pub fn write_merged_csv(path: &Path, runs: &[&SweepRun]) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut rows: Vec<&&SweepRun> = runs.iter().collect();
    rows.sort_by(|a, b| {
        a.config
            .rate
            .partial_cmp(&b.config.rate)
            .unwrap()
            .then(a.config.seed.cmp(&b.config.seed))
    });
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "topology",
        "rate",
        "seed",
        "spawned",
        "completed",
        "completion_fraction",
        "mean_drive_time",
        "q1_drive_time",
        "median_drive_time",
        "q3_drive_time",
        "mean_distance",
        "mean_energy_used",
        "mean_progress_rate",
        "mean_speed_deviation",
        "total_halts",
        "n_slope",
        "stable",
        "error",
    ])?;
    for run in rows {
        let mut record = vec![
            run.config.topology.to_string(),
            run.config.rate.to_string(),
            run.config.seed.to_string(),
        ];
        match &run.summary {
            Some(summary) => {
                let completed = summary.completed.as_ref();
                let all = summary.all.as_ref();
                let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
                record.extend([
                    summary.spawned.to_string(),
                    all.map_or_else(String::new, |a| a.completed_count.to_string()),
                    fmt(all.map(|a| a.completion_fraction)),
                    fmt(completed.map(|c| c.drive_time.mean)),
                    fmt(completed.map(|c| c.drive_time.q1)),
                    fmt(completed.map(|c| c.drive_time.median)),
                    fmt(completed.map(|c| c.drive_time.q3)),
                    fmt(completed.map(|c| c.distance.mean)),
                    fmt(completed.map(|c| c.energy_used.mean)),
                    fmt(all.map(|a| a.progress_rate.mean)),
                    fmt(all.map(|a| a.speed_deviation.mean)),
                    all.map_or_else(String::new, |a| a.total_halts.to_string()),
                    fmt(summary.capacity.map(|c| c.slope)),
                    summary
                        .capacity
                        .map_or_else(String::new, |c| c.stable.to_string()),
                    run.error.clone().unwrap_or_default(),
                ]);
            }
            None => {
                record.extend(std::iter::repeat(String::new()).take(14));
                record.push(run.error.clone().unwrap_or_default());
            }
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
