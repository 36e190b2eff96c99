//! Report emission: merged trend tables (CSV/JSON) and SVG plots over a
//! sweep's results directory. CSV rows are the source of truth; the SVGs
//! plot exactly those rows.

use super::io::{read_meta, read_series_csv, read_summary};
use super::svg::{line_chart, Series, PALETTE};
use super::{HarnessError, RunSummary, Topology};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

/// Per-(topology, rate) trend aggregated over seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrendRow {
    pub topology: String,
    pub rate: f64,
    pub seeds: usize,
    pub completion_fraction: f64,
    pub mean_drive_time: f64,
    pub q1_drive_time: f64,
    pub q3_drive_time: f64,
    pub drive_time_iqr: f64,
    pub mean_distance: f64,
    pub mean_energy_used: f64,
    pub mean_progress_rate: f64,
    pub mean_speed_deviation: f64,
    pub mean_total_halts: f64,
    pub mean_n_slope: f64,
    pub unstable_fraction: f64,
}

#[derive(Debug, Default)]
pub struct ReportPaths {
    pub files: Vec<PathBuf>,
}

struct LoadedRun {
    topology: Topology,
    rate: f64,
    summary: RunSummary,
    series_path: PathBuf,
}

fn load_runs(results_dir: &Path) -> Result<Vec<LoadedRun>, HarnessError> {
    let mut runs = Vec::new();
    for topology in Topology::ALL {
        let topo_dir = results_dir.join(topology.as_str());
        if !topo_dir.is_dir() {
            continue;
        }
        let mut rate_dirs: Vec<PathBuf> = fs::read_dir(&topo_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        rate_dirs.sort();
        for rate_dir in rate_dirs {
            let mut seed_dirs: Vec<PathBuf> = fs::read_dir(&rate_dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            seed_dirs.sort();
            for seed_dir in seed_dirs {
                let Ok(meta) = read_meta(&seed_dir) else { continue };
                let Ok(summary) = read_summary(&seed_dir) else { continue };
                runs.push(LoadedRun {
                    topology,
                    rate: meta.config.rate,
                    summary,
                    series_path: seed_dir.join("series.csv"),
                });
            }
        }
    }
    if runs.is_empty() {
        return Err(HarnessError::EmptyResults(results_dir.to_path_buf()));
    }
    Ok(runs)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn trend_rows(runs: &[LoadedRun]) -> Vec<TrendRow> {
    let mut groups: BTreeMap<(String, u64), Vec<&LoadedRun>> = BTreeMap::new();
    for run in runs {
        let key = (run.topology.as_str().to_string(), (run.rate * 1000.0).round() as u64);
        groups.entry(key).or_default().push(run);
    }
    groups
        .into_iter()
        .map(|((topology, rate_key), group)| {
            let pick = |f: &dyn Fn(&RunSummary) -> Option<f64>| -> Vec<f64> {
                group.iter().filter_map(|r| f(&r.summary)).collect()
            };
            let completed = |g: &dyn Fn(&crate::metrics::Aggregate) -> f64| {
                pick(&|s: &RunSummary| s.completed.as_ref().map(g))
            };
            let all = |g: &dyn Fn(&crate::metrics::Aggregate) -> f64| {
                pick(&|s: &RunSummary| s.all.as_ref().map(g))
            };
            TrendRow {
                topology,
                rate: rate_key as f64 / 1000.0,
                seeds: group.len(),
                completion_fraction: mean(&all(&|a| a.completion_fraction)),
                mean_drive_time: mean(&completed(&|a| a.drive_time.mean)),
                q1_drive_time: mean(&completed(&|a| a.drive_time.q1)),
                q3_drive_time: mean(&completed(&|a| a.drive_time.q3)),
                drive_time_iqr: mean(&completed(&|a| a.drive_time.iqr)),
                mean_distance: mean(&completed(&|a| a.distance.mean)),
                mean_energy_used: mean(&completed(&|a| a.energy_used.mean)),
                mean_progress_rate: mean(&all(&|a| a.progress_rate.mean)),
                mean_speed_deviation: mean(&all(&|a| a.speed_deviation.mean)),
                mean_total_halts: mean(&all(&|a| a.total_halts as f64)),
                mean_n_slope: mean(&pick(&|s| s.capacity.map(|c| c.slope))),
                unstable_fraction: mean(
                    &pick(&|s| s.capacity.map(|c| if c.stable { 0.0 } else { 1.0 })),
                ),
            }
        })
        .collect()
}

/// Emit trend tables and plots from a sweep results directory into
/// `<results>/report/`.
pub fn emit_report(
    results_dir: &Path,
    formats: &[ReportFormat],
) -> Result<ReportPaths, HarnessError> {
    let runs = load_runs(results_dir)?;
    let rows = trend_rows(&runs);
    let report_dir = results_dir.join("report");
    fs::create_dir_all(&report_dir)?;
    let mut paths = ReportPaths::default();

    if formats.contains(&ReportFormat::Csv) {
        let path = report_dir.join("trends.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            "topology",
            "rate",
            "seeds",
            "completion_fraction",
            "mean_drive_time",
            "q1_drive_time",
            "q3_drive_time",
            "drive_time_iqr",
            "mean_distance",
            "mean_energy_used",
            "mean_progress_rate",
            "mean_speed_deviation",
            "mean_total_halts",
            "mean_n_slope",
            "unstable_fraction",
        ])?;
        for r in &rows {
            w.write_record(&[
                r.topology.clone(),
                r.rate.to_string(),
                r.seeds.to_string(),
                r.completion_fraction.to_string(),
                r.mean_drive_time.to_string(),
                r.q1_drive_time.to_string(),
                r.q3_drive_time.to_string(),
                r.drive_time_iqr.to_string(),
                r.mean_distance.to_string(),
                r.mean_energy_used.to_string(),
                r.mean_progress_rate.to_string(),
                r.mean_speed_deviation.to_string(),
                r.mean_total_halts.to_string(),
                r.mean_n_slope.to_string(),
                r.unstable_fraction.to_string(),
            ])?;
        }
        w.flush()?;
        paths.files.push(path);
    }
    if formats.contains(&ReportFormat::Json) {
        let path = report_dir.join("trends.json");
        fs::write(&path, serde_json::to_string_pretty(&rows)?)?;
        paths.files.push(path);
    }
    if formats.contains(&ReportFormat::Svg) {
        paths.files.extend(emit_trend_svgs(&report_dir, &rows)?);
        paths.files.extend(emit_series_panels(&report_dir, &runs)?);
    }
    Ok(paths)
}

fn topology_color(name: &str) -> &'static str {
    match name {
        "zonal" => PALETTE[0],
        "trad-static" => PALETTE[1],
        _ => PALETTE[2],
    }
}

fn emit_trend_svgs(report_dir: &Path, rows: &[TrendRow]) -> Result<Vec<PathBuf>, HarnessError> {
    let metrics: [(&str, &str, Box<dyn Fn(&TrendRow) -> f64>, bool); 6] = [
        ("drive_time", "mean drive time (s)", Box::new(|r| r.mean_drive_time), true),
        (
            "speed_deviation",
            "mean speed deviation",
            Box::new(|r| r.mean_speed_deviation),
            false,
        ),
        ("progress_rate", "mean progress rate", Box::new(|r| r.mean_progress_rate), false),
        ("halts", "total halts per run", Box::new(|r| r.mean_total_halts), false),
        ("energy", "mean energy used (J)", Box::new(|r| r.mean_energy_used), false),
        ("n_slope", "N(t) slope (veh/s)", Box::new(|r| r.mean_n_slope), false),
    ];
    let mut files = Vec::new();
    for (name, y_label, value, with_band) in metrics {
        let mut series = Vec::new();
        let mut topologies: Vec<String> = rows.iter().map(|r| r.topology.clone()).collect();
        topologies.sort();
        topologies.dedup();
        for topology in topologies {
            let mut pts: Vec<&TrendRow> =
                rows.iter().filter(|r| r.topology == topology).collect();
            pts.sort_by(|a, b| a.rate.partial_cmp(&b.rate).unwrap());
            let points: Vec<(f64, f64)> = pts
                .iter()
                .map(|r| (r.rate, value(r)))
                .filter(|(_, y)| y.is_finite())
                .collect();
            let band = if with_band {
                pts.iter()
                    .map(|r| (r.rate, r.q1_drive_time, r.q3_drive_time))
                    .filter(|(_, lo, hi)| lo.is_finite() && hi.is_finite())
                    .collect()
            } else {
                Vec::new()
            };
            series.push(Series {
                color: topology_color(&topology),
                name: topology,
                points,
                band,
            });
        }
        let svg = line_chart(
            &format!("{name} vs traffic rate"),
            "traffic rate (veh/h/zone)",
            y_label,
            &series,
        );
        let path = report_dir.join(format!("{name}.svg"));
        fs::write(&path, svg)?;
        files.push(path);
    }
    Ok(files)
}

/// N(t) panels: one plot per swept rate, seed-averaged per topology, plus a
/// CSV mirror of every plotted point.
fn emit_series_panels(
    report_dir: &Path,
    runs: &[LoadedRun],
) -> Result<Vec<PathBuf>, HarnessError> {
    let mut by_rate: BTreeMap<u64, BTreeMap<String, Vec<&LoadedRun>>> = BTreeMap::new();
    for run in runs {
        by_rate
            .entry((run.rate * 1000.0).round() as u64)
            .or_default()
            .entry(run.topology.as_str().to_string())
            .or_default()
            .push(run);
    }
    let mut files = Vec::new();
    let csv_path = report_dir.join("n_t.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["rate", "topology", "time", "mean_present"])?;
    for (rate_key, topologies) in &by_rate {
        let rate = *rate_key as f64 / 1000.0;
        let mut series = Vec::new();
        for (topology, group) in topologies {
            // Seed-average N(t) pointwise.
            let mut sums: Vec<(f64, f64, u32)> = Vec::new();
            for run in group {
                let Ok(s) = read_series_csv(&run.series_path) else { continue };
                for (i, row) in s.rows.iter().enumerate() {
                    if i >= sums.len() {
                        sums.push((row.time, 0.0, 0));
                    }
                    sums[i].1 += row.present as f64;
                    sums[i].2 += 1;
                }
            }
            let points: Vec<(f64, f64)> = sums
                .iter()
                .filter(|(_, _, n)| *n > 0)
                .map(|&(t, sum, n)| (t, sum / n as f64))
                .collect();
            for &(t, v) in &points {
                w.write_record(&[
                    rate.to_string(),
                    topology.clone(),
                    t.to_string(),
                    v.to_string(),
                ])?;
            }
            series.push(Series {
                color: topology_color(topology),
                name: topology.clone(),
                points,
                band: Vec::new(),
            });
        }
        let svg = line_chart(
            &format!("vehicles present, {rate} veh/h/zone"),
            "time (s)",
            "N(t)",
            &series,
        );
        let path = report_dir.join(format!("n_t_rate_{}.svg", super::format_rate(rate)));
        fs::write(&path, svg)?;
        files.push(path);
    }
    w.flush()?;
    files.push(csv_path);
    Ok(files)
}
