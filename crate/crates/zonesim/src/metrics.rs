//! Per-vehicle and per-run metrics: progress rate, speed deviation, halt
//! detection, N(t) bookkeeping, capacity analysis and summary statistics.

use crate::energy::EnergyLedger;
use crate::geom::Vec2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Halting speed: 10 km/h.
pub const HALT_SPEED: f64 = 10.0 / 3.6;
/// Minimum duration below the halting speed that counts as a halt, seconds.
pub const HALT_WINDOW: f64 = 2.0;
/// N(t) slope above which a run counts as unstable, vehicles/second.
pub const CAPACITY_SLOPE_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot aggregate an empty record set")]
    EmptyRecords,
    #[error("series shorter than the warmup window")]
    SeriesTooShort,
}

/// Instantaneous progress rate: the vehicle's velocity, normalized by the
/// speed limit, projected onto the unit vector toward the destination.
/// 1 means full speed straight at the goal, 0 stopped or perpendicular,
/// negative moving away. Defined as 0 once the destination is reached.
pub fn progress_rate_sample(velocity: Vec2, pos: Vec2, dest: Vec2, v_max: f64) -> f64 {
    debug_assert!(v_max > 0.0);
    let to_dest = dest - pos;
    if to_dest.norm() < 1e-9 {
        return 0.0;
    }
    let sample = velocity.dot(to_dest.normalized()) / v_max;
    sample.clamp(-1.0, 1.0)
}

/// Fractional shortfall of speed against the road limit: 0 at the limit,
/// -1 at a standstill.
pub fn speed_deviation_sample(v: f64, v_max: f64) -> f64 {
    debug_assert!(v_max > 0.0);
    (v - v_max) / v_max
}

/// Count halts in a speed series sampled every `dt` seconds: maximal runs
/// with speed below `halt_speed` lasting at least `window` seconds.
pub fn detect_halts(speeds: &[f64], dt: f64, halt_speed: f64, window: f64) -> u32 {
    debug_assert!(dt > 0.0);
    let mut halts = 0;
    let mut run = 0.0;
    for &v in speeds {
        if v < halt_speed {
            run += dt;
        } else {
            if run >= window {
                halts += 1;
            }
            run = 0.0;
        }
    }
    if run >= window {
        halts += 1;
    }
    halts
}

/// Incremental halt tracker used by the engine; equivalent to running
/// [`detect_halts`] over the full speed series.
#[derive(Clone, Copy, Debug, Default)]
pub struct HaltTracker {
    run: f64,
    halts: u32,
}

impl HaltTracker {
    pub fn observe(&mut self, v: f64, dt: f64, halt_speed: f64, window: f64) {
        if v < halt_speed {
            self.run += dt;
        } else {
            if self.run >= window {
                self.halts += 1;
            }
            self.run = 0.0;
        }
    }

    /// Close the series and return the total halt count.
    pub fn finish(mut self, window: f64) -> u32 {
        if self.run >= window {
            self.halts += 1;
        }
        self.halts
    }
}

/// Completed bookkeeping for one vehicle's trip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub vehicle: u32,
    /// Scheduled arrival time of the vehicle, seconds.
    pub spawn_time: f64,
    /// Time the vehicle physically entered the network, if it ever did.
    pub insert_time: Option<f64>,
    pub finish_time: Option<f64>,
    pub completed: bool,
    /// Total drive time from the scheduled arrival, seconds (t_T).
    pub drive_time: f64,
    /// Distance travelled, meters (d_T).
    pub distance: f64,
    pub energy: EnergyLedger,
    /// Time-weighted mean progress rate over on-network steps, [-1, 1].
    pub mean_progress_rate: f64,
    /// Time-weighted mean speed deviation over on-network steps, [-1, 0].
    pub mean_speed_deviation: f64,
    pub halts: u32,
    /// Member of the seeded trajectory-logging sample.
    pub sampled: bool,
}

/// One row of the per-step run series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub step: u64,
    /// Time at the end of the step, seconds.
    pub time: f64,
    /// Vehicles present in the network after the step (N).
    pub present: u32,
    /// Vehicles inserted during the step.
    pub inserted: u32,
    /// Vehicles that completed their trip during the step.
    pub completed: u32,
    /// Vehicles waiting in origin queues after the step.
    pub queued: u32,
}

/// N(t) time series with per-step insertion/completion counts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSeries {
    pub dt: f64,
    pub rows: Vec<SeriesRow>,
}

impl RunSeries {
    /// Verify `N(t+dt) - N(t) = insertions - completions` at every step.
    pub fn bookkeeping_holds(&self) -> bool {
        let mut prev = 0i64;
        self.rows.iter().all(|row| {
            let expected = prev + row.inserted as i64 - row.completed as i64;
            prev = row.present as i64;
            row.present as i64 == expected
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityVerdict {
    pub stable: bool,
    /// Least-squares slope of N(t) past the warmup, vehicles/second.
    pub slope: f64,
}

/// Regress N(t) on t for `t > warmup`; the run is unstable when the slope
/// exceeds `threshold` (sustained growth past steady state).
pub fn capacity_analysis(
    series: &RunSeries,
    warmup: f64,
    threshold: f64,
) -> Result<CapacityVerdict, MetricsError> {
    let points: Vec<(f64, f64)> = series
        .rows
        .iter()
        .filter(|r| r.time > warmup)
        .map(|r| (r.time, r.present as f64))
        .collect();
    if points.len() < 2 {
        return Err(MetricsError::SeriesTooShort);
    }
    let n = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_n = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (t, v) in &points {
        cov += (t - mean_t) * (v - mean_n);
        var += (t - mean_t) * (t - mean_t);
    }
    let slope = cov / var;
    Ok(CapacityVerdict { stable: slope <= threshold, slope })
}

/// Quantile summary of one metric. Quartiles use linear interpolation
/// between order statistics (the common "R-7" rule: the p-quantile sits at
/// fractional index `(n-1)p`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub iqr: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quartiles(values: &[f64]) -> Result<Quartiles, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    Ok(Quartiles {
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        q1,
        median: quantile(&sorted, 0.5),
        q3,
        iqr: q3 - q1,
    })
}

/// Summary statistics over a set of trip records.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub completed_count: usize,
    pub completion_fraction: f64,
    pub drive_time: Quartiles,
    pub distance: Quartiles,
    pub energy_used: Quartiles,
    pub progress_rate: Quartiles,
    pub speed_deviation: Quartiles,
    pub total_halts: u64,
}

/// Aggregate a non-empty record set. Callers choose the filtering policy:
/// pass all records for the unfiltered view or only completed trips for the
/// filtered one.
pub fn aggregate(records: &[TripRecord]) -> Result<Aggregate, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let field = |f: fn(&TripRecord) -> f64| -> Vec<f64> { records.iter().map(f).collect() };
    let completed_count = records.iter().filter(|r| r.completed).count();
    Ok(Aggregate {
        count: records.len(),
        completed_count,
        completion_fraction: completed_count as f64 / records.len() as f64,
        drive_time: quartiles(&field(|r| r.drive_time))?,
        distance: quartiles(&field(|r| r.distance))?,
        energy_used: quartiles(&field(|r| r.energy.used))?,
        progress_rate: quartiles(&field(|r| r.mean_progress_rate))?,
        speed_deviation: quartiles(&field(|r| r.mean_speed_deviation))?,
        total_halts: records.iter().map(|r| r.halts as u64).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const KMH: f64 = 1.0 / 3.6;

    #[test]
    fn progress_rate_extremes() {
        let v_max = 13.89;
        let pos = Vec2::new(0.0, 0.0);
        let dest = Vec2::new(100.0, 0.0);
        let toward = Vec2::new(v_max, 0.0);
        assert_relative_eq!(progress_rate_sample(toward, pos, dest, v_max), 1.0);
        assert_relative_eq!(progress_rate_sample(Vec2::default(), pos, dest, v_max), 0.0);
        let away = Vec2::new(-v_max, 0.0);
        assert_relative_eq!(progress_rate_sample(away, pos, dest, v_max), -1.0);
        let perpendicular = Vec2::new(0.0, v_max);
        assert_relative_eq!(progress_rate_sample(perpendicular, pos, dest, v_max), 0.0);
        // At the destination the sample is defined as zero.
        assert_eq!(progress_rate_sample(toward, dest, dest, v_max), 0.0);
    }

    #[test]
    fn speed_deviation_examples() {
        let v_max = 50.0 * KMH;
        assert_relative_eq!(speed_deviation_sample(v_max, v_max), 0.0);
        assert_relative_eq!(speed_deviation_sample(0.0, v_max), -1.0);
        assert_relative_eq!(speed_deviation_sample(25.0 * KMH, v_max), -0.5);
    }

    #[test]
    fn halt_detection_examples() {
        // Constant 50 km/h: never below the halting speed.
        let cruise = vec![50.0 * KMH; 60];
        assert_eq!(detect_halts(&cruise, 1.0, HALT_SPEED, HALT_WINDOW), 0);
        // 3 s below 10 km/h: one halt.
        let dip: Vec<f64> = [12.0, 8.0, 7.0, 9.0, 12.0].iter().map(|v| v * KMH).collect();
        assert_eq!(detect_halts(&dip, 1.0, HALT_SPEED, HALT_WINDOW), 1);
        // Alternating 1 s dips never reach the 2 s window.
        let flicker: Vec<f64> = [8.0, 12.0, 8.0, 12.0, 8.0].iter().map(|v| v * KMH).collect();
        assert_eq!(detect_halts(&flicker, 1.0, HALT_SPEED, HALT_WINDOW), 0);
        // A run that ends the series still counts.
        let tail: Vec<f64> = [12.0, 8.0, 8.0].iter().map(|v| v * KMH).collect();
        assert_eq!(detect_halts(&tail, 1.0, HALT_SPEED, HALT_WINDOW), 1);
    }

    /// Brute-force oracle: scan every maximal below-threshold run.
    fn halts_by_runs(speeds: &[f64], dt: f64, v_h: f64, window: f64) -> u32 {
        let mut count = 0;
        let mut i = 0;
        while i < speeds.len() {
            if speeds[i] < v_h {
                let mut j = i;
                while j < speeds.len() && speeds[j] < v_h {
                    j += 1;
                }
                if (j - i) as f64 * dt >= window {
                    count += 1;
                }
                i = j;
            } else {
                i += 1;
            }
        }
        count
    }

    #[test]
    fn halt_tracker_matches_batch_detector() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let len = rng.gen_range(1..80);
            let speeds: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..6.0)).collect();
            let mut tracker = HaltTracker::default();
            for &v in &speeds {
                tracker.observe(v, 1.0, HALT_SPEED, HALT_WINDOW);
            }
            let batch = detect_halts(&speeds, 1.0, HALT_SPEED, HALT_WINDOW);
            assert_eq!(tracker.finish(HALT_WINDOW), batch);
            assert_eq!(batch, halts_by_runs(&speeds, 1.0, HALT_SPEED, HALT_WINDOW));
        }
    }

    proptest! {
        #[test]
        fn halt_detector_equals_window_scan_oracle(
            speeds in prop::collection::vec(0.0f64..8.0, 0..120),
            dt in 0.25f64..2.0,
        ) {
            prop_assert_eq!(
                detect_halts(&speeds, dt, HALT_SPEED, HALT_WINDOW),
                halts_by_runs(&speeds, dt, HALT_SPEED, HALT_WINDOW)
            );
        }
    }

    fn ramp_series(slope: f64, noise: f64, steps: usize) -> RunSeries {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        RunSeries {
            dt: 1.0,
            rows: (0..steps)
                .map(|i| {
                    let t = (i + 1) as f64;
                    let n = slope * t + noise * rng.gen_range(-1.0..1.0);
                    SeriesRow {
                        step: i as u64,
                        time: t,
                        present: n.max(0.0).round() as u32,
                        inserted: 0,
                        completed: 0,
                        queued: 0,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn capacity_flags_growth_and_accepts_steady_state() {
        let flat = ramp_series(0.0, 3.0, 1200);
        let verdict = capacity_analysis(&flat, 300.0, CAPACITY_SLOPE_THRESHOLD).unwrap();
        assert!(verdict.stable, "flat noisy series must be stable, slope {}", verdict.slope);

        let ramp = ramp_series(0.05, 0.0, 1200);
        let verdict = capacity_analysis(&ramp, 300.0, CAPACITY_SLOPE_THRESHOLD).unwrap();
        assert!(!verdict.stable);
        assert_relative_eq!(verdict.slope, 0.05, epsilon = 1e-3);

        assert_eq!(
            capacity_analysis(&ramp, 1e6, CAPACITY_SLOPE_THRESHOLD),
            Err(MetricsError::SeriesTooShort)
        );
    }

    #[test]
    fn bookkeeping_identity() {
        let mut series = RunSeries { dt: 1.0, rows: Vec::new() };
        let mut present = 0u32;
        for step in 0..50u64 {
            let inserted = (step % 3) as u32;
            let completed = if present > 2 { 1 } else { 0 };
            present = present + inserted - completed;
            series.rows.push(SeriesRow {
                step,
                time: step as f64,
                present,
                inserted,
                completed,
                queued: 0,
            });
        }
        assert!(series.bookkeeping_holds());
        series.rows[20].present += 1;
        assert!(!series.bookkeeping_holds());
    }

    fn record(drive_time: f64) -> TripRecord {
        TripRecord {
            vehicle: 0,
            spawn_time: 0.0,
            insert_time: Some(0.0),
            finish_time: Some(drive_time),
            completed: true,
            drive_time,
            distance: drive_time * 10.0,
            energy: EnergyLedger::default(),
            mean_progress_rate: 0.5,
            mean_speed_deviation: -0.25,
            halts: 2,
            sampled: false,
        }
    }

    #[test]
    fn aggregate_single_record_collapses_quartiles() {
        let agg = aggregate(&[record(42.0)]).unwrap();
        assert_eq!(agg.count, 1);
        assert_relative_eq!(agg.drive_time.q1, 42.0);
        assert_relative_eq!(agg.drive_time.median, 42.0);
        assert_relative_eq!(agg.drive_time.q3, 42.0);
        assert_relative_eq!(agg.drive_time.iqr, 0.0);
        assert_eq!(agg.total_halts, 2);
    }

    #[test]
    fn aggregate_five_point_quartiles_match_hand_computation() {
        // Sorted drive times [2, 4, 4, 5, 9]: with linear interpolation the
        // quartile indices land exactly on the order statistics.
        let records: Vec<TripRecord> = [4.0, 9.0, 2.0, 5.0, 4.0].map(record).to_vec();
        let agg = aggregate(&records).unwrap();
        assert_relative_eq!(agg.drive_time.q1, 4.0);
        assert_relative_eq!(agg.drive_time.median, 4.0);
        assert_relative_eq!(agg.drive_time.q3, 5.0);
        assert_relative_eq!(agg.drive_time.iqr, 1.0);
        assert_relative_eq!(agg.drive_time.mean, 4.8);
        // A four-point set interpolates: [1, 2, 3, 10] -> q1 = 1.75.
        let records: Vec<TripRecord> = [1.0, 2.0, 3.0, 10.0].map(record).to_vec();
        let agg = aggregate(&records).unwrap();
        assert_relative_eq!(agg.drive_time.q1, 1.75);
        assert_relative_eq!(agg.drive_time.q3, 4.75);
    }

    #[test]
    fn aggregate_mean_matches_brute_force_sum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let records: Vec<TripRecord> =
            (0..1000).map(|_| record(rng.gen_range(10.0..500.0))).collect();
        let agg = aggregate(&records).unwrap();
        let sum: f64 = records.iter().map(|r| r.drive_time).sum();
        assert_relative_eq!(agg.drive_time.mean, sum / 1000.0, max_relative = 1e-12);
        assert_eq!(aggregate(&[]), Err(MetricsError::EmptyRecords));
    }
}
