//! Longitudinal EV powertrain model.
//!
//! Each vehicle's drive cycle is folded into an [`EnergyLedger`] holding the
//! battery-side drive energy, the energy recovered through regenerative
//! braking, and the auxiliary draw, with
//! `used = output - input + lost` maintained exactly at every step.

use serde::{Deserialize, Serialize};
use std::io::Read;
use thiserror::Error;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("drive cycle csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("drive cycle: {0}")]
    Invalid(&'static str),
}

/// Vehicle and environment parameters of the longitudinal model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvParams {
    /// Curb mass in kg.
    pub mass: f64,
    /// Aerodynamic drag coefficient.
    pub drag_coefficient: f64,
    /// Frontal area in m².
    pub frontal_area: f64,
    /// Rolling resistance coefficient.
    pub rolling_resistance: f64,
    /// Air density in kg/m³.
    pub air_density: f64,
    /// Battery-to-wheel drivetrain efficiency, (0, 1].
    pub drivetrain_efficiency: f64,
    /// Wheel-to-battery regeneration efficiency, [0, 1].
    pub regen_efficiency: f64,
    /// Constant auxiliary draw in W.
    pub auxiliary_power: f64,
}

impl Default for EvParams {
    fn default() -> Self {
        EvParams {
            mass: 1600.0,
            drag_coefficient: 0.30,
            frontal_area: 2.3,
            rolling_resistance: 0.012,
            air_density: 1.225,
            drivetrain_efficiency: 0.90,
            regen_efficiency: 0.65,
            auxiliary_power: 300.0,
        }
    }
}

impl EvParams {
    pub fn validate(&self) -> Result<(), EnergyError> {
        let positive = self.mass > 0.0
            && self.drag_coefficient > 0.0
            && self.frontal_area > 0.0
            && self.rolling_resistance > 0.0
            && self.air_density > 0.0
            && self.auxiliary_power >= 0.0;
        if !positive {
            return Err(EnergyError::Invalid("physical parameters must be positive"));
        }
        if !(self.drivetrain_efficiency > 0.0 && self.drivetrain_efficiency <= 1.0) {
            return Err(EnergyError::Invalid("drivetrain efficiency must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.regen_efficiency) {
            return Err(EnergyError::Invalid("regen efficiency must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Per-vehicle energy accounting in joules.
///
/// `output` is battery-to-motor drive energy (drivetrain losses folded in),
/// `input` is energy recovered by regenerative braking, and `lost` carries
/// the auxiliary draw. The identity `used = output - input + lost` holds
/// exactly by construction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub output: f64,
    pub input: f64,
    pub lost: f64,
    pub used: f64,
}

/// Tractive power at the wheel in W:
/// `(m·a + m·g·Crr·[v>0] + ½·ρ·Cd·A·v²) · v`.
/// Negative values are candidates for regeneration.
pub fn wheel_power(v: f64, a: f64, p: &EvParams) -> f64 {
    debug_assert!(v >= 0.0);
    let rolling = if v > 0.0 { p.mass * GRAVITY * p.rolling_resistance } else { 0.0 };
    let drag = 0.5 * p.air_density * p.drag_coefficient * p.frontal_area * v * v;
    (p.mass * a + rolling + drag) * v
}

/// Fold one step of a drive cycle into the ledger. Positive wheel power
/// draws `P/η_d · dt` from the battery; negative wheel power returns
/// `|P|·η_r · dt`; the auxiliary draw accrues unconditionally.
pub fn accumulate(ledger: &mut EnergyLedger, v: f64, a: f64, dt: f64, p: &EvParams) {
    debug_assert!(dt > 0.0);
    let power = wheel_power(v, a, p);
    if power >= 0.0 {
        ledger.output += power / p.drivetrain_efficiency * dt;
    } else {
        ledger.input += -power * p.regen_efficiency * dt;
    }
    ledger.lost += p.auxiliary_power * dt;
    ledger.used = ledger.output - ledger.input + ledger.lost;
}

/// Score an externally supplied drive cycle given as CSV rows of
/// `time,speed` (seconds, m/s). Acceleration is the forward difference
/// between consecutive samples.
pub fn score_cycle_csv<R: Read>(input: R, p: &EvParams) -> Result<EnergyLedger, EnergyError> {
    p.validate()?;
    let mut reader = csv::Reader::from_reader(input);
    let mut samples: Vec<(f64, f64)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let t: f64 = record[0].parse().map_err(|_| EnergyError::Invalid("bad time"))?;
        let v: f64 = record[1].parse().map_err(|_| EnergyError::Invalid("bad speed"))?;
        if v < 0.0 {
            return Err(EnergyError::Invalid("speeds must be >= 0"));
        }
        samples.push((t, v));
    }
    let mut ledger = EnergyLedger::default();
    for w in samples.windows(2) {
        let dt = w[1].0 - w[0].0;
        if dt <= 0.0 {
            return Err(EnergyError::Invalid("times must be strictly increasing"));
        }
        let a = (w[1].1 - w[0].1) / dt;
        accumulate(&mut ledger, w[1].1, a, dt, p);
    }
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn no_motion_no_wheel_power() {
        let p = EvParams::default();
        assert_eq!(wheel_power(0.0, 0.0, &p), 0.0);
        assert_eq!(wheel_power(0.0, 3.0, &p), 0.0);
    }

    #[test]
    fn cruise_power_matches_hand_arithmetic() {
        // Independent re-derivation: rolling + drag forces times speed.
        let p = EvParams::default();
        let v = 13.89;
        let rolling = 1600.0 * 9.81 * 0.012;
        let drag = 0.5 * 1.225 * 0.30 * 2.3 * v * v;
        let expected = (rolling + drag) * v;
        assert_relative_eq!(wheel_power(v, 0.0, &p), expected, max_relative = 1e-12);
        // ~3.74 kW at 50 km/h.
        assert_relative_eq!(expected, 3748.87, epsilon = 0.01);
    }

    #[test]
    fn braking_power_is_negative() {
        let p = EvParams::default();
        assert!(wheel_power(10.0, -3.0, &p) < 0.0);
    }

    #[test]
    fn stationary_vehicle_costs_only_auxiliary() {
        let p = EvParams::default();
        let mut ledger = EnergyLedger::default();
        for _ in 0..100 {
            accumulate(&mut ledger, 0.0, 0.0, 1.0, &p);
        }
        assert_eq!(ledger.output, 0.0);
        assert_eq!(ledger.input, 0.0);
        assert_relative_eq!(ledger.used, 30_000.0);
    }

    #[test]
    fn constant_cruise_matches_closed_form() {
        let p = EvParams::default();
        let v = 13.89;
        let mut ledger = EnergyLedger::default();
        for _ in 0..1000 {
            accumulate(&mut ledger, v, 0.0, 1.0, &p);
        }
        let per_second = wheel_power(v, 0.0, &p) / p.drivetrain_efficiency + p.auxiliary_power;
        assert_relative_eq!(ledger.used, per_second * 1000.0, max_relative = 1e-9);
        // ~4.47 MJ for 1000 s at 50 km/h.
        assert!(ledger.used > 4.4e6 && ledger.used < 4.5e6);
    }

    #[test]
    fn regen_never_exceeds_recoverable_kinetic_energy() {
        let p = EvParams::default();
        let dt = 0.5;
        let mut ledger = EnergyLedger::default();
        let mut v: f64 = 0.0;
        let peak = 13.89;
        // Accelerate to 50 km/h...
        while v < peak {
            let a = 2.0_f64.min((peak - v) / dt);
            v += a * dt;
            accumulate(&mut ledger, v, a, dt, &p);
        }
        let input_before_braking = ledger.input;
        assert_eq!(input_before_braking, 0.0);
        // ...then brake to a stop.
        while v > 0.0 {
            let a = (-3.0_f64).max(-v / dt);
            v += a * dt;
            accumulate(&mut ledger, v, a, dt, &p);
        }
        let kinetic = 0.5 * p.mass * peak * peak;
        assert!(ledger.input <= p.regen_efficiency * kinetic + 1e-9);
        assert!(ledger.input > 0.0);
    }

    #[test]
    fn ledger_identity_and_monotonicity() {
        let p = EvParams::default();
        let mut ledger = EnergyLedger::default();
        let mut prev = ledger;
        let mut v: f64 = 0.0;
        for step in 0..200 {
            let a = if step % 7 < 4 { 1.5 } else { -2.0 };
            v = (v + a).clamp(0.0, 14.0);
            accumulate(&mut ledger, v, a, 1.0, &p);
            assert_eq!(ledger.used, ledger.output - ledger.input + ledger.lost);
            assert!(ledger.output >= prev.output);
            assert!(ledger.input >= prev.input);
            assert!(ledger.lost > prev.lost);
            prev = ledger;
        }
    }

    #[test]
    fn doubling_auxiliary_power_shifts_used_by_aux_times_duration() {
        let mut p = EvParams::default();
        let cycle: Vec<f64> = (0..50).map(|i| (i % 14) as f64).collect();
        let run = |p: &EvParams| {
            let mut ledger = EnergyLedger::default();
            let mut prev = 0.0;
            for &v in &cycle {
                accumulate(&mut ledger, v, v - prev, 1.0, p);
                prev = v;
            }
            ledger.used
        };
        let base = run(&p);
        p.auxiliary_power *= 2.0;
        let doubled = run(&p);
        assert_relative_eq!(doubled - base, 300.0 * cycle.len() as f64, max_relative = 1e-12);
    }

    #[test]
    fn score_cycle_from_csv() {
        let p = EvParams::default();
        let csv = "time,speed\n0,0\n1,5\n2,10\n3,10\n4,5\n5,0\n";
        let ledger = score_cycle_csv(csv.as_bytes(), &p).unwrap();
        assert!(ledger.output > 0.0);
        assert!(ledger.input > 0.0);
        assert_relative_eq!(ledger.lost, 5.0 * 300.0);
        assert_eq!(ledger.used, ledger.output - ledger.input + ledger.lost);
    }
}
