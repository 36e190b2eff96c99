//! Procedural construction of the two road topologies under comparison:
//! a traditional signalized grid and a zonal grid of unidirectional loops.

mod traditional;
mod zonal;

pub use traditional::build_traditional_grid;
pub use zonal::build_zonal_grid;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error("invalid grid spec: {field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> BuildError {
    BuildError::InvalidSpec { field, reason: reason.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LightMode {
    Static,
    Adaptive,
}

/// Signal program timings for the traditional grid. Static programs run
/// `green_through`/`green_left` exactly; adaptive programs treat
/// `adaptive_min_green` as the floor and extend greens up to `max_green`
/// while a delayed vehicle is detected.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalTiming {
    pub green_through: f64,
    pub green_left: f64,
    pub yellow: f64,
    pub all_red: f64,
    pub adaptive_min_green: f64,
    pub max_green: f64,
    pub time_loss_threshold: f64,
    pub detector_range: f64,
}

impl Default for SignalTiming {
    fn default() -> Self {
        SignalTiming {
            green_through: 30.0,
            green_left: 12.0,
            yellow: 3.0,
            all_red: 1.0,
            adaptive_min_green: 5.0,
            max_green: 45.0,
            time_loss_threshold: 1.0,
            detector_range: 100.0,
        }
    }
}

/// Parameters shared by both grid builders.
///
/// `lane_count` counts the lanes of a boundary corridor as a whole: the
/// default of 2 yields one lane per direction in the traditional grid and
/// one lane per loop roadway along zonal boundaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: u32,
    pub cols: u32,
    /// Zone edge length in meters.
    pub zone_size: f64,
    pub lane_count: u32,
    /// Road speed limit in m/s.
    pub speed_limit: f64,
    /// Corner arc radius in meters (zonal only).
    pub curve_radius: f64,
    /// Multiplier on the speed limit of corner arcs; 1.0 keeps full speed
    /// through curves.
    pub curve_speed_factor: f64,
    /// Length of each zipper-merge section in meters (zonal only).
    pub merge_segment_length: f64,
    /// Lateral offset of a loop roadway from its zone boundary line, so the
    /// two parallel roadways of a shared boundary do not coincide.
    pub lane_offset: f64,
    /// Length of dedicated left-turn pockets upstream of signalized
    /// approaches (traditional only).
    pub left_pocket_length: f64,
    pub light_mode: LightMode,
    pub timing: SignalTiming,
}

impl Default for GridSpec {
    /// Desk-scale default: a 4x4 zone grid.
    fn default() -> Self {
        GridSpec::new(4, 4)
    }
}

impl GridSpec {
    pub fn new(rows: u32, cols: u32) -> Self {
        GridSpec {
            rows,
            cols,
            zone_size: 250.0,
            lane_count: 2,
            speed_limit: 50.0 / 3.6,
            curve_radius: 30.0,
            curve_speed_factor: 1.0,
            merge_segment_length: 60.0,
            lane_offset: 2.0,
            left_pocket_length: 50.0,
            light_mode: LightMode::Static,
            timing: SignalTiming::default(),
        }
    }

    /// Lanes per directed roadway; see the `lane_count` convention above.
    pub fn lanes_per_roadway(&self) -> u32 {
        (self.lane_count / 2).max(1)
    }

    pub fn zone_count(&self) -> u32 {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<(), BuildError> {
        if self.rows < 1 {
            return Err(invalid("rows", "must be >= 1"));
        }
        if self.cols < 1 {
            return Err(invalid("cols", "must be >= 1"));
        }
        if !(self.zone_size > 0.0) {
            return Err(invalid("zone_size", "must be positive"));
        }
        if !(self.speed_limit > 0.0) {
            return Err(invalid("speed_limit", "must be positive"));
        }
        if self.curve_radius < 0.0 {
            return Err(invalid("curve_radius", "must be >= 0"));
        }
        if !(self.curve_speed_factor > 0.0) {
            return Err(invalid("curve_speed_factor", "must be positive"));
        }
        if self.zone_size <= 2.0 * self.curve_radius {
            return Err(invalid("zone_size", "must exceed twice the curve radius"));
        }
        if !(self.merge_segment_length > 0.0) {
            return Err(invalid("merge_segment_length", "must be positive"));
        }
        if self.lane_offset < 0.0 {
            return Err(invalid("lane_offset", "must be >= 0"));
        }
        let straight = self.zone_side_length();
        if straight <= 2.0 * self.merge_segment_length + 2.0 {
            return Err(invalid(
                "merge_segment_length",
                format!(
                    "two merge sections of {} m do not fit a straight side of {straight:.1} m",
                    self.merge_segment_length
                ),
            ));
        }
        if !(self.left_pocket_length > 0.0) || self.left_pocket_length >= self.zone_size - 10.0 {
            return Err(invalid(
                "left_pocket_length",
                "must be positive and leave room for the approach",
            ));
        }
        Ok(())
    }

    /// Length of a loop's straight side between corner arc tangent points.
    pub fn zone_side_length(&self) -> f64 {
        self.zone_size - 2.0 * (self.lane_offset + self.curve_radius)
    }
}

/// Loop rotation per zone. Orthogonally adjacent zones get opposite
/// rotations (checkerboard), which makes the two parallel roadways of every
/// shared boundary flow in the same direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopAssignment {
    pub rows: u32,
    pub cols: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rotation {
    Clockwise,
    CounterClockwise,
}

impl LoopAssignment {
    pub fn new(rows: u32, cols: u32) -> Self {
        LoopAssignment { rows, cols }
    }

    pub fn rotation(&self, row: u32, col: u32) -> Rotation {
        if (row + col) % 2 == 0 {
            Rotation::Clockwise
        } else {
            Rotation::CounterClockwise
        }
    }

    /// True when all orthogonal neighbors carry opposite rotations.
    pub fn is_checkerboard(&self) -> bool {
        (0..self.rows).all(|r| {
            (0..self.cols).all(|c| {
                let rot = self.rotation(r, c);
                (r + 1 >= self.rows || self.rotation(r + 1, c) != rot)
                    && (c + 1 >= self.cols || self.rotation(r, c + 1) != rot)
            })
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JunctionKind {
    SignalizedIntersection,
    Roundabout,
    ZonalBoundary,
}

/// Vehicular conflict-point totals for a junction kind, split by the
/// standard crossing/merging/diverging taxonomy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictCounts {
    pub crossing: u32,
    pub merging: u32,
    pub diverging: u32,
}

impl ConflictCounts {
    pub fn total(&self) -> u32 {
        self.crossing + self.merging + self.diverging
    }
}

/// Conflict-point summary: a two-way signalized intersection has 32 conflict
/// points (16 crossing, 8 merging, 8 diverging), a roundabout has 8
/// (4 merging, 4 diverging), and a zonal loop boundary has none — its
/// conflicts are reallocated onto straight sections as lane changes.
pub fn count_conflict_points(kind: JunctionKind) -> ConflictCounts {
    match kind {
        JunctionKind::SignalizedIntersection => {
            ConflictCounts { crossing: 16, merging: 8, diverging: 8 }
        }
        JunctionKind::Roundabout => ConflictCounts { crossing: 0, merging: 4, diverging: 4 },
        JunctionKind::ZonalBoundary => ConflictCounts { crossing: 0, merging: 0, diverging: 0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conflict_point_table() {
        let signalized = count_conflict_points(JunctionKind::SignalizedIntersection);
        assert_eq!(signalized.total(), 32);
        assert_eq!((signalized.crossing, signalized.merging, signalized.diverging), (16, 8, 8));
        let roundabout = count_conflict_points(JunctionKind::Roundabout);
        assert_eq!(roundabout.total(), 8);
        assert_eq!((roundabout.merging, roundabout.diverging), (4, 4));
        assert_eq!(count_conflict_points(JunctionKind::ZonalBoundary).total(), 0);
    }

    #[test]
    fn checkerboard_rotations() {
        let assignment = LoopAssignment::new(7, 5);
        assert!(assignment.is_checkerboard());
        assert_ne!(assignment.rotation(0, 0), assignment.rotation(0, 1));
        assert_ne!(assignment.rotation(0, 0), assignment.rotation(1, 0));
        assert_eq!(assignment.rotation(0, 0), assignment.rotation(1, 1));
    }

    #[test]
    fn spec_validation_names_offending_field() {
        let mut spec = GridSpec::new(0, 3);
        assert!(matches!(spec.validate(), Err(BuildError::InvalidSpec { field: "rows", .. })));
        spec.rows = 3;
        spec.zone_size = 50.0;
        assert!(matches!(
            spec.validate(),
            Err(BuildError::InvalidSpec { field: "zone_size", .. })
        ));
        spec.zone_size = 250.0;
        spec.merge_segment_length = 100.0;
        assert!(matches!(
            spec.validate(),
            Err(BuildError::InvalidSpec { field: "merge_segment_length", .. })
        ));
        assert!(GridSpec::new(1, 1).validate().is_ok());
    }
}
