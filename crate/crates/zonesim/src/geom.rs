//! Planar geometry helpers shared by network construction and the engine.
//!
//! All coordinates are Cartesian meters, x pointing east and y pointing
//! north. Roads are represented as polylines; arc edges are sampled
//! polylines whose vertices lie exactly on the circle.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

/// 2-D point or vector in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the cross product; positive when `other` lies
    /// counter-clockwise of `self`.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Unit vector in the same direction; zero vector stays zero.
    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            Vec2::new(self.x / n, self.y / n)
        } else {
            Vec2::default()
        }
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

/// Sum of segment lengths of a polyline.
pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Cumulative arc-length table; `cum[0] == 0` and `cum[n-1]` is the total.
pub fn cumulative_lengths(points: &[Vec2]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in points.windows(2) {
        acc += w[0].distance(w[1]);
        cum.push(acc);
    }
    cum
}

/// Point and unit tangent at arc length `s` along the polyline.
///
/// `s` is clamped to `[0, total]`. `cum` must be the table from
/// [`cumulative_lengths`].
pub fn sample_at(points: &[Vec2], cum: &[f64], s: f64) -> (Vec2, Vec2) {
    debug_assert_eq!(points.len(), cum.len());
    if points.len() == 1 {
        return (points[0], Vec2::default());
    }
    let total = *cum.last().unwrap();
    let s = s.clamp(0.0, total);
    // Binary search for the containing segment.
    let seg = match cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
        Ok(i) => i.min(points.len() - 2),
        Err(i) => i - 1,
    };
    let seg_len = cum[seg + 1] - cum[seg];
    let t = if seg_len > 0.0 { (s - cum[seg]) / seg_len } else { 0.0 };
    let a = points[seg];
    let b = points[seg + 1];
    let tangent = (b - a).normalized();
    (a + (b - a) * t, tangent)
}

/// Compass heading of a direction vector, bucketed to the nearest axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Compass {
    North,
    South,
    East,
    West,
}

impl Compass {
    pub fn letter(self) -> char {
        match self {
            Compass::North => 'n',
            Compass::South => 's',
            Compass::East => 'e',
            Compass::West => 'w',
        }
    }
}

pub fn compass_of(dir: Vec2) -> Compass {
    if dir.x.abs() >= dir.y.abs() {
        if dir.x >= 0.0 {
            Compass::East
        } else {
            Compass::West
        }
    } else if dir.y >= 0.0 {
        Compass::North
    } else {
        Compass::South
    }
}

/// Classification of the turn from heading `a` onto heading `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Turn {
    Through,
    Left,
    Right,
    Reverse,
}

/// Classify a turn by the signed angle between unit headings.
pub fn classify_turn(a: Vec2, b: Vec2) -> Turn {
    let dot = a.dot(b);
    let cross = a.cross(b);
    if dot > 0.5 {
        Turn::Through
    } else if dot < -0.5 {
        Turn::Reverse
    } else if cross > 0.0 {
        Turn::Left
    } else {
        Turn::Right
    }
}

/// Circumscribed circle radius of three points; `inf` for collinear input.
pub fn circumradius(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let bc = c - b;
    let area2 = ab.cross(ac).abs();
    if area2 < 1e-12 {
        return f64::INFINITY;
    }
    ab.norm() * ac.norm() * bc.norm() / (2.0 * area2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polyline_length_of_square_path() {
        let pts = [
            Vec2::new(0.0, 0.0),
            Vec2::new(3.0, 0.0),
            Vec2::new(3.0, 4.0),
        ];
        assert_relative_eq!(polyline_length(&pts), 7.0);
    }

    #[test]
    fn sample_interpolates_and_clamps() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)];
        let cum = cumulative_lengths(&pts);
        let (p, t) = sample_at(&pts, &cum, 5.0);
        assert_relative_eq!(p.x, 5.0);
        assert_relative_eq!(t.x, 1.0);
        let (p, t) = sample_at(&pts, &cum, 15.0);
        assert_relative_eq!(p.y, 5.0);
        assert_relative_eq!(t.y, 1.0);
        let (p, _) = sample_at(&pts, &cum, 1e9);
        assert_relative_eq!(p.y, 10.0);
    }

    #[test]
    fn turn_classification() {
        let n = Vec2::new(0.0, 1.0);
        let e = Vec2::new(1.0, 0.0);
        let w = Vec2::new(-1.0, 0.0);
        let s = Vec2::new(0.0, -1.0);
        assert_eq!(classify_turn(n, n), Turn::Through);
        assert_eq!(classify_turn(n, w), Turn::Left);
        assert_eq!(classify_turn(n, e), Turn::Right);
        assert_eq!(classify_turn(n, s), Turn::Reverse);
        assert_eq!(classify_turn(w, n), Turn::Right);
        assert_eq!(classify_turn(s, e), Turn::Left);
    }

    #[test]
    fn circumradius_of_circle_samples() {
        let r = 30.0;
        let p = |deg: f64| {
            let a = deg.to_radians();
            Vec2::new(r * a.cos(), r * a.sin())
        };
        let rr = circumradius(p(10.0), p(20.0), p(33.0));
        assert_relative_eq!(rr, 30.0, epsilon = 1e-9);
    }
}
