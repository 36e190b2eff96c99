//! Krauss car-following model, the default microscopic dynamics.

use serde::{Deserialize, Serialize};

/// Car-following parameters; the fleet is homogeneous.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CarFollowingParams {
    /// Maximum acceleration, m/s².
    pub max_accel: f64,
    /// Maximum (comfortable) deceleration `b`, m/s², positive.
    pub max_decel: f64,
    /// Minimum standstill gap between bumpers, m.
    pub min_gap: f64,
    /// Reaction/headway time τ, s.
    pub headway: f64,
    /// Driver imperfection σ in [0, 1]; 0 models an ideal autonomous driver.
    pub sigma: f64,
    /// Vehicle length, m.
    pub vehicle_length: f64,
}

impl Default for CarFollowingParams {
    fn default() -> Self {
        CarFollowingParams {
            max_accel: 2.6,
            max_decel: 4.5,
            min_gap: 2.5,
            headway: 1.0,
            sigma: 0.0,
            vehicle_length: 5.0,
        }
    }
}

/// Krauss safe speed:
/// `v_safe = v_l + (gap - v_l·τ) / (τ + (v_l + v_f) / (2b))`.
///
/// `gap` is the effective gap in front of the follower. A follower holding
/// `v_safe` can always come to a stop behind a leader that brakes at `b`.
pub fn krauss_safe_speed(
    leader_speed: f64,
    gap: f64,
    follower_speed: f64,
    p: &CarFollowingParams,
) -> f64 {
    debug_assert!(gap >= 0.0);
    leader_speed
        + (gap - leader_speed * p.headway)
            / (p.headway + (leader_speed + follower_speed) / (2.0 * p.max_decel))
}

/// Commanded speed for one step: the safe speed capped by acceleration
/// capability and the road limit, floored at zero.
pub fn commanded_speed(
    v_safe: f64,
    current: f64,
    speed_limit: f64,
    p: &CarFollowingParams,
    dt: f64,
) -> f64 {
    v_safe.min(current + p.max_accel * dt).min(speed_limit).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn stopped_leader_at_contact_commands_zero() {
        let p = CarFollowingParams::default();
        let v_safe = krauss_safe_speed(0.0, 0.0, 10.0, &p);
        assert!(v_safe <= 0.0);
        assert_eq!(commanded_speed(v_safe, 10.0, 13.89, &p, 1.0), 0.0);
    }

    #[test]
    fn equilibrium_following_holds_leader_speed() {
        // gap = v_l·τ with matched speeds reproduces the leader's speed.
        let p = CarFollowingParams::default();
        for v in [1.0, 5.0, 13.89] {
            let v_safe = krauss_safe_speed(v, v * p.headway, v, &p);
            assert_relative_eq!(v_safe, v, max_relative = 1e-12);
        }
    }

    #[test]
    fn formula_matches_direct_arithmetic() {
        let p = CarFollowingParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let v_l = rng.gen_range(0.0..20.0);
            let v_f = rng.gen_range(0.0..20.0);
            let gap = rng.gen_range(0.0..120.0);
            let expected =
                v_l + (gap - v_l * p.headway) / (p.headway + (v_l + v_f) / (2.0 * p.max_decel));
            assert_relative_eq!(
                krauss_safe_speed(v_l, gap, v_f, &p),
                expected,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn commanded_speed_respects_all_caps() {
        let p = CarFollowingParams::default();
        // Acceleration-limited.
        assert_relative_eq!(commanded_speed(100.0, 5.0, 13.89, &p, 1.0), 7.6);
        // Limit-bound.
        assert_relative_eq!(commanded_speed(100.0, 13.0, 13.89, &p, 1.0), 13.89);
        // Never negative.
        assert_eq!(commanded_speed(-3.0, 1.0, 13.89, &p, 1.0), 0.0);
    }
}
