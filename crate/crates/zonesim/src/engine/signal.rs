//! Signal controller runtime: a phase/stage machine over a
//! [`SignalSpec`](crate::net::SignalSpec) program.
//!
//! Static mode runs each green for its programmed duration. Adaptive mode
//! is delay-based: the programmed green is a minimum, and the green is
//! prolonged step by step while any approaching vehicle has accumulated
//! more time loss than the threshold, up to the hard `max_green` cap.

use crate::net::{SignalMode, SignalSpec};

const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Green,
    Yellow,
    AllRed,
}

/// A vehicle within detector range of the stop line of the current phase.
#[derive(Clone, Copy, Debug)]
pub struct ApproachingVehicle {
    pub time_loss: f64,
    /// Distance to the stop line, m.
    pub distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SignalEvent {
    /// A green stage ended and yellow begins this step.
    GreenEnded { phase: usize, duration: f64, nominal: f64 },
    /// The current green was extended past its nominal duration.
    Prolonged { phase: usize, max_time_loss: f64 },
}

#[derive(Clone, Debug)]
pub struct SignalController {
    pub phase: usize,
    pub stage: Stage,
    /// Time the current stage has been active, s.
    pub elapsed: f64,
}

impl Default for SignalController {
    fn default() -> Self {
        SignalController { phase: 0, stage: Stage::Green, elapsed: 0.0 }
    }
}

impl SignalController {
    pub fn new() -> Self {
        SignalController::default()
    }

    /// Bit mask of the phase whose movements are currently passable; zero
    /// during yellow and all-red.
    pub fn open_mask(&self) -> u32 {
        if self.stage == Stage::Green {
            1 << self.phase
        } else {
            0
        }
    }

    /// Advance the controller by one step of `dt` seconds. `approaching`
    /// describes vehicles within detector range of the current phase and is
    /// only consulted in adaptive mode.
    pub fn update(
        &mut self,
        spec: &SignalSpec,
        approaching: &[ApproachingVehicle],
        dt: f64,
        events: &mut Vec<SignalEvent>,
    ) {
        loop {
            let phase_def = &spec.phases[self.phase];
            match self.stage {
                Stage::Green => {
                    let ends = if self.elapsed + EPS < phase_def.green {
                        false
                    } else {
                        match spec.mode {
                            SignalMode::Static => true,
                            SignalMode::Adaptive => {
                                let demand = approaching
                                    .iter()
                                    .filter(|a| {
                                        a.distance <= spec.detector_range
                                            && a.time_loss > spec.time_loss_threshold
                                    })
                                    .map(|a| a.time_loss)
                                    .fold(None::<f64>, |acc, t| {
                                        Some(acc.map_or(t, |m| m.max(t)))
                                    });
                                match demand {
                                    Some(max_time_loss)
                                        if self.elapsed + dt <= spec.max_green + EPS =>
                                    {
                                        events.push(SignalEvent::Prolonged {
                                            phase: self.phase,
                                            max_time_loss,
                                        });
                                        false
                                    }
                                    _ => true,
                                }
                            }
                        }
                    };
                    if ends {
                        events.push(SignalEvent::GreenEnded {
                            phase: self.phase,
                            duration: self.elapsed,
                            nominal: phase_def.green,
                        });
                        self.stage = Stage::Yellow;
                        self.elapsed = 0.0;
                        continue;
                    }
                    self.elapsed += dt;
                    return;
                }
                Stage::Yellow => {
                    if self.elapsed + EPS >= phase_def.yellow {
                        self.stage = Stage::AllRed;
                        self.elapsed = 0.0;
                        continue;
                    }
                    self.elapsed += dt;
                    return;
                }
                Stage::AllRed => {
                    if self.elapsed + EPS >= phase_def.all_red {
                        self.phase = (self.phase + 1) % spec.phases.len();
                        self.stage = Stage::Green;
                        self.elapsed = 0.0;
                        continue;
                    }
                    self.elapsed += dt;
                    return;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{NodeIdx, SignalPhase};

    fn spec(mode: SignalMode, greens: &[f64]) -> SignalSpec {
        SignalSpec {
            node: NodeIdx(0),
            mode,
            max_green: 45.0,
            time_loss_threshold: 1.0,
            detector_range: 100.0,
            phases: greens
                .iter()
                .map(|&green| SignalPhase {
                    green,
                    yellow: 3.0,
                    all_red: 1.0,
                    movements: Vec::new(),
                })
                .collect(),
        }
    }

    fn run(
        ctrl: &mut SignalController,
        spec: &SignalSpec,
        steps: usize,
        approaching: &[ApproachingVehicle],
    ) -> Vec<SignalEvent> {
        let mut events = Vec::new();
        for _ in 0..steps {
            ctrl.update(spec, approaching, 1.0, &mut events);
        }
        events
    }

    #[test]
    fn static_program_cycles_at_programmed_durations() {
        let spec = spec(SignalMode::Static, &[30.0, 12.0, 30.0, 12.0]);
        let mut ctrl = SignalController::new();
        // Full cycle: 30+4 + 12+4 + 30+4 + 12+4 = 100 steps.
        let events = run(&mut ctrl, &spec, 100, &[]);
        let greens: Vec<_> = events
            .iter()
            .filter_map(|e| match e {
                SignalEvent::GreenEnded { phase, duration, .. } => Some((*phase, *duration)),
                _ => None,
            })
            .collect();
        assert_eq!(greens, vec![(0, 30.0), (1, 12.0), (2, 30.0), (3, 12.0)]);
        assert_eq!(ctrl.phase, 0);
        assert_eq!(ctrl.stage, Stage::Green);
        assert_eq!(ctrl.elapsed, 0.0);
    }

    #[test]
    fn adaptive_prolongs_under_demand_while_green_is_young() {
        let spec = spec(SignalMode::Adaptive, &[5.0, 5.0]);
        let mut ctrl = SignalController::new();
        // A single delayed vehicle keeps the green alive past its minimum.
        let delayed = [ApproachingVehicle { time_loss: 1.2, distance: 20.0 }];
        let mut events = Vec::new();
        for _ in 0..20 {
            ctrl.update(&spec, &delayed, 1.0, &mut events);
        }
        assert_eq!(ctrl.stage, Stage::Green);
        assert_eq!(ctrl.elapsed, 20.0);
        assert!(events
            .iter()
            .any(|e| matches!(e, SignalEvent::Prolonged { max_time_loss, .. } if *max_time_loss == 1.2)));
    }

    #[test]
    fn adaptive_never_exceeds_max_green() {
        let spec = spec(SignalMode::Adaptive, &[5.0, 5.0]);
        let mut ctrl = SignalController::new();
        let delayed = [ApproachingVehicle { time_loss: 50.0, distance: 10.0 }];
        let events = run(&mut ctrl, &spec, 200, &delayed);
        for e in &events {
            if let SignalEvent::GreenEnded { duration, .. } = e {
                assert!(*duration <= 45.0 + 1e-9, "green ran {duration} s");
                assert_eq!(*duration, 45.0);
            }
        }
        assert!(!events.is_empty());
    }

    #[test]
    fn vehicles_below_threshold_or_out_of_range_do_not_prolong() {
        let spec = spec(SignalMode::Adaptive, &[5.0, 5.0]);
        let mut ctrl = SignalController::new();
        let undelayed = [
            ApproachingVehicle { time_loss: 0.4, distance: 10.0 },
            ApproachingVehicle { time_loss: 9.0, distance: 400.0 },
        ];
        let events = run(&mut ctrl, &spec, 5, &undelayed);
        assert_eq!(
            events,
            vec![SignalEvent::GreenEnded { phase: 0, duration: 5.0, nominal: 5.0 }]
        );
    }

    #[test]
    fn no_demand_ends_green_at_nominal_duration() {
        let spec = spec(SignalMode::Adaptive, &[5.0, 5.0]);
        let mut ctrl = SignalController::new();
        let events = run(&mut ctrl, &spec, 5, &[]);
        assert_eq!(
            events,
            vec![SignalEvent::GreenEnded { phase: 0, duration: 5.0, nominal: 5.0 }]
        );
        assert_eq!(ctrl.stage, Stage::Yellow);
    }

    #[test]
    fn demand_appearing_at_45s_cannot_extend_further() {
        let spec = spec(SignalMode::Adaptive, &[5.0, 5.0]);
        let mut ctrl = SignalController::new();
        let delayed = [ApproachingVehicle { time_loss: 3.0, distance: 5.0 }];
        // Drive the green to exactly 45 s of elapsed time.
        let mut events = Vec::new();
        for _ in 0..45 {
            ctrl.update(&spec, &delayed, 1.0, &mut events);
        }
        assert_eq!(ctrl.elapsed, 45.0);
        ctrl.update(&spec, &delayed, 1.0, &mut events);
        assert_eq!(ctrl.stage, Stage::Yellow);
    }
}
