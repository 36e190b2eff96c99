//! Zipper-merge gate runtime.
//!
//! Each merge zone gates the transition from its two entry edges into its
//! two exit edges. While only one entry has a vehicle at the gate, that
//! entry flows freely and throughput is limited by car-following alone.
//! When both entries have a waiting vehicle, exactly one vehicle is granted
//! per step and consecutive grants alternate strictly between the entries.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateState {
    /// No contention; `Some(lane)` restricts passage to that entry, `None`
    /// means nobody is close enough to cross this step.
    Open(Option<u8>),
    /// Both entries are waiting; only this vehicle may pass.
    Exclusive { vehicle: u32, lane: u8 },
}

#[derive(Clone, Copy, Debug)]
pub struct MergeGate {
    pub state: GateState,
    last_granted: Option<u8>,
}

impl Default for MergeGate {
    fn default() -> Self {
        MergeGate { state: GateState::Open(None), last_granted: None }
    }
}

impl MergeGate {
    pub fn new() -> Self {
        MergeGate::default()
    }

    /// Pick this step's grant from the head candidates of both entries.
    pub fn decide(&mut self, candidates: [Option<u32>; 2]) {
        self.state = match candidates {
            [Some(a), Some(b)] => {
                // Favor the entry that did not cross last.
                let lane = match self.last_granted {
                    Some(0) => 1,
                    Some(_) => 0,
                    None => 0,
                };
                GateState::Exclusive { vehicle: if lane == 0 { a } else { b }, lane }
            }
            [Some(_), None] => GateState::Open(Some(0)),
            [None, Some(_)] => GateState::Open(Some(1)),
            [None, None] => GateState::Open(None),
        };
    }

    pub fn passable(&self, vehicle: u32, lane: u8) -> bool {
        match self.state {
            GateState::Open(None) => true,
            GateState::Open(Some(open_lane)) => open_lane == lane,
            GateState::Exclusive { vehicle: granted, .. } => granted == vehicle,
        }
    }

    /// Record an actual crossing; alternation tracks crossings, not offers.
    pub fn record_crossing(&mut self, lane: u8) {
        self.last_granted = Some(lane);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lone_entry_flows_freely() {
        let mut gate = MergeGate::new();
        gate.decide([Some(7), None]);
        assert!(gate.passable(7, 0));
        assert!(gate.passable(8, 0));
        assert!(!gate.passable(9, 1));
        gate.decide([None, None]);
        assert!(gate.passable(9, 1));
    }

    #[test]
    fn contention_alternates_strictly() {
        let mut gate = MergeGate::new();
        let mut order = Vec::new();
        // Two queues of three vehicles; heads are re-offered until granted.
        let mut queues = [vec![1u32, 2, 3], vec![11u32, 12, 13]];
        while !(queues[0].is_empty() && queues[1].is_empty()) {
            gate.decide([queues[0].first().copied(), queues[1].first().copied()]);
            for lane in 0..2u8 {
                let head = queues[lane as usize].first().copied();
                if let Some(v) = head {
                    if gate.passable(v, lane) {
                        queues[lane as usize].remove(0);
                        gate.record_crossing(lane);
                        order.push(v);
                    }
                }
            }
        }
        assert_eq!(order, vec![1, 11, 2, 12, 3, 13]);
    }
}
