//! Core road-network representation shared by every topology and the engine.
//!
//! A [`RoadNetwork`] is a directed graph of [`Edge`]s joined by explicit
//! [`Connection`]s (allowed edge-to-edge movements). Signal programs and
//! zipper-merge zones are carried as data; their runtime behaviour lives in
//! the engine. Networks are immutable after [`RoadNetwork::finalize`] and can
//! be shared freely across concurrent simulations.

mod json;
mod route;
mod validate;

pub use json::NetworkDoc;
pub use route::{route_length_ratio, shortest_route, Planner, Route, RouteCache, RouteError};
pub use validate::{validate_network, ValidationReport, Violation};

use crate::geom::{cumulative_lengths, sample_at, Vec2};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

macro_rules! index_type {
    ($name:ident) => {
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
        )]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

index_type!(NodeIdx);
index_type!(EdgeIdx);
index_type!(ConnIdx);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Junction,
    Curve,
    MergeHead,
    Terminus,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub pos: Vec2,
    pub kind: NodeKind,
}

/// Structural role of an edge. Arcs carry their design radius and
/// zipper-merge edges reference the merge zone that gates them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EdgeKind {
    Straight,
    Arc { radius: f64 },
    ZipperMerge { merge_zone: u32 },
    TurnPocket,
}

impl EdgeKind {
    pub fn is_straight(self) -> bool {
        matches!(self, EdgeKind::Straight)
    }
}

/// A directed roadway segment.
#[derive(Clone, Debug)]
pub struct Edge {
    pub id: String,
    pub from: NodeIdx,
    pub to: NodeIdx,
    /// Arc length of `geometry` in meters.
    pub length: f64,
    pub lane_count: u32,
    /// Free-flow speed limit in m/s; strictly positive.
    pub speed_limit: f64,
    pub kind: EdgeKind,
    pub geometry: Vec<Vec2>,
    cum: Vec<f64>,
}

impl Edge {
    /// Build an edge whose declared length is the polyline arc length.
    pub fn new(
        id: impl Into<String>,
        from: NodeIdx,
        to: NodeIdx,
        lane_count: u32,
        speed_limit: f64,
        kind: EdgeKind,
        geometry: Vec<Vec2>,
    ) -> Self {
        let cum = cumulative_lengths(&geometry);
        let length = *cum.last().unwrap_or(&0.0);
        Edge {
            id: id.into(),
            from,
            to,
            length,
            lane_count,
            speed_limit,
            kind,
            geometry,
            cum,
        }
    }

    /// Position and unit tangent at a longitudinal offset from the edge start.
    pub fn position_at(&self, offset: f64) -> (Vec2, Vec2) {
        sample_at(&self.geometry, &self.cum, offset)
    }

    pub fn end_point(&self) -> Vec2 {
        *self.geometry.last().unwrap()
    }

    pub fn free_flow_time(&self) -> f64 {
        self.length / self.speed_limit
    }

    pub(crate) fn rebuild_cum(&mut self) {
        self.cum = cumulative_lengths(&self.geometry);
    }
}

/// Allowed movement between two adjacent edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConnectionKind {
    Through,
    TurnLeft,
    TurnRight,
    /// Turnaround at a degree-2 corner junction.
    UTurn,
    /// Continuation along a loop (side-to-arc and inter-segment joints).
    LoopContinue,
    /// Entering a merge section while staying on the same roadway.
    MergeKeep,
    /// Crossing over to the parallel roadway inside a merge section.
    MergeCross,
    /// Diverging from a through lane into a left-turn pocket.
    PocketEntry,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connection {
    pub from: EdgeIdx,
    pub to: EdgeIdx,
    pub kind: ConnectionKind,
}

/// Zipper-merge zone: two entry edges feed two exit edges and vehicles from
/// both entries interleave. Entry `i` keeps its roadway via exit `i` and
/// crosses over via exit `1 - i`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MergeZone {
    pub id: String,
    pub entries: [EdgeIdx; 2],
    pub exits: [EdgeIdx; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalMode {
    Static,
    Adaptive,
}

/// One signal phase: `green` is the fixed green time in static mode and the
/// minimum green time in adaptive mode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignalPhase {
    pub green: f64,
    pub yellow: f64,
    pub all_red: f64,
    /// Connections granted during this phase.
    pub movements: Vec<ConnIdx>,
}

/// Signal program attached to a junction node.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignalSpec {
    pub node: NodeIdx,
    pub mode: SignalMode,
    pub phases: Vec<SignalPhase>,
    /// Hard cap on any green duration in adaptive mode, seconds.
    pub max_green: f64,
    /// Accumulated time loss above which an approaching vehicle requests a
    /// green prolongation, seconds.
    pub time_loss_threshold: f64,
    /// Detection range upstream of the stop line, meters.
    pub detector_range: f64,
}

/// Which signal and phases control a connection.
#[derive(Clone, Copy, Debug)]
pub struct SignalMovement {
    pub signal: u32,
    /// Bit i set when phase i grants this connection.
    pub phase_mask: u32,
}

/// Origin-destination pair with a sampling weight. Edge ids are strings so
/// pairs can be resolved against more than one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdPair {
    pub origin: String,
    pub dest: String,
    pub weight: f64,
}

/// Immutable directed road graph with controllers and merge zones.
#[derive(Clone, Debug, Default)]
pub struct RoadNetwork {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub connections: Vec<Connection>,
    pub merge_zones: Vec<MergeZone>,
    pub signals: Vec<SignalSpec>,
    // Derived lookups, rebuilt by `finalize`.
    edge_by_id: HashMap<String, EdgeIdx>,
    out_conns: Vec<Vec<ConnIdx>>,
    in_conns: Vec<Vec<ConnIdx>>,
    conn_by_pair: HashMap<(EdgeIdx, EdgeIdx), ConnIdx>,
    conn_signal: Vec<Option<SignalMovement>>,
    conn_merge: Vec<Option<u32>>,
}

impl RoadNetwork {
    /// Rebuild the derived lookup tables. Must be called after any
    /// structural mutation and before routing or simulation.
    pub fn finalize(&mut self) {
        self.edge_by_id = self
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), EdgeIdx(i as u32)))
            .collect();
        self.out_conns = vec![Vec::new(); self.edges.len()];
        self.in_conns = vec![Vec::new(); self.edges.len()];
        self.conn_by_pair = HashMap::new();
        for (i, c) in self.connections.iter().enumerate() {
            let ci = ConnIdx(i as u32);
            if c.from.index() < self.edges.len() {
                self.out_conns[c.from.index()].push(ci);
            }
            if c.to.index() < self.edges.len() {
                self.in_conns[c.to.index()].push(ci);
            }
            self.conn_by_pair.insert((c.from, c.to), ci);
        }
        // Keep successor exploration order deterministic and id-ordered.
        for list in self.out_conns.iter_mut().chain(self.in_conns.iter_mut()) {
            list.sort_by(|a, b| {
                let ea = &self.edges[self.connections[a.index()].to.index()].id;
                let eb = &self.edges[self.connections[b.index()].to.index()].id;
                ea.cmp(eb).then(a.cmp(b))
            });
        }
        self.conn_signal = vec![None; self.connections.len()];
        for (si, sig) in self.signals.iter().enumerate() {
            for (pi, phase) in sig.phases.iter().enumerate() {
                for &m in &phase.movements {
                    if m.index() < self.connections.len() {
                        let entry = &mut self.conn_signal[m.index()];
                        match entry {
                            Some(sm) if sm.signal == si as u32 => sm.phase_mask |= 1 << pi,
                            _ => {
                                *entry = Some(SignalMovement {
                                    signal: si as u32,
                                    phase_mask: 1 << pi,
                                })
                            }
                        }
                    }
                }
            }
        }
        self.conn_merge = vec![None; self.connections.len()];
        for (zi, zone) in self.merge_zones.iter().enumerate() {
            for (i, c) in self.connections.iter().enumerate() {
                if zone.exits.contains(&c.to) && zone.entries.contains(&c.from) {
                    self.conn_merge[i] = Some(zi as u32);
                }
            }
        }
    }

    pub fn edge(&self, idx: EdgeIdx) -> &Edge {
        &self.edges[idx.index()]
    }

    pub fn node(&self, idx: NodeIdx) -> &Node {
        &self.nodes[idx.index()]
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn find_edge(&self, id: &str) -> Option<EdgeIdx> {
        self.edge_by_id.get(id).copied()
    }

    pub fn out_connections(&self, edge: EdgeIdx) -> &[ConnIdx] {
        &self.out_conns[edge.index()]
    }

    pub fn in_connections(&self, edge: EdgeIdx) -> &[ConnIdx] {
        &self.in_conns[edge.index()]
    }

    pub fn connection_between(&self, from: EdgeIdx, to: EdgeIdx) -> Option<ConnIdx> {
        self.conn_by_pair.get(&(from, to)).copied()
    }

    pub fn connection(&self, idx: ConnIdx) -> &Connection {
        &self.connections[idx.index()]
    }

    /// Signal movement controlling a connection, if any.
    pub fn signal_for(&self, conn: ConnIdx) -> Option<SignalMovement> {
        self.conn_signal[conn.index()]
    }

    /// Merge zone gating a connection, if any.
    pub fn merge_for(&self, conn: ConnIdx) -> Option<u32> {
        self.conn_merge[conn.index()]
    }

    /// Edges on which vehicles may spawn or finish: plain straight roadway
    /// segments, excluding merge sections, arcs and turn pockets.
    pub fn spawn_edges(&self) -> Vec<EdgeIdx> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind.is_straight())
            .map(|(i, _)| EdgeIdx(i as u32))
            .collect()
    }

    /// Boundary anchor edges shared across topologies, sorted by id.
    /// Both builders name the main carriageway of every zone boundary
    /// `b:<axis>:<i>:<j>:<dir>`, which lets OD pairs map between networks.
    pub fn anchor_edges(&self) -> Vec<EdgeIdx> {
        let mut v: Vec<EdgeIdx> = self
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.id.starts_with("b:") && !e.id.ends_with(":x") && !e.id.ends_with(":p"))
            .map(|(i, _)| EdgeIdx(i as u32))
            .collect();
        v.sort_by(|a, b| self.edge(*a).id.cmp(&self.edge(*b).id));
        v
    }
}
