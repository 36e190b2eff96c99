//! Structural validation. Violations are data, not faults: a report listing
//! every broken invariant is returned instead of an error.

use super::{ConnIdx, EdgeIdx, EdgeKind, RoadNetwork};
use crate::geom::polyline_length;
use std::collections::VecDeque;
use std::fmt;

const LENGTH_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    DanglingEdge { edge: String, end: &'static str },
    LengthMismatch { edge: String, declared: f64, measured: f64 },
    NonPositiveSpeed { edge: String },
    NoLanes { edge: String },
    BadArcRadius { edge: String, radius: f64 },
    BadMergeRef { edge: String },
    BrokenConnection { conn: ConnIdx },
    Unreachable { edge: String },
    CannotReachAll { edge: String },
    MergeZoneBadEdges { zone: String },
    SignalBadMovement { signal: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DanglingEdge { edge, end } => {
                write!(f, "edge {edge}: {end} node does not exist")
            }
            Violation::LengthMismatch { edge, declared, measured } => write!(
                f,
                "edge {edge}: declared length {declared} differs from polyline length {measured}"
            ),
            Violation::NonPositiveSpeed { edge } => {
                write!(f, "edge {edge}: speed limit must be strictly positive")
            }
            Violation::NoLanes { edge } => write!(f, "edge {edge}: lane count must be >= 1"),
            Violation::BadArcRadius { edge, radius } => {
                write!(f, "edge {edge}: arc radius {radius} must be >= 0")
            }
            Violation::BadMergeRef { edge } => {
                write!(f, "edge {edge}: zipper-merge edge references unknown merge zone")
            }
            Violation::BrokenConnection { conn } => {
                write!(f, "connection {conn}: endpoints missing or not sharing a node")
            }
            Violation::Unreachable { edge } => {
                write!(f, "edge {edge}: not reachable from every origin")
            }
            Violation::CannotReachAll { edge } => {
                write!(f, "edge {edge}: cannot reach every destination")
            }
            Violation::MergeZoneBadEdges { zone } => {
                write!(f, "merge zone {zone}: references unknown entry or exit edges")
            }
            Violation::SignalBadMovement { signal } => {
                write!(f, "signal {signal}: movement references unknown connection")
            }
        }
    }
}

/// Result of [`validate_network`]; empty iff the network is well-formed.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "network ok");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Check every structural invariant: node references, lengths against
/// geometry, positive limits, kind metadata, connection consistency and
/// strong connectivity over the movement graph.
pub fn validate_network(net: &RoadNetwork) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n_nodes = net.nodes.len();

    for edge in &net.edges {
        if edge.from.index() >= n_nodes {
            report.violations.push(Violation::DanglingEdge { edge: edge.id.clone(), end: "head" });
        }
        if edge.to.index() >= n_nodes {
            report.violations.push(Violation::DanglingEdge { edge: edge.id.clone(), end: "tail" });
        }
        let measured = polyline_length(&edge.geometry);
        if (measured - edge.length).abs() > LENGTH_TOLERANCE {
            report.violations.push(Violation::LengthMismatch {
                edge: edge.id.clone(),
                declared: edge.length,
                measured,
            });
        }
        if edge.speed_limit <= 0.0 {
            report.violations.push(Violation::NonPositiveSpeed { edge: edge.id.clone() });
        }
        if edge.lane_count == 0 {
            report.violations.push(Violation::NoLanes { edge: edge.id.clone() });
        }
        match edge.kind {
            EdgeKind::Arc { radius } if radius < 0.0 => {
                report.violations.push(Violation::BadArcRadius { edge: edge.id.clone(), radius });
            }
            EdgeKind::ZipperMerge { merge_zone } => {
                if merge_zone as usize >= net.merge_zones.len() {
                    report.violations.push(Violation::BadMergeRef { edge: edge.id.clone() });
                }
            }
            _ => {}
        }
    }

    for (i, conn) in net.connections.iter().enumerate() {
        let ok = conn.from.index() < net.edges.len()
            && conn.to.index() < net.edges.len()
            && net.edge(conn.from).to == net.edge(conn.to).from;
        if !ok {
            report.violations.push(Violation::BrokenConnection { conn: ConnIdx(i as u32) });
        }
    }

    for zone in &net.merge_zones {
        let ok = zone
            .entries
            .iter()
            .chain(zone.exits.iter())
            .all(|e| e.index() < net.edges.len());
        if !ok {
            report.violations.push(Violation::MergeZoneBadEdges { zone: zone.id.clone() });
        }
    }

    for (i, sig) in net.signals.iter().enumerate() {
        let ok = sig
            .phases
            .iter()
            .flat_map(|p| p.movements.iter())
            .all(|m| m.index() < net.connections.len());
        if !ok {
            report.violations.push(Violation::SignalBadMovement { signal: i });
        }
    }

    // Strong connectivity over the movement graph: every edge must reach and
    // be reachable from edge 0.
    if !net.edges.is_empty() && report.is_ok() {
        let forward = reach(net, EdgeIdx(0), false);
        let backward = reach(net, EdgeIdx(0), true);
        for (i, edge) in net.edges.iter().enumerate() {
            if !forward[i] {
                report.violations.push(Violation::Unreachable { edge: edge.id.clone() });
            }
            if !backward[i] {
                report.violations.push(Violation::CannotReachAll { edge: edge.id.clone() });
            }
        }
    }

    report
}

fn reach(net: &RoadNetwork, start: EdgeIdx, reverse: bool) -> Vec<bool> {
    let mut seen = vec![false; net.edges.len()];
    let mut queue = VecDeque::new();
    seen[start.index()] = true;
    queue.push_back(start);
    while let Some(e) = queue.pop_front() {
        let conns = if reverse { net.in_connections(e) } else { net.out_connections(e) };
        for &c in conns {
            let conn = net.connection(c);
            let next = if reverse { conn.from } else { conn.to };
            if !seen[next.index()] {
                seen[next.index()] = true;
                queue.push_back(next);
            }
        }
    }
    seen
}
