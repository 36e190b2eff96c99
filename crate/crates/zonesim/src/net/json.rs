//! JSON import/export of road networks, used for debugging and golden tests.
//!
//! The document layout is stable: nodes and edges are keyed by string ids,
//! connections reference edges by id, and signal movements reference
//! connections by index into the `connections` array.

use super::{
    Connection, ConnIdx, Edge, EdgeIdx, EdgeKind, MergeZone, Node, NodeIdx, NodeKind,
    RoadNetwork, SignalMode, SignalPhase, SignalSpec,
};
use crate::geom::Vec2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonError {
    #[error("json: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("document references unknown node `{0}`")]
    UnknownNode(String),
    #[error("document references unknown edge `{0}`")]
    UnknownEdge(String),
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    id: String,
    x: f64,
    y: f64,
    kind: NodeKind,
}

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    id: String,
    from: String,
    to: String,
    length: f64,
    lane_count: u32,
    speed_limit: f64,
    #[serde(flatten)]
    kind: EdgeKind,
    geometry: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct ConnectionDoc {
    from: String,
    to: String,
    kind: super::ConnectionKind,
}

#[derive(Serialize, Deserialize)]
struct MergeZoneDoc {
    id: String,
    entries: [String; 2],
    exits: [String; 2],
}

#[derive(Serialize, Deserialize)]
struct SignalDoc {
    node: String,
    mode: SignalMode,
    max_green: f64,
    time_loss_threshold: f64,
    detector_range: f64,
    phases: Vec<PhaseDoc>,
}

#[derive(Serialize, Deserialize)]
struct PhaseDoc {
    green: f64,
    yellow: f64,
    all_red: f64,
    movements: Vec<u32>,
}

/// Serializable mirror of [`RoadNetwork`].
#[derive(Serialize, Deserialize)]
pub struct NetworkDoc {
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
    connections: Vec<ConnectionDoc>,
    merge_zones: Vec<MergeZoneDoc>,
    signals: Vec<SignalDoc>,
}

impl RoadNetwork {
    pub fn to_json(&self) -> Result<String, JsonError> {
        let doc = NetworkDoc {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeDoc { id: n.id.clone(), x: n.pos.x, y: n.pos.y, kind: n.kind })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeDoc {
                    id: e.id.clone(),
                    from: self.nodes[e.from.index()].id.clone(),
                    to: self.nodes[e.to.index()].id.clone(),
                    length: e.length,
                    lane_count: e.lane_count,
                    speed_limit: e.speed_limit,
                    kind: e.kind,
                    geometry: e.geometry.iter().map(|p| (p.x, p.y)).collect(),
                })
                .collect(),
            connections: self
                .connections
                .iter()
                .map(|c| ConnectionDoc {
                    from: self.edge(c.from).id.clone(),
                    to: self.edge(c.to).id.clone(),
                    kind: c.kind,
                })
                .collect(),
            merge_zones: self
                .merge_zones
                .iter()
                .map(|z| MergeZoneDoc {
                    id: z.id.clone(),
                    entries: z.entries.map(|e| self.edge(e).id.clone()),
                    exits: z.exits.map(|e| self.edge(e).id.clone()),
                })
                .collect(),
            signals: self
                .signals
                .iter()
                .map(|s| SignalDoc {
                    node: self.nodes[s.node.index()].id.clone(),
                    mode: s.mode,
                    max_green: s.max_green,
                    time_loss_threshold: s.time_loss_threshold,
                    detector_range: s.detector_range,
                    phases: s
                        .phases
                        .iter()
                        .map(|p| PhaseDoc {
                            green: p.green,
                            yellow: p.yellow,
                            all_red: p.all_red,
                            movements: p.movements.iter().map(|m| m.0).collect(),
                        })
                        .collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Best-effort import of a network document. The result is finalized but
    /// not validated; run [`super::validate_network`] on anything untrusted.
    pub fn from_json(text: &str) -> Result<RoadNetwork, JsonError> {
        let doc: NetworkDoc = serde_json::from_str(text)?;
        let mut net = RoadNetwork::default();
        let mut node_ids = std::collections::HashMap::new();
        for (i, n) in doc.nodes.iter().enumerate() {
            node_ids.insert(n.id.clone(), NodeIdx(i as u32));
            net.nodes.push(Node { id: n.id.clone(), pos: Vec2::new(n.x, n.y), kind: n.kind });
        }
        let mut edge_ids = std::collections::HashMap::new();
        let node_of = |ids: &std::collections::HashMap<String, NodeIdx>,
                       id: &str|
         -> Result<NodeIdx, JsonError> {
            ids.get(id).copied().ok_or_else(|| JsonError::UnknownNode(id.to_string()))
        };
        for (i, e) in doc.edges.iter().enumerate() {
            edge_ids.insert(e.id.clone(), EdgeIdx(i as u32));
            let mut edge = Edge::new(
                e.id.clone(),
                node_of(&node_ids, &e.from)?,
                node_of(&node_ids, &e.to)?,
                e.lane_count,
                e.speed_limit,
                e.kind,
                e.geometry.iter().map(|&(x, y)| Vec2::new(x, y)).collect(),
            );
            // Preserve the declared length; the validator reports any drift
            // from the geometry instead of silently repairing it.
            edge.length = e.length;
            edge.rebuild_cum();
            net.edges.push(edge);
        }
        let edge_of = |ids: &std::collections::HashMap<String, EdgeIdx>,
                       id: &str|
         -> Result<EdgeIdx, JsonError> {
            ids.get(id).copied().ok_or_else(|| JsonError::UnknownEdge(id.to_string()))
        };
        for c in &doc.connections {
            net.connections.push(Connection {
                from: edge_of(&edge_ids, &c.from)?,
                to: edge_of(&edge_ids, &c.to)?,
                kind: c.kind,
            });
        }
        for z in &doc.merge_zones {
            net.merge_zones.push(MergeZone {
                id: z.id.clone(),
                entries: [
                    edge_of(&edge_ids, &z.entries[0])?,
                    edge_of(&edge_ids, &z.entries[1])?,
                ],
                exits: [edge_of(&edge_ids, &z.exits[0])?, edge_of(&edge_ids, &z.exits[1])?],
            });
        }
        for s in &doc.signals {
            net.signals.push(SignalSpec {
                node: node_of(&node_ids, &s.node)?,
                mode: s.mode,
                max_green: s.max_green,
                time_loss_threshold: s.time_loss_threshold,
                detector_range: s.detector_range,
                phases: s
                    .phases
                    .iter()
                    .map(|p| SignalPhase {
                        green: p.green,
                        yellow: p.yellow,
                        all_red: p.all_red,
                        movements: p.movements.iter().map(|&m| ConnIdx(m)).collect(),
                    })
                    .collect(),
            });
        }
        net.finalize();
        Ok(net)
    }
}
