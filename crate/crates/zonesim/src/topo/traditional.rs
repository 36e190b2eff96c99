//! Traditional signalized grid: bidirectional roads along every zone
//! boundary, signal controllers at interior junctions, and a dedicated
//! left-turn pocket on each signalized approach.

use super::{BuildError, GridSpec, LightMode};
use crate::geom::{classify_turn, compass_of, Compass, Turn, Vec2};
use crate::net::{
    ConnIdx, Connection, ConnectionKind, Edge, EdgeIdx, EdgeKind, Node, NodeIdx, NodeKind,
    RoadNetwork, SignalMode, SignalPhase, SignalSpec,
};
use std::collections::HashMap;

#[derive(Clone, Copy, PartialEq)]
enum Role {
    /// Whole segment arriving at an unsignalized junction.
    Full,
    /// Through lane of a signalized approach (through + right turns).
    Thru,
    /// Left-turn pocket of a signalized approach.
    Pocket,
}

struct ApproachEdge {
    edge: EdgeIdx,
    role: Role,
    heading: Vec2,
}

/// Build the traditional grid for `spec`. Junction nodes sit on a
/// `(rows+1) x (cols+1)` lattice; interior junctions are signalized with a
/// four-phase program (axis through+right, then protected left, per axis).
pub fn build_traditional_grid(spec: &GridSpec) -> Result<RoadNetwork, BuildError> {
    spec.validate()?;
    let rows = spec.rows as usize;
    let cols = spec.cols as usize;
    let size = spec.zone_size;
    let lanes = spec.lanes_per_roadway();

    let mut net = RoadNetwork::default();
    let mut grid = vec![vec![NodeIdx(0); cols + 1]; rows + 1];
    for (r, row) in grid.iter_mut().enumerate() {
        for (c, slot) in row.iter_mut().enumerate() {
            let idx = NodeIdx(net.nodes.len() as u32);
            net.nodes.push(Node {
                id: format!("j:{r:02}:{c:02}"),
                pos: Vec2::new(c as f64 * size, r as f64 * size),
                kind: NodeKind::Junction,
            });
            *slot = idx;
        }
    }
    let signalized =
        |r: usize, c: usize| r > 0 && r < rows && c > 0 && c < cols;

    let mut approaches: HashMap<NodeIdx, Vec<ApproachEdge>> = HashMap::new();
    let mut departures: HashMap<NodeIdx, Vec<EdgeIdx>> = HashMap::new();

    let build_directed = |net: &mut RoadNetwork,
                              approaches: &mut HashMap<NodeIdx, Vec<ApproachEdge>>,
                              departures: &mut HashMap<NodeIdx, Vec<EdgeIdx>>,
                              from: NodeIdx,
                              to: NodeIdx,
                              base: &str,
                              dir_char: char,
                              split: bool| {
        let pa = net.nodes[from.index()].pos;
        let pb = net.nodes[to.index()].pos;
        let dir = (pb - pa).normalized();
        let id = format!("b:{base}:{dir_char}");
        if split {
            let fork_pos = pb - dir * spec.left_pocket_length;
            let fork = NodeIdx(net.nodes.len() as u32);
            net.nodes.push(Node {
                id: format!("f:{base}:{dir_char}"),
                pos: fork_pos,
                kind: NodeKind::Junction,
            });
            let main = EdgeIdx(net.edges.len() as u32);
            net.edges.push(Edge::new(
                id.clone(),
                from,
                fork,
                lanes,
                spec.speed_limit,
                EdgeKind::Straight,
                vec![pa, fork_pos],
            ));
            let thru = EdgeIdx(net.edges.len() as u32);
            net.edges.push(Edge::new(
                format!("{id}:x"),
                fork,
                to,
                lanes,
                spec.speed_limit,
                EdgeKind::Straight,
                vec![fork_pos, pb],
            ));
            let pocket = EdgeIdx(net.edges.len() as u32);
            net.edges.push(Edge::new(
                format!("{id}:p"),
                fork,
                to,
                1,
                spec.speed_limit,
                EdgeKind::TurnPocket,
                vec![fork_pos, pb],
            ));
            net.connections.push(Connection { from: main, to: thru, kind: ConnectionKind::Through });
            net.connections.push(Connection {
                from: main,
                to: pocket,
                kind: ConnectionKind::PocketEntry,
            });
            approaches
                .entry(to)
                .or_default()
                .push(ApproachEdge { edge: thru, role: Role::Thru, heading: dir });
            approaches
                .entry(to)
                .or_default()
                .push(ApproachEdge { edge: pocket, role: Role::Pocket, heading: dir });
            departures.entry(from).or_default().push(main);
        } else {
            let edge = EdgeIdx(net.edges.len() as u32);
            net.edges.push(Edge::new(
                id,
                from,
                to,
                lanes,
                spec.speed_limit,
                EdgeKind::Straight,
                vec![pa, pb],
            ));
            approaches
                .entry(to)
                .or_default()
                .push(ApproachEdge { edge, role: Role::Full, heading: dir });
            departures.entry(from).or_default().push(edge);
        }
    };

    // Horizontal boundary segments, then vertical; both directions each.
    for i in 0..=rows {
        for j in 0..cols {
            let base = format!("h:{i:02}:{j:02}");
            build_directed(
                &mut net, &mut approaches, &mut departures,
                grid[i][j], grid[i][j + 1], &base, 'e', signalized(i, j + 1),
            );
            build_directed(
                &mut net, &mut approaches, &mut departures,
                grid[i][j + 1], grid[i][j], &base, 'w', signalized(i, j),
            );
        }
    }
    for j in 0..=cols {
        for i in 0..rows {
            let base = format!("v:{i:02}:{j:02}");
            build_directed(
                &mut net, &mut approaches, &mut departures,
                grid[i][j], grid[i + 1][j], &base, 'n', signalized(i + 1, j),
            );
            build_directed(
                &mut net, &mut approaches, &mut departures,
                grid[i + 1][j], grid[i][j], &base, 's', signalized(i, j),
            );
        }
    }

    // Junction movements. Pockets feed protected lefts; through lanes feed
    // through and right turns; degree-2 corners additionally allow the
    // turnaround that keeps a 1x1 grid strongly connected.
    let mut junction_conns: HashMap<NodeIdx, Vec<(ConnIdx, Compass, Turn)>> = HashMap::new();
    for r in 0..=rows {
        for c in 0..=cols {
            let node = grid[r][c];
            let corner = (r == 0 || r == rows) && (c == 0 || c == cols);
            let mut ins = approaches.remove(&node).unwrap_or_default();
            ins.sort_by(|a, b| net.edge(a.edge).id.cmp(&net.edge(b.edge).id));
            let mut outs = departures.remove(&node).unwrap_or_default();
            outs.sort_by(|a, b| net.edge(*a).id.cmp(&net.edge(*b).id));
            for arr in &ins {
                for &out in &outs {
                    let geom = &net.edge(out).geometry;
                    let out_heading = (geom[1] - geom[0]).normalized();
                    let turn = classify_turn(arr.heading, out_heading);
                    let kind = match (turn, arr.role) {
                        (Turn::Through, Role::Full | Role::Thru) => ConnectionKind::Through,
                        (Turn::Right, Role::Full | Role::Thru) => ConnectionKind::TurnRight,
                        (Turn::Left, Role::Full | Role::Pocket) => ConnectionKind::TurnLeft,
                        (Turn::Reverse, Role::Full) if corner => ConnectionKind::UTurn,
                        _ => continue,
                    };
                    let ci = ConnIdx(net.connections.len() as u32);
                    net.connections.push(Connection { from: arr.edge, to: out, kind });
                    junction_conns.entry(node).or_default().push((
                        ci,
                        compass_of(arr.heading),
                        turn,
                    ));
                }
            }
        }
    }

    // Signal programs at interior junctions.
    let timing = spec.timing;
    let mode = match spec.light_mode {
        LightMode::Static => SignalMode::Static,
        LightMode::Adaptive => SignalMode::Adaptive,
    };
    for r in 1..rows {
        for c in 1..cols {
            let node = grid[r][c];
            let conns = junction_conns.remove(&node).unwrap_or_default();
            let select = |axis: [Compass; 2], left: bool| -> Vec<ConnIdx> {
                conns
                    .iter()
                    .filter(|(_, heading, turn)| {
                        axis.contains(heading)
                            && if left {
                                *turn == Turn::Left
                            } else {
                                matches!(turn, Turn::Through | Turn::Right)
                            }
                    })
                    .map(|(ci, _, _)| *ci)
                    .collect()
            };
            let ns = [Compass::North, Compass::South];
            let ew = [Compass::East, Compass::West];
            let greens = match mode {
                SignalMode::Static => {
                    [timing.green_through, timing.green_left, timing.green_through, timing.green_left]
                }
                SignalMode::Adaptive => [timing.adaptive_min_green; 4],
            };
            let movements =
                [select(ns, false), select(ns, true), select(ew, false), select(ew, true)];
            net.signals.push(SignalSpec {
                node,
                mode,
                max_green: timing.max_green,
                time_loss_threshold: timing.time_loss_threshold,
                detector_range: timing.detector_range,
                phases: greens
                    .iter()
                    .zip(movements)
                    .map(|(&green, movements)| SignalPhase {
                        green,
                        yellow: timing.yellow,
                        all_red: timing.all_red,
                        movements,
                    })
                    .collect(),
            });
        }
    }

    net.finalize();
    Ok(net)
}
