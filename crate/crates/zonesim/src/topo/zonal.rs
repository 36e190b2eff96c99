//! Zonal loop grid: one unidirectional loop per zone with checkerboarded
//! rotation, 30 m corner arcs, and zipper-merge transfer sections along
//! every shared boundary. The network carries no signal controllers.

use super::{BuildError, GridSpec, LoopAssignment, Rotation};
use crate::geom::{compass_of, Compass, Vec2};
use crate::net::{
    Connection, ConnectionKind, Edge, EdgeIdx, EdgeKind, MergeZone, Node, NodeIdx, NodeKind,
    RoadNetwork,
};

const ARC_STEPS: usize = 12;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Side {
    North,
    East,
    South,
    West,
}

impl Side {
    fn letter(self) -> char {
        match self {
            Side::North => 'n',
            Side::East => 'e',
            Side::South => 's',
            Side::West => 'w',
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Corner {
    Nw,
    Ne,
    Se,
    Sw,
}

impl Corner {
    fn name(self) -> &'static str {
        match self {
            Corner::Nw => "nw",
            Corner::Ne => "ne",
            Corner::Se => "se",
            Corner::Sw => "sw",
        }
    }
}

/// Flow order of sides and the corner arc between consecutive sides.
fn loop_order(rotation: Rotation) -> ([Side; 4], [Corner; 4]) {
    match rotation {
        // N side eastbound, then down the east side, back along the south.
        Rotation::Clockwise => (
            [Side::North, Side::East, Side::South, Side::West],
            [Corner::Ne, Corner::Se, Corner::Sw, Corner::Nw],
        ),
        Rotation::CounterClockwise => (
            [Side::North, Side::West, Side::South, Side::East],
            [Corner::Nw, Corner::Sw, Corner::Se, Corner::Ne],
        ),
    }
}

struct SideBuild {
    /// Segment edges in flow order: 5 for interior sides (approach, merge,
    /// mid, merge, exit), 1 for perimeter sides.
    segments: Vec<EdgeIdx>,
    start_node: NodeIdx,
    end_node: NodeIdx,
}

/// Build the zonal grid for `spec`.
pub fn build_zonal_grid(spec: &GridSpec) -> Result<RoadNetwork, BuildError> {
    spec.validate()?;
    let rows = spec.rows as usize;
    let cols = spec.cols as usize;
    let size = spec.zone_size;
    let offset = spec.lane_offset;
    let radius = spec.curve_radius;
    let lanes = spec.lanes_per_roadway();
    let assignment = LoopAssignment::new(spec.rows, spec.cols);
    let side_len = spec.zone_side_length();
    let merge_len = spec.merge_segment_length;
    let approach_len = (side_len - 2.0 * merge_len) / 4.0;

    let mut net = RoadNetwork::default();
    // sides[r][c][side] filled as zones are built.
    let mut sides: Vec<Vec<[Option<SideBuild>; 4]>> = (0..rows)
        .map(|_| (0..cols).map(|_| [None, None, None, None]).collect())
        .collect();

    for r in 0..rows {
        for c in 0..cols {
            let rotation = assignment.rotation(r as u32, c as u32);
            let x0 = c as f64 * size;
            let y0 = r as f64 * size;
            let x1 = x0 + size;
            let y1 = y0 + size;
            // Tangent-point bounds of the rounded rectangle the loop follows.
            let lx = x0 + offset + radius;
            let rx = x1 - offset - radius;
            let by = y0 + offset + radius;
            let ty = y1 - offset - radius;

            let (order, corners) = loop_order(rotation);
            for side in order {
                let (start, end) = side_span(side, rotation, (x0, y0, x1, y1), offset, (lx, rx, by, ty));
                let interior = match side {
                    Side::North => r + 1 < rows,
                    Side::South => r > 0,
                    Side::East => c + 1 < cols,
                    Side::West => c > 0,
                };
                let dir = (end - start).normalized();
                let dir_char = compass_of(dir).letter();
                let anchor_id = format!("b:{}:{}", boundary_base(side, r, c), dir_char);
                let built = if interior {
                    // Approach, merge, mid, merge, exit segments.
                    let lens = [approach_len, merge_len, 2.0 * approach_len, merge_len, approach_len];
                    let canonical = is_canonical(side, r, c);
                    let mut cursor = start;
                    let mut travelled = 0.0;
                    let mut prev_node = push_node(
                        &mut net,
                        format!("z:{r:02}:{c:02}:{}:a", side.letter()),
                        start,
                        NodeKind::Curve,
                    );
                    let start_node = prev_node;
                    let mut segments = Vec::with_capacity(5);
                    for (k, len) in lens.iter().enumerate() {
                        travelled += len;
                        let next_point = start + dir * travelled;
                        let (node_id, node_kind) = if k == 4 {
                            (format!("z:{r:02}:{c:02}:{}:b", side.letter()), NodeKind::Curve)
                        } else {
                            (
                                format!("z:{r:02}:{c:02}:{}:n{}", side.letter(), k + 1),
                                NodeKind::MergeHead,
                            )
                        };
                        let node = push_node(&mut net, node_id, next_point, node_kind);
                        // The canonical roadway's mid segment is the boundary
                        // anchor shared with the traditional grid's edge ids.
                        let edge_id = if k == 2 && canonical {
                            anchor_id.clone()
                        } else {
                            format!("z:{r:02}:{c:02}:{}:{k}", side.letter())
                        };
                        let edge = EdgeIdx(net.edges.len() as u32);
                        net.edges.push(Edge::new(
                            edge_id,
                            prev_node,
                            node,
                            lanes,
                            spec.speed_limit,
                            EdgeKind::Straight,
                            vec![cursor, next_point],
                        ));
                        segments.push(edge);
                        prev_node = node;
                        cursor = next_point;
                    }
                    // Joints leaving the merge sections; entries into them are
                    // created with the merge zones.
                    for k in [1usize, 3] {
                        net.connections.push(Connection {
                            from: segments[k],
                            to: segments[k + 1],
                            kind: ConnectionKind::LoopContinue,
                        });
                    }
                    SideBuild { segments, start_node, end_node: prev_node }
                } else {
                    let start_node = push_node(
                        &mut net,
                        format!("z:{r:02}:{c:02}:{}:a", side.letter()),
                        start,
                        NodeKind::Curve,
                    );
                    let end_node = push_node(
                        &mut net,
                        format!("z:{r:02}:{c:02}:{}:b", side.letter()),
                        end,
                        NodeKind::Curve,
                    );
                    let edge = EdgeIdx(net.edges.len() as u32);
                    net.edges.push(Edge::new(
                        anchor_id.clone(),
                        start_node,
                        end_node,
                        lanes,
                        spec.speed_limit,
                        EdgeKind::Straight,
                        vec![start, end],
                    ));
                    SideBuild { segments: vec![edge], start_node, end_node }
                };
                sides[r][c][side as usize] = Some(built);
            }

            // Corner arcs stitch consecutive sides together in flow order.
            for (i, corner) in corners.iter().enumerate() {
                let from_side = order[i];
                let to_side = order[(i + 1) % 4];
                let center = corner_center(*corner, (lx, rx, by, ty));
                let from = sides[r][c][from_side as usize].as_ref().unwrap();
                let to = sides[r][c][to_side as usize].as_ref().unwrap();
                let p0 = net.nodes[from.end_node.index()].pos;
                let p1 = net.nodes[to.start_node.index()].pos;
                let geometry = arc_points(center, p0, p1);
                let edge = EdgeIdx(net.edges.len() as u32);
                net.edges.push(Edge::new(
                    format!("z:{r:02}:{c:02}:arc:{}", corner.name()),
                    from.end_node,
                    to.start_node,
                    lanes,
                    spec.speed_limit * spec.curve_speed_factor,
                    EdgeKind::Arc { radius },
                    geometry,
                ));
                let from_last = *from.segments.last().unwrap();
                let to_first = to.segments[0];
                net.connections.push(Connection {
                    from: from_last,
                    to: edge,
                    kind: ConnectionKind::LoopContinue,
                });
                net.connections.push(Connection {
                    from: edge,
                    to: to_first,
                    kind: ConnectionKind::LoopContinue,
                });
            }
        }
    }

    // Transfer structures: two zipper merges per shared boundary, one per
    // travel half. Entry i keeps its roadway via exit i and crosses to the
    // parallel roadway via exit 1-i.
    let add_merges = |net: &mut RoadNetwork,
                          base: String,
                          canonical: &SideBuild,
                          other: &SideBuild| {
        for (k, seg) in [0usize, 2].iter().enumerate() {
            let zone = net.merge_zones.len() as u32;
            let entries = [canonical.segments[*seg], other.segments[*seg]];
            let exits = [canonical.segments[seg + 1], other.segments[seg + 1]];
            net.merge_zones.push(MergeZone { id: format!("m:{base}:{k}"), entries, exits });
            for e in exits {
                net.edges[e.index()].kind = EdgeKind::ZipperMerge { merge_zone: zone };
            }
            for i in 0..2 {
                net.connections.push(Connection {
                    from: entries[i],
                    to: exits[i],
                    kind: ConnectionKind::MergeKeep,
                });
                net.connections.push(Connection {
                    from: entries[i],
                    to: exits[1 - i],
                    kind: ConnectionKind::MergeCross,
                });
            }
        }
    };
    for i in 1..rows {
        for j in 0..cols {
            let north_of_lower = sides[i - 1][j][Side::North as usize].as_ref().unwrap();
            let south_of_upper = sides[i][j][Side::South as usize].as_ref().unwrap();
            add_merges(&mut net, format!("h:{i:02}:{j:02}"), north_of_lower, south_of_upper);
        }
    }
    for j in 1..cols {
        for i in 0..rows {
            let east_of_left = sides[i][j - 1][Side::East as usize].as_ref().unwrap();
            let west_of_right = sides[i][j][Side::West as usize].as_ref().unwrap();
            add_merges(&mut net, format!("v:{i:02}:{j:02}"), east_of_left, west_of_right);
        }
    }

    net.finalize();
    Ok(net)
}

fn push_node(net: &mut RoadNetwork, id: String, pos: Vec2, kind: NodeKind) -> NodeIdx {
    let idx = NodeIdx(net.nodes.len() as u32);
    net.nodes.push(Node { id, pos, kind });
    idx
}

/// Start and end point of a side's straight section in flow order.
fn side_span(
    side: Side,
    rotation: Rotation,
    (x0, y0, x1, y1): (f64, f64, f64, f64),
    offset: f64,
    (lx, rx, by, ty): (f64, f64, f64, f64),
) -> (Vec2, Vec2) {
    let flow = flow_compass(side, rotation);
    match side {
        Side::North => {
            let y = y1 - offset;
            match flow {
                Compass::East => (Vec2::new(lx, y), Vec2::new(rx, y)),
                _ => (Vec2::new(rx, y), Vec2::new(lx, y)),
            }
        }
        Side::South => {
            let y = y0 + offset;
            match flow {
                Compass::East => (Vec2::new(lx, y), Vec2::new(rx, y)),
                _ => (Vec2::new(rx, y), Vec2::new(lx, y)),
            }
        }
        Side::East => {
            let x = x1 - offset;
            match flow {
                Compass::North => (Vec2::new(x, by), Vec2::new(x, ty)),
                _ => (Vec2::new(x, ty), Vec2::new(x, by)),
            }
        }
        Side::West => {
            let x = x0 + offset;
            match flow {
                Compass::North => (Vec2::new(x, by), Vec2::new(x, ty)),
                _ => (Vec2::new(x, ty), Vec2::new(x, by)),
            }
        }
    }
}

/// Travel direction along a side for the given loop rotation. With y up,
/// clockwise runs east along the north side.
fn flow_compass(side: Side, rotation: Rotation) -> Compass {
    match (rotation, side) {
        (Rotation::Clockwise, Side::North) => Compass::East,
        (Rotation::Clockwise, Side::East) => Compass::South,
        (Rotation::Clockwise, Side::South) => Compass::West,
        (Rotation::Clockwise, Side::West) => Compass::North,
        (Rotation::CounterClockwise, Side::North) => Compass::West,
        (Rotation::CounterClockwise, Side::West) => Compass::South,
        (Rotation::CounterClockwise, Side::South) => Compass::East,
        (Rotation::CounterClockwise, Side::East) => Compass::North,
    }
}

/// Boundary line identifier `axis:i:j` for a zone side; shared by the two
/// roadways along the boundary and by the traditional builder's edge ids.
fn boundary_base(side: Side, r: usize, c: usize) -> String {
    match side {
        Side::North => format!("h:{:02}:{:02}", r + 1, c),
        Side::South => format!("h:{r:02}:{c:02}"),
        Side::East => format!("v:{:02}:{:02}", r, c + 1),
        Side::West => format!("v:{r:02}:{c:02}"),
    }
}

/// The boundary's anchor roadway belongs to the south/west zone where one
/// exists; perimeter sides are always canonical.
fn is_canonical(side: Side, r: usize, c: usize) -> bool {
    let _ = (r, c);
    match side {
        Side::North | Side::East => true,
        Side::South => r == 0,
        Side::West => c == 0,
    }
}

fn corner_center(corner: Corner, (lx, rx, by, ty): (f64, f64, f64, f64)) -> Vec2 {
    match corner {
        Corner::Nw => Vec2::new(lx, ty),
        Corner::Ne => Vec2::new(rx, ty),
        Corner::Se => Vec2::new(rx, by),
        Corner::Sw => Vec2::new(lx, by),
    }
}

/// Sample a quarter arc from `p0` to `p1` around `center`; vertices lie
/// exactly on the circle, and the edge length is the chord-sum of the
/// polyline so declared lengths always match geometry.
fn arc_points(center: Vec2, p0: Vec2, p1: Vec2) -> Vec<Vec2> {
    let r0 = p0 - center;
    let r1 = p1 - center;
    let radius = r0.norm();
    let a0 = r0.y.atan2(r0.x);
    let a1 = r1.y.atan2(r1.x);
    let mut sweep = a1 - a0;
    while sweep > std::f64::consts::PI {
        sweep -= 2.0 * std::f64::consts::PI;
    }
    while sweep < -std::f64::consts::PI {
        sweep += 2.0 * std::f64::consts::PI;
    }
    let mut pts = Vec::with_capacity(ARC_STEPS + 1);
    pts.push(p0);
    for i in 1..ARC_STEPS {
        let a = a0 + sweep * i as f64 / ARC_STEPS as f64;
        pts.push(center + Vec2::new(radius * a.cos(), radius * a.sin()));
    }
    pts.push(p1);
    pts
}
