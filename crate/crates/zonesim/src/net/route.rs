//! Free-flow shortest-path routing over the movement graph.
//!
//! Edge weights are free-flow travel times (`length / speed_limit`), held as
//! integer nanoseconds so equal-cost paths tie exactly. Ties are broken by
//! the lexicographically smallest edge-id sequence, which makes routing a
//! pure, deterministic function of the network.

use super::{EdgeIdx, OdPair, RoadNetwork};
use std::cmp::Reverse;
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouteError {
    #[error("unknown edge id `{0}`")]
    UnknownEdge(String),
    #[error("no route from `{origin}` to `{dest}`")]
    NoRoute { origin: String, dest: String },
    #[error("OD pair `{origin}` -> `{dest}` is not routable in {network}")]
    UnroutablePair {
        origin: String,
        dest: String,
        network: &'static str,
    },
}

/// A routed path: an ordered edge sequence including the origin and
/// destination edges.
#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub edges: Vec<EdgeIdx>,
    /// Sum of member edge lengths in meters.
    pub total_length: f64,
}

impl Route {
    pub fn origin(&self) -> EdgeIdx {
        *self.edges.first().expect("route is never empty")
    }

    pub fn dest(&self) -> EdgeIdx {
        *self.edges.last().expect("route is never empty")
    }
}

fn cost_ns(net: &RoadNetwork, e: EdgeIdx) -> u64 {
    let edge = net.edge(e);
    (edge.length / edge.speed_limit * 1e9).round() as u64
}

/// Shortest-path planner with a per-destination cost table cache, so routing
/// many origins to the same destination costs one Dijkstra pass.
#[derive(Default)]
pub struct Planner {
    tables: HashMap<EdgeIdx, Arc<Vec<u64>>>,
}

impl Planner {
    pub fn new() -> Self {
        Planner::default()
    }

    /// Minimum free-flow cost from the start of each edge to the end of
    /// `dest`, inclusive of both edges' own traversal time.
    fn table(&mut self, net: &RoadNetwork, dest: EdgeIdx) -> Arc<Vec<u64>> {
        if let Some(t) = self.tables.get(&dest) {
            return Arc::clone(t);
        }
        let mut dist = vec![u64::MAX; net.edge_count()];
        let mut heap = BinaryHeap::new();
        dist[dest.index()] = cost_ns(net, dest);
        heap.push(Reverse((dist[dest.index()], dest)));
        while let Some(Reverse((d, e))) = heap.pop() {
            if d > dist[e.index()] {
                continue;
            }
            for &c in net.in_connections(e) {
                let pred = net.connection(c).from;
                let nd = d.saturating_add(cost_ns(net, pred));
                if nd < dist[pred.index()] {
                    dist[pred.index()] = nd;
                    heap.push(Reverse((nd, pred)));
                }
            }
        }
        let table = Arc::new(dist);
        self.tables.insert(dest, Arc::clone(&table));
        table
    }

    /// Route minimizing total free-flow time; among equal-cost paths the one
    /// with the lexicographically smallest edge-id sequence is returned.
    pub fn route(
        &mut self,
        net: &RoadNetwork,
        origin: EdgeIdx,
        dest: EdgeIdx,
    ) -> Result<Route, RouteError> {
        let table = self.table(net, dest);
        if table[origin.index()] == u64::MAX {
            return Err(RouteError::NoRoute {
                origin: net.edge(origin).id.clone(),
                dest: net.edge(dest).id.clone(),
            });
        }
        let mut edges = vec![origin];
        let mut cur = origin;
        while cur != dest {
            let remaining = table[cur.index()] - cost_ns(net, cur);
            // Successors are pre-sorted by edge id, so the first on-path
            // successor yields the lexicographically smallest sequence.
            let next = net
                .out_connections(cur)
                .iter()
                .map(|&c| net.connection(c).to)
                .find(|n| table[n.index()] == remaining)
                .expect("cost table admits a successor on every shortest path");
            edges.push(next);
            cur = next;
        }
        let total_length = edges.iter().map(|&e| net.edge(e).length).sum();
        Ok(Route { edges, total_length })
    }

    pub fn route_by_id(
        &mut self,
        net: &RoadNetwork,
        origin: &str,
        dest: &str,
    ) -> Result<Route, RouteError> {
        let o = net
            .find_edge(origin)
            .ok_or_else(|| RouteError::UnknownEdge(origin.to_string()))?;
        let d = net
            .find_edge(dest)
            .ok_or_else(|| RouteError::UnknownEdge(dest.to_string()))?;
        self.route(net, o, d)
    }
}

/// One-shot shortest route between two edge ids.
pub fn shortest_route(net: &RoadNetwork, origin: &str, dest: &str) -> Result<Route, RouteError> {
    Planner::new().route_by_id(net, origin, dest)
}

/// Mean route length in `net_a` divided by mean route length in `net_b`
/// over a shared set of OD pairs. Pairs must resolve and route in both
/// networks; the first failing pair is reported.
pub fn route_length_ratio(
    net_a: &RoadNetwork,
    net_b: &RoadNetwork,
    pairs: &[OdPair],
) -> Result<f64, RouteError> {
    let mut planner_a = Planner::new();
    let mut planner_b = Planner::new();
    let mut sum_a = 0.0;
    let mut sum_b = 0.0;
    for pair in pairs {
        let unroutable = |network| RouteError::UnroutablePair {
            origin: pair.origin.clone(),
            dest: pair.dest.clone(),
            network,
        };
        sum_a += planner_a
            .route_by_id(net_a, &pair.origin, &pair.dest)
            .map_err(|_| unroutable("network A"))?
            .total_length;
        sum_b += planner_b
            .route_by_id(net_b, &pair.origin, &pair.dest)
            .map_err(|_| unroutable("network B"))?
            .total_length;
    }
    Ok(sum_a / sum_b)
}

/// Memoizing wrapper used by the engine: routes are immutable per network,
/// so (origin, dest) results can be shared.
#[derive(Default)]
pub struct RouteCache {
    planner: Planner,
    routes: HashMap<(EdgeIdx, EdgeIdx), Arc<Route>>,
}

impl RouteCache {
    pub fn new() -> Self {
        RouteCache::default()
    }

    pub fn route(
        &mut self,
        net: &RoadNetwork,
        origin: EdgeIdx,
        dest: EdgeIdx,
    ) -> Result<Arc<Route>, RouteError> {
        match self.routes.entry((origin, dest)) {
            Entry::Occupied(e) => Ok(Arc::clone(e.get())),
            Entry::Vacant(slot) => {
                let route = Arc::new(self.planner.route(net, origin, dest)?);
                slot.insert(Arc::clone(&route));
                Ok(route)
            }
        }
    }
}
