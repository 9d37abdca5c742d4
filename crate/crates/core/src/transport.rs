//! Road network, shortest paths and per-step vehicle movement.
//!
//! The network file is line oriented:
//!
//! ```text
//! # comment
//! node <id>
//! edge <a> <b> <km>
//! microgrid <microgrid_id> <node>
//! depot <depot_id> <node>
//! ```
//!
//! Edges are undirected. A repeated edge (in either direction) must carry the
//! same weight and is collapsed into one.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distances closer than this are treated as equal (km).
pub const DISTANCE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: non-positive weight {weight} on edge {a}-{b}")]
    NonPositiveWeight {
        line: usize,
        a: NodeId,
        b: NodeId,
        weight: f64,
    },
    #[error("line {line}: {what} references unknown node {node}")]
    DanglingNode {
        line: usize,
        what: String,
        node: NodeId,
    },
    #[error("line {line}: node {node} already hosts microgrid {existing}")]
    SharedMicrogridNode { line: usize, node: NodeId, existing: u32 },
    #[error("network is disconnected: node {0} is unreachable from node {1}")]
    Disconnected(NodeId, NodeId),
    #[error("network has no nodes")]
    Empty,
    #[error("cannot read network file: {0}")]
    Io(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid location: {0}")]
    InvalidLocation(String),
    #[error("node {to} unreachable from {from}")]
    Unreachable { from: NodeId, to: NodeId },
    #[error("speed and step length must be positive")]
    NonPositiveMotion,
}

/// Position of a vehicle: parked at a node or part-way along an edge.
///
/// `OnEdge { from, from_km, to, to_km }` records the distance to both
/// endpoints; they always sum to the edge length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Location {
    AtNode { node: NodeId },
    OnEdge {
        from: NodeId,
        from_km: f64,
        to: NodeId,
        to_km: f64,
    },
}

impl Location {
    pub fn at(node: NodeId) -> Self {
        Location::AtNode { node }
    }

    pub fn node(&self) -> Option<NodeId> {
        match *self {
            Location::AtNode { node } => Some(node),
            Location::OnEdge { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub distance: f64,
    /// Node sequence after leaving the start edge (or starting at the start node).
    pub path: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct TransportNetwork {
    nodes: Vec<NodeId>,
    index: BTreeMap<NodeId, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
    edges: BTreeMap<(NodeId, NodeId), f64>,
    microgrids: BTreeMap<u32, NodeId>,
    depots: BTreeMap<u32, NodeId>,
    /// Dijkstra distances between every pair of nodes, by index.
    table: Vec<Vec<f64>>,
    /// Upper bound on any shortest-path distance from any location.
    distance_scale: f64,
}

fn edge_key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on distance, then node index.
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Builder used by the parser and by tests that assemble networks in code.
#[derive(Debug, Default, Clone)]
pub struct NetworkBuilder {
    nodes: BTreeSet<NodeId>,
    edges: Vec<(usize, NodeId, NodeId, f64)>,
    microgrids: Vec<(usize, u32, NodeId)>,
    depots: Vec<(usize, u32, NodeId)>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(mut self, id: u32) -> Self {
        self.nodes.insert(NodeId(id));
        self
    }

    pub fn edge(mut self, a: u32, b: u32, km: f64) -> Self {
        self.edges.push((0, NodeId(a), NodeId(b), km));
        self
    }

    pub fn microgrid(mut self, id: u32, node: u32) -> Self {
        self.microgrids.push((0, id, NodeId(node)));
        self
    }

    pub fn depot(mut self, id: u32, node: u32) -> Self {
        self.depots.push((0, id, NodeId(node)));
        self
    }

    pub fn build(self) -> Result<TransportNetwork, NetworkError> {
        if self.nodes.is_empty() {
            return Err(NetworkError::Empty);
        }
        let nodes: Vec<NodeId> = self.nodes.iter().copied().collect();
        let index: BTreeMap<NodeId, usize> =
            nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut edges = BTreeMap::new();
        for &(line, a, b, w) in &self.edges {
            for n in [a, b] {
                if !index.contains_key(&n) {
                    return Err(NetworkError::DanglingNode {
                        line,
                        what: "edge".into(),
                        node: n,
                    });
                }
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(NetworkError::NonPositiveWeight {
                    line,
                    a,
                    b,
                    weight: w,
                });
            }
            if a == b {
                return Err(NetworkError::Parse {
                    line,
                    message: format!("self-loop on node {a}"),
                });
            }
            match edges.insert(edge_key(a, b), w) {
                Some(prev) if prev != w => {
                    return Err(NetworkError::Parse {
                        line,
                        message: format!("edge {a}-{b} repeated with weight {w} (was {prev})"),
                    })
                }
                _ => {}
            }
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (&(a, b), &w) in &edges {
            adjacency[index[&a]].push((index[&b], w));
            adjacency[index[&b]].push((index[&a], w));
        }
        for adj in &mut adjacency {
            adj.sort_by_key(|&(n, _)| n);
        }

        let mut microgrids = BTreeMap::new();
        let mut hosts: BTreeMap<NodeId, u32> = BTreeMap::new();
        for &(line, id, node) in &self.microgrids {
            if !index.contains_key(&node) {
                return Err(NetworkError::DanglingNode {
                    line,
                    what: format!("microgrid {id}"),
                    node,
                });
            }
            if let Some(&existing) = hosts.get(&node) {
                return Err(NetworkError::SharedMicrogridNode {
                    line,
                    node,
                    existing,
                });
            }
            if microgrids.insert(id, node).is_some() {
                return Err(NetworkError::Parse {
                    line,
                    message: format!("microgrid {id} declared twice"),
                });
            }
            hosts.insert(node, id);
        }
        let mut depots = BTreeMap::new();
        for &(line, id, node) in &self.depots {
            if !index.contains_key(&node) {
                return Err(NetworkError::DanglingNode {
                    line,
                    what: format!("depot {id}"),
                    node,
                });
            }
            if depots.insert(id, node).is_some() {
                return Err(NetworkError::Parse {
                    line,
                    message: format!("depot {id} declared twice"),
                });
            }
        }

        let mut net = TransportNetwork {
            nodes,
            index,
            adjacency,
            edges,
            microgrids,
            depots,
            table: Vec::new(),
            distance_scale: 1.0,
        };
        let table: Vec<Vec<f64>> = (0..net.nodes.len()).map(|i| net.dijkstra(i)).collect();
        if let Some(i) = table[0].iter().position(|d| !d.is_finite()) {
            return Err(NetworkError::Disconnected(net.nodes[i], net.nodes[0]));
        }
        let diameter = table.iter().flatten().copied().fold(0.0, f64::max);
        net.table = table;
        let longest_edge = net.edges.values().copied().fold(0.0, f64::max);
        net.distance_scale = (diameter + longest_edge).max(1.0);
        Ok(net)
    }
}

impl TransportNetwork {
    pub fn parse(text: &str) -> Result<Self, NetworkError> {
        let mut b = NetworkBuilder::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let bad = |message: String| NetworkError::Parse { line, message };
            let int = |s: &str| {
                s.parse::<u32>()
                    .map_err(|_| bad(format!("expected a non-negative integer, got `{s}`")))
            };
            let arity = |n: usize| {
                if fields.len() == n {
                    Ok(())
                } else {
                    Err(bad(format!(
                        "`{}` takes {} fields, got {}",
                        fields[0],
                        n - 1,
                        fields.len() - 1
                    )))
                }
            };
            match fields[0] {
                "node" => {
                    arity(2)?;
                    b.nodes.insert(NodeId(int(fields[1])?));
                }
                "edge" => {
                    arity(4)?;
                    let w: f64 = fields[3]
                        .parse()
                        .map_err(|_| bad(format!("invalid weight `{}`", fields[3])))?;
                    b.edges
                        .push((line, NodeId(int(fields[1])?), NodeId(int(fields[2])?), w));
                }
                "microgrid" => {
                    arity(3)?;
                    b.microgrids
                        .push((line, int(fields[1])?, NodeId(int(fields[2])?)));
                }
                "depot" => {
                    arity(3)?;
                    b.depots.push((line, int(fields[1])?, NodeId(int(fields[2])?)));
                }
                other => return Err(bad(format!("unknown record `{other}`"))),
            }
        }
        b.build()
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NetworkError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.edges.iter().map(|(&(a, b), &w)| (a, b, w))
    }

    pub fn edge_weight(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.edges.get(&edge_key(a, b)).copied()
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.index.contains_key(&n)
    }

    /// Microgrid id to host node, ordered by id.
    pub fn microgrids(&self) -> &BTreeMap<u32, NodeId> {
        &self.microgrids
    }

    /// Depot id to node, ordered by id.
    pub fn depots(&self) -> &BTreeMap<u32, NodeId> {
        &self.depots
    }

    pub fn microgrid_node(&self, id: u32) -> Option<NodeId> {
        self.microgrids.get(&id).copied()
    }

    pub fn depot_node(&self, id: u32) -> Option<NodeId> {
        self.depots.get(&id).copied()
    }

    /// Constant that bounds every shortest-path distance from any valid
    /// location, used to normalise distances into [0, 1].
    pub fn distance_scale(&self) -> f64 {
        self.distance_scale
    }

    fn idx(&self, n: NodeId) -> Result<usize, NetworkError> {
        self.index.get(&n).copied().ok_or(NetworkError::UnknownNode(n))
    }

    /// Single-source distances by node index.
    fn dijkstra(&self, source: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(HeapItem {
            dist: 0.0,
            node: source,
        });
        while let Some(HeapItem { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for &(next, w) in &self.adjacency[node] {
                let nd = d + w;
                if nd < dist[next] {
                    dist[next] = nd;
                    heap.push(HeapItem { dist: nd, node: next });
                }
            }
        }
        dist
    }

    pub fn validate_location(&self, loc: &Location) -> Result<(), NetworkError> {
        match *loc {
            Location::AtNode { node } => self.idx(node).map(|_| ()),
            Location::OnEdge {
                from,
                from_km,
                to,
                to_km,
            } => {
                let w = self.edge_weight(from, to).ok_or_else(|| {
                    NetworkError::InvalidLocation(format!("no edge {from}-{to}"))
                })?;
                if !(from_km >= 0.0 && to_km >= 0.0) {
                    return Err(NetworkError::InvalidLocation(format!(
                        "negative offset on edge {from}-{to}"
                    )));
                }
                if (from_km + to_km - w).abs() > DISTANCE_EPS {
                    return Err(NetworkError::InvalidLocation(format!(
                        "offsets {from_km} + {to_km} != edge length {w}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Shortest route from `from` to node `to`. Starting on an edge, the
    /// vehicle may leave through either endpoint. Equal-length alternatives
    /// resolve to the smallest next node id at every hop.
    pub fn shortest_path(&self, from: &Location, to: NodeId) -> Result<Route, NetworkError> {
        self.validate_location(from)?;
        let target = self.idx(to)?;
        let to_target = &self.table[target];
        let (start, distance) = match *from {
            Location::AtNode { node } => {
                let i = self.idx(node)?;
                (i, to_target[i])
            }
            Location::OnEdge {
                from: a,
                from_km,
                to: b,
                to_km,
            } => {
                let (ia, ib) = (self.idx(a)?, self.idx(b)?);
                let via_a = from_km + to_target[ia];
                let via_b = to_km + to_target[ib];
                let prefer_a = if (via_a - via_b).abs() <= DISTANCE_EPS {
                    a < b
                } else {
                    via_a < via_b
                };
                if prefer_a {
                    (ia, via_a)
                } else {
                    (ib, via_b)
                }
            }
        };
        if !distance.is_finite() {
            let origin = match *from {
                Location::AtNode { node } => node,
                Location::OnEdge { from, .. } => from,
            };
            return Err(NetworkError::Unreachable { from: origin, to });
        }
        let mut path = vec![self.nodes[start]];
        let mut cur = start;
        while cur != target {
            // adjacency is sorted by index, and index order is node-id order
            let next = self.adjacency[cur]
                .iter()
                .find(|&&(n, w)| (w + to_target[n] - to_target[cur]).abs() <= DISTANCE_EPS)
                .map(|&(n, _)| n)
                .ok_or(NetworkError::Unreachable {
                    from: self.nodes[start],
                    to,
                })?;
            path.push(self.nodes[next]);
            cur = next;
        }
        Ok(Route { distance, path })
    }

    /// Shortest-path distance from a location to a node.
    pub fn distance(&self, from: &Location, to: NodeId) -> Result<f64, NetworkError> {
        let t = self.idx(to)?;
        match *from {
            Location::AtNode { node } => Ok(self.table[self.idx(node)?][t]),
            Location::OnEdge {
                from: a,
                from_km,
                to: b,
                to_km,
            } => {
                self.validate_location(from)?;
                let via_a = from_km + self.table[self.idx(a)?][t];
                let via_b = to_km + self.table[self.idx(b)?][t];
                Ok(via_a.min(via_b))
            }
        }
    }

    /// Moves a vehicle `speed * dt` km along the shortest path toward `dest`,
    /// stopping at `dest` if it is closer than that.
    pub fn advance(
        &self,
        loc: &Location,
        dest: NodeId,
        speed: f64,
        dt: f64,
    ) -> Result<Location, NetworkError> {
        if !(speed > 0.0 && dt > 0.0) {
            return Err(NetworkError::NonPositiveMotion);
        }
        let route = self.shortest_path(loc, dest)?;
        let budget = speed * dt;
        if budget + DISTANCE_EPS >= route.distance {
            return Ok(Location::at(dest));
        }

        // Legs as (start, end, length) along the route.
        let mut legs: Vec<(NodeId, NodeId, f64)> = Vec::with_capacity(route.path.len());
        let mut prev = match *loc {
            Location::AtNode { node } => node,
            Location::OnEdge {
                from,
                from_km,
                to,
                to_km,
            } => {
                let exit = route.path[0];
                let (other, len) = if exit == from { (to, from_km) } else { (from, to_km) };
                legs.push((other, exit, len));
                exit
            }
        };
        for &n in &route.path[1..] {
            let w = self.edge_weight(prev, n).expect("route follows network edges");
            legs.push((prev, n, w));
            prev = n;
        }

        let mut remaining = budget;
        for (i, &(start, end, len)) in legs.iter().enumerate() {
            if (remaining - len).abs() <= DISTANCE_EPS {
                return Ok(Location::at(end));
            }
            if remaining < len {
                let w = self.edge_weight(start, end).expect("leg is an edge");
                // The first leg of an on-edge start begins mid-edge.
                let covered = if i == 0 && loc.node().is_none() {
                    (w - len) + remaining
                } else {
                    remaining
                };
                return Ok(Location::OnEdge {
                    from: start,
                    from_km: covered,
                    to: end,
                    to_km: w - covered,
                });
            }
            remaining -= len;
        }
        Ok(Location::at(dest))
    }

    /// Stay indicator for microgrid `m`: true iff the vehicle sits at the
    /// microgrid's node for the whole interval.
    pub fn at_microgrid(&self, before: &Location, after: &Location, m: u32) -> bool {
        match (self.microgrid_node(m), before, after) {
            (Some(host), Location::AtNode { node: a }, Location::AtNode { node: b }) => {
                a == b && *a == host
            }
            _ => false,
        }
    }

    /// Microgrid id hosted at `node`, if any.
    pub fn microgrid_at(&self, node: NodeId) -> Option<u32> {
        self.microgrids
            .iter()
            .find(|(_, &n)| n == node)
            .map(|(&id, _)| id)
    }
}
