//! Shared domain types: detections, candidate graphs, indicator vectors,
//! weights, the sparse feature matrix and lineage forests.
//!
//! Indicator vectors over a graph with `V` nodes and `E` edges have length
//! `5*V + E`, laid out as the concatenation
//! `[node | track | parent | daughter | continue | edge]`, each block in
//! canonical order: nodes sorted by `(frame, id)`, edges by `(source, target)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// World-unit coordinates, stored as `(z, y, x)`.
pub type Vec3 = [f64; 3];

pub fn vec3_add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn vec3_sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn vec3_dist(a: Vec3, b: Vec3) -> f64 {
    let d = vec3_sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("duplicate node id {0}")]
    DuplicateNodeId(u64),
    #[error("edge ({0}, {1}) references a missing node")]
    DanglingEdge(u64, u64),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(u64, u64),
    #[error("edge ({}, {}) spans frames {from} -> {to}, expected one step forward", edge.0, edge.1)]
    BadEdgeFrames { edge: (u64, u64), from: u32, to: u32 },
    #[error("edge ({0}, {1}) has negative cost {2}")]
    NegativeEdgeCost(u64, u64, f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("node {id} has in-degree {indeg}, expected at most 1")]
    InDegree { id: u64, indeg: usize },
    #[error("node {id} has out-degree {outdeg}, expected at most 2")]
    OutDegree { id: u64, outdeg: usize },
    #[error("node {id} has out-degree 2 but is labeled {state:?}, expected parent")]
    DivisionWithoutParentLabel { id: u64, state: CellState },
    #[error("selected node {id} has {n} selected state indicators, expected exactly 1")]
    StateCount { id: u64, n: usize },
    #[error("indicator {index} selected but its node is not")]
    DanglingIndicator { index: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// Per-candidate cell state scores, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateScores {
    pub parent: f64,
    pub daughter: f64,
    pub continuation: f64,
    pub polar_body: f64,
}

impl StateScores {
    pub fn new(parent: f64, daughter: f64, continuation: f64, polar_body: f64) -> Self {
        Self {
            parent: clamp_score(parent, "state score"),
            daughter: clamp_score(daughter, "state score"),
            continuation: clamp_score(continuation, "state score"),
            polar_body: clamp_score(polar_body, "polar body score"),
        }
    }
}

fn clamp_score(v: f64, what: &str) -> f64 {
    if !(0.0..=1.0).contains(&v) {
        log::warn!("{what} {v} outside [0, 1], clamping");
        v.clamp(0.0, 1.0)
    } else {
        v
    }
}

/// A candidate nucleus detection.
///
/// `movement` points backwards in time, toward the predicted position of the
/// same (or parent) cell in the previous frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub id: u64,
    pub frame: u32,
    pub position: Vec3,
    pub score: f64,
    pub state_scores: StateScores,
    pub movement: Vec3,
}

impl Detection {
    /// Builds a detection, clamping scores into `[0, 1]` (with a warning) so
    /// slightly out-of-range generator noise does not poison a dataset.
    pub fn new(
        id: u64,
        frame: u32,
        position: Vec3,
        score: f64,
        state_scores: StateScores,
        movement: Vec3,
    ) -> Self {
        Self {
            id,
            frame,
            position,
            score: clamp_score(score, "candidate score"),
            state_scores,
            movement,
        }
    }

    /// The point this detection predicts its predecessor to be at.
    pub fn movement_target(&self) -> Vec3 {
        vec3_add(self.position, self.movement)
    }
}

/// A candidate link, directed forward in time (`source.frame + 1 == target.frame`).
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub source: u64,
    pub target: u64,
    pub cost: f64,
}

/// Candidate graph over detections; nodes and edges are held in canonical
/// order (nodes by `(frame, id)`, edges by `(source, target)`) so indicator
/// indices are reproducible across runs.
#[derive(Debug, Clone)]
pub struct CandidateGraph {
    nodes: Vec<Detection>,
    edges: Vec<Edge>,
    node_index: HashMap<u64, usize>,
    edge_endpoints: Vec<(usize, usize)>,
    in_edges: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
}

impl CandidateGraph {
    pub fn new(mut nodes: Vec<Detection>, mut edges: Vec<Edge>) -> Result<Self, ModelError> {
        nodes.sort_by_key(|n| (n.frame, n.id));
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if node_index.insert(n.id, i).is_some() {
                return Err(ModelError::DuplicateNodeId(n.id));
            }
        }
        edges.sort_by_key(|e| (e.source, e.target));
        let mut edge_endpoints = Vec::with_capacity(edges.len());
        let mut in_edges = vec![Vec::new(); nodes.len()];
        let mut out_edges = vec![Vec::new(); nodes.len()];
        for (j, e) in edges.iter().enumerate() {
            let &u = node_index
                .get(&e.source)
                .ok_or(ModelError::DanglingEdge(e.source, e.target))?;
            let &v = node_index
                .get(&e.target)
                .ok_or(ModelError::DanglingEdge(e.source, e.target))?;
            if j > 0 && edges[j - 1].source == e.source && edges[j - 1].target == e.target {
                return Err(ModelError::DuplicateEdge(e.source, e.target));
            }
            if nodes[v].frame != nodes[u].frame + 1 {
                return Err(ModelError::BadEdgeFrames {
                    edge: (e.source, e.target),
                    from: nodes[u].frame,
                    to: nodes[v].frame,
                });
            }
            if !e.cost.is_finite() || e.cost < 0.0 {
                return Err(ModelError::NegativeEdgeCost(e.source, e.target, e.cost));
            }
            edge_endpoints.push((u, v));
            out_edges[u].push(j);
            in_edges[v].push(j);
        }
        Ok(Self {
            nodes,
            edges,
            node_index,
            edge_endpoints,
            in_edges,
            out_edges,
        })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new()).expect("empty graph is valid")
    }

    pub fn nodes(&self) -> &[Detection] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Canonical index of a node id.
    pub fn node_idx(&self, id: u64) -> Option<usize> {
        self.node_index.get(&id).copied()
    }

    /// Canonical edge index of an id pair.
    pub fn edge_idx(&self, source: u64, target: u64) -> Option<usize> {
        self.edges
            .binary_search_by_key(&(source, target), |e| (e.source, e.target))
            .ok()
    }

    /// Endpoints of edge `j` as canonical node indices `(source, target)`.
    pub fn endpoints(&self, j: usize) -> (usize, usize) {
        self.edge_endpoints[j]
    }

    /// Edge indices entering node `v` (by canonical node index).
    pub fn in_edges(&self, v: usize) -> &[usize] {
        &self.in_edges[v]
    }

    /// Edge indices leaving node `u` (by canonical node index).
    pub fn out_edges(&self, u: usize) -> &[usize] {
        &self.out_edges[u]
    }

    pub fn layout(&self) -> IndicatorLayout {
        IndicatorLayout {
            nodes: self.nodes.len(),
            edges: self.edges.len(),
        }
    }

    /// Frame range as `(min, max)`, or `None` for an empty graph.
    pub fn frame_range(&self) -> Option<(u32, u32)> {
        let first = self.nodes.first()?.frame;
        let last = self.nodes.last()?.frame;
        Some((first, last))
    }
}

/// Index arithmetic for the `[node | track | parent | daughter | continue | edge]`
/// indicator layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndicatorLayout {
    pub nodes: usize,
    pub edges: usize,
}

/// Which block of the indicator vector an index falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndicatorBlock {
    Node,
    Track,
    Parent,
    Daughter,
    Continuation,
    Edge,
}

impl IndicatorLayout {
    pub fn len(&self) -> usize {
        5 * self.nodes + self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, i: usize) -> usize {
        debug_assert!(i < self.nodes);
        i
    }

    pub fn track(&self, i: usize) -> usize {
        debug_assert!(i < self.nodes);
        self.nodes + i
    }

    pub fn parent(&self, i: usize) -> usize {
        debug_assert!(i < self.nodes);
        2 * self.nodes + i
    }

    pub fn daughter(&self, i: usize) -> usize {
        debug_assert!(i < self.nodes);
        3 * self.nodes + i
    }

    pub fn continuation(&self, i: usize) -> usize {
        debug_assert!(i < self.nodes);
        4 * self.nodes + i
    }

    pub fn edge(&self, j: usize) -> usize {
        debug_assert!(j < self.edges);
        5 * self.nodes + j
    }

    /// Block and within-block offset of a flat indicator index.
    pub fn block_of(&self, index: usize) -> (IndicatorBlock, usize) {
        if index < 5 * self.nodes {
            let block = match index / self.nodes {
                0 => IndicatorBlock::Node,
                1 => IndicatorBlock::Track,
                2 => IndicatorBlock::Parent,
                3 => IndicatorBlock::Daughter,
                _ => IndicatorBlock::Continuation,
            };
            (block, index % self.nodes)
        } else {
            (IndicatorBlock::Edge, index - 5 * self.nodes)
        }
    }
}

/// A binary assignment over all indicators of a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorAssignment {
    bits: Vec<bool>,
}

impl IndicatorAssignment {
    pub fn zeros(len: usize) -> Self {
        Self {
            bits: vec![false; len],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, v: bool) {
        self.bits[i] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    /// Lexicographic comparison in canonical indicator order (index 0 first).
    pub fn lex_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bits.cmp(&other.bits)
    }
}

/// The 8 tunable weights of the selection objective, in column order of the
/// feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightVector {
    pub node_sel: f64,
    pub node_score: f64,
    pub track: f64,
    pub division: f64,
    pub parent: f64,
    pub daughter: f64,
    pub continuation: f64,
    pub edge: f64,
}

impl WeightVector {
    pub const DIM: usize = 8;

    pub fn zeros() -> Self {
        Self::from_array([0.0; 8])
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Self {
            node_sel: a[0],
            node_score: a[1],
            track: a[2],
            division: a[3],
            parent: a[4],
            daughter: a[5],
            continuation: a[6],
            edge: a[7],
        }
    }

    pub fn as_array(&self) -> [f64; 8] {
        [
            self.node_sel,
            self.node_score,
            self.track,
            self.division,
            self.parent,
            self.daughter,
            self.continuation,
            self.edge,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.as_array().iter().map(|v| v * v).sum()
    }

    /// Total order for deterministic tie-breaking (entrywise, first difference wins).
    pub fn lex_cmp(&self, other: &Self) -> std::cmp::Ordering {
        let a = self.as_array();
        let b = other.as_array();
        for i in 0..8 {
            let ord = a[i].total_cmp(&b[i]);
            if ord != std::cmp::Ordering::Equal {
                return ord;
            }
        }
        std::cmp::Ordering::Equal
    }
}

/// Sparse feature matrix `S` with one row per indicator and 8 columns; the
/// per-indicator selection costs are `S w`.
///
/// Column pattern (0-based): 0 = 1 on node rows; 1 = candidate score on node
/// rows; 2 = 1 on track rows; 3 = 1 on parent rows; 4/5/6 = parent/daughter/
/// continue state score on the matching state rows; 7 = edge cost on edge rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: Vec<Vec<(usize, f64)>>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub const N_COLS: usize = WeightVector::DIM;

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `S w`: the per-indicator linear cost vector.
    pub fn apply(&self, w: &WeightVector) -> Vec<f64> {
        let wa = w.as_array();
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(c, v)| v * wa[c]).sum())
            .collect()
    }

    /// `Sᵀ y`: feature counts of a selection, the gradient of `⟨Sw, y⟩` in `w`.
    pub fn transpose_apply(&self, y: &IndicatorAssignment) -> Result<[f64; 8], ModelError> {
        if y.len() != self.n_rows() {
            return Err(ModelError::DimensionMismatch(format!(
                "assignment has {} entries, matrix has {} rows",
                y.len(),
                self.n_rows()
            )));
        }
        let mut out = [0.0; 8];
        for i in y.ones() {
            for &(c, v) in &self.rows[i] {
                out[c] += v;
            }
        }
        Ok(out)
    }
}

/// Assembles the sparse feature matrix for a graph, rows in canonical
/// indicator order.
pub fn build_feature_matrix(graph: &CandidateGraph) -> FeatureMatrix {
    let layout = graph.layout();
    let mut rows = Vec::with_capacity(layout.len());
    // node rows: constant selection cost and candidate score
    for n in graph.nodes() {
        rows.push(vec![(0, 1.0), (1, n.score)]);
    }
    for _ in graph.nodes() {
        rows.push(vec![(2, 1.0)]);
    }
    // parent rows carry both the constant division cost and the parent score
    for n in graph.nodes() {
        rows.push(vec![(3, 1.0), (4, n.state_scores.parent)]);
    }
    for n in graph.nodes() {
        rows.push(vec![(5, n.state_scores.daughter)]);
    }
    for n in graph.nodes() {
        rows.push(vec![(6, n.state_scores.continuation)]);
    }
    for e in graph.edges() {
        rows.push(vec![(7, e.cost)]);
    }
    FeatureMatrix { rows }
}

/// `⟨Sw, y⟩`: the selection objective of an assignment.
pub fn objective_value(
    s: &FeatureMatrix,
    w: &WeightVector,
    y: &IndicatorAssignment,
) -> Result<f64, ModelError> {
    if y.len() != s.n_rows() {
        return Err(ModelError::DimensionMismatch(format!(
            "assignment has {} entries, matrix has {} rows",
            y.len(),
            s.n_rows()
        )));
    }
    if !w.is_finite() {
        return Err(ModelError::NonFinite("weight vector".into()));
    }
    let wa = w.as_array();
    let mut total = 0.0;
    for i in y.ones() {
        for &(c, v) in s.row(i) {
            total += v * wa[c];
        }
    }
    Ok(total)
}

/// Cell state labels of selected nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Parent,
    Daughter,
    Continuation,
}

/// A node of a solved or ground-truth lineage forest.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestNode {
    pub id: u64,
    pub frame: u32,
    pub position: Vec3,
    pub state: CellState,
    pub polar: bool,
}

/// A feasible lineage: a forest branching only forward in time, in-degree at
/// most 1, out-degree at most 2, with out-degree 2 only at parent-labeled
/// nodes. Also the shape of ground truth.
#[derive(Debug, Clone)]
pub struct LineageForest {
    nodes: Vec<ForestNode>,
    edges: Vec<(u64, u64)>,
    node_index: HashMap<u64, usize>,
    parent_of: Vec<Option<usize>>,
    children_of: Vec<Vec<usize>>,
    track_ids: Vec<u64>,
}

impl LineageForest {
    pub fn new(mut nodes: Vec<ForestNode>, mut edges: Vec<(u64, u64)>) -> Result<Self, ModelError> {
        nodes.sort_by_key(|n| (n.frame, n.id));
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if node_index.insert(n.id, i).is_some() {
                return Err(ModelError::DuplicateNodeId(n.id));
            }
        }
        edges.sort_unstable();
        let mut parent_of = vec![None; nodes.len()];
        let mut children_of = vec![Vec::new(); nodes.len()];
        for (j, &(a, b)) in edges.iter().enumerate() {
            if j > 0 && edges[j - 1] == (a, b) {
                return Err(ModelError::DuplicateEdge(a, b));
            }
            let &u = node_index.get(&a).ok_or(ModelError::DanglingEdge(a, b))?;
            let &v = node_index.get(&b).ok_or(ModelError::DanglingEdge(a, b))?;
            if nodes[v].frame != nodes[u].frame + 1 {
                return Err(ModelError::BadEdgeFrames {
                    edge: (a, b),
                    from: nodes[u].frame,
                    to: nodes[v].frame,
                });
            }
            if parent_of[v].is_some() {
                return Err(ModelError::InDegree {
                    id: b,
                    indeg: 2,
                });
            }
            parent_of[v] = Some(u);
            children_of[u].push(v);
        }
        for (u, ch) in children_of.iter().enumerate() {
            if ch.len() > 2 {
                return Err(ModelError::OutDegree {
                    id: nodes[u].id,
                    outdeg: ch.len(),
                });
            }
            if ch.len() == 2 && nodes[u].state != CellState::Parent {
                return Err(ModelError::DivisionWithoutParentLabel {
                    id: nodes[u].id,
                    state: nodes[u].state,
                });
            }
        }
        // Track ids: a node opens a new track when it has no parent or when its
        // parent divides; otherwise it continues the parent's track.
        let mut track_ids = vec![0u64; nodes.len()];
        let mut next_track = 1u64;
        for v in 0..nodes.len() {
            track_ids[v] = match parent_of[v] {
                Some(u) if children_of[u].len() == 1 => track_ids[u],
                _ => {
                    let t = next_track;
                    next_track += 1;
                    t
                }
            };
        }
        Ok(Self {
            nodes,
            edges,
            node_index,
            parent_of,
            children_of,
            track_ids,
        })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new()).expect("empty forest is valid")
    }

    pub fn nodes(&self) -> &[ForestNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(u64, u64)] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_idx(&self, id: u64) -> Option<usize> {
        self.node_index.get(&id).copied()
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent_of[v]
    }

    pub fn children(&self, u: usize) -> &[usize] {
        &self.children_of[u]
    }

    pub fn track_id(&self, v: usize) -> u64 {
        self.track_ids[v]
    }

    pub fn is_track_start(&self, v: usize) -> bool {
        self.parent_of[v].is_none()
    }

    /// Whether node `v` divides (has two children).
    pub fn is_division(&self, v: usize) -> bool {
        self.children_of[v].len() == 2
    }

    pub fn divisions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&v| self.is_division(v))
    }

    pub fn has_edge(&self, a: u64, b: u64) -> bool {
        self.edges.binary_search(&(a, b)).is_ok()
    }

    /// Nodes of one frame, as canonical indices.
    pub fn frame_nodes(&self, frame: u32) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.frame == frame)
            .map(|(i, _)| i)
    }

    pub fn frame_range(&self) -> Option<(u32, u32)> {
        let first = self.nodes.first()?.frame;
        let last = self.nodes.last()?.frame;
        Some((first, last))
    }

    /// Drops all polar-flagged nodes and their incident edges.
    pub fn without_polar(&self) -> LineageForest {
        let keep: Vec<ForestNode> = self
            .nodes
            .iter()
            .filter(|n| !n.polar)
            .cloned()
            .collect();
        let kept_ids: std::collections::HashSet<u64> = keep.iter().map(|n| n.id).collect();
        let edges = self
            .edges
            .iter()
            .filter(|(a, b)| kept_ids.contains(a) && kept_ids.contains(b))
            .copied()
            .collect();
        LineageForest::new(keep, edges).expect("removing nodes preserves forest invariants")
    }

    /// Structural equality ignoring node ids: same multiset of
    /// `(frame, position, state, polar)` nodes and the same edges between them.
    pub fn structurally_equal(&self, other: &LineageForest) -> bool {
        fn key(n: &ForestNode) -> (u32, [u64; 3], u8, bool) {
            // positions compared bit-exactly; the text formats round-trip floats
            (
                n.frame,
                [
                    n.position[0].to_bits(),
                    n.position[1].to_bits(),
                    n.position[2].to_bits(),
                ],
                n.state as u8,
                n.polar,
            )
        }
        if self.nodes.len() != other.nodes.len() || self.edges.len() != other.edges.len() {
            return false;
        }
        let mut a: Vec<_> = self.nodes.iter().map(key).collect();
        let mut b: Vec<_> = other.nodes.iter().map(key).collect();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return false;
        }
        let edge_keys = |f: &LineageForest| {
            let mut ks: Vec<_> = f
                .edges
                .iter()
                .map(|&(x, y)| {
                    let u = f.node_idx(x).unwrap();
                    let v = f.node_idx(y).unwrap();
                    (key(&f.nodes[u]), key(&f.nodes[v]))
                })
                .collect();
            ks.sort_unstable();
            ks
        };
        edge_keys(self) == edge_keys(other)
    }
}

/// Turns a feasible indicator assignment over `graph` back into a lineage
/// forest, taking state labels from the state blocks.
pub fn decode_assignment(
    graph: &CandidateGraph,
    y: &IndicatorAssignment,
) -> Result<LineageForest, ModelError> {
    let layout = graph.layout();
    if y.len() != layout.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "assignment has {} entries, graph needs {}",
            y.len(),
            layout.len()
        )));
    }
    let mut nodes = Vec::new();
    for (i, det) in graph.nodes().iter().enumerate() {
        let selected = y.get(layout.node(i));
        let states = [
            (CellState::Parent, y.get(layout.parent(i))),
            (CellState::Daughter, y.get(layout.daughter(i))),
            (CellState::Continuation, y.get(layout.continuation(i))),
        ];
        let set: Vec<CellState> = states.iter().filter(|(_, on)| *on).map(|(s, _)| *s).collect();
        if !selected {
            if !set.is_empty() {
                return Err(ModelError::DanglingIndicator {
                    index: layout.parent(i),
                });
            }
            if y.get(layout.track(i)) {
                return Err(ModelError::DanglingIndicator {
                    index: layout.track(i),
                });
            }
            continue;
        }
        if set.len() != 1 {
            return Err(ModelError::StateCount {
                id: det.id,
                n: set.len(),
            });
        }
        nodes.push(ForestNode {
            id: det.id,
            frame: det.frame,
            position: det.position,
            state: set[0],
            polar: false,
        });
    }
    let mut edges = Vec::new();
    for (j, e) in graph.edges().iter().enumerate() {
        if y.get(layout.edge(j)) {
            let (u, v) = graph.endpoints(j);
            if !y.get(layout.node(u)) || !y.get(layout.node(v)) {
                return Err(ModelError::DanglingIndicator {
                    index: layout.edge(j),
                });
            }
            edges.push((e.source, e.target));
        }
    }
    LineageForest::new(nodes, edges)
}

/// Encodes a lineage forest as indicators over a graph whose detections carry
/// the same ids. Track indicators follow the usual consistency rule: a
/// selected node starts a track exactly when it has no selected incoming edge.
pub fn encode_forest(
    graph: &CandidateGraph,
    forest: &LineageForest,
) -> Result<IndicatorAssignment, ModelError> {
    let layout = graph.layout();
    let mut y = IndicatorAssignment::zeros(layout.len());
    for n in forest.nodes() {
        let i = graph
            .node_idx(n.id)
            .ok_or(ModelError::DanglingEdge(n.id, n.id))?;
        y.set(layout.node(i), true);
        let state_idx = match n.state {
            CellState::Parent => layout.parent(i),
            CellState::Daughter => layout.daughter(i),
            CellState::Continuation => layout.continuation(i),
        };
        y.set(state_idx, true);
    }
    let mut has_in = vec![false; graph.node_count()];
    for &(a, b) in forest.edges() {
        let j = graph
            .edge_idx(a, b)
            .ok_or(ModelError::DanglingEdge(a, b))?;
        y.set(layout.edge(j), true);
        has_in[graph.endpoints(j).1] = true;
    }
    for n in forest.nodes() {
        let i = graph.node_idx(n.id).unwrap();
        if !has_in[i] {
            y.set(layout.track(i), true);
        }
    }
    Ok(y)
}
