//! Exact optimization of the lineage selection objective.
//!
//! The feasible set is described by linear constraints over the indicator
//! vector (see [`build_constraints`]):
//!
//! - (a) an edge needs both endpoints: `y_e <= y_u`, `y_e <= y_v`
//! - (b) at most one incoming edge per node
//! - (c) at most two outgoing edges per node
//! - (d) track starts: `y_track >= y_node - sum(in edges)`, `y_track <= y_node`
//! - (e) exactly one state per selected node: `y_par + y_dau + y_cont = y_node`
//! - (f) a selected edge forces matching parent/daughter labels:
//!   `y_par,u + y_e - y_dau,v <= 1` and `y_dau,v + y_e - y_par,u <= 1`
//! - (g) division forces the parent label: `sum(out edges) - 1 <= y_par,u`
//!
//! [`solve`] minimizes `<Sw, y>` exactly with depth-first branch and bound:
//! unit propagation over the rules above, plus a per-node group relaxation for
//! lower bounds. A first pass establishes the optimal value, a second pass
//! walks the tree in canonical order (zeros first) and returns the first
//! assignment attaining it, which is the lexicographically smallest optimum.
//! [`brute_force_solve`] is the exhaustive oracle for small instances, and
//! [`solve_blockwise`] stitches consecutive temporal windows.

use std::collections::VecDeque;
use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::model::{
    decode_assignment, CandidateGraph, FeatureMatrix, IndicatorAssignment, IndicatorBlock,
    IndicatorLayout, ModelError, WeightVector,
};

/// Two objective values within this of each other count as tied.
pub const OBJECTIVE_EPS: f64 = 1e-9;

/// Width of the band around a pruning threshold inside which the incremental
/// lower bound is re-derived exactly before deciding.
const BOUND_BAND: f64 = 1e-6;

const BRUTE_FORCE_MAX_VARS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

/// One linear constraint over indicator entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub bound: f64,
}

impl LinearConstraint {
    pub fn holds(&self, y: &IndicatorAssignment) -> bool {
        let sum: f64 = self
            .terms
            .iter()
            .map(|&(i, c)| if y.get(i) { c } else { 0.0 })
            .sum();
        match self.relation {
            Relation::Le => sum <= self.bound + OBJECTIVE_EPS,
            Relation::Eq => (sum - self.bound).abs() <= OBJECTIVE_EPS,
            Relation::Ge => sum >= self.bound - OBJECTIVE_EPS,
        }
    }
}

impl fmt::Display for LinearConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, &(i, c)) in self.terms.iter().enumerate() {
            if k == 0 {
                if c < 0.0 {
                    write!(f, "-")?;
                }
            } else if c < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mag = c.abs();
            if (mag - 1.0).abs() > 1e-12 {
                write!(f, "{mag}*")?;
            }
            write!(f, "y[{i}]")?;
        }
        write!(f, " {} {}", self.relation, self.bound)
    }
}

/// A set of linear constraints over a fixed number of indicators.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSystem {
    n_vars: usize,
    constraints: Vec<LinearConstraint>,
}

impl ConstraintSystem {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            constraints: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn push(&mut self, terms: Vec<(usize, f64)>, relation: Relation, bound: f64) {
        debug_assert!(terms.iter().all(|&(i, _)| i < self.n_vars));
        self.constraints.push(LinearConstraint {
            terms,
            relation,
            bound,
        });
    }

    /// Index of the first violated constraint, if any.
    pub fn first_violation(&self, y: &IndicatorAssignment) -> Option<usize> {
        assert_eq!(y.len(), self.n_vars, "assignment length mismatch");
        self.constraints.iter().position(|c| !c.holds(y))
    }

    pub fn is_feasible(&self, y: &IndicatorAssignment) -> bool {
        self.first_violation(y).is_none()
    }
}

/// Emits the full constraint system (a)-(g) for a graph, in canonical
/// indicator order.
pub fn build_constraints(graph: &CandidateGraph) -> ConstraintSystem {
    let lay = graph.layout();
    let mut sys = ConstraintSystem::new(lay.len());
    // (a) edges need both endpoints
    for j in 0..graph.edge_count() {
        let (u, v) = graph.endpoints(j);
        sys.push(
            vec![(lay.edge(j), 1.0), (lay.node(u), -1.0)],
            Relation::Le,
            0.0,
        );
        sys.push(
            vec![(lay.edge(j), 1.0), (lay.node(v), -1.0)],
            Relation::Le,
            0.0,
        );
    }
    // (b) at most one incoming edge
    for v in 0..graph.node_count() {
        if graph.in_edges(v).len() > 1 {
            let terms = graph.in_edges(v).iter().map(|&j| (lay.edge(j), 1.0)).collect();
            sys.push(terms, Relation::Le, 1.0);
        }
    }
    // (c) at most two outgoing edges
    for u in 0..graph.node_count() {
        if graph.out_edges(u).len() > 2 {
            let terms = graph.out_edges(u).iter().map(|&j| (lay.edge(j), 1.0)).collect();
            sys.push(terms, Relation::Le, 2.0);
        }
    }
    // (d) track starts
    for v in 0..graph.node_count() {
        let mut terms = vec![(lay.track(v), 1.0), (lay.node(v), -1.0)];
        terms.extend(graph.in_edges(v).iter().map(|&j| (lay.edge(j), 1.0)));
        sys.push(terms, Relation::Ge, 0.0);
        sys.push(
            vec![(lay.track(v), 1.0), (lay.node(v), -1.0)],
            Relation::Le,
            0.0,
        );
    }
    // (e) exactly one state per selected node
    for v in 0..graph.node_count() {
        sys.push(
            vec![
                (lay.parent(v), 1.0),
                (lay.daughter(v), 1.0),
                (lay.continuation(v), 1.0),
                (lay.node(v), -1.0),
            ],
            Relation::Eq,
            0.0,
        );
    }
    // (f) selected edges tie parent and daughter labels together
    for j in 0..graph.edge_count() {
        let (u, v) = graph.endpoints(j);
        sys.push(
            vec![
                (lay.parent(u), 1.0),
                (lay.edge(j), 1.0),
                (lay.daughter(v), -1.0),
            ],
            Relation::Le,
            1.0,
        );
        sys.push(
            vec![
                (lay.daughter(v), 1.0),
                (lay.edge(j), 1.0),
                (lay.parent(u), -1.0),
            ],
            Relation::Le,
            1.0,
        );
    }
    // (g) division forces the parent label
    for u in 0..graph.node_count() {
        if graph.out_edges(u).len() >= 2 {
            let mut terms: Vec<(usize, f64)> =
                graph.out_edges(u).iter().map(|&j| (lay.edge(j), 1.0)).collect();
            terms.push((lay.parent(u), -1.0));
            sys.push(terms, Relation::Le, 1.0);
        }
    }
    sys
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    TimedOut,
}

/// Result of a solve call.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub y: IndicatorAssignment,
    pub objective: f64,
    pub status: SolveStatus,
    pub node_count: usize,
    pub edge_count: usize,
    /// Total cost the overlap pins forced onto later windows during
    /// block-wise solving; 0 for a global solve and for clean stitches,
    /// positive when a window would have chosen differently without the pins.
    pub stitch_gap: f64,
    pub wall: Duration,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveLimits {
    /// Abort with a timeout error (carrying the incumbent) after this long.
    pub timeout_seconds: Option<f64>,
}

impl SolveLimits {
    pub fn none() -> Self {
        Self::default()
    }

    fn deadline(&self, from: Instant) -> Option<Instant> {
        self.timeout_seconds
            .map(|s| from + Duration::from_secs_f64(s.max(0.0)))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("solver timed out after {:?} with incumbent objective {}", .partial.wall, .partial.objective)]
    Timeout { partial: Box<SolveReport> },
    #[error("{n} indicators exceed the brute-force bound of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("block-wise solving needs block_len > overlap >= 1, got block_len {block_len}, overlap {overlap}")]
    BadBlocks { block_len: u32, overlap: u32 },
    #[error("stitched assignment violates constraint {index}: {constraint}")]
    StitchInfeasible { index: usize, constraint: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Minimizes `<Sw, y>` over the constraint system; the returned assignment is
/// the lexicographically smallest optimum in canonical indicator order.
pub fn solve(
    graph: &CandidateGraph,
    s: &FeatureMatrix,
    w: &WeightVector,
    constraints: &ConstraintSystem,
    limits: SolveLimits,
) -> Result<SolveReport, SolveError> {
    if !w.is_finite() {
        return Err(ModelError::NonFinite("weight vector".into()).into());
    }
    let costs = s.apply(w);
    let report = solve_with_costs(graph, &costs, constraints, limits)?;
    // any feasible assignment under (a)-(g) decodes to a valid forest
    decode_assignment(graph, &report.y)?;
    Ok(report)
}

/// Minimizes an arbitrary per-indicator cost vector over the constraint
/// system, with the same tie-breaking as [`solve`]. This is the entry point
/// for loss-augmented inference, where costs are not of the form `Sw`.
pub fn solve_with_costs(
    graph: &CandidateGraph,
    costs: &[f64],
    constraints: &ConstraintSystem,
    limits: SolveLimits,
) -> Result<SolveReport, SolveError> {
    let fixed = vec![-1i8; graph.layout().len()];
    solve_restricted(graph, costs, constraints, limits.deadline(Instant::now()), &fixed)
}

fn check_dims(
    graph: &CandidateGraph,
    costs: &[f64],
    constraints: &ConstraintSystem,
) -> Result<(), SolveError> {
    let n = graph.layout().len();
    if costs.len() != n || constraints.n_vars() != n {
        return Err(ModelError::DimensionMismatch(format!(
            "graph has {n} indicators, costs {}, constraint system {}",
            costs.len(),
            constraints.n_vars()
        ))
        .into());
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(ModelError::NonFinite("cost vector".into()).into());
    }
    Ok(())
}

fn assignment_from_vals(vals: &[i8]) -> IndicatorAssignment {
    IndicatorAssignment::from_bits(vals.iter().map(|&v| v == 1).collect())
}

fn canonical_objective(costs: &[f64], vals: &[i8]) -> f64 {
    vals.iter()
        .enumerate()
        .filter(|&(_, &v)| v == 1)
        .map(|(i, _)| costs[i])
        .sum()
}

/// Core solver. `fixed` pins indicators to 0/1 (-1 = free); pinned values come
/// from block-wise stitching. Tie-breaking is lexicographic over the free
/// indicators given the pinned ones.
fn solve_restricted(
    graph: &CandidateGraph,
    costs: &[f64],
    constraints: &ConstraintSystem,
    deadline: Option<Instant>,
    fixed: &[i8],
) -> Result<SolveReport, SolveError> {
    let t0 = Instant::now();
    check_dims(graph, costs, constraints)?;
    let n = graph.layout().len();
    let report = |y: IndicatorAssignment, objective: f64, status: SolveStatus| SolveReport {
        y,
        objective,
        status,
        node_count: graph.node_count(),
        edge_count: graph.edge_count(),
        stitch_gap: 0.0,
        wall: t0.elapsed(),
    };
    if n == 0 {
        return Ok(report(IndicatorAssignment::zeros(0), 0.0, SolveStatus::Optimal));
    }
    // The all-zeros completion of the pinned values is feasible for every
    // system produced by build_constraints (and for every stitching step).
    let zero_vals: Vec<i8> = fixed.iter().map(|&v| if v == 1 { 1 } else { 0 }).collect();
    let zeros = assignment_from_vals(&zero_vals);
    assert!(
        constraints.is_feasible(&zeros),
        "all-zeros completion must be feasible"
    );
    let zero_obj = canonical_objective(costs, &zero_vals);
    if deadline.is_some_and(|d| Instant::now() >= d) {
        // an already-expired budget still yields the feasible zeros completion
        return Err(SolveError::Timeout {
            partial: Box::new(report(zeros, zero_obj, SolveStatus::TimedOut)),
        });
    }

    // pass 1: establish the optimal value
    let mut searcher = Searcher::new(graph, costs);
    if searcher.pin(fixed).is_err() {
        // cannot happen while the zeros completion is feasible; be defensive
        return Ok(report(zeros, zero_obj, SolveStatus::Infeasible));
    }
    let outcome = searcher.search_value(zero_obj, zero_vals.clone(), deadline);
    let (zstar, best_vals) = match outcome {
        SearchOutcome::Done(obj, vals) => (obj, vals),
        SearchOutcome::TimedOut(obj, vals) => {
            return Err(SolveError::Timeout {
                partial: Box::new(report(assignment_from_vals(&vals), obj, SolveStatus::TimedOut)),
            });
        }
    };
    log::debug!(
        "pass 1: objective {zstar} after {} expansions",
        searcher.expansions
    );
    if zstar >= zero_obj - OBJECTIVE_EPS {
        // nothing beats the zeros completion, which is also lex-smallest
        return Ok(report(zeros, zero_obj, SolveStatus::Optimal));
    }

    // pass 2: walk zeros-first to the lexicographically smallest optimum
    let mut searcher = Searcher::new(graph, costs);
    searcher
        .pin(fixed)
        .expect("pinned values were consistent in pass 1");
    match searcher.search_lex(zstar, deadline) {
        SearchOutcome::Done(obj, vals) => {
            log::debug!(
                "pass 2: lexicographic optimum after {} expansions",
                searcher.expansions
            );
            Ok(report(assignment_from_vals(&vals), obj, SolveStatus::Optimal))
        }
        SearchOutcome::TimedOut(..) => Err(SolveError::Timeout {
            partial: Box::new(report(
                assignment_from_vals(&best_vals),
                zstar,
                SolveStatus::TimedOut,
            )),
        }),
    }
}

/// Exhaustive oracle: enumerates every binary assignment (lexicographically
/// ascending), filters by the constraints and keeps the first minimum.
pub fn brute_force_solve(
    graph: &CandidateGraph,
    s: &FeatureMatrix,
    w: &WeightVector,
    constraints: &ConstraintSystem,
) -> Result<SolveReport, SolveError> {
    let costs = s.apply(w);
    brute_force_with_costs(graph, &costs, constraints)
}

pub fn brute_force_with_costs(
    graph: &CandidateGraph,
    costs: &[f64],
    constraints: &ConstraintSystem,
) -> Result<SolveReport, SolveError> {
    let t0 = Instant::now();
    check_dims(graph, costs, constraints)?;
    let n = graph.layout().len();
    if n > BRUTE_FORCE_MAX_VARS {
        return Err(SolveError::TooLarge {
            n,
            max: BRUTE_FORCE_MAX_VARS,
        });
    }
    // var i lives at bit n-1-i so that ascending masks enumerate assignments
    // in lexicographic order
    let bit = |i: usize| 1u32 << (n - 1 - i);
    struct MaskConstraint {
        pos: u32,
        neg: u32,
        relation: Relation,
        bound: f64,
        general: Option<(Vec<(usize, f64)>, Relation, f64)>,
    }
    let masked: Vec<MaskConstraint> = constraints
        .constraints()
        .iter()
        .map(|c| {
            let mut pos = 0u32;
            let mut neg = 0u32;
            let mut simple = true;
            for &(i, coeff) in &c.terms {
                if coeff == 1.0 {
                    pos |= bit(i);
                } else if coeff == -1.0 {
                    neg |= bit(i);
                } else {
                    simple = false;
                }
            }
            MaskConstraint {
                pos,
                neg,
                relation: c.relation,
                bound: c.bound,
                general: (!simple).then(|| (c.terms.clone(), c.relation, c.bound)),
            }
        })
        .collect();
    let feasible = |m: u32| {
        masked.iter().all(|c| match &c.general {
            None => {
                let sum = (m & c.pos).count_ones() as f64 - (m & c.neg).count_ones() as f64;
                match c.relation {
                    Relation::Le => sum <= c.bound + OBJECTIVE_EPS,
                    Relation::Eq => (sum - c.bound).abs() <= OBJECTIVE_EPS,
                    Relation::Ge => sum >= c.bound - OBJECTIVE_EPS,
                }
            }
            Some((terms, rel, bound)) => {
                let sum: f64 = terms
                    .iter()
                    .map(|&(i, co)| if m & bit(i) != 0 { co } else { 0.0 })
                    .sum();
                match rel {
                    Relation::Le => sum <= bound + OBJECTIVE_EPS,
                    Relation::Eq => (sum - bound).abs() <= OBJECTIVE_EPS,
                    Relation::Ge => sum >= bound - OBJECTIVE_EPS,
                }
            }
        })
    };
    let mut best: Option<(f64, u32)> = None;
    for m in 0..(1u64 << n) as u64 {
        let m = m as u32;
        if !feasible(m) {
            continue;
        }
        let mut obj = 0.0;
        for i in 0..n {
            if m & bit(i) != 0 {
                obj += costs[i];
            }
        }
        match best {
            Some((b, _)) if obj >= b - OBJECTIVE_EPS => {}
            _ => best = Some((obj, m)),
        }
    }
    let report = |y, objective, status| SolveReport {
        stitch_gap: 0.0,
        y,
        objective,
        status,
        node_count: graph.node_count(),
        edge_count: graph.edge_count(),
        wall: t0.elapsed(),
    };
    match best {
        Some((obj, m)) => {
            let bits = (0..n).map(|i| m & bit(i) != 0).collect();
            Ok(report(
                IndicatorAssignment::from_bits(bits),
                obj,
                SolveStatus::Optimal,
            ))
        }
        None => Ok(report(
            IndicatorAssignment::zeros(n),
            0.0,
            SolveStatus::Infeasible,
        )),
    }
}

/// Solves consecutive temporal windows of `block_len` frames, advancing by
/// `block_len - overlap`; indicators decided by earlier windows are pinned
/// while later windows are solved, and indicators beyond the current window
/// are held at zero. The stitched assignment is validated against the full
/// constraint system.
pub fn solve_blockwise(
    graph: &CandidateGraph,
    s: &FeatureMatrix,
    w: &WeightVector,
    constraints: &ConstraintSystem,
    block_len: u32,
    overlap: u32,
    limits: SolveLimits,
) -> Result<SolveReport, SolveError> {
    if overlap == 0 || block_len <= overlap {
        return Err(SolveError::BadBlocks { block_len, overlap });
    }
    if !w.is_finite() {
        return Err(ModelError::NonFinite("weight vector".into()).into());
    }
    let t0 = Instant::now();
    let costs = s.apply(w);
    check_dims(graph, &costs, constraints)?;
    let lay = graph.layout();
    let Some((first, last)) = graph.frame_range() else {
        return Ok(SolveReport {
            y: IndicatorAssignment::zeros(0),
            objective: 0.0,
            status: SolveStatus::Optimal,
            node_count: 0,
            edge_count: 0,
            stitch_gap: 0.0,
            wall: t0.elapsed(),
        });
    };
    // the frame an indicator is decided in: a node's own frame, an edge's
    // target frame
    let frame_of: Vec<u32> = (0..lay.len())
        .map(|x| match lay.block_of(x) {
            (IndicatorBlock::Edge, j) => graph.nodes()[graph.endpoints(j).1].frame,
            (_, i) => graph.nodes()[i].frame,
        })
        .collect();
    let deadline = limits.deadline(t0);
    let mut decided = vec![-1i8; lay.len()];
    let mut start = first;
    let mut stitch_gap = 0.0;
    loop {
        let wend = start.saturating_add(block_len);
        let init: Vec<i8> = (0..lay.len())
            .map(|x| {
                if decided[x] >= 0 {
                    decided[x]
                } else if frame_of[x] >= wend {
                    0
                } else {
                    -1
                }
            })
            .collect();
        let rep = solve_restricted(graph, &costs, constraints, deadline, &init)?;
        if start > first {
            // re-solve with the overlap pins released; any objective drop is
            // cost the stitching forced onto this window
            let released: Vec<i8> = (0..lay.len())
                .map(|x| {
                    let f = frame_of[x];
                    if decided[x] >= 0 && f >= start && f < start.saturating_add(overlap) {
                        -1
                    } else {
                        init[x]
                    }
                })
                .collect();
            let free = solve_restricted(graph, &costs, constraints, deadline, &released)?;
            stitch_gap += (rep.objective - free.objective).max(0.0);
        }
        for x in 0..lay.len() {
            if decided[x] < 0 && frame_of[x] < wend {
                decided[x] = rep.y.get(x) as i8;
            }
        }
        if wend > last {
            break;
        }
        start += block_len - overlap;
    }
    let y = assignment_from_vals(&decided);
    if let Some(index) = constraints.first_violation(&y) {
        return Err(SolveError::StitchInfeasible {
            index,
            constraint: constraints.constraints()[index].to_string(),
        });
    }
    decode_assignment(graph, &y)?;
    let objective = canonical_objective(&costs, &decided);
    Ok(SolveReport {
        y,
        objective,
        status: SolveStatus::Optimal,
        node_count: graph.node_count(),
        edge_count: graph.edge_count(),
        stitch_gap,
        wall: t0.elapsed(),
    })
}

// ---------------------------------------------------------------------------
// branch-and-bound search

enum SearchOutcome<T> {
    Done(f64, T),
    TimedOut(f64, T),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum LinkChoice {
    None,
    TrackStart,
    Edge(usize),
}

/// Cheapest locally-feasible configuration of one node group (the node, its
/// track and state indicators, and its incoming edges).
#[derive(Clone, Copy)]
struct GroupPattern {
    select: bool,
    state: usize,
    link: LinkChoice,
    track_on: bool,
}

const NO_STATE: usize = usize::MAX;

/// Trail entries with this variable id only restore a group bound; they carry
/// no assignment of their own.
const BOUND_ONLY: u32 = u32::MAX;

struct Frame {
    var: u32,
    mark: u32,
    values: [bool; 2],
    tried: u8,
}

struct TrailEntry {
    var: u32,
    group: u32,
    old_min: f64,
}

struct Searcher<'a> {
    graph: &'a CandidateGraph,
    layout: IndicatorLayout,
    costs: &'a [f64],
    val: Vec<i8>,
    trail: Vec<TrailEntry>,
    queue: VecDeque<u32>,
    in_zero: Vec<u32>,
    in_one: Vec<u32>,
    out_one: Vec<u32>,
    state_zero: Vec<u32>,
    state_one: Vec<u32>,
    group_min: Vec<f64>,
    bound_finite: f64,
    inf_groups: u32,
    expansions: u64,
}

impl<'a> Searcher<'a> {
    fn new(graph: &'a CandidateGraph, costs: &'a [f64]) -> Self {
        let layout = graph.layout();
        let nn = graph.node_count();
        let mut s = Self {
            graph,
            layout,
            costs,
            val: vec![-1; layout.len()],
            trail: Vec::new(),
            queue: VecDeque::new(),
            in_zero: vec![0; nn],
            in_one: vec![0; nn],
            out_one: vec![0; nn],
            state_zero: vec![0; nn],
            state_one: vec![0; nn],
            group_min: vec![0.0; nn],
            bound_finite: 0.0,
            inf_groups: 0,
            expansions: 0,
        };
        for v in 0..nn {
            let (min, _) = s.eval_group(v);
            s.group_min[v] = min;
            if min.is_finite() {
                s.bound_finite += min;
            } else {
                s.inf_groups += 1;
            }
        }
        s
    }

    /// Applies pinned values and propagates; Err on contradiction.
    fn pin(&mut self, fixed: &[i8]) -> Result<(), ()> {
        for (x, &v) in fixed.iter().enumerate() {
            if v >= 0 {
                self.assign(x, v == 1)?;
            }
        }
        self.propagate()
    }

    fn group_of(&self, x: usize) -> usize {
        match self.layout.block_of(x) {
            (IndicatorBlock::Edge, j) => self.graph.endpoints(j).1,
            (_, i) => i,
        }
    }

    fn assign(&mut self, x: usize, b: bool) -> Result<(), ()> {
        match self.val[x] {
            -1 => {}
            v => return if (v == 1) == b { Ok(()) } else { Err(()) },
        }
        self.val[x] = b as i8;
        match self.layout.block_of(x) {
            (IndicatorBlock::Edge, j) => {
                let (u, v) = self.graph.endpoints(j);
                if b {
                    self.out_one[u] += 1;
                    self.in_one[v] += 1;
                } else {
                    self.in_zero[v] += 1;
                }
            }
            (IndicatorBlock::Parent, i)
            | (IndicatorBlock::Daughter, i)
            | (IndicatorBlock::Continuation, i) => {
                if b {
                    self.state_one[i] += 1;
                } else {
                    self.state_zero[i] += 1;
                }
            }
            _ => {}
        }
        let g = self.group_of(x);
        let old = self.group_min[g];
        let (new, _) = self.eval_group(g);
        if old.is_finite() {
            self.bound_finite -= old;
        } else {
            self.inf_groups -= 1;
        }
        if new.is_finite() {
            self.bound_finite += new;
        } else {
            self.inf_groups += 1;
        }
        self.group_min[g] = new;
        self.trail.push(TrailEntry {
            var: x as u32,
            group: g as u32,
            old_min: old,
        });
        self.queue.push_back(x as u32);
        if let (IndicatorBlock::Parent, i) = self.layout.block_of(x) {
            // deciding a parent indicator narrows the state options of every
            // group reachable over an out-edge, so their bounds go stale low
            let gr = self.graph;
            for k in 0..gr.out_edges(i).len() {
                let j = gr.out_edges(i)[k];
                let (_, w) = gr.endpoints(j);
                self.refresh_group(w);
            }
        }
        Ok(())
    }

    /// Recomputes one group bound in place, recording the old value on the
    /// trail so backtracking can restore it.
    fn refresh_group(&mut self, g: usize) {
        let old = self.group_min[g];
        let (new, _) = self.eval_group(g);
        if new == old {
            return;
        }
        if old.is_finite() {
            self.bound_finite -= old;
        } else {
            self.inf_groups -= 1;
        }
        if new.is_finite() {
            self.bound_finite += new;
        } else {
            self.inf_groups += 1;
        }
        self.group_min[g] = new;
        self.trail.push(TrailEntry {
            var: BOUND_ONLY,
            group: g as u32,
            old_min: old,
        });
    }

    fn undo_to(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let e = self.trail.pop().unwrap();
            if e.var == BOUND_ONLY {
                self.restore_group(e.group as usize, e.old_min);
                continue;
            }
            let x = e.var as usize;
            let b = self.val[x] == 1;
            match self.layout.block_of(x) {
                (IndicatorBlock::Edge, j) => {
                    let (u, v) = self.graph.endpoints(j);
                    if b {
                        self.out_one[u] -= 1;
                        self.in_one[v] -= 1;
                    } else {
                        self.in_zero[v] -= 1;
                    }
                }
                (IndicatorBlock::Parent, i)
                | (IndicatorBlock::Daughter, i)
                | (IndicatorBlock::Continuation, i) => {
                    if b {
                        self.state_one[i] -= 1;
                    } else {
                        self.state_zero[i] -= 1;
                    }
                }
                _ => {}
            }
            self.val[x] = -1;
            self.restore_group(e.group as usize, e.old_min);
        }
        self.queue.clear();
    }

    fn restore_group(&mut self, g: usize, old_min: f64) {
        let cur = self.group_min[g];
        if cur.is_finite() {
            self.bound_finite -= cur;
        } else {
            self.inf_groups -= 1;
        }
        if old_min.is_finite() {
            self.bound_finite += old_min;
        } else {
            self.inf_groups += 1;
        }
        self.group_min[g] = old_min;
    }

    fn propagate(&mut self) -> Result<(), ()> {
        while let Some(x) = self.queue.pop_front() {
            if self.apply_rules(x as usize).is_err() {
                self.queue.clear();
                return Err(());
            }
        }
        Ok(())
    }

    fn apply_rules(&mut self, x: usize) -> Result<(), ()> {
        let g = self.graph;
        let lay = self.layout;
        let b = self.val[x] == 1;
        match lay.block_of(x) {
            (IndicatorBlock::Node, i) => {
                if b {
                    self.check_states(i)?;
                    self.check_track(i)?;
                } else {
                    self.assign(lay.track(i), false)?;
                    self.assign(lay.parent(i), false)?;
                    self.assign(lay.daughter(i), false)?;
                    self.assign(lay.continuation(i), false)?;
                    for k in 0..g.in_edges(i).len() {
                        let j = g.in_edges(i)[k];
                        self.assign(lay.edge(j), false)?;
                    }
                    for k in 0..g.out_edges(i).len() {
                        let j = g.out_edges(i)[k];
                        self.assign(lay.edge(j), false)?;
                    }
                }
            }
            (IndicatorBlock::Track, i) => {
                if b {
                    self.assign(lay.node(i), true)?;
                } else {
                    self.check_track(i)?;
                }
            }
            (IndicatorBlock::Parent, i) => {
                if b {
                    self.assign(lay.node(i), true)?;
                }
                self.check_states(i)?;
                self.check_out(i)?;
                for k in 0..g.out_edges(i).len() {
                    let j = g.out_edges(i)[k];
                    let (_, v) = g.endpoints(j);
                    match self.val[lay.edge(j)] {
                        1 => self.assign(lay.daughter(v), b)?,
                        -1 => {
                            let dv = self.val[lay.daughter(v)];
                            if dv != -1 && (dv == 1) != b {
                                self.assign(lay.edge(j), false)?;
                            }
                        }
                        _ => {}
                    }
                }
            }
            (IndicatorBlock::Daughter, i) => {
                if b {
                    self.assign(lay.node(i), true)?;
                }
                self.check_states(i)?;
                for k in 0..g.in_edges(i).len() {
                    let j = g.in_edges(i)[k];
                    let (u, _) = g.endpoints(j);
                    match self.val[lay.edge(j)] {
                        1 => self.assign(lay.parent(u), b)?,
                        -1 => {
                            let pu = self.val[lay.parent(u)];
                            if pu != -1 && (pu == 1) != b {
                                self.assign(lay.edge(j), false)?;
                            }
                        }
                        _ => {}
                    }
                }
            }
            (IndicatorBlock::Continuation, i) => {
                if b {
                    self.assign(lay.node(i), true)?;
                }
                self.check_states(i)?;
            }
            (IndicatorBlock::Edge, j) => {
                let (u, v) = g.endpoints(j);
                if b {
                    self.assign(lay.node(u), true)?;
                    self.assign(lay.node(v), true)?;
                    for k in 0..g.in_edges(v).len() {
                        let j2 = g.in_edges(v)[k];
                        if j2 != j {
                            self.assign(lay.edge(j2), false)?;
                        }
                    }
                    self.check_out(u)?;
                    match self.val[lay.parent(u)] {
                        1 => self.assign(lay.daughter(v), true)?,
                        0 => self.assign(lay.daughter(v), false)?,
                        _ => {}
                    }
                    match self.val[lay.daughter(v)] {
                        1 => self.assign(lay.parent(u), true)?,
                        0 => self.assign(lay.parent(u), false)?,
                        _ => {}
                    }
                }
                self.check_track(v)?;
            }
        }
        Ok(())
    }

    /// State exclusivity (e): a selected node carries exactly one state.
    fn check_states(&mut self, i: usize) -> Result<(), ()> {
        let lay = self.layout;
        let states = [lay.parent(i), lay.daughter(i), lay.continuation(i)];
        if self.state_one[i] >= 2 {
            return Err(());
        }
        match self.val[lay.node(i)] {
            1 => {
                if self.state_one[i] == 1 {
                    for &s in &states {
                        if self.val[s] == -1 {
                            self.assign(s, false)?;
                        }
                    }
                } else if self.state_zero[i] == 3 {
                    return Err(());
                } else if self.state_zero[i] == 2 {
                    for &s in &states {
                        if self.val[s] == -1 {
                            self.assign(s, true)?;
                        }
                    }
                }
            }
            -1 => {
                if self.state_zero[i] == 3 {
                    self.assign(lay.node(i), false)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Track-start consistency (d): a selected node with no selected incoming
    /// edge starts a track; a selected node denied a track start needs one.
    fn check_track(&mut self, v: usize) -> Result<(), ()> {
        let lay = self.layout;
        if self.val[lay.node(v)] != 1 {
            return Ok(());
        }
        let g = self.graph;
        let deg = g.in_edges(v).len() as u32;
        let unassigned = deg - self.in_zero[v] - self.in_one[v];
        if self.in_one[v] == 0 && unassigned == 0 {
            self.assign(lay.track(v), true)?;
        }
        if self.val[lay.track(v)] == 0 && self.in_one[v] == 0 && unassigned == 1 {
            for k in 0..g.in_edges(v).len() {
                let j = g.in_edges(v)[k];
                if self.val[lay.edge(j)] == -1 {
                    self.assign(lay.edge(j), true)?;
                    break;
                }
            }
        }
        Ok(())
    }

    /// Branching caps (c) and (g): two selected out-edges force the parent
    /// label and exclude further out-edges; a non-parent allows only one.
    fn check_out(&mut self, u: usize) -> Result<(), ()> {
        let lay = self.layout;
        let g = self.graph;
        if self.out_one[u] > 2 {
            return Err(());
        }
        if self.out_one[u] == 2 {
            self.assign(lay.parent(u), true)?;
            for k in 0..g.out_edges(u).len() {
                let j = g.out_edges(u)[k];
                if self.val[lay.edge(j)] == -1 {
                    self.assign(lay.edge(j), false)?;
                }
            }
        } else if self.val[lay.parent(u)] == 0 && self.out_one[u] == 1 {
            for k in 0..g.out_edges(u).len() {
                let j = g.out_edges(u)[k];
                if self.val[lay.edge(j)] == -1 {
                    self.assign(lay.edge(j), false)?;
                }
            }
        }
        Ok(())
    }

    /// Minimum cost of node `v`'s group (node/track/state indicators plus its
    /// incoming edges) over configurations consistent with current values,
    /// relaxing cross-group coupling apart from one local echo of the
    /// division pairing rule: linking over an edge whose source has a decided
    /// parent indicator pins this node's state (daughter when the source is a
    /// parent, anything but daughter when it is not). Summed over groups this
    /// lower-bounds the full objective: every cost entry belongs to exactly
    /// one group, and each group minimum only drops constraints.
    fn eval_group(&self, v: usize) -> (f64, GroupPattern) {
        let lay = self.layout;
        let empty = GroupPattern {
            select: false,
            state: NO_STATE,
            link: LinkChoice::None,
            track_on: false,
        };
        let nv = self.val[lay.node(v)];
        let mut best = f64::INFINITY;
        let mut pat = empty;
        if nv != 1 {
            best = 0.0;
        }
        if nv != 0 {
            let svars = [lay.parent(v), lay.daughter(v), lay.continuation(v)];
            let mut scost = [f64::INFINITY; 3];
            if let Some(k) = (0..3).find(|&k| self.val[svars[k]] == 1) {
                scost[k] = self.costs[svars[k]];
            } else {
                for k in 0..3 {
                    if self.val[svars[k]] == -1 {
                        scost[k] = self.costs[svars[k]];
                    }
                }
            }
            let mut s_any = (f64::INFINITY, NO_STATE);
            for k in 0..3 {
                if scost[k] < s_any.0 {
                    s_any = (scost[k], k);
                }
            }
            let s_non_dau = if scost[0] <= scost[2] {
                (scost[0], 0)
            } else {
                (scost[2], 2)
            };
            let state_for_source = |u: usize| match self.val[lay.parent(u)] {
                1 => (scost[1], 1),
                0 => s_non_dau,
                _ => s_any,
            };
            let tv = self.val[lay.track(v)];
            let ct = self.costs[lay.track(v)];
            let track_add = match tv {
                1 => ct,
                0 => 0.0,
                _ => ct.min(0.0),
            };
            let track_on_with_edge = match tv {
                1 => true,
                0 => false,
                _ => ct < 0.0,
            };
            // joint minimum over (state, link) pairs
            let mut joint = f64::INFINITY;
            let mut state_k = NO_STATE;
            let mut link = LinkChoice::None;
            let mut track_on = false;
            let fixed_in = self
                .graph
                .in_edges(v)
                .iter()
                .copied()
                .find(|&j| self.val[lay.edge(j)] == 1);
            if let Some(j) = fixed_in {
                let (u, _) = self.graph.endpoints(j);
                let (sc, sk) = state_for_source(u);
                joint = self.costs[lay.edge(j)] + track_add + sc;
                state_k = sk;
                link = LinkChoice::Edge(j);
                track_on = track_on_with_edge;
            } else {
                if tv != 0 {
                    joint = ct + s_any.0;
                    state_k = s_any.1;
                    link = LinkChoice::TrackStart;
                    track_on = true;
                }
                for &j in self.graph.in_edges(v) {
                    if self.val[lay.edge(j)] != -1 {
                        continue;
                    }
                    let (u, _) = self.graph.endpoints(j);
                    let (sc, sk) = state_for_source(u);
                    let c = self.costs[lay.edge(j)] + track_add + sc;
                    if c < joint {
                        joint = c;
                        state_k = sk;
                        link = LinkChoice::Edge(j);
                        track_on = track_on_with_edge;
                    }
                }
            }
            let p1 = self.costs[lay.node(v)] + joint;
            if p1 < best {
                best = p1;
                pat = GroupPattern {
                    select: true,
                    state: state_k,
                    link,
                    track_on,
                };
            }
        }
        (best, pat)
    }

    fn exact_bound(&self) -> f64 {
        self.group_min.iter().sum()
    }

    /// Whether the lower bound rules this subtree out against `limit`.
    /// `strict` prunes only above the limit; otherwise at or above.
    fn bound_prunes(&self, limit: f64, strict: bool) -> bool {
        if self.inf_groups > 0 {
            return true;
        }
        let lb = self.bound_finite;
        if lb > limit + BOUND_BAND {
            return true;
        }
        if lb < limit - BOUND_BAND {
            return false;
        }
        // the incremental sum has drifted into the ambiguous band; re-derive
        let exact = self.exact_bound();
        if strict {
            exact > limit
        } else {
            exact >= limit
        }
    }

    /// Value to try first, read off the group's cheapest pattern.
    fn preferred_value(&self, x: usize) -> bool {
        let (_, pat) = self.eval_group(self.group_of(x));
        match self.layout.block_of(x) {
            (IndicatorBlock::Node, _) => pat.select,
            (IndicatorBlock::Track, _) => {
                pat.select
                    && match pat.link {
                        LinkChoice::TrackStart => true,
                        LinkChoice::Edge(_) => pat.track_on,
                        LinkChoice::None => false,
                    }
            }
            (IndicatorBlock::Parent, _) => pat.select && pat.state == 0,
            (IndicatorBlock::Daughter, _) => pat.select && pat.state == 1,
            (IndicatorBlock::Continuation, _) => pat.select && pat.state == 2,
            (IndicatorBlock::Edge, j) => pat.select && pat.link == LinkChoice::Edge(j),
        }
    }

    fn lowest_unassigned(&self, from: usize) -> Option<usize> {
        (from..self.val.len()).find(|&x| self.val[x] == -1)
    }

    fn deadline_hit(&self, deadline: Option<Instant>) -> bool {
        self.expansions % 512 == 0 && deadline.is_some_and(|d| Instant::now() >= d)
    }

    /// Pass 1: branch and bound for the optimal value. Starts from the given
    /// incumbent (the zeros completion) and only accepts strict improvements.
    fn search_value(
        &mut self,
        inc_obj: f64,
        inc_vals: Vec<i8>,
        deadline: Option<Instant>,
    ) -> SearchOutcome<Vec<i8>> {
        let mut inc_obj = inc_obj;
        let mut inc_vals = inc_vals;
        let mut stack: Vec<Frame> = Vec::new();
        let mut descend = !self.bound_prunes(inc_obj, false);
        loop {
            if descend {
                let from = stack.last().map_or(0, |f| f.var as usize + 1);
                match self.lowest_unassigned(from) {
                    Some(x) => {
                        self.expansions += 1;
                        if self.deadline_hit(deadline) {
                            return SearchOutcome::TimedOut(inc_obj, inc_vals);
                        }
                        let first = self.preferred_value(x);
                        let mark = self.trail.len() as u32;
                        stack.push(Frame {
                            var: x as u32,
                            mark,
                            values: [first, !first],
                            tried: 1,
                        });
                        descend = self.assign(x, first).is_ok()
                            && self.propagate().is_ok()
                            && !self.bound_prunes(inc_obj, false);
                    }
                    None => {
                        let obj = canonical_objective(self.costs, &self.val);
                        if obj < inc_obj - OBJECTIVE_EPS {
                            inc_obj = obj;
                            inc_vals = self.val.clone();
                        }
                        descend = false;
                    }
                }
            } else {
                // backtrack to the deepest frame with an untried value
                loop {
                    let Some(top) = stack.last_mut() else {
                        return SearchOutcome::Done(inc_obj, inc_vals);
                    };
                    let mark = top.mark as usize;
                    self.undo_to(mark);
                    if top.tried < 2 {
                        let x = top.var as usize;
                        let b = top.values[1];
                        top.tried = 2;
                        if self.assign(x, b).is_ok()
                            && self.propagate().is_ok()
                            && !self.bound_prunes(inc_obj, false)
                        {
                            descend = true;
                            break;
                        }
                        self.undo_to(mark);
                        stack.pop();
                    } else {
                        stack.pop();
                    }
                }
            }
        }
    }

    /// Pass 2: depth-first in canonical order, zeros first, pruning subtrees
    /// that cannot reach `zstar`; the first surviving leaf is the
    /// lexicographically smallest optimum.
    fn search_lex(&mut self, zstar: f64, deadline: Option<Instant>) -> SearchOutcome<Vec<i8>> {
        let limit = zstar + OBJECTIVE_EPS;
        let mut stack: Vec<Frame> = Vec::new();
        let mut descend = !self.bound_prunes(limit, true);
        loop {
            if descend {
                let from = stack.last().map_or(0, |f| f.var as usize + 1);
                match self.lowest_unassigned(from) {
                    Some(x) => {
                        self.expansions += 1;
                        if self.deadline_hit(deadline) {
                            return SearchOutcome::TimedOut(zstar, Vec::new());
                        }
                        let mark = self.trail.len() as u32;
                        stack.push(Frame {
                            var: x as u32,
                            mark,
                            values: [false, true],
                            tried: 1,
                        });
                        descend = self.assign(x, false).is_ok()
                            && self.propagate().is_ok()
                            && !self.bound_prunes(limit, true);
                    }
                    None => {
                        let obj = canonical_objective(self.costs, &self.val);
                        if obj <= limit {
                            return SearchOutcome::Done(obj, self.val.clone());
                        }
                        descend = false;
                    }
                }
            } else {
                loop {
                    let Some(top) = stack.last_mut() else {
                        // cannot happen: pass 1 proved an optimum exists
                        unreachable!("no assignment reaches the proven optimal value");
                    };
                    let mark = top.mark as usize;
                    self.undo_to(mark);
                    if top.tried < 2 {
                        let x = top.var as usize;
                        top.tried = 2;
                        if self.assign(x, true).is_ok()
                            && self.propagate().is_ok()
                            && !self.bound_prunes(limit, true)
                        {
                            descend = true;
                            break;
                        }
                        self.undo_to(mark);
                        stack.pop();
                    } else {
                        stack.pop();
                    }
                }
            }
        }
    }
}
