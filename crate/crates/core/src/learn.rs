//! Weight fitting: best-effort targets, loss-augmented inference, structured
//! max-margin subgradient descent, and the grid-search baseline.
//!
//! The training signal is an indicator vector y' assembled from ground truth
//! by [`best_effort`]: per-frame minimum-distance matching decides which
//! candidates stand in for real cells, and only ground-truth edges that the
//! candidate graph actually contains become part of y'. Learning then
//! minimizes `L(w) = <Sw,y'> - min_y [<Sw,y> - delta(y',y)] + lambda*|w|^2`
//! where the inner minimum runs over all feasible assignments and delta is a
//! weighted Hamming distance. The inner problem reduces to an ordinary solve
//! with per-indicator cost adjustments ([`loss_augmented_solve`]).

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::match_points;
use crate::eval::{count_errors, match_nodes, ErrorCounts, DEFAULT_MATCH_RADIUS};
use crate::model::{
    decode_assignment, objective_value, CandidateGraph, FeatureMatrix, IndicatorAssignment,
    IndicatorBlock, IndicatorLayout, LineageForest, ModelError, Vec3, WeightVector,
};
use crate::solve::{solve, solve_with_costs, ConstraintSystem, SolveError, SolveLimits, SolveReport};

/// Division-tolerance (in frames) used when scoring grid points.
pub const DEFAULT_DIVISION_TOLERANCE: u32 = 1;

/// Hamming costs for one indicator block: `fp` prices a selected indicator
/// the target leaves off, `fn` prices a missed one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockCosts {
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl Default for BlockCosts {
    fn default() -> Self {
        Self { fp: 1.0, fn_: 1.0 }
    }
}

/// Per-block weighted Hamming costs. Defaults to 1 everywhere; scaling the
/// `fp` or `fn` side of selected blocks steers learning toward avoiding the
/// corresponding error type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HammingCosts {
    pub node: BlockCosts,
    pub track: BlockCosts,
    pub parent: BlockCosts,
    pub daughter: BlockCosts,
    pub continuation: BlockCosts,
    pub edge: BlockCosts,
}

impl Default for HammingCosts {
    fn default() -> Self {
        Self::uniform(1.0, 1.0)
    }
}

impl HammingCosts {
    pub fn uniform(fp: f64, fn_: f64) -> Self {
        let b = BlockCosts { fp, fn_ };
        Self {
            node: b,
            track: b,
            parent: b,
            daughter: b,
            continuation: b,
            edge: b,
        }
    }

    pub fn for_block(&self, block: IndicatorBlock) -> BlockCosts {
        match block {
            IndicatorBlock::Node => self.node,
            IndicatorBlock::Track => self.track,
            IndicatorBlock::Parent => self.parent,
            IndicatorBlock::Daughter => self.daughter,
            IndicatorBlock::Continuation => self.continuation,
            IndicatorBlock::Edge => self.edge,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [
            self.node,
            self.track,
            self.parent,
            self.daughter,
            self.continuation,
            self.edge,
        ];
        for b in all {
            if !(b.fp >= 0.0) || !b.fp.is_finite() || !(b.fn_ >= 0.0) || !b.fn_.is_finite() {
                return Err(ModelError::NonFinite(format!(
                    "hamming costs must be nonnegative, got fp {} fn {}",
                    b.fp, b.fn_
                )));
            }
        }
        Ok(())
    }
}

/// Weighted Hamming distance between a target `yp` and an assignment `y`,
/// with per-block costs resolved through `layout`.
pub fn hamming(
    yp: &IndicatorAssignment,
    y: &IndicatorAssignment,
    costs: &HammingCosts,
    layout: IndicatorLayout,
) -> Result<f64, ModelError> {
    if yp.len() != y.len() || yp.len() != layout.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "hamming over {} and {} entries against a layout of {}",
            yp.len(),
            y.len(),
            layout.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..yp.len() {
        let (t, p) = (yp.get(i), y.get(i));
        if t == p {
            continue;
        }
        let b = costs.for_block(layout.block_of(i).0);
        total += if t { b.fn_ } else { b.fp };
    }
    Ok(total)
}

/// Builds the best-effort target assignment: per frame, ground-truth nodes
/// are matched to candidates by minimum total distance within
/// `match_radius`; matched nodes are selected with the state their
/// ground-truth topology dictates, and a ground-truth edge is selected iff
/// both endpoints matched and the candidate edge exists. Ground truth the
/// graph cannot express is logged and left out, so the result is feasible.
pub fn best_effort(
    graph: &CandidateGraph,
    gt: &LineageForest,
    match_radius: f64,
) -> IndicatorAssignment {
    let layout = graph.layout();
    let mut y = IndicatorAssignment::zeros(layout.len());
    if graph.node_count() == 0 || gt.node_count() == 0 {
        return y;
    }
    let mut by_frame: HashMap<u32, Vec<usize>> = HashMap::new();
    for (u, n) in graph.nodes().iter().enumerate() {
        by_frame.entry(n.frame).or_default().push(u);
    }
    let mut matched: Vec<Option<usize>> = vec![None; gt.node_count()];
    let (first, last) = gt.frame_range().expect("nonempty ground truth");
    for frame in first..=last {
        let gt_idx: Vec<usize> = gt.frame_nodes(frame).collect();
        let Some(cand_idx) = by_frame.get(&frame) else {
            continue;
        };
        if gt_idx.is_empty() {
            continue;
        }
        let gt_pos: Vec<Vec3> = gt_idx.iter().map(|&v| gt.nodes()[v].position).collect();
        let cand_pos: Vec<Vec3> = cand_idx
            .iter()
            .map(|&u| graph.nodes()[u].position)
            .collect();
        for (i, j) in match_points(&gt_pos, &cand_pos, match_radius).pairs {
            matched[gt_idx[i]] = Some(cand_idx[j]);
        }
    }
    for (v, m) in matched.iter().enumerate() {
        let Some(u) = *m else {
            log::warn!(
                "ground-truth node {} (frame {}) has no candidate within {}",
                gt.nodes()[v].id,
                gt.nodes()[v].frame,
                match_radius
            );
            continue;
        };
        y.set(layout.node(u), true);
        let divides = gt.is_division(v);
        let parent_divides = gt.parent(v).is_some_and(|p| gt.is_division(p));
        let state_index = if divides {
            layout.parent(u)
        } else if parent_divides {
            layout.daughter(u)
        } else {
            layout.continuation(u)
        };
        y.set(state_index, true);
    }
    for &(sa, sb) in gt.edges() {
        let a = gt.node_idx(sa).expect("edge endpoints exist");
        let b = gt.node_idx(sb).expect("edge endpoints exist");
        let (Some(u), Some(v)) = (matched[a], matched[b]) else {
            log::warn!("ground-truth edge ({sa}, {sb}) unreachable: endpoint unmatched");
            continue;
        };
        match graph.edge_idx(graph.nodes()[u].id, graph.nodes()[v].id) {
            Some(j) => y.set(layout.edge(j), true),
            None => {
                log::warn!("ground-truth edge ({sa}, {sb}) unreachable: no candidate edge")
            }
        }
    }
    set_minimal_tracks(graph, &mut y);

    // matching is injective and ground truth is a forest, so this construction
    // satisfies the selection constraints; keep a repair pass for safety
    let system = crate::solve::build_constraints(graph);
    let mut guard = graph.edge_count() + 1;
    while let Some(ci) = system.first_violation(&y) {
        let c = &system.constraints()[ci];
        let dropped = c
            .terms
            .iter()
            .map(|&(i, _)| i)
            .find(|&i| matches!(layout.block_of(i).0, IndicatorBlock::Edge) && y.get(i));
        match dropped {
            Some(i) if guard > 0 => {
                guard -= 1;
                log::warn!("best effort infeasible at [{c}], dropping edge indicator {i}");
                y.set(i, false);
                set_minimal_tracks(graph, &mut y);
            }
            _ => {
                log::error!("best effort cannot be repaired at [{c}]; returning zeros");
                return IndicatorAssignment::zeros(layout.len());
            }
        }
    }
    y
}

/// Track starts under the minimal convention: a selected node with no
/// selected incoming edge.
fn set_minimal_tracks(graph: &CandidateGraph, y: &mut IndicatorAssignment) {
    let layout = graph.layout();
    for u in 0..graph.node_count() {
        let starts = y.get(layout.node(u))
            && !graph.in_edges(u).iter().any(|&j| y.get(layout.edge(j)));
        y.set(layout.track(u), starts);
    }
}

/// Minimizes `<Sw,y> - delta(yp,y)` over the feasible set by folding the
/// Hamming terms into the per-indicator costs. The reported objective
/// includes the constant `-sum(c_fn over yp)` so it equals the true value.
pub fn loss_augmented_solve(
    graph: &CandidateGraph,
    s: &FeatureMatrix,
    w: &WeightVector,
    constraints: &ConstraintSystem,
    yp: &IndicatorAssignment,
    costs: &HammingCosts,
) -> Result<SolveReport, SolveError> {
    costs.validate()?;
    let layout = graph.layout();
    if yp.len() != layout.len() {
        return Err(SolveError::Model(ModelError::DimensionMismatch(format!(
            "target has {} entries, graph needs {}",
            yp.len(),
            layout.len()
        ))));
    }
    if !w.is_finite() {
        return Err(SolveError::Model(ModelError::NonFinite("weights".into())));
    }
    let mut adjusted = s.apply(w);
    let mut constant = 0.0;
    for (i, c) in adjusted.iter_mut().enumerate() {
        let b = costs.for_block(layout.block_of(i).0);
        if yp.get(i) {
            *c += b.fn_;
            constant -= b.fn_;
        } else {
            *c -= b.fp;
        }
    }
    let mut rep = solve_with_costs(graph, &adjusted, constraints, SolveLimits::none())?;
    rep.objective += constant;
    Ok(rep)
}

/// The structured hinge loss and its subgradient at `w`.
pub fn ssvm_loss(
    graph: &CandidateGraph,
    s: &FeatureMatrix,
    constraints: &ConstraintSystem,
    yp: &IndicatorAssignment,
    costs: &HammingCosts,
    w: &WeightVector,
    lambda: f64,
) -> Result<(f64, [f64; 8]), SolveError> {
    let rep = loss_augmented_solve(graph, s, w, constraints, yp, costs)?;
    let target_obj = objective_value(s, w, yp)?;
    let loss = target_obj - rep.objective + lambda * w.norm_sq();
    let target_feat = s.transpose_apply(yp)?;
    let argmin_feat = s.transpose_apply(&rep.y)?;
    let wa = w.as_array();
    let mut grad = [0.0; 8];
    for c in 0..8 {
        grad[c] = target_feat[c] - argmin_feat[c] + 2.0 * lambda * wa[c];
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnConfig {
    pub lambda: f64,
    pub max_iters: u32,
    /// Base step size; iteration k steps by `eta0 / (1 + k / kappa)`.
    pub eta0: f64,
    pub kappa: f64,
    /// Minimum improvement of the best loss that resets the patience counter.
    pub tolerance: f64,
    /// Iterations without improvement before stopping.
    pub patience: u32,
    /// Consecutive loss increases before declaring divergence.
    pub divergence_patience: u32,
    pub initial: WeightVector,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            lambda: 0.001,
            max_iters: 300,
            eta0: 0.05,
            kappa: 50.0,
            tolerance: 1e-6,
            patience: 40,
            divergence_patience: 50,
            initial: WeightVector::zeros(),
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(LearnError::BadConfig(format!(
                "lambda {} must be nonnegative",
                self.lambda
            )));
        }
        if !(self.eta0 > 0.0) || !self.eta0.is_finite() {
            return Err(LearnError::BadConfig(format!(
                "eta0 {} must be positive",
                self.eta0
            )));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(LearnError::BadConfig(format!(
                "kappa {} must be positive",
                self.kappa
            )));
        }
        if !(self.tolerance >= 0.0) || !self.tolerance.is_finite() {
            return Err(LearnError::BadConfig(format!(
                "tolerance {} must be nonnegative",
                self.tolerance
            )));
        }
        if !self.initial.is_finite() {
            return Err(LearnError::BadConfig("initial weights must be finite".into()));
        }
        if self.divergence_patience == 0 || self.patience == 0 {
            return Err(LearnError::BadConfig(
                "patience settings must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("invalid learning config: {0}")]
    BadConfig(String),
    #[error("loss grew for {iters} consecutive iterations (best {best}); aborting")]
    Diverged {
        iters: u32,
        best: f64,
        trace: Vec<(u32, f64)>,
    },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Subgradient descent on the structured hinge loss. Returns the best-loss
/// iterate and a trace of `(iteration, best loss so far)`.
pub fn fit_weights(
    graph: &CandidateGraph,
    s: &FeatureMatrix,
    constraints: &ConstraintSystem,
    yp: &IndicatorAssignment,
    costs: &HammingCosts,
    cfg: &LearnConfig,
) -> Result<(WeightVector, Vec<(u32, f64)>), LearnError> {
    cfg.validate()?;
    costs.validate().map_err(SolveError::Model)?;
    let mut w = cfg.initial;
    let (mut loss, mut grad) = ssvm_loss(graph, s, constraints, yp, costs, &w, cfg.lambda)?;
    let mut best_w = w;
    let mut best = loss;
    let mut trace = vec![(0u32, best)];
    let mut stale = 0u32;
    let mut growing = 0u32;
    let mut prev = loss;
    // the regularizer alone maps w to (1 - 2*lambda*eta)*w each step, so the
    // step must stay below 1/(2*lambda) or heavy regularization oscillates
    let eta_base = if cfg.lambda > 0.0 {
        cfg.eta0.min(1.0 / (2.0 * cfg.lambda))
    } else {
        cfg.eta0
    };
    for k in 1..=cfg.max_iters {
        let eta = eta_base / (1.0 + k as f64 / cfg.kappa);
        let mut wa = w.as_array();
        for c in 0..8 {
            wa[c] -= eta * grad[c];
        }
        w = WeightVector::from_array(wa);
        (loss, grad) = ssvm_loss(graph, s, constraints, yp, costs, &w, cfg.lambda)?;
        if loss < best - cfg.tolerance {
            best = loss;
            best_w = w;
            stale = 0;
        } else {
            stale += 1;
        }
        trace.push((k, best));
        if loss > prev + cfg.tolerance {
            growing += 1;
            if growing >= cfg.divergence_patience {
                return Err(LearnError::Diverged {
                    iters: growing,
                    best,
                    trace,
                });
            }
        } else {
            growing = 0;
        }
        prev = loss;
        if stale >= cfg.patience {
            break;
        }
    }
    Ok((best_w, trace))
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub weights: WeightVector,
    pub counts: ErrorCounts,
}

/// Solves and scores every grid point against validation ground truth and
/// returns the weights with the lowest error sum (ties: fewer division
/// errors, then lexicographically smaller weights) plus the full table.
pub fn grid_search(
    graph: &CandidateGraph,
    s: &FeatureMatrix,
    constraints: &ConstraintSystem,
    gt: &LineageForest,
    grid: &[WeightVector],
) -> (WeightVector, Vec<GridRow>) {
    assert!(!grid.is_empty(), "grid must be non-empty");
    let table: Vec<GridRow> = grid
        .par_iter()
        .map(|&weights| {
            let rep = solve(graph, s, &weights, constraints, SolveLimits::none())
                .expect("grid solve with finite weights");
            let pred = decode_assignment(graph, &rep.y).expect("solver output decodes");
            let corr =
                match_nodes(gt, &pred, DEFAULT_MATCH_RADIUS).expect("default radius is valid");
            let counts = count_errors(gt, &pred, &corr, DEFAULT_DIVISION_TOLERANCE);
            GridRow { weights, counts }
        })
        .collect();
    let best = table
        .iter()
        .min_by(|a, b| {
            (a.counts.error_sum, a.counts.division_errors)
                .cmp(&(b.counts.error_sum, b.counts.division_errors))
                .then_with(|| a.weights.lex_cmp(&b.weights))
        })
        .expect("table is non-empty")
        .weights;
    (best, table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, GraphBuildConfig};
    use crate::model::{build_feature_matrix, encode_forest, Detection, StateScores};
    use crate::sim::{render_detections, simulate_gt, SimConfig};
    use crate::solve::build_constraints;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn zero_noise_setup(
        seed: u64,
        initial_cells: u32,
        n_frames: u32,
        division_prob: f64,
    ) -> (LineageForest, CandidateGraph) {
        let cfg = SimConfig {
            seed,
            n_frames,
            initial_cells,
            division_prob,
            ..SimConfig::default()
        };
        let gt = simulate_gt(&cfg).unwrap();
        let dets = render_detections(&gt, &cfg).unwrap();
        let graph = build_graph(dets, &GraphBuildConfig::new(10.0)).unwrap();
        (gt, graph)
    }

    fn dyadic_weights(rng: &mut ChaCha8Rng) -> WeightVector {
        let mut a = [0.0; 8];
        for v in &mut a {
            *v = rng.random_range(-32..=32) as f64 / 16.0;
        }
        WeightVector::from_array(a)
    }

    #[test]
    fn hamming_examples_from_definition() {
        let layout = IndicatorLayout { nodes: 2, edges: 2 };
        let n = layout.len();
        let yp = IndicatorAssignment::from_bits(vec![true; n]);
        assert_eq!(
            hamming(&yp, &yp, &HammingCosts::default(), layout).unwrap(),
            0.0
        );
        let mut y = yp.clone();
        y.set(0, false);
        y.set(3, false);
        y.set(7, false);
        assert_eq!(hamming(&yp, &y, &HammingCosts::default(), layout).unwrap(), 3.0);

        // two extra picks at 100 each plus one ordinary miss
        let mut yp = IndicatorAssignment::zeros(n);
        yp.set(5, true);
        let mut y = IndicatorAssignment::zeros(n);
        y.set(0, true);
        y.set(1, true);
        let costs = HammingCosts::uniform(100.0, 1.0);
        assert_eq!(hamming(&yp, &y, &costs, layout).unwrap(), 201.0);

        let short = IndicatorAssignment::zeros(n - 1);
        assert!(hamming(&yp, &short, &costs, layout).is_err());
    }

    #[test]
    fn hamming_is_a_metric_under_unit_costs() {
        let layout = IndicatorLayout { nodes: 3, edges: 4 };
        let n = layout.len();
        let costs = HammingCosts::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rand_vec = |rng: &mut ChaCha8Rng| {
            IndicatorAssignment::from_bits((0..n).map(|_| rng.random()).collect())
        };
        for _ in 0..50 {
            let (x, y, z) = (rand_vec(&mut rng), rand_vec(&mut rng), rand_vec(&mut rng));
            let d = |a: &IndicatorAssignment, b: &IndicatorAssignment| {
                hamming(a, b, &costs, layout).unwrap()
            };
            assert_eq!(d(&x, &y), d(&y, &x));
            assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-12);
            assert_eq!(d(&x, &y) == 0.0, x.lex_cmp(&y) == Ordering::Equal);
        }
    }

    #[test]
    fn best_effort_reproduces_noise_free_ground_truth() {
        let (gt, graph) = zero_noise_setup(19, 2, 6, 0.3);
        let yp = best_effort(&graph, &gt, DEFAULT_MATCH_RADIUS);
        let encoded = encode_forest(&graph, &gt).unwrap();
        assert_eq!(yp.lex_cmp(&encoded), Ordering::Equal);
        assert!(build_constraints(&graph).is_feasible(&yp));
    }

    #[test]
    fn best_effort_skips_nodes_beyond_the_radius() {
        let mk = |id, frame, z: f64| {
            Detection::new(
                id,
                frame,
                [0.0, 0.0, z],
                0.9,
                StateScores::new(0.1, 0.1, 0.8, 0.0),
                [0.0; 3],
            )
        };
        let graph = build_graph(vec![mk(1, 0, 0.0), mk(2, 1, 20.0)], &GraphBuildConfig::new(30.0))
            .unwrap();
        let gt = LineageForest::new(
            vec![
                crate::model::ForestNode {
                    id: 7,
                    frame: 0,
                    position: [0.0; 3],
                    state: crate::model::CellState::Continuation,
                    polar: false,
                },
                crate::model::ForestNode {
                    id: 8,
                    frame: 1,
                    position: [0.0; 3],
                    state: crate::model::CellState::Continuation,
                    polar: false,
                },
            ],
            vec![(7, 8)],
        )
        .unwrap();
        let yp = best_effort(&graph, &gt, 15.0);
        let layout = graph.layout();
        let u = graph.node_idx(1).unwrap();
        let far = graph.node_idx(2).unwrap();
        assert!(yp.get(layout.node(u)));
        assert!(yp.get(layout.continuation(u)));
        assert!(yp.get(layout.track(u)));
        assert!(!yp.get(layout.node(far)), "distance 20 exceeds the radius");
        assert_eq!(graph.edge_count(), 1);
        assert!(!yp.get(layout.edge(0)), "edge needs both endpoints");
    }

    #[test]
    fn best_effort_handles_a_missing_daughter() {
        let mk = |id, frame, z: f64, movement: [f64; 3]| {
            Detection::new(
                id,
                frame,
                [0.0, 0.0, z],
                0.9,
                StateScores::new(0.3, 0.3, 0.4, 0.0),
                movement,
            )
        };
        // parent at origin, only one of two daughters detected
        let dets = vec![
            mk(1, 0, 0.0, [0.0; 3]),
            mk(2, 1, 4.0, [0.0, 0.0, -4.0]),
        ];
        let graph = build_graph(dets, &GraphBuildConfig::new(10.0)).unwrap();
        let gt = LineageForest::new(
            vec![
                crate::model::ForestNode {
                    id: 11,
                    frame: 0,
                    position: [0.0; 3],
                    state: crate::model::CellState::Parent,
                    polar: false,
                },
                crate::model::ForestNode {
                    id: 12,
                    frame: 1,
                    position: [0.0, 0.0, 4.0],
                    state: crate::model::CellState::Daughter,
                    polar: false,
                },
                crate::model::ForestNode {
                    id: 13,
                    frame: 1,
                    position: [0.0, 0.0, -4.0],
                    state: crate::model::CellState::Daughter,
                    polar: false,
                },
            ],
            vec![(11, 12), (11, 13)],
        )
        .unwrap();
        let yp = best_effort(&graph, &gt, 15.0);
        let layout = graph.layout();
        let u = graph.node_idx(1).unwrap();
        let v = graph.node_idx(2).unwrap();
        assert!(yp.get(layout.parent(u)), "still a parent with one daughter");
        assert!(yp.get(layout.daughter(v)));
        assert_eq!(yp.ones().filter(|&i| i >= layout.edge(0)).count(), 1);
        assert!(build_constraints(&graph).is_feasible(&yp));
    }

    #[test]
    fn zero_costs_reduce_loss_augmentation_to_plain_solve() {
        let (gt, graph) = zero_noise_setup(23, 2, 5, 0.2);
        let s = build_feature_matrix(&graph);
        let sys = build_constraints(&graph);
        let yp = best_effort(&graph, &gt, DEFAULT_MATCH_RADIUS);
        let w = WeightVector::from_array([-1.0, -0.5, 0.25, 0.0, -0.25, 0.0, -0.5, 1.0]);
        let plain = solve(&graph, &s, &w, &sys, SolveLimits::none()).unwrap();
        let aug =
            loss_augmented_solve(&graph, &s, &w, &sys, &yp, &HammingCosts::uniform(0.0, 0.0))
                .unwrap();
        assert_eq!(plain.y.lex_cmp(&aug.y), Ordering::Equal);
        assert_eq!(plain.objective, aug.objective);
    }

    #[test]
    fn loss_augmented_matches_exhaustive_enumeration() {
        // small two-frame graph, all assignments enumerable
        let mk = |id, frame, z: f64, movement: [f64; 3]| {
            Detection::new(
                id,
                frame,
                [0.0, 0.0, z],
                0.75,
                StateScores::new(0.25, 0.25, 0.5, 0.0),
                movement,
            )
        };
        let dets = vec![
            mk(1, 0, 0.0, [0.0; 3]),
            mk(2, 1, 1.0, [0.0, 0.0, -1.0]),
            mk(3, 1, -2.0, [0.0, 0.0, 2.0]),
        ];
        let graph = build_graph(dets, &GraphBuildConfig::new(5.0)).unwrap();
        let s = build_feature_matrix(&graph);
        let sys = build_constraints(&graph);
        let layout = graph.layout();
        let n = layout.len();
        assert!(n <= 20, "fixture must stay enumerable, has {n}");
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..40 {
            let w = dyadic_weights(&mut rng);
            let yp = IndicatorAssignment::from_bits((0..n).map(|_| rng.random()).collect());
            let costs = HammingCosts::uniform(
                rng.random_range(0..=4) as f64 / 2.0,
                rng.random_range(0..=4) as f64 / 2.0,
            );
            let rep = loss_augmented_solve(&graph, &s, &w, &sys, &yp, &costs).unwrap();
            // exhaustive oracle, ascending masks = lexicographic order
            let mut best: Option<(f64, IndicatorAssignment)> = None;
            for mask in 0u32..(1 << n) {
                let bits: Vec<bool> = (0..n).map(|i| mask >> (n - 1 - i) & 1 == 1).collect();
                let y = IndicatorAssignment::from_bits(bits);
                if !sys.is_feasible(&y) {
                    continue;
                }
                let obj = objective_value(&s, &w, &y).unwrap()
                    - hamming(&yp, &y, &costs, layout).unwrap();
                if best.as_ref().is_none_or(|(b, _)| obj < b - 1e-9) {
                    best = Some((obj, y));
                }
            }
            let (obj, y) = best.expect("zeros are feasible");
            assert!(
                (rep.objective - obj).abs() < 1e-9,
                "trial {trial}: objective {} vs oracle {obj}",
                rep.objective
            );
            assert_eq!(rep.y.lex_cmp(&y), Ordering::Equal, "trial {trial}");
        }
    }

    #[test]
    fn loss_is_nonnegative_and_target_bounds_the_argmin() {
        let (gt, graph) = zero_noise_setup(31, 2, 5, 0.25);
        let s = build_feature_matrix(&graph);
        let sys = build_constraints(&graph);
        let yp = best_effort(&graph, &gt, DEFAULT_MATCH_RADIUS);
        let costs = HammingCosts::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let w = dyadic_weights(&mut rng);
            let (loss, _) = ssvm_loss(&graph, &s, &sys, &yp, &costs, &w, 0.0).unwrap();
            assert!(loss >= -1e-9, "hinge loss went negative: {loss}");
            let rep = loss_augmented_solve(&graph, &s, &w, &sys, &yp, &costs).unwrap();
            let target = objective_value(&s, &w, &yp).unwrap();
            assert!(rep.objective <= target + 1e-9, "target is feasible");
        }
    }

    #[test]
    fn zero_iterations_return_the_initial_weights() {
        let (gt, graph) = zero_noise_setup(41, 2, 4, 0.0);
        let s = build_feature_matrix(&graph);
        let sys = build_constraints(&graph);
        let yp = best_effort(&graph, &gt, DEFAULT_MATCH_RADIUS);
        let initial = WeightVector::from_array([0.5; 8]);
        let cfg = LearnConfig {
            max_iters: 0,
            initial,
            ..LearnConfig::default()
        };
        let (w, trace) = fit_weights(&graph, &s, &sys, &yp, &HammingCosts::default(), &cfg).unwrap();
        assert_eq!(w, initial);
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].0, 0);
    }

    #[test]
    fn fitting_a_separable_instance_recovers_the_target() {
        let (gt, graph) = zero_noise_setup(11, 1, 4, 0.4);
        let s = build_feature_matrix(&graph);
        let sys = build_constraints(&graph);
        let yp = best_effort(&graph, &gt, DEFAULT_MATCH_RADIUS);
        let costs = HammingCosts::default();
        let cfg = LearnConfig {
            lambda: 0.0,
            max_iters: 500,
            ..LearnConfig::default()
        };
        let (w, trace) = fit_weights(&graph, &s, &sys, &yp, &costs, &cfg).unwrap();
        for pair in trace.windows(2) {
            assert!(pair[1].1 <= pair[0].1, "best-so-far trace must not rise");
        }
        let rep = solve(&graph, &s, &w, &sys, SolveLimits::none()).unwrap();
        let layout = graph.layout();
        let disagreement = hamming(&yp, &rep.y, &HammingCosts::default(), layout).unwrap();
        assert_eq!(disagreement, 0.0, "learned weights must reproduce the target");
    }

    #[test]
    fn heavier_regularization_shrinks_the_weights() {
        let (gt, graph) = zero_noise_setup(53, 1, 4, 0.4);
        let s = build_feature_matrix(&graph);
        let sys = build_constraints(&graph);
        let yp = best_effort(&graph, &gt, DEFAULT_MATCH_RADIUS);
        let mut norms = Vec::new();
        for lambda in [1e-3, 1.0, 1e3] {
            let cfg = LearnConfig {
                lambda,
                max_iters: 200,
                ..LearnConfig::default()
            };
            let (w, _) =
                fit_weights(&graph, &s, &sys, &yp, &HammingCosts::default(), &cfg).unwrap();
            norms.push(w.norm_sq());
        }
        assert!(norms[2] <= norms[1] + 1e-9);
        assert!(norms[1] <= norms[0] + 1e-9);
    }

    #[test]
    fn grid_search_returns_the_table_minimum() {
        let (gt, graph) = zero_noise_setup(3, 1, 4, 0.4);
        let s = build_feature_matrix(&graph);
        let sys = build_constraints(&graph);
        let good = WeightVector::from_array([-0.4, -0.4, 0.1, 0.1, -0.1, -0.1, -0.2, 0.5]);
        let single = grid_search(&graph, &s, &sys, &gt, &[good]);
        assert_eq!(single.0, good);
        assert_eq!(single.1.len(), 1);

        let grid = vec![
            WeightVector::zeros(),
            good,
            WeightVector::from_array([5.0; 8]),
            WeightVector::from_array([-0.9, 0.1, 0.6, 0.4, 0.4, 0.3, 0.2, 1.0]),
            WeightVector::from_array([-0.2, -0.6, 0.2, 0.3, 0.0, -0.2, -0.3, 0.8]),
        ];
        let (best, table) = grid_search(&graph, &s, &sys, &gt, &grid);
        let best_row = table
            .iter()
            .find(|r| r.weights == best)
            .expect("winner is in the table");
        for row in &table {
            assert!(best_row.counts.error_sum <= row.counts.error_sum);
        }
    }
}
