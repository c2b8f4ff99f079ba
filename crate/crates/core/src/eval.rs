//! Scoring reconstructed lineages against ground truth.
//!
//! Nodes are matched per frame by minimum-cost assignment within a radius
//! ([`match_nodes`]), then edges are classified: a predicted edge whose
//! endpoints match the endpoints of a ground-truth edge is a true positive,
//! one whose endpoints are both matched to some ground-truth nodes without
//! such an edge is an identity switch, and anything touching an unmatched
//! node is a false positive. A ground-truth edge is a false negative when it
//! was not reconstructed and is not already accounted for by an identity
//! switch at either endpoint. Division errors compare out-degree-2 nodes
//! across the correspondence with a frame tolerance along the track.
//!
//! [`det_tra`] computes acyclic-graph-matching style DET and TRA scores, and
//! [`tracklet_fraction`] reports the fraction of ground-truth segments of a
//! given length that are reconstructed without any error touching them.

use serde::Serialize;

use crate::assignment::match_points;
use crate::model::{LineageForest, Vec3};

/// Default node-matching radius in world units.
pub const DEFAULT_MATCH_RADIUS: f64 = 15.0;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("ground truth has no nodes")]
    EmptyGroundTruth,
    #[error("match radius {0} must be positive and finite")]
    BadRadius(f64),
}

/// Node correspondence between a ground-truth and a predicted forest,
/// indexed by node position within each forest.
#[derive(Debug, Clone)]
pub struct Correspondence {
    pub gt_to_pred: Vec<Option<usize>>,
    pub pred_to_gt: Vec<Option<usize>>,
}

impl Correspondence {
    pub fn matched_count(&self) -> usize {
        self.gt_to_pred.iter().flatten().count()
    }
}

/// Matches nodes frame by frame with a minimum-cost assignment capped at
/// `radius`. Matches never cross frames.
pub fn match_nodes(
    gt: &LineageForest,
    pred: &LineageForest,
    radius: f64,
) -> Result<Correspondence, EvalError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(EvalError::BadRadius(radius));
    }
    let mut corr = Correspondence {
        gt_to_pred: vec![None; gt.node_count()],
        pred_to_gt: vec![None; pred.node_count()],
    };
    let frames = match (gt.frame_range(), pred.frame_range()) {
        (Some((a, b)), Some((c, d))) => a.min(c)..=b.max(d),
        _ => return Ok(corr),
    };
    for frame in frames {
        let gt_idx: Vec<usize> = gt.frame_nodes(frame).collect();
        let pred_idx: Vec<usize> = pred.frame_nodes(frame).collect();
        if gt_idx.is_empty() || pred_idx.is_empty() {
            continue;
        }
        let gt_pos: Vec<Vec3> = gt_idx.iter().map(|&v| gt.nodes()[v].position).collect();
        let pred_pos: Vec<Vec3> = pred_idx.iter().map(|&v| pred.nodes()[v].position).collect();
        let res = match_points(&gt_pos, &pred_pos, radius);
        for (i, j) in res.pairs {
            corr.gt_to_pred[gt_idx[i]] = Some(pred_idx[j]);
            corr.pred_to_gt[pred_idx[j]] = Some(gt_idx[i]);
        }
    }
    Ok(corr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EdgeClass {
    TruePositive,
    IdentitySwitch,
    FalsePositive,
}

/// Classifies every predicted edge and marks which ground-truth edges were
/// reconstructed by a true-positive counterpart.
fn classify_edges(
    gt: &LineageForest,
    pred: &LineageForest,
    corr: &Correspondence,
) -> (Vec<EdgeClass>, Vec<bool>) {
    let classes: Vec<EdgeClass> = pred
        .edges()
        .iter()
        .map(|&(su, sv)| {
            let u = pred.node_idx(su).expect("edge endpoints exist");
            let v = pred.node_idx(sv).expect("edge endpoints exist");
            match (corr.pred_to_gt[u], corr.pred_to_gt[v]) {
                (Some(gu), Some(gv)) => {
                    if gt.has_edge(gt.nodes()[gu].id, gt.nodes()[gv].id) {
                        EdgeClass::TruePositive
                    } else {
                        EdgeClass::IdentitySwitch
                    }
                }
                _ => EdgeClass::FalsePositive,
            }
        })
        .collect();
    let mut reconstructed = vec![false; gt.edges().len()];
    for (k, &(su, sv)) in gt.edges().iter().enumerate() {
        let u = gt.node_idx(su).expect("edge endpoints exist");
        let v = gt.node_idx(sv).expect("edge endpoints exist");
        if let (Some(pu), Some(pv)) = (corr.gt_to_pred[u], corr.gt_to_pred[v]) {
            reconstructed[k] = pred.has_edge(pred.nodes()[pu].id, pred.nodes()[pv].id);
        }
    }
    (classes, reconstructed)
}

/// True when `v` or any node within `tol` steps backwards (through parents,
/// crossing division boundaries) or forwards (along a single-child chain)
/// divides.
fn near_division(f: &LineageForest, v: usize, tol: u32) -> bool {
    if f.is_division(v) {
        return true;
    }
    let mut cur = v;
    for _ in 0..tol {
        match f.parent(cur) {
            Some(p) => {
                if f.is_division(p) {
                    return true;
                }
                cur = p;
            }
            None => break,
        }
    }
    let mut cur = v;
    for _ in 0..tol {
        match f.children(cur) {
            [c] => {
                let c = *c;
                if f.is_division(c) {
                    return true;
                }
                cur = c;
            }
            _ => break,
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorCounts {
    pub tp_edges: usize,
    pub fp_edges: usize,
    pub fn_edges: usize,
    pub identity_switches: usize,
    pub fp_divisions: usize,
    pub fn_divisions: usize,
    /// `fp_divisions + fn_divisions`.
    pub division_errors: usize,
    /// `fp_edges + fn_edges + identity_switches + division_errors`.
    pub error_sum: usize,
    /// `1000 * error_sum / |ground-truth edges|`, absent without edges.
    pub normalized_sum: Option<f64>,
}

/// Counts edge and division errors under a node correspondence.
/// `division_tolerance` is the number of frames a division may be off along
/// its track and still count as found.
pub fn count_errors(
    gt: &LineageForest,
    pred: &LineageForest,
    corr: &Correspondence,
    division_tolerance: u32,
) -> ErrorCounts {
    let (classes, reconstructed) = classify_edges(gt, pred, corr);
    let tp_edges = classes.iter().filter(|&&c| c == EdgeClass::TruePositive).count();
    let fp_edges = classes.iter().filter(|&&c| c == EdgeClass::FalsePositive).count();
    let identity_switches = classes
        .iter()
        .filter(|&&c| c == EdgeClass::IdentitySwitch)
        .count();

    // identity switches incident to a matched endpoint already explain the
    // missing ground-truth edge, so do not double-count it as a false
    // negative
    let mut is_out = vec![false; pred.node_count()];
    let mut is_in = vec![false; pred.node_count()];
    for (k, &(su, sv)) in pred.edges().iter().enumerate() {
        if classes[k] == EdgeClass::IdentitySwitch {
            is_out[pred.node_idx(su).unwrap()] = true;
            is_in[pred.node_idx(sv).unwrap()] = true;
        }
    }
    let mut fn_edges = 0;
    for (k, &(su, sv)) in gt.edges().iter().enumerate() {
        if reconstructed[k] {
            continue;
        }
        let u = gt.node_idx(su).unwrap();
        let v = gt.node_idx(sv).unwrap();
        let covered = corr.gt_to_pred[u].is_some_and(|p| is_out[p])
            || corr.gt_to_pred[v].is_some_and(|p| is_in[p]);
        if !covered {
            fn_edges += 1;
        }
    }

    let fp_divisions = (0..pred.node_count())
        .filter(|&p| pred.is_division(p))
        .filter(|&p| {
            !corr.pred_to_gt[p].is_some_and(|g| near_division(gt, g, division_tolerance))
        })
        .count();
    let fn_divisions = (0..gt.node_count())
        .filter(|&g| gt.is_division(g))
        .filter(|&g| {
            !corr.gt_to_pred[g].is_some_and(|p| near_division(pred, p, division_tolerance))
        })
        .count();

    let division_errors = fp_divisions + fn_divisions;
    let error_sum = fp_edges + fn_edges + identity_switches + division_errors;
    let normalized_sum = if gt.edges().is_empty() {
        None
    } else {
        Some(1000.0 * error_sum as f64 / gt.edges().len() as f64)
    };
    ErrorCounts {
        tp_edges,
        fp_edges,
        fn_edges,
        identity_switches,
        fp_divisions,
        fn_divisions,
        division_errors,
        error_sum,
        normalized_sum,
    }
}

/// DET and TRA scores with their underlying operation counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetTraScores {
    pub det: f64,
    pub tra: f64,
    pub fn_nodes: usize,
    pub fp_nodes: usize,
    pub edge_deletions: usize,
    pub edge_additions: usize,
    pub semantic_changes: usize,
}

const W_NS: f64 = 5.0;
const W_FN: f64 = 10.0;
const W_FP: f64 = 1.0;
const W_ED: f64 = 1.0;
const W_EA: f64 = 1.5;
const W_EC: f64 = 1.0;

/// Scores detection (DET) and tracking (TRA) as one minus the weighted cost
/// of editing the prediction into the ground truth, relative to building the
/// ground truth from scratch. One-to-one matching leaves no split-node
/// operations. Both scores clamp to `[0, 1]`.
pub fn det_tra(
    gt: &LineageForest,
    pred: &LineageForest,
    corr: &Correspondence,
) -> Result<DetTraScores, EvalError> {
    if gt.node_count() == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }
    let fn_nodes = corr.gt_to_pred.iter().filter(|m| m.is_none()).count();
    let fp_nodes = corr.pred_to_gt.iter().filter(|m| m.is_none()).count();
    let ns_nodes = 0usize;

    let (classes, reconstructed) = classify_edges(gt, pred, corr);
    let tp_edges = classes.iter().filter(|&&c| c == EdgeClass::TruePositive).count();
    let edge_deletions = pred.edges().len() - tp_edges;
    let edge_additions = reconstructed.iter().filter(|&&r| !r).count();
    let mut semantic_changes = 0;
    for (k, &(su, _)) in pred.edges().iter().enumerate() {
        if classes[k] != EdgeClass::TruePositive {
            continue;
        }
        let pu = pred.node_idx(su).unwrap();
        let gu = corr.pred_to_gt[pu].expect("true positive endpoints are matched");
        if pred.is_division(pu) != gt.is_division(gu) {
            semantic_changes += 1;
        }
    }

    let node_cost = W_FN * fn_nodes as f64 + W_FP * fp_nodes as f64 + W_NS * ns_nodes as f64;
    let det_denom = W_FN * gt.node_count() as f64;
    let det = (1.0 - node_cost / det_denom).clamp(0.0, 1.0);

    let edge_cost = W_ED * edge_deletions as f64
        + W_EA * edge_additions as f64
        + W_EC * semantic_changes as f64;
    let tra_denom = W_FN * gt.node_count() as f64 + W_EA * gt.edges().len() as f64;
    let tra = (1.0 - (node_cost + edge_cost) / tra_denom).clamp(0.0, 1.0);

    Ok(DetTraScores {
        det,
        tra,
        fn_nodes,
        fp_nodes,
        edge_deletions,
        edge_additions,
        semantic_changes,
    })
}

/// Fraction of ground-truth paths with `len` edges reconstructed without any
/// error touching them, for `len` in `1..=max_len`. Entry `len - 1` is `None`
/// when no ground-truth path of that length exists. A path counts as correct
/// when all its nodes are matched, every edge on it is a true positive, and
/// no matched node carries a spurious or switched predicted edge.
pub fn tracklet_fraction(
    gt: &LineageForest,
    pred: &LineageForest,
    corr: &Correspondence,
    max_len: u32,
) -> Vec<Option<f64>> {
    let (classes, _) = classify_edges(gt, pred, corr);
    let mut bad_incident = vec![false; pred.node_count()];
    for (k, &(su, sv)) in pred.edges().iter().enumerate() {
        if classes[k] != EdgeClass::TruePositive {
            bad_incident[pred.node_idx(su).unwrap()] = true;
            bad_incident[pred.node_idx(sv).unwrap()] = true;
        }
    }
    let node_ok: Vec<bool> = (0..gt.node_count())
        .map(|v| corr.gt_to_pred[v].is_some_and(|p| !bad_incident[p]))
        .collect();
    let edge_ok = |u: usize, v: usize| {
        corr.gt_to_pred[u]
            .zip(corr.gt_to_pred[v])
            .is_some_and(|(pu, pv)| pred.has_edge(pred.nodes()[pu].id, pred.nodes()[pv].id))
    };

    // path counts by dynamic programming from the leaves upwards
    let mut total = vec![1u64; gt.node_count()];
    let mut correct: Vec<u64> = node_ok.iter().map(|&ok| ok as u64).collect();
    let mut order: Vec<usize> = (0..gt.node_count()).collect();
    order.sort_by_key(|&v| std::cmp::Reverse(gt.nodes()[v].frame));

    let mut fractions = Vec::with_capacity(max_len as usize);
    for _ in 1..=max_len {
        let mut next_total = vec![0u64; gt.node_count()];
        let mut next_correct = vec![0u64; gt.node_count()];
        for &v in &order {
            for &c in gt.children(v) {
                next_total[v] += total[c];
                if node_ok[v] && edge_ok(v, c) {
                    next_correct[v] += correct[c];
                }
            }
        }
        total = next_total;
        correct = next_correct;
        let t: u64 = total.iter().sum();
        let c: u64 = correct.iter().sum();
        fractions.push(if t == 0 { None } else { Some(c as f64 / t as f64) });
    }
    fractions
}
