//! Candidate graph construction: score thresholding, optional polar-body
//! removal and movement-guided linking of detections across adjacent frames.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{vec3_dist, CandidateGraph, Detection, Edge, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphBuildConfig {
    /// Detections scoring below this are discarded.
    #[serde(default = "default_score_threshold")]
    pub score_threshold: f64,
    /// Each detection links to at most this many candidate predecessors.
    #[serde(default = "default_max_edge_candidates")]
    pub max_edge_candidates: usize,
    /// Hard cap on the distance between a movement target and a predecessor,
    /// in world units. No universal default; pick per dataset.
    pub max_edge_distance: f64,
    /// When set, detections with a polar-body score at or above this are
    /// removed up front.
    #[serde(default)]
    pub polar_body_threshold: Option<f64>,
}

fn default_score_threshold() -> f64 {
    0.2
}

fn default_max_edge_candidates() -> usize {
    4
}

impl GraphBuildConfig {
    pub fn new(max_edge_distance: f64) -> Self {
        Self {
            score_threshold: default_score_threshold(),
            max_edge_candidates: default_max_edge_candidates(),
            max_edge_distance,
            polar_body_threshold: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(ModelError::DimensionMismatch(format!(
                "score_threshold {} outside [0, 1]",
                self.score_threshold
            )));
        }
        if self.max_edge_candidates == 0 {
            return Err(ModelError::DimensionMismatch(
                "max_edge_candidates must be at least 1".into(),
            ));
        }
        if !(self.max_edge_distance > 0.0) || !self.max_edge_distance.is_finite() {
            return Err(ModelError::DimensionMismatch(format!(
                "max_edge_distance {} must be positive and finite",
                self.max_edge_distance
            )));
        }
        if let Some(t) = self.polar_body_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(ModelError::DimensionMismatch(format!(
                    "polar_body_threshold {t} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Keeps detections scoring at or above the threshold (and, with the polar
/// filter enabled, below the polar-body threshold). Order is preserved.
pub fn filter_detections(dets: Vec<Detection>, cfg: &GraphBuildConfig) -> Vec<Detection> {
    dets.into_iter()
        .filter(|d| d.score >= cfg.score_threshold)
        .filter(|d| match cfg.polar_body_threshold {
            Some(t) => d.state_scores.polar_body < t,
            None => true,
        })
        .collect()
}

/// Links each detection to its nearest candidate predecessors.
///
/// For a detection `v` at frame `t > 0` the movement vector predicts where its
/// predecessor sat; every detection `u` at frame `t - 1` within
/// `max_edge_distance` of that point is a candidate, and the
/// `max_edge_candidates` nearest (ties to the lower id) become edges `u -> v`
/// with the distance as cost.
pub fn build_graph(dets: Vec<Detection>, cfg: &GraphBuildConfig) -> Result<CandidateGraph, ModelError> {
    cfg.validate()?;
    // canonical node order first so edge construction is order-independent
    let graph = CandidateGraph::new(dets, Vec::new())?;
    let nodes = graph.nodes();
    let mut frame_start = std::collections::HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        frame_start.entry(n.frame).or_insert(i);
    }
    let frame_slice = |frame: u32| -> &[Detection] {
        match frame_start.get(&frame) {
            Some(&start) => {
                let end = nodes[start..]
                    .iter()
                    .position(|n| n.frame != frame)
                    .map(|off| start + off)
                    .unwrap_or(nodes.len());
                &nodes[start..end]
            }
            None => &[],
        }
    };
    let edges: Vec<Edge> = nodes
        .par_iter()
        .flat_map_iter(|v| {
            let mut out = Vec::new();
            if v.frame > 0 {
                let target = v.movement_target();
                let mut cands: Vec<(f64, u64)> = frame_slice(v.frame - 1)
                    .iter()
                    .filter_map(|u| {
                        let d = vec3_dist(u.position, target);
                        (d <= cfg.max_edge_distance).then_some((d, u.id))
                    })
                    .collect();
                cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                cands.truncate(cfg.max_edge_candidates);
                out.extend(cands.into_iter().map(|(d, uid)| Edge {
                    source: uid,
                    target: v.id,
                    cost: d,
                }));
            }
            out
        })
        .collect();
    CandidateGraph::new(graph.nodes().to_vec(), edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StateScores;

    fn det(id: u64, frame: u32, pos: [f64; 3], score: f64, movement: [f64; 3]) -> Detection {
        Detection::new(
            id,
            frame,
            pos,
            score,
            StateScores::new(0.0, 0.0, 1.0, 0.0),
            movement,
        )
    }

    fn det_polar(id: u64, polar_score: f64) -> Detection {
        Detection::new(
            id,
            0,
            [0.0; 3],
            0.9,
            StateScores::new(0.0, 0.0, 1.0, polar_score),
            [0.0; 3],
        )
    }

    #[test]
    fn filter_keeps_threshold_boundary() {
        let cfg = GraphBuildConfig::new(100.0);
        let dets = vec![
            det(1, 0, [0.0; 3], 0.1, [0.0; 3]),
            det(2, 0, [0.0; 3], 0.2, [0.0; 3]),
            det(3, 0, [0.0; 3], 0.9, [0.0; 3]),
        ];
        let kept = filter_detections(dets, &cfg);
        let ids: Vec<u64> = kept.iter().map(|d| d.id).collect();
        assert_eq!(ids, vec![2, 3]);
    }

    #[test]
    fn filter_empty_input() {
        let cfg = GraphBuildConfig::new(100.0);
        assert!(filter_detections(Vec::new(), &cfg).is_empty());
    }

    #[test]
    fn polar_filter_drops_high_polar_scores() {
        let mut cfg = GraphBuildConfig::new(100.0);
        cfg.polar_body_threshold = Some(0.5);
        let kept = filter_detections(vec![det_polar(1, 0.6), det_polar(2, 0.4)], &cfg);
        let ids: Vec<u64> = kept.iter().map(|d| d.id).collect();
        assert_eq!(ids, vec![2]);
    }

    #[test]
    fn perfect_prediction_chains_at_zero_cost() {
        let mut cfg = GraphBuildConfig::new(10.0);
        cfg.max_edge_candidates = 1;
        let dets: Vec<Detection> = (0..5)
            .map(|f| det(f as u64 + 1, f, [3.0, 4.0, 5.0], 0.9, [0.0; 3]))
            .collect();
        let g = build_graph(dets, &cfg).unwrap();
        assert_eq!(g.edge_count(), 4);
        for e in g.edges() {
            assert_eq!(e.cost, 0.0);
        }
    }

    #[test]
    fn movement_target_picks_predecessors_by_distance() {
        let cfg = GraphBuildConfig {
            score_threshold: 0.2,
            max_edge_candidates: 2,
            max_edge_distance: 100.0,
            polar_body_threshold: None,
        };
        let dets = vec![
            det(1, 0, [0.0, 0.0, 0.0], 0.9, [0.0; 3]),
            det(2, 0, [5.0, 0.0, 0.0], 0.9, [0.0; 3]),
            det(3, 1, [10.0, 0.0, 0.0], 0.9, [-10.0, 0.0, 0.0]),
        ];
        let g = build_graph(dets.clone(), &cfg).unwrap();
        let costs: Vec<(u64, u64, f64)> =
            g.edges().iter().map(|e| (e.source, e.target, e.cost)).collect();
        assert_eq!(costs, vec![(1, 3, 0.0), (2, 3, 5.0)]);

        let tight = GraphBuildConfig {
            max_edge_distance: 3.0,
            ..cfg
        };
        let g = build_graph(dets, &tight).unwrap();
        let costs: Vec<(u64, u64, f64)> =
            g.edges().iter().map(|e| (e.source, e.target, e.cost)).collect();
        assert_eq!(costs, vec![(1, 3, 0.0)]);
    }

    #[test]
    fn nearest_ties_break_to_lower_id() {
        let mut cfg = GraphBuildConfig::new(100.0);
        cfg.max_edge_candidates = 1;
        let dets = vec![
            det(7, 0, [1.0, 0.0, 0.0], 0.9, [0.0; 3]),
            det(4, 0, [-1.0, 0.0, 0.0], 0.9, [0.0; 3]),
            det(9, 1, [0.0, 0.0, 0.0], 0.9, [0.0; 3]),
        ];
        let g = build_graph(dets, &cfg).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.edges()[0].source, 4);
    }

    #[test]
    fn build_is_input_order_independent() {
        let cfg = GraphBuildConfig::new(50.0);
        let mut dets = Vec::new();
        let mut id = 1u64;
        for f in 0..4u32 {
            for i in 0..6 {
                dets.push(det(
                    id,
                    f,
                    [i as f64 * 3.0, (i % 2) as f64, f as f64],
                    0.9,
                    [0.0, 0.0, -1.0],
                ));
                id += 1;
            }
        }
        let g1 = build_graph(dets.clone(), &cfg).unwrap();
        dets.reverse();
        dets.swap(0, 10);
        let g2 = build_graph(dets, &cfg).unwrap();
        let sig = |g: &CandidateGraph| {
            g.edges()
                .iter()
                .map(|e| (e.source, e.target, e.cost.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(sig(&g1), sig(&g2));
    }

    #[test]
    fn filter_then_build_matches_delete_after_build_when_k_unbounded() {
        // With k at least the frame population, nearest-neighbor truncation
        // never kicks in, so dropping low-score nodes commutes with linking.
        let mut cfg = GraphBuildConfig::new(50.0);
        cfg.max_edge_candidates = 100;
        let mut dets = Vec::new();
        let mut id = 1u64;
        for f in 0..3u32 {
            for i in 0..5 {
                let score = if (id + f as u64) % 3 == 0 { 0.1 } else { 0.9 };
                dets.push(det(id, f, [i as f64 * 2.0, 0.0, 0.0], score, [0.0; 3]));
                id += 1;
            }
        }
        let filtered_first = build_graph(filter_detections(dets.clone(), &cfg), &cfg).unwrap();
        let unfiltered = build_graph(dets, &cfg).unwrap();
        let kept: std::collections::HashSet<u64> =
            filtered_first.nodes().iter().map(|n| n.id).collect();
        let surviving: Vec<_> = unfiltered
            .edges()
            .iter()
            .filter(|e| kept.contains(&e.source) && kept.contains(&e.target))
            .map(|e| (e.source, e.target, e.cost.to_bits()))
            .collect();
        let direct: Vec<_> = filtered_first
            .edges()
            .iter()
            .map(|e| (e.source, e.target, e.cost.to_bits()))
            .collect();
        assert_eq!(surviving, direct);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = GraphBuildConfig::new(10.0);
        cfg.score_threshold = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = GraphBuildConfig::new(0.0);
        cfg.score_threshold = 0.2;
        assert!(cfg.validate().is_err());
        let mut cfg = GraphBuildConfig::new(10.0);
        cfg.max_edge_candidates = 0;
        assert!(cfg.validate().is_err());
    }
}
