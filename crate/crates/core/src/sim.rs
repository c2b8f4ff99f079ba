//! Synthetic lineages and detections.
//!
//! [`simulate_gt`] grows a binary forest of cells in a reflective box:
//! Brownian per-frame motion, random divisions placing daughters symmetrically
//! around the parent, and optional near-static polar bodies. A ground-truth
//! node's state follows from topology (a node that divides is a parent, a
//! node whose parent divides is a daughter, parent winning when both apply).
//!
//! [`render_detections`] degrades the ground truth into candidates: dropout,
//! jittered positions (with per-axis anisotropy), noisy backward movement
//! vectors, candidate scores from a true-cell score model, state scores drawn
//! from a per-state confusion row, and Poisson clutter with uncorrelated
//! movement. Everything is deterministic given the config seed.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::model::{CellState, Detection, ForestNode, LineageForest, StateScores, Vec3};

/// Rows of the state-score confusion model, one per true state; columns are
/// the emitted `(parent, daughter, continue, polar)` scores and each row sums
/// to 1 before noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfusion {
    pub parent: [f64; 4],
    pub daughter: [f64; 4],
    pub continuation: [f64; 4],
    pub polar: [f64; 4],
}

impl Default for StateConfusion {
    fn default() -> Self {
        Self {
            parent: [0.70, 0.15, 0.15, 0.0],
            daughter: [0.15, 0.70, 0.15, 0.0],
            continuation: [0.10, 0.10, 0.80, 0.0],
            polar: [0.05, 0.05, 0.20, 0.70],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub n_frames: u32,
    pub initial_cells: u32,
    /// Probability that a cell divides on any one frame transition.
    pub division_prob: f64,
    /// Reflective boundary box, world units per axis `(z, y, x)`.
    pub box_size: Vec3,
    /// Std of the per-frame Brownian displacement, per axis.
    pub motion_std: f64,
    /// Daughters appear at parent position +/- this along a random direction.
    pub division_displacement: f64,
    pub polar_bodies: u32,
    /// Frames each polar body persists (clamped to the recording length).
    pub polar_lifetime: u32,
    /// Probability that a ground-truth node emits no detection.
    pub dropout_prob: f64,
    /// Mean number of spurious detections per frame.
    pub clutter_rate: f64,
    /// Std of the position jitter applied to emitted detections.
    pub jitter_std: f64,
    /// Per-axis scale on the jitter std, to mimic anisotropic recordings.
    pub jitter_anisotropy: Vec3,
    /// Std of the noise on movement vectors.
    pub movement_noise_std: f64,
    pub score_mean_true: f64,
    pub score_std_true: f64,
    pub score_mean_clutter: f64,
    pub score_std_clutter: f64,
    pub state_confusion: StateConfusion,
    /// Std of the noise added to each emitted state score.
    pub state_score_noise_std: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_frames: 30,
            initial_cells: 2,
            division_prob: 0.02,
            box_size: [64.0, 128.0, 128.0],
            motion_std: 1.0,
            division_displacement: 4.0,
            polar_bodies: 0,
            polar_lifetime: 0,
            dropout_prob: 0.0,
            clutter_rate: 0.0,
            jitter_std: 0.0,
            jitter_anisotropy: [1.0, 1.0, 1.0],
            movement_noise_std: 0.0,
            score_mean_true: 0.9,
            score_std_true: 0.05,
            score_mean_clutter: 0.3,
            score_std_clutter: 0.1,
            state_confusion: StateConfusion::default(),
            state_score_noise_std: 0.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid simulation config: {0}")]
pub struct SimConfigError(String);

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimConfigError> {
        let err = |msg: String| Err(SimConfigError(msg));
        if self.n_frames == 0 {
            return err("n_frames must be at least 1".into());
        }
        for (name, p) in [
            ("division_prob", self.division_prob),
            ("dropout_prob", self.dropout_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} {p} outside [0, 1]"));
            }
        }
        for (name, s) in [
            ("motion_std", self.motion_std),
            ("division_displacement", self.division_displacement),
            ("clutter_rate", self.clutter_rate),
            ("jitter_std", self.jitter_std),
            ("movement_noise_std", self.movement_noise_std),
            ("score_std_true", self.score_std_true),
            ("score_std_clutter", self.score_std_clutter),
            ("state_score_noise_std", self.state_score_noise_std),
        ] {
            if !(s >= 0.0) || !s.is_finite() {
                return err(format!("{name} {s} must be nonnegative and finite"));
            }
        }
        if self.box_size.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
            return err(format!("box_size {:?} must be positive", self.box_size));
        }
        if self.jitter_anisotropy.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return err(format!(
                "jitter_anisotropy {:?} must be nonnegative",
                self.jitter_anisotropy
            ));
        }
        if self.polar_bodies > 0 && self.polar_lifetime == 0 {
            return err("polar_lifetime must be at least 1 when polar bodies are enabled".into());
        }
        for (name, row) in [
            ("parent", self.state_confusion.parent),
            ("daughter", self.state_confusion.daughter),
            ("continuation", self.state_confusion.continuation),
            ("polar", self.state_confusion.polar),
        ] {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return err(format!("state_confusion.{name} row {row:?} must sum to 1"));
            }
        }
        // keep runaway exponential growth from hanging the process
        let expected =
            self.initial_cells as f64 * (1.0 + self.division_prob).powi(self.n_frames as i32 - 1);
        if expected > 1e6 {
            return err(format!(
                "expected cell count {expected:.0} exceeds 1e6; lower division_prob or n_frames"
            ));
        }
        Ok(())
    }
}

fn reflect_axis(x: f64, bound: f64) -> f64 {
    let period = 2.0 * bound;
    let t = x.rem_euclid(period);
    if t > bound {
        period - t
    } else {
        t
    }
}

fn reflect(pos: Vec3, bounds: Vec3) -> Vec3 {
    [
        reflect_axis(pos[0], bounds[0]),
        reflect_axis(pos[1], bounds[1]),
        reflect_axis(pos[2], bounds[2]),
    ]
}

fn uniform_point(rng: &mut impl Rng, bounds: Vec3) -> Vec3 {
    [
        rng.random_range(0.0..bounds[0]),
        rng.random_range(0.0..bounds[1]),
        rng.random_range(0.0..bounds[2]),
    ]
}

fn gaussian_step(rng: &mut impl Rng, std: f64) -> Vec3 {
    let n = Normal::new(0.0, std).expect("validated std");
    [n.sample(rng), n.sample(rng), n.sample(rng)]
}

/// Grows the ground-truth forest. Deterministic given the seed.
pub fn simulate_gt(cfg: &SimConfig) -> Result<LineageForest, SimConfigError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut next_id = 1u64;
    let mut take_id = || {
        let id = next_id;
        next_id += 1;
        id
    };
    struct RawNode {
        id: u64,
        frame: u32,
        position: Vec3,
        polar: bool,
    }
    let mut nodes: Vec<RawNode> = Vec::new();
    let mut edges: Vec<(u64, u64)> = Vec::new();

    // regular cells
    let mut alive: Vec<(u64, Vec3)> = (0..cfg.initial_cells)
        .map(|_| (take_id(), uniform_point(&mut rng, cfg.box_size)))
        .collect();
    for f in 0..cfg.n_frames {
        for &(id, pos) in &alive {
            nodes.push(RawNode {
                id,
                frame: f,
                position: pos,
                polar: false,
            });
        }
        if f + 1 == cfg.n_frames {
            break;
        }
        let mut next_alive = Vec::with_capacity(alive.len());
        for &(id, pos) in &alive {
            if rng.random::<f64>() < cfg.division_prob {
                let dir: [f64; 3] = UnitSphere.sample(&mut rng);
                for sign in [1.0, -1.0] {
                    let child_pos = reflect(
                        [
                            pos[0] + sign * cfg.division_displacement * dir[0],
                            pos[1] + sign * cfg.division_displacement * dir[1],
                            pos[2] + sign * cfg.division_displacement * dir[2],
                        ],
                        cfg.box_size,
                    );
                    let child = take_id();
                    edges.push((id, child));
                    next_alive.push((child, child_pos));
                }
            } else {
                let step = gaussian_step(&mut rng, cfg.motion_std);
                let child_pos = reflect(
                    [pos[0] + step[0], pos[1] + step[1], pos[2] + step[2]],
                    cfg.box_size,
                );
                let child = take_id();
                edges.push((id, child));
                next_alive.push((child, child_pos));
            }
        }
        alive = next_alive;
    }

    // polar bodies: near-static chains, never dividing
    let polar_frames = cfg.polar_lifetime.min(cfg.n_frames);
    for _ in 0..cfg.polar_bodies {
        let mut pos = uniform_point(&mut rng, cfg.box_size);
        let mut prev: Option<u64> = None;
        for f in 0..polar_frames {
            let id = take_id();
            nodes.push(RawNode {
                id,
                frame: f,
                position: pos,
                polar: true,
            });
            if let Some(p) = prev {
                edges.push((p, id));
            }
            prev = Some(id);
            let step = gaussian_step(&mut rng, cfg.motion_std * 0.1);
            pos = reflect([pos[0] + step[0], pos[1] + step[1], pos[2] + step[2]], cfg.box_size);
        }
    }

    // states from topology; a dividing node is a parent even when its own
    // parent also divided
    let mut out_deg = std::collections::HashMap::new();
    let mut parent_of = std::collections::HashMap::new();
    for &(a, b) in &edges {
        *out_deg.entry(a).or_insert(0u32) += 1;
        parent_of.insert(b, a);
    }
    let forest_nodes = nodes
        .into_iter()
        .map(|n| {
            let divides = out_deg.get(&n.id).copied().unwrap_or(0) == 2;
            let parent_divides = parent_of
                .get(&n.id)
                .map(|p| out_deg.get(p).copied().unwrap_or(0) == 2)
                .unwrap_or(false);
            let state = if divides {
                CellState::Parent
            } else if parent_divides {
                CellState::Daughter
            } else {
                CellState::Continuation
            };
            ForestNode {
                id: n.id,
                frame: n.frame,
                position: n.position,
                state,
                polar: n.polar,
            }
        })
        .collect();
    Ok(LineageForest::new(forest_nodes, edges).expect("generated lineage is a valid forest"))
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Renders noisy detections from a ground-truth forest. Non-clutter
/// detections reuse the ground-truth node id; clutter ids continue past them.
pub fn render_detections(gt: &LineageForest, cfg: &SimConfig) -> Result<Vec<Detection>, SimConfigError> {
    cfg.validate()?;
    // independent stream so regenerating detections does not disturb the
    // ground-truth sequence
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.rotate_left(17) ^ 0xa076_1d64_78bd_642f);
    let score_true = Normal::new(cfg.score_mean_true, cfg.score_std_true).expect("validated std");
    let score_clutter =
        Normal::new(cfg.score_mean_clutter, cfg.score_std_clutter).expect("validated std");
    let state_noise = Normal::new(0.0, cfg.state_score_noise_std).expect("validated std");
    let mut dets = Vec::new();
    let mut clutter_id = gt.nodes().iter().map(|n| n.id).max().unwrap_or(0) + 1;
    let Some((first, last)) = gt.frame_range() else {
        return Ok(dets);
    };
    let emit_states = |rng: &mut ChaCha8Rng, row: [f64; 4]| {
        let noisy: Vec<f64> = row
            .iter()
            .map(|&v| clamp01(v + state_noise.sample(rng)))
            .collect();
        StateScores::new(noisy[0], noisy[1], noisy[2], noisy[3])
    };
    for frame in first..=last {
        for v in gt.frame_nodes(frame) {
            let node = &gt.nodes()[v];
            if rng.random::<f64>() < cfg.dropout_prob {
                continue;
            }
            let jitter = gaussian_step(&mut rng, cfg.jitter_std);
            let position = [
                node.position[0] + jitter[0] * cfg.jitter_anisotropy[0],
                node.position[1] + jitter[1] * cfg.jitter_anisotropy[1],
                node.position[2] + jitter[2] * cfg.jitter_anisotropy[2],
            ];
            let base = match gt.parent(v) {
                Some(p) => {
                    let pp = gt.nodes()[p].position;
                    [
                        pp[0] - node.position[0],
                        pp[1] - node.position[1],
                        pp[2] - node.position[2],
                    ]
                }
                None => [0.0; 3],
            };
            let mnoise = gaussian_step(&mut rng, cfg.movement_noise_std);
            let movement = [base[0] + mnoise[0], base[1] + mnoise[1], base[2] + mnoise[2]];
            let row = if node.polar {
                cfg.state_confusion.polar
            } else {
                match node.state {
                    CellState::Parent => cfg.state_confusion.parent,
                    CellState::Daughter => cfg.state_confusion.daughter,
                    CellState::Continuation => cfg.state_confusion.continuation,
                }
            };
            let state_scores = emit_states(&mut rng, row);
            let score = clamp01(score_true.sample(&mut rng));
            dets.push(Detection::new(
                node.id, frame, position, score, state_scores, movement,
            ));
        }
        if cfg.clutter_rate > 0.0 {
            let count = Poisson::new(cfg.clutter_rate)
                .expect("validated rate")
                .sample(&mut rng) as u64;
            for _ in 0..count {
                let position = uniform_point(&mut rng, cfg.box_size);
                let movement = gaussian_step(&mut rng, cfg.motion_std.max(1.0));
                let state_scores = emit_states(&mut rng, [0.25, 0.25, 0.25, 0.25]);
                let score = clamp01(score_clutter.sample(&mut rng));
                dets.push(Detection::new(
                    clutter_id, frame, position, score, state_scores, movement,
                ));
                clutter_id += 1;
            }
        }
    }
    Ok(dets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::vec3_dist;

    #[test]
    fn no_divisions_keeps_cell_count_constant() {
        let cfg = SimConfig {
            seed: 5,
            n_frames: 10,
            initial_cells: 4,
            division_prob: 0.0,
            ..SimConfig::default()
        };
        let gt = simulate_gt(&cfg).unwrap();
        for f in 0..10 {
            assert_eq!(gt.frame_nodes(f).count(), 4, "frame {f}");
        }
        assert!(gt
            .nodes()
            .iter()
            .all(|n| n.state == CellState::Continuation));
    }

    #[test]
    fn division_every_frame_doubles_cells() {
        let cfg = SimConfig {
            seed: 3,
            n_frames: 3,
            initial_cells: 1,
            division_prob: 1.0,
            ..SimConfig::default()
        };
        let gt = simulate_gt(&cfg).unwrap();
        assert_eq!(gt.frame_nodes(0).count(), 1);
        assert_eq!(gt.frame_nodes(1).count(), 2);
        assert_eq!(gt.frame_nodes(2).count(), 4);
        // mid nodes divide, so the parent label wins over daughter
        for v in gt.frame_nodes(1) {
            assert_eq!(gt.nodes()[v].state, CellState::Parent);
        }
        for v in gt.frame_nodes(2) {
            assert_eq!(gt.nodes()[v].state, CellState::Daughter);
        }
    }

    #[test]
    fn same_seed_reproduces_everything() {
        let cfg = SimConfig {
            seed: 11,
            n_frames: 12,
            initial_cells: 3,
            division_prob: 0.1,
            polar_bodies: 1,
            polar_lifetime: 12,
            dropout_prob: 0.1,
            clutter_rate: 1.5,
            jitter_std: 0.4,
            movement_noise_std: 0.2,
            state_score_noise_std: 0.05,
            ..SimConfig::default()
        };
        let a = simulate_gt(&cfg).unwrap();
        let b = simulate_gt(&cfg).unwrap();
        assert!(a.structurally_equal(&b));
        assert_eq!(a.edges(), b.edges());
        let da = render_detections(&a, &cfg).unwrap();
        let db = render_detections(&b, &cfg).unwrap();
        assert_eq!(da, db);
    }

    #[test]
    fn zero_noise_reproduces_positions_and_movements() {
        let cfg = SimConfig {
            seed: 7,
            n_frames: 8,
            initial_cells: 2,
            division_prob: 0.2,
            ..SimConfig::default()
        };
        let gt = simulate_gt(&cfg).unwrap();
        let dets = render_detections(&gt, &cfg).unwrap();
        assert_eq!(dets.len(), gt.node_count());
        for d in &dets {
            let v = gt.node_idx(d.id).unwrap();
            assert_eq!(d.position, gt.nodes()[v].position);
            match gt.parent(v) {
                Some(p) => assert_eq!(d.movement_target(), gt.nodes()[p].position),
                None => assert_eq!(d.movement, [0.0; 3]),
            }
        }
    }

    #[test]
    fn full_dropout_without_clutter_leaves_nothing() {
        let cfg = SimConfig {
            seed: 2,
            n_frames: 5,
            initial_cells: 3,
            dropout_prob: 1.0,
            ..SimConfig::default()
        };
        let gt = simulate_gt(&cfg).unwrap();
        assert!(render_detections(&gt, &cfg).unwrap().is_empty());
        let with_clutter = SimConfig {
            clutter_rate: 2.0,
            ..cfg
        };
        let dets = render_detections(&gt, &with_clutter).unwrap();
        assert!(!dets.is_empty());
        let min_gt_clutter_id = gt.nodes().iter().map(|n| n.id).max().unwrap() + 1;
        assert!(dets.iter().all(|d| d.id >= min_gt_clutter_id));
    }

    #[test]
    fn jitter_matches_folded_normal_expectation() {
        // per-axis N(0, s) jitter makes the offset length chi(3)-distributed
        // with mean 2*sqrt(2/pi)*s
        let cfg = SimConfig {
            seed: 13,
            n_frames: 200,
            initial_cells: 5,
            division_prob: 0.0,
            jitter_std: 0.5,
            ..SimConfig::default()
        };
        let gt = simulate_gt(&cfg).unwrap();
        let dets = render_detections(&gt, &cfg).unwrap();
        assert_eq!(dets.len(), 1000);
        let mean: f64 = dets
            .iter()
            .map(|d| {
                let v = gt.node_idx(d.id).unwrap();
                vec3_dist(d.position, gt.nodes()[v].position)
            })
            .sum::<f64>()
            / dets.len() as f64;
        let expected = 2.0 * (2.0 / std::f64::consts::PI).sqrt() * 0.5;
        assert!(
            (mean / expected - 1.0).abs() < 0.10,
            "mean {mean}, expected {expected}"
        );
    }

    #[test]
    fn polar_bodies_are_static_flagged_chains() {
        let cfg = SimConfig {
            seed: 9,
            n_frames: 10,
            initial_cells: 1,
            division_prob: 0.0,
            polar_bodies: 2,
            polar_lifetime: 6,
            ..SimConfig::default()
        };
        let gt = simulate_gt(&cfg).unwrap();
        let polar: Vec<usize> = (0..gt.node_count()).filter(|&v| gt.nodes()[v].polar).collect();
        assert_eq!(polar.len(), 12);
        for &v in &polar {
            assert!(gt.nodes()[v].frame < 6);
            assert!(!gt.is_division(v));
        }
    }

    #[test]
    fn config_validation_catches_bad_rows() {
        let mut cfg = SimConfig::default();
        cfg.state_confusion.parent = [0.5, 0.5, 0.5, 0.0];
        assert!(cfg.validate().is_err());
        let cfg = SimConfig {
            division_prob: 1.5,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SimConfig {
            polar_bodies: 1,
            polar_lifetime: 0,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SimConfig {
            n_frames: 400,
            division_prob: 0.5,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err(), "runaway growth must be rejected");
    }
}
