//! Cell lineage tracking by candidate-graph optimization.
//!
//! The pipeline: detections from a tracking frontend (or the built-in
//! synthetic generator) become a candidate graph, a weighted selection
//! objective picks a feasible lineage forest out of it via an exact
//! branch-and-bound solver, and the objective's weights are learned from
//! (sparse) ground truth with a structured SVM. Evaluation counts edge-level
//! and division-level errors and the usual graph-matching scores.

pub mod assignment;
pub mod eval;
pub mod graph;
pub mod io;
pub mod learn;
pub mod model;
pub mod sim;
pub mod solve;
