//! File formats and run configuration.
//!
//! Three text formats cover every artifact the pipeline touches: a flat
//! detections table (one row per candidate), a two-file track format for
//! lineage forests (segment topology plus node positions, the convention
//! tracking benchmarks use), and a TOML run configuration. Reports are JSON.
//! Every writer here produces output its own reader accepts, floats survive
//! the trip bit-exactly, and outputs contain nothing nondeterministic, so
//! identical inputs give byte-identical files.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::eval::{DetTraScores, ErrorCounts, DEFAULT_MATCH_RADIUS};
use crate::graph::GraphBuildConfig;
use crate::learn::{GridRow, HammingCosts, LearnConfig, DEFAULT_DIVISION_TOLERANCE};
use crate::model::{
    CellState, Detection, ForestNode, LineageForest, ModelError, StateScores, WeightVector,
};
use crate::sim::SimConfig;
use crate::solve::{SolveLimits, SolveReport, SolveStatus};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },
    #[error("{}: {msg}", path.display())]
    Config { path: PathBuf, msg: String },
    #[error("track {label} mixes polar and non-polar nodes; the track format flags whole segments")]
    MixedPolarTrack { label: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

// ---------------------------------------------------------------------------
// generic delimited tables

fn csv_line(e: &csv::Error) -> u64 {
    e.position().map_or(0, |p| p.line())
}

/// Reads a headered CSV into typed rows, keeping each row's line number for
/// diagnostics. The header must match `header` exactly.
fn read_rows<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<(u64, T)>, IoError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let got = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    if got.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!("header must be `{}`", header.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(path, csv_line(&e), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let row: T = record
            .deserialize(None)
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        rows.push((line, row));
    }
    Ok(rows)
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    wtr.write_record(header)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    for row in rows {
        wtr.serialize(row)
            .map_err(|e| parse_err(path, csv_line(&e), e.to_string()))?;
    }
    wtr.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

fn check_finite(path: &Path, line: u64, name: &str, v: f64) -> Result<(), IoError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(parse_err(path, line, format!("{name} is not finite")))
    }
}

// ---------------------------------------------------------------------------
// detections table

pub const DETECTIONS_HEADER: [&str; 13] = [
    "id",
    "frame",
    "z",
    "y",
    "x",
    "score",
    "s_parent",
    "s_daughter",
    "s_continue",
    "s_polar",
    "mz",
    "my",
    "mx",
];

#[derive(Serialize, Deserialize)]
struct DetectionRow {
    id: u64,
    frame: u32,
    z: f64,
    y: f64,
    x: f64,
    score: f64,
    s_parent: f64,
    s_daughter: f64,
    s_continue: f64,
    s_polar: f64,
    mz: f64,
    my: f64,
    mx: f64,
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<(), IoError> {
    let rows: Vec<DetectionRow> = detections
        .iter()
        .map(|d| DetectionRow {
            id: d.id,
            frame: d.frame,
            z: d.position[0],
            y: d.position[1],
            x: d.position[2],
            score: d.score,
            s_parent: d.state_scores.parent,
            s_daughter: d.state_scores.daughter,
            s_continue: d.state_scores.continuation,
            s_polar: d.state_scores.polar_body,
            mz: d.movement[0],
            my: d.movement[1],
            mx: d.movement[2],
        })
        .collect();
    write_rows(path, &DETECTIONS_HEADER, &rows)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>, IoError> {
    let rows: Vec<(u64, DetectionRow)> = read_rows(path, &DETECTIONS_HEADER)?;
    let mut seen = HashMap::with_capacity(rows.len());
    let mut out = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        if let Some(prev) = seen.insert(r.id, line) {
            return Err(parse_err(
                path,
                line,
                format!("duplicate id {} (first used on line {prev})", r.id),
            ));
        }
        for (name, v) in [
            ("z", r.z),
            ("y", r.y),
            ("x", r.x),
            ("score", r.score),
            ("s_parent", r.s_parent),
            ("s_daughter", r.s_daughter),
            ("s_continue", r.s_continue),
            ("s_polar", r.s_polar),
            ("mz", r.mz),
            ("my", r.my),
            ("mx", r.mx),
        ] {
            check_finite(path, line, name, v)?;
        }
        out.push(Detection::new(
            r.id,
            r.frame,
            [r.z, r.y, r.x],
            r.score,
            StateScores::new(r.s_parent, r.s_daughter, r.s_continue, r.s_polar),
            [r.mz, r.my, r.mx],
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// track files

pub const TRACKS_HEADER: [&str; 5] = ["label", "begin_frame", "end_frame", "parent_label", "polar"];
pub const TRACK_NODES_HEADER: [&str; 5] = ["label", "frame", "z", "y", "x"];

#[derive(Serialize, Deserialize)]
struct TrackRow {
    label: u64,
    begin_frame: u32,
    end_frame: u32,
    parent_label: u64,
    polar: u8,
}

#[derive(Serialize, Deserialize)]
struct TrackNodeRow {
    label: u64,
    frame: u32,
    z: f64,
    y: f64,
    x: f64,
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut os = stem.as_os_str().to_os_string();
    os.push(suffix);
    PathBuf::from(os)
}

pub fn tracks_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".tracks.csv")
}

pub fn track_nodes_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".nodes.csv")
}

/// Writes a lineage forest as `{stem}.tracks.csv` (one row per track: label,
/// frame span, parent track, polar flag) plus `{stem}.nodes.csv` (one row per
/// node: track label, frame, position). Node ids and cell states are not
/// stored; states are re-derived from topology on read, so forests whose
/// states disagree with their topology do not survive the trip.
pub fn write_tracks(stem: &Path, forest: &LineageForest) -> Result<(), IoError> {
    let mut by_track: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for v in 0..forest.node_count() {
        by_track.entry(forest.track_id(v)).or_default().push(v);
    }
    let mut tracks = Vec::with_capacity(by_track.len());
    let mut nodes = Vec::new();
    for (&label, members) in &by_track {
        // canonical node order sorts by frame, so each chain arrives in order
        let first = &forest.nodes()[members[0]];
        let last = &forest.nodes()[*members.last().expect("tracks are nonempty")];
        if members.iter().any(|&v| forest.nodes()[v].polar != first.polar) {
            return Err(IoError::MixedPolarTrack { label });
        }
        let parent_label = forest.parent(members[0]).map_or(0, |u| forest.track_id(u));
        tracks.push(TrackRow {
            label,
            begin_frame: first.frame,
            end_frame: last.frame,
            parent_label,
            polar: first.polar as u8,
        });
        for &v in members {
            let n = &forest.nodes()[v];
            nodes.push(TrackNodeRow {
                label,
                frame: n.frame,
                z: n.position[0],
                y: n.position[1],
                x: n.position[2],
            });
        }
    }
    write_rows(&tracks_path(stem), &TRACKS_HEADER, &tracks)?;
    write_rows(&track_nodes_path(stem), &TRACK_NODES_HEADER, &nodes)
}

struct TrackSpan {
    line: u64,
    begin: u32,
    end: u32,
    parent: u64,
    polar: bool,
}

/// Reads `{stem}.tracks.csv` + `{stem}.nodes.csv` back into a forest. Node
/// ids are assigned fresh in `(frame, label)` order; cell states come from
/// topology (a node with two children is a parent, a division's children are
/// daughters, everything else continues).
pub fn read_tracks(stem: &Path) -> Result<LineageForest, IoError> {
    let tpath = tracks_path(stem);
    let npath = track_nodes_path(stem);

    let mut spans: BTreeMap<u64, TrackSpan> = BTreeMap::new();
    for (line, r) in read_rows::<TrackRow>(&tpath, &TRACKS_HEADER)? {
        if r.label == 0 {
            return Err(parse_err(&tpath, line, "label 0 is reserved for `no parent`"));
        }
        if r.begin_frame > r.end_frame {
            return Err(parse_err(
                &tpath,
                line,
                format!(
                    "track {} begins at frame {} but ends at frame {}",
                    r.label, r.begin_frame, r.end_frame
                ),
            ));
        }
        if r.polar > 1 {
            return Err(parse_err(
                &tpath,
                line,
                format!("polar flag must be 0 or 1, got {}", r.polar),
            ));
        }
        let span = TrackSpan {
            line,
            begin: r.begin_frame,
            end: r.end_frame,
            parent: r.parent_label,
            polar: r.polar == 1,
        };
        if spans.insert(r.label, span).is_some() {
            return Err(parse_err(
                &tpath,
                line,
                format!("duplicate track label {}", r.label),
            ));
        }
    }
    let mut child_count: HashMap<u64, u32> = HashMap::new();
    for (&label, span) in &spans {
        if span.parent == 0 {
            continue;
        }
        let Some(parent) = spans.get(&span.parent) else {
            return Err(parse_err(
                &tpath,
                span.line,
                format!("track {label} references missing parent {}", span.parent),
            ));
        };
        if parent.end + 1 != span.begin {
            return Err(parse_err(
                &tpath,
                span.line,
                format!(
                    "track {label} begins at frame {} but its parent {} ends at frame {}",
                    span.begin, span.parent, parent.end
                ),
            ));
        }
        let n = child_count.entry(span.parent).or_insert(0);
        *n += 1;
        if *n > 2 {
            return Err(parse_err(
                &tpath,
                span.line,
                format!("track {} has more than two child tracks", span.parent),
            ));
        }
    }

    // one position per (label, frame), covering each track's span exactly
    let mut positions: HashMap<(u64, u32), [f64; 3]> = HashMap::new();
    for (line, r) in read_rows::<TrackNodeRow>(&npath, &TRACK_NODES_HEADER)? {
        for (name, v) in [("z", r.z), ("y", r.y), ("x", r.x)] {
            check_finite(&npath, line, name, v)?;
        }
        let Some(span) = spans.get(&r.label) else {
            return Err(parse_err(
                &npath,
                line,
                format!("node row references unknown track {}", r.label),
            ));
        };
        if r.frame < span.begin || r.frame > span.end {
            return Err(parse_err(
                &npath,
                line,
                format!(
                    "track {} covers frames {}..={} but has a node at frame {}",
                    r.label, span.begin, span.end, r.frame
                ),
            ));
        }
        if positions.insert((r.label, r.frame), [r.z, r.y, r.x]).is_some() {
            return Err(parse_err(
                &npath,
                line,
                format!("track {} has two nodes at frame {}", r.label, r.frame),
            ));
        }
    }
    for (&label, span) in &spans {
        for frame in span.begin..=span.end {
            if !positions.contains_key(&(label, frame)) {
                return Err(parse_err(
                    &npath,
                    0,
                    format!("track {label} lacks a node row for frame {frame}"),
                ));
            }
        }
    }

    // fresh ids in (frame, label) order, then edges, then states off topology
    let mut ids: HashMap<(u64, u32), u64> = HashMap::new();
    let mut keys: Vec<(u32, u64)> = spans
        .iter()
        .flat_map(|(&label, s)| (s.begin..=s.end).map(move |f| (f, label)))
        .collect();
    keys.sort_unstable();
    for (i, &(frame, label)) in keys.iter().enumerate() {
        ids.insert((label, frame), i as u64 + 1);
    }
    let mut edges: Vec<(u64, u64)> = Vec::new();
    for (&label, span) in &spans {
        for frame in span.begin..span.end {
            edges.push((ids[&(label, frame)], ids[&(label, frame + 1)]));
        }
        if span.parent != 0 {
            let pspan = &spans[&span.parent];
            edges.push((ids[&(span.parent, pspan.end)], ids[&(label, span.begin)]));
        }
    }
    let mut out_deg: HashMap<u64, u32> = HashMap::new();
    let mut parent_of: HashMap<u64, u64> = HashMap::new();
    for &(a, b) in &edges {
        *out_deg.entry(a).or_insert(0) += 1;
        parent_of.insert(b, a);
    }
    let nodes = keys
        .iter()
        .map(|&(frame, label)| {
            let id = ids[&(label, frame)];
            let divides = out_deg.get(&id).copied().unwrap_or(0) == 2;
            let state = if divides {
                CellState::Parent
            } else if parent_of
                .get(&id)
                .is_some_and(|p| out_deg.get(p).copied().unwrap_or(0) == 2)
            {
                CellState::Daughter
            } else {
                CellState::Continuation
            };
            ForestNode {
                id,
                frame,
                position: positions[&(label, frame)],
                state,
                polar: spans[&label].polar,
            }
        })
        .collect();
    Ok(LineageForest::new(nodes, edges)?)
}

// ---------------------------------------------------------------------------
// run configuration

/// Temporal window shape for block-wise solving.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub block_len: u32,
    pub overlap: u32,
}

/// `[solve]` section: optional wall-clock budget and optional block-wise
/// window shape (absent = one global solve).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveSection {
    pub timeout_seconds: Option<f64>,
    pub blocks: Option<BlockSpec>,
}

impl SolveSection {
    pub fn limits(&self) -> SolveLimits {
        SolveLimits {
            timeout_seconds: self.timeout_seconds,
        }
    }
}

/// `[evaluate]` section. `match_radius` defaults to 15 world units,
/// `division_tolerance` to 1 frame; `filter_polar` drops polar-flagged nodes
/// from both sides before matching (default off).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub match_radius: f64,
    pub division_tolerance: u32,
    pub filter_polar: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            match_radius: DEFAULT_MATCH_RADIUS,
            division_tolerance: DEFAULT_DIVISION_TOLERANCE,
            filter_polar: false,
        }
    }
}

/// One TOML file configuring a whole run. Every key is optional except
/// `[graph].max_edge_distance`, which commands that build a candidate graph
/// insist on; unknown keys are rejected everywhere. Defaults: see each
/// section's type (`SimConfig`, `GraphBuildConfig`, `LearnConfig`,
/// `HammingCosts`, `SolveSection`, `EvalSection`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides `[simulate].seed` when set; the CLI `--seed` flag wins over both.
    pub seed: Option<u64>,
    /// Where outputs land; the CLI `--out` flag wins.
    pub out_dir: Option<PathBuf>,
    /// Weights for solving when none are learned in the same run.
    pub weights: Option<WeightVector>,
    pub simulate: SimConfig,
    pub graph: Option<GraphBuildConfig>,
    pub solve: SolveSection,
    pub learn: LearnConfig,
    /// Hamming costs applied inside learning.
    pub delta: HammingCosts,
    pub evaluate: EvalSection,
}

impl RunConfig {
    /// The seed every stage derives from.
    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(self.simulate.seed)
    }
}

pub fn read_run_config(path: &Path) -> Result<RunConfig, IoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    toml::from_str(&text).map_err(|e| IoError::Config {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn write_run_config(path: &Path, cfg: &RunConfig) -> Result<(), IoError> {
    let text = toml::to_string_pretty(cfg).map_err(|e| IoError::Config {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_weights(path: &Path) -> Result<WeightVector, IoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Config {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn write_weights(path: &Path, w: &WeightVector) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(w).expect("weights serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// run report

/// Solve outcome as reported: the solver's numbers plus the decoded forest's
/// shape. Wall-clock time stays out so reports are byte-stable across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveSummary {
    pub objective: f64,
    pub status: SolveStatus,
    pub candidate_nodes: usize,
    pub candidate_edges: usize,
    pub stitch_gap: f64,
    pub selected_nodes: usize,
    pub selected_edges: usize,
    pub divisions: usize,
}

impl SolveSummary {
    pub fn new(report: &SolveReport, lineage: &LineageForest) -> Self {
        Self {
            objective: report.objective,
            status: report.status,
            candidate_nodes: report.node_count,
            candidate_edges: report.edge_count,
            stitch_gap: report.stitch_gap,
            selected_nodes: lineage.node_count(),
            selected_edges: lineage.edges().len(),
            divisions: lineage.divisions().count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnSummary {
    pub weights: WeightVector,
    pub best_loss: f64,
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub counts: ErrorCounts,
    pub scores: DetTraScores,
    pub tracklet_fraction: Vec<Option<f64>>,
}

/// The single machine-readable result of a CLI run; sections appear when the
/// subcommand produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct RunReport {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightVector>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learn: Option<LearnSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<GridRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSummary>,
}

pub fn report_to_json(report: &RunReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<(), IoError> {
    fs::write(path, report_to_json(report)).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{render_detections, simulate_gt};
    use tempfile::TempDir;

    fn sim_pair(seed: u64) -> (LineageForest, Vec<Detection>) {
        let cfg = SimConfig {
            seed,
            n_frames: 6,
            initial_cells: 2,
            division_prob: 0.2,
            polar_bodies: 1,
            polar_lifetime: 4,
            dropout_prob: 0.1,
            clutter_rate: 1.5,
            jitter_std: 0.4,
            ..SimConfig::default()
        };
        let gt = simulate_gt(&cfg).unwrap();
        let dets = render_detections(&gt, &cfg).unwrap();
        (gt, dets)
    }

    #[test]
    fn detections_roundtrip_exactly() {
        let (_, dets) = sim_pair(7);
        assert!(!dets.is_empty());
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("d.csv");
        write_detections(&path, &dets).unwrap();
        let back = read_detections(&path).unwrap();
        assert_eq!(dets, back);
        // and the text itself is stable under a rewrite
        let first = fs::read(&path).unwrap();
        write_detections(&path, &back).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
    }

    #[test]
    fn empty_detections_table_is_a_header() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("d.csv");
        write_detections(&path, &[]).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "id,frame,z,y,x,score,s_parent,s_daughter,s_continue,s_polar,mz,my,mx\n"
        );
        assert_eq!(read_detections(&path).unwrap(), Vec::new());
    }

    #[test]
    fn detections_parse_errors_name_the_line() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("d.csv");
        let header = DETECTIONS_HEADER.join(",");

        fs::write(&path, format!("{header}\n1,0,1,2,3,0.9,0.1,0.1,0.8,0,0,0,oops\n")).unwrap();
        let err = read_detections(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "line missing in: {err}");

        fs::write(
            &path,
            format!("{header}\n1,0,1,2,3,0.9,0.1,0.1,0.8,0,0,0,0\n1,1,1,2,3,0.9,0.1,0.1,0.8,0,0,0,0\n"),
        )
        .unwrap();
        let err = read_detections(&path).unwrap_err().to_string();
        assert!(err.contains(":3:") && err.contains("duplicate id 1"), "{err}");

        fs::write(&path, format!("{header}\n1,0,1,2,NaN,0.9,0.1,0.1,0.8,0,0,0,0\n")).unwrap();
        let err = read_detections(&path).unwrap_err().to_string();
        assert!(err.contains("x is not finite"), "{err}");

        fs::write(&path, "id,frame\n").unwrap();
        let err = read_detections(&path).unwrap_err().to_string();
        assert!(err.contains(":1:") && err.contains("header"), "{err}");

        fs::write(&path, format!("{header}\n1,0,1,2\n")).unwrap();
        let err = read_detections(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn tracks_roundtrip_structurally() {
        let (gt, _) = sim_pair(11);
        assert!(gt.divisions().next().is_some(), "fixture needs a division");
        assert!(gt.nodes().iter().any(|n| n.polar), "fixture needs a polar body");
        let dir = TempDir::new().unwrap();
        let stem = dir.path().join("gt");
        write_tracks(&stem, &gt).unwrap();
        let back = read_tracks(&stem).unwrap();
        assert!(gt.structurally_equal(&back));
        // byte stability through a full trip
        let t1 = fs::read(tracks_path(&stem)).unwrap();
        let n1 = fs::read(track_nodes_path(&stem)).unwrap();
        write_tracks(&stem, &back).unwrap();
        assert_eq!(t1, fs::read(tracks_path(&stem)).unwrap());
        assert_eq!(n1, fs::read(track_nodes_path(&stem)).unwrap());
    }

    #[test]
    fn track_parse_errors_name_the_labels() {
        let dir = TempDir::new().unwrap();
        let stem = dir.path().join("t");
        let tracks = tracks_path(&stem);
        let nodes = track_nodes_path(&stem);
        fs::write(
            &nodes,
            "label,frame,z,y,x\n1,0,0,0,0\n1,1,0,0,0\n2,3,1,1,1\n",
        )
        .unwrap();

        fs::write(&tracks, "label,begin_frame,end_frame,parent_label,polar\n1,0,1,0,0\n2,3,3,1,0\n").unwrap();
        let err = read_tracks(&stem).unwrap_err().to_string();
        assert!(
            err.contains("track 2 begins at frame 3 but its parent 1 ends at frame 1"),
            "{err}"
        );

        fs::write(&tracks, "label,begin_frame,end_frame,parent_label,polar\n1,0,1,9,0\n").unwrap();
        let err = read_tracks(&stem).unwrap_err().to_string();
        assert!(err.contains("track 1 references missing parent 9"), "{err}");

        fs::write(&tracks, "label,begin_frame,end_frame,parent_label,polar\n1,2,1,0,0\n").unwrap();
        let err = read_tracks(&stem).unwrap_err().to_string();
        assert!(err.contains("begins at frame 2 but ends at frame 1"), "{err}");

        fs::write(&tracks, "label,begin_frame,end_frame,parent_label,polar\n1,0,2,0,0\n").unwrap();
        let err = read_tracks(&stem).unwrap_err().to_string();
        assert!(err.contains("track 1 lacks a node row for frame 2"), "{err}");
    }

    #[test]
    fn more_than_two_children_is_rejected() {
        let dir = TempDir::new().unwrap();
        let stem = dir.path().join("t");
        fs::write(
            tracks_path(&stem),
            "label,begin_frame,end_frame,parent_label,polar\n1,0,0,0,0\n2,1,1,1,0\n3,1,1,1,0\n4,1,1,1,0\n",
        )
        .unwrap();
        fs::write(
            track_nodes_path(&stem),
            "label,frame,z,y,x\n1,0,0,0,0\n2,1,1,0,0\n3,1,0,1,0\n4,1,0,0,1\n",
        )
        .unwrap();
        let err = read_tracks(&stem).unwrap_err().to_string();
        assert!(err.contains("track 1 has more than two child tracks"), "{err}");
    }

    #[test]
    fn single_child_link_reads_as_one_continued_track() {
        // a foreign file may split a plain continuation into two segments;
        // reading merges it into one track with a continuation edge
        let dir = TempDir::new().unwrap();
        let stem = dir.path().join("t");
        fs::write(
            tracks_path(&stem),
            "label,begin_frame,end_frame,parent_label,polar\n1,0,0,0,0\n2,1,1,1,0\n",
        )
        .unwrap();
        fs::write(track_nodes_path(&stem), "label,frame,z,y,x\n1,0,0,0,0\n2,1,3,0,0\n").unwrap();
        let forest = read_tracks(&stem).unwrap();
        assert_eq!(forest.node_count(), 2);
        assert_eq!(forest.edges().len(), 1);
        assert!(forest.nodes().iter().all(|n| n.state == CellState::Continuation));
        assert_eq!(forest.track_id(0), forest.track_id(1));
    }

    #[test]
    fn run_config_defaults_and_strictness() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.evaluate.match_radius, DEFAULT_MATCH_RADIUS);
        assert_eq!(cfg.evaluate.division_tolerance, 1);
        assert_eq!(cfg.learn.lambda, 1e-3);
        assert_eq!(cfg.delta.node.fp, 1.0);
        assert!(cfg.graph.is_none());

        let cfg: RunConfig = toml::from_str(
            "[graph]\nmax_edge_distance = 12.5\n\n[solve]\nblocks = { block_len = 10, overlap = 2 }\n",
        )
        .unwrap();
        let g = cfg.graph.unwrap();
        assert_eq!(g.max_edge_distance, 12.5);
        assert_eq!(g.score_threshold, 0.2);
        assert_eq!(g.max_edge_candidates, 4);
        assert_eq!(cfg.solve.blocks, Some(BlockSpec { block_len: 10, overlap: 2 }));

        let err = toml::from_str::<RunConfig>("oops = 1\n").unwrap_err().to_string();
        assert!(err.contains("oops"), "{err}");
        let err = toml::from_str::<RunConfig>("[simulate]\nframes = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("frames"), "{err}");
    }

    #[test]
    fn run_config_roundtrips_through_toml() {
        let mut cfg = RunConfig {
            seed: Some(9),
            out_dir: Some(PathBuf::from("runs/demo")),
            weights: Some(WeightVector::from_array([-1.0, -0.5, 0.25, 0.1, 0.0, -0.1, -0.2, 0.75])),
            ..RunConfig::default()
        };
        cfg.graph = Some(GraphBuildConfig::new(8.0));
        cfg.solve.blocks = Some(BlockSpec { block_len: 6, overlap: 2 });
        cfg.simulate.n_frames = 11;
        cfg.learn.max_iters = 17;
        cfg.delta.edge.fp = 100.0;
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("run.toml");
        write_run_config(&path, &cfg).unwrap();
        assert_eq!(read_run_config(&path).unwrap(), cfg);
    }

    #[test]
    fn weights_roundtrip_through_json() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("w.json");
        let w = WeightVector::from_array([-0.4, -0.4, 0.1, 0.1, -0.1, -0.1, -0.2, 0.5]);
        write_weights(&path, &w).unwrap();
        assert_eq!(read_weights(&path).unwrap(), w);
    }

    #[test]
    fn reports_serialize_deterministically_without_wall_times() {
        let report = RunReport {
            seed: 3,
            weights: Some(WeightVector::zeros()),
            ..RunReport::default()
        };
        let a = report_to_json(&report);
        let b = report_to_json(&report);
        assert_eq!(a, b);
        assert!(!a.contains("wall"));
        let parsed: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(parsed["seed"], 3);
        assert!(parsed.get("solve").is_none());
    }
}
