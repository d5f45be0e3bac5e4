//! View selection as a pairwise MRF over the face-adjacency graph.
//!
//! Data costs come from view quality, the smoothness term is a Potts penalty
//! on differing view ids, and the solver is synchronous min-sum loopy belief
//! propagation. Labels are global view ids, so a label is "the same" across
//! faces exactly when the view ids are equal.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::AdjacencyGraph;
use crate::par;
use crate::quality::QualityTable;

/// Guard added to both costs in the ratio test.
pub const RATIO_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MrfError {
    #[error("graph has {graph} faces but cost volume has {costs}")]
    FaceCountMismatch { graph: usize, costs: usize },
    #[error("face {face}: labels must be strictly ascending view ids with finite non-negative costs")]
    InvalidLabels { face: usize },
    #[error("face {face}: label {label:?} is not among its candidate views")]
    UnlistedLabel { face: usize, label: Option<u32> },
    #[error("labeling covers {got} faces, expected {expected}")]
    LabelingLength { got: usize, expected: usize },
    #[error("invalid solver parameter: {0}")]
    InvalidParams(String),
}

/// Per-face `(view id, cost)` lists, ascending by view id. An empty list
/// marks a face no view sees; it takes no part in the optimisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostVolume {
    faces: Vec<Vec<(u32, f64)>>,
}

impl CostVolume {
    pub fn new(faces: Vec<Vec<(u32, f64)>>) -> Result<Self, MrfError> {
        for (f, labels) in faces.iter().enumerate() {
            let sorted = labels.windows(2).all(|w| w[0].0 < w[1].0);
            let finite = labels.iter().all(|&(_, c)| c.is_finite() && c >= 0.0);
            if !sorted || !finite {
                return Err(MrfError::InvalidLabels { face: f });
            }
        }
        Ok(Self { faces })
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn labels(&self, face: usize) -> &[(u32, f64)] {
        &self.faces[face]
    }

    pub fn cost(&self, face: usize, view: u32) -> Option<f64> {
        let l = &self.faces[face];
        l.binary_search_by_key(&view, |e| e.0).ok().map(|i| l[i].1)
    }

    /// Faces with no candidate view.
    pub fn unlabeled_faces(&self) -> Vec<usize> {
        (0..self.faces.len()).filter(|&f| self.faces[f].is_empty()).collect()
    }

    /// Same volume with every cost multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            faces: self
                .faces
                .iter()
                .map(|l| l.iter().map(|&(v, c)| (v, c * s)).collect())
                .collect(),
        }
    }
}

/// Converts qualities to costs: `1 - Q / max Q` per face, so the best view
/// costs 0 and every cost lies in `[0, 1]`. Faces whose qualities are all
/// zero get cost 0 for every view.
pub fn build_data_costs(qt: &QualityTable) -> CostVolume {
    let faces = qt
        .faces
        .iter()
        .map(|entries| {
            let max_q = entries.iter().map(|e| e.q).fold(0.0, f64::max);
            let mut labels: Vec<(u32, f64)> = entries
                .iter()
                .map(|e| {
                    let c = if max_q > 0.0 { 1.0 - e.q / max_q } else { 0.0 };
                    (e.view, c.max(0.0))
                })
                .collect();
            labels.sort_by_key(|l| l.0);
            labels
        })
        .collect();
    CostVolume { faces }
}

/// Final per-face costs after message passing, ascending by view id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefVolume {
    pub faces: Vec<Vec<(u32, f64)>>,
}

impl BeliefVolume {
    /// Lowest-cost view per face; ties go to the smaller view id.
    pub fn argmin(&self) -> Vec<Option<u32>> {
        self.faces
            .iter()
            .map(|l| {
                l.iter()
                    .fold(None, |best: Option<(u32, f64)>, &(v, c)| match best {
                        Some((_, bc)) if bc <= c => best,
                        _ => Some((v, c)),
                    })
                    .map(|b| b.0)
            })
            .collect()
    }
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbpParams {
    /// Potts weight.
    pub lambda: f64,
    pub max_iters: usize,
    /// Early exit once no message entry changes by more than this.
    pub tolerance: f64,
    /// Weight of the previous message in each update, in `[0, 1)`. Plain
    /// synchronous updates oscillate with period two on bipartite loops
    /// such as grids; mixing in the old message damps that out without
    /// moving the fixed points.
    pub damping: f64,
}

impl Default for LbpParams {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            max_iters: 50,
            tolerance: 1e-9,
            damping: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbpStats {
    pub iterations: usize,
    pub final_change: f64,
    pub directed_edges: usize,
}

/// Directed message slots and, per face, the slots flowing into it.
struct MessageGraph {
    /// `(source, target)` per directed edge.
    edges: Vec<(usize, usize)>,
    /// Incoming directed-edge indices per face, ascending by source.
    incoming: Vec<Vec<usize>>,
}

impl MessageGraph {
    fn new(graph: &AdjacencyGraph, costs: &CostVolume) -> Self {
        let mut edges = Vec::new();
        for &(i, j) in graph.edges() {
            if costs.faces[i].is_empty() || costs.faces[j].is_empty() {
                continue;
            }
            edges.push((i, j));
            edges.push((j, i));
        }
        let mut incoming = vec![Vec::new(); graph.face_count()];
        for (e, &(_, t)) in edges.iter().enumerate() {
            incoming[t].push(e);
        }
        for inc in &mut incoming {
            inc.sort_by_key(|&e| edges[e].0);
        }
        Self { edges, incoming }
    }
}

/// One min-sum update of the message `source → target`, normalised so its
/// smallest entry is 0.
fn update_message(
    e: usize,
    mg: &MessageGraph,
    costs: &CostVolume,
    old: &[Vec<f64>],
    lambda: f64,
) -> Vec<f64> {
    let (src, dst) = mg.edges[e];
    let src_labels = &costs.faces[src];
    let dst_labels = &costs.faces[dst];
    let mut h: Vec<f64> = src_labels.iter().map(|l| l.1).collect();
    for &inc in &mg.incoming[src] {
        if mg.edges[inc].0 == dst {
            continue;
        }
        for (hk, m) in h.iter_mut().zip(&old[inc]) {
            *hk += m;
        }
    }
    let min_h = h.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out: Vec<f64> = dst_labels
        .iter()
        .map(|&(view, _)| {
            let switch = min_h + lambda;
            match src_labels.binary_search_by_key(&view, |l| l.0) {
                Ok(a) => h[a].min(switch),
                Err(_) => switch,
            }
        })
        .collect();
    let m = out.iter().copied().fold(f64::INFINITY, f64::min);
    for x in &mut out {
        *x -= m;
    }
    out
}

/// `a·old + (1 - a)·new`, renormalised to a zero minimum.
fn damp(old: &[f64], mut new: Vec<f64>, a: f64) -> Vec<f64> {
    if a == 0.0 {
        return new;
    }
    for (n, o) in new.iter_mut().zip(old) {
        *n = a * o + (1.0 - a) * *n;
    }
    let m = new.iter().copied().fold(f64::INFINITY, f64::min);
    for x in &mut new {
        *x -= m;
    }
    new
}

/// Synchronous min-sum loopy BP.
///
/// Every message of an iteration is computed from the previous iteration's
/// messages only, one slot per task, so results are bit-identical for any
/// worker count. With damping, one undamped pass follows the loop so the
/// returned messages sit on the update's fixed point rather than a damped
/// approximation of it; exact belief ties then stay exact.
pub fn lbp_solve(
    graph: &AdjacencyGraph,
    costs: &CostVolume,
    params: &LbpParams,
) -> Result<(BeliefVolume, LbpStats), MrfError> {
    if graph.face_count() != costs.face_count() {
        return Err(MrfError::FaceCountMismatch {
            graph: graph.face_count(),
            costs: costs.face_count(),
        });
    }
    if !(params.lambda >= 0.0 && params.lambda.is_finite()) {
        return Err(MrfError::InvalidParams(format!("lambda = {}", params.lambda)));
    }
    if !(0.0..1.0).contains(&params.damping) {
        return Err(MrfError::InvalidParams(format!("damping = {}", params.damping)));
    }
    let mg = MessageGraph::new(graph, costs);
    let mut msgs: Vec<Vec<f64>> = mg
        .edges
        .iter()
        .map(|&(_, t)| vec![0.0; costs.faces[t].len()])
        .collect();
    let mut iterations = 0;
    let mut final_change = 0.0;
    while iterations < params.max_iters.max(1) {
        let next = par::map_range(mg.edges.len(), |e| {
            let fresh = update_message(e, &mg, costs, &msgs, params.lambda);
            damp(&msgs[e], fresh, params.damping)
        });
        let change = next
            .iter()
            .zip(&msgs)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        msgs = next;
        iterations += 1;
        final_change = change;
        if change < params.tolerance {
            break;
        }
    }
    if params.damping > 0.0 {
        msgs = par::map_range(mg.edges.len(), |e| update_message(e, &mg, costs, &msgs, params.lambda));
    }
    let faces = par::map_range(costs.face_count(), |f| {
        let mut c: Vec<(u32, f64)> = costs.faces[f].clone();
        for &inc in &mg.incoming[f] {
            for (slot, m) in c.iter_mut().zip(&msgs[inc]) {
                slot.1 += m;
            }
        }
        c
    });
    Ok((
        BeliefVolume { faces },
        LbpStats {
            iterations,
            final_change,
            directed_edges: mg.edges.len(),
        },
    ))
}

/// MRF energy: data costs plus `lambda` per adjacency edge whose two faces
/// take different views. Faces without candidates must be labelled `None`
/// and edges touching them are skipped.
pub fn total_energy(
    graph: &AdjacencyGraph,
    costs: &CostVolume,
    lambda: f64,
    labeling: &[Option<u32>],
) -> Result<f64, MrfError> {
    if labeling.len() != costs.face_count() {
        return Err(MrfError::LabelingLength {
            got: labeling.len(),
            expected: costs.face_count(),
        });
    }
    let mut e = 0.0;
    for (f, &l) in labeling.iter().enumerate() {
        match (l, costs.faces[f].is_empty()) {
            (None, true) => {}
            (Some(v), false) => {
                e += costs
                    .cost(f, v)
                    .ok_or(MrfError::UnlistedLabel { face: f, label: l })?;
            }
            _ => return Err(MrfError::UnlistedLabel { face: f, label: l }),
        }
    }
    for &(i, j) in graph.edges() {
        if let (Some(a), Some(b)) = (labeling[i], labeling[j]) {
            if a != b {
                e += lambda;
            }
        }
    }
    Ok(e)
}

/// Ranked candidate views per face, ascending by cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub faces: Vec<Vec<(u32, f64)>>,
}

impl CandidateSet {
    pub fn contains(&self, face: usize, view: u32) -> bool {
        self.faces[face].iter().any(|c| c.0 == view)
    }

    pub fn untextured_count(&self) -> usize {
        self.faces.iter().filter(|c| c.is_empty()).count()
    }

    /// Histogram: `counts[k]` faces kept exactly `k` candidates.
    pub fn count_histogram(&self) -> Vec<usize> {
        let max = self.faces.iter().map(Vec::len).max().unwrap_or(0);
        let mut h = vec![0; max + 1];
        for c in &self.faces {
            h[c.len()] += 1;
        }
        h
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "face,rank,view,cost")?;
        for (f, c) in self.faces.iter().enumerate() {
            for (r, (v, cost)) in c.iter().enumerate() {
                writeln!(w, "{},{},{},{}", f, r + 1, v, cost)?;
            }
        }
        Ok(())
    }
}

/// Keeps up to `n` lowest-cost views per face, then truncates at the first
/// rank `i` where `(c[i-1] + ε) / (c[i] + ε) < ratio`.
pub fn extract_top_n(beliefs: &BeliefVolume, n: usize, ratio: f64) -> CandidateSet {
    let faces = beliefs
        .faces
        .iter()
        .map(|labels| {
            let mut sorted = labels.clone();
            sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            sorted.truncate(n.max(1));
            let keep = (1..sorted.len())
                .find(|&i| (sorted[i - 1].1 + RATIO_EPS) / (sorted[i].1 + RATIO_EPS) < ratio)
                .unwrap_or(sorted.len());
            sorted.truncate(keep);
            sorted
        })
        .collect();
    CandidateSet { faces }
}
