//! Construction of the paired visual and categorical graphs.
//!
//! Both graphs are complete and directed over the same candidates. Node
//! features fuse an object representation (visual descriptor or
//! category/color embedding), spatial features and the best-matching noun
//! chunk; edge features fuse both endpoints and their spatial features.

use grounder_autodiff::{ParameterStore, Tape, Var};

use crate::geometry::BBox;
use crate::synth::CandidateObject;
use crate::weights::{GraphParams, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GraphKind {
    Visual,
    Categorical,
}

impl GraphKind {
    pub fn prefix(self) -> &'static str {
        match self {
            GraphKind::Visual => "visual",
            GraphKind::Categorical => "categorical",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Graph {
    pub kind: GraphKind,
    pub nodes: Vec<Var>,
    /// `edges[i][j]` for `i != j` once built; the diagonal stays `None`.
    pub edges: Vec<Vec<Option<Var>>>,
    pub gates: Vec<bool>,
    /// Index of the noun chunk matched to each node.
    pub matched_chunks: Vec<usize>,
}

impl Graph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge(&self, i: usize, j: usize) -> Var {
        self.edges[i][j].expect("edge not built")
    }

    /// Cached edge feature, computed from the current node features on
    /// first use.
    pub fn edge_or_build(
        &mut self,
        tape: &mut Tape<'_>,
        params: &GraphParams,
        spatial: &[Var],
        i: usize,
        j: usize,
    ) -> Var {
        if let Some(e) = self.edges[i][j] {
            return e;
        }
        let e = edge_feature(tape, params, &self.nodes, spatial, i, j);
        self.edges[i][j] = Some(e);
        e
    }

    /// Replaces node `i` and drops the cached edges touching it.
    pub fn update_node(&mut self, i: usize, v: Var) {
        self.nodes[i] = v;
        for j in 0..self.nodes.len() {
            self.edges[i][j] = None;
            self.edges[j][i] = None;
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().flatten().filter(|e| e.is_some()).count()
    }
}

/// Both graphs over the same candidates; a disabled graph is `None`.
/// Edges are built lazily by the reasoner.
#[derive(Debug, Clone)]
pub struct BimodalGraph {
    pub visual: Option<Graph>,
    pub categorical: Option<Graph>,
    pub spatial: Vec<Var>,
}

impl BimodalGraph {
    pub fn get(&self, kind: GraphKind) -> Option<&Graph> {
        match kind {
            GraphKind::Visual => self.visual.as_ref(),
            GraphKind::Categorical => self.categorical.as_ref(),
        }
    }
}

/// `[x, y, w, h, w*h]` before projection.
pub fn spatial_input(b: &BBox) -> [f64; 5] {
    [b.cx, b.cy, b.w, b.h, b.w * b.h]
}

pub fn spatial_features(tape: &mut Tape<'_>, params: &ModelParams, b: &BBox) -> Var {
    let raw = tape.constant(spatial_input(b).to_vec());
    tape.matvec(params.spatial, raw)
}

/// Chunk similarity scores of one object and the index of the best chunk
/// (lowest index on ties). A discrete decision: evaluated outside the tape.
pub fn chunk_match(
    store: &ParameterStore,
    params: &GraphParams,
    object: &[f64],
    chunks: &[&[f64]],
) -> (usize, Vec<f64>) {
    let w_obj = store.get(params.match_object);
    let w_text = store.get(params.match_text);
    let w_score = store.get(params.match_score);
    let obj_proj = matvec(w_obj.data(), w_obj.cols(), object);
    let scores: Vec<f64> = chunks
        .iter()
        .map(|chunk| {
            let text_proj = matvec(w_text.data(), w_text.cols(), chunk);
            let hidden: Vec<f64> = obj_proj
                .iter()
                .zip(&text_proj)
                .map(|(a, b)| (a + b).tanh())
                .collect();
            dot(w_score.data(), &hidden)
        })
        .collect();
    (argmax(&scores), scores)
}

fn matvec(w: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    w.chunks_exact(cols).map(|row| dot(row, x)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Object representation feeding the node features: the visual descriptor,
/// or the concatenated category and color embeddings.
pub fn object_features(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    kind: GraphKind,
    obj: &CandidateObject,
) -> Var {
    match kind {
        GraphKind::Visual => tape.constant(obj.descriptor.clone()),
        GraphKind::Categorical => {
            let cat = tape.row(params.category_embedding, obj.category);
            let color = tape.row(params.color_embedding, obj.color);
            tape.concat(&[cat, color])
        }
    }
}

/// Edge feature of the ordered pair `(i, j)` from the current node features.
pub fn edge_feature(
    tape: &mut Tape<'_>,
    params: &GraphParams,
    nodes: &[Var],
    spatial: &[Var],
    i: usize,
    j: usize,
) -> Var {
    let input = tape.concat(&[nodes[i], nodes[j], spatial[i], spatial[j]]);
    tape.matvec(params.edge_weight, input)
}

/// Node features only; edges are left empty for lazy construction.
pub fn build_nodes(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    kind: GraphKind,
    objects: &[CandidateObject],
    spatial: &[Var],
    chunks: &[Var],
) -> Graph {
    assert!(!chunks.is_empty(), "language graph has no chunks");
    let gp = params.graph(kind);
    let store = tape.params();
    let chunk_values: Vec<Vec<f64>> = chunks.iter().map(|c| tape.value(*c).to_vec()).collect();
    let chunk_refs: Vec<&[f64]> = chunk_values.iter().map(Vec::as_slice).collect();
    let bias = tape.param(gp.node_bias);

    let mut nodes = Vec::with_capacity(objects.len());
    let mut matched_chunks = Vec::with_capacity(objects.len());
    for (i, obj) in objects.iter().enumerate() {
        let o = object_features(tape, params, kind, obj);
        let (k, _) = chunk_match(store, gp, tape.value(o), &chunk_refs);
        matched_chunks.push(k);
        let input = tape.concat(&[o, spatial[i], chunks[k]]);
        let proj = tape.matvec(gp.node_weight, input);
        nodes.push(tape.add(proj, bias));
    }
    let k = objects.len();
    Graph {
        kind,
        nodes,
        edges: vec![vec![None; k]; k],
        gates: vec![false; k],
        matched_chunks,
    }
}

/// Complete directed graph: node features plus every ordered-pair edge.
pub fn build_graph(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    kind: GraphKind,
    objects: &[CandidateObject],
    spatial: &[Var],
    chunks: &[Var],
) -> Graph {
    let mut graph = build_nodes(tape, params, kind, objects, spatial, chunks);
    let gp = params.graph(kind);
    for i in 0..graph.len() {
        for j in 0..graph.len() {
            if i != j {
                graph.edges[i][j] = Some(edge_feature(tape, gp, &graph.nodes, spatial, i, j));
            }
        }
    }
    graph
}

pub fn build_visual_graph(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    objects: &[CandidateObject],
    spatial: &[Var],
    chunks: &[Var],
) -> Graph {
    build_graph(tape, params, GraphKind::Visual, objects, spatial, chunks)
}

pub fn build_categorical_graph(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    objects: &[CandidateObject],
    spatial: &[Var],
    chunks: &[Var],
) -> Graph {
    build_graph(
        tape,
        params,
        GraphKind::Categorical,
        objects,
        spatial,
        chunks,
    )
}

pub fn build_bimodal(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    objects: &[CandidateObject],
    chunks: &[Var],
    visual: bool,
    categorical: bool,
) -> BimodalGraph {
    let spatial: Vec<Var> = objects
        .iter()
        .map(|o| spatial_features(tape, params, &o.bbox))
        .collect();
    let visual =
        visual.then(|| build_nodes(tape, params, GraphKind::Visual, objects, &spatial, chunks));
    let categorical = categorical.then(|| {
        build_nodes(
            tape,
            params,
            GraphKind::Categorical,
            objects,
            &spatial,
            chunks,
        )
    });
    BimodalGraph {
        visual,
        categorical,
        spatial,
    }
}
