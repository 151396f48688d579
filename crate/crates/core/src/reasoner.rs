//! Sub-expression-guided reasoning over the bimodal graphs.
//!
//! Each step scores every node against the current sub-expression, gates
//! nodes whose score beats the mean, extracts the shared active sub-graph,
//! weights its nodes and retained edges, and updates active node features
//! by weighted message passing. Inactive nodes keep their tape handle, so
//! their features stay bit-identical.
//!
//! Discrete choices (gates, edge retention, max branches) are read from
//! forward values and enter the tape as constants. Every such choice is
//! recorded in [`ReasonOutput::decisions`] so gradient checks can detect
//! perturbations that flip one.

use grounder_autodiff::{Tape, Var};

use crate::encoder::{encode_visited, LanguageEncoding};
use crate::graph::{argmax, BimodalGraph, Graph, GraphKind};
use crate::parser::SubExpression;
use crate::weights::{GraphParams, ModelParams, StepParams};

/// Correlation score `τ_i` of every node with the clause's two chunks, as
/// one-element tape values. Single-chunk clauses skip the max.
pub fn correlation_scores(
    tape: &mut Tape<'_>,
    params: &GraphParams,
    nodes: &[Var],
    gamma1: Var,
    gamma2: Var,
) -> Vec<Var> {
    let single = gamma1 == gamma2;
    let t1 = tape.matvec(params.gate_text, gamma1);
    let t2 = if single {
        t1
    } else {
        tape.matvec(params.gate_text, gamma2)
    };
    nodes
        .iter()
        .map(|&v| {
            let h1 = tape.add(v, t1);
            let h1 = tape.tanh(h1);
            let s1 = tape.matvec(params.gate_score, h1);
            if single {
                return s1;
            }
            let h2 = tape.add(v, t2);
            let h2 = tape.tanh(h2);
            let s2 = tape.matvec(params.gate_score, h2);
            tape.max2(s1, s2)
        })
        .collect()
}

/// `d_i = τ_i > mean(τ)`. When nothing qualifies the first maximum is
/// switched on, so at least one gate is always open.
pub fn apply_gate(tau: &[f64]) -> Vec<bool> {
    let mean = tau.iter().sum::<f64>() / tau.len() as f64;
    let mut gates: Vec<bool> = tau.iter().map(|&t| t > mean).collect();
    if !gates.contains(&true) {
        gates[argmax(tau)] = true;
    }
    gates
}

/// How the active set of a step was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveSource {
    /// Nodes open in both graphs (or in the only enabled graph).
    Intersection,
    /// No node open in both; the categorical gates alone.
    Categorical,
    /// Nothing open at all; the best categorical node.
    Argmax,
    /// Gating disabled: every node.
    All,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubGraph {
    /// Sorted node indices shared by both graphs.
    pub active: Vec<usize>,
    pub source: ActiveSource,
}

impl SubGraph {
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }
}

/// Active index set from the gates of the enabled graphs. `fallback_tau`
/// picks the node when no gate is open (categorical scores when that
/// graph is enabled).
pub fn build_sub_graphs(
    visual: Option<&[bool]>,
    categorical: Option<&[bool]>,
    fallback_tau: &[f64],
) -> SubGraph {
    let open = |g: &[bool]| -> Vec<usize> { (0..g.len()).filter(|&i| g[i]).collect() };
    let (active, source) = match (visual, categorical) {
        (Some(a), Some(c)) => {
            let both: Vec<usize> = (0..a.len()).filter(|&i| a[i] && c[i]).collect();
            if !both.is_empty() {
                (both, ActiveSource::Intersection)
            } else {
                (open(c), ActiveSource::Categorical)
            }
        }
        (Some(g), None) | (None, Some(g)) => (open(g), ActiveSource::Intersection),
        (None, None) => panic!("at least one graph must be enabled"),
    };
    if active.is_empty() {
        SubGraph {
            active: vec![argmax(fallback_tau)],
            source: ActiveSource::Argmax,
        }
    } else {
        SubGraph { active, source }
    }
}

/// Softmax of the active nodes' scores, aligned with `active`.
pub fn node_weights(tape: &mut Tape<'_>, tau: &[Var], active: &[usize]) -> Var {
    let scores: Vec<Var> = active.iter().map(|&i| tau[i]).collect();
    let joined = tape.concat(&scores);
    tape.softmax(joined)
}

/// Which outgoing edges of one node survive: those scoring strictly above
/// the mean `ξ` of the node's outgoing scores, or all of them without
/// `threshold`.
pub fn retained_edges(outgoing: &[f64], threshold: bool) -> Vec<bool> {
    let mean = outgoing.iter().sum::<f64>() / outgoing.len() as f64;
    outgoing.iter().map(|&s| !threshold || s > mean).collect()
}

/// Edge weights of a sub-graph: `weights[a][b]` is the weight of the edge
/// from `active[a]` to `active[b]`, `None` when the edge is not retained.
#[derive(Debug, Clone)]
pub struct EdgeWeights {
    pub weights: Vec<Vec<Option<Var>>>,
    /// Raw scores `μ_ij`, same layout; the diagonal is 0.
    pub scores: Vec<Vec<f64>>,
}

impl EdgeWeights {
    /// Retention pattern, row by row.
    pub fn retained(&self) -> impl Iterator<Item = bool> + '_ {
        self.weights.iter().flatten().map(Option::is_some)
    }
}

/// Scores every ordered active pair against the visited-set encoding and
/// normalizes, per source node, over the edges scoring above that node's
/// mean outgoing score. With `threshold` off every edge is kept.
pub fn edge_weights(
    tape: &mut Tape<'_>,
    params: &GraphParams,
    graph: &mut Graph,
    spatial: &[Var],
    active: &[usize],
    visited: Var,
    threshold: bool,
) -> EdgeWeights {
    let m = active.len();
    let mut weights = vec![vec![None; m]; m];
    let mut scores = vec![vec![0.0; m]; m];
    if m < 2 {
        return EdgeWeights { weights, scores };
    }
    let context = tape.matvec(params.edge_context, visited);
    for a in 0..m {
        let mut vars = Vec::with_capacity(m - 1);
        for b in 0..m {
            if a == b {
                continue;
            }
            let e = graph.edge_or_build(tape, params, spatial, active[a], active[b]);
            let h = tape.add(e, context);
            let h = tape.tanh(h);
            let s = tape.matvec(params.edge_score, h);
            scores[a][b] = tape.scalar(s);
            vars.push((b, s));
        }
        let outgoing: Vec<f64> = vars.iter().map(|&(b, _)| scores[a][b]).collect();
        let keep = retained_edges(&outgoing, threshold);
        let kept: Vec<(usize, Var)> = vars
            .into_iter()
            .zip(keep)
            .filter_map(|(e, k)| k.then_some(e))
            .collect();
        if kept.is_empty() {
            continue;
        }
        let joined: Vec<Var> = kept.iter().map(|&(_, s)| s).collect();
        let joined = tape.concat(&joined);
        let soft = tape.softmax(joined);
        for (slot, &(b, _)) in kept.iter().enumerate() {
            weights[a][b] = Some(tape.index(soft, slot));
        }
    }
    EdgeWeights { weights, scores }
}

/// One message-passing update of the active nodes. Every new feature is
/// computed from the previous step's features before any is replaced.
pub fn message_pass(
    tape: &mut Tape<'_>,
    params: &StepParams,
    graph: &mut Graph,
    active: &[usize],
    node_weights: Var,
    edges: &EdgeWeights,
) {
    let m = active.len();
    let w: Vec<Var> = (0..m).map(|a| tape.index(node_weights, a)).collect();
    let neighbor_bias = tape.param(params.neighbor_bias);
    let self_bias = tape.param(params.self_bias);

    // W̃ v_j w_j + b̃ for every node that sends a retained edge.
    let mut sent: Vec<Option<Var>> = vec![None; m];
    for b in 0..m {
        if (0..m).any(|a| edges.weights[a][b].is_some()) {
            let p = tape.matvec(params.neighbor, graph.nodes[active[b]]);
            let p = tape.scale(p, w[b]);
            sent[b] = Some(tape.add(p, neighbor_bias));
        }
    }

    let mut updated = Vec::with_capacity(m);
    for a in 0..m {
        let old = graph.nodes[active[a]];
        let own = tape.matvec(params.self_loop, old);
        let own = tape.scale(own, w[a]);
        let own = tape.add(own, self_bias);
        let mut terms = vec![own];
        for b in 0..m {
            if let Some(wab) = edges.weights[a][b] {
                let msg = sent[b].expect("sender computed");
                terms.push(tape.scale(msg, wab));
            }
        }
        let inner = if terms.len() == 1 {
            own
        } else {
            tape.sum(&terms)
        };
        let delta = tape.matvec(params.update, inner);
        updated.push(tape.add(delta, old));
    }
    for (a, v) in updated.into_iter().enumerate() {
        graph.update_node(active[a], v);
    }
}

/// Per-graph record of one step.
#[derive(Debug, Clone)]
pub struct GraphStep {
    pub tau: Vec<f64>,
    pub gates: Vec<bool>,
    /// Aligned with the step's active set.
    pub node_weights: Vec<f64>,
    /// `edge_weights[a][b]` over the active set; 0 for dropped edges.
    pub edge_weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct StepTrace {
    /// 1-based step number.
    pub step: usize,
    /// Clause index of the guiding sub-expression.
    pub clause: usize,
    pub active: Vec<usize>,
    pub source: ActiveSource,
    pub visual: Option<GraphStep>,
    pub categorical: Option<GraphStep>,
}

impl StepTrace {
    pub fn graph(&self, kind: GraphKind) -> Option<&GraphStep> {
        match kind {
            GraphKind::Visual => self.visual.as_ref(),
            GraphKind::Categorical => self.categorical.as_ref(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReasonOutput {
    pub trace: Vec<StepTrace>,
    /// Flattened discrete decisions; equal signatures mean the same
    /// piecewise-smooth branch of the model.
    pub decisions: Vec<u64>,
}

struct Scored {
    tau_vars: Vec<Var>,
    tau: Vec<f64>,
    gates: Vec<bool>,
}

/// Runs one reasoning step per sub-expression, in the given order. With
/// `dgc` off every gate is open, edges are conditioned on the whole
/// expression and no edge is dropped.
pub fn reason(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    graphs: &mut BimodalGraph,
    language: &LanguageEncoding,
    subs: &[SubExpression],
    dgc: bool,
) -> ReasonOutput {
    assert!(!subs.is_empty(), "at least one sub-expression is required");
    let BimodalGraph {
        visual,
        categorical,
        spatial,
    } = graphs;
    let mut trace = Vec::with_capacity(subs.len());
    let mut decisions = Vec::new();

    for (k, sub) in subs.iter().enumerate() {
        let step = k + 1;
        let (g1, g2) = language.gammas(sub);
        let score = |tape: &mut Tape<'_>, graph: &mut Option<Graph>| {
            graph.as_mut().map(|g| {
                g.gates.iter_mut().for_each(|d| *d = false);
                let tau_vars = correlation_scores(tape, params.graph(g.kind), &g.nodes, g1, g2);
                let tau: Vec<f64> = tau_vars.iter().map(|&t| tape.scalar(t)).collect();
                let gates = if dgc {
                    apply_gate(&tau)
                } else {
                    vec![true; tau.len()]
                };
                g.gates.clone_from(&gates);
                Scored {
                    tau_vars,
                    tau,
                    gates,
                }
            })
        };
        let sv = score(tape, visual);
        let sc = score(tape, categorical);

        let sub_graph = if dgc {
            let fallback = sc.as_ref().or(sv.as_ref()).map(|s| s.tau.as_slice());
            build_sub_graphs(
                sv.as_ref().map(|s| s.gates.as_slice()),
                sc.as_ref().map(|s| s.gates.as_slice()),
                fallback.expect("a graph is enabled"),
            )
        } else {
            let n = sv.as_ref().or(sc.as_ref()).map_or(0, |s| s.tau.len());
            SubGraph {
                active: (0..n).collect(),
                source: ActiveSource::All,
            }
        };

        let f_s = if dgc {
            encode_visited(tape, &params.encoder, &subs[..=k])
        } else {
            language.expression
        };

        let mut run = |tape: &mut Tape<'_>, graph: &mut Option<Graph>, scored: Option<Scored>| {
            let (g, s) = match (graph.as_mut(), scored) {
                (Some(g), Some(s)) => (g, s),
                _ => return None,
            };
            let gp = params.graph(g.kind);
            for &t in &s.tau_vars {
                decisions.push(tape.max2_took_first(t).map_or(2, u64::from));
            }
            decisions.extend(s.gates.iter().map(|&d| u64::from(d)));
            let nw = node_weights(tape, &s.tau_vars, &sub_graph.active);
            let ew = edge_weights(tape, gp, g, spatial, &sub_graph.active, f_s, dgc);
            decisions.extend(ew.retained().map(u64::from));
            let record = GraphStep {
                tau: s.tau,
                gates: s.gates,
                node_weights: tape.value(nw).to_vec(),
                edge_weights: ew
                    .weights
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|w| w.map_or(0.0, |w| tape.scalar(w)))
                            .collect()
                    })
                    .collect(),
            };
            message_pass(tape, gp.step(step), g, &sub_graph.active, nw, &ew);
            Some(record)
        };
        let visual_step = run(tape, visual, sv);
        let categorical_step = run(tape, categorical, sc);

        decisions.push(sub_graph.active.len() as u64);
        decisions.extend(sub_graph.active.iter().map(|&i| i as u64));
        trace.push(StepTrace {
            step,
            clause: sub.clause,
            active: sub_graph.active,
            source: sub_graph.source,
            visual: visual_step,
            categorical: categorical_step,
        });
    }
    ReasonOutput { trace, decisions }
}
