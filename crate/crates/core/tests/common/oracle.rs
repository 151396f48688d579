//! Straight-line re-evaluations of each model stage, written with plain
//! loops over the stored weights. Each check panics on a mismatch.

use super::{random_objects, rng, small_config, Fixture};
use grounder_autodiff::{ParamId, ParameterStore, Tape, Var};
use grounder_core::geometry::{iou, BBox};
use grounder_core::graph::{build_graph, spatial_features, GraphKind};
use grounder_core::matching::{
    combined_scores, match_scores, matching_probabilities, project_query, smooth_l1,
};
use grounder_core::reasoner::{
    apply_gate, build_sub_graphs, correlation_scores, edge_weights, message_pass, node_weights,
};
use grounder_core::synth::CandidateObject;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-10;

fn mv(store: &ParameterStore, id: ParamId, x: &[f64]) -> Vec<f64> {
    let t = store.get(id);
    assert_eq!(t.cols(), x.len(), "{}", t.name());
    let mut out = vec![0.0; t.rows()];
    for (r, o) in out.iter_mut().enumerate() {
        for c in 0..t.cols() {
            *o += t.data()[r * t.cols() + c] * x[c];
        }
    }
    out
}

fn vec_of(store: &ParameterStore, id: ParamId) -> Vec<f64> {
    store.get(id).data().to_vec()
}

fn plus(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn times(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

fn tanh(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| x.tanh()).collect()
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// First index of the maximum, by exhaustive comparison.
fn first_max(xs: &[f64]) -> usize {
    (0..xs.len())
        .find(|&i| xs.iter().all(|&x| xs[i] >= x))
        .unwrap()
}

fn assert_close(got: &[f64], want: &[f64], what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= TOL, "{what}[{i}]: {g} vs {w}");
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

struct Instance {
    fx: Fixture,
    objects: Vec<CandidateObject>,
    chunks: Vec<Vec<f64>>,
    kind: GraphKind,
}

fn instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let config = small_config();
    let k = r.random_range(2..=5);
    let objects = random_objects(
        &mut r,
        k,
        config.visual_dim,
        config.nouns.len(),
        config.colors.len(),
    );
    let n_chunks = r.random_range(1..=3);
    let chunks = (0..n_chunks)
        .map(|_| random_vec(&mut r, config.token_dim))
        .collect();
    let kind = if r.random_bool(0.5) {
        GraphKind::Visual
    } else {
        GraphKind::Categorical
    };
    Instance {
        fx: Fixture::new(config, seed.wrapping_mul(31) + 1),
        objects,
        chunks,
        kind,
    }
}

struct OracleGraph {
    spatial: Vec<Vec<f64>>,
    nodes: Vec<Vec<f64>>,
    edges: Vec<Vec<Vec<f64>>>,
    matched: Vec<usize>,
}

fn oracle_graph(inst: &Instance) -> OracleGraph {
    let store = &inst.fx.store;
    let p = &inst.fx.params;
    let gp = p.graph(inst.kind);
    let spatial: Vec<Vec<f64>> = inst
        .objects
        .iter()
        .map(|o| {
            let b = o.bbox;
            mv(store, p.spatial, &[b.cx, b.cy, b.w, b.h, b.w * b.h])
        })
        .collect();
    let mut nodes = Vec::new();
    let mut matched = Vec::new();
    for (i, o) in inst.objects.iter().enumerate() {
        let feat = match inst.kind {
            GraphKind::Visual => o.descriptor.clone(),
            GraphKind::Categorical => cat(&[
                store.get(p.category_embedding).row(o.category),
                store.get(p.color_embedding).row(o.color),
            ]),
        };
        let scores: Vec<f64> = inst
            .chunks
            .iter()
            .map(|g| {
                let h = tanh(&plus(
                    &mv(store, gp.match_object, &feat),
                    &mv(store, gp.match_text, g),
                ));
                dot(&vec_of(store, gp.match_score), &h)
            })
            .collect();
        let k = first_max(&scores);
        matched.push(k);
        let x = cat(&[&feat, &spatial[i], &inst.chunks[k]]);
        nodes.push(plus(
            &mv(store, gp.node_weight, &x),
            &vec_of(store, gp.node_bias),
        ));
    }
    let n = nodes.len();
    let mut edges = vec![vec![Vec::new(); n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let x = cat(&[&nodes[i], &nodes[j], &spatial[i], &spatial[j]]);
                edges[i][j] = mv(store, gp.edge_weight, &x);
            }
        }
    }
    OracleGraph {
        spatial,
        nodes,
        edges,
        matched,
    }
}

fn chunk_vars(tape: &mut Tape<'_>, chunks: &[Vec<f64>]) -> Vec<Var> {
    chunks.iter().map(|c| tape.constant(c.clone())).collect()
}

pub fn graph_construction(seed: u64) {
    let inst = instance(seed);
    let want = oracle_graph(&inst);
    let mut tape = Tape::new(&inst.fx.store);
    let p = &inst.fx.params;
    let chunks = chunk_vars(&mut tape, &inst.chunks);
    let spatial: Vec<Var> = inst
        .objects
        .iter()
        .map(|o| spatial_features(&mut tape, p, &o.bbox))
        .collect();
    let g = build_graph(&mut tape, p, inst.kind, &inst.objects, &spatial, &chunks);
    assert_eq!(g.matched_chunks, want.matched, "seed {seed}");
    for i in 0..g.len() {
        assert_close(tape.value(spatial[i]), &want.spatial[i], "spatial");
        assert_close(tape.value(g.nodes[i]), &want.nodes[i], "node");
        for j in 0..g.len() {
            if i == j {
                assert!(g.edges[i][j].is_none());
            } else {
                assert_close(tape.value(g.edge(i, j)), &want.edges[i][j], "edge");
            }
        }
    }
}

fn oracle_tau(inst: &Instance, nodes: &[Vec<f64>], g1: &[f64], g2: &[f64]) -> Vec<f64> {
    let store = &inst.fx.store;
    let gp = inst.fx.params.graph(inst.kind);
    let w = vec_of(store, gp.gate_score);
    nodes
        .iter()
        .map(|v| {
            let s = |g: &[f64]| dot(&w, &tanh(&plus(v, &mv(store, gp.gate_text, g))));
            s(g1).max(s(g2))
        })
        .collect()
}

pub fn gating(seed: u64) {
    let inst = instance(seed);
    let want_graph = oracle_graph(&inst);
    let mut r = rng(seed ^ 0xfeed);
    let c1 = r.random_range(0..inst.chunks.len());
    let c2 = r.random_range(0..inst.chunks.len());
    let want_tau = oracle_tau(&inst, &want_graph.nodes, &inst.chunks[c1], &inst.chunks[c2]);
    let mean = want_tau.iter().sum::<f64>() / want_tau.len() as f64;
    let mut want_gates: Vec<bool> = want_tau.iter().map(|&t| t > mean).collect();
    if want_gates.iter().all(|g| !g) {
        want_gates[first_max(&want_tau)] = true;
    }

    let mut tape = Tape::new(&inst.fx.store);
    let p = &inst.fx.params;
    let chunks = chunk_vars(&mut tape, &inst.chunks);
    let nodes: Vec<Var> = want_graph
        .nodes
        .iter()
        .map(|v| tape.constant(v.clone()))
        .collect();
    let tau = correlation_scores(
        &mut tape,
        p.graph(inst.kind),
        &nodes,
        chunks[c1],
        chunks[c2],
    );
    let tau: Vec<f64> = tau.iter().map(|&t| tape.scalar(t)).collect();
    assert_close(&tau, &want_tau, "tau");
    assert_eq!(apply_gate(&tau), want_gates, "seed {seed}");

    // Sub-graph extraction against set logic over random gate pairs.
    let a: Vec<bool> = (0..tau.len()).map(|_| r.random_bool(0.5)).collect();
    let c: Vec<bool> = (0..tau.len()).map(|_| r.random_bool(0.5)).collect();
    let both: Vec<usize> = (0..tau.len()).filter(|&i| a[i] && c[i]).collect();
    let only_c: Vec<usize> = (0..tau.len()).filter(|&i| c[i]).collect();
    let want_active = if !both.is_empty() {
        both
    } else if !only_c.is_empty() {
        only_c
    } else {
        vec![first_max(&tau)]
    };
    assert_eq!(
        build_sub_graphs(Some(&a), Some(&c), &tau).active,
        want_active
    );
}

pub fn one_message_passing_step(seed: u64) {
    let inst = instance(seed);
    let og = oracle_graph(&inst);
    let store = &inst.fx.store;
    let p = &inst.fx.params;
    let gp = p.graph(inst.kind);
    let mut r = rng(seed ^ 0xbeef);
    let n = og.nodes.len();
    let mut active: Vec<usize> = (0..n).filter(|_| r.random_bool(0.6)).collect();
    if active.is_empty() {
        active.push(r.random_range(0..n));
    }
    let tau_all: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let visited = random_vec(&mut r, inst.fx.model.expression_dim());
    let step = r.random_range(1..=3);
    let threshold = r.random_bool(0.8);

    // Oracle.
    let m = active.len();
    let w_nodes = softmax(&active.iter().map(|&i| tau_all[i]).collect::<Vec<_>>());
    let context = mv(store, gp.edge_context, &visited);
    let score_w = vec_of(store, gp.edge_score);
    let mut w_edges = vec![vec![0.0; m]; m];
    for a in 0..m {
        if m < 2 {
            break;
        }
        let s: Vec<(usize, f64)> = (0..m)
            .filter(|&b| b != a)
            .map(|b| {
                let e = &og.edges[active[a]][active[b]];
                (b, dot(&score_w, &tanh(&plus(e, &context))))
            })
            .collect();
        let xi = s.iter().map(|x| x.1).sum::<f64>() / (m - 1) as f64;
        let kept: Vec<(usize, f64)> = s
            .into_iter()
            .filter(|&(_, v)| !threshold || v > xi)
            .collect();
        let soft = softmax(&kept.iter().map(|x| x.1).collect::<Vec<_>>());
        for (slot, &(b, _)) in kept.iter().enumerate() {
            w_edges[a][b] = soft[slot];
        }
    }
    let sp = gp.step(step);
    let mut want = og.nodes.clone();
    for a in 0..m {
        let v = &og.nodes[active[a]];
        let mut inner = plus(
            &times(&mv(store, sp.self_loop, v), w_nodes[a]),
            &vec_of(store, sp.self_bias),
        );
        for b in 0..m {
            if w_edges[a][b] > 0.0 {
                let msg = plus(
                    &times(&mv(store, sp.neighbor, &og.nodes[active[b]]), w_nodes[b]),
                    &vec_of(store, sp.neighbor_bias),
                );
                inner = plus(&inner, &times(&msg, w_edges[a][b]));
            }
        }
        want[active[a]] = plus(&mv(store, sp.update, &inner), v);
    }

    // Implementation.
    let mut tape = Tape::new(store);
    let chunks = chunk_vars(&mut tape, &inst.chunks);
    let spatial: Vec<Var> = og
        .spatial
        .iter()
        .map(|s| tape.constant(s.clone()))
        .collect();
    let mut g = build_graph(&mut tape, p, inst.kind, &inst.objects, &spatial, &chunks);
    let tau: Vec<Var> = tau_all.iter().map(|&t| tape.constant(vec![t])).collect();
    let nw = node_weights(&mut tape, &tau, &active);
    assert_close(tape.value(nw), &w_nodes, "node weights");
    let q = tape.constant(visited);
    let ew = edge_weights(&mut tape, gp, &mut g, &spatial, &active, q, threshold);
    for a in 0..m {
        let row: Vec<f64> = (0..m)
            .map(|b| ew.weights[a][b].map_or(0.0, |w| tape.scalar(w)))
            .collect();
        assert_close(&row, &w_edges[a], "edge weights");
    }
    let before = g.nodes.clone();
    message_pass(&mut tape, sp, &mut g, &active, nw, &ew);
    for i in 0..n {
        assert_close(tape.value(g.nodes[i]), &want[i], "updated node");
        if !active.contains(&i) {
            assert_eq!(g.nodes[i], before[i], "inactive node replaced");
        }
    }
}

pub fn match_probabilities(seed: u64) {
    let inst = instance(seed);
    let store = &inst.fx.store;
    let p = &inst.fx.params;
    let mut r = rng(seed ^ 0xcafe);
    let g = inst.fx.model.node_dim;
    let n = inst.objects.len();
    let va: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, g)).collect();
    let vc: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, g)).collect();
    let q = random_vec(&mut r, inst.fx.model.expression_dim());
    let which = r.random_range(0..3);

    let qp = mv(store, p.query, &q);
    let cosine = |v: &[f64], w: ParamId| {
        let x = mv(store, w, v);
        dot(&x, &qp) / (dot(&x, &x).sqrt() * dot(&qp, &qp).sqrt())
    };
    let ta: Vec<f64> = va.iter().map(|v| cosine(v, p.visual.match_node)).collect();
    let tc: Vec<f64> = vc
        .iter()
        .map(|v| cosine(v, p.categorical.match_node))
        .collect();
    let combined: Vec<f64> = match which {
        0 => (0..n).map(|i| ta[i] + tc[i]).collect(),
        1 => ta.iter().map(|t| 2.0 * t).collect(),
        _ => tc.iter().map(|t| 2.0 * t).collect(),
    };
    let want = softmax(&combined);

    let mut tape = Tape::new(store);
    let qv = tape.constant(q);
    let query = project_query(&mut tape, p, qv);
    let na: Vec<Var> = va.iter().map(|v| tape.constant(v.clone())).collect();
    let nc: Vec<Var> = vc.iter().map(|v| tape.constant(v.clone())).collect();
    let sa = match_scores(&mut tape, &p.visual, &na, query);
    let sc = match_scores(&mut tape, &p.categorical, &nc, query);
    let got_a: Vec<f64> = sa.iter().map(|&s| tape.scalar(s)).collect();
    let got_c: Vec<f64> = sc.iter().map(|&s| tape.scalar(s)).collect();
    assert_close(&got_a, &ta, "visual scores");
    assert_close(&got_c, &tc, "categorical scores");
    let comb = match which {
        0 => combined_scores(&mut tape, Some(&sa), Some(&sc)),
        1 => combined_scores(&mut tape, Some(&sa), None),
        _ => combined_scores(&mut tape, None, Some(&sc)),
    };
    let probs = matching_probabilities(&mut tape, comb);
    assert_close(tape.value(probs), &want, "probabilities");
}

fn smooth_l1_oracle(pred: &[f64], target: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.len() {
        let d = (pred[i] - target[i]).abs();
        total += if d < 1.0 { 0.5 * d * d } else { d - 0.5 };
    }
    total
}

pub fn smooth_l1_case(seed: u64) {
    let store = ParameterStore::new();
    let mut r = rng(seed);
    let scale = [0.1, 1.0, 3.0][r.random_range(0..3)];
    let pred: Vec<f64> = (0..4).map(|_| r.random_range(-scale..scale)).collect();
    let target: Vec<f64> = (0..4).map(|_| r.random_range(-scale..scale)).collect();
    let want = smooth_l1_oracle(&pred, &target);
    assert!((smooth_l1(&pred, &target) - want).abs() <= TOL);
    let mut tape = Tape::new(&store);
    let p = tape.constant(pred.clone());
    let l = tape.smooth_l1(p, &target);
    assert!((tape.scalar(l) - want).abs() <= TOL);
}

/// Counts unit cells covered by both boxes on an integer pixel grid.
fn pixel_iou(a: [i64; 4], b: [i64; 4]) -> f64 {
    let inside = |r: [i64; 4], x: i64, y: i64| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
    let (mut inter, mut union) = (0u64, 0u64);
    for x in 0..64 {
        for y in 0..64 {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += u64::from(ia && ib);
            union += u64::from(ia || ib);
        }
    }
    inter as f64 / union as f64
}

fn corners_to_box(c: [i64; 4], scale: f64) -> BBox {
    let (l, t, r, b) = (
        c[0] as f64 / scale,
        c[1] as f64 / scale,
        c[2] as f64 / scale,
        c[3] as f64 / scale,
    );
    BBox::new((l + r) / 2.0, (t + b) / 2.0, r - l, b - t)
}

/// Centres (1,1) and (2,2), both 2x2.
pub fn iou_worked_example() {
    let a = BBox::new(1.0, 1.0, 2.0, 2.0);
    let b = BBox::new(2.0, 2.0, 2.0, 2.0);
    assert!((iou(&a, &b) - 1.0 / 7.0).abs() <= TOL);
    assert!((pixel_iou([0, 0, 2, 2], [1, 1, 3, 3]) - 1.0 / 7.0).abs() <= TOL);
}

pub fn iou_case(seed: u64) {
    let mut r = rng(seed);
    let mut corners = || {
        let l = r.random_range(0..40);
        let t = r.random_range(0..40);
        [l, t, l + r.random_range(1..24), t + r.random_range(1..24)]
    };
    let (ca, cb) = (corners(), corners());
    let want = pixel_iou(ca, cb);
    let got = iou(&corners_to_box(ca, 64.0), &corners_to_box(cb, 64.0));
    assert!((got - want).abs() <= TOL, "{ca:?} {cb:?}: {got} vs {want}");
}
