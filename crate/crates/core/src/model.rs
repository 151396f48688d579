//! End-to-end forward pass: text encoding, graph construction, reasoning,
//! matching and box regression, with the training loss.

use grounder_autodiff::{Gradients, ParameterStore, Tape, Var};

use crate::config::{Ablation, ModelConfig};
use crate::encoder::encode_language;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::graph::{build_bimodal, Graph};
use crate::matching::{
    combined_scores, match_scores, matching_probabilities, project_query, refine_box, select_node,
    Prediction,
};
use crate::parser::{
    order_sub_expressions, parse, tokenize, LanguageSceneGraph, SubExpression, Vocabulary,
};
use crate::reasoner::{reason, StepTrace};
use crate::synth::{CandidateObject, Sample};
use crate::weights::ModelParams;

/// A sample parsed and ordered once, ready for repeated forward passes.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub objects: Vec<CandidateObject>,
    pub language: LanguageSceneGraph,
    pub order: Vec<SubExpression>,
    pub target_id: usize,
    pub target_box: BBox,
}

impl PreparedSample {
    pub fn new(sample: &Sample, vocab: &Vocabulary, ablation: &Ablation) -> Result<Self> {
        let tokens = tokenize(&sample.truth.expression, vocab)?;
        let language = parse(&tokens, vocab)?;
        let order = order_sub_expressions(&language, ablation.order);
        Ok(Self {
            objects: sample.scene.objects.clone(),
            language,
            order,
            target_id: sample.truth.target_id,
            target_box: sample.truth.target_box,
        })
    }
}

/// Everything one forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub loss: Var,
    pub loss_ce: f64,
    /// 0 when regression is disabled.
    pub loss_reg: f64,
    pub prediction: Prediction,
    pub trace: Vec<StepTrace>,
    /// Discrete decisions taken on the way; see the reasoner.
    pub decisions: Vec<u64>,
    /// Cosines that hit a zero-norm input.
    pub degenerate_scores: usize,
}

fn node_or_zeros(tape: &mut Tape<'_>, graph: Option<&Graph>, i: usize, dim: usize) -> Var {
    match graph {
        Some(g) => g.nodes[i],
        None => tape.constant(vec![0.0; dim]),
    }
}

/// Runs the model on one sample. The regression loss uses the annotated
/// node's features; the predicted box uses the selected node's.
pub fn forward(
    tape: &mut Tape<'_>,
    config: &ModelConfig,
    params: &ModelParams,
    ablation: &Ablation,
    sample: &PreparedSample,
) -> ForwardOutput {
    let language = encode_language(tape, &params.encoder, &sample.language);
    let mut graphs = build_bimodal(
        tape,
        params,
        &sample.objects,
        &language.chunks,
        ablation.graphs.visual(),
        ablation.graphs.categorical(),
    );
    let mut decisions: Vec<u64> = [&graphs.visual, &graphs.categorical]
        .into_iter()
        .flatten()
        .flat_map(|g| g.matched_chunks.iter().map(|&k| k as u64))
        .collect();
    let reasoning = reason(
        tape,
        params,
        &mut graphs,
        &language,
        &sample.order,
        ablation.dgc,
    );
    decisions.extend(reasoning.decisions);

    let q = language.expression;
    let query = project_query(tape, params, q);
    let sv = graphs
        .visual
        .as_ref()
        .map(|g| match_scores(tape, &params.visual, &g.nodes, query));
    let sc = graphs
        .categorical
        .as_ref()
        .map(|g| match_scores(tape, &params.categorical, &g.nodes, query));
    let combined = combined_scores(tape, sv.as_deref(), sc.as_deref());
    let probs = matching_probabilities(tape, combined);
    let ce = tape.neg_log_index(probs, sample.target_id);
    let selected = select_node(tape.value(combined));

    let g = config.node_dim;
    let raw_box = sample.objects[selected].bbox;
    let (loss, loss_reg, refined_box) = if ablation.egr {
        let regress = |tape: &mut Tape<'_>, i: usize| {
            let va = node_or_zeros(tape, graphs.visual.as_ref(), i, g);
            let vc = node_or_zeros(tape, graphs.categorical.as_ref(), i, g);
            refine_box(tape, params, va, vc, q)
        };
        let gt_box = regress(tape, sample.target_id);
        let reg = tape.smooth_l1(gt_box, &sample.target_box.to_array());
        let pred_box = if selected == sample.target_id {
            gt_box
        } else {
            regress(tape, selected)
        };
        let v = tape.value(pred_box);
        let refined = BBox::new(v[0], v[1], v[2], v[3]);
        let loss = tape.add(ce, reg);
        (loss, tape.scalar(reg), refined)
    } else {
        (ce, 0.0, raw_box)
    };

    let values = |tape: &Tape<'_>, s: &Option<Vec<Var>>| {
        s.as_ref()
            .map(|v| v.iter().map(|&x| tape.scalar(x)).collect::<Vec<f64>>())
    };
    let prediction = Prediction {
        scores_visual: values(tape, &sv),
        scores_categorical: values(tape, &sc),
        probabilities: tape.value(probs).to_vec(),
        selected_id: selected,
        raw_box,
        refined_box,
    };
    ForwardOutput {
        loss,
        loss_ce: tape.scalar(ce),
        loss_reg,
        prediction,
        trace: reasoning.trace,
        decisions,
        degenerate_scores: tape.degenerate_cosines(),
    }
}

/// Loss value, its parts and the gradient for one sample, accumulated into
/// `grads`. Non-finite values surface as a numeric error.
pub fn accumulate_gradients(
    store: &ParameterStore,
    config: &ModelConfig,
    params: &ModelParams,
    ablation: &Ablation,
    sample: &PreparedSample,
    grads: &mut Gradients,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new(store);
    let out = forward(&mut tape, config, params, ablation, sample);
    tape.check_finite()?;
    let total = tape.scalar(out.loss);
    if !total.is_finite() {
        return Err(Error::Numeric(format!("loss is {total}")));
    }
    tape.backward_into(out.loss, grads);
    Ok((out.loss_ce, out.loss_reg))
}

/// Forward pass without gradients.
pub fn predict(
    store: &ParameterStore,
    config: &ModelConfig,
    params: &ModelParams,
    ablation: &Ablation,
    sample: &PreparedSample,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new(store);
    let out = forward(&mut tape, config, params, ablation, sample);
    tape.check_finite()?;
    Ok(out)
}
