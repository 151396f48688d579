//! Cross-graph matching, box refinement, losses and evaluation metrics.

use grounder_autodiff::{Tape, Var};
use serde::{Deserialize, Serialize};

pub use crate::geometry::iou;
use crate::geometry::BBox;
use crate::graph::argmax;
use crate::weights::{GraphParams, ModelParams};

/// Cosine similarity `ϑ_i` between each projected node and the projected
/// expression. A zero-norm side scores 0 and is counted by the tape.
pub fn match_scores(
    tape: &mut Tape<'_>,
    params: &GraphParams,
    nodes: &[Var],
    query: Var,
) -> Vec<Var> {
    nodes
        .iter()
        .map(|&v| {
            let p = tape.matvec(params.match_node, v);
            tape.cosine(p, query)
        })
        .collect()
}

/// Projected expression shared by both graphs' scores.
pub fn project_query(tape: &mut Tape<'_>, params: &ModelParams, q: Var) -> Var {
    tape.matvec(params.query, q)
}

/// Combined scores `ϑ^a + ϑ^c` as one vector. A single enabled graph
/// counts twice, keeping the scale of the two-graph model.
pub fn combined_scores(
    tape: &mut Tape<'_>,
    visual: Option<&[Var]>,
    categorical: Option<&[Var]>,
) -> Var {
    match (visual, categorical) {
        (Some(a), Some(c)) => {
            let a = tape.concat(a);
            let c = tape.concat(c);
            tape.add(a, c)
        }
        (Some(g), None) | (None, Some(g)) => {
            let g = tape.concat(g);
            tape.add(g, g)
        }
        (None, None) => panic!("at least one graph must be enabled"),
    }
}

/// `P = softmax(ϑ^a + ϑ^c)`.
pub fn matching_probabilities(tape: &mut Tape<'_>, combined: Var) -> Var {
    tape.softmax(combined)
}

/// Highest combined score, lowest index on ties.
pub fn select_node(combined: &[f64]) -> usize {
    argmax(combined)
}

/// Two-layer perceptron over `[v^a; v^c; q]` predicting an absolute box.
pub fn refine_box(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    visual: Var,
    categorical: Var,
    q: Var,
) -> Var {
    let input = tape.concat(&[visual, categorical, q]);
    let h = tape.matvec(params.egr_hidden, input);
    let hb = tape.param(params.egr_hidden_bias);
    let h = tape.add(h, hb);
    let h = tape.tanh(h);
    let out = tape.matvec(params.egr_out, h);
    let ob = tape.param(params.egr_out_bias);
    tape.add(out, ob)
}

/// Smooth-L1 with its knee at 1, summed over components.
pub fn smooth_l1(pred: &[f64], target: &[f64]) -> f64 {
    grounder_autodiff::tape::smooth_l1(pred, target)
}

pub fn total_loss(ce: f64, reg: f64) -> f64 {
    ce + reg
}

/// Outcome of one grounding query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub scores_visual: Option<Vec<f64>>,
    pub scores_categorical: Option<Vec<f64>>,
    pub probabilities: Vec<f64>,
    pub selected_id: usize,
    /// Jittered input box of the selected node.
    pub raw_box: BBox,
    /// Regressed box, or the raw box when regression is disabled.
    pub refined_box: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    /// Fraction of refined boxes with IoU above 0.5.
    pub acc_at_05: f64,
    /// Same rule applied to the raw selected boxes.
    pub acc_raw_box: f64,
    pub mean_iou: f64,
    pub mean_raw_iou: f64,
    /// Fraction of queries selecting the annotated object.
    pub selection_accuracy: f64,
}

/// Aggregates predictions against `(target box, target id)` pairs.
pub fn evaluate(predictions: &[Prediction], truths: &[(BBox, usize)]) -> Metrics {
    assert_eq!(predictions.len(), truths.len(), "one truth per prediction");
    let n = predictions.len();
    if n == 0 {
        return Metrics::default();
    }
    let mut m = Metrics {
        count: n,
        ..Metrics::default()
    };
    for (p, (target, id)) in predictions.iter().zip(truths) {
        let refined = iou(&p.refined_box, target);
        let raw = iou(&p.raw_box, target);
        m.acc_at_05 += f64::from(u8::from(refined > 0.5));
        m.acc_raw_box += f64::from(u8::from(raw > 0.5));
        m.mean_iou += refined;
        m.mean_raw_iou += raw;
        m.selection_accuracy += f64::from(u8::from(p.selected_id == *id));
    }
    let n = n as f64;
    m.acc_at_05 /= n;
    m.acc_raw_box /= n;
    m.mean_iou /= n;
    m.mean_raw_iou /= n;
    m.selection_accuracy /= n;
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(b: BBox, id: usize) -> Prediction {
        Prediction {
            scores_visual: None,
            scores_categorical: None,
            probabilities: vec![1.0],
            selected_id: id,
            raw_box: b,
            refined_box: b,
        }
    }

    #[test]
    fn smooth_l1_closed_forms() {
        assert_eq!(smooth_l1(&[0.3; 4], &[0.3; 4]), 0.0);
        assert_eq!(smooth_l1(&[0.5, 0.0, 0.0, 0.0], &[0.0; 4]), 0.125);
        assert_eq!(smooth_l1(&[0.0, 2.0, 0.0, 0.0], &[0.0; 4]), 1.5);
        assert_eq!(total_loss(2f64.ln(), 0.125), 2f64.ln() + 0.125);
    }

    #[test]
    fn select_lowest_on_ties() {
        assert_eq!(select_node(&[0.2]), 0);
        assert_eq!(select_node(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(select_node(&[0.9, 0.1, 0.9]), 0);
    }

    #[test]
    fn accuracy_counts_hits() {
        let t = BBox::new(0.5, 0.5, 0.2, 0.2);
        let far = BBox::new(0.1, 0.1, 0.05, 0.05);
        let preds = [pred(t, 0), pred(t, 0), pred(t, 0), pred(far, 1)];
        let truths = [(t, 0); 4];
        let m = evaluate(&preds, &truths);
        assert_eq!(m.acc_at_05, 0.75);
        assert_eq!(m.selection_accuracy, 0.75);
        assert_eq!(evaluate(&preds[..3], &truths[..3]).acc_at_05, 1.0);
        assert_eq!(evaluate(&preds[3..], &truths[3..]).acc_at_05, 0.0);
    }
}
