//! Named layout of every trainable tensor of the grounding model.
//!
//! Tensors are registered in a fixed order, so a store built from the same
//! [`ModelConfig`] always has the same layout. Per-graph tensors are
//! prefixed `visual.` or `categorical.`; message-passing tensors carry
//! their reasoning step, e.g. `visual.step2.update`.

use grounder_autodiff::{ParamId, ParameterStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::GraphKind;

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, fan-in = columns.
    Uniform,
    /// Uniform in `[-1, 1]`; rows are looked up, not multiplied.
    Embedding,
    Zeros,
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn layout(c: &ModelConfig) -> Vec<Entry> {
    let mut out = Vec::new();
    let mut push = |name: String, shape: &[usize], init: Init| {
        out.push(Entry {
            name,
            shape: shape.to_vec(),
            init,
        })
    };
    let h = c.hidden_dim;
    let q = c.expression_dim();
    let g = c.node_dim;

    push(
        "embed.token".into(),
        &[c.vocab_size, c.token_dim],
        Init::Embedding,
    );
    for dir in ["forward", "backward"] {
        push(
            format!("encoder.{dir}.input"),
            &[h, c.token_dim],
            Init::Uniform,
        );
        push(format!("encoder.{dir}.recurrent"), &[h, h], Init::Uniform);
        push(format!("encoder.{dir}.bias"), &[h], Init::Zeros);
    }
    push(
        "embed.category".into(),
        &[c.num_categories, c.category_dim],
        Init::Embedding,
    );
    push(
        "embed.color".into(),
        &[c.num_colors, c.color_dim],
        Init::Embedding,
    );
    push("spatial.proj".into(), &[c.spatial_dim, 5], Init::Uniform);

    for kind in [GraphKind::Visual, GraphKind::Categorical] {
        let p = kind.prefix();
        let obj = match kind {
            GraphKind::Visual => c.visual_dim,
            GraphKind::Categorical => c.categorical_dim(),
        };
        push(
            format!("{p}.node.weight"),
            &[g, obj + c.spatial_dim + c.token_dim],
            Init::Uniform,
        );
        push(format!("{p}.node.bias"), &[g], Init::Zeros);
        push(
            format!("{p}.chunk_match.object"),
            &[c.chunk_match_dim, obj],
            Init::Uniform,
        );
        push(
            format!("{p}.chunk_match.text"),
            &[c.chunk_match_dim, c.token_dim],
            Init::Uniform,
        );
        push(
            format!("{p}.chunk_match.score"),
            &[1, c.chunk_match_dim],
            Init::Uniform,
        );
        push(
            format!("{p}.edge.weight"),
            &[c.edge_dim, 2 * g + 2 * c.spatial_dim],
            Init::Uniform,
        );
        push(format!("{p}.gate.text"), &[g, c.token_dim], Init::Uniform);
        push(format!("{p}.gate.score"), &[1, g], Init::Uniform);
        push(
            format!("{p}.edge_score.context"),
            &[c.edge_dim, q],
            Init::Uniform,
        );
        push(
            format!("{p}.edge_score.score"),
            &[1, c.edge_dim],
            Init::Uniform,
        );
        for step in 1..=c.max_steps {
            push(format!("{p}.step{step}.update"), &[g, g], Init::Uniform);
            push(format!("{p}.step{step}.neighbor"), &[g, g], Init::Uniform);
            push(format!("{p}.step{step}.neighbor_bias"), &[g], Init::Zeros);
            push(format!("{p}.step{step}.self"), &[g, g], Init::Uniform);
            push(format!("{p}.step{step}.self_bias"), &[g], Init::Zeros);
        }
        push(format!("{p}.match.node"), &[c.match_dim, g], Init::Uniform);
    }

    push("match.query".into(), &[c.match_dim, q], Init::Uniform);
    push(
        "egr.hidden.weight".into(),
        &[c.egr_hidden, 2 * g + q],
        Init::Uniform,
    );
    push("egr.hidden.bias".into(), &[c.egr_hidden], Init::Zeros);
    push("egr.out.weight".into(), &[4, c.egr_hidden], Init::Uniform);
    push("egr.out.bias".into(), &[4], Init::Zeros);
    out
}

#[derive(Debug, Clone, Copy)]
pub struct RnnParams {
    pub input: ParamId,
    pub recurrent: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub token_embedding: ParamId,
    pub forward: RnnParams,
    pub backward: RnnParams,
}

/// Message-passing tensors of one reasoning step.
#[derive(Debug, Clone, Copy)]
pub struct StepParams {
    pub update: ParamId,
    pub neighbor: ParamId,
    pub neighbor_bias: ParamId,
    pub self_loop: ParamId,
    pub self_bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct GraphParams {
    pub node_weight: ParamId,
    pub node_bias: ParamId,
    pub match_object: ParamId,
    pub match_text: ParamId,
    pub match_score: ParamId,
    pub edge_weight: ParamId,
    pub gate_text: ParamId,
    pub gate_score: ParamId,
    pub edge_context: ParamId,
    pub edge_score: ParamId,
    pub steps: Vec<StepParams>,
    pub match_node: ParamId,
}

impl GraphParams {
    /// Tensors of reasoning step `k` (1-based); steps past the last
    /// configured one reuse it.
    pub fn step(&self, k: usize) -> &StepParams {
        &self.steps[k.clamp(1, self.steps.len()) - 1]
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub category_embedding: ParamId,
    pub color_embedding: ParamId,
    pub spatial: ParamId,
    pub visual: GraphParams,
    pub categorical: GraphParams,
    pub query: ParamId,
    pub egr_hidden: ParamId,
    pub egr_hidden_bias: ParamId,
    pub egr_out: ParamId,
    pub egr_out_bias: ParamId,
}

impl ModelParams {
    /// Fresh store with seeded initialization.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<(ParameterStore, ModelParams)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        for e in layout(config) {
            let n: usize = e.shape.iter().product();
            let data = match e.init {
                Init::Zeros => vec![0.0; n],
                Init::Embedding => (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
                Init::Uniform => {
                    let fan_in = e.shape.get(1).copied().unwrap_or(1).max(1) as f64;
                    let bound = 1.0 / fan_in.sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
            };
            store.register(&e.name, &e.shape, data)?;
        }
        let params = Self::resolve(config, &store)?;
        Ok((store, params))
    }

    /// Looks up every tensor and checks its shape against `config`.
    pub fn resolve(config: &ModelConfig, store: &ParameterStore) -> Result<ModelParams> {
        let entries = layout(config);
        if store.len() != entries.len() {
            return Err(Error::Config(format!(
                "parameter store has {} tensors, model expects {}",
                store.len(),
                entries.len()
            )));
        }
        for e in &entries {
            let t = store
                .by_name(&e.name)
                .map_err(|_| Error::Config(format!("missing parameter `{}`", e.name)))?;
            if t.shape() != e.shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter `{}` has shape {:?}, config expects {:?}",
                    e.name,
                    t.shape(),
                    e.shape
                )));
            }
        }
        let id = |name: &str| store.id(name).expect("checked above");
        let rnn = |dir: &str| RnnParams {
            input: id(&format!("encoder.{dir}.input")),
            recurrent: id(&format!("encoder.{dir}.recurrent")),
            bias: id(&format!("encoder.{dir}.bias")),
        };
        let graph = |kind: GraphKind| {
            let p = kind.prefix();
            GraphParams {
                node_weight: id(&format!("{p}.node.weight")),
                node_bias: id(&format!("{p}.node.bias")),
                match_object: id(&format!("{p}.chunk_match.object")),
                match_text: id(&format!("{p}.chunk_match.text")),
                match_score: id(&format!("{p}.chunk_match.score")),
                edge_weight: id(&format!("{p}.edge.weight")),
                gate_text: id(&format!("{p}.gate.text")),
                gate_score: id(&format!("{p}.gate.score")),
                edge_context: id(&format!("{p}.edge_score.context")),
                edge_score: id(&format!("{p}.edge_score.score")),
                steps: (1..=config.max_steps)
                    .map(|s| StepParams {
                        update: id(&format!("{p}.step{s}.update")),
                        neighbor: id(&format!("{p}.step{s}.neighbor")),
                        neighbor_bias: id(&format!("{p}.step{s}.neighbor_bias")),
                        self_loop: id(&format!("{p}.step{s}.self")),
                        self_bias: id(&format!("{p}.step{s}.self_bias")),
                    })
                    .collect(),
                match_node: id(&format!("{p}.match.node")),
            }
        };
        Ok(ModelParams {
            encoder: EncoderParams {
                token_embedding: id("embed.token"),
                forward: rnn("forward"),
                backward: rnn("backward"),
            },
            category_embedding: id("embed.category"),
            color_embedding: id("embed.color"),
            spatial: id("spatial.proj"),
            visual: graph(GraphKind::Visual),
            categorical: graph(GraphKind::Categorical),
            query: id("match.query"),
            egr_hidden: id("egr.hidden.weight"),
            egr_hidden_bias: id("egr.hidden.bias"),
            egr_out: id("egr.out.weight"),
            egr_out_bias: id("egr.out.bias"),
        })
    }

    pub fn graph(&self, kind: GraphKind) -> &GraphParams {
        match kind {
            GraphKind::Visual => &self.visual,
            GraphKind::Categorical => &self.categorical,
        }
    }
}
