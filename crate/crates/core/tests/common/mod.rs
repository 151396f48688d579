//! Fixtures shared by the integration tests.

#![allow(dead_code)]

pub mod invariants;
pub mod oracle;

use grounder_autodiff::ParameterStore;
use grounder_core::config::{Ablation, ModelConfig, RunConfig};
use grounder_core::geometry::BBox;
use grounder_core::model::PreparedSample;
use grounder_core::parser::Vocabulary;
use grounder_core::synth::{CandidateObject, GroundTruth, Sample, Scene};
use grounder_core::weights::ModelParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default grammar with every model width shrunk, for tests that
/// evaluate the model many times.
pub fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.visual_dim = 6;
    c.token_dim = 5;
    c.hidden_dim = 4;
    c.category_dim = 3;
    c.color_dim = 3;
    c.spatial_dim = 3;
    c.node_dim = 5;
    c.edge_dim = 4;
    c.chunk_match_dim = 3;
    c.match_dim = 4;
    c.egr_hidden = 4;
    c
}

pub struct Fixture {
    pub config: RunConfig,
    pub model: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParameterStore,
    pub params: ModelParams,
}

impl Fixture {
    pub fn new(config: RunConfig, seed: u64) -> Self {
        let model = config.model();
        let vocab = Vocabulary::new(&config.grammar()).unwrap();
        let (store, params) = ModelParams::init(&model, seed).unwrap();
        Self {
            config,
            model,
            vocab,
            store,
            params,
        }
    }

    pub fn prepare(&self, sample: &Sample, ablation: &Ablation) -> PreparedSample {
        PreparedSample::new(sample, &self.vocab, ablation).unwrap()
    }
}

/// Random objects with descriptors of width `dim`.
pub fn random_objects(
    rng: &mut ChaCha8Rng,
    k: usize,
    dim: usize,
    categories: usize,
    colors: usize,
) -> Vec<CandidateObject> {
    (0..k)
        .map(|id| CandidateObject {
            id,
            bbox: BBox::new(
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.05..0.4),
                rng.random_range(0.05..0.4),
            ),
            descriptor: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            category: rng.random_range(0..categories),
            color: rng.random_range(0..colors),
        })
        .collect()
}

/// Random grammatical expression with `clauses` relation clauses (0 gives
/// a bare noun chunk).
pub fn random_expression(rng: &mut ChaCha8Rng, config: &RunConfig, clauses: usize) -> String {
    let chunk = |rng: &mut ChaCha8Rng| {
        let noun = &config.nouns[rng.random_range(0..config.nouns.len())];
        if rng.random_bool(0.5) {
            format!(
                "{} {noun}",
                config.colors[rng.random_range(0..config.colors.len())]
            )
        } else {
            noun.clone()
        }
    };
    let subject = chunk(rng);
    if clauses == 0 {
        return subject;
    }
    (0..clauses)
        .map(|_| {
            let rel = &config.relations[rng.random_range(0..config.relations.len())];
            format!("{subject} {rel} {}", chunk(rng))
        })
        .collect::<Vec<_>>()
        .join(" and ")
}

pub fn sample(
    objects: Vec<CandidateObject>,
    target_id: usize,
    target_box: BBox,
    expression: &str,
) -> Sample {
    Sample {
        scene: Scene {
            objects,
            target_id,
            seed: 0,
        },
        truth: GroundTruth {
            target_box,
            target_id,
            expression: expression.to_string(),
        },
    }
}

/// Random instance with `k` objects and the given clause count.
pub fn random_sample(rng: &mut ChaCha8Rng, config: &RunConfig, k: usize, clauses: usize) -> Sample {
    let objects = random_objects(
        rng,
        k,
        config.visual_dim,
        config.nouns.len(),
        config.colors.len(),
    );
    let target = rng.random_range(0..k);
    let b = objects[target].bbox;
    let truth = BBox::new(b.cx + 0.02, b.cy - 0.01, b.w * 1.1, b.h * 0.9);
    let expr = random_expression(rng, config, clauses);
    sample(objects, target, truth, &expr)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
