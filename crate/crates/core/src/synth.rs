//! Synthetic scenes and referring expressions with exact ground truth.
//!
//! A scene stands in for detector output: every candidate has a box, a
//! category, a color and a visual descriptor. The descriptor is a fixed
//! random projection of `(one-hot category, one-hot color, true box)` plus
//! Gaussian noise, so it carries recoverable signal about the object,
//! including its un-jittered box.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{GrammarConfig, SceneConfig};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::parser::{LanguageSceneGraph, NounChunk, RelationKind};

/// Center offset a directional relation must exceed.
pub const RELATION_MARGIN: f64 = 0.05;

const EXPRESSION_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const JITTER_STREAM: u64 = 0xc2b2_ae3d_27d4_eb4f;
const SCENE_ATTEMPTS: u64 = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateObject {
    pub id: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub descriptor: Vec<f64>,
    pub category: usize,
    pub color: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub objects: Vec<CandidateObject>,
    pub target_id: usize,
    pub seed: u64,
}

impl Scene {
    pub fn target(&self) -> &CandidateObject {
        &self.objects[self.target_id]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub target_box: BBox,
    pub target_id: usize,
    pub expression: String,
}

/// A scene as the model sees it (jittered boxes) with its annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scene: Scene,
    pub truth: GroundTruth,
}

/// The fixed descriptor projection shared by every scene of a config.
#[derive(Debug, Clone)]
pub struct DescriptorProjection {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    num_categories: usize,
    num_colors: usize,
}

impl DescriptorProjection {
    pub fn new(config: &SceneConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.projection_seed);
        let cols = config.num_categories + config.num_colors + 4;
        let rows = config.visual_dim;
        let weights = (0..rows * cols)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            rows,
            cols,
            weights,
            num_categories: config.num_categories,
            num_colors: config.num_colors,
        }
    }

    /// Noise-free descriptor of an object.
    pub fn project(&self, category: usize, color: usize, bbox: &BBox) -> Vec<f64> {
        let mut input = vec![0.0; self.cols];
        input[category] = 1.0;
        input[self.num_categories + color] = 1.0;
        let base = self.num_categories + self.num_colors;
        input[base..].copy_from_slice(&bbox.to_array());
        (0..self.rows)
            .map(|r| {
                self.weights[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(&input)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect()
    }
}

pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<Scene> {
    config.validate()?;
    let projection = DescriptorProjection::new(config);
    generate_scene_with(config, &projection, seed)
}

/// [`generate_scene`] with a precomputed projection.
pub fn generate_scene_with(
    config: &SceneConfig,
    projection: &DescriptorProjection,
    seed: u64,
) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = config.num_objects;

    let target_category = rng.random_range(0..config.num_categories);
    let mut categories = vec![target_category; 1 + config.distractor_count];
    while categories.len() < k {
        let mut c = rng.random_range(0..config.num_categories - 1);
        if c >= target_category {
            c += 1;
        }
        categories.push(c);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng);
    let target_id = order.iter().position(|&i| i == 0).expect("target slot");

    let noise = Normal::new(0.0, config.descriptor_noise)
        .map_err(|e| Error::Config(format!("descriptor_noise: {e}")))?;
    let objects = order
        .iter()
        .enumerate()
        .map(|(id, &slot)| {
            let category = categories[slot];
            let color = rng.random_range(0..config.num_colors);
            let w = rng.random_range(config.min_box_size..=config.max_box_size);
            let h = rng.random_range(config.min_box_size..=config.max_box_size);
            let cx = rng.random_range(0.5 * w..=1.0 - 0.5 * w);
            let cy = rng.random_range(0.5 * h..=1.0 - 0.5 * h);
            let bbox = BBox::new(cx, cy, w, h);
            let mut descriptor = projection.project(category, color, &bbox);
            if config.descriptor_noise > 0.0 {
                for d in descriptor.iter_mut() {
                    *d += noise.sample(&mut rng);
                }
            }
            CandidateObject {
                id,
                bbox,
                descriptor,
                category,
                color,
            }
        })
        .collect();
    Ok(Scene {
        objects,
        target_id,
        seed,
    })
}

/// Perturbs every box component with zero-mean Gaussian noise of scale `noise`.
pub fn jitter_boxes(scene: &Scene, noise: f64, seed: u64) -> Scene {
    if noise <= 0.0 {
        return scene.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).expect("noise is positive and finite");
    let mut out = scene.clone();
    for obj in &mut out.objects {
        let b = obj.bbox;
        let w = (b.w + normal.sample(&mut rng)).max(0.01);
        let h = (b.h + normal.sample(&mut rng)).max(0.01);
        let cx = (b.cx + normal.sample(&mut rng)).clamp(-0.25 + 0.5 * w, 1.25 - 0.5 * w);
        let cy = (b.cy + normal.sample(&mut rng)).clamp(-0.25 + 0.5 * h, 1.25 - 0.5 * h);
        obj.bbox = BBox::new(cx, cy, w.min(1.5), h.min(1.5));
    }
    out
}

pub fn relation_holds(kind: RelationKind, subject: &BBox, object: &BBox) -> bool {
    match kind {
        RelationKind::LeftOf => object.cx - subject.cx > RELATION_MARGIN,
        RelationKind::RightOf => subject.cx - object.cx > RELATION_MARGIN,
        RelationKind::Above => object.cy - subject.cy > RELATION_MARGIN,
        RelationKind::Below => subject.cy - object.cy > RELATION_MARGIN,
        RelationKind::Touching => subject.intersection(object) > 0.0,
    }
}

fn chunk_matches(chunk: &NounChunk, obj: &CandidateObject) -> bool {
    chunk.category == obj.category && chunk.colors.iter().all(|&c| c == obj.color)
}

/// Objects satisfying every clause of a parsed expression, by exhaustive
/// search over subject and object bindings.
pub fn resolve_expression(graph: &LanguageSceneGraph, objects: &[CandidateObject]) -> Vec<usize> {
    objects
        .iter()
        .filter(|x| {
            graph.sub_expressions.iter().all(|sub| {
                let subject = &graph.chunks[sub.chunks.0];
                if !chunk_matches(subject, x) {
                    return false;
                }
                if sub.is_single_chunk() {
                    return true;
                }
                let relation = graph
                    .relations
                    .iter()
                    .find(|r| r.subject == sub.chunks.0 && r.object == sub.chunks.1)
                    .expect("clause has a relation");
                let object = &graph.chunks[sub.chunks.1];
                objects.iter().any(|y| {
                    y.id != x.id
                        && chunk_matches(object, y)
                        && relation_holds(relation.kind, &x.bbox, &y.bbox)
                })
            })
        })
        .map(|x| x.id)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ChunkDesc {
    category: usize,
    color: Option<usize>,
}

impl ChunkDesc {
    fn matches(&self, obj: &CandidateObject) -> bool {
        obj.category == self.category && self.color.is_none_or(|c| c == obj.color)
    }

    fn render(&self, grammar: &GrammarConfig) -> String {
        match self.color {
            Some(c) => format!("{} {}", grammar.colors[c], grammar.nouns[self.category]),
            None => grammar.nouns[self.category].clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Clause {
    relation: RelationKind,
    object: ChunkDesc,
}

fn satisfying(scene: &Scene, subject: &ChunkDesc, clauses: &[Clause]) -> Vec<usize> {
    scene
        .objects
        .iter()
        .filter(|x| {
            subject.matches(x)
                && clauses.iter().all(|c| {
                    scene.objects.iter().any(|y| {
                        y.id != x.id
                            && c.object.matches(y)
                            && relation_holds(c.relation, &x.bbox, &y.bbox)
                    })
                })
        })
        .map(|x| x.id)
        .collect()
}

/// Builds an expression of relation clauses that singles out the target.
pub fn generate_expression(
    scene: &Scene,
    grammar: &GrammarConfig,
    seed: u64,
) -> Result<(String, GroundTruth)> {
    let relations: Vec<RelationKind> = grammar
        .relations
        .iter()
        .map(|p| {
            RelationKind::from_phrase(p)
                .ok_or_else(|| Error::Config(format!("unknown relation `{p}`")))
        })
        .collect::<Result<_>>()?;
    let target = scene.target();
    if target.category >= grammar.nouns.len() || target.color >= grammar.colors.len() {
        return Err(Error::Config(
            "scene uses categories or colors outside the grammar".into(),
        ));
    }

    let facts: Vec<(RelationKind, usize)> = scene
        .objects
        .iter()
        .filter(|y| y.id != target.id)
        .flat_map(|y| {
            relations
                .iter()
                .filter(move |&&r| relation_holds(r, &target.bbox, &y.bbox))
                .map(move |&r| (r, y.id))
        })
        .collect();
    if facts.is_empty() {
        return Err(Error::Generation(
            "target has no relation to any other object".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..grammar.max_retries.max(1) {
        let n = rng
            .random_range(grammar.min_clauses..=grammar.max_clauses)
            .min(facts.len());
        let subject = ChunkDesc {
            category: target.category,
            color: rng
                .random_bool(grammar.subject_color_prob.clamp(0.0, 1.0))
                .then_some(target.color),
        };
        let mut clauses: Vec<Clause> = Vec::with_capacity(n);
        for &(relation, y) in facts.choose_multiple(&mut rng, n) {
            let obj = &scene.objects[y];
            let clause = Clause {
                relation,
                object: ChunkDesc {
                    category: obj.category,
                    color: rng
                        .random_bool(grammar.object_color_prob.clamp(0.0, 1.0))
                        .then_some(obj.color),
                },
            };
            if !clauses.contains(&clause) {
                clauses.push(clause);
            }
        }
        if satisfying(scene, &subject, &clauses) == [target.id] {
            let subject_text = subject.render(grammar);
            let expression = clauses
                .iter()
                .map(|c| {
                    format!(
                        "{subject_text} {} {}",
                        c.relation.phrase(),
                        c.object.render(grammar)
                    )
                })
                .collect::<Vec<_>>()
                .join(" and ");
            let truth = GroundTruth {
                target_box: target.bbox,
                target_id: target.id,
                expression: expression.clone(),
            };
            return Ok((expression, truth));
        }
    }
    Err(Error::Generation(format!(
        "no unique expression for target {} after {} attempts",
        target.id, grammar.max_retries
    )))
}

/// One annotated sample: scene, expression, then box jitter.
///
/// Scenes whose target cannot be singled out are redrawn from derived
/// seeds; the stored scene seed is the one that succeeded.
pub fn generate_sample(
    scene_config: &SceneConfig,
    projection: &DescriptorProjection,
    grammar: &GrammarConfig,
    box_jitter: f64,
    seed: u64,
) -> Result<Sample> {
    let mut last_err = None;
    for attempt in 0..SCENE_ATTEMPTS {
        let scene_seed = seed.wrapping_add(attempt << 40);
        let clean = generate_scene_with(scene_config, projection, scene_seed)?;
        match generate_expression(&clean, grammar, scene_seed ^ EXPRESSION_STREAM) {
            Ok((_, truth)) => {
                let scene = jitter_boxes(&clean, box_jitter, scene_seed ^ JITTER_STREAM);
                return Ok(Sample { scene, truth });
            }
            Err(e @ Error::Generation(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Generation("no scene attempts".into())))
}

/// The scene before jitter, recovered from its seed.
pub fn clean_scene(
    scene_config: &SceneConfig,
    projection: &DescriptorProjection,
    sample: &Sample,
) -> Result<Scene> {
    generate_scene_with(scene_config, projection, sample.scene.seed)
}
