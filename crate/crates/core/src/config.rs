//! Run configuration: one flat key-value document (TOML syntax).
//!
//! Every key has a default, so an empty file is a valid configuration.
//! The sub-configs consumed by the individual modules are views derived
//! from [`RunConfig`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use grounder_autodiff::AdamConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Processing order of sub-expressions during reasoning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Forward,
    #[default]
    Backward,
}

impl FromStr for Order {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Order::Forward),
            "backward" => Ok(Order::Backward),
            other => Err(Error::Usage(format!("unknown order `{other}`"))),
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Order::Forward => "forward",
            Order::Backward => "backward",
        })
    }
}

/// Which of the two graphs take part in matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GraphSelection {
    #[serde(rename = "a")]
    Visual,
    #[serde(rename = "c")]
    Categorical,
    #[default]
    Both,
}

impl GraphSelection {
    pub fn visual(self) -> bool {
        matches!(self, GraphSelection::Visual | GraphSelection::Both)
    }

    pub fn categorical(self) -> bool {
        matches!(self, GraphSelection::Categorical | GraphSelection::Both)
    }
}

impl FromStr for GraphSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(GraphSelection::Visual),
            "c" => Ok(GraphSelection::Categorical),
            "both" => Ok(GraphSelection::Both),
            other => Err(Error::Usage(format!("unknown graph selection `{other}`"))),
        }
    }
}

impl fmt::Display for GraphSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphSelection::Visual => "a",
            GraphSelection::Categorical => "c",
            GraphSelection::Both => "both",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub dgc: bool,
    pub egr: bool,
    pub graphs: GraphSelection,
    pub order: Order,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            dgc: true,
            egr: true,
            graphs: GraphSelection::Both,
            order: Order::Backward,
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "dgc={} egr={} graphs={} order={}",
            on_off(self.dgc),
            on_off(self.egr),
            self.graphs,
            self.order
        )
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub num_objects: usize,
    pub num_categories: usize,
    pub num_colors: usize,
    pub visual_dim: usize,
    pub descriptor_noise: f64,
    /// Objects besides the target that share its category.
    pub distractor_count: usize,
    pub min_box_size: f64,
    pub max_box_size: f64,
    /// Seed of the fixed descriptor projection, shared by every scene.
    pub projection_seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=64).contains(&self.num_objects) {
            return Err(Error::Config(format!(
                "num_objects must be in [2, 64], got {}",
                self.num_objects
            )));
        }
        if self.num_categories < 2 || self.num_colors < 2 {
            return Err(Error::Config(
                "category and color vocabularies need at least 2 entries".into(),
            ));
        }
        if self.visual_dim < 8 {
            return Err(Error::Config(format!(
                "visual_dim must be at least 8, got {}",
                self.visual_dim
            )));
        }
        if self.distractor_count >= self.num_objects {
            return Err(Error::Config(format!(
                "distractor_count {} leaves no room in a scene of {} objects",
                self.distractor_count, self.num_objects
            )));
        }
        if !(self.descriptor_noise >= 0.0) {
            return Err(Error::Config("descriptor_noise must be >= 0".into()));
        }
        if !(self.min_box_size > 0.0
            && self.min_box_size <= self.max_box_size
            && self.max_box_size <= 1.0)
        {
            return Err(Error::Config(
                "box sizes must satisfy 0 < min_box_size <= max_box_size <= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrammarConfig {
    pub nouns: Vec<String>,
    pub colors: Vec<String>,
    pub relations: Vec<String>,
    pub min_clauses: usize,
    pub max_clauses: usize,
    pub max_retries: usize,
    /// Probability that the subject chunk carries its color attribute.
    pub subject_color_prob: f64,
    /// Probability that an object chunk carries its color attribute.
    pub object_color_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_categories: usize,
    pub num_colors: usize,
    pub visual_dim: usize,
    pub token_dim: usize,
    pub hidden_dim: usize,
    pub category_dim: usize,
    pub color_dim: usize,
    pub spatial_dim: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub chunk_match_dim: usize,
    pub match_dim: usize,
    pub egr_hidden: usize,
    /// Reasoning steps with their own message-passing weights; later
    /// steps reuse the last set.
    pub max_steps: usize,
}

impl ModelConfig {
    pub fn categorical_dim(&self) -> usize {
        self.category_dim + self.color_dim
    }

    /// Dimension of the whole-expression embedding `q`.
    pub fn expression_dim(&self) -> usize {
        2 * self.hidden_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

/// The flat configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset_dir: PathBuf,
    pub output_dir: PathBuf,

    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,

    pub num_objects: usize,
    pub distractor_count: usize,
    pub box_jitter: f64,
    pub descriptor_noise: f64,
    pub min_box_size: f64,
    pub max_box_size: f64,
    pub projection_seed: u64,

    pub nouns: Vec<String>,
    pub colors: Vec<String>,
    pub relations: Vec<String>,
    pub min_clauses: usize,
    pub max_clauses: usize,
    pub max_retries: usize,
    pub subject_color_prob: f64,
    pub object_color_prob: f64,

    pub visual_dim: usize,
    pub token_dim: usize,
    pub hidden_dim: usize,
    pub category_dim: usize,
    pub color_dim: usize,
    pub spatial_dim: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub chunk_match_dim: usize,
    pub match_dim: usize,
    pub egr_hidden: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,

    pub dgc: bool,
    pub egr: bool,
    pub graphs: GraphSelection,
    pub order: Order,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            seed: 7,
            dataset_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs/default"),
            train_size: 2000,
            val_size: 200,
            test_size: 500,
            num_objects: 8,
            distractor_count: 3,
            box_jitter: 0.05,
            descriptor_noise: 0.05,
            min_box_size: 0.15,
            max_box_size: 0.35,
            projection_seed: 0x0bad_5eed,
            nouns: words(&[
                "box", "ball", "cup", "book", "lamp", "chair", "vase", "plant",
            ]),
            colors: words(&[
                "red", "blue", "green", "yellow", "white", "black", "pink", "brown", "orange",
                "purple", "gray", "cyan",
            ]),
            relations: words(&["left of", "right of", "above", "below", "touching"]),
            min_clauses: 1,
            max_clauses: 3,
            max_retries: 200,
            subject_color_prob: 1.0,
            object_color_prob: 0.5,
            visual_dim: 64,
            token_dim: 32,
            hidden_dim: 32,
            category_dim: 16,
            color_dim: 16,
            spatial_dim: 8,
            node_dim: 32,
            edge_dim: 32,
            chunk_match_dim: 32,
            match_dim: 32,
            egr_hidden: 32,
            epochs: 30,
            batch_size: 32,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            dgc: true,
            egr: true,
            graphs: GraphSelection::Both,
            order: Order::Backward,
        }
    }
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// Short digest of the canonical serialization, embedded in outputs.
    /// Directory settings are left out: they choose where results go, not
    /// what they are.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.dataset_dir = PathBuf::new();
        canonical.output_dir = PathBuf::new();
        let digest = Sha256::digest(canonical.to_text().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn validate(&self) -> Result<()> {
        self.scene().validate()?;
        let grammar = self.grammar();
        crate::parser::Vocabulary::new(&grammar)?;
        if grammar.min_clauses < 1 || grammar.min_clauses > grammar.max_clauses {
            return Err(Error::Config(
                "clause counts must satisfy 1 <= min_clauses <= max_clauses".into(),
            ));
        }
        let dims = [
            self.token_dim,
            self.hidden_dim,
            self.category_dim,
            self.color_dim,
            self.spatial_dim,
            self.node_dim,
            self.edge_dim,
            self.chunk_match_dim,
            self.match_dim,
            self.egr_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::Config("invalid optimizer hyperparameters".into()));
        }
        if !(self.box_jitter >= 0.0) {
            return Err(Error::Config("box_jitter must be >= 0".into()));
        }
        Ok(())
    }

    pub fn scene(&self) -> SceneConfig {
        SceneConfig {
            num_objects: self.num_objects,
            num_categories: self.nouns.len(),
            num_colors: self.colors.len(),
            visual_dim: self.visual_dim,
            descriptor_noise: self.descriptor_noise,
            distractor_count: self.distractor_count,
            min_box_size: self.min_box_size,
            max_box_size: self.max_box_size,
            projection_seed: self.projection_seed,
        }
    }

    pub fn grammar(&self) -> GrammarConfig {
        GrammarConfig {
            nouns: self.nouns.clone(),
            colors: self.colors.clone(),
            relations: self.relations.clone(),
            min_clauses: self.min_clauses,
            max_clauses: self.max_clauses,
            max_retries: self.max_retries,
            subject_color_prob: self.subject_color_prob,
            object_color_prob: self.object_color_prob,
        }
    }

    pub fn model(&self) -> ModelConfig {
        let vocab =
            crate::parser::Vocabulary::new(&self.grammar()).expect("grammar validated on load");
        ModelConfig {
            vocab_size: vocab.len(),
            num_categories: self.nouns.len(),
            num_colors: self.colors.len(),
            visual_dim: self.visual_dim,
            token_dim: self.token_dim,
            hidden_dim: self.hidden_dim,
            category_dim: self.category_dim,
            color_dim: self.color_dim,
            spatial_dim: self.spatial_dim,
            node_dim: self.node_dim,
            edge_dim: self.edge_dim,
            chunk_match_dim: self.chunk_match_dim,
            match_dim: self.match_dim,
            egr_hidden: self.egr_hidden,
            max_steps: self.max_clauses,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
        }
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            dgc: self.dgc,
            egr: self.egr,
            graphs: self.graphs,
            order: self.order,
        }
    }

    pub fn set_ablation(&mut self, ablation: Ablation) {
        self.dgc = ablation.dgc;
        self.egr = ablation.egr;
        self.graphs = ablation.graphs;
        self.order = ablation.order;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        let t = c.train();
        assert_eq!(
            (t.epochs, t.batch_size, t.adam.learning_rate),
            (30, 32, 1e-4)
        );
        assert_eq!((t.adam.beta1, t.adam.beta2), (0.8, 0.9));
        assert_eq!(c.order, Order::Backward);
    }

    #[test]
    fn round_trips_through_text() {
        let mut c = RunConfig::default();
        c.graphs = GraphSelection::Categorical;
        c.dgc = false;
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse("num_objects = 1").is_err());
        assert!(RunConfig::parse("nouns = [\"box\"]").is_err());
        assert!(RunConfig::parse("unknown_key = 3").is_err());
        assert!(RunConfig::parse("relations = [\"beside\"]").is_err());
        assert!(RunConfig::parse("graphs = \"c\"").is_ok());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
