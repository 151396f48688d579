//! The commands behind the `grounder` tool: dataset generation, training,
//! evaluation, ablation grids and reasoning traces.
//!
//! Every command is a pure function of its [`RunConfig`]; outputs carry the
//! config hash so results can be matched to the settings that made them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use grounder_autodiff::ParameterStore;
use serde::Serialize;

use crate::checkpoint;
use crate::config::{Ablation, GraphSelection, RunConfig};
use crate::dataset::{read_dataset, write_dataset};
use crate::error::{Error, Result};
use crate::graph::GraphKind;
use crate::metrics::{write_metrics, MetricsRow};
use crate::model::{predict, ForwardOutput, PreparedSample};
use crate::parser::{parse, tokenize, Vocabulary};
use crate::synth::{generate_sample, DescriptorProjection, Sample};
use crate::train::{evaluate_split, prepare, train, SplitReport};
use crate::weights::ModelParams;

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Seed of sample `index` in `split`. Splits live in disjoint ranges of
/// the seed space, well clear of the retry offsets used by the generator.
pub fn split_seed(master: u64, split: &str, index: usize) -> u64 {
    let lane: u64 = match split {
        "train" => 1,
        "val" => 2,
        "test" => 3,
        other => panic!("unknown split `{other}`"),
    };
    master.wrapping_add(lane << 56).wrapping_add(index as u64)
}

fn split_size(config: &RunConfig, split: &str) -> usize {
    match split {
        "train" => config.train_size,
        "val" => config.val_size,
        _ => config.test_size,
    }
}

pub fn dataset_path(config: &RunConfig, split: &str) -> PathBuf {
    config.dataset_dir.join(format!("{split}.jsonl"))
}

pub fn generate_split(config: &RunConfig, split: &str) -> Result<Vec<Sample>> {
    let scene = config.scene();
    let grammar = config.grammar();
    let projection = DescriptorProjection::new(&scene);
    (0..split_size(config, split))
        .map(|i| {
            let seed = split_seed(config.seed, split, i);
            generate_sample(&scene, &projection, &grammar, config.box_jitter, seed)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub config_hash: String,
    pub files: Vec<(PathBuf, usize)>,
}

pub fn cmd_generate(config: &RunConfig) -> Result<GenerateSummary> {
    config.validate()?;
    let mut files = Vec::new();
    for split in SPLITS {
        let samples = generate_split(config, split)?;
        let path = dataset_path(config, split);
        write_dataset(&path, &samples)?;
        files.push((path, samples.len()));
    }
    Ok(GenerateSummary {
        config_hash: config.hash(),
        files,
    })
}

/// Reads one split; a missing file is a usage error.
pub fn load_split(config: &RunConfig, split: &str) -> Result<Vec<Sample>> {
    let path = dataset_path(config, split);
    if !path.exists() {
        return Err(Error::Usage(format!(
            "dataset file {} not found; run `generate` first",
            path.display()
        )));
    }
    read_dataset(&path)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Where a training run writes its files.
pub struct RunFiles {
    pub dir: PathBuf,
    /// Also keep a checkpoint per epoch.
    pub per_epoch: bool,
}

impl RunFiles {
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.bin")
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.dir
            .join("checkpoints")
            .join(format!("epoch-{epoch:03}.bin"))
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub config_hash: String,
    pub rows: Vec<MetricsRow>,
    /// Final-epoch result on the test split.
    pub test: SplitReport,
    pub store: ParameterStore,
}

/// Trains on the train split, evaluating validation and test after every
/// epoch. With `files`, metrics and checkpoints are written as it goes.
pub fn fit(config: &RunConfig, data: &Splits, files: Option<&RunFiles>) -> Result<TrainSummary> {
    let hash = config.hash();
    let model = config.model();
    let ablation = config.ablation();
    let vocab = Vocabulary::new(&config.grammar())?;
    let train_set = prepare(&data.train, &vocab, &ablation)?;
    let val_set = prepare(&data.val, &vocab, &ablation)?;
    let test_set = prepare(&data.test, &vocab, &ablation)?;
    if let Some(f) = files {
        create_dir(&f.dir)?;
        if f.per_epoch {
            create_dir(&f.dir.join("checkpoints"))?;
        }
        write_text(&f.dir.join("config.toml"), &config.to_text())?;
    }

    let mut rows = Vec::new();
    let mut test = SplitReport::default();
    let (store, _) = train(
        config.seed,
        &model,
        &config.train(),
        &ablation,
        &train_set,
        |end| {
            rows.push(end.train.row(end.epoch, "train"));
            if !val_set.is_empty() {
                let val = evaluate_split(end.store, &model, end.params, &ablation, &val_set)?;
                rows.push(val.row(end.epoch, "val"));
            }
            test = evaluate_split(end.store, &model, end.params, &ablation, &test_set)?;
            rows.push(test.row(end.epoch, "test"));
            if let Some(f) = files {
                write_metrics(&f.metrics(), &rows)?;
                if f.per_epoch {
                    checkpoint::save(&f.epoch_checkpoint(end.epoch), &hash, end.store)?;
                }
            }
            Ok(())
        },
    )?;
    if let Some(f) = files {
        checkpoint::save(&f.checkpoint(), &hash, &store)?;
    }
    Ok(TrainSummary {
        config_hash: hash,
        rows,
        test,
        store,
    })
}

/// The three dataset splits, read once and shared between runs.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Splits {
    pub fn load(config: &RunConfig) -> Result<Self> {
        Ok(Self {
            train: load_split(config, "train")?,
            val: load_split(config, "val")?,
            test: load_split(config, "test")?,
        })
    }

    pub fn get(&self, split: &str) -> Result<&[Sample]> {
        match split {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Usage(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainSummary> {
    config.validate()?;
    let data = Splits::load(config)?;
    let files = RunFiles {
        dir: config.output_dir.clone(),
        per_epoch: true,
    };
    fit(config, &data, Some(&files))
}

/// Loads a checkpoint and checks it against the model the config describes.
pub fn load_model(
    config: &RunConfig,
    path: &Path,
) -> Result<(ParameterStore, ModelParams, String)> {
    if !path.exists() {
        return Err(Error::Usage(format!(
            "checkpoint {} not found; run `train` first",
            path.display()
        )));
    }
    let ckpt = checkpoint::load(path)?;
    let params = ModelParams::resolve(&config.model(), &ckpt.store)?;
    Ok((ckpt.store, params, ckpt.config_hash))
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub config_hash: String,
    /// Hash stored in the checkpoint, which may differ when flags changed.
    pub checkpoint_hash: String,
    pub split: String,
    pub report: SplitReport,
}

/// Evaluates a checkpoint on one split. With `trace`, per-step tables for
/// every sample are written next to the checkpoint's run directory.
pub fn cmd_eval(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    split: &str,
    trace: bool,
) -> Result<EvalSummary> {
    config.validate()?;
    let default = RunFiles {
        dir: config.output_dir.clone(),
        per_epoch: false,
    }
    .checkpoint();
    let path = checkpoint.unwrap_or(&default);
    let (store, params, checkpoint_hash) = load_model(config, path)?;
    let samples = load_split(config, split)?;
    let vocab = Vocabulary::new(&config.grammar())?;
    let ablation = config.ablation();
    let prepared = prepare(&samples, &vocab, &ablation)?;
    let model = config.model();
    let report = evaluate_split(&store, &model, &params, &ablation, &prepared)?;
    if trace {
        let mut tables = TraceTables::default();
        for (i, s) in prepared.iter().enumerate() {
            let out = predict(&store, &model, &params, &ablation, s)?;
            tables.push(i, &out);
        }
        create_dir(&config.output_dir)?;
        tables.write(&config.output_dir, &format!("trace-{split}"))?;
    }
    Ok(EvalSummary {
        config_hash: config.hash(),
        checkpoint_hash,
        split: split.to_string(),
        report,
    })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub report: SplitReport,
}

#[derive(Debug, Clone)]
pub struct AblationSummary {
    pub config_hash: String,
    /// `{DGC, EGR}` on/off grid, all with both graphs.
    pub modules: Vec<AblationRow>,
    /// Visual only, categorical only, both; DGC and EGR on.
    pub graphs: Vec<AblationRow>,
}

fn mark(on: bool) -> &'static str {
    if on {
        "yes"
    } else {
        "no"
    }
}

impl AblationSummary {
    pub fn module(&self, dgc: bool, egr: bool) -> &AblationRow {
        self.modules
            .iter()
            .find(|r| r.ablation.dgc == dgc && r.ablation.egr == egr)
            .expect("grid covers every combination")
    }

    /// Plain-text tables, one row per run, test-split numbers.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config {}", self.config_hash);
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<5} {:<5} {:>8} {:>12} {:>9}",
            "DGC", "EGR", "acc@0.5", "acc_raw_box", "mean_iou"
        );
        for r in &self.modules {
            let m = r.report.metrics;
            let _ = writeln!(
                s,
                "{:<5} {:<5} {:>8.4} {:>12.4} {:>9.4}",
                mark(r.ablation.dgc),
                mark(r.ablation.egr),
                m.acc_at_05,
                m.acc_raw_box,
                m.mean_iou
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<5} {:<5} {:>8} {:>12} {:>9}",
            "G_a", "G_c", "acc@0.5", "acc_raw_box", "mean_iou"
        );
        for r in &self.graphs {
            let m = r.report.metrics;
            let g = r.ablation.graphs;
            let _ = writeln!(
                s,
                "{:<5} {:<5} {:>8.4} {:>12.4} {:>9.4}",
                mark(g.visual()),
                mark(g.categorical()),
                m.acc_at_05,
                m.acc_raw_box,
                m.mean_iou
            );
        }
        s
    }

    fn csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row {
            grid: &'static str,
            dgc: bool,
            egr: bool,
            graphs: String,
            order: String,
            #[serde(rename = "acc_at_0.5")]
            acc_at_05: f64,
            acc_raw_box: f64,
            mean_iou: f64,
            mean_raw_iou: f64,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let rows = self
            .modules
            .iter()
            .map(|r| ("modules", r))
            .chain(self.graphs.iter().map(|r| ("graphs", r)));
        for (grid, r) in rows {
            let m = r.report.metrics;
            w.serialize(Row {
                grid,
                dgc: r.ablation.dgc,
                egr: r.ablation.egr,
                graphs: r.ablation.graphs.to_string(),
                order: r.ablation.order.to_string(),
                acc_at_05: m.acc_at_05,
                acc_raw_box: m.acc_raw_box,
                mean_iou: m.mean_iou,
                mean_raw_iou: m.mean_raw_iou,
            })
            .map_err(|e| Error::Numeric(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Trains every ablation variant on the same dataset files and reports
/// test-split results. Writes `ablation.txt` and `ablation.csv` to the
/// output directory.
pub fn cmd_ablate(config: &RunConfig) -> Result<AblationSummary> {
    config.validate()?;
    let data = Splits::load(config)?;
    let base = config.ablation();
    let run = |ablation: Ablation| -> Result<AblationRow> {
        let mut c = config.clone();
        c.set_ablation(ablation);
        let summary = fit(&c, &data, None)?;
        Ok(AblationRow {
            ablation,
            report: summary.test,
        })
    };

    let mut modules = Vec::new();
    for (dgc, egr) in [(false, false), (false, true), (true, false), (true, true)] {
        modules.push(run(Ablation {
            dgc,
            egr,
            graphs: GraphSelection::Both,
            order: base.order,
        })?);
    }
    let mut graphs = Vec::new();
    for g in [GraphSelection::Visual, GraphSelection::Categorical] {
        graphs.push(run(Ablation {
            dgc: true,
            egr: true,
            graphs: g,
            order: base.order,
        })?);
    }
    graphs.push(modules[3].clone());

    let summary = AblationSummary {
        config_hash: config.hash(),
        modules,
        graphs,
    };
    create_dir(&config.output_dir)?;
    write_text(&config.output_dir.join("ablation.txt"), &summary.table())?;
    write_text(&config.output_dir.join("ablation.csv"), &summary.csv()?)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeTraceRow {
    pub sample: usize,
    pub step: usize,
    pub clause: usize,
    pub graph: &'static str,
    pub node: usize,
    pub tau: f64,
    pub gate: u8,
    pub active: u8,
    /// 0 for nodes outside the step's sub-graph.
    pub node_weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeTraceRow {
    pub sample: usize,
    pub step: usize,
    pub graph: &'static str,
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Per-step gate and weight tables in the metrics CSV style.
#[derive(Debug, Clone, Default)]
pub struct TraceTables {
    pub nodes: Vec<NodeTraceRow>,
    pub edges: Vec<EdgeTraceRow>,
}

impl TraceTables {
    pub fn push(&mut self, sample: usize, out: &ForwardOutput) {
        for st in &out.trace {
            for kind in [GraphKind::Visual, GraphKind::Categorical] {
                let Some(g) = st.graph(kind) else { continue };
                for node in 0..g.tau.len() {
                    let slot = st.active.iter().position(|&a| a == node);
                    self.nodes.push(NodeTraceRow {
                        sample,
                        step: st.step,
                        clause: st.clause,
                        graph: kind.prefix(),
                        node,
                        tau: g.tau[node],
                        gate: u8::from(g.gates[node]),
                        active: u8::from(slot.is_some()),
                        node_weight: slot.map_or(0.0, |a| g.node_weights[a]),
                    });
                }
                for (a, row) in g.edge_weights.iter().enumerate() {
                    for (b, &w) in row.iter().enumerate() {
                        if a != b {
                            self.edges.push(EdgeTraceRow {
                                sample,
                                step: st.step,
                                graph: kind.prefix(),
                                from: st.active[a],
                                to: st.active[b],
                                weight: w,
                            });
                        }
                    }
                }
            }
        }
    }

    fn render<T: Serialize>(rows: &[T]) -> String {
        let mut w = csv::WriterBuilder::new()
            .has_headers(true)
            .from_writer(Vec::new());
        for r in rows {
            w.serialize(r).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv output is UTF-8")
    }

    pub fn nodes_csv(&self) -> String {
        Self::render(&self.nodes)
    }

    pub fn edges_csv(&self) -> String {
        Self::render(&self.edges)
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        write_text(&dir.join(format!("{stem}-nodes.csv")), &self.nodes_csv())?;
        write_text(&dir.join(format!("{stem}-edges.csv")), &self.edges_csv())
    }
}

#[derive(Debug, Clone)]
pub struct TraceSummary {
    pub config_hash: String,
    pub expression: String,
    pub output: ForwardOutput,
    pub tables: TraceTables,
}

impl TraceSummary {
    /// Human-readable report: tables, then the decision.
    pub fn render(&self) -> String {
        let p = &self.output.prediction;
        let b = p.refined_box.to_array();
        let mut s = String::new();
        let _ = writeln!(s, "config {}", self.config_hash);
        let _ = writeln!(s, "expression: {}", self.expression);
        let _ = writeln!(s);
        s.push_str(&self.tables.nodes_csv());
        let _ = writeln!(s);
        s.push_str(&self.tables.edges_csv());
        let _ = writeln!(s);
        let _ = writeln!(s, "selected_node,{}", p.selected_id);
        let _ = writeln!(s, "refined_box,{},{},{},{}", b[0], b[1], b[2], b[3]);
        s
    }
}

/// Runs one sample through a checkpoint and records every reasoning step.
pub fn cmd_trace(config: &RunConfig, checkpoint: &Path, sample: &Sample) -> Result<TraceSummary> {
    config.validate()?;
    let (store, params, _) = load_model(config, checkpoint)?;
    let vocab = Vocabulary::new(&config.grammar())?;
    let ablation = config.ablation();
    let prepared = PreparedSample::new(sample, &vocab, &ablation)?;
    let output = predict(&store, &config.model(), &params, &ablation, &prepared)?;
    let mut tables = TraceTables::default();
    tables.push(0, &output);
    Ok(TraceSummary {
        config_hash: config.hash(),
        expression: sample.truth.expression.clone(),
        output,
        tables,
    })
}

/// The parsed language scene graph of `expression` as indented text.
pub fn parse_dump(config: &RunConfig, expression: &str) -> Result<String> {
    let vocab = Vocabulary::new(&config.grammar())?;
    let tokens = tokenize(expression, &vocab)?;
    Ok(parse(&tokens, &vocab)?.dump(&vocab))
}
