//! Stage-file pipeline over a run directory.
//!
//! Layout:
//! ```text
//! config.txt  manifest.csv  meshes/  views/  stacks_k<k>/
//! checkpoints/  embeddings/  reports/  stages/
//! ```
//! Each stage checks the markers of the stages it reads from, writes a
//! `stages/<name>.partial` marker while running and replaces it with
//! `stages/<name>.done` on success.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::config::{EvalScope, RunConfig};
use crate::dataset::{generate_synthetic, load_manifest, write_manifest, ManifestEntry, Split, SynthSpec};
use crate::error::{Error, IoContext, Result};
use crate::geometry::{normalize_mesh, parse_obj, perturb_mesh};
use crate::metrics::{evaluate, format_table, write_table_csv, MetricsReport, TableRow};
use crate::models::{bottlenecks, train_with, ModelKind, TrainedModel};
use crate::render::{render_turntable, ViewSet};
use crate::retrieval::{load_embeddings, save_embeddings, write_ranked_csv, Embedding, EmbeddingIndex, RankedList};
use crate::view_select::{model_seed, select_with, ViewStack};

/// Bumped whenever a stage's on-disk output format changes.
pub const STAGE_VERSION: u32 = 1;

/// Salt separating perturbation rotations from other per-model seeds.
const PERTURB_SALT: u64 = 0x5045_5254_5552_4221;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Render,
    Select,
    Train,
    Embed,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Render => "render",
            Stage::Select => "select",
            Stage::Train => "train",
            Stage::Embed => "embed",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// A run directory and its configuration.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub config: RunConfig,
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).at(p)
}

impl Run {
    /// Creates or reuses `dir` and writes the config echo.
    pub fn create(dir: &Path, config: RunConfig) -> Result<Run> {
        config.validate()?;
        mkdir(dir)?;
        mkdir(&dir.join("stages"))?;
        let path = dir.join("config.txt");
        fs::write(&path, config.echo()).at(&path)?;
        Ok(Run {
            dir: dir.to_path_buf(),
            config,
        })
    }

    /// Reads `config.txt` from an existing run directory.
    pub fn open(dir: &Path) -> Result<Run> {
        let path = dir.join("config.txt");
        if !path.exists() {
            return Err(Error::MissingInput(path));
        }
        let text = fs::read_to_string(&path).at(&path)?;
        Ok(Run {
            dir: dir.to_path_buf(),
            config: RunConfig::parse(&text, RunConfig::desk())?,
        })
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join("manifest.csv")
    }

    pub fn views_dir(&self) -> PathBuf {
        self.dir.join("views")
    }

    pub fn stacks_dir(&self, k: usize) -> PathBuf {
        self.dir.join(format!("stacks_k{k}"))
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.dir.join("checkpoints")
    }

    pub fn embeddings_path(&self, kind: ModelKind, k: usize) -> PathBuf {
        self.dir
            .join("embeddings")
            .join(format!("{}.mvem", model_stem(kind, k)))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.dir.join("reports")
    }

    fn marker(&self, stage: Stage, suffix: &str) -> PathBuf {
        self.dir.join("stages").join(format!("{}.{suffix}", stage.name()))
    }

    /// Fails unless `stage` completed with the current format version.
    pub fn require(&self, stage: Stage) -> Result<()> {
        let done = self.marker(stage, "done");
        if !done.exists() {
            return Err(Error::MissingInput(done));
        }
        let text = fs::read_to_string(&done).at(&done)?;
        let version = text
            .lines()
            .find_map(|l| l.strip_prefix("version="))
            .and_then(|v| v.parse::<u32>().ok());
        if version != Some(STAGE_VERSION) {
            return Err(Error::Stage {
                stage: stage.name().into(),
                message: format!("output version {version:?}, this build reads {STAGE_VERSION}"),
            });
        }
        Ok(())
    }

    fn begin(&self, stage: Stage) -> Result<()> {
        mkdir(&self.dir.join("stages"))?;
        let done = self.marker(stage, "done");
        if done.exists() {
            fs::remove_file(&done).at(&done)?;
        }
        let partial = self.marker(stage, "partial");
        fs::write(&partial, "outputs of this stage are incomplete\n").at(&partial)
    }

    fn finish(&self, stage: Stage, outputs: &[String]) -> Result<()> {
        let mut text = format!("stage={}\nversion={STAGE_VERSION}\n", stage.name());
        for o in outputs {
            text += &format!("output={o}\n");
        }
        let done = self.marker(stage, "done");
        fs::write(&done, text).at(&done)?;
        let partial = self.marker(stage, "partial");
        fs::remove_file(&partial).at(&partial)
    }

    /// Runs `body` between the partial and done markers of `stage`.
    fn stage<T>(&self, stage: Stage, body: impl FnOnce() -> Result<(T, Vec<String>)>) -> Result<T> {
        info!("stage {}", stage.name());
        self.begin(stage)?;
        let (value, outputs) = body().map_err(|e| Error::Stage {
            stage: stage.name().into(),
            message: e.to_string(),
        })?;
        self.finish(stage, &outputs)?;
        Ok(value)
    }

    pub fn manifest(&self) -> Result<Vec<ManifestEntry>> {
        self.require(Stage::Synth)?;
        load_manifest(&self.manifest_path())
    }

    /// Writes the synthetic corpus, or copies the configured external manifest.
    pub fn synth(&self) -> Result<Vec<ManifestEntry>> {
        self.stage(Stage::Synth, || {
            let c = &self.config;
            let entries = match &c.manifest {
                Some(path) => {
                    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
                    let parent = parent.unwrap_or(Path::new("."));
                    let base = fs::canonicalize(parent).at(parent)?;
                    load_manifest(path)?
                        .into_iter()
                        .map(|mut e| {
                            if e.mesh_path.is_relative() {
                                e.mesh_path = base.join(&e.mesh_path);
                            }
                            e
                        })
                        .collect()
                }
                None => {
                    let spec = SynthSpec {
                        classes: c.classes.clone(),
                        instances_per_class: c.instances_per_class,
                        seed: c.seed,
                        scale_jitter: c.scale_jitter,
                        vertex_noise: c.vertex_noise,
                        ratios: c.split,
                    };
                    generate_synthetic(&spec, &self.dir.join("meshes"), Path::new("meshes"))?
                }
            };
            write_manifest(&entries, &self.manifest_path())?;
            info!("{} models", entries.len());
            Ok((entries, vec!["manifest.csv".into()]))
        })
    }

    fn mesh_path(&self, e: &ManifestEntry) -> PathBuf {
        match e.mesh_path.is_relative() {
            true => self.dir.join(&e.mesh_path),
            false => e.mesh_path.clone(),
        }
    }

    /// Renders the turntable of every manifest model to PGM files.
    pub fn render(&self) -> Result<()> {
        let entries = self.manifest()?;
        self.stage(Stage::Render, || {
            let c = &self.config;
            let dir = self.views_dir();
            mkdir(&dir)?;
            entries.par_iter().try_for_each(|e| {
                let path = self.mesh_path(e);
                let text = fs::read_to_string(&path).at(&path)?;
                let mut mesh = normalize_mesh(&parse_obj(&text)?)?;
                if c.perturbed {
                    mesh = perturb_mesh(&mesh, model_seed(&e.model_id, c.seed ^ PERTURB_SALT));
                }
                render_turntable(&e.model_id, &mesh, c.n_views, c.resolution, c.elevation)?
                    .write_pgms(&dir)
                    .map(|_| ())
            })?;
            Ok(((), vec!["views/".into()]))
        })
    }

    /// Reduces every model's views to a `k`-channel stack for each configured k.
    pub fn select(&self) -> Result<()> {
        let entries = self.manifest()?;
        self.require(Stage::Render)?;
        self.stage(Stage::Select, || {
            let c = &self.config;
            let mut outputs = Vec::new();
            for &k in &c.ks {
                let dir = self.stacks_dir(k);
                mkdir(&dir)?;
                entries.par_iter().try_for_each(|e| {
                    let vs = ViewSet::read_pgms(&self.views_dir(), &e.model_id, c.n_views)?;
                    let stack = select_with(&vs, k, model_seed(&e.model_id, c.seed), c.kmeans_max_iters)?;
                    stack.save(&dir.join(format!("{}.mvst", e.model_id)))
                })?;
                outputs.push(format!("stacks_k{k}/"));
            }
            Ok(((), outputs))
        })
    }

    fn load_stacks(&self, k: usize, entries: &[&ManifestEntry]) -> Result<Vec<ViewStack>> {
        let dir = self.stacks_dir(k);
        entries
            .par_iter()
            .map(|e| {
                let path = dir.join(format!("{}.mvst", e.model_id));
                if !path.exists() {
                    return Err(Error::MissingInput(path));
                }
                ViewStack::load(&e.model_id, &path)
            })
            .collect()
    }

    /// Trains every configured (kind, k) pair on the train split.
    pub fn train(&self) -> Result<()> {
        let entries = self.manifest()?;
        self.require(Stage::Select)?;
        self.stage(Stage::Train, || {
            let c = &self.config;
            let classes = class_index(&entries);
            let train: Vec<&ManifestEntry> = entries.iter().filter(|e| e.split == Split::Train).collect();
            let labels: Vec<usize> = train.iter().map(|e| classes[&e.class_label]).collect();
            let dir = self.checkpoints_dir();
            mkdir(&dir)?;
            let mut outputs = Vec::new();
            for &k in &c.ks {
                let stacks = self.load_stacks(k, &train)?;
                for &kind in &c.kinds {
                    let stem = model_stem(kind, k);
                    let cfg = c.train(kind);
                    let every = (cfg.iterations / 10).max(1);
                    let model = train_with(kind, &stacks, &labels, classes.len(), &cfg, &c.encoder(k), |i, loss| {
                        if (i + 1) % every == 0 {
                            info!("{stem}: iteration {} loss {loss:.5}", i + 1);
                        }
                    })?;
                    model.save(&dir, &stem)?;
                    outputs.push(format!("checkpoints/{stem}.mvnn"));
                }
            }
            Ok(((), outputs))
        })
    }

    /// Embeds every manifest model with every trained network.
    pub fn embed(&self) -> Result<()> {
        let entries = self.manifest()?;
        self.require(Stage::Train)?;
        self.stage(Stage::Embed, || {
            let c = &self.config;
            mkdir(&self.dir.join("embeddings"))?;
            let all: Vec<&ManifestEntry> = entries.iter().collect();
            let mut outputs = Vec::new();
            for &k in &c.ks {
                let stacks = self.load_stacks(k, &all)?;
                for &kind in &c.kinds {
                    let model = TrainedModel::load(&self.checkpoints_dir(), &model_stem(kind, k))?;
                    let corpus = embed_corpus(&model, &stacks, &all)?;
                    let path = self.embeddings_path(kind, k);
                    save_embeddings(&corpus, &path)?;
                    outputs.push(format!("embeddings/{}.mvem", model_stem(kind, k)));
                }
            }
            Ok(((), outputs))
        })
    }

    /// Ranks and scores each embedding corpus; writes ranked lists and the table.
    pub fn evaluate(&self) -> Result<Vec<TableRow>> {
        let entries = self.manifest()?;
        self.require(Stage::Embed)?;
        self.stage(Stage::Evaluate, || {
            let c = &self.config;
            let dir = self.reports_dir();
            mkdir(&dir)?;
            let scope: BTreeSet<&str> = entries
                .iter()
                .filter(|e| c.eval_scope == EvalScope::All || e.split == Split::Test)
                .map(|e| e.model_id.as_str())
                .collect();
            let mut rows = Vec::new();
            let mut outputs = Vec::new();
            for &kind in &c.kinds {
                for &k in &c.ks {
                    let corpus = load_embeddings(&self.embeddings_path(kind, k))?;
                    let scoped: Vec<Embedding> = corpus
                        .into_iter()
                        .filter(|e| scope.contains(e.model_id.as_str()))
                        .collect();
                    let (report, lists) = rank_and_score(scoped)?;
                    if !report.skipped.is_empty() {
                        warn!("{} queries skipped (singleton class)", report.skipped.len());
                    }
                    let name = format!("ranked_{}.csv", model_stem(kind, k));
                    let path = dir.join(&name);
                    write_ranked_csv(&lists, fs::File::create(&path).at(&path)?)?;
                    outputs.push(format!("reports/{name}"));
                    rows.push(TableRow {
                        model: kind.to_string(),
                        views: k,
                        report,
                    });
                }
            }
            let table = dir.join("table.txt");
            fs::write(&table, format_table(&rows)).at(&table)?;
            let csv = dir.join("table.csv");
            write_table_csv(&rows, fs::File::create(&csv).at(&csv)?)?;
            outputs.extend(["reports/table.txt".into(), "reports/table.csv".into()]);
            Ok((rows, outputs))
        })
    }

    /// All stages in order.
    pub fn pipeline(&self) -> Result<Vec<TableRow>> {
        self.synth()?;
        self.render()?;
        self.select()?;
        self.train()?;
        self.embed()?;
        self.evaluate()
    }
}

pub fn model_stem(kind: ModelKind, k: usize) -> String {
    format!("{}_k{k}", kind.short_name())
}

/// Class labels in sorted order mapped to dense indices.
pub fn class_index(entries: &[ManifestEntry]) -> BTreeMap<String, usize> {
    let names: BTreeSet<&str> = entries.iter().map(|e| e.class_label.as_str()).collect();
    names.into_iter().enumerate().map(|(i, n)| (n.to_string(), i)).collect()
}

/// Bottleneck embeddings of `stacks`, labeled from the matching entries.
pub fn embed_corpus(model: &TrainedModel, stacks: &[ViewStack], entries: &[&ManifestEntry]) -> Result<Vec<Embedding>> {
    let refs: Vec<&ViewStack> = stacks.iter().collect();
    let groups: Vec<Vec<Vec<f32>>> = refs
        .par_chunks(16)
        .map(|g| bottlenecks(&model.network, g, g.len()))
        .collect::<Result<_>>()?;
    Ok(groups
        .into_iter()
        .flatten()
        .zip(entries)
        .map(|(v, e)| Embedding::new(e.model_id.clone(), e.class_label.clone(), v))
        .collect())
}

/// Ranks every item of `corpus` against the rest and scores the lists.
pub fn rank_and_score(corpus: Vec<Embedding>) -> Result<(MetricsReport, Vec<RankedList>)> {
    let labels: BTreeMap<String, String> = corpus.iter().map(|e| (e.model_id.clone(), e.label.clone())).collect();
    let index = EmbeddingIndex::new(corpus)?;
    let lists = index
        .items()
        .par_iter()
        .map(|e| index.rank_all(&e.model_id))
        .collect::<Result<Vec<_>>>()?;
    if index.zero_norm_warnings() > 0 {
        warn!(
            "{} distances involved a zero-norm embedding",
            index.zero_norm_warnings()
        );
    }
    Ok((evaluate(&lists, &labels)?, lists))
}
