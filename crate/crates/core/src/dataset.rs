//! Labeled corpora: manifest files, stratified splits and the synthetic
//! primitive-shape generator.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, IoContext, Result};
use crate::geometry::Mesh;
use crate::shapes::Primitive;
use crate::view_select::fnv1a;

pub const MANIFEST_HEADER: [&str; 4] = ["model_id", "class_label", "split", "mesh_path"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Manifest(format!("unknown split `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub model_id: String,
    pub class_label: String,
    pub split: Split,
    pub mesh_path: PathBuf,
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for e in entries {
        w.write_record([
            e.model_id.as_str(),
            &e.class_label,
            e.split.as_str(),
            &e.mesh_path.to_string_lossy(),
        ])?;
    }
    w.flush().at(path)
}

pub fn read_manifest<R: std::io::Read>(r: R) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Manifest(format!("missing column `{name}`")))
    };
    let [id, label, split, mesh] = [
        col(MANIFEST_HEADER[0])?,
        col(MANIFEST_HEADER[1])?,
        col(MANIFEST_HEADER[2])?,
        col(MANIFEST_HEADER[3])?,
    ];
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("").to_string();
        let e = ManifestEntry {
            model_id: field(id),
            class_label: field(label),
            split: field(split).parse()?,
            mesh_path: PathBuf::from(field(mesh)),
        };
        if e.model_id.is_empty() {
            return Err(Error::Manifest("empty model_id".into()));
        }
        if !seen.insert(e.model_id.clone()) {
            return Err(Error::Manifest(format!("duplicate model_id `{}`", e.model_id)));
        }
        out.push(e);
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    read_manifest(fs::File::open(path).at(path)?)
}

/// Item counts per split for `n` items, by largest remainder.
/// Remainder ties go to the earlier split.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut counts = exact.map(|x| x.floor() as usize);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Assigns splits per class: each class is shuffled with a seeded RNG and cut
/// into contiguous train/val/test runs sized by [`split_counts`].
pub fn split_dataset(entries: &[ManifestEntry], ratios: [f64; 3], seed: u64) -> Result<Vec<ManifestEntry>> {
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 || ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        by_class.entry(&e.class_label).or_default().push(i);
    }
    let mut out = entries.to_vec();
    for (class, members) in by_class {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(class));
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        let counts = split_counts(shuffled.len(), ratios);
        let mut it = shuffled.into_iter();
        for (split, n) in Split::ALL.into_iter().zip(counts) {
            for i in it.by_ref().take(n) {
                out[i].split = split;
            }
        }
    }
    Ok(out)
}

/// Parameters of the synthetic primitive corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: Vec<Primitive>,
    pub instances_per_class: usize,
    pub seed: u64,
    /// Per-axis scale factors are drawn uniformly from `[1 − s, 1 + s]`.
    pub scale_jitter: f64,
    /// Standard deviation of per-vertex Gaussian noise.
    pub vertex_noise: f64,
    pub ratios: [f64; 3],
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: Primitive::ALL.to_vec(),
            instances_per_class: 20,
            seed: 0,
            scale_jitter: 0.3,
            vertex_noise: 0.01,
            ratios: [0.7, 0.1, 0.2],
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let distinct: HashSet<_> = self.classes.iter().collect();
        if distinct.len() < 2 || distinct.len() != self.classes.len() {
            return Err(Error::Config(
                "synthetic corpus needs at least 2 distinct classes".into(),
            ));
        }
        if self.instances_per_class < 4 {
            return Err(Error::Config(
                "synthetic corpus needs at least 4 instances per class".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.scale_jitter) || self.vertex_noise < 0.0 {
            return Err(Error::Config("jitter must satisfy 0 ≤ scale < 1 and noise ≥ 0".into()));
        }
        Ok(())
    }
}

/// One jittered primitive instance.
pub fn synth_instance(p: Primitive, spec: &SynthSpec, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = spec.scale_jitter;
    let scale: [f64; 3] = std::array::from_fn(|_| if s > 0.0 { rng.gen_range(1.0 - s..=1.0 + s) } else { 1.0 });
    let base = p.mesh();
    let noise = Normal::new(0.0, spec.vertex_noise).expect("non-negative noise");
    let vertices = base
        .vertices()
        .iter()
        .map(|v| std::array::from_fn(|a| v[a] * scale[a] + noise.sample(&mut rng)))
        .collect();
    Mesh::new(vertices, base.faces().to_vec()).expect("jitter keeps the mesh valid")
}

/// Writes `<class>_<index>.obj` files into `mesh_dir` and returns the split
/// manifest. Manifest paths are relative to the manifest's directory.
pub fn generate_synthetic(spec: &SynthSpec, mesh_dir: &Path, rel_prefix: &Path) -> Result<Vec<ManifestEntry>> {
    spec.validate()?;
    fs::create_dir_all(mesh_dir).at(mesh_dir)?;
    let jobs: Vec<(Primitive, usize)> = spec
        .classes
        .iter()
        .flat_map(|&p| (0..spec.instances_per_class).map(move |i| (p, i)))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(p, i)| {
            let id = format!("{}_{i:03}", p.name());
            let mesh = synth_instance(p, spec, spec.seed ^ fnv1a(&id));
            let file = format!("{id}.obj");
            let path = mesh_dir.join(&file);
            fs::write(&path, mesh.to_obj()).at(&path)?;
            Ok(ManifestEntry {
                model_id: id,
                class_label: p.name().to_string(),
                split: Split::Train,
                mesh_path: rel_prefix.join(file),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    split_dataset(&entries, spec.ratios, spec.seed)
}
