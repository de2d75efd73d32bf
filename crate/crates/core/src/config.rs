//! Run configuration: a flat `key = value` schema with desk and
//! paper-faithful presets.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use mvembed_nn::AdamConfig;

use crate::error::{Error, Result};
use crate::models::{EncoderConfig, ModelKind, TrainConfig};
use crate::shapes::Primitive;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    PaperFaithful,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::PaperFaithful => "paper-faithful",
        }
    }
}

/// Which corpus items are ranked and scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalScope {
    Test,
    All,
}

impl EvalScope {
    pub fn name(self) -> &'static str {
        match self {
            EvalScope::Test => "test",
            EvalScope::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub n_views: usize,
    pub resolution: usize,
    pub elevation: f64,
    pub ks: Vec<usize>,
    pub kinds: Vec<ModelKind>,
    pub perturbed: bool,
    pub kmeans_max_iters: usize,
    pub classes: Vec<Primitive>,
    pub instances_per_class: usize,
    pub scale_jitter: f64,
    pub vertex_noise: f64,
    pub split: [f64; 3],
    /// External manifest; when unset the synthetic corpus is generated.
    pub manifest: Option<PathBuf>,
    pub blocks: usize,
    pub kernel: usize,
    pub base_channels: usize,
    pub bottleneck_dim: usize,
    pub batch_size: usize,
    pub ae_iterations: usize,
    pub cls_iterations: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda: f64,
    pub eval_scope: EvalScope,
}

impl RunConfig {
    pub fn desk() -> Self {
        let adam = AdamConfig::default();
        Self {
            preset: Preset::Desk,
            seed: 0,
            n_views: 30,
            resolution: 64,
            elevation: 30.0,
            ks: vec![2, 3, 4],
            kinds: ModelKind::ALL.to_vec(),
            perturbed: false,
            kmeans_max_iters: 100,
            classes: Primitive::ALL.to_vec(),
            instances_per_class: 20,
            scale_jitter: 0.3,
            vertex_noise: 0.01,
            split: [0.7, 0.1, 0.2],
            manifest: None,
            blocks: 4,
            kernel: 5,
            base_channels: 8,
            bottleneck_dim: 128,
            batch_size: 1,
            ae_iterations: 2000,
            cls_iterations: 1000,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            lambda: 1.0,
            eval_scope: EvalScope::Test,
        }
    }

    pub fn paper_faithful() -> Self {
        Self {
            preset: Preset::PaperFaithful,
            base_channels: 64,
            batch_size: 100,
            ae_iterations: 50_000,
            cls_iterations: 20_000,
            ..Self::desk()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::PaperFaithful => Self::paper_faithful(),
        }
    }

    pub fn encoder(&self, k: usize) -> EncoderConfig {
        EncoderConfig {
            resolution: self.resolution,
            in_channels: k,
            blocks: self.blocks,
            kernel: self.kernel,
            base_channels: self.base_channels,
            bottleneck_dim: self.bottleneck_dim,
        }
    }

    pub fn train(&self, kind: ModelKind) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            iterations: match kind {
                ModelKind::Classification => self.cls_iterations,
                _ => self.ae_iterations,
            },
            seed: self.seed,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            lambda: self.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_views == 0 {
            return bad("n_views must be at least 1");
        }
        if self.resolution == 0 || self.resolution % 16 != 0 || self.resolution > 256 {
            return bad("resolution must be a multiple of 16 no larger than 256");
        }
        if self.ks.is_empty() || self.ks.iter().any(|&k| k == 0 || k > self.n_views) {
            return bad("every k must lie in 1..=n_views");
        }
        if self.kinds.is_empty() {
            return bad("at least one model kind is required");
        }
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split ratios must sum to 1");
        }
        if self.batch_size == 0 || self.ae_iterations == 0 || self.cls_iterations == 0 {
            return bad("batch_size and iteration counts must be at least 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        self.encoder(self.ks[0]).validate()
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
        }
        fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',').map(|s| parse(key, s.trim())).collect()
        }
        match key {
            "preset" => {
                self.preset = match value {
                    "desk" => Preset::Desk,
                    "paper-faithful" => Preset::PaperFaithful,
                    _ => return Err(Error::Config(format!("unknown preset `{value}`"))),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "n_views" => self.n_views = parse(key, value)?,
            "resolution" => self.resolution = parse(key, value)?,
            "elevation" => self.elevation = parse(key, value)?,
            "k" => self.ks = list(key, value)?,
            "kinds" => self.kinds = value.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?,
            "perturbed" => self.perturbed = parse(key, value)?,
            "kmeans_max_iters" => self.kmeans_max_iters = parse(key, value)?,
            "classes" => self.classes = value.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?,
            "instances_per_class" => self.instances_per_class = parse(key, value)?,
            "scale_jitter" => self.scale_jitter = parse(key, value)?,
            "vertex_noise" => self.vertex_noise = parse(key, value)?,
            "split" => {
                let v: Vec<f64> = list(key, value)?;
                self.split = v
                    .try_into()
                    .map_err(|_| Error::Config("split needs three ratios".into()))?;
            }
            "manifest" => {
                self.manifest = match value {
                    "" => None,
                    p => Some(PathBuf::from(p)),
                }
            }
            "blocks" => self.blocks = parse(key, value)?,
            "kernel" => self.kernel = parse(key, value)?,
            "base_channels" => self.base_channels = parse(key, value)?,
            "bottleneck_dim" => self.bottleneck_dim = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "ae_iterations" => self.ae_iterations = parse(key, value)?,
            "cls_iterations" => self.cls_iterations = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "eval_scope" => {
                self.eval_scope = match value {
                    "test" => EvalScope::Test,
                    "all" => EvalScope::All,
                    _ => return Err(Error::Config(format!("unknown eval_scope `{value}`"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over `base`. `#` starts a comment line.
    /// A `preset` line, if present, must come first and resets the base.
    pub fn parse(text: &str, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = base;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "preset" {
                let seed = cfg.seed;
                let mut fresh = RunConfig::desk();
                fresh.set(k, v)?;
                cfg = RunConfig {
                    seed,
                    ..RunConfig::preset(fresh.preset)
                };
                continue;
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its value, in a form [`RunConfig::parse`] reads back.
    pub fn echo(&self) -> String {
        fn join<T: ToString>(v: &[T]) -> String {
            v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
        }
        let kinds: Vec<&str> = self.kinds.iter().map(|k| k.short_name()).collect();
        let rows: Vec<(&str, String)> = vec![
            ("preset", self.preset.name().into()),
            ("seed", self.seed.to_string()),
            ("n_views", self.n_views.to_string()),
            ("resolution", self.resolution.to_string()),
            ("elevation", self.elevation.to_string()),
            ("k", join(&self.ks)),
            ("kinds", kinds.join(",")),
            ("perturbed", self.perturbed.to_string()),
            ("kmeans_max_iters", self.kmeans_max_iters.to_string()),
            ("classes", join(&self.classes)),
            ("instances_per_class", self.instances_per_class.to_string()),
            ("scale_jitter", self.scale_jitter.to_string()),
            ("vertex_noise", self.vertex_noise.to_string()),
            ("split", join(&self.split)),
            (
                "manifest",
                self.manifest
                    .as_ref()
                    .map_or(String::new(), |p| p.display().to_string()),
            ),
            ("blocks", self.blocks.to_string()),
            ("kernel", self.kernel.to_string()),
            ("base_channels", self.base_channels.to_string()),
            ("bottleneck_dim", self.bottleneck_dim.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("ae_iterations", self.ae_iterations.to_string()),
            ("cls_iterations", self.cls_iterations.to_string()),
            ("lr", self.lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("lambda", self.lambda.to_string()),
            ("eval_scope", self.eval_scope.name().into()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
