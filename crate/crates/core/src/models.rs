//! The three encoder architectures: convolutional autoencoder, classifier and
//! their combination, plus training and embedding extraction.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mvembed_nn::{AdamConfig, AdamState, ParamSet, Scalar, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, IoContext, Result};
use crate::retrieval::Embedding;
use crate::view_select::ViewStack;

/// Loss magnitude treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Offset separating the batch-order stream from the initialization stream.
const BATCH_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub resolution: usize,
    pub in_channels: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub base_channels: usize,
    pub bottleneck_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            in_channels: 3,
            blocks: 4,
            kernel: 5,
            base_channels: 8,
            bottleneck_dim: 128,
        }
    }
}

impl EncoderConfig {
    /// Output channels of block `b`, counted from 1.
    pub fn block_channels(&self, b: usize) -> usize {
        self.base_channels << b
    }

    /// Spatial size after block `b`.
    pub fn block_size(&self, b: usize) -> usize {
        self.resolution >> b
    }

    pub fn flat_dim(&self) -> usize {
        let s = self.block_size(self.blocks);
        s * s * self.block_channels(self.blocks)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.blocks == 0 || self.resolution == 0 || self.resolution % (1 << self.blocks) != 0 {
            return bad(format!(
                "resolution {} is not divisible by 2^{}",
                self.resolution, self.blocks
            ));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel size {} must be odd", self.kernel));
        }
        if self.in_channels == 0 || self.base_channels == 0 || self.bottleneck_dim == 0 {
            return bad("channel counts and bottleneck size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Autoencoder,
    Classification,
    Combined,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Autoencoder, ModelKind::Classification, ModelKind::Combined];

    pub fn short_name(self) -> &'static str {
        match self {
            ModelKind::Autoencoder => "ae",
            ModelKind::Classification => "cls",
            ModelKind::Combined => "combined",
        }
    }

    pub fn has_decoder(self) -> bool {
        self != ModelKind::Classification
    }

    pub fn has_classifier(self) -> bool {
        self != ModelKind::Autoencoder
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Autoencoder => "Autoencoder",
            ModelKind::Classification => "Classification",
            ModelKind::Combined => "Combined",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ae" | "autoencoder" => Ok(ModelKind::Autoencoder),
            "cls" | "classification" => Ok(ModelKind::Classification),
            "combined" => Ok(ModelKind::Combined),
            _ => Err(Error::Config(format!("unknown model kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Weight of the classification term in the combined loss.
    pub lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            iterations: 50_000,
            seed: 0,
            adam: AdamConfig::default(),
            lambda: 1.0,
        }
    }
}

pub fn combined_loss(recon_loss: f64, class_loss: f64, lambda: f64) -> f64 {
    recon_loss + lambda * class_loss
}

/// Architecture plus parameters, generic over precision so the same graph
/// serves training (f32) and gradient checking (f64).
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    pub classes: usize,
    pub params: ParamSet<T>,
}

/// Parameter handles of one network bound to a tape, in `ParamSet` order.
pub struct Bound {
    vars: Vec<Var>,
    names: Vec<String>,
}

impl Bound {
    fn get(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub struct EncoderOutput {
    pub bottleneck: Var,
    /// One max-pooling node per block; see [`Tape::pool_indices`].
    pub pools: Vec<Var>,
}

/// Graph nodes of one forward pass.
pub struct Forward {
    pub bottleneck: Var,
    pub reconstruction: Option<Var>,
    pub logits: Option<Var>,
    pub loss: Var,
}

impl<T: Scalar> Network<T> {
    /// He-initialized weights and zero biases; encoder, then decoder, then
    /// classifier, all drawn from one stream seeded by `seed`.
    pub fn init(kind: ModelKind, encoder: EncoderConfig, classes: usize, seed: u64) -> Result<Self> {
        encoder.validate()?;
        if kind.has_classifier() && classes < 2 {
            return Err(Error::Config(format!("{kind} needs at least 2 classes, got {classes}")));
        }
        let classes = if kind.has_classifier() { classes } else { 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let e = &encoder;
        let k = e.kernel;
        let kk = k * k;
        let mut cin = e.in_channels;
        for b in 1..=e.blocks {
            let c = e.block_channels(b);
            p.push_he(format!("enc.b{b}.conv1.w"), &[c, cin, k, k], cin * kk, &mut rng);
            p.push_zeros(format!("enc.b{b}.conv1.b"), &[c]);
            p.push_he(format!("enc.b{b}.conv2.w"), &[c, c, k, k], c * kk, &mut rng);
            p.push_zeros(format!("enc.b{b}.conv2.b"), &[c]);
            cin = c;
        }
        let (flat, d) = (e.flat_dim(), e.bottleneck_dim);
        p.push_he("enc.fc.w", &[flat, d], flat, &mut rng);
        p.push_zeros("enc.fc.b", &[d]);
        if kind.has_decoder() {
            p.push_he("dec.fc.w", &[d, flat], d, &mut rng);
            p.push_zeros("dec.fc.b", &[flat]);
            let mut cin = e.block_channels(e.blocks);
            for b in (1..=e.blocks).rev() {
                let c = e.block_channels(b);
                p.push_he(format!("dec.b{b}.w"), &[cin, c, k, k], cin * kk, &mut rng);
                p.push_zeros(format!("dec.b{b}.b"), &[c]);
                cin = c;
            }
            p.push_he("dec.out.w", &[cin, e.in_channels, k, k], cin * kk, &mut rng);
            p.push_zeros("dec.out.b", &[e.in_channels]);
        }
        if kind.has_classifier() {
            p.push_he("cls.w", &[d, classes], d, &mut rng);
            p.push_zeros("cls.b", &[classes]);
        }
        Ok(Self {
            kind,
            encoder,
            classes,
            params: p,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            kind: self.kind,
            encoder: self.encoder,
            classes: self.classes,
            params: self.params.cast(),
        }
    }

    /// Places every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.params.tensors().iter().map(|t| tape.param(t.clone())).collect(),
            names: self.params.names().to_vec(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let e = &self.encoder;
        let want = [e.in_channels, e.resolution, e.resolution];
        if x.shape().len() != 4 || x.shape()[1..] != want {
            return Err(Error::Shape(format!(
                "input {:?} does not match N×{}×{}×{}",
                x.shape(),
                want[0],
                want[1],
                want[2]
            )));
        }
        Ok(())
    }

    /// Four blocks of conv → relu → conv → relu → maxpool, then a relu
    /// fully connected bottleneck.
    pub fn encoder_forward(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<EncoderOutput> {
        self.check_input(tape.value(x))?;
        let n = tape.value(x).shape()[0];
        let mut h = x;
        let mut pools = Vec::with_capacity(self.encoder.blocks);
        for b in 1..=self.encoder.blocks {
            for c in 1..=2 {
                let w = p.get(&format!("enc.b{b}.conv{c}.w"));
                let bias = p.get(&format!("enc.b{b}.conv{c}.b"));
                h = tape.conv2d(h, w, bias)?;
                h = tape.relu(h);
            }
            h = tape.maxpool2(h)?;
            pools.push(h);
        }
        let flat = tape.reshape(h, &[n, self.encoder.flat_dim()])?;
        let z = tape.linear(flat, p.get("enc.fc.w"), p.get("enc.fc.b"))?;
        Ok(EncoderOutput {
            bottleneck: tape.relu(z),
            pools,
        })
    }

    /// Linear expansion, four blocks of unpool → deconv → relu, and a final
    /// linear deconv back to the input channel count.
    pub fn decoder_forward(&self, tape: &mut Tape<T>, p: &Bound, z: Var) -> Result<Var> {
        let e = &self.encoder;
        let n = tape.value(z).shape()[0];
        let s = e.block_size(e.blocks);
        let h = tape.linear(z, p.get("dec.fc.w"), p.get("dec.fc.b"))?;
        let mut h = tape.reshape(h, &[n, e.block_channels(e.blocks), s, s])?;
        for b in (1..=e.blocks).rev() {
            h = tape.unpool2(h)?;
            h = tape.deconv2d(h, p.get(&format!("dec.b{b}.w")), p.get(&format!("dec.b{b}.b")))?;
            h = tape.relu(h);
        }
        Ok(tape.deconv2d(h, p.get("dec.out.w"), p.get("dec.out.b"))?)
    }

    pub fn classifier_forward(&self, tape: &mut Tape<T>, p: &Bound, z: Var) -> Result<Var> {
        Ok(tape.linear(z, p.get("cls.w"), p.get("cls.b"))?)
    }

    /// Full forward pass and loss for this network's kind.
    pub fn forward(&self, tape: &mut Tape<T>, p: &Bound, x: Var, labels: &[usize], lambda: f64) -> Result<Forward> {
        let enc = self.encoder_forward(tape, p, x)?;
        let z = enc.bottleneck;
        let reconstruction = match self.kind.has_decoder() {
            true => Some(self.decoder_forward(tape, p, z)?),
            false => None,
        };
        let logits = match self.kind.has_classifier() {
            true => Some(self.classifier_forward(tape, p, z)?),
            false => None,
        };
        let recon_loss = match reconstruction {
            Some(r) => Some(tape.l2_reconstruction(r, x)?),
            None => None,
        };
        let class_loss = match logits {
            Some(l) => Some(tape.softmax_cross_entropy(l, labels)?),
            None => None,
        };
        let loss = match (recon_loss, class_loss) {
            (Some(r), None) => r,
            (None, Some(c)) => c,
            (Some(r), Some(c)) => {
                let c = tape.scale(c, T::lit(lambda));
                tape.add(r, c)?
            }
            (None, None) => unreachable!("every kind has a head"),
        };
        Ok(Forward {
            bottleneck: z,
            reconstruction,
            logits,
            loss,
        })
    }
}

/// Stacks `stacks` into one `N×k×H×W` tensor.
pub fn batch_tensor<T: Scalar>(stacks: &[&ViewStack]) -> Result<Tensor<T>> {
    let first = stacks.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let (k, h, w) = (first.k(), first.height, first.width);
    let mut data = Vec::with_capacity(stacks.len() * k * h * w);
    for s in stacks {
        if (s.k(), s.height, s.width) != (k, h, w) {
            return Err(Error::Shape(format!(
                "stack {} is {}×{}×{}, expected {k}×{h}×{w}",
                s.model_id,
                s.k(),
                s.height,
                s.width
            )));
        }
        data.extend(s.flat().map(|v| T::lit(v as f64)));
    }
    Ok(Tensor::from_vec(&[stacks.len(), k, h, w], data)?)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub network: Network<f32>,
    pub train: TrainConfig,
    /// Training loss per iteration.
    pub losses: Vec<f64>,
    /// Batch accuracy per iteration; empty without a classifier head.
    pub accuracy: Vec<f64>,
}

/// Seeded per-epoch permutation, wrapping around at epoch boundaries.
struct BatchOrder {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchOrder {
    fn new(n: usize, seed: u64) -> Self {
        let mut b = Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ BATCH_STREAM),
            order: (0..n).collect(),
            pos: n,
        };
        b.reshuffle();
        b
    }

    fn reshuffle(&mut self) {
        self.order.sort_unstable();
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.reshuffle();
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Trains a fresh network of `kind` on `stacks`. `labels` holds one class
/// index per stack and may be empty for the autoencoder.
pub fn train(
    kind: ModelKind,
    stacks: &[ViewStack],
    labels: &[usize],
    classes: usize,
    cfg: &TrainConfig,
    enc: &EncoderConfig,
) -> Result<TrainedModel> {
    train_with(kind, stacks, labels, classes, cfg, enc, |_, _| {})
}

/// [`train`] with a callback receiving `(iteration, loss)` after every step.
pub fn train_with(
    kind: ModelKind,
    stacks: &[ViewStack],
    labels: &[usize],
    classes: usize,
    cfg: &TrainConfig,
    enc: &EncoderConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainedModel> {
    if stacks.is_empty() {
        return Err(Error::Data("no training stacks".into()));
    }
    if cfg.batch_size == 0 || cfg.iterations == 0 {
        return Err(Error::Config("batch_size and iterations must be at least 1".into()));
    }
    if kind.has_classifier() {
        if labels.len() != stacks.len() {
            return Err(Error::Data(format!(
                "{} labels for {} stacks",
                labels.len(),
                stacks.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {l} outside {classes} classes")));
        }
    }
    let mut net = Network::<f32>::init(kind, *enc, classes, cfg.seed)?;
    let mut adam = AdamState::new(cfg.adam, net.params.tensors());
    let mut order = BatchOrder::new(stacks.len(), cfg.seed);
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut accuracy = Vec::new();
    for it in 0..cfg.iterations {
        let idx = order.next_batch(cfg.batch_size);
        let batch: Vec<&ViewStack> = idx.iter().map(|&i| &stacks[i]).collect();
        let batch_labels: Vec<usize> = match kind.has_classifier() {
            true => idx.iter().map(|&i| labels[i]).collect(),
            false => Vec::new(),
        };
        let mut tape = Tape::new();
        let p = net.bind(&mut tape);
        let x = tape.constant(batch_tensor(&batch)?);
        let fwd = net.forward(&mut tape, &p, x, &batch_labels, cfg.lambda)?;
        let loss = tape.value(fwd.loss).item() as f64;
        if !loss.is_finite() || loss > DIVERGENCE_THRESHOLD {
            return Err(Error::Diverged { iteration: it, loss });
        }
        if let Some(l) = fwd.logits {
            let logits = tape.value(l);
            let correct = logits
                .data()
                .chunks(net.classes)
                .zip(&batch_labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            accuracy.push(correct as f64 / batch_labels.len() as f64);
        }
        let mut grads = tape.backward(fwd.loss);
        let g: Vec<Tensor<f32>> = p
            .vars()
            .iter()
            .zip(net.params.tensors())
            .map(|(&v, t)| grads.take_or_zeros(v, t.shape()))
            .collect();
        adam.step(net.params.tensors_mut(), &g);
        losses.push(loss);
        progress(it, loss);
    }
    Ok(TrainedModel {
        network: net,
        train: *cfg,
        losses,
        accuracy,
    })
}

/// Bottleneck activations for `stacks`, evaluated `chunk` stacks at a time.
pub fn bottlenecks(net: &Network<f32>, stacks: &[&ViewStack], chunk: usize) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(stacks.len());
    for group in stacks.chunks(chunk.max(1)) {
        let mut tape = Tape::new();
        let p = net.bind(&mut tape);
        let x = tape.constant(batch_tensor(group)?);
        let z = net.encoder_forward(&mut tape, &p, x)?.bottleneck;
        let d = net.encoder.bottleneck_dim;
        out.extend(tape.value(z).data().chunks(d).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Fraction of `stacks` whose predicted class matches `labels`.
pub fn accuracy(net: &Network<f32>, stacks: &[&ViewStack], labels: &[usize]) -> Result<f64> {
    if !net.kind.has_classifier() {
        return Err(Error::Config(format!("{} has no classifier head", net.kind)));
    }
    if stacks.is_empty() || stacks.len() != labels.len() {
        return Err(Error::Data("accuracy needs one label per stack".into()));
    }
    let mut correct = 0;
    for (group, ys) in stacks.chunks(16).zip(labels.chunks(16)) {
        let mut tape = Tape::new();
        let p = net.bind(&mut tape);
        let x = tape.constant(batch_tensor(group)?);
        let z = net.encoder_forward(&mut tape, &p, x)?.bottleneck;
        let l = net.classifier_forward(&mut tape, &p, z)?;
        correct += tape
            .value(l)
            .data()
            .chunks(net.classes)
            .zip(ys)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
    }
    Ok(correct as f64 / stacks.len() as f64)
}

impl TrainedModel {
    /// The bottleneck embedding of one stack, tagged with its model id.
    pub fn embed(&self, stack: &ViewStack) -> Result<Embedding> {
        let v = bottlenecks(&self.network, &[stack], 1)?.remove(0);
        Ok(Embedding::new(stack.model_id.clone(), String::new(), v))
    }

    /// Writes `<stem>.mvnn`, `<stem>_loss.csv` and `<stem>.cfg` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let ck = dir.join(format!("{stem}.mvnn"));
        self.network.params.save(&ck)?;
        fs::write(dir.join(format!("{stem}_loss.csv")), self.loss_csv()).at(dir)?;
        let cfg = dir.join(format!("{stem}.cfg"));
        fs::write(&cfg, self.sidecar()).at(&cfg)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<TrainedModel> {
        let cfg_path = dir.join(format!("{stem}.cfg"));
        let text = fs::read_to_string(&cfg_path).at(&cfg_path)?;
        let kv = parse_sidecar(&text)?;
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format {
                    what: "model sidecar",
                    message: format!("missing key {k}"),
                })
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::Format {
                what: "model sidecar",
                message: format!("bad value for {k}"),
            })
        };
        let float = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Format {
                what: "model sidecar",
                message: format!("bad value for {k}"),
            })
        };
        let encoder = EncoderConfig {
            resolution: num("resolution")?,
            in_channels: num("in_channels")?,
            blocks: num("blocks")?,
            kernel: num("kernel")?,
            base_channels: num("base_channels")?,
            bottleneck_dim: num("bottleneck_dim")?,
        };
        let train = TrainConfig {
            batch_size: num("batch_size")?,
            iterations: num("iterations")?,
            seed: get("seed")?.parse().map_err(|_| Error::Format {
                what: "model sidecar",
                message: "bad seed".into(),
            })?,
            adam: AdamConfig {
                lr: float("lr")?,
                beta1: float("beta1")?,
                beta2: float("beta2")?,
                eps: float("eps")?,
            },
            lambda: float("lambda")?,
        };
        let kind: ModelKind = get("kind")?.parse()?;
        let classes = num("classes")?;
        let params = ParamSet::load(dir.join(format!("{stem}.mvnn")))?;
        let expected = Network::<f32>::init(kind, encoder, classes.max(2), 0)?;
        let shapes_match = expected.params.names() == params.names()
            && expected
                .params
                .tensors()
                .iter()
                .zip(params.tensors())
                .all(|(a, b)| a.shape() == b.shape());
        if !shapes_match {
            return Err(Error::Format {
                what: "checkpoint",
                message: format!("parameters do not match the {kind} architecture in {stem}.cfg"),
            });
        }
        let (losses, accuracy) = read_loss_csv(&dir.join(format!("{stem}_loss.csv")))?;
        Ok(TrainedModel {
            network: Network {
                kind,
                encoder,
                classes,
                params,
            },
            train,
            losses,
            accuracy,
        })
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from(if self.accuracy.is_empty() {
            "iteration,loss\n"
        } else {
            "iteration,loss,accuracy\n"
        });
        for (i, l) in self.losses.iter().enumerate() {
            match self.accuracy.get(i) {
                Some(a) => s += &format!("{},{l},{a}\n", i + 1),
                None => s += &format!("{},{l}\n", i + 1),
            }
        }
        s
    }

    pub fn sidecar(&self) -> String {
        let (e, t) = (&self.network.encoder, &self.train);
        let rows: Vec<(&str, String)> = vec![
            ("kind", self.network.kind.short_name().to_string()),
            ("classes", self.network.classes.to_string()),
            ("resolution", e.resolution.to_string()),
            ("in_channels", e.in_channels.to_string()),
            ("blocks", e.blocks.to_string()),
            ("kernel", e.kernel.to_string()),
            ("base_channels", e.base_channels.to_string()),
            ("bottleneck_dim", e.bottleneck_dim.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("iterations", t.iterations.to_string()),
            ("seed", t.seed.to_string()),
            ("lr", t.adam.lr.to_string()),
            ("beta1", t.adam.beta1.to_string()),
            ("beta2", t.adam.beta2.to_string()),
            ("eps", t.adam.eps.to_string()),
            ("lambda", t.lambda.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

fn parse_sidecar(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Format {
                    what: "model sidecar",
                    message: format!("expected key=value, got `{l}`"),
                })
        })
        .collect()
}

fn read_loss_csv(path: &PathBuf) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let (mut losses, mut acc) = (Vec::new(), Vec::new());
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| -> Result<f64> {
            row.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| Error::Format {
                what: "loss curve",
                message: format!("bad row {:?}", row),
            })
        };
        losses.push(field(1)?);
        if row.len() > 2 {
            acc.push(field(2)?);
        }
    }
    Ok((losses, acc))
}
