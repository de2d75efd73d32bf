//! Acceptance suite. Each criterion prints one PASS/FAIL line with its
//! measurements; the process exits 0 either way so the report is always
//! complete, and a FAIL is read from the output.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mvembed_core::config::RunConfig;
use mvembed_core::dataset::Split;
use mvembed_core::geometry::normalize_mesh;
use mvembed_core::metrics::{average_precision, dcg, format_table, RelevanceList, TableRow};
use mvembed_core::models::{accuracy, batch_tensor, EncoderConfig, ModelKind, Network, TrainedModel};
use mvembed_core::pipeline::{class_index, model_stem, Run};
use mvembed_core::render::{render_turntable, render_view, ViewImage, Viewpoint};
use mvembed_core::retrieval::{Embedding, EmbeddingIndex};
use mvembed_core::shapes::{cube, uv_sphere, Primitive};
use mvembed_core::view_select::{kmeans, select_representatives, ViewStack};
use mvembed_nn::gradcheck::{self, GradCheck};
use mvembed_nn::{Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn work_dir() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

// ---------------------------------------------------------------- 1: metrics

fn oracle_ap(g: &[u8]) -> Option<f64> {
    let relevant = g.iter().filter(|&&v| v == 1).count();
    if relevant == 0 {
        return None;
    }
    let mut total = 0.0;
    for i in 0..g.len() {
        if g[i] == 1 {
            let hits = g[..=i].iter().filter(|&&v| v == 1).count();
            total += hits as f64 / (i + 1) as f64;
        }
    }
    Some(total / relevant as f64)
}

fn oracle_dcg(g: &[u8]) -> Option<f64> {
    let raw = |g: &[u8]| -> f64 {
        g.iter()
            .enumerate()
            .map(|(i, &v)| {
                v as f64
                    * if i == 0 {
                        1.0
                    } else {
                        std::f64::consts::LN_2 / ((i + 1) as f64).ln()
                    }
            })
            .sum()
    };
    let mut ideal = g.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let best = raw(&ideal);
    (best > 0.0).then(|| raw(g) / best)
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut mismatched_none = 0;
    let mut maps = Vec::new();
    for _ in 0..1000 {
        let n = rng.gen_range(1..=50);
        let g: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
        let r = RelevanceList::new(g.clone());
        for (a, b) in [(average_precision(&r), oracle_ap(&g)), (dcg(&r), oracle_dcg(&g))] {
            match (a, b) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => mismatched_none += 1,
            }
        }
        maps.extend(oracle_ap(&g));
    }
    let map = mvembed_core::metrics::mean_average_precision(&maps).unwrap();
    let map_err = (map - maps.iter().sum::<f64>() / maps.len() as f64).abs();
    let hand = dcg(&RelevanceList::new(vec![1, 1, 0, 1, 0])).unwrap();
    let closed = 2.5 / (2.0 + 1.0 / 3f64.log2());
    let pass = worst < 1e-9 && map_err < 1e-9 && mismatched_none == 0 && (hand - closed).abs() < 1e-6;
    Outcome::new(
        pass,
        format!(
            "max |Δ| {worst:.1e} over 1000 lists, MAP |Δ| {map_err:.1e}; hand case {hand:.7} \
             (closed form {closed:.7}, stated 0.950233, |Δ| to stated {:.1e})",
            (hand - 0.950233).abs()
        ),
    )
}

// ---------------------------------------------------------------- 2: gradients

const SEEDS: u64 = 20;
const TOL: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Magnitudes in [0.05, 1) with random sign, so a ±h probe never crosses a relu kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| rng.gen_range(0.05..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    Tensor::from_vec(shape, v).unwrap()
}

/// Well-separated distinct values, so no pooling window changes its maximum.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    v.shuffle(rng);
    Tensor::from_vec(shape, v).unwrap()
}

/// Gradient check of `op` through the probe `Σ op(inputs) ⊙ r`.
fn check_op(seed: u64, mut inputs: Vec<Tensor<f64>>, op: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = op(&mut tape, &vars);
        uniform(&mut rng, tape.value(out).shape(), -1.0, 1.0)
    };
    let forward = |tape: &mut Tape<f64>, xs: &[Tensor<f64>]| {
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = op(tape, &vars);
        let flat = tape.reshape(out, &[1, probe.len()]).unwrap();
        let r = tape.constant(probe.clone().reshape(&[probe.len(), 1]).unwrap());
        let zero = tape.constant(Tensor::zeros(&[1]));
        let s = tape.linear(flat, r, zero).unwrap();
        (vars, tape.reshape(s, &[]).unwrap())
    };
    let mut tape = Tape::new();
    let (vars, loss) = forward(&mut tape, &inputs);
    let mut grads = tape.backward(loss);
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(&inputs)
        .map(|(&v, x)| grads.take_or_zeros(v, x.shape()))
        .collect();
    gradcheck::check(&mut inputs, &analytic, 1e-3, 64, &mut rng, |xs| {
        let mut tape = Tape::new();
        let (_, loss) = forward(&mut tape, xs);
        tape.value(loss).item()
    })
}

type OpCase = (
    &'static str,
    Box<dyn Fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>)>,
);

fn op_cases() -> Vec<OpCase> {
    vec![
        (
            "conv2d",
            Box::new(|r| {
                let x = vec![
                    uniform(r, &[1, 2, 8, 8], -1.0, 1.0),
                    uniform(r, &[3, 2, 5, 5], -0.5, 0.5),
                    uniform(r, &[3], -0.5, 0.5),
                ];
                (x, Box::new(|t, v| t.conv2d(v[0], v[1], v[2]).unwrap()))
            }),
        ),
        (
            "deconv2d",
            Box::new(|r| {
                let x = vec![
                    uniform(r, &[1, 3, 8, 8], -1.0, 1.0),
                    uniform(r, &[3, 2, 5, 5], -0.5, 0.5),
                    uniform(r, &[2], -0.5, 0.5),
                ];
                (x, Box::new(|t, v| t.deconv2d(v[0], v[1], v[2]).unwrap()))
            }),
        ),
        (
            "maxpool2",
            Box::new(|r| {
                (
                    vec![distinct(r, &[1, 2, 8, 8])],
                    Box::new(|t, v| t.maxpool2(v[0]).unwrap()),
                )
            }),
        ),
        (
            "unpool2",
            Box::new(|r| {
                (
                    vec![uniform(r, &[2, 2, 3, 4], -1.0, 1.0)],
                    Box::new(|t, v| t.unpool2(v[0]).unwrap()),
                )
            }),
        ),
        (
            "relu",
            Box::new(|r| (vec![away_from_zero(r, &[2, 3, 4, 4])], Box::new(|t, v| t.relu(v[0])))),
        ),
        (
            "linear",
            Box::new(|r| {
                let x = vec![
                    uniform(r, &[3, 5], -1.0, 1.0),
                    uniform(r, &[5, 4], -1.0, 1.0),
                    uniform(r, &[4], -1.0, 1.0),
                ];
                (x, Box::new(|t, v| t.linear(v[0], v[1], v[2]).unwrap()))
            }),
        ),
        (
            "reshape",
            Box::new(|r| {
                (
                    vec![uniform(r, &[2, 3, 4], -1.0, 1.0)],
                    Box::new(|t, v| t.reshape(v[0], &[6, 4]).unwrap()),
                )
            }),
        ),
        (
            "add",
            Box::new(|r| {
                let x = vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)];
                (x, Box::new(|t, v| t.add(v[0], v[1]).unwrap()))
            }),
        ),
        (
            "scale",
            Box::new(|r| {
                (
                    vec![uniform(r, &[3, 4], -1.0, 1.0)],
                    Box::new(|t, v| t.scale(v[0], 0.7)),
                )
            }),
        ),
        (
            "softmax_cross_entropy",
            Box::new(|r| {
                let labels: Vec<usize> = (0..4).map(|_| r.gen_range(0..3)).collect();
                (
                    vec![uniform(r, &[4, 3], -3.0, 3.0)],
                    Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels).unwrap()),
                )
            }),
        ),
        (
            "l2_reconstruction",
            Box::new(|r| {
                let x = vec![
                    uniform(r, &[2, 2, 3, 3], -1.0, 1.0),
                    uniform(r, &[2, 2, 3, 3], -1.0, 1.0),
                ];
                (x, Box::new(|t, v| t.l2_reconstruction(v[0], v[1]).unwrap()))
            }),
        ),
    ]
}

fn random_stack(id: &str, k: usize, res: usize, rng: &mut ChaCha8Rng) -> ViewStack {
    ViewStack {
        model_id: id.into(),
        height: res,
        width: res,
        channels: (0..k)
            .map(|_| (0..res * res).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect(),
        source_azimuths: (0..k).map(|i| i as f64 * 12.0).collect(),
    }
}

fn model_check(kind: ModelKind, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 2 + (seed as usize % 3);
    let enc = EncoderConfig {
        resolution: 16,
        in_channels: k,
        blocks: 4,
        kernel: 5,
        base_channels: 2,
        bottleneck_dim: 8,
    };
    let net = Network::<f64>::init(kind, enc, 3, seed).unwrap();
    let stacks: Vec<ViewStack> = (0..2)
        .map(|i| random_stack(&format!("s{i}"), k, 16, &mut rng))
        .collect();
    let x: Tensor<f64> = batch_tensor(&stacks.iter().collect::<Vec<_>>()).unwrap();
    let labels = [rng.gen_range(0..3), rng.gen_range(0..3)];
    let mut tape = Tape::new();
    let p = net.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let f = net.forward(&mut tape, &p, xv, &labels, 0.7).unwrap();
    let mut grads = tape.backward(f.loss);
    let analytic: Vec<Tensor<f64>> = p
        .vars()
        .iter()
        .zip(net.params.tensors())
        .map(|(&v, t)| grads.take_or_zeros(v, t.shape()))
        .collect();
    let mut params = net.params.tensors().to_vec();
    gradcheck::check_refining(&mut params, &analytic, 1e-5, 6, 3, TOL, &mut rng, |ps| {
        let mut probe = net.clone();
        probe.params.tensors_mut().clone_from_slice(ps);
        let mut tape = Tape::new();
        let p = probe.bind(&mut tape);
        let x = tape.constant(x.clone());
        let f = probe.forward(&mut tape, &p, x, &labels, 0.7).unwrap();
        tape.value(f.loss).item()
    })
}

fn gradients() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, case) in op_cases() {
        let mut worst: f64 = 0.0;
        for seed in 0..SEEDS {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (inputs, op) = case(&mut rng);
            let r = check_op(seed, inputs, op.as_ref());
            pass &= r.checked > 0;
            worst = worst.max(r.max_rel_error);
        }
        pass &= worst < TOL;
        parts.push(format!("{name} {worst:.1e}"));
    }
    for kind in ModelKind::ALL {
        let (mut worst, mut checked, mut refined) = (0f64, 0, 0);
        for seed in 0..SEEDS {
            let r = model_check(kind, seed);
            worst = worst.max(r.max_rel_error);
            checked += r.checked;
            refined += r.refined;
        }
        pass &= worst < TOL && checked >= 20 * refined;
        parts.push(format!("{kind} {worst:.1e} ({refined}/{checked} at a refined step)"));
    }
    Outcome::new(
        pass,
        format!("worst relative error over {SEEDS} seeds: {}", parts.join(", ")),
    )
}

// ---------------------------------------------------------------- 3: structure

fn structure() -> Outcome {
    let cfg = RunConfig::paper_faithful();
    let enc = cfg.encoder(4);
    let net = Network::<f32>::init(ModelKind::Autoencoder, enc, 0, 0).unwrap();
    let mut tape = Tape::new();
    let p = net.bind(&mut tape);
    let x = tape.constant(Tensor::full(&[1, 4, enc.resolution, enc.resolution], 0.5));
    let out = net.encoder_forward(&mut tape, &p, x).unwrap();
    let shapes: Vec<Vec<usize>> = out.pools.iter().map(|&v| tape.value(v).shape().to_vec()).collect();
    let want: Vec<Vec<usize>> = (1..=4)
        .map(|b| vec![1, 64 << b, enc.resolution >> b, enc.resolution >> b])
        .collect();
    let decoded = net.decoder_forward(&mut tape, &p, out.bottleneck).unwrap();
    let round_trip = tape.value(decoded).shape() == [1, 4, enc.resolution, enc.resolution];

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut identity = true;
    for _ in 0..100 {
        let (c, h, w) = (rng.gen_range(1..4), rng.gen_range(1..9), rng.gen_range(1..9));
        let x = uniform(&mut rng, &[2, c, h, w], -100.0, 100.0);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let u = tape.unpool2(xv).unwrap();
        let m = tape.maxpool2(u).unwrap();
        identity &= tape.value(m) == &x;
    }

    let mut worst_adjoint: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cin, cout) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let (h, w) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let x = uniform(&mut rng, &[2, cin, h, w], -1.0, 1.0);
        let y = uniform(&mut rng, &[2, cout, h, w], -1.0, 1.0);
        let k = uniform(&mut rng, &[cout, cin, 5, 5], -1.0, 1.0);
        let mut tape = Tape::new();
        let (xv, yv, kv) = (tape.constant(x.clone()), tape.constant(y.clone()), tape.constant(k));
        let (bo, bi) = (
            tape.constant(Tensor::zeros(&[cout])),
            tape.constant(Tensor::zeros(&[cin])),
        );
        let cx = tape.conv2d(xv, kv, bo).unwrap();
        let dy = tape.deconv2d(yv, kv, bi).unwrap();
        let (lhs, rhs) = (tape.value(cx).dot(&y), x.dot(tape.value(dy)));
        worst_adjoint = worst_adjoint.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    let channels: Vec<usize> = shapes.iter().map(|s| s[1]).collect();
    let sizes: Vec<usize> = shapes.iter().map(|s| s[2]).collect();
    Outcome::new(
        shapes == want && round_trip && identity && worst_adjoint < 1e-5,
        format!(
            "block channels {channels:?}, spatial {sizes:?} from {}, decoder restores input shape: {round_trip}; \
             maxpool∘unpool identity on 100 tensors: {identity}; conv/deconv adjoint gap {worst_adjoint:.1e}",
            enc.resolution
        ),
    )
}

// ---------------------------------------------------------------- 4, 5: desk runs

struct DeskRun {
    seed: u64,
    rows: Vec<TableRow>,
    /// (kind, k) → (train accuracy, validation accuracy)
    accuracy: BTreeMap<(ModelKind, usize), (f64, f64)>,
}

fn desk_run(root: &Path, seed: u64) -> DeskRun {
    let cfg = RunConfig {
        seed,
        ..RunConfig::desk()
    };
    let run = Run::create(&root.join(format!("desk_seed{seed}")), cfg).unwrap();
    let rows = run.pipeline().unwrap();
    let entries = run.manifest().unwrap();
    let classes = class_index(&entries);
    let mut acc = BTreeMap::new();
    for &k in &run.config.ks {
        let split = |s: Split| -> (Vec<ViewStack>, Vec<usize>) {
            entries
                .iter()
                .filter(|e| e.split == s)
                .map(|e| {
                    let path = run.stacks_dir(k).join(format!("{}.mvst", e.model_id));
                    (ViewStack::load(&e.model_id, &path).unwrap(), classes[&e.class_label])
                })
                .unzip()
        };
        let (train, train_y) = split(Split::Train);
        let (val, val_y) = split(Split::Val);
        for kind in [ModelKind::Classification, ModelKind::Combined] {
            let m = TrainedModel::load(&run.checkpoints_dir(), &model_stem(kind, k)).unwrap();
            let a = accuracy(&m.network, &train.iter().collect::<Vec<_>>(), &train_y).unwrap();
            let v = accuracy(&m.network, &val.iter().collect::<Vec<_>>(), &val_y).unwrap();
            acc.insert((kind, k), (a, v));
        }
    }
    DeskRun {
        seed,
        rows,
        accuracy: acc,
    }
}

fn micro_map(rows: &[TableRow], kind: ModelKind, k: usize) -> f64 {
    rows.iter()
        .find(|r| r.model == kind.to_string() && r.views == k)
        .map(|r| r.report.micro_map)
        .unwrap()
}

fn ordering(runs: &[DeskRun], elapsed: Duration) -> Outcome {
    const MARGIN: f64 = 0.02;
    let budget = Duration::from_secs(30 * 60);
    let mut pass = elapsed < budget;
    let mut lines = Vec::new();
    for r in runs {
        let mut cells = Vec::new();
        for k in [2, 3, 4] {
            let [ae, cls, comb] = ModelKind::ALL.map(|kind| micro_map(&r.rows, kind, k));
            let ok = cls - ae >= MARGIN && comb - cls >= MARGIN;
            pass &= ok;
            cells.push(format!(
                "k{k} {ae:.3} < {cls:.3} < {comb:.3} {}",
                if ok { "ok" } else { "no" }
            ));
        }
        let (c2, c4) = (
            micro_map(&r.rows, ModelKind::Combined, 2),
            micro_map(&r.rows, ModelKind::Combined, 4),
        );
        let ok = c4 - c2 >= MARGIN;
        pass &= ok;
        cells.push(format!(
            "Combined k4-k2 {:+.3} {}",
            c4 - c2,
            if ok { "ok" } else { "no" }
        ));
        lines.push(format!("seed {}: {}", r.seed, cells.join("; ")));
    }
    Outcome::new(
        pass,
        format!(
            "micro MAP AE < Cls < Combined, margin {MARGIN}; {:.1} min for three runs ({} the 30 min budget)\n      {}",
            elapsed.as_secs_f64() / 60.0,
            if elapsed < budget { "within" } else { "over" },
            lines.join("\n      ")
        ),
    )
}

fn classification_accuracy(runs: &[DeskRun]) -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    for r in runs {
        let cells: Vec<String> = r
            .accuracy
            .iter()
            .map(|((kind, k), (a, v))| {
                if *kind == ModelKind::Classification {
                    pass &= *a >= 0.98;
                }
                format!("{} k{k} train {a:.3} val {v:.3}", kind.short_name())
            })
            .collect();
        lines.push(format!("seed {}: {}", r.seed, cells.join(", ")));
    }
    Outcome::new(
        pass,
        format!(
            "classifier training accuracy ≥ 0.98 for each k\n      {}",
            lines.join("\n      ")
        ),
    )
}

// ---------------------------------------------------------------- 6: renderer

fn boundary_black(img: &ViewImage) -> bool {
    let n = img.width;
    (0..n).all(|i| {
        [i, (n - 1) * n + i, i * n, i * n + n - 1]
            .iter()
            .all(|&j| img.pixels[j] == 0.0)
    })
}

fn renderer() -> Outcome {
    let sphere = normalize_mesh(&uv_sphere(48, 96)).unwrap();
    let vs = render_turntable("s", &sphere, 30, 64, 30.0).unwrap();
    let sphere_diff = vs.views[1..]
        .iter()
        .map(|v| vs.views[0].mean_abs_diff(v))
        .fold(0.0, f64::max);

    let c = normalize_mesh(&cube()).unwrap();
    let mut cube_diff: f64 = 0.0;
    for i in 0..30 {
        let theta = 12.0 * i as f64;
        let a = render_view(&c, Viewpoint::new(theta, 0.0), 64).unwrap();
        let b = render_view(&c, Viewpoint::new(theta + 90.0, 0.0), 64).unwrap();
        cube_diff = cube_diff.max(a.max_abs_diff(&b) as f64);
    }

    let (mut in_range, mut black, mut views) = (true, true, 0);
    for p in Primitive::ALL {
        let m = normalize_mesh(&p.mesh()).unwrap();
        for v in render_turntable(p.name(), &m, 30, 64, 30.0).unwrap().views {
            in_range &= v.pixels.iter().all(|x| (0.0..=1.0).contains(x));
            black &= boundary_black(&v);
            views += 1;
        }
    }
    Outcome::new(
        sphere_diff <= 1e-2 && cube_diff <= 1e-6 && in_range && black,
        format!(
            "sphere max mean |Δ| {sphere_diff:.1e}; cube 90° max |Δ| {cube_diff:.1e}; \
             {views} views in [0,1]: {in_range}, boundary 0: {black}"
        ),
    )
}

// ---------------------------------------------------------------- 7: k-means

fn kmeans_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut monotone = 0;
    for trial in 0..100 {
        let (n, d) = (rng.gen_range(5..60), rng.gen_range(1..8));
        let k = rng.gen_range(1..=n.min(6));
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let r = kmeans(&pts, k, trial, 100).unwrap();
        monotone += r.history.windows(2).all(|w| w[1] <= w[0]) as usize;
    }

    let mut separated = 0;
    for trial in 0..20 {
        let pts: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                (0..4)
                    .map(|_| if i % 2 == 0 { 0.0 } else { 10.0 } + rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let r = kmeans(&pts, 2, trial, 100).unwrap();
        separated += (0..12).all(|i| (r.assignments[i] == r.assignments[0]) == (i % 2 == 0)) as usize;
    }

    let mut members = 0;
    let mut stacks = 0;
    for p in Primitive::ALL {
        let m = normalize_mesh(&p.mesh()).unwrap();
        let vs = render_turntable(p.name(), &m, 30, 32, 30.0).unwrap();
        for k in 1..=6 {
            let s = select_representatives(&vs, k, k as u64).unwrap();
            stacks += 1;
            members += s.channels.iter().zip(&s.source_azimuths).all(|(ch, az)| {
                vs.views
                    .iter()
                    .any(|v| v.azimuth == *az && v.pixels.iter().zip(ch).all(|(a, b)| a.to_bits() == b.to_bits()))
            }) as usize;
        }
    }
    Outcome::new(
        monotone == 100 && separated == 20 && members == stacks,
        format!(
            "inertia non-increasing {monotone}/100; two blobs separated {separated}/20; \
             representatives bit-identical members {members}/{stacks}"
        ),
    )
}

// ---------------------------------------------------------------- 8: determinism

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn determinism(root: &Path) -> Outcome {
    let cfg = RunConfig {
        classes: vec![Primitive::Cube, Primitive::Cone, Primitive::Torus],
        instances_per_class: 10,
        resolution: 32,
        base_channels: 4,
        bottleneck_dim: 32,
        ae_iterations: 30,
        cls_iterations: 20,
        perturbed: true,
        seed: 11,
        ..RunConfig::desk()
    };
    let dirs = [root.join("det_a"), root.join("det_b")];
    for d in &dirs {
        Run::create(d, cfg.clone()).unwrap().pipeline().unwrap();
    }
    let (a, b) = (tree(&dirs[0]), tree(&dirs[1]));
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let count = |pre: &str| a.iter().filter(|(n, _)| n.starts_with(pre)).count();
    Outcome::new(
        a.len() == b.len() && differing.is_empty(),
        format!(
            "{} files compared ({} checkpoint, {} embedding, {} report), {} differ",
            a.len(),
            count("checkpoints"),
            count("embeddings"),
            count("reports"),
            differing.len()
        ),
    )
}

// ---------------------------------------------------------------- 9: retrieval

fn retrieval_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut matched, mut invariant) = (0, 0);
    for c in 0..100 {
        let n = rng.gen_range(2..40);
        let items: Vec<Embedding> = (0..n)
            .map(|i| {
                Embedding::new(
                    format!("m{i:03}"),
                    "x".into(),
                    (0..8).map(|_| rng.gen_range(-3.0f32..3.0)).collect(),
                )
            })
            .collect();
        let s = [0.25f32, 0.5, 2.0, 4.0][c % 4];
        let scaled: Vec<Embedding> = items
            .iter()
            .map(|e| {
                Embedding::new(
                    e.model_id.clone(),
                    e.label.clone(),
                    e.vector.iter().map(|x| x * s).collect(),
                )
            })
            .collect();
        let (index, index_s) = (
            EmbeddingIndex::new(items.clone()).unwrap(),
            EmbeddingIndex::new(scaled).unwrap(),
        );
        let (mut ok, mut same) = (true, true);
        for q in &items {
            let got = index.rank_all(&q.model_id).unwrap();
            let qv: Vec<f64> = q.vector.iter().map(|&x| x as f64).collect();
            let mut want: Vec<(String, f64)> = items
                .iter()
                .filter(|e| e.model_id != q.model_id)
                .map(|e| {
                    let v: Vec<f64> = e.vector.iter().map(|&x| x as f64).collect();
                    let dot: f64 = qv.iter().zip(&v).map(|(a, b)| a * b).sum();
                    let norms =
                        qv.iter().map(|a| a * a).sum::<f64>().sqrt() * v.iter().map(|a| a * a).sum::<f64>().sqrt();
                    (e.model_id.clone(), (1.0 - dot / norms).clamp(0.0, 2.0))
                })
                .collect();
            want.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            ok &= got.entries.len() == want.len()
                && got
                    .entries
                    .iter()
                    .zip(&want)
                    .all(|(g, w)| g.0 == w.0 && (g.1 - w.1).abs() < 1e-12);
            let ids = |l: mvembed_core::retrieval::RankedList| l.entries.into_iter().map(|e| e.0).collect::<Vec<_>>();
            same &= ids(got) == ids(index_s.rank_all(&q.model_id).unwrap());
        }
        matched += ok as usize;
        invariant += same as usize;
    }
    Outcome::new(
        matched == 100 && invariant == 100,
        format!("oracle agreement {matched}/100 corpora; scale-invariant rankings {invariant}/100"),
    )
}

// ---------------------------------------------------------------- driver

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let t = Instant::now();
    let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Outcome::new(false, format!("panicked: {msg}"))
    });
    (o, t.elapsed())
}

/// Criterion numbers given on the command line restrict the run to those.
fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| only.is_empty() || only.contains(&n);
    let root = work_dir();
    let mut results: Vec<(usize, &str, Outcome, Duration)> = Vec::new();
    let mut record = |n, name, (o, d): (Outcome, Duration), limit: Option<Duration>| {
        let o = match limit {
            Some(l) if d > l => Outcome::new(false, format!("{} (over the {:?} budget)", o.detail, l)),
            _ => o,
        };
        println!(
            "criterion {n} {}: {} [{:.1}s] {}",
            name,
            if o.pass { "PASS" } else { "FAIL" },
            d.as_secs_f64(),
            o.detail
        );
        results.push((n, name, o, d));
    };

    if want(1) {
        record(1, "metric oracle", timed(metric_oracle), Some(Duration::from_secs(5)));
    }
    if want(2) {
        record(2, "gradients", timed(gradients), Some(Duration::from_secs(120)));
    }
    if want(3) {
        record(3, "structure", timed(structure), None);
    }

    if want(4) || want(5) {
        let t = Instant::now();
        let runs = catch_unwind(AssertUnwindSafe(|| {
            (0..3).map(|s| desk_run(&root, s)).collect::<Vec<_>>()
        }));
        let desk_time = t.elapsed();
        match &runs {
            Ok(runs) => {
                for r in runs {
                    println!("desk run, seed {}:\n{}", r.seed, format_table(&r.rows));
                }
                record(4, "table ordering", (ordering(runs, desk_time), desk_time), None);
                record(
                    5,
                    "classifier accuracy",
                    (classification_accuracy(runs), desk_time),
                    None,
                );
            }
            Err(_) => {
                for (n, name) in [(4, "table ordering"), (5, "classifier accuracy")] {
                    record(n, name, (Outcome::new(false, "desk runs panicked"), desk_time), None);
                }
            }
        }
    }

    if want(6) {
        record(6, "renderer symmetry", timed(renderer), None);
    }
    if want(7) {
        record(7, "k-means", timed(kmeans_properties), None);
    }
    if want(8) {
        record(8, "determinism", timed(|| determinism(&root)), None);
    }
    if want(9) {
        record(9, "retrieval oracle", timed(retrieval_oracle), None);
    }

    let passed = results.iter().filter(|r| r.2.pass).count();
    println!(
        "acceptance: {passed}/{} criteria pass; artifacts in {}",
        results.len(),
        root.display()
    );
}
