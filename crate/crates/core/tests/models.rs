use mvembed_core::dataset::{synth_instance, SynthSpec};
use mvembed_core::geometry::normalize_mesh;
use mvembed_core::models::{
    batch_tensor, bottlenecks, train, EncoderConfig, ModelKind, Network, TrainConfig, TrainedModel,
};
use mvembed_core::render::render_turntable;
use mvembed_core::shapes::Primitive;
use mvembed_core::view_select::{select_representatives, ViewStack};
use mvembed_nn::gradcheck;
use mvembed_nn::{AdamConfig, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mini(k: usize) -> EncoderConfig {
    EncoderConfig {
        resolution: 16,
        in_channels: k,
        blocks: 4,
        kernel: 5,
        base_channels: 2,
        bottleneck_dim: 8,
    }
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

fn train_config(iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        iterations,
        seed,
        adam: AdamConfig::default(),
        lambda: 1.0,
    }
}

/// Loss of `net` evaluated with `params` substituted, forward only.
fn loss_with(net: &Network<f64>, params: &[Tensor<f64>], x: &Tensor<f64>, labels: &[usize]) -> f64 {
    let mut probe = net.clone();
    probe.params.tensors_mut().clone_from_slice(params);
    let mut tape = Tape::new();
    let p = probe.bind(&mut tape);
    let x = tape.constant(x.clone());
    let f = probe.forward(&mut tape, &p, x, labels, 0.7).unwrap();
    tape.value(f.loss).item()
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    for kind in ModelKind::ALL {
        let mut worst: f64 = 0.0;
        let (mut checked, mut refined) = (0, 0);
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = 2 + (seed as usize % 3);
            let net = Network::<f64>::init(kind, mini(k), 3, seed).unwrap();
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
            let r = gradcheck::check_refining(&mut params, &analytic, H, 6, 3, TOL, &mut rng, |ps| {
                loss_with(&net, ps, &x, &labels)
            });
            refined += r.refined;
            checked += r.checked;
            assert!(
                r.max_rel_error < TOL,
                "{kind} seed {seed}: {:.3e} at {:?}",
                r.max_rel_error,
                r.worst
            );
            worst = worst.max(r.max_rel_error);
        }
        // Kinks near the sampled point must stay rare.
        assert!(checked >= 20 * refined, "{kind}: {refined} refined of {checked}");
        println!("{kind}: worst relative error {worst:.2e}, {refined} of {checked} needed a smaller step");
    }
}

#[test]
fn zero_weight_combined_matches_autoencoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let stacks: Vec<ViewStack> = (0..6)
        .map(|i| random_stack(&format!("s{i}"), 2, 16, &mut rng))
        .collect();
    let labels = [0, 1, 2, 0, 1, 2];
    let enc = mini(2);
    let ae = train(ModelKind::Autoencoder, &stacks, &labels, 3, &train_config(15, 9), &enc).unwrap();
    let cfg = TrainConfig {
        lambda: 0.0,
        ..train_config(15, 9)
    };
    let combined = train(ModelKind::Combined, &stacks, &labels, 3, &cfg, &enc).unwrap();
    for (name, t) in ae.network.params.iter() {
        let other = combined.network.params.get(name).unwrap();
        let same = t
            .data()
            .iter()
            .zip(other.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "{name} differs");
    }
    assert_eq!(ae.losses, combined.losses);
}

#[test]
fn training_is_deterministic_and_seed_sensitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let stacks: Vec<ViewStack> = (0..5)
        .map(|i| random_stack(&format!("s{i}"), 3, 16, &mut rng))
        .collect();
    let labels = [0, 1, 0, 1, 1];
    for kind in ModelKind::ALL {
        let a = train(kind, &stacks, &labels, 2, &train_config(6, 2), &mini(3)).unwrap();
        let b = train(kind, &stacks, &labels, 2, &train_config(6, 2), &mini(3)).unwrap();
        assert_eq!(a, b);
        let c = train(kind, &stacks, &labels, 2, &train_config(6, 3), &mini(3)).unwrap();
        assert_ne!(a.network.params, c.network.params);
        assert_eq!(a.losses.len(), 6);
        assert_eq!(a.accuracy.len(), if kind.has_classifier() { 6 } else { 0 });
    }
}

#[test]
fn zero_weights_give_uniform_logits_and_the_bias_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stack = random_stack("s", 2, 16, &mut rng);
    let x: Tensor<f64> = batch_tensor(&[&stack]).unwrap();

    let mut cls = Network::<f64>::init(ModelKind::Classification, mini(2), 2, 0).unwrap();
    for t in cls.params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut tape = Tape::new();
    let p = cls.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let f = cls.forward(&mut tape, &p, xv, &[1], 1.0).unwrap();
    assert!((tape.value(f.loss).item() - 2f64.ln()).abs() < 1e-12);

    let mut ae = Network::<f64>::init(ModelKind::Autoencoder, mini(2), 0, 0).unwrap();
    let names = ae.params.names().to_vec();
    for (name, t) in names.iter().zip(ae.params.tensors_mut()) {
        if name.starts_with("dec.") && name.ends_with(".w") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        if name == "dec.out.b" {
            t.data_mut().copy_from_slice(&[0.25, -0.5]);
        }
    }
    let mut tape = Tape::new();
    let p = ae.bind(&mut tape);
    let xv = tape.constant(x);
    let f = ae.forward(&mut tape, &p, xv, &[], 1.0).unwrap();
    let out = tape.value(f.reconstruction.unwrap());
    assert_eq!(out.shape(), &[1, 2, 16, 16]);
    assert!(out.data()[..256].iter().all(|&v| v == 0.25));
    assert!(out.data()[256..].iter().all(|&v| v == -0.5));
}

#[test]
fn shapes_follow_the_block_structure() {
    let enc = EncoderConfig {
        resolution: 32,
        in_channels: 4,
        blocks: 4,
        kernel: 5,
        base_channels: 3,
        bottleneck_dim: 10,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stacks: Vec<ViewStack> = (0..3)
        .map(|i| random_stack(&format!("s{i}"), 4, 32, &mut rng))
        .collect();
    let x: Tensor<f32> = batch_tensor(&stacks.iter().collect::<Vec<_>>()).unwrap();
    let net = Network::<f32>::init(ModelKind::Combined, enc, 5, 0).unwrap();
    let mut tape = Tape::new();
    let p = net.bind(&mut tape);
    let xv = tape.constant(x);
    let e = net.encoder_forward(&mut tape, &p, xv).unwrap();
    for (b, &pool) in (1..=4).zip(&e.pools) {
        let s = 32 >> b;
        assert_eq!(tape.value(pool).shape(), &[3, 3 << b, s, s]);
        assert_eq!(tape.pool_indices(pool).unwrap().len(), 3 * (3 << b) * s * s);
    }
    assert_eq!(tape.value(e.bottleneck).shape(), &[3, 10]);
    let f = net.forward(&mut tape, &p, xv, &[0, 4, 2], 1.0).unwrap();
    assert_eq!(tape.value(f.reconstruction.unwrap()).shape(), &[3, 4, 32, 32]);
    assert_eq!(tape.value(f.logits.unwrap()).shape(), &[3, 5]);

    let wrong = random_stack("w", 2, 32, &mut rng);
    let mut tape = Tape::new();
    let p = net.bind(&mut tape);
    let xv = tape.constant(batch_tensor::<f32>(&[&wrong]).unwrap());
    assert!(net.encoder_forward(&mut tape, &p, xv).is_err());
}

#[test]
fn bad_training_inputs_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stacks: Vec<ViewStack> = (0..3)
        .map(|i| random_stack(&format!("s{i}"), 2, 16, &mut rng))
        .collect();
    let cfg = train_config(2, 0);
    assert!(train(ModelKind::Classification, &stacks, &[0, 1], 2, &cfg, &mini(2)).is_err());
    assert!(train(ModelKind::Classification, &stacks, &[0, 1, 2], 2, &cfg, &mini(2)).is_err());
    assert!(train(ModelKind::Autoencoder, &[], &[], 0, &cfg, &mini(2)).is_err());
    let zero = TrainConfig { iterations: 0, ..cfg };
    assert!(train(ModelKind::Autoencoder, &stacks, &[], 0, &zero, &mini(2)).is_err());
    assert!(train(ModelKind::Autoencoder, &stacks, &[], 0, &cfg, &mini(3)).is_err());
}

#[test]
fn embeddings_equal_the_training_bottleneck() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let stacks: Vec<ViewStack> = (0..5)
        .map(|i| random_stack(&format!("s{i}"), 2, 16, &mut rng))
        .collect();
    let m = train(
        ModelKind::Combined,
        &stacks,
        &[0, 1, 0, 1, 0],
        2,
        &train_config(5, 1),
        &mini(2),
    )
    .unwrap();
    let refs: Vec<&ViewStack> = stacks.iter().collect();
    let batched = bottlenecks(&m.network, &refs, 5).unwrap();
    for (s, z) in stacks.iter().zip(&batched) {
        let mut tape = Tape::new();
        let p = m.network.bind(&mut tape);
        let x = tape.constant(batch_tensor(&[s]).unwrap());
        let f = m.network.forward(&mut tape, &p, x, &[0], 1.0).unwrap();
        let e = m.embed(s).unwrap();
        assert_eq!(e.model_id, s.model_id);
        assert_eq!(e.vector, tape.value(f.bottleneck).data());
        for (a, b) in e.vector.iter().zip(z) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
        }
        assert!(e.vector.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn checkpoints_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let stacks: Vec<ViewStack> = (0..4)
        .map(|i| random_stack(&format!("s{i}"), 2, 16, &mut rng))
        .collect();
    for kind in ModelKind::ALL {
        let m = train(kind, &stacks, &[0, 1, 1, 0], 2, &train_config(3, 5), &mini(2)).unwrap();
        m.save(tmp.path(), kind.short_name()).unwrap();
        let back = TrainedModel::load(tmp.path(), kind.short_name()).unwrap();
        assert_eq!(back, m);
        let header = std::fs::read_to_string(tmp.path().join(format!("{}_loss.csv", kind.short_name()))).unwrap();
        let want = if kind.has_classifier() {
            "iteration,loss,accuracy"
        } else {
            "iteration,loss"
        };
        assert_eq!(header.lines().next().unwrap(), want);
    }
    std::fs::copy(tmp.path().join("ae.mvnn"), tmp.path().join("cls.mvnn")).unwrap();
    assert!(TrainedModel::load(tmp.path(), "cls").is_err());
    assert!(TrainedModel::load(tmp.path(), "missing").is_err());
}

/// Turntable stacks of jittered primitives at the desk resolution.
fn primitive_stacks(n: usize, k: usize) -> Vec<ViewStack> {
    let spec = SynthSpec::default();
    (0..n)
        .map(|i| {
            let p = Primitive::ALL[i % Primitive::ALL.len()];
            let id = format!("{}_{i}", p.name());
            let mesh = normalize_mesh(&synth_instance(p, &spec, i as u64)).unwrap();
            let views = render_turntable(&id, &mesh, 30, 64, 30.0).unwrap();
            select_representatives(&views, k, i as u64).unwrap()
        })
        .collect()
}

#[test]
fn autoencoder_loss_halves_in_two_hundred_iterations() {
    let stacks = primitive_stacks(40, 2);
    let enc = EncoderConfig {
        in_channels: 2,
        ..Default::default()
    };
    for seed in 0..3 {
        let cfg = TrainConfig {
            batch_size: 1,
            iterations: 200,
            seed,
            adam: AdamConfig::default(),
            lambda: 1.0,
        };
        let m = train(ModelKind::Autoencoder, &stacks, &[], 0, &cfg, &enc).unwrap();
        let head: f64 = m.losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = m.losses[180..].iter().sum::<f64>() / 20.0;
        println!("seed {seed}: loss {head:.5} -> {tail:.5}");
        assert!(tail <= 0.5 * head, "seed {seed}: {head} -> {tail}");
        assert!(m.losses.iter().all(|l| l.is_finite()));
    }
}
