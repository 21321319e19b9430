use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zonelesion::grid::Grid;
use zonelesion::net::{layer_forward, train_net, Act, AdamConfig, Gradients, Layer, MicroNet, Mode, Net, NetConfig};

fn random_batch(n: usize, size: usize, seed: u64) -> Vec<Grid<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Grid::from_fn(size, size, |_, _| rng.gen_range(-1.0..1.0)))
        .collect()
}

fn perturb_bn(net: &mut Net<f64>, seed: u64) {
    // move gamma/beta away from 1/0 so their gradients are exercised
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in &mut net.layers {
        if let Layer::BatchNorm(b) = l {
            b.gamma.iter_mut().for_each(|g| *g = rng.gen_range(0.5..1.5));
            b.beta.iter_mut().for_each(|g| *g = rng.gen_range(-0.5..0.5));
        }
    }
}

/// Central differences on the frozen-batch loss; returns the worst relative error.
fn fd_check(net: &mut Net<f64>, batch: &[Grid<f64>], labels: &[u8], picks: Option<usize>) -> f64 {
    let (_, grads) = net.loss_and_grads(batch, labels, Mode::TrainFrozen).unwrap();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (pi, p) in net.params().iter().enumerate() {
        for j in 0..p.len() {
            coords.push((pi, j));
        }
    }
    if let Some(k) = picks {
        coords = (0..k).map(|_| coords[rng.gen_range(0..coords.len())]).collect();
    }
    let mut worst: f64 = 0.0;
    for (pi, j) in coords {
        let orig = net.params()[pi][j];
        net.params_mut()[pi][j] = orig + h;
        let up = net.loss_and_grads(batch, labels, Mode::TrainFrozen).unwrap().0;
        net.params_mut()[pi][j] = orig - h;
        let down = net.loss_and_grads(batch, labels, Mode::TrainFrozen).unwrap().0;
        net.params_mut()[pi][j] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.params[pi][j];
        let rel = (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

fn small_config() -> NetConfig {
    NetConfig {
        input_size: 8,
        conv1_channels: 2,
        conv2_channels: 3,
        fc_width: 5,
        seed: 4,
        ..NetConfig::default()
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut net = MicroNet::micro(&small_config()).unwrap();
    perturb_bn(&mut net, 1);
    let batch = random_batch(3, 8, 2);
    let worst = fd_check(&mut net, &batch, &[0, 1, 1], None);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn full_size_gradients_match_on_sampled_parameters() {
    let mut net = MicroNet::micro(&NetConfig::default()).unwrap();
    perturb_bn(&mut net, 3);
    let batch = random_batch(2, 16, 5);
    let worst = fd_check(&mut net, &batch, &[1, 0], Some(400));
    assert!(worst < 1e-4, "worst relative error {worst}");
}

fn single_layer_net(input: (usize, usize, usize), mut layers: Vec<Layer<f64>>, seed: u64) -> Net<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat = {
        let mut s = input;
        for l in &layers {
            s = l.out_shape(s).unwrap();
        }
        s.0 * s.1 * s.2
    };
    layers.push(Layer::Flatten);
    layers.push(Layer::dense(flat, 2, &mut rng));
    Net::from_layers(input, layers, AdamConfig::default(), seed).unwrap()
}

#[test]
fn each_layer_type_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cases: Vec<(&str, Vec<Layer<f64>>)> = vec![
        ("conv", vec![Layer::conv(1, 2, 3, &mut rng)]),
        ("batch_norm", vec![Layer::batch_norm(1)]),
        ("relu", vec![Layer::Relu]),
        ("max_pool", vec![Layer::MaxPool]),
        ("dense", vec![Layer::Flatten, Layer::dense(36, 4, &mut rng)]),
        ("dropout_off", vec![Layer::Dropout { p: 0.5 }]),
    ];
    let batch = random_batch(3, 6, 11);
    for (name, layers) in cases {
        let mut net = single_layer_net((1, 6, 6), layers, 12);
        perturb_bn(&mut net, 13);
        let worst = fd_check(&mut net, &batch, &[1, 0, 1], None);
        assert!(worst < 1e-4, "{name}: worst relative error {worst}");
    }
}

#[test]
fn batch_norm_normalizes_in_train_mode() {
    let bn = Layer::<f64>::batch_norm(2);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data: Vec<f64> = (0..5 * 2 * 16).map(|i| rng.gen_range(-1.0..1.0) * 3.0 + (i % 7) as f64).collect();
    let out = layer_forward(&bn, Act { shape: [5, 2, 4, 4], data }, Mode::Train);
    for ch in 0..2 {
        let vals: Vec<f64> = (0..5).flat_map(|s| out.data[(s * 2 + ch) * 16..(s * 2 + ch + 1) * 16].to_vec()).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6);
        // eps in the denominator keeps the variance a hair under 1
        assert!((var - 1.0).abs() < 1e-5, "{var}");
    }
}

#[test]
fn max_pool_routes_each_gradient_once() {
    let mut net = single_layer_net((1, 4, 4), vec![Layer::MaxPool], 1);
    // ties: constant input routes to the first position of each window
    let flat = Grid::filled(4, 4, 1.0);
    let sal = net.saliency_map(&flat).unwrap();
    let w = match &net.layers[2] {
        Layer::Dense(d) => d.weight[4..8].to_vec(),
        _ => unreachable!(),
    };
    for (k, (r, c)) in [(0, 0), (0, 2), (2, 0), (2, 2)].into_iter().enumerate() {
        assert_eq!(sal.get(r, c), w[k].abs());
    }
    assert_eq!(sal.as_slice().iter().filter(|v| **v != 0.0).count(), 4);
    let total: f64 = sal.as_slice().iter().sum();
    let incoming: f64 = w.iter().map(|v| v.abs()).sum();
    assert!((total - incoming).abs() < 1e-15);
    let _ = net.forward(&[flat], Mode::Train).unwrap();
}

#[test]
fn saliency_of_linear_net_is_weight_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = Net::from_layers(
        (1, 16, 16),
        vec![Layer::Flatten, Layer::dense(256, 2, &mut rng)],
        AdamConfig::default(),
        0,
    )
    .unwrap();
    let sal = net.saliency_map(&random_batch(1, 16, 3)[0]).unwrap();
    let row = match &net.layers[1] {
        Layer::Dense(d) => d.weight[256..].to_vec(),
        _ => unreachable!(),
    };
    assert_eq!(sal.shape(), (16, 16));
    for (s, w) in sal.as_slice().iter().zip(&row) {
        assert_eq!(*s, w.abs());
    }
}

#[test]
fn saliency_matches_logit_finite_differences() {
    let mut cfg = NetConfig::default();
    cfg.seed = 6;
    let mut net = MicroNet::micro(&cfg).unwrap();
    perturb_bn(&mut net, 7);
    // non-trivial running statistics
    for l in &mut net.layers {
        if let Layer::BatchNorm(b) = l {
            b.running_mean.iter_mut().enumerate().for_each(|(i, v)| *v = 0.01 * i as f64);
            b.running_var.iter_mut().enumerate().for_each(|(i, v)| *v = 0.5 + 0.1 * i as f64);
        }
    }
    net.input_shift = 0.2;
    net.input_scale = 1.7;
    let x = random_batch(1, 16, 4).remove(0);
    let sal = net.saliency_map(&x).unwrap();
    assert!(sal.as_slice().iter().all(|v| *v >= 0.0));
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for r in 0..16 {
        for c in 0..16 {
            let mut up = x.clone();
            up.set(r, c, x.get(r, c) + h);
            let mut dn = x.clone();
            dn.set(r, c, x.get(r, c) - h);
            let lu = net.logits(&[up]).unwrap().get(0, 1);
            let ld = net.logits(&[dn]).unwrap().get(0, 1);
            let numeric = ((lu - ld) / (2.0 * h)).abs();
            let rel = (numeric - sal.get(r, c)).abs() / numeric.max(sal.get(r, c)).max(1e-6);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

fn linear_net() -> Net<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    Net::from_layers((1, 1, 2), vec![Layer::Flatten, Layer::dense(2, 2, &mut rng)], AdamConfig::default(), 0).unwrap()
}

#[test]
fn adam_first_step_matches_formula() {
    let mut net = linear_net();
    let before: Vec<Vec<f64>> = net.params().iter().map(|p| p.to_vec()).collect();
    let g: Vec<Vec<f64>> = before
        .iter()
        .map(|p| (0..p.len()).map(|i| (i as f64 - 1.5) * 0.3).collect())
        .collect();
    net.adam_step(&Gradients { params: g.clone() });
    let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
    for ((b, a), g) in before.iter().zip(net.params()).zip(&g) {
        for i in 0..b.len() {
            let m = (1.0 - b1) * g[i] / (1.0 - b1);
            let v = (1.0 - b2) * g[i] * g[i] / (1.0 - b2);
            let expected = b[i] - lr * m / (v.sqrt() + eps);
            assert!((a[i] - expected).abs() < 1e-15);
        }
    }
}

#[test]
fn adam_constant_gradient_steps_approach_lr() {
    let mut net = linear_net();
    let g = Gradients {
        params: net.params().iter().map(|p| vec![0.37; p.len()]).collect(),
    };
    let mut last = net.params()[0][0];
    let mut step = 0.0;
    for _ in 0..2000 {
        net.adam_step(&g);
        let now = net.params()[0][0];
        step = last - now;
        last = now;
    }
    assert!((step - 1e-3).abs() < 1e-9, "{step}");
}

fn toy_set() -> (Vec<Grid<f64>>, Vec<u8>) {
    let imgs = random_batch(8, 16, 31);
    (imgs, vec![0, 1, 0, 1, 1, 0, 0, 1])
}

#[test]
fn memorizes_eight_samples() {
    let (imgs, labels) = toy_set();
    let cfg = NetConfig {
        epochs: 500,
        seed: 2,
        ..NetConfig::default()
    };
    let (net, curve) = train_net(&cfg, &imgs, &labels).unwrap();
    assert_eq!(curve.len(), 500);
    let last = *curve.last().unwrap();
    assert!(last < 0.01, "final loss {last}");
    let p = net.predict_proba(&imgs).unwrap();
    for (p, l) in p.iter().zip(&labels) {
        assert_eq!(*p >= 0.5, *l == 1);
    }
}

#[test]
fn training_is_reproducible() {
    let (imgs, labels) = toy_set();
    let cfg = NetConfig {
        epochs: 5,
        seed: 9,
        ..NetConfig::default()
    };
    let (a, ca) = train_net(&cfg, &imgs, &labels).unwrap();
    let (b, cb) = train_net(&cfg, &imgs, &labels).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a, b);
}

#[test]
fn single_precision_network_runs() {
    let imgs: Vec<Grid<f32>> = random_batch(4, 16, 1).iter().map(|g| g.map(|v| v as f32)).collect();
    let cfg = NetConfig {
        epochs: 3,
        ..NetConfig::default()
    };
    let (net, curve) = train_net::<f32>(&cfg, &imgs, &[0, 1, 0, 1]).unwrap();
    assert!(curve.iter().all(|l| l.is_finite()));
    let p = net.predict_proba(&imgs).unwrap();
    assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn softmax_rows_sum_to_one() {
    let net = MicroNet::micro(&NetConfig::default()).unwrap();
    let logits = net.logits(&random_batch(6, 16, 77)).unwrap();
    for r in 0..6 {
        let s: f64 = zonelesion::net::softmax(&logits.as_slice()[2 * r..2 * r + 2]).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
