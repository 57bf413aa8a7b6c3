use momentum_rom::nn::{fourier_features, leaky_relu, train, Architecture, FourierConfig, Head, LossWeight, Mlp, TrainConfig};
use proptest::prelude::*;

fn net(head: Head, seed: u64) -> Mlp {
    let arch = Architecture {
        fourier: FourierConfig { p: 4, k: 2 },
        hidden: 8,
        latent: 3,
        head,
    };
    Mlp::new(arch, vec![0.0; 4], vec![1.0; 4], seed)
}

proptest! {
    #[test]
    fn fourier_layout(x in prop::collection::vec(-1.0f64..1.0, 1..6), k in 1usize..4) {
        let cfg = FourierConfig { p: x.len(), k };
        let out = fourier_features(&x, &cfg).unwrap();
        prop_assert_eq!(out.len(), cfg.output_dim());
        prop_assert_eq!(cfg.output_dim(), 2 * x.len() * k + x.len());
        // every entry is the coordinate itself or cos/sin of an integer multiple
        for &xi in &x {
            prop_assert!(out.contains(&xi));
            for j in 1..=k {
                let a = j as f64 * xi;
                prop_assert!(out.iter().any(|&v| (v - a.cos()).abs() < 1e-15));
                prop_assert!(out.iter().any(|&v| (v - a.sin()).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn leaky_relu_branches(x in -100.0f64..100.0) {
        let y = leaky_relu(x);
        if x >= 0.0 {
            prop_assert_eq!(y, x);
        } else {
            prop_assert!((y - 0.1 * x).abs() <= 1e-15 * x.abs());
        }
    }

    #[test]
    fn batch_matches_single(seed: u64, mus in prop::collection::vec(prop::array::uniform4(0.0f64..1.0), 1..6)) {
        let net = net(Head::Full { outputs: 5 }, seed);
        let mus: Vec<Vec<f64>> = mus.into_iter().map(|m| m.to_vec()).collect();
        let batch = net.predict_batch(&mus).unwrap();
        for (m, row) in mus.iter().zip(&batch) {
            let single = net.predict(m).unwrap();
            for (a, b) in single.iter().zip(row) {
                prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn parameter_round_trip(seed: u64) {
        let mut a = net(Head::Latent, seed);
        let p = a.trainable_params();
        prop_assert_eq!(p.len(), a.num_trainable());
        let shifted: Vec<f64> = p.iter().map(|x| x + 0.5).collect();
        a.set_trainable_params(&shifted);
        prop_assert_eq!(a.trainable_params(), shifted);
    }
}

#[test]
fn training_is_seed_deterministic() {
    let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 8.0, 0.5, 0.25, (i % 3) as f64 / 3.0]).collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0].sin(), x[3] - x[0], 0.1]).collect();
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let run = || {
        let mut n = net(Head::Latent, 4);
        let report = train(&mut n, &xs, &ys, &LossWeight::Identity, &cfg).unwrap();
        (n, report)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert!(ra.final_loss < ra.loss_history[0]);
}

#[test]
fn full_head_has_no_bias_in_last_layer() {
    let n = net(Head::Full { outputs: 5 }, 0);
    let last = n.layers.last().unwrap();
    assert!(!last.bias_trainable);
    assert_eq!((last.inputs, last.outputs), (3, 5));
    let zero = net(Head::Full { outputs: 5 }, 0);
    let mut z = zero.clone();
    z.set_trainable_params(&vec![0.0; zero.num_trainable()]);
    assert!(z.predict(&[0.1, 0.2, 0.3, 0.4]).unwrap().iter().all(|&v| v == 0.0));
}
