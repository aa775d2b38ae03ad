use super::*;
use crate::seed;
use proptest::prelude::*;
use rand::Rng;

fn dims(input: usize, hidden: usize, output: usize) -> GruDims {
    GruDims {
        input,
        hidden,
        output,
    }
}

fn random_seq(rng: &mut impl Rng, steps: usize, input: usize) -> Sequence {
    (0..steps)
        .map(|_| (0..input).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

#[test]
fn zero_network_outputs_bias() {
    let mut p = GruParameters::zeros(dims(3, 4, 2));
    p.b_o = vec![0.5, -1.5];
    let out = predict_gru(&p, &[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 9.0]]).unwrap();
    assert_eq!(out, vec![0.5, -1.5]);
}

#[test]
fn init_ranges_and_determinism() {
    let a = init_gru(dims(4, 5, 1), 3).unwrap();
    assert_eq!(a, init_gru(dims(4, 5, 1), 3).unwrap());
    assert_ne!(a, init_gru(dims(4, 5, 1), 4).unwrap());
    assert!(a.w_z.as_slice().iter().all(|v| v.abs() <= 0.5));
    assert!(a
        .u_h
        .as_slice()
        .iter()
        .all(|v| v.abs() <= 1.0 / 5f64.sqrt()));
    assert!(a.b_z.iter().chain(&a.b_o).all(|&b| b == 0.0));
    assert_eq!(a.parameter_count(), 3 * 20 + 3 * 25 + 3 * 5 + 5 + 1);
    assert!(init_gru(dims(0, 5, 1), 0).is_err());
}

#[test]
fn shape_errors() {
    let p = init_gru(dims(2, 3, 1), 0).unwrap();
    assert!(matches!(
        predict_gru(&p, &[vec![1.0]]),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(predict_gru(&p, &[]).is_err());
    assert!(gru_forward(&p, &[vec![1.0, 2.0]], Some(&[1.0])).is_err());
    assert!(input_gradient(&p, &[vec![1.0, 2.0]], 1).is_err());
}

fn loss_at(p: &GruParameters, xs: &[Sequence], ys: &[Vec<f64>], masks: &[Vec<f64>]) -> f64 {
    batch_gradients(p, xs, ys, &[0, 1, 2], Some(masks), false).loss
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = seed::rng(11);
    let p = init_gru(dims(3, 4, 2), 5).unwrap();
    let xs: Vec<Sequence> = (0..3).map(|_| random_seq(&mut rng, 4, 3)).collect();
    let ys: Vec<Vec<f64>> = (0..3)
        .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let masks = vec![vec![2.0, 0.0, 2.0, 2.0]; 3];
    let g = gru_backward(&p, &xs, &ys, Some(&masks)).unwrap();
    let eps = 1e-6;
    for (ti, name) in TENSOR_NAMES.iter().enumerate() {
        for k in 0..p.tensors()[ti].len() {
            let mut plus = p.clone();
            plus.tensors_mut()[ti][k] += eps;
            let mut minus = p.clone();
            minus.tensors_mut()[ti][k] -= eps;
            let numeric = (loss_at(&plus, &xs, &ys, &masks) - loss_at(&minus, &xs, &ys, &masks))
                / (2.0 * eps);
            let analytic = g.params.tensors()[ti][k];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(
                rel < 1e-5 || (numeric - analytic).abs() < 1e-9,
                "{name}[{k}] {analytic} vs {numeric}"
            );
        }
    }
}

#[test]
fn input_gradients_match_central_differences() {
    let mut rng = seed::rng(2);
    let p = init_gru(dims(3, 5, 2), 9).unwrap();
    let x = random_seq(&mut rng, 5, 3);
    let eps = 1e-6;
    for k in 0..2 {
        let g = input_gradient(&p, &x, k).unwrap();
        for t in 0..5 {
            for c in 0..3 {
                let mut a = x.clone();
                a[t][c] += eps;
                let mut b = x.clone();
                b[t][c] -= eps;
                let numeric = (predict_gru(&p, &a).unwrap()[k] - predict_gru(&p, &b).unwrap()[k])
                    / (2.0 * eps);
                assert!(
                    (numeric - g[t][c]).abs() < 1e-7,
                    "{t},{c}: {} vs {numeric}",
                    g[t][c]
                );
            }
        }
    }
}

#[test]
fn saliency_is_absolute_gradient() {
    let mut rng = seed::rng(4);
    let p = init_gru(dims(2, 3, 1), 1).unwrap();
    let x = random_seq(&mut rng, 4, 2);
    let g = input_gradient(&p, &x, 0).unwrap();
    let s = saliency(&p, &x, 0).unwrap();
    assert_eq!(s.shape(), (4, 2));
    assert_eq!(s.row_labels[3], "step4");
    for t in 0..4 {
        for c in 0..2 {
            assert_eq!(s.values[t][c], g[t][c].abs());
        }
    }
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let mut rng = seed::rng(8);
    let p = init_gru(dims(2, 3, 1), 2).unwrap();
    let xs: Vec<Sequence> = (0..20).map(|_| random_seq(&mut rng, 3, 2)).collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|s| vec![s[2][0]]).collect();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 4,
        dropout_rate: 0.0,
        batch_size: 16,
        seed: 1,
    };
    let out = train_gru(&p, &xs, &ys, &cfg).unwrap();
    assert_eq!(out.params, p);
    let trace = out.loss_trace;
    assert_eq!(trace.len(), 4);
    let expected = gru_loss(&p, &xs, &ys).unwrap();
    for l in trace {
        assert!((l - expected).abs() < 1e-12);
    }
}

#[test]
fn training_reduces_loss_on_planted_problem() {
    let mut rng = seed::rng(21);
    let xs: Vec<Sequence> = (0..64).map(|_| random_seq(&mut rng, 4, 2)).collect();
    let ys: Vec<Vec<f64>> = xs
        .iter()
        .map(|s| vec![0.8 * s[3][0] - 0.3 * s[2][1]])
        .collect();
    let p = init_gru(dims(2, 5, 1), 3).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 200,
        dropout_rate: 0.0,
        batch_size: 16,
        seed: 9,
    };
    let before = gru_loss(&p, &xs, &ys).unwrap();
    let out = train_gru(&p, &xs, &ys, &cfg).unwrap();
    let after = gru_loss(&out.params, &xs, &ys).unwrap();
    assert!(after < 0.25 * before, "{before} -> {after}");
    let s = saliency(&out.params, &xs[0], 0).unwrap();
    let last: f64 = s.values[3].iter().sum();
    let first: f64 = s.values[0].iter().sum();
    assert!(last > first);
}

#[test]
fn training_is_deterministic_with_dropout() {
    let mut rng = seed::rng(5);
    let xs: Vec<Sequence> = (0..40).map(|_| random_seq(&mut rng, 3, 2)).collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|s| vec![s[2][1]]).collect();
    let p = init_gru(dims(2, 4, 1), 3).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        epochs: 5,
        dropout_rate: 0.3,
        batch_size: 16,
        seed: 17,
    };
    let a = train_gru(&p, &xs, &ys, &cfg).unwrap();
    let b = train_gru(&p, &xs, &ys, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.loss_trace, b.loss_trace);
    let c = train_gru(&p, &xs, &ys, &TrainConfig { seed: 18, ..cfg }).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn divergence_is_reported() {
    let xs: Vec<Sequence> = vec![vec![vec![1e3, -1e3]]; 8];
    let ys = vec![vec![1e6]; 8];
    let p = init_gru(dims(2, 3, 1), 0).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e6,
        epochs: 50,
        dropout_rate: 0.0,
        batch_size: 4,
        seed: 0,
    };
    assert!(matches!(
        train_gru(&p, &xs, &ys, &cfg),
        Err(Error::NonFiniteLoss { .. })
    ));
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gru.json");
    let p = init_gru(dims(3, 2, 1), 12).unwrap();
    save_checkpoint(&path, &p, 12).unwrap();
    let cp = load_checkpoint(&path).unwrap();
    assert_eq!(cp.weights, p);
    assert_eq!(cp.seed, 12);
    let text = std::fs::read_to_string(&path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["weights"]["w_z"].as_array().unwrap().len(), 2);
    assert!(Checkpoint::from_json(&text.replace("\"hidden\": 2", "\"hidden\": 3")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hidden_states_stay_in_unit_box(
        seed in any::<u64>(),
        scale in 0.1f64..100.0,
        steps in 1usize..8,
    ) {
        let p = init_gru(dims(3, 4, 1), seed).unwrap();
        let mut rng = seed::rng(seed ^ 1);
        let x: Sequence = random_seq(&mut rng, steps, 3)
            .into_iter()
            .map(|r| r.into_iter().map(|v| v * scale).collect())
            .collect();
        let pass = gru_forward(&p, &x, None).unwrap();
        prop_assert_eq!(pass.hidden.len(), steps);
        for h in &pass.hidden {
            prop_assert!(h.iter().all(|v| v.abs() <= 1.0));
        }
        let bound = p.b_o[0].abs() + p.w_o.as_slice().iter().map(|w| w.abs()).sum::<f64>();
        prop_assert!(pass.output[0].abs() <= bound + 1e-12);
    }

    #[test]
    fn forward_is_pure(seed in any::<u64>()) {
        let p = init_gru(dims(2, 3, 2), seed).unwrap();
        let mut rng = seed::rng(seed);
        let x = random_seq(&mut rng, 4, 2);
        prop_assert_eq!(predict_gru(&p, &x).unwrap(), predict_gru(&p, &x).unwrap());
    }
}
