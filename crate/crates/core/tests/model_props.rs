use m3e2::datagen::{gen_gwas, Dataset, GwasConfig, Kind};
use m3e2::engine::{grad_check, Tape, Tensor};
use m3e2::harness::{train, TrainConfig};
use m3e2::model::{Batch, InputDims, M3E2Config, M3E2Params};
use m3e2::stats::{sample, Dist, SeededRng};
use proptest::prelude::*;

fn normal(rng: &mut SeededRng, rows: usize, cols: usize, sd: f64) -> Tensor {
    Tensor::new(rows, cols, sample(rng, Dist::normal(0.0, sd), rows * cols).unwrap()).unwrap()
}

fn small_cfg(k: usize, e: usize) -> M3E2Config {
    M3E2Config {
        num_experts: e,
        hidden1: 5,
        hidden2: 3,
        ..M3E2Config::new(k, Kind::Binary, Kind::Continuous)
    }
}

/// Replaces biases and the outcome layer with random values so no term is
/// trivially zero.
fn randomize(model: &mut M3E2Params, seed: u64) {
    let mut rng = SeededRng::new(seed);
    for (name, t) in model.params_mut().iter_mut() {
        if name.ends_with(".b") || name == "phi.w" {
            *t = normal(&mut rng, t.rows(), t.cols(), 0.5);
        }
    }
}

fn batch(n: usize, dims: InputDims, k: usize, seed: u64) -> Batch {
    let mut rng = SeededRng::new(seed);
    let x_low = normal(&mut rng, n, dims.x_low, 1.0);
    let x_high = normal(&mut rng, n, dims.x_high, 1.0);
    let t = normal(&mut rng, n, k, 1.0).map(|v| f64::from(u8::from(v > 0.0)));
    let y = normal(&mut rng, n, 1, 1.0);
    Batch {
        x_low,
        x_high,
        t,
        y,
    }
}

// Plain row-vector helpers for the hand-built network.
fn dense(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    (0..w.cols())
        .map(|j| b.get(0, j) + (0..w.rows()).map(|i| x[i] * w.get(i, j)).sum::<f64>())
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

#[test]
fn single_expert_single_task_matches_straight_line_network() {
    let dims = InputDims {
        x_low: 2,
        x_high: 4,
    };
    let mut model = M3E2Params::init(small_cfg(1, 1), dims, &mut SeededRng::new(3)).unwrap();
    randomize(&mut model, 4);
    let b = batch(10, dims, 1, 5);
    let out = model.forward(&b.x_low, &b.x_high, &b.t).unwrap();
    let p = |n: &str| model.params().get(n).unwrap();
    for r in 0..10 {
        let xh = b.x_high.row(r).to_vec();
        let latent = dense(&relu(dense(&xh, p("enc1.w"), p("enc1.b"))), p("enc2.w"), p("enc2.b"));
        let mut xl1 = latent.clone();
        xl1.extend_from_slice(b.x_low.row(r));
        let shared = relu(dense(&xl1, p("expert0.w"), p("expert0.b")));
        let h = dense(&shared, p("head0.w"), p("head0.b"))[0];
        let phi = p("phi.w");
        let y = phi.get(0, 0) * b.t.get(r, 0) + phi.get(1, 0) * h + p("phi.b").get(0, 0);
        let rec = dense(&relu(dense(&latent, p("dec1.w"), p("dec1.b"))), p("dec2.w"), p("dec2.b"));

        assert!((out.gates[0].get(r, 0) - 1.0).abs() < 1e-15);
        assert!((out.h.get(r, 0) - h).abs() < 1e-12);
        assert!((out.p_hat[0].get(r, 0) - 1.0 / (1.0 + (-h).exp())).abs() < 1e-12);
        assert!((out.y_hat.get(r, 0) - y).abs() < 1e-12);
        let rec_out = out.x_high_rec.as_ref().unwrap();
        for (c, v) in rec.iter().enumerate() {
            assert!((rec_out.get(r, c) - v).abs() < 1e-12);
        }
    }
}

#[test]
fn continuous_branches_pass_gradient_check() {
    let dims = InputDims {
        x_low: 3,
        x_high: 4,
    };
    let cfg = M3E2Config {
        num_experts: 3,
        hidden1: 4,
        hidden2: 2,
        ..M3E2Config::new(2, Kind::Continuous, Kind::Binary)
    };
    for seed in 1..=3 {
        let mut model = M3E2Params::init(cfg.clone(), dims, &mut SeededRng::new(seed)).unwrap();
        randomize(&mut model, seed + 10);
        let mut b = batch(15, dims, 2, seed + 20);
        b.t = normal(&mut SeededRng::new(seed + 30), 15, 2, 1.0);
        b.y = b.y.map(|v| f64::from(u8::from(v > 0.0)));
        let report = grad_check(model.params(), 1e-5, |tape, vars| {
            let out = model.forward_on(tape, vars, &b.x_low, &b.x_high, &b.t)?;
            Ok(model.total_loss_on(tape, vars, &out, &b)?.total)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        assert_eq!(report.checked, model.num_parameters());
    }
}

#[test]
fn propensity_terms_only_reach_their_own_task() {
    let dims = InputDims {
        x_low: 2,
        x_high: 3,
    };
    let mut model = M3E2Params::init(small_cfg(3, 4), dims, &mut SeededRng::new(9)).unwrap();
    randomize(&mut model, 2);
    let b = batch(12, dims, 3, 1);
    for k in 0..3 {
        let tape = Tape::new();
        let vars = model.params().register(&tape);
        let out = model.forward_on(&tape, &vars, &b.x_low, &b.x_high, &b.t).unwrap();
        let loss = model.total_loss_on(&tape, &vars, &out, &b).unwrap();
        let grads = tape.backward(loss.propensity[k]).unwrap();
        for j in 0..3 {
            for name in [
                format!("head{j}.w"),
                format!("head{j}.b"),
                format!("gate{j}.w"),
            ] {
                let g = grads.by_name(&name);
                let norm = g.map_or(0.0, |g| g.data().iter().map(|v| v.abs()).sum::<f64>());
                if j == k {
                    assert!(norm > 0.0, "{name} should move ℓp{k}");
                } else {
                    assert_eq!(norm, 0.0, "{name} leaks into ℓp{k}");
                }
            }
        }
    }
}

fn count(k: usize, e: usize, units: usize, dims: InputDims) -> usize {
    let cfg = M3E2Config {
        num_experts: e,
        units_exp: units,
        hidden1: 6,
        hidden2: 4,
        ..M3E2Config::new(k, Kind::Binary, Kind::Continuous)
    };
    M3E2Params::init(cfg, dims, &mut SeededRng::new(1))
        .unwrap()
        .num_parameters()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn parameter_count_is_affine_in_k(
        e in 1usize..6,
        units in 1usize..6,
        x_low in 0usize..5,
        x_high in 1usize..12,
    ) {
        let dims = InputDims { x_low, x_high };
        let c = |k| count(k, e, units, dims);
        prop_assert_eq!(c(6) - c(3), c(9) - c(6));
        prop_assert_eq!(c(2) - c(1), c(3) - c(2));
    }

    #[test]
    fn perfect_outcome_with_only_alpha_gives_zero(seed in 0u64..1000) {
        let dims = InputDims { x_low: 2, x_high: 2 };
        let mut cfg = small_cfg(2, 2);
        cfg.weights = m3e2::model::LossWeights { alpha: 1.0, beta: 0.0, gamma: 0.0, lambda: 0.0 };
        let mut model = M3E2Params::init(cfg, dims, &mut SeededRng::new(seed)).unwrap();
        randomize(&mut model, seed);
        let mut b = batch(6, dims, 2, seed);
        b.y = model.forward(&b.x_low, &b.x_high, &b.t).unwrap().y_hat;
        prop_assert_eq!(model.total_loss(&b).unwrap().total, 0.0);
    }
}

fn linear_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let x = normal(&mut rng, n, 3, 1.0);
    let t = Tensor::column(sample(&mut rng, Dist::bernoulli(0.5), n).unwrap());
    let beta = [0.6, -0.4, 0.2];
    let y = (0..n)
        .map(|r| 2.0 * t.get(r, 0) + (0..3).map(|c| beta[c] * x.get(r, c)).sum::<f64>())
        .collect();
    Dataset::new(
        "linear",
        x,
        Tensor::zeros(n, 0),
        t,
        y,
        vec![2.0],
        Kind::Binary,
        Kind::Continuous,
    )
    .unwrap()
}

#[test]
fn recovers_effect_on_noiseless_linear_outcome() {
    let ds = linear_dataset(2000, 4);
    let model = M3E2Params::init(
        M3E2Config::for_dataset(&ds),
        InputDims::of(&ds),
        &mut SeededRng::new(1),
    )
    .unwrap();
    let cfg = TrainConfig {
        lr: 1e-2,
        epochs: 60,
        ..TrainConfig::default()
    };
    let tau = train(model, &ds, &cfg).unwrap().model.extract_tau();
    assert!((tau[0] - 2.0).abs() < 0.2, "{tau:?}");
}

#[test]
fn trained_gwas_model_beats_outcome_spread() {
    let ds = gen_gwas(&GwasConfig::new(1500, 40, 3, 2)).unwrap();
    let model = M3E2Params::init(
        M3E2Config::for_dataset(&ds),
        InputDims::of(&ds),
        &mut SeededRng::new(1),
    )
    .unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    let model = train(model, &ds, &cfg).unwrap().model;
    let pred = model.predict(ds.x_low(), ds.x_high(), Some(ds.t())).unwrap();
    let n = ds.n() as f64;
    let mean = ds.y().iter().sum::<f64>() / n;
    let sd = (ds.y().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let rmse = (ds.y().iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
    assert!(rmse < sd, "rmse {rmse} vs sd {sd}");
}
