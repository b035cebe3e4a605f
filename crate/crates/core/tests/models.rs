mod common;

use common::*;
use dilate::data::{Dataset, Split};
use dilate::losses::{dilate_loss, LossConfig, LossSpec, PenaltyMatrix};
use dilate::models::*;
use dilate::TimeSeries;
use rand::Rng;

fn small_params(seed: u64, n: usize, hidden: usize, k: usize) -> MlpParams {
    let mut p = MlpParams::init(n, hidden, k, &mut rng(seed));
    // Push hidden pre-activations away from the relu kink.
    p.b1.iter_mut().for_each(|b| *b += 0.5);
    p
}

fn reference_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; p.hidden];
    for u in 0..p.hidden {
        let mut z = p.b1[u];
        for i in 0..p.n {
            z += p.w1[u * p.n + i] * x[i];
        }
        h[u] = if z > 0.0 { z } else { 0.0 };
    }
    (0..p.k)
        .map(|o| p.b2[o] + (0..p.hidden).map(|u| p.w2[o * p.hidden + u] * h[u]).sum::<f64>())
        .collect()
}

fn with_block(p: &MlpParams, block: usize, values: &[f64]) -> MlpParams {
    let mut q = p.clone();
    q.blocks_mut()[block].copy_from_slice(values);
    q
}

#[test]
fn forward_matches_reference() {
    let mut r = rng(41);
    let p = MlpParams::init(7, 16, 5, &mut r);
    for _ in 0..5 {
        let x: Vec<f64> = (0..7).map(|_| r.gen_range(-1.0..1.0)).collect();
        let (y, _) = mlp_forward(&p, &x).unwrap();
        let oracle = reference_forward(&p, &x);
        assert!(vec_rel_err(&y, &oracle) < 1e-14);
    }
}

#[test]
fn backward_matches_finite_differences_per_block() {
    let mut r = rng(42);
    let p = small_params(43, 6, 8, 4);
    let x: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
    let upstream: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
    let (_, cache) = mlp_forward(&p, &x).unwrap();
    let g = mlp_backward(&p, &cache, &upstream).unwrap();
    let blocks = [p.w1.clone(), p.b1.clone(), p.w2.clone(), p.b2.clone()];
    for (b, (analytic, values)) in g.blocks().iter().zip(&blocks).enumerate() {
        let fd = fd_gradient(values, 1e-6, |v| {
            let y = reference_forward(&with_block(&p, b, v), &x);
            y.iter().zip(&upstream).map(|(a, c)| a * c).sum()
        });
        let err = vec_rel_err(analytic, &fd);
        assert!(err < 1e-5, "block {b}: {err}");
    }
}

#[test]
fn stale_cache_is_rejected() {
    let mut p = small_params(44, 3, 4, 2);
    let (_, cache) = mlp_forward(&p, &[0.1, 0.2, 0.3]).unwrap();
    p.blocks_mut()[3][0] += 1.0;
    assert!(mlp_backward(&p, &cache, &[1.0, 1.0]).is_err());
}

#[test]
fn end_to_end_gradient_through_dilate() {
    let mut r = rng(45);
    let p = small_params(46, 6, 8, 4);
    let x: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
    let target = random_series(&mut r, 1, 4);
    let om = PenaltyMatrix::squared(4);
    let cfg = LossConfig::new(0.5, 0.1).unwrap();
    let loss_of = |q: &MlpParams| {
        let y = reference_forward(q, &x);
        dilate_loss(&TimeSeries::univariate(&y).unwrap(), &target, &cfg, &om).unwrap()
    };
    let (y, cache) = mlp_forward(&p, &x).unwrap();
    let res = dilate_loss(&TimeSeries::univariate(&y).unwrap(), &target, &cfg, &om).unwrap();
    let g = mlp_backward(&p, &cache, res.grad.values()).unwrap();
    let blocks = [p.w1.clone(), p.b1.clone(), p.w2.clone(), p.b2.clone()];
    for (b, (analytic, values)) in g.blocks().iter().zip(&blocks).enumerate() {
        let fd = fd_gradient(values, 1e-6, |v| loss_of(&with_block(&p, b, v)).value);
        let err = vec_rel_err(analytic, &fd);
        assert!(err < 1e-3, "block {b}: {err}");
    }
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut state = AdamState::new(3, 0.01);
    let mut x = vec![1.0, -1.0, 0.5];
    state.step_flat(&mut x, &[2.0, -0.5, 0.0]).unwrap();
    // Bias-corrected first step is lr * sign(g) for nonzero g.
    assert!((x[0] - 0.99).abs() < 1e-9);
    assert!((x[1] + 0.99).abs() < 1e-9);
    assert_eq!(x[2], 0.5);
}

fn constant_target_data(seed: u64, count: usize) -> Dataset {
    let mut r = rng(seed);
    let inputs: Vec<f64> = (0..count * 5).map(|_| r.gen_range(0.0..1.0)).collect();
    let targets = vec![0.7; count * 3];
    Dataset::new(Split::Train, 5, 3, inputs, targets, "toy".into()).unwrap()
}

fn toy_config(loss: LossSpec, seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: 200,
        patience: 20,
        batch_size: 8,
        learning_rate: 1e-2,
        hidden: 16,
        seed,
        loss,
    }
}

#[test]
fn training_fits_a_constant_target() {
    let train_set = constant_target_data(47, 64);
    let valid = constant_target_data(48, 32);
    let out = train(&train_set, &valid, &toy_config(LossSpec::Mse, 1)).unwrap();
    let t = &out.trace;
    assert!(t.best_valid_loss < t.initial_valid_loss / 10.0, "{t:?}");
    assert!(t.epochs.last().unwrap().train_loss < t.epochs[0].train_loss);
}

#[test]
fn training_is_bitwise_reproducible() {
    let train_set = constant_target_data(49, 40);
    let valid = constant_target_data(50, 20);
    let spec = LossSpec::Dilate { alpha: 0.5, gamma: 0.1 };
    let a = train(&train_set, &valid, &toy_config(spec, 7)).unwrap();
    let b = train(&train_set, &valid, &toy_config(spec, 7)).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.params.w1, b.params.w1);
    assert_eq!(a.params.b2, b.params.b2);
    let c = train(&train_set, &valid, &toy_config(spec, 8)).unwrap();
    assert_ne!(a.params.w1, c.params.w1);
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let train_set = constant_target_data(51, 40);
    let valid = constant_target_data(52, 20);
    let mut cfg = toy_config(LossSpec::Mse, 3);
    cfg.learning_rate = 0.3;
    cfg.patience = 3;
    let out = train(&train_set, &valid, &cfg).unwrap();
    let t = &out.trace;
    let min = t.epochs.iter().map(|e| e.valid_loss).fold(t.initial_valid_loss, f64::min);
    assert_eq!(t.best_valid_loss, min);
    let ran = t.epochs.len();
    assert!(ran == cfg.max_epochs || ran == t.best_epoch + cfg.patience);
    let loss = cfg.loss.prepare(3);
    assert_eq!(dataset_loss(&out.params, &valid, &loss).unwrap(), t.best_valid_loss);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = MlpParams::init(4, 6, 3, &mut rng(53));
    let path = dir.path().join("model.ckpt");
    p.save(&path).unwrap();
    let q = MlpParams::load(&path).unwrap();
    assert_eq!((q.w1, q.b1, q.w2, q.b2), (p.w1, p.b1, p.w2, p.b2));
    std::fs::write(&path, "garbage").unwrap();
    assert!(MlpParams::load(&path).is_err());
}

#[test]
fn init_is_seeded_and_bounded() {
    let a = MlpParams::init(20, 128, 20, &mut rng(54));
    let b = MlpParams::init(20, 128, 20, &mut rng(54));
    assert_eq!(a.w2, b.w2);
    let bound = 1.0 / 20f64.sqrt();
    assert!(a.w1.iter().all(|w| w.abs() < bound));
    assert!(a.w2.iter().all(|w| w.abs() < 1.0 / 128f64.sqrt()));
    assert_eq!(a.param_count(), 128 * 20 + 128 + 20 * 128 + 20);
}
