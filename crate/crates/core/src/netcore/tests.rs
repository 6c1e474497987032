use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_stack(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> ChannelStack {
    ChannelStack::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn check_config() -> NetConfig {
    NetConfig {
        in_channels: 3,
        out_channels: 2,
        base_features: 8,
        depth: 2,
        embed_dim: 8,
        meta_len: 8,
        has_time: true,
        time_steps: 10,
    }
}

fn random_batch(cfg: &NetConfig, n: usize, hw: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Sample {
            input: random_stack(cfg.in_channels, hw, hw, &mut rng),
            t: Some(1.0 + i as f64 * 3.0),
            meta: Some((0..cfg.meta_len).map(|_| rng.random_range(0.0..1.0)).collect()),
            target: random_stack(cfg.out_channels, hw, hw, &mut rng),
        })
        .collect()
}

#[test]
fn parameter_count_matches_hand_count() {
    let a = NetConfig {
        in_channels: 1,
        out_channels: 1,
        base_features: 2,
        depth: 1,
        embed_dim: 4,
        meta_len: 2,
        has_time: true,
        time_steps: 5,
    };
    assert_eq!(Layout::new(&a).unwrap().param_count(), 505);
    let b = NetConfig {
        in_channels: 3,
        out_channels: 2,
        base_features: 4,
        depth: 2,
        embed_dim: 8,
        meta_len: 0,
        has_time: false,
        time_steps: 1,
    };
    assert_eq!(Layout::new(&b).unwrap().param_count(), 7634);
}

#[test]
fn init_is_deterministic_and_xavier() {
    let cfg = NetConfig::default();
    let a = VectorFieldNet::init(&cfg, 3).unwrap();
    let b = VectorFieldNet::init(&cfg, 3).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), VectorFieldNet::init(&cfg, 4).unwrap().params());
    let mut checked = 0;
    for s in a.layout().segments() {
        let vals = &a.params()[s.offset..s.offset + s.len];
        match s.init {
            SegmentInit::Zeros => assert!(vals.iter().all(|&v| v == 0.0), "{}", s.name),
            SegmentInit::Ones => assert!(vals.iter().all(|&v| v == 1.0), "{}", s.name),
            SegmentInit::Xavier if s.len >= 256 => {
                let mean = vals.iter().sum::<f64>() / s.len as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s.len - 1) as f64;
                let expected = 2.0 / (s.fan_in + s.fan_out) as f64;
                assert!((var / expected - 1.0).abs() < 0.2, "{}: {var} vs {expected}", s.name);
                checked += 1;
            }
            SegmentInit::Xavier => {}
        }
    }
    assert!(checked > 10);
}

#[test]
fn forward_shape_purity_and_missing_conditions() {
    let cfg = check_config();
    let net = VectorFieldNet::init(&cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_stack(3, 16, 12, &mut rng);
    let meta = vec![0.5; 8];
    let before = net.params().to_vec();
    let y1 = net.forward(&x, Some(4.0), Some(&meta)).unwrap();
    let y2 = net.forward(&x, Some(4.0), Some(&meta)).unwrap();
    assert_eq!((y1.channels, y1.height, y1.width), (2, 16, 12));
    assert_eq!(y1, y2);
    assert_eq!(net.params(), &before[..]);

    let zeros = ChannelStack::zeros(3, 16, 12);
    let y = net.forward(&zeros, Some(4.0), Some(&[0.0; 8])).unwrap();
    assert!(y.is_finite());
    assert_eq!(y, net.forward(&zeros, Some(4.0), None).unwrap());
}

#[test]
fn forward_rejects_bad_shapes() {
    let net = VectorFieldNet::init(&check_config(), 1).unwrap();
    assert!(net.forward(&ChannelStack::zeros(2, 8, 8), Some(1.0), None).is_err());
    assert!(net.forward(&ChannelStack::zeros(3, 6, 8), Some(1.0), None).is_err());
    assert!(net.forward(&ChannelStack::zeros(3, 8, 8), Some(1.0), Some(&[0.0; 3])).is_err());
}

#[test]
fn perfect_prediction_has_zero_loss_and_gradient() {
    let cfg = check_config();
    let net = VectorFieldNet::init(&cfg, 5).unwrap();
    let mut batch = random_batch(&cfg, 2, 8, 6);
    for s in &mut batch {
        s.target = net.forward(&s.input, s.t, s.meta.as_deref()).unwrap();
    }
    let (loss, grad) = loss_and_grad(&net, &batch).unwrap();
    assert!(loss.abs() < 1e-12);
    assert!(grad.iter().all(|g| g.abs() < 1e-12));
}

#[test]
fn zero_metadata_gives_zero_metadata_weight_gradient() {
    let cfg = check_config();
    let net = VectorFieldNet::init(&cfg, 7).unwrap();
    let mut batch = random_batch(&cfg, 2, 8, 8);
    for s in &mut batch {
        s.meta = Some(vec![0.0; 8]);
    }
    let (_, grad) = loss_and_grad(&net, &batch).unwrap();
    let seg = net.layout().segments().iter().find(|s| s.name == "embed.meta.weight").unwrap();
    assert!(grad[seg.offset..seg.offset + seg.len].iter().all(|&g| g == 0.0));
    let bias = net.layout().segments().iter().find(|s| s.name == "embed.meta.bias").unwrap();
    assert!(grad[bias.offset..bias.offset + bias.len].iter().any(|&g| g != 0.0));
}

/// Central differences against the analytic gradient on >= 200 coordinates
/// of every parameter family.
#[test]
fn gradients_match_finite_differences() {
    let cfg = check_config();
    let net = VectorFieldNet::init(&cfg, 11).unwrap();
    // Perturb norm scales and biases away from their init values so every
    // parameter influences the loss non-trivially.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut params = net.params().to_vec();
    for s in net.layout().segments() {
        if s.init != SegmentInit::Xavier {
            for v in &mut params[s.offset..s.offset + s.len] {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    let net = VectorFieldNet::from_params(&cfg, params).unwrap();
    let batch = random_batch(&cfg, 2, 8, 13);
    let (_, grad) = loss_and_grad(&net, &batch).unwrap();
    let h = 1e-4;
    for kind in [ParamKind::Conv, ParamKind::Norm, ParamKind::Embedding, ParamKind::Upsample] {
        let idx: Vec<usize> = net
            .layout()
            .segments()
            .iter()
            .filter(|s| s.kind == kind)
            .flat_map(|s| s.offset..s.offset + s.len)
            .collect();
        assert!(idx.len() >= 200, "{kind:?} has only {} parameters", idx.len());
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let i = idx[rng.random_range(0..idx.len())];
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (batch_loss(&plus, &batch).unwrap() - batch_loss(&minus, &batch).unwrap()) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-8);
            let rel = (grad[i] - fd).abs() / denom;
            worst = worst.max(rel);
            assert!(rel < 1e-4, "{kind:?} param {i}: analytic {} vs numeric {fd}", grad[i]);
        }
        eprintln!("{kind:?}: worst relative error {worst:.2e}");
    }
}

#[test]
fn adam_zero_gradient_keeps_parameters() {
    let net = VectorFieldNet::init(&check_config(), 1).unwrap();
    let mut state = TrainState::new(net.clone(), 1e-3);
    state.adam_step(&vec![0.0; net.param_count()]).unwrap();
    assert_eq!(state.net.params(), net.params());
    assert!(state.adam_step(&[0.0; 3]).is_err());
    let mut bad = vec![0.0; net.param_count()];
    bad[0] = f64::NAN;
    assert!(state.adam_step(&bad).is_err());
}

#[test]
fn adam_constant_gradient_steps_approach_lr_sign() {
    let net = VectorFieldNet::init(&check_config(), 1).unwrap();
    let n = net.param_count();
    let lr = 1e-3;
    let mut state = TrainState::new(net, lr);
    let grad: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.3 } else { -2.0 }).collect();
    let mut last = state.net.params().to_vec();
    for _ in 0..500 {
        state.adam_step(&grad).unwrap();
        let now = state.net.params().to_vec();
        for ((a, b), g) in now.iter().zip(&last).zip(&grad) {
            let step = a - b;
            assert!((step + lr * g.signum()).abs() < 1e-3 * lr);
        }
        last = now;
    }
}

#[test]
fn epoch_boundary_decays_learning_rate() {
    let net = VectorFieldNet::init(&check_config(), 1).unwrap();
    let mut state = TrainState::new(net, 1e-4);
    state.end_epoch();
    assert_eq!(state.lr, 0.90 * 1e-4);
    state.end_epoch();
    assert_eq!(state.lr, 0.90 * (0.90 * 1e-4));
    assert_eq!(state.epoch, 2);
}

#[test]
fn pairwise_sum_is_order_fixed() {
    let parts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.1, 1.0]).collect();
    let s = pairwise_sum(parts);
    assert!((s[0] - 2.1).abs() < 1e-12);
    assert_eq!(s[1], 7.0);
}

struct FixedSampler(Vec<Sample>);

impl BatchSampler for FixedSampler {
    fn sample_batch(&self, _: &mut ChaCha8Rng, batch_size: usize) -> crate::Result<Vec<Sample>> {
        Ok((0..batch_size).map(|i| self.0[i % self.0.len()].clone()).collect())
    }
    fn validation(&self) -> &[Sample] {
        &self.0
    }
}

fn tiny_config() -> NetConfig {
    NetConfig {
        in_channels: 2,
        out_channels: 1,
        base_features: 4,
        depth: 1,
        embed_dim: 4,
        meta_len: 8,
        has_time: true,
        time_steps: 10,
    }
}

#[test]
fn overfits_single_sample() {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let input = random_stack(2, 8, 8, &mut rng);
    let target = ChannelStack::new(1, 8, 8, input.plane(0).iter().zip(input.plane(1)).map(|(a, b)| a - 0.5 * b).collect()).unwrap();
    let sampler = FixedSampler(vec![Sample {
        input,
        t: Some(3.0),
        meta: Some(vec![0.2; 8]),
        target,
    }]);
    let net = VectorFieldNet::init(&cfg, 22).unwrap();
    let initial = batch_loss(&net, sampler.validation()).unwrap();
    let tc = TrainConfig {
        epochs: 1,
        steps_per_epoch: 200,
        batch_size: 1,
        lr: 1e-2,
        seed: 0,
    };
    let (best, report) = train(TrainState::new(net, tc.lr), &sampler, &tc).unwrap();
    let fin = batch_loss(&best, sampler.validation()).unwrap();
    assert!(fin < 0.1 * initial, "{initial} -> {fin}");
    assert_eq!(report.steps, 200);
}

#[test]
fn training_selects_best_validation_and_is_deterministic() {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let samples: Vec<Sample> = (0..3)
        .map(|_| Sample {
            input: random_stack(2, 8, 8, &mut rng),
            t: Some(5.0),
            meta: None,
            target: random_stack(1, 8, 8, &mut rng),
        })
        .collect();
    let sampler = FixedSampler(samples);
    let tc = TrainConfig {
        epochs: 4,
        steps_per_epoch: 5,
        batch_size: 2,
        lr: 5e-2,
        seed: 3,
    };
    let run = || train(TrainState::new(VectorFieldNet::init(&cfg, 1).unwrap(), tc.lr), &sampler, &tc).unwrap();
    let (best, report) = run();
    let (best2, report2) = run();
    assert_eq!(report.curve, report2.curve);
    assert_eq!(best.params(), best2.params());
    assert!(report.curve.iter().all(|e| report.best_val_loss <= e.val_loss));
    assert_eq!(batch_loss(&best, sampler.validation()).unwrap(), report.best_val_loss);
    let lrs: Vec<f64> = report.curve.iter().map(|e| e.lr).collect();
    assert!((lrs[1] - 0.9 * lrs[0]).abs() < 1e-15);
}

#[test]
fn checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let net = VectorFieldNet::init(&tiny_config(), 9).unwrap();
    let path = dir.path().join("net.prt");
    let mut extra = serde_json::Map::new();
    extra.insert("mask_hash".into(), "abc".into());
    let meta = checkpoint::save(&net, &path, 3, 0.25, 9, extra).unwrap();
    let (back, meta2) = checkpoint::load(&path).unwrap();
    assert_eq!(back.params(), net.params());
    assert_eq!(meta, meta2);
    assert_eq!(meta2.extra["mask_hash"], "abc");
}
