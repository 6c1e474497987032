use num_complex::Complex64;

use super::*;
use crate::kspace::testutil::random_image;
use crate::kspace::{apply_forward, data_consistency, fft2c, CartesianMask};
use crate::maskdesign::{make_random, Density};
use crate::netcore::NetConfig;
use crate::phantom::{generate, PhantomSpec};

fn phantom_case(seed: u64, size: usize) -> (ComplexImage, Vec<bool>) {
    let inst = generate(&PhantomSpec {
        seed,
        size,
        ..PhantomSpec::default()
    })
    .unwrap();
    (inst.contrasts[0].to_complex().unwrap(), inst.support_mask.clone())
}

/// A 16x16 image from 2x2 block means of a 32x32 phantom.
fn small_phantom(seed: u64) -> ComplexImage {
    let (x, _) = phantom_case(seed, 32);
    let data = (0..256)
        .map(|i| {
            let (r, c) = (2 * (i / 16), 2 * (i % 16));
            (x.at(r, c) + x.at(r + 1, c) + x.at(r, c + 1) + x.at(r + 1, c + 1)) / 4.0
        })
        .collect();
    ComplexImage::new(16, 16, data).unwrap()
}

fn direct_net(seed: u64) -> VectorFieldNet {
    let cfg = NetConfig {
        in_channels: 2,
        out_channels: 2,
        base_features: 4,
        depth: 2,
        embed_dim: 0,
        meta_len: 0,
        has_time: false,
        time_steps: 1,
    };
    VectorFieldNet::init(&cfg, seed).unwrap()
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
        assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
    }
    assert!("vn".parse::<Method>().is_err());
}

#[test]
fn haar_is_orthonormal_and_invertible() {
    let x = random_image(16, 32, 1);
    for levels in 0..=4 {
        let h = Haar::new(levels);
        let c = h.forward(&x).unwrap();
        assert!((c.norm() - x.norm()).abs() < 1e-10 * x.norm());
        assert!(h.inverse(&c).unwrap().max_abs_diff(&x) < 1e-12);
    }
    assert!(Haar::new(5).forward(&x).is_err());
    assert!(Haar::new(2).forward(&random_image(6, 8, 1)).is_err());
}

#[test]
fn haar_detail_of_a_constant_is_zero() {
    let x = ComplexImage::new(8, 8, vec![Complex64::new(2.0, -1.0); 64]).unwrap();
    let h = Haar::new(3);
    let c = h.forward(&x).unwrap();
    let detail = h.detail_mask((8, 8));
    assert_eq!(detail.iter().filter(|&&d| !d).count(), 1);
    for (z, d) in c.data().iter().zip(&detail) {
        if *d {
            assert!(z.norm() < 1e-12);
        } else {
            assert!((z - Complex64::new(16.0, -8.0)).norm() < 1e-12);
        }
    }
}

#[test]
fn zero_filled_is_exact_at_full_sampling_and_linear() {
    let x = random_image(8, 8, 2);
    let y = apply_forward(&x, &CartesianMask::full(8)).unwrap();
    assert!(recon_zero_filled(&y).max_abs_diff(&x) < 1e-10);
    let mask = make_random(8, 4, 1, Density::Uniform).unwrap();
    let y1 = apply_forward(&random_image(8, 8, 3), &mask).unwrap();
    let y2 = apply_forward(&random_image(8, 8, 4), &mask).unwrap();
    let sum = recon_zero_filled(&(&y1 + &y2));
    let parts = &recon_zero_filled(&y1) + &recon_zero_filled(&y2);
    assert!(sum.max_abs_diff(&parts) < 1e-10);
}

#[test]
fn cs_without_regularization_inverts_a_full_mask() {
    let x = random_image(16, 16, 5);
    let y = apply_forward(&x, &CartesianMask::full(16)).unwrap();
    let cfg = CSConfig {
        lambda: 1e-9,
        ..CSConfig::default()
    };
    let out = recon_cs(&y, &cfg).unwrap();
    assert!(out.image.max_abs_diff(&x) < 1e-4);
}

#[test]
fn cs_objective_is_monotone() {
    for seed in 0..3 {
        let (x, _) = phantom_case(40 + seed, 32);
        let mask = make_random(32, 4, seed, Density::GaussianCenter).unwrap();
        let y = apply_forward(&x, &mask).unwrap();
        let out = recon_cs(
            &y,
            &CSConfig {
                lambda: 0.05,
                max_iters: 100,
                tol: 1e-12,
                levels: 3,
            },
        )
        .unwrap();
        assert!(out.objective.windows(2).all(|w| w[1] <= w[0]), "seed {seed}");
        assert!(out.objective.last().unwrap() < &out.objective[0]);
    }
}

#[test]
fn cs_reaches_the_long_run_fixed_point() {
    let x = small_phantom(41);
    let y = apply_forward(&x, &make_random(16, 4, 2, Density::GaussianCenter).unwrap()).unwrap();
    let cfg = CSConfig {
        lambda: 0.05,
        max_iters: 500,
        tol: 1e-10,
        levels: 2,
    };
    let fast = recon_cs(&y, &cfg).unwrap();
    // Slow oracle: plain proximal gradient for ten times the iterations.
    let haar = Haar::new(cfg.levels);
    let mut slow = recon_zero_filled(&y);
    for _ in 0..10 * cfg.max_iters {
        slow = prox_grad_step(&slow, &y, &cfg, &haar).unwrap();
    }
    let f_fast = cs_objective(&fast.image, &y, &cfg).unwrap();
    let f_slow = cs_objective(&slow, &y, &cfg).unwrap();
    assert!((f_fast - f_slow).abs() <= 0.01 * f_slow, "{f_fast} vs {f_slow}");
    assert!(optimality_residual(&fast.image, &y, &cfg).unwrap() < 1e-3);
    assert!(optimality_residual(&slow, &y, &cfg).unwrap() < 1e-3);
}

#[test]
fn cs_flags_an_exhausted_budget() {
    let x = small_phantom(42);
    let y = apply_forward(&x, &make_random(16, 4, 2, Density::Uniform).unwrap()).unwrap();
    let out = recon_cs(
        &y,
        &CSConfig {
            lambda: 0.05,
            max_iters: 2,
            tol: 1e-14,
            levels: 2,
        },
    )
    .unwrap();
    assert!(!out.converged);
    assert_eq!(out.iterations, 2);
    assert!(CSConfig { lambda: 0.0, ..CSConfig::default() }.validate().is_err());
    assert!(CSConfig { tol: 0.0, ..CSConfig::default() }.validate().is_err());
}

#[test]
fn tuned_cs_beats_zero_filling_and_an_untrained_net() {
    let size = 32;
    let mask = make_random(size, 8, 11, Density::GaussianCenter).unwrap();
    let cases: Vec<(ComplexImage, Vec<bool>, KSpaceData)> = (0..6)
        .map(|i| {
            let (x, s) = phantom_case(60 + i, size);
            let y = apply_forward(&x, &mask).unwrap();
            (x, s, y)
        })
        .collect();
    let (val, test) = cases.split_at(3);
    let tune: Vec<TuneCase<'_>> = val
        .iter()
        .map(|(x, s, y)| TuneCase {
            y,
            truth: x,
            support: s,
        })
        .collect();
    let tuning = tune_lambda(&tune, &[0.003, 0.01, 0.03, 0.1], &CSConfig::default()).unwrap();
    let cfg = CSConfig {
        lambda: tuning.best,
        ..CSConfig::default()
    };
    let net = direct_net(3);
    let mean = |f: &dyn Fn(&KSpaceData) -> ComplexImage| {
        test.iter().map(|(x, s, y)| psnr(&x.magnitude(), &f(y).magnitude(), s).unwrap()).sum::<f64>() / 3.0
    };
    let zf = mean(&|y| recon_zero_filled(y));
    let cs = mean(&|y| recon_cs(y, &cfg).unwrap().image);
    let unet = mean(&|y| recon_unet(y, &net).unwrap());
    assert!(cs > zf, "cs {cs} zf {zf}");
    assert!(unet < cs, "unet {unet} cs {cs}");
}

#[test]
fn direct_mapping_is_not_data_consistent() {
    let (x, _) = phantom_case(70, 32);
    let y = apply_forward(&x, &make_random(32, 4, 1, Density::Uniform).unwrap()).unwrap();
    let out = recon_unet(&y, &direct_net(9)).unwrap();
    let k = fft2c(&out);
    let dev = y
        .mask()
        .lines()
        .into_iter()
        .flat_map(|r| k.row(r).iter().zip(y.kspace().row(r)).map(|(a, b)| (a - b).norm()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    assert!(dev > 1e-3);
    assert!(recon_unet(&y, &VectorFieldNet::init(&NetConfig::default(), 0).unwrap()).is_err());
}

fn flow_net(in_channels: usize) -> VectorFieldNet {
    let cfg = NetConfig {
        in_channels,
        out_channels: 2,
        base_features: 4,
        depth: 1,
        embed_dim: 4,
        meta_len: RECON_META_LEN,
        has_time: true,
        time_steps: 10,
    };
    VectorFieldNet::init(&cfg, 4).unwrap()
}

#[test]
fn every_registered_method_runs_through_one_interface() {
    let (x, _) = phantom_case(71, 32);
    let prior = x.magnitude_image();
    let y = apply_forward(&x, &make_random(32, 8, 2, Density::Uniform).unwrap()).unwrap();
    let (n4, n5, d) = (flow_net(4), flow_net(5), direct_net(1));
    let sched = FlowSchedule::new(4, 0).unwrap();
    let methods: Vec<Box<dyn Reconstructor + '_>> = vec![
        Box::new(ZeroFilled),
        Box::new(Cs {
            config: CSConfig::default(),
        }),
        Box::new(Unet { net: &d }),
        Box::new(FlowRecon::new(Method::FlowNoPrior, &n4, sched).unwrap()),
        Box::new(FlowRecon::new(Method::FlowDirectPrior, &n5, sched).unwrap()),
        Box::new(FlowRecon::new(Method::FlowPredPrior, &n5, sched).unwrap()),
    ];
    let req = ReconRequest {
        y: &y,
        prior: Some(&prior),
        seed: 3,
    };
    for m in &methods {
        let out = m.reconstruct(&req).unwrap();
        assert_eq!(out.shape(), (32, 32));
        if m.method().is_flow() {
            assert!(y.consistency_error(&out) < 1e-6, "{}", m.method());
        }
    }
    let no_prior = ReconRequest { prior: None, ..req };
    assert!(methods[4].reconstruct(&no_prior).is_err());
    assert!(FlowRecon::new(Method::Cs, &n4, sched).is_err());
}

#[test]
fn direct_prior_output_matches_the_measurements() {
    let (x, _) = phantom_case(72, 32);
    for r in [4, 8, 12] {
        let y = apply_forward(&x, &make_random(32, r, 2, Density::GaussianCenter).unwrap()).unwrap();
        let out = recon_direct_prior(&y, &x.magnitude_image(), &flow_net(5), &FlowSchedule::new(5, 1).unwrap()).unwrap();
        assert!(y.consistency_error(&out) < 1e-6);
        assert!(data_consistency(&out, &y).unwrap().max_abs_diff(&out) < 1e-10);
    }
}

#[test]
fn recon_conditions_layout() {
    let x = random_image(8, 8, 1);
    let y = apply_forward(&x, &make_random(8, 4, 0, Density::Uniform).unwrap()).unwrap();
    let c = recon_conditions(&y, None).unwrap();
    assert_eq!(c.channel_count(), 2);
    assert_eq!(c.meta(), vec![0.25, 0.0]);
    let p = x.magnitude_image();
    let c = recon_conditions(&y, Some(&p)).unwrap();
    assert_eq!(c.channel_count(), 3);
    assert_eq!(c.meta(), vec![0.25, 1.0]);
    assert!(recon_conditions(&y, Some(&RealImage::zeros(4, 4))).is_err());
}
