use std::sync::OnceLock;

use predrecon::baselines::{CSConfig, Method};
use predrecon::harness::{
    design_masks, evaluate, file_hash, generate_corpus, load_masks, load_task_items, measure, run_pipeline, train_role,
    EvalOptions, ExperimentConfig, MaskKind, Models, Pipeline, PipelineRequest, PriorMode, Role, TaskItem,
};
use predrecon::kspace::CartesianMask;
use predrecon::netcore::{checkpoint, TrainConfig};
use predrecon::phantom::{Corpus, Split, Task};
use predrecon::register::RigidTransform2D;
use predrecon::Error;

struct Fixture {
    _dir: tempfile::TempDir,
    cfg: ExperimentConfig,
    test: Vec<TaskItem>,
    models: Models,
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        steps_per_epoch: 2,
        batch_size: 2,
        lr: 1e-3,
        seed: 0,
    }
}

/// A 32x32 corpus of `task` with masks and briefly trained nets.
fn build(task: Task) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        task,
        corpus: dir.path().join("corpus"),
        output: dir.path().join("run"),
        accelerations: vec![4, 8],
        ..ExperimentConfig::default()
    };
    cfg.generate.size = 32;
    cfg.generate.n_train = 6;
    cfg.generate.n_val = 2;
    cfg.generate.n_test = 3;
    for rc in [
        &mut cfg.nets.prediction,
        &mut cfg.nets.reconstruction,
        &mut cfg.nets.lightrecon,
        &mut cfg.nets.unet,
    ] {
        rc.base_features = 4;
        rc.depth = 2;
        rc.train = tiny_train();
    }
    cfg.nets.val_samples = 2;
    cfg.flow.train_steps = 10;
    cfg.flow.sample_steps = 4;
    cfg.mask.design_sample = 4;
    cfg.cs.grid = vec![0.01];
    cfg.cs.cases = 1;
    generate_corpus(&cfg).unwrap();
    let corpus = Corpus::load(&cfg.corpus).unwrap();
    let train = load_task_items(&cfg, &corpus, Split::Train).unwrap();
    design_masks(&cfg, &train, None).unwrap();
    for role in Role::ALL {
        train_role(role, &cfg, &corpus).unwrap();
    }
    let test = load_task_items(&cfg, &corpus, Split::Test).unwrap();
    let models = Models::load(&cfg.output).unwrap();
    Fixture {
        _dir: dir,
        cfg,
        test,
        models,
    }
}

fn longitudinal() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| build(Task::Longitudinal))
}

fn flair() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| build(Task::Flair))
}

fn pipeline(f: &Fixture) -> Pipeline<'_> {
    Pipeline {
        models: &f.models,
        register: true,
        z_search: false,
        sample_steps: f.cfg.flow.sample_steps,
        cs: CSConfig::default(),
    }
}

fn request<'a>(item: &'a TaskItem, mask: &'a CartesianMask, mode: PriorMode) -> PipelineRequest<'a> {
    PipelineRequest {
        item,
        mask,
        mode,
        misalign: None,
        coils: None,
        seed: 5,
    }
}

#[test]
fn full_sampling_returns_the_truth_for_every_mode() {
    let f = longitudinal();
    let item = &f.test[0];
    let full = CartesianMask::full(32);
    for mode in [PriorMode::Predicted, PriorMode::Direct] {
        let out = run_pipeline(&pipeline(f), &request(item, &full, mode)).unwrap();
        let err = out.image.max_abs_diff(&item.truth.to_complex().unwrap());
        assert!(err < 1e-6, "{mode:?}: {err}");
    }
}

#[test]
fn reconstructions_keep_the_measured_lines() {
    let f = flair();
    let masks = load_masks(&f.cfg.output, &f.cfg.accelerations).unwrap();
    for &r in &f.cfg.accelerations {
        for mode in [PriorMode::Predicted, PriorMode::Direct] {
            let out = run_pipeline(&pipeline(f), &request(&f.test[1], masks.get(r).unwrap(), mode)).unwrap();
            assert!(out.consistency_error < 1e-6, "R{r} {mode:?}: {}", out.consistency_error);
        }
    }
}

#[test]
fn premisaligned_prior_is_registered_back() {
    let f = longitudinal();
    let masks = load_masks(&f.cfg.output, &[4]).unwrap();
    let mask = masks.get(4).unwrap();
    let item = &f.test[2];
    let p = pipeline(f);
    let aligned = run_pipeline(&p, &request(item, mask, PriorMode::Direct)).unwrap();
    let mut req = request(item, mask, PriorMode::Direct);
    req.misalign = Some(RigidTransform2D::new(4.0, 3.0, 3.0));
    let moved = run_pipeline(&p, &req).unwrap();
    assert!(
        (aligned.psnr - moved.psnr).abs() <= 0.5,
        "aligned {:.2} dB vs pre-misaligned {:.2} dB",
        aligned.psnr,
        moved.psnr
    );
    assert!(!moved.transform.is_identity());
}

#[test]
fn skip_prediction_feeds_the_raw_contrast() {
    // FLAIR-analog direct priors are another contrast, so nothing registers
    // them and they reach the reconstruction untouched.
    let f = flair();
    let masks = load_masks(&f.cfg.output, &[8]).unwrap();
    let item = &f.test[0];
    let out = run_pipeline(&pipeline(f), &request(item, masks.get(8).unwrap(), PriorMode::Direct)).unwrap();
    assert_eq!(out.prior, item.direct_prior);
    assert!(out.transform.is_identity());
}

#[test]
fn stage_errors_carry_their_stage() {
    let f = flair();
    let empty = Models::default();
    let p = Pipeline {
        models: &empty,
        ..pipeline(f)
    };
    let masks = load_masks(&f.cfg.output, &[4]).unwrap();
    let err = run_pipeline(&p, &request(&f.test[0], masks.get(4).unwrap(), PriorMode::Predicted)).unwrap_err();
    match err {
        Error::Stage { stage, source } => {
            assert_eq!(stage, "predict");
            assert!(matches!(*source, Error::MissingCheckpoint(ref r) if r == "prediction"));
        }
        other => panic!("untagged error {other}"),
    }
    let err = run_pipeline(&p, &request(&f.test[0], masks.get(4).unwrap(), PriorMode::Direct)).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "reconstruct", .. }), "{err}");
}

#[test]
fn coil_path_runs_without_retraining() {
    let f = flair();
    let masks = load_masks(&f.cfg.output, &[4]).unwrap();
    let mask = masks.get(4).unwrap();
    let item = &f.test[1];
    let single = measure(item, mask, None).unwrap();
    let coils = measure(item, mask, Some(4)).unwrap();
    assert_eq!(coils.mask(), single.mask());
    assert!(coils.is_finite() && coils.kspace().norm() > 0.0);
    let mut req = request(item, mask, PriorMode::Direct);
    req.coils = Some(4);
    let out = run_pipeline(&pipeline(f), &req).unwrap();
    assert!(out.consistency_error < 1e-6);
}

#[test]
fn through_plane_search_stays_in_range() {
    let f = longitudinal();
    let masks = load_masks(&f.cfg.output, &[4]).unwrap();
    let p = Pipeline {
        z_search: true,
        ..pipeline(f)
    };
    for item in &f.test {
        let out = run_pipeline(&p, &request(item, masks.get(4).unwrap(), PriorMode::Direct)).unwrap();
        assert!((-5..=5).contains(&out.z_shift));
    }
}

#[test]
fn checkpoints_record_the_masks_they_were_trained_on() {
    let f = flair();
    let masks = load_masks(&f.cfg.output, &f.cfg.accelerations).unwrap();
    let hashes = serde_json::to_value(masks.hashes()).unwrap();
    let manifest = file_hash(&f.cfg.corpus.join("manifest.json")).unwrap();
    for role in Role::ALL {
        let (_, meta) = checkpoint::load(&role.checkpoint_path(&f.cfg.output)).unwrap();
        assert_eq!(meta.extra["role"], role.name());
        assert_eq!(meta.extra["corpus_manifest"], manifest.as_str());
        if role != Role::Prediction {
            assert_eq!(meta.extra["masks"], hashes, "{role}");
        }
    }
}

#[test]
fn evaluation_manifest_closes_over_its_artifacts() {
    let f = longitudinal();
    let mut cfg = f.cfg.clone();
    cfg.methods = vec![Method::ZeroFilled, Method::FlowDirectPrior, Method::FlowPredPrior];
    let eval = evaluate(&cfg, &EvalOptions::default()).unwrap();
    let m = &eval.manifest;
    for (name, hash) in &m.outputs {
        assert_eq!(hash, &file_hash(&cfg.output.join("eval").join(name)).unwrap(), "{name}");
    }
    for (role, hash) in &m.checkpoints {
        let role: Role = role.parse().unwrap();
        assert_eq!(hash, &file_hash(&role.checkpoint_path(&cfg.output)).unwrap());
    }
    assert_eq!(m.masks, load_masks(&cfg.output, &cfg.accelerations).unwrap().hashes());
    // Longitudinal runs split the pred-over-direct gain by change magnitude.
    assert_eq!(eval.gains.len(), cfg.accelerations.len());
    assert!(eval.images.iter().all(|r| r.change_magnitude.is_some()));
}

#[test]
fn mask_kinds_hit_the_budget() {
    let f = flair();
    let corpus = Corpus::load(&f.cfg.corpus).unwrap();
    let train = load_task_items(&f.cfg, &corpus, Split::Train).unwrap();
    for kind in [MaskKind::Uniform, MaskKind::Random, MaskKind::GaussianRandom, MaskKind::Greedy] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = f.cfg.clone();
        cfg.output = dir.path().to_path_buf();
        cfg.mask.kind = kind;
        let set = design_masks(&cfg, &train, None).unwrap();
        assert_eq!(set.get(4).unwrap().count(), 8, "{kind:?}");
        assert_eq!(set.get(8).unwrap().count(), 4, "{kind:?}");
        assert_eq!(load_masks(dir.path(), &[4, 8]).unwrap().hashes(), set.hashes());
    }
}
