use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::data::{Combo, TaskItem};
use super::masks::{load_masks, MaskSet};
use super::pipeline::{measure, AlignedPrior, Models, Pipeline};
use super::roles::{load_task_items, Role};
use super::{derive_seed, file_hash, write_json, write_text};
use crate::baselines::{tune_lambda, CSConfig, LambdaTuning, Method, TuneCase};
use crate::error::{Error, Result};
use crate::kspace::{KSpaceData, RealImage};
use crate::metrics::{aggregate, format_table, mean_std, psnr, ssim, to_csv, ImageScore, MetricsRow};
use crate::phantom::{slice_stack, Corpus, Split};
use crate::register::Z_SEARCH;

/// Acceleration at which `--assert-directional` compares pred-prior and
/// no-prior reconstructions.
pub const DIRECTIONAL_R: usize = 8;
/// Change-magnitude thresholds of the longitudinal subsets.
pub const HIGH_CHANGE: f64 = 0.5;
pub const LOW_CHANGE: f64 = 0.1;

const PRED_STREAM: u64 = 0x7072_6564;
const RECON_STREAM: u64 = 0x7265_636f;

pub const EVAL_DIR: &str = "eval";

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Fail the run when mean PSNR of flow-predprior falls below
    /// flow-noprior at [`DIRECTIONAL_R`].
    pub assert_directional: bool,
}

/// One reconstruction of one test image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub method: Method,
    pub acceleration: usize,
    pub image_id: String,
    pub psnr: f64,
    pub ssim: f64,
    /// Relative k-space deviation from the measurement on sampled lines.
    pub consistency: f64,
    pub change_magnitude: Option<f64>,
}

/// A prediction-module output scored against the prediction target.
/// `source` is a condition combination, or `direct` for the raw direct
/// prior used as the prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionScore {
    pub source: String,
    pub image_id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub source: String,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub n_images: usize,
}

/// Mean PSNR gain of pred-prior over direct-prior on the high- and
/// low-change subsets at one acceleration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalGain {
    pub acceleration: usize,
    pub high_gain: f64,
    pub n_high: usize,
    pub low_gain: f64,
    pub n_low: usize,
}

/// Estimated prior transform of one (image, R, prior) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRow {
    pub image_id: String,
    pub acceleration: usize,
    pub prior: String,
    pub theta_deg: f64,
    pub dx_px: f64,
    pub dy_px: f64,
    pub z_shift: i32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub corpus_manifest: Option<String>,
    pub checkpoints: BTreeMap<String, String>,
    pub masks: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub cs_lambda: Option<f64>,
    pub threads: usize,
    pub timings: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Evaluation {
    pub images: Vec<ImageRow>,
    pub rows: Vec<MetricsRow>,
    pub prediction: Vec<PredictionScore>,
    pub prediction_rows: Vec<PredictionRow>,
    pub gains: Vec<LongitudinalGain>,
    pub registration: Vec<RegistrationRow>,
    pub cs_tuning: Option<LambdaTuning>,
    pub manifest: RunManifest,
}

impl Evaluation {
    pub fn mean_psnr(&self, method: Method, r: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|row| row.method == method.name() && row.acceleration == r)
            .map(|row| row.psnr_mean)
    }

    pub fn prediction_mean(&self, source: &str) -> Option<f64> {
        self.prediction_rows.iter().find(|r| r.source == source).map(|r| r.psnr_mean)
    }
}

fn method_index(m: Method) -> u64 {
    Method::ALL.iter().position(|&x| x == m).expect("registered method") as u64
}

fn tune_cs(cfg: &ExperimentConfig, corpus: &Corpus, masks: &MaskSet) -> Result<LambdaTuning> {
    let val: Vec<TaskItem> = load_task_items(cfg, corpus, Split::Val)?
        .into_iter()
        .take(cfg.cs.cases.max(1))
        .collect();
    let mut data = Vec::new();
    for item in &val {
        for &r in &cfg.accelerations {
            data.push((measure(item, masks.get(r)?, cfg.coils)?, item.truth.to_complex()?, item));
        }
    }
    let cases: Vec<TuneCase<'_>> = data
        .iter()
        .map(|(y, x, item)| TuneCase {
            y,
            truth: x,
            support: &item.support,
        })
        .collect();
    tune_lambda(&cases, &cfg.cs.grid, &cfg.cs.base)
}

struct Prepared {
    y: KSpaceData,
    direct: Option<AlignedPrior>,
    pred: Option<AlignedPrior>,
}

fn score_prediction(source: &str, item: &TaskItem, img: &RealImage) -> Result<PredictionScore> {
    Ok(PredictionScore {
        source: source.into(),
        image_id: item.id.clone(),
        psnr: psnr(item.pred_target.data(), img.data(), &item.pred_support)?,
        ssim: ssim(item.pred_target.data(), img.data(), &item.pred_support, item.pred_target.shape())?,
    })
}

fn prediction_rows(scores: &[PredictionScore]) -> Vec<PredictionRow> {
    let mut order: Vec<&str> = Vec::new();
    for s in scores {
        if !order.contains(&s.source.as_str()) {
            order.push(&s.source);
        }
    }
    order
        .into_iter()
        .map(|src| {
            let sel: Vec<&PredictionScore> = scores.iter().filter(|s| s.source == src).collect();
            let (psnr_mean, psnr_std) = mean_std(&sel.iter().map(|s| s.psnr).collect::<Vec<_>>());
            let (ssim_mean, ssim_std) = mean_std(&sel.iter().map(|s| s.ssim).collect::<Vec<_>>());
            PredictionRow {
                source: src.into(),
                psnr_mean,
                psnr_std,
                ssim_mean,
                ssim_std,
                n_images: sel.len(),
            }
        })
        .collect()
}

fn longitudinal_gains(images: &[ImageRow], accelerations: &[usize]) -> Vec<LongitudinalGain> {
    let psnr_of = |m: Method, r: usize| -> BTreeMap<&str, (f64, f64)> {
        images
            .iter()
            .filter(|row| row.method == m && row.acceleration == r)
            .filter_map(|row| row.change_magnitude.map(|c| (row.image_id.as_str(), (row.psnr, c))))
            .collect()
    };
    accelerations
        .iter()
        .filter_map(|&r| {
            let (pred, direct) = (psnr_of(Method::FlowPredPrior, r), psnr_of(Method::FlowDirectPrior, r));
            if pred.is_empty() || direct.is_empty() {
                return None;
            }
            let gains = |keep: &dyn Fn(f64) -> bool| {
                let g: Vec<f64> = pred
                    .iter()
                    .filter(|(_, &(_, c))| keep(c))
                    .filter_map(|(id, &(p, _))| direct.get(id).map(|&(d, _)| p - d))
                    .collect();
                (if g.is_empty() { f64::NAN } else { mean_std(&g).0 }, g.len())
            };
            let (high_gain, n_high) = gains(&|c| c >= HIGH_CHANGE);
            let (low_gain, n_low) = gains(&|c| c <= LOW_CHANGE);
            Some(LongitudinalGain {
                acceleration: r,
                high_gain,
                n_high,
                low_gain,
                n_low,
            })
        })
        .collect()
}

fn per_image_csv(rows: &[ImageRow]) -> String {
    let mut out = String::from("method,R,image_id,psnr,ssim,consistency,change_magnitude\n");
    for r in rows {
        let change = r.change_magnitude.map_or(String::new(), |c| format!("{c:.6}"));
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.3e},{}",
            r.method, r.acceleration, r.image_id, r.psnr, r.ssim, r.consistency, change
        );
    }
    out
}

fn prediction_csv(rows: &[PredictionScore]) -> String {
    let mut out = String::from("source,image_id,psnr,ssim\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6},{:.6}", r.source, r.image_id, r.psnr, r.ssim);
    }
    out
}

fn prediction_metrics_csv(rows: &[PredictionRow]) -> String {
    let mut out = String::from("source,psnr_mean,psnr_std,ssim_mean,ssim_std,n\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            r.source, r.psnr_mean, r.psnr_std, r.ssim_mean, r.ssim_std, r.n_images
        );
    }
    out
}

fn gains_csv(rows: &[LongitudinalGain]) -> String {
    let mut out = String::from("R,high_gain,n_high,low_gain,n_low\n");
    for g in rows {
        let _ = writeln!(out, "{},{:.6},{},{:.6},{}", g.acceleration, g.high_gain, g.n_high, g.low_gain, g.n_low);
    }
    out
}

fn registration_csv(rows: &[RegistrationRow]) -> String {
    let mut out = String::from("image_id,R,prior,theta_deg,dx_px,dy_px,z_shift\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{}",
            r.image_id, r.acceleration, r.prior, r.theta_deg, r.dx_px, r.dy_px, r.z_shift
        );
    }
    out
}

/// Sweeps the configured methods over every acceleration and test image and
/// writes `eval/` under the output directory: per-image and aggregate CSVs,
/// the text table, prediction scores, registration estimates, longitudinal
/// gains and the run manifest. Every CSV is a pure function of the corpus,
/// checkpoints, masks and config.
pub fn evaluate(cfg: &ExperimentConfig, opts: &EvalOptions) -> Result<Evaluation> {
    cfg.validate()?;
    let mut timings = BTreeMap::new();
    let total = Instant::now();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        timings.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let corpus = Corpus::load(&cfg.corpus)?;
    let mut test = load_task_items(cfg, &corpus, Split::Test)?;
    if let Some(n) = cfg.eval_limit {
        test.truncate(n);
    }
    let models = Models::load(&cfg.output)?;
    models.check(&cfg.methods)?;
    let masks = load_masks(&cfg.output, &cfg.accelerations)?;
    lap("load", &mut timings);

    let cs_tuning = if cfg.methods.contains(&Method::Cs) {
        Some(tune_cs(cfg, &corpus, &masks)?)
    } else {
        None
    };
    let cs = CSConfig {
        lambda: cs_tuning.as_ref().map_or(cfg.cs.base.lambda, |t| t.best),
        ..cfg.cs.base.clone()
    };
    lap("cs_tuning", &mut timings);

    let pipe = Pipeline {
        models: &models,
        register: cfg.register,
        z_search: cfg.z_search,
        sample_steps: cfg.flow.sample_steps,
        cs,
    };

    // Prediction stage: every condition combination per test image.
    let predictions: Vec<RealImage> = if models.get(Role::Prediction).is_some() {
        let jobs: Vec<(usize, usize)> = (0..test.len()).flat_map(|i| (0..Combo::ALL.len()).map(move |c| (i, c))).collect();
        jobs.par_iter()
            .map(|&(i, c)| pipe.predict(&test[i], Combo::ALL[c], derive_seed(cfg.seed, &[PRED_STREAM, i as u64, c as u64])))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let both = Combo::ALL.iter().position(|&c| c == Combo::Both).expect("both is a combination");
    let mut prediction = Vec::new();
    if !predictions.is_empty() {
        for (c, combo) in Combo::ALL.iter().enumerate() {
            for (i, item) in test.iter().enumerate() {
                prediction.push(score_prediction(combo.name(), item, &predictions[i * Combo::ALL.len() + c])?);
            }
        }
        for item in &test {
            prediction.push(score_prediction("direct", item, &item.direct_prior)?);
        }
    }
    lap("prediction", &mut timings);

    // Measurements, light recon and aligned priors per (R, image).
    let want_direct = cfg.methods.contains(&Method::FlowDirectPrior);
    let want_pred = cfg.methods.contains(&Method::FlowPredPrior);
    let n_test = test.len();
    let cells: Vec<(usize, usize)> = (0..cfg.accelerations.len())
        .flat_map(|ri| (0..n_test).map(move |i| (ri, i)))
        .collect();
    let prepared: Vec<Prepared> = cells
        .par_iter()
        .map(|&(ri, i)| {
            let item = &test[i];
            let mask = masks.get(cfg.accelerations[ri])?;
            let y = measure(item, mask, cfg.coils).map_err(|e| e.at_stage("measure"))?;
            let light = if want_direct || want_pred { Some(pipe.light(&y)?) } else { None };
            let direct = match (&light, want_direct) {
                (Some(l), true) => {
                    let stack = if cfg.z_search && item.direct_same_contrast {
                        Some(slice_stack(&item.spec, item.direct_contrast, Z_SEARCH as usize).map_err(|e| e.at_stage("align"))?)
                    } else {
                        None
                    };
                    Some(pipe.align(&item.direct_prior, item.direct_same_contrast, stack.as_deref(), l, mask)?)
                }
                _ => None,
            };
            let pred = match (&light, want_pred) {
                (Some(l), true) => Some(pipe.align(&predictions[i * Combo::ALL.len() + both], true, None, l, mask)?),
                _ => None,
            };
            Ok(Prepared { y, direct, pred })
        })
        .collect::<Result<_>>()?;
    let mut registration = Vec::new();
    for (&(ri, i), p) in cells.iter().zip(&prepared) {
        for (name, a) in [("direct", &p.direct), ("pred", &p.pred)] {
            if let Some(a) = a {
                registration.push(RegistrationRow {
                    image_id: test[i].id.clone(),
                    acceleration: cfg.accelerations[ri],
                    prior: name.into(),
                    theta_deg: a.transform.theta_deg,
                    dx_px: a.transform.dx_px,
                    dy_px: a.transform.dy_px,
                    z_shift: a.z_shift,
                });
            }
        }
    }
    lap("prepare", &mut timings);

    // The sweep: independent (R, method, image) cells.
    let n_test = test.len();
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.accelerations.len())
        .flat_map(|ri| (0..cfg.methods.len()).flat_map(move |mi| (0..n_test).map(move |i| (ri, mi, i))))
        .collect();
    let images: Vec<ImageRow> = jobs
        .par_iter()
        .map(|&(ri, mi, i)| {
            let (r, method, item) = (cfg.accelerations[ri], cfg.methods[mi], &test[i]);
            let p = &prepared[ri * test.len() + i];
            let prior = match method {
                Method::FlowDirectPrior => p.direct.as_ref().map(|a| &a.image),
                Method::FlowPredPrior => p.pred.as_ref().map(|a| &a.image),
                _ => None,
            };
            let seed = derive_seed(cfg.seed, &[RECON_STREAM, i as u64, r as u64, method_index(method)]);
            let image = pipe.reconstruct(method, &p.y, prior, seed)?;
            let out = image.magnitude();
            Ok(ImageRow {
                method,
                acceleration: r,
                image_id: item.id.clone(),
                psnr: psnr(item.truth.data(), &out, &item.support)?,
                ssim: ssim(item.truth.data(), &out, &item.support, item.truth.shape())?,
                consistency: p.y.consistency_error(&image),
                change_magnitude: item.change_magnitude,
            })
        })
        .collect::<Result<_>>()?;
    lap("reconstruct", &mut timings);

    let scores: Vec<ImageScore> = images
        .iter()
        .map(|r| ImageScore {
            method: r.method.name().into(),
            acceleration: r.acceleration,
            image_id: r.image_id.clone(),
            psnr: r.psnr,
            ssim: r.ssim,
        })
        .collect();
    let rows = aggregate(&scores)?;
    let prediction_rows = prediction_rows(&prediction);
    let gains = longitudinal_gains(&images, &cfg.accelerations);

    let dir = cfg.output.join(EVAL_DIR);
    let mut files: Vec<(&str, String)> = vec![
        ("per_image.csv", per_image_csv(&images)),
        ("metrics.csv", to_csv(&rows)),
        ("table.txt", format_table(&rows)),
        ("registration.csv", registration_csv(&registration)),
    ];
    if !prediction.is_empty() {
        files.push(("prediction.csv", prediction_csv(&prediction)));
        files.push(("prediction_metrics.csv", prediction_metrics_csv(&prediction_rows)));
    }
    if !gains.is_empty() {
        files.push(("gains.csv", gains_csv(&gains)));
    }
    let mut outputs = BTreeMap::new();
    for (name, text) in &files {
        let path = dir.join(name);
        write_text(&path, text)?;
        outputs.insert(name.to_string(), file_hash(&path)?);
    }

    let mut checkpoints = BTreeMap::new();
    for role in Role::ALL {
        let path = role.checkpoint_path(&cfg.output);
        if path.exists() {
            checkpoints.insert(role.name().to_string(), file_hash(&path)?);
        }
    }
    let corpus_manifest = Some(file_hash(&cfg.corpus.join("manifest.json"))?);
    timings.insert("total".into(), total.elapsed().as_secs_f64());
    let eval = Evaluation {
        images,
        rows,
        prediction,
        prediction_rows,
        gains,
        registration,
        manifest: RunManifest {
            config: cfg.clone(),
            corpus_manifest,
            checkpoints,
            masks: masks.hashes(),
            outputs,
            cs_lambda: cs_tuning.as_ref().map(|t| t.best),
            threads: rayon::current_num_threads(),
            timings,
        },
        cs_tuning,
    };
    write_json(&dir.join("manifest.json"), &eval.manifest)?;
    write_json(&dir.join("results.json"), &eval)?;

    if opts.assert_directional {
        let pred = eval.mean_psnr(Method::FlowPredPrior, DIRECTIONAL_R);
        let base = eval.mean_psnr(Method::FlowNoPrior, DIRECTIONAL_R);
        match (pred, base) {
            (Some(p), Some(b)) if p >= b => {}
            (Some(p), Some(b)) => {
                return Err(Error::Check(format!(
                    "mean PSNR of flow-predprior ({p:.3} dB) is below flow-noprior ({b:.3} dB) at R = {DIRECTIONAL_R}"
                )))
            }
            _ => {
                return Err(Error::Check(format!(
                    "directional check needs flow-predprior and flow-noprior at R = {DIRECTIONAL_R}"
                )))
            }
        }
    }
    Ok(eval)
}
