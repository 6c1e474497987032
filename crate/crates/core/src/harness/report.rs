use std::fmt::Write as _;

use super::config::{ExperimentConfig, MaskKind};
use super::evaluate::{Evaluation, EVAL_DIR};
use crate::error::{Error, Result};
use crate::metrics::format_table;

/// Notes on how this run departs from a full-scale study; printed at the
/// top of every report.
pub fn report_header(cfg: &ExperimentConfig) -> String {
    let g = &cfg.generate;
    let n = &cfg.nets;
    let mask = match cfg.mask.kind {
        MaskKind::Greedy => "greedy line-by-line design on training images (one mask per R, no calibration lines)",
        MaskKind::Uniform => "equispaced lines",
        MaskKind::Random => "uniform random lines",
        MaskKind::GaussianRandom => "centre-weighted random lines",
    };
    let mut out = String::new();
    let _ = writeln!(out, "# Reconstruction report ({:?} task)", cfg.task);
    let _ = writeln!(out);
    let _ = writeln!(out, "Desk-scale run. Absolute numbers are not comparable to clinical-scale studies:");
    let _ = writeln!(
        out,
        "- synthetic phantoms of {0}x{0} pixels; {1} training / {2} validation / {3} test images",
        g.size, g.n_train, g.n_val, g.n_test
    );
    let _ = writeln!(
        out,
        "- networks: prediction {}x{} features, reconstruction {}x{}, trained {} / {} epochs of {} steps",
        n.prediction.base_features,
        n.prediction.depth,
        n.reconstruction.base_features,
        n.reconstruction.depth,
        n.prediction.train.epochs,
        n.reconstruction.train.epochs,
        n.reconstruction.train.steps_per_epoch
    );
    let _ = writeln!(
        out,
        "- flow: trained with {} steps, sampled with {}",
        cfg.flow.train_steps, cfg.flow.sample_steps
    );
    let _ = writeln!(out, "- sampling: {mask}");
    let _ = writeln!(out, "- baselines: zero-filled, wavelet CS, single-pass residual net; no variational network");
    let _ = writeln!(
        out,
        "- priors {} registered to the light reconstruction{}",
        if cfg.register { "are" } else { "are not" },
        if cfg.z_search { " with through-plane search" } else { "" }
    );
    if let Some(c) = cfg.coils {
        let _ = writeln!(out, "- measurements from {c} simulated coils, combined before reconstruction");
    }
    let _ = writeln!(out, "- metrics on magnitude images inside the support mask; std is the population std");
    out
}

/// Renders the evaluation stored under the output directory.
pub fn render_report(cfg: &ExperimentConfig) -> Result<String> {
    let path = cfg.output.join(EVAL_DIR).join("results.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let eval: Evaluation = serde_json::from_str(&text)?;
    let mut out = report_header(cfg);
    let _ = writeln!(out);
    let _ = writeln!(out, "## Reconstruction (mean ± std over {} test images)", count_images(&eval));
    let _ = writeln!(out);
    out.push_str(&format_table(&eval.rows));
    if !eval.prediction_rows.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "## Prediction module");
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<10}{:>18}{:>18}", "conditions", "PSNR", "SSIM");
        for r in &eval.prediction_rows {
            let _ = writeln!(
                out,
                "{:<10}{:>18}{:>18}",
                r.source,
                format!("{:.1} ± {:.1}", r.psnr_mean, r.psnr_std),
                format!("{:.3} ± {:.3}", r.ssim_mean, r.ssim_std)
            );
        }
    }
    if !eval.gains.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "## Pred-prior gain over direct prior by change magnitude");
        let _ = writeln!(out);
        for g in &eval.gains {
            let _ = writeln!(
                out,
                "x{:<4} high change: {:+.2} dB (n = {}), low change: {:+.2} dB (n = {})",
                g.acceleration, g.high_gain, g.n_high, g.low_gain, g.n_low
            );
        }
    }
    if let Some(t) = &eval.cs_tuning {
        let _ = writeln!(out);
        let _ = writeln!(out, "CS weight chosen on validation images: {}", t.best);
    }
    Ok(out)
}

fn count_images(eval: &Evaluation) -> usize {
    eval.rows.iter().map(|r| r.n_images).max().unwrap_or(0)
}
