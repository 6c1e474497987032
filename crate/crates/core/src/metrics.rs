//! Masked PSNR / SSIM and mean ± std aggregation.
//!
//! Both metrics take real images; callers pass magnitudes. The peak and the
//! SSIM dynamic range are the maximum of `|reference|` inside the mask.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_inputs(reference: &[f64], test: &[f64], mask: &[bool]) -> Result<()> {
    if reference.len() != test.len() || reference.len() != mask.len() {
        return Err(Error::Shape(format!(
            "reference {}, test {}, mask {}",
            reference.len(),
            test.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument("empty metric mask".into()));
    }
    Ok(())
}

fn masked_peak(reference: &[f64], mask: &[bool]) -> f64 {
    reference
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| v.abs())
        .fold(0.0, f64::max)
}

/// `10 log10(peak^2 / MSE)` over the mask. Returns `+inf` when the images agree exactly.
pub fn psnr(reference: &[f64], test: &[f64], mask: &[bool]) -> Result<f64> {
    check_inputs(reference, test, mask)?;
    let (mut sse, mut n) = (0.0, 0usize);
    for ((r, t), &m) in reference.iter().zip(test).zip(mask) {
        if m {
            sse += (r - t) * (r - t);
            n += 1;
        }
    }
    let mse = sse / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = masked_peak(reference, mask);
    Ok(10.0 * (peak * peak / mse).log10())
}

pub(crate) fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sums over every fully-contained window.
/// Output is indexed by window top-left, `(h - 10) x (w - 10)`.
fn filter_valid(img: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut horiz = vec![0.0; h * ow];
    for r in 0..h {
        let row = &img[r * w..(r + 1) * w];
        for c in 0..ow {
            horiz[r * ow + c] = g.iter().zip(&row[c..c + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for (i, gi) in g.iter().enumerate() {
            let src = &horiz[(r + i) * ow..(r + i + 1) * ow];
            for (o, s) in out[r * ow..(r + 1) * ow].iter_mut().zip(src) {
                *o += gi * s;
            }
        }
    }
    out
}

/// Windowed SSIM (Gaussian 11x11, sigma 1.5), averaged over windows that lie
/// fully inside the image and whose center pixel is inside the mask.
pub fn ssim(reference: &[f64], test: &[f64], mask: &[bool], shape: (usize, usize)) -> Result<f64> {
    check_inputs(reference, test, mask)?;
    let (h, w) = shape;
    if h * w != reference.len() {
        return Err(Error::Shape(format!("shape {h}x{w} vs {} pixels", reference.len())));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let range = masked_peak(reference, mask);
    if range == 0.0 {
        return Err(Error::Degenerate("reference is zero inside the mask".into()));
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let g = gaussian_window();
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> {
        reference.iter().zip(test).map(|(&a, &b)| f(a, b)).collect()
    };
    let mu_x = filter_valid(reference, h, w, &g);
    let mu_y = filter_valid(test, h, w, &g);
    let xx = filter_valid(&prod(|a, _| a * a), h, w, &g);
    let yy = filter_valid(&prod(|_, b| b * b), h, w, &g);
    let xy = filter_valid(&prod(|a, b| a * b), h, w, &g);
    let half = SSIM_WINDOW / 2;
    let ow = w - SSIM_WINDOW + 1;
    let (mut total, mut n) = (0.0, 0usize);
    for r in 0..h - SSIM_WINDOW + 1 {
        for c in 0..ow {
            if !mask[(r + half) * w + c + half] {
                continue;
            }
            let i = r * ow + c;
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cxy = xy[i] - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no SSIM window is centered inside the mask".into()));
    }
    Ok(total / n as f64)
}

/// One aggregated table row: a method at one acceleration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub acceleration: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub n_images: usize,
}

/// Per-image scores of one method at one acceleration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub method: String,
    pub acceleration: usize,
    pub image_id: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups scores by (method, R), preserving first-seen method order.
pub fn aggregate(scores: &[ImageScore]) -> Result<Vec<MetricsRow>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("nothing to aggregate".into()));
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<&ImageScore>> = BTreeMap::new();
    for s in scores {
        let mi = match order.iter().position(|m| *m == s.method) {
            Some(i) => i,
            None => {
                order.push(s.method.clone());
                order.len() - 1
            }
        };
        groups.entry((s.acceleration, mi)).or_default().push(s);
    }
    Ok(groups
        .into_iter()
        .map(|((r, mi), rows)| {
            let p: Vec<f64> = rows.iter().map(|s| s.psnr).collect();
            let q: Vec<f64> = rows.iter().map(|s| s.ssim).collect();
            let (psnr_mean, psnr_std) = mean_std(&p);
            let (ssim_mean, ssim_std) = mean_std(&q);
            MetricsRow {
                method: order[mi].clone(),
                acceleration: r,
                psnr_mean,
                psnr_std,
                ssim_mean,
                ssim_std,
                n_images: rows.len(),
            }
        })
        .collect())
}

pub const CSV_HEADER: &str = "method,R,psnr_mean,psnr_std,ssim_mean,ssim_std,n";

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{}",
            r.method, r.acceleration, r.psnr_mean, r.psnr_std, r.ssim_mean, r.ssim_std, r.n_images
        );
    }
    out
}

/// Text table: one PSNR row and one SSIM row per acceleration, one column per method.
pub fn format_table(rows: &[MetricsRow]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    let mut accels: Vec<usize> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if !accels.contains(&r.acceleration) {
            accels.push(r.acceleration);
        }
    }
    accels.sort_unstable();
    let find = |m: &str, a: usize| rows.iter().find(|r| r.method == m && r.acceleration == a);
    let mut out = format!("{:<14}{:<6}", "Acceleration", "");
    for m in &methods {
        let _ = write!(out, "{:>22}", m);
    }
    out.push('\n');
    for a in accels {
        for (metric, label) in [(0, "PSNR"), (1, "SSIM")] {
            let head = if metric == 0 { format!("x{a}") } else { String::new() };
            let _ = write!(out, "{:<14}{:<6}", head, label);
            for m in &methods {
                let cell = match find(m, a) {
                    Some(r) if metric == 0 => format!("{:.1} ± {:.1}", r.psnr_mean, r.psnr_std),
                    Some(r) => format!("{:.3} ± {:.3}", r.ssim_mean, r.ssim_std),
                    None => "-".into(),
                };
                let _ = write!(out, "{:>22}", cell);
            }
            out.push('\n');
        }
    }
    out
}
