//! Undersampling masks: uniform, random, and a greedy data-driven design.
//!
//! Every constructor emits exactly `floor(L / R)` lines; nothing is added
//! for calibration. The greedy design stands in for a jointly learned
//! sampling pattern: it is task-specific (one mask per `R` and corpus) and
//! fixed once built.

use std::str::FromStr;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kspace::{fft2c, ifft2c, CartesianMask, ComplexImage};
use crate::netcore::{ChannelStack, VectorFieldNet};

/// Number of corpus images the greedy design scores candidates on.
pub const DEFAULT_DESIGN_SAMPLE: usize = 16;

fn budget(line_count: usize, r: usize) -> Result<usize> {
    if r == 0 {
        return Err(Error::InvalidArgument("acceleration must be >= 1".into()));
    }
    if r > line_count {
        return Err(Error::InvalidArgument(format!("R = {r} exceeds the {line_count} available lines")));
    }
    Ok(line_count / r)
}

/// Every `R`-th line starting from the centre (DC) line, wrapping around.
pub fn make_uniform(line_count: usize, r: usize) -> Result<CartesianMask> {
    let n = budget(line_count, r)?;
    let c = line_count / 2;
    let lines: Vec<usize> = (0..n).map(|k| (c + k * r) % line_count).collect();
    CartesianMask::from_lines(line_count, &lines, r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Density {
    Uniform,
    /// Gaussian weight around the centre line, sigma = L / 6.
    GaussianCenter,
}

impl FromStr for Density {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Density::Uniform),
            "gaussian-center" => Ok(Density::GaussianCenter),
            other => Err(Error::InvalidArgument(format!("unknown density `{other}`"))),
        }
    }
}

/// Distinct lines drawn without replacement under `density`.
pub fn make_random(line_count: usize, r: usize, seed: u64, density: Density) -> Result<CartesianMask> {
    let n = budget(line_count, r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lines = match density {
        Density::Uniform => rand::seq::index::sample(&mut rng, line_count, n).into_vec(),
        Density::GaussianCenter => {
            let c = (line_count / 2) as f64;
            let sigma = line_count as f64 / 6.0;
            // A small floor keeps every line reachable at low R.
            let weight = |i: usize| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp() + 1e-3;
            rand::seq::index::sample_weighted(&mut rng, line_count, weight, n)
                .map_err(|e| Error::InvalidArgument(format!("line weights: {e}")))?
                .into_vec()
        }
    };
    CartesianMask::from_lines(line_count, &lines, r)
}

/// A cheap reconstructor the greedy design scores masks with. It sees the
/// full k-space of a corpus image and the current line selection, which
/// need not satisfy any acceleration budget.
pub trait ReconProxy: Sync {
    fn name(&self) -> String;
    fn recon(&self, kspace: &ComplexImage, selected: &[bool]) -> Result<ComplexImage>;
}

fn zero_fill(kspace: &ComplexImage, selected: &[bool]) -> ComplexImage {
    let mut k = kspace.clone();
    for (r, &keep) in selected.iter().enumerate() {
        if !keep {
            k.row_mut(r).fill(Complex64::default());
        }
    }
    ifft2c(&k)
}

/// The adjoint alone; the default before any network is trained.
pub struct ZeroFilledProxy;

impl ReconProxy for ZeroFilledProxy {
    fn name(&self) -> String {
        "zero-filled".into()
    }

    fn recon(&self, kspace: &ComplexImage, selected: &[bool]) -> Result<ComplexImage> {
        Ok(zero_fill(kspace, selected))
    }
}

/// Zero-filled recon refined by a residual light reconstruction net.
pub struct LightNetProxy<'a> {
    pub net: &'a VectorFieldNet,
    pub label: String,
}

impl ReconProxy for LightNetProxy<'_> {
    fn name(&self) -> String {
        format!("light-net:{}", self.label)
    }

    fn recon(&self, kspace: &ComplexImage, selected: &[bool]) -> Result<ComplexImage> {
        let zf = zero_fill(kspace, selected);
        let out = self.net.forward(&ChannelStack::from_complex(&zf), None, None)?;
        Ok(&zf + &out.to_complex()?)
    }
}

/// A corpus image the design is scored on, with an optional support over
/// which the error is measured.
#[derive(Clone, Debug)]
pub struct DesignImage {
    pub image: ComplexImage,
    pub support: Option<Vec<bool>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaskDesignReport {
    pub mask: CartesianMask,
    /// Lines in the order they were added.
    pub order: Vec<usize>,
    /// Error reduction from each added line; one entry per selected line.
    pub gains: Vec<f64>,
    /// Mean proxy error before any line and after each addition.
    pub error_history: Vec<f64>,
    pub corpus_fingerprint: String,
    pub proxy: String,
    pub note: String,
}

/// sha256 over the shapes and pixel values of the design images, in order.
pub fn corpus_fingerprint(sample: &[DesignImage]) -> String {
    let mut h = Sha256::new();
    for d in sample {
        let (r, c) = d.image.shape();
        h.update((r as u64).to_le_bytes());
        h.update((c as u64).to_le_bytes());
        for z in d.image.data() {
            h.update(z.re.to_le_bytes());
            h.update(z.im.to_le_bytes());
        }
        if let Some(s) = &d.support {
            h.update(s.iter().map(|&b| b as u8).collect::<Vec<_>>());
        }
    }
    hex::encode(h.finalize())
}

fn nmse(recon: &ComplexImage, truth: &ComplexImage, support: Option<&[bool]>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (a, b)) in recon.data().iter().zip(truth.data()).enumerate() {
        if support.is_none_or(|s| s[i]) {
            num += (a - b).norm_sqr();
            den += b.norm_sqr();
        }
    }
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

struct Prepared<'a> {
    kspace: ComplexImage,
    item: &'a DesignImage,
}

fn mean_error(prep: &[Prepared<'_>], proxy: &dyn ReconProxy, selected: &[bool]) -> Result<f64> {
    let errs = prep
        .iter()
        .map(|p| Ok(nmse(&proxy.recon(&p.kspace, selected)?, &p.item.image, p.item.support.as_deref())))
        .collect::<Result<Vec<f64>>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Seeds with the centre line, then repeatedly adds the line whose
/// inclusion lowers the mean proxy error most, until `floor(L / R)` lines.
/// Ties go to the line nearer the centre, then the lower index. Candidate
/// lines are scored in parallel; the selection does not depend on the
/// worker count.
pub fn greedy_design(sample: &[DesignImage], r: usize, proxy: &dyn ReconProxy) -> Result<MaskDesignReport> {
    let first = sample
        .first()
        .ok_or_else(|| Error::InvalidArgument("greedy design needs at least one image".into()))?;
    let (line_count, width) = first.image.shape();
    for d in sample {
        if d.image.shape() != (line_count, width) {
            return Err(Error::Shape("design images differ in shape".into()));
        }
        if d.support.as_ref().is_some_and(|s| s.len() != line_count * width) {
            return Err(Error::Shape("support does not match its image".into()));
        }
    }
    let n = budget(line_count, r)?;
    let prep: Vec<Prepared<'_>> = sample
        .iter()
        .map(|item| Prepared {
            kspace: fft2c(&item.image),
            item,
        })
        .collect();

    let c = line_count / 2;
    let mut selected = vec![false; line_count];
    let mut history = vec![mean_error(&prep, proxy, &selected)?];
    let mut order = Vec::with_capacity(n);
    let mut gains = Vec::with_capacity(n);
    for step in 0..n {
        let (line, err) = if step == 0 {
            selected[c] = true;
            let e = mean_error(&prep, proxy, &selected)?;
            selected[c] = false;
            (c, e)
        } else {
            let scored = (0..line_count)
                .into_par_iter()
                .filter(|&l| !selected[l])
                .map(|l| {
                    let mut trial = selected.clone();
                    trial[l] = true;
                    Ok((l, mean_error(&prep, proxy, &trial)?))
                })
                .collect::<Result<Vec<(usize, f64)>>>()?;
            scored
                .into_iter()
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.abs_diff(c).cmp(&b.0.abs_diff(c))).then(a.0.cmp(&b.0)))
                .expect("a free line remains while under budget")
        };
        selected[line] = true;
        order.push(line);
        gains.push(history.last().expect("seeded") - err);
        history.push(err);
    }
    Ok(MaskDesignReport {
        mask: CartesianMask::new(selected, r)?,
        order,
        gains,
        error_history: history,
        corpus_fingerprint: corpus_fingerprint(sample),
        proxy: proxy.name(),
        note: "greedy line selection against a fixed proxy reconstructor; stands in for a sampling pattern learned jointly with the reconstruction network".into(),
    })
}
