//! Seeded multi-contrast ellipsoid phantoms.
//!
//! One random layout of ellipsoids (outer CSF, cortex, white matter, deep
//! grey nuclei, two ventricles and a few lesions) is sliced and rasterized
//! with supersampling; each contrast maps the tissue fractions through its
//! own intensity table. Contrasts are T1-like (C1), T2-like (C2) and
//! FLAIR-like (C3). The two lesion types are built so that either single
//! contrast confuses each of them with a normal tissue while the pair does
//! not, which makes two-contrast prediction strictly more informative.

mod coils;
mod corpus;
mod export;
mod geometry;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::RealImage;
use crate::register::RigidTransform2D;

pub use coils::{simulate_coil_maps, COIL_GRADIENT_BOUND};
pub use corpus::{build_corpus, Corpus, CorpusEntry, CorpusItem, CorpusManifest, Split, Task};
pub use export::{read_pgm16, to_u16, write_pgm16, write_png16};
use geometry::{rasterize, random_layout, Coverage, Layout, Tissue, N_TISSUE};

pub const META_LEN: usize = 8;
/// Through-plane distance between adjacent slices (normalized units).
pub const SLICE_SPACING: f64 = 0.05;
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub size: usize,
    /// Number of random lesion ellipsoids.
    pub n_ellipses: usize,
    pub fat_rim_flag: bool,
    /// Ventricle dilation of the follow-up scan, in `[0, 1]`.
    pub change_magnitude: f64,
    pub noise_sigma: f64,
    /// Scale of the follow-up's random rigid offset; 1 allows up to 4° and
    /// 4% of the field of view, 0 disables it.
    #[serde(default = "one")]
    pub offset_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            seed: 0,
            size: 64,
            n_ellipses: 4,
            fat_rim_flag: false,
            change_magnitude: 0.0,
            noise_sigma: 0.0,
            offset_scale: 1.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 32 || !self.size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "phantom size must be even and at least 32, got {}",
                self.size
            )));
        }
        if !(0.0..=1.0).contains(&self.change_magnitude) {
            return Err(Error::InvalidArgument(format!(
                "change magnitude {} outside [0, 1]",
                self.change_magnitude
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.offset_scale >= 0.0) {
            return Err(Error::InvalidArgument("noise and offset scales must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Eight scan descriptors, each min-max normalized to `[0, 1]` with the
/// generator's declared parameter ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaVector(pub [f64; META_LEN]);

impl MetaVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Declared ranges, ms unless noted.
pub const TR1_RANGE: (f64, f64) = (400.0, 800.0);
pub const TE1_RANGE: (f64, f64) = (8.0, 20.0);
pub const TR2_RANGE: (f64, f64) = (2500.0, 5000.0);
pub const TE2_RANGE: (f64, f64) = (80.0, 120.0);
pub const TR3_RANGE: (f64, f64) = (8000.0, 11000.0);
pub const TE3_RANGE: (f64, f64) = (100.0, 150.0);
pub const TI3_RANGE: (f64, f64) = (2200.0, 2800.0);
/// Follow-up interval in months.
pub const INTERVAL_RANGE: (f64, f64) = (12.0, 96.0);
pub const AGE_RANGE: (f64, f64) = (60.0, 90.0);
pub const CDR_LEVELS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];

fn normalize(v: f64, (lo, hi): (f64, f64)) -> f64 {
    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Scan parameters of the three contrasts (ms).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanParams {
    pub tr1: f64,
    pub te1: f64,
    pub tr2: f64,
    pub te2: f64,
    pub tr3: f64,
    pub te3: f64,
    pub ti3: f64,
}

impl ScanParams {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let mut u = |(lo, hi): (f64, f64)| rng.random_range(lo..hi);
        ScanParams {
            tr1: u(TR1_RANGE),
            te1: u(TE1_RANGE),
            tr2: u(TR2_RANGE),
            te2: u(TE2_RANGE),
            tr3: u(TR3_RANGE),
            te3: u(TE3_RANGE),
            ti3: u(TI3_RANGE),
        }
    }

    /// `[TR1, TE1, TR2, TE2, TR3, TE3, TI3, fat]`.
    pub fn flair_meta(&self, fat: bool) -> MetaVector {
        MetaVector([
            normalize(self.tr1, TR1_RANGE),
            normalize(self.te1, TE1_RANGE),
            normalize(self.tr2, TR2_RANGE),
            normalize(self.te2, TE2_RANGE),
            normalize(self.tr3, TR3_RANGE),
            normalize(self.te3, TE3_RANGE),
            normalize(self.ti3, TI3_RANGE),
            if fat { 1.0 } else { 0.0 },
        ])
    }
}

/// Months between scans for a given change magnitude.
pub fn interval_months(change_magnitude: f64) -> f64 {
    INTERVAL_RANGE.0 + (INTERVAL_RANGE.1 - INTERVAL_RANGE.0) * change_magnitude
}

/// Inverse of [`interval_months`].
pub fn change_from_interval(months: f64) -> f64 {
    (months - INTERVAL_RANGE.0) / (INTERVAL_RANGE.1 - INTERVAL_RANGE.0)
}

pub fn cdr_for_change(change_magnitude: f64) -> f64 {
    CDR_LEVELS[((change_magnitude * 4.0) as usize).min(3)]
}

/// Slot indices of each contrast's scan parameters in the meta vector.
pub const C1_META_SLOTS: [usize; 2] = [0, 1];
pub const C2_META_SLOTS: [usize; 2] = [2, 3];

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomInstance {
    /// C1, C2, C3 center slices.
    pub contrasts: [RealImage; 3],
    pub support_mask: Vec<bool>,
    pub meta: MetaVector,
    /// Per contrast, the slices at `-SLICE_SPACING` and `+SLICE_SPACING`.
    pub neighbor_slices: [[RealImage; 2]; 3],
    pub scan: ScanParams,
    /// Per contrast, the factor that brought the support std to one.
    pub scale: [f64; 3],
}

impl PhantomInstance {
    pub fn size(&self) -> usize {
        self.contrasts[0].height()
    }

    /// `[below, center, above]` for contrast `k` (0-based).
    pub fn slices(&self, k: usize) -> [&RealImage; 3] {
        [&self.neighbor_slices[k][0], &self.contrasts[k], &self.neighbor_slices[k][1]]
    }
}

/// Follow-up of a longitudinal pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LongitudinalPair {
    pub baseline: PhantomInstance,
    /// Follow-up in the acquisition frame (includes the rigid offset).
    pub followup: PhantomInstance,
    /// Follow-up rendered in the baseline frame.
    pub followup_aligned: PhantomInstance,
    /// `|followup_aligned - baseline|` of C1 in baseline intensity units.
    pub change_map: RealImage,
    pub offset: RigidTransform2D,
    /// `[TR1, TE1, TR2, TE2, interval, age, CDR, 0]`.
    pub meta: MetaVector,
    pub change_magnitude: f64,
}

/// Intensity per tissue, per contrast.
type Table = [[f64; N_TISSUE]; 3];

fn intensity_table(scan: &ScanParams, fat: bool, rng: &mut ChaCha8Rng) -> Table {
    let ti = normalize(scan.ti3, TI3_RANGE);
    let mut t = [[0.0; N_TISSUE]; 3];
    let rows: [(Tissue, [f64; 3]); 7] = [
        (Tissue::Csf, [0.2, 1.0, 0.05 + 0.3 * ti]),
        (Tissue::Gm, [0.6, 0.7, 0.8]),
        (Tissue::Wm, [0.9, 0.5, 0.6]),
        (Tissue::DeepGm, [0.75, 0.6, 0.7]),
        (Tissue::LesionA, [0.6, 1.0, 1.0]),
        (Tissue::LesionB, [0.2, 0.7, 1.1]),
        (Tissue::Fat, [0.0, 0.0, if fat { 1.2 } else { 0.0 }]),
    ];
    for (tissue, vals) in rows {
        for (k, v) in vals.iter().enumerate() {
            t[k][tissue as usize] = v * (1.0 + rng.random_range(-0.03..0.03));
        }
    }
    t
}

fn shade(cov: &Coverage, row: &[f64; N_TISSUE]) -> Vec<f64> {
    cov.fractions
        .iter()
        .map(|f| f.iter().zip(row).map(|(a, b)| a * b).sum())
        .collect()
}

fn support_of(cov: &Coverage) -> Vec<bool> {
    (0..cov.fractions.len()).map(|i| cov.brain_fraction(i) >= 0.5).collect()
}

fn support_std(img: &[f64], support: &[bool]) -> f64 {
    let vals: Vec<f64> = img.iter().zip(support).filter(|(_, &s)| s).map(|(v, _)| *v).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Independent RNG streams derived from the spec seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const GEOMETRY: u64 = 0;
const CONTRAST: u64 = 1;
const NOISE: u64 = 2;
const OFFSET: u64 = 3;
const FOLLOWUP_NOISE: u64 = 4;
const SUBJECT: u64 = 5;

struct Rendered {
    center: [Vec<f64>; 3],
    neighbors: [[Vec<f64>; 2]; 3],
    support: Vec<bool>,
}

fn render(layout: &Layout, table: &Table, size: usize, motion: Option<&RigidTransform2D>) -> Rendered {
    let cov = [-SLICE_SPACING, 0.0, SLICE_SPACING].map(|z| rasterize(layout, size, z, SUPERSAMPLE, motion));
    let support = support_of(&cov[1]);
    let center = [0, 1, 2].map(|k| shade(&cov[1], &table[k]));
    let neighbors = [0, 1, 2].map(|k| [shade(&cov[0], &table[k]), shade(&cov[2], &table[k])]);
    Rendered {
        center,
        neighbors,
        support,
    }
}

fn finish(mut r: Rendered, spec: &PhantomSpec, noise_stream: u64, scan: ScanParams, meta: MetaVector) -> Result<PhantomInstance> {
    let n = spec.size;
    if spec.noise_sigma > 0.0 {
        let mut rng = stream(spec.seed, noise_stream);
        for k in 0..3 {
            let [below, above] = &mut r.neighbors[k];
            for img in [&mut r.center[k], below, above] {
                for v in img.iter_mut() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *v += spec.noise_sigma * e;
                }
            }
        }
    }
    let mut scale = [1.0; 3];
    for (k, s) in scale.iter_mut().enumerate() {
        let sd = support_std(&r.center[k], &r.support);
        if sd.is_nan() || sd <= 0.0 {
            return Err(Error::Degenerate("phantom contrast is constant inside the support".into()));
        }
        *s = 1.0 / sd;
    }
    let img = |v: &[f64], k: usize| RealImage::new(n, n, v.iter().map(|x| x * scale[k]).collect());
    Ok(PhantomInstance {
        contrasts: [img(&r.center[0], 0)?, img(&r.center[1], 1)?, img(&r.center[2], 2)?],
        support_mask: r.support,
        meta,
        neighbor_slices: [
            [img(&r.neighbors[0][0], 0)?, img(&r.neighbors[0][1], 0)?],
            [img(&r.neighbors[1][0], 1)?, img(&r.neighbors[1][1], 1)?],
            [img(&r.neighbors[2][0], 2)?, img(&r.neighbors[2][1], 2)?],
        ],
        scan,
        scale,
    })
}

struct Subject {
    layout: Layout,
    scan: ScanParams,
    table: Table,
}

fn subject(spec: &PhantomSpec) -> Result<Subject> {
    spec.validate()?;
    let layout = random_layout(&mut stream(spec.seed, GEOMETRY), spec.n_ellipses);
    let mut rng = stream(spec.seed, CONTRAST);
    let scan = ScanParams::sample(&mut rng);
    let table = intensity_table(&scan, spec.fat_rim_flag, &mut rng);
    Ok(Subject { layout, scan, table })
}

/// Renders one multi-contrast instance. Pure in `spec`.
pub fn generate(spec: &PhantomSpec) -> Result<PhantomInstance> {
    let s = subject(spec)?;
    let r = render(&s.layout, &s.table, spec.size, None);
    finish(r, spec, NOISE, s.scan, s.scan.flair_meta(spec.fat_rim_flag))
}

/// Renders `2k + 1` slices of contrast `k_contrast` centred on the
/// instance's slice, scaled like [`generate`]'s output (noise-free).
pub fn slice_stack(spec: &PhantomSpec, k_contrast: usize, half_width: usize) -> Result<Vec<RealImage>> {
    if k_contrast > 2 {
        return Err(Error::InvalidArgument(format!("no contrast {k_contrast}")));
    }
    let s = subject(spec)?;
    let center = rasterize(&s.layout, spec.size, 0.0, SUPERSAMPLE, None);
    let support = support_of(&center);
    let sd = support_std(&shade(&center, &s.table[k_contrast]), &support);
    let n = half_width as isize;
    (-n..=n)
        .map(|j| {
            let cov = rasterize(&s.layout, spec.size, j as f64 * SLICE_SPACING, SUPERSAMPLE, None);
            let v = shade(&cov, &s.table[k_contrast]).into_iter().map(|x| x / sd).collect();
            RealImage::new(spec.size, spec.size, v)
        })
        .collect()
}

/// Baseline and follow-up of one subject. The follow-up's ventricles are
/// dilated by `1 + change_magnitude` and the whole head is moved by a small
/// random rigid offset.
pub fn generate_longitudinal(spec: &PhantomSpec) -> Result<LongitudinalPair> {
    let s = subject(spec)?;
    let n = spec.size as f64;
    let mut rng = stream(spec.seed, OFFSET);
    let th = rng.random_range(-4.0..=4.0) * spec.offset_scale;
    let dx = rng.random_range(-0.04..=0.04) * n * spec.offset_scale;
    let dy = rng.random_range(-0.04..=0.04) * n * spec.offset_scale;
    let offset = RigidTransform2D::new(th, dx, dy);
    let mut rng = stream(spec.seed, SUBJECT);
    let age = rng.random_range(AGE_RANGE.0..AGE_RANGE.1);

    let cm = spec.change_magnitude;
    let meta = MetaVector([
        normalize(s.scan.tr1, TR1_RANGE),
        normalize(s.scan.te1, TE1_RANGE),
        normalize(s.scan.tr2, TR2_RANGE),
        normalize(s.scan.te2, TE2_RANGE),
        normalize(interval_months(cm), INTERVAL_RANGE),
        normalize(age, AGE_RANGE),
        cdr_for_change(cm) / 2.0,
        0.0,
    ]);
    let flair_meta = s.scan.flair_meta(spec.fat_rim_flag);
    let grown = s.layout.dilate_ventricles(1.0 + cm);

    let base = render(&s.layout, &s.table, spec.size, None);
    let aligned = render(&grown, &s.table, spec.size, None);
    let base_scale = 1.0 / support_std(&base.center[0], &base.support);
    let change: Vec<f64> = aligned.center[0]
        .iter()
        .zip(&base.center[0])
        .map(|(a, b)| (a - b).abs() * base_scale)
        .collect();
    let motion = (!offset.is_identity()).then_some(&offset);
    let moved = render(&grown, &s.table, spec.size, motion);

    Ok(LongitudinalPair {
        baseline: finish(base, spec, NOISE, s.scan, flair_meta)?,
        followup: finish(moved, spec, FOLLOWUP_NOISE, s.scan, flair_meta)?,
        followup_aligned: finish(aligned, spec, FOLLOWUP_NOISE, s.scan, flair_meta)?,
        change_map: RealImage::new(spec.size, spec.size, change)?,
        offset,
        meta,
        change_magnitude: cm,
    })
}
