use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::register::RigidTransform2D;

/// Tissue labels. Index 0 is background.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Tissue {
    Csf = 1,
    Gm,
    Wm,
    DeepGm,
    LesionA,
    LesionB,
    Fat,
}

pub(crate) const N_TISSUE: usize = 8;

/// One ellipsoid, sliced at height `z`. Coordinates are normalized to
/// `[-1, 1]` across the field of view.
#[derive(Clone, Debug)]
pub(crate) struct Ellipsoid {
    pub tissue: Tissue,
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub phi: f64,
    /// Through-plane semi-axis.
    pub cz: f64,
    pub drift_x: f64,
    pub drift_y: f64,
}

impl Ellipsoid {
    fn section(&self, z: f64) -> Option<Section> {
        let q = 1.0 - (z / self.cz).powi(2);
        if q <= 0.0 {
            return None;
        }
        let s = q.sqrt();
        let (sin, cos) = self.phi.sin_cos();
        Some(Section {
            cx: self.cx + self.drift_x * z,
            cy: self.cy + self.drift_y * z,
            a: self.a * s,
            b: self.b * s,
            sin,
            cos,
        })
    }
}

#[derive(Clone, Copy)]
struct Section {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    sin: f64,
    cos: f64,
}

impl Section {
    /// Squared normalized radius; `< 1` inside.
    fn rho2(&self, x: f64, y: f64) -> f64 {
        let (u, v) = (x - self.cx, y - self.cy);
        let p = self.cos * u + self.sin * v;
        let q = -self.sin * u + self.cos * v;
        (p / self.a).powi(2) + (q / self.b).powi(2)
    }
}

/// Ellipse layout of one subject. `ellipses` are painted in order, later
/// entries overriding earlier ones; `brain` is the support-defining outline.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub brain: Ellipsoid,
    pub ellipses: Vec<Ellipsoid>,
    pub ventricles: Vec<usize>,
}

// The gap keeps partial-volume fat out of support pixels down to 32x32.
pub(crate) const FAT_INNER: f64 = 1.10;
pub(crate) const FAT_OUTER: f64 = 1.20;

fn jitter(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub(crate) fn random_layout(rng: &mut ChaCha8Rng, n_lesions: usize) -> Layout {
    let bcx = jitter(rng, -0.03, 0.03);
    let bcy = jitter(rng, -0.03, 0.03);
    let ba = jitter(rng, 0.64, 0.74);
    let bb = jitter(rng, 0.74, 0.81);
    let bphi = jitter(rng, -0.15, 0.15);
    let brain = Ellipsoid {
        tissue: Tissue::Csf,
        cx: bcx,
        cy: bcy,
        a: ba,
        b: bb,
        phi: bphi,
        cz: 3.0,
        drift_x: 0.0,
        drift_y: 0.0,
    };
    let (sin, cos) = bphi.sin_cos();
    // Brain-frame offsets to image coordinates.
    let place = |u: f64, v: f64| (bcx + cos * u * ba - sin * v * bb, bcy + sin * u * ba + cos * v * bb);
    let mut ellipses = Vec::new();
    let scaled = |s: f64, tissue: Tissue| Ellipsoid {
        tissue,
        a: ba * s,
        b: bb * s,
        ..brain.clone()
    };
    ellipses.push(brain.clone());
    ellipses.push(scaled(jitter(rng, 0.94, 0.97), Tissue::Gm));
    ellipses.push(scaled(jitter(rng, 0.76, 0.82), Tissue::Wm));

    for side in [-1.0, 1.0] {
        let (cx, cy) = place(side * jitter(rng, 0.30, 0.36), jitter(rng, -0.02, 0.08));
        ellipses.push(Ellipsoid {
            tissue: Tissue::DeepGm,
            cx,
            cy,
            a: jitter(rng, 0.07, 0.10),
            b: jitter(rng, 0.11, 0.15),
            phi: bphi + side * jitter(rng, 0.2, 0.4),
            cz: jitter(rng, 0.4, 0.6),
            drift_x: jitter(rng, -0.3, 0.3),
            drift_y: jitter(rng, -0.3, 0.3),
        });
    }
    let mut ventricles = Vec::new();
    for side in [-1.0, 1.0] {
        let (cx, cy) = place(side * jitter(rng, 0.09, 0.13), jitter(rng, -0.12, -0.02));
        ventricles.push(ellipses.len());
        ellipses.push(Ellipsoid {
            tissue: Tissue::Csf,
            cx,
            cy,
            a: jitter(rng, 0.045, 0.07),
            b: jitter(rng, 0.15, 0.22),
            phi: bphi - side * jitter(rng, 0.15, 0.35),
            cz: jitter(rng, 0.5, 0.8),
            drift_x: jitter(rng, -0.2, 0.2),
            drift_y: jitter(rng, -0.2, 0.2),
        });
    }
    for _ in 0..n_lesions {
        let r = jitter(rng, 0.25, 0.62);
        let ang = jitter(rng, 0.0, std::f64::consts::TAU);
        let (cx, cy) = place(r * ang.cos(), r * ang.sin());
        let tissue = if rng.random_bool(0.5) {
            Tissue::LesionA
        } else {
            Tissue::LesionB
        };
        ellipses.push(Ellipsoid {
            tissue,
            cx,
            cy,
            a: jitter(rng, 0.04, 0.09),
            b: jitter(rng, 0.04, 0.09),
            phi: jitter(rng, 0.0, std::f64::consts::PI),
            cz: jitter(rng, 0.12, 0.25),
            drift_x: jitter(rng, -0.4, 0.4),
            drift_y: jitter(rng, -0.4, 0.4),
        });
    }
    Layout {
        brain,
        ellipses,
        ventricles,
    }
}

impl Layout {
    /// Copy with every ventricle semi-axis scaled by `factor` about its center.
    pub fn dilate_ventricles(&self, factor: f64) -> Layout {
        let mut out = self.clone();
        for &i in &self.ventricles {
            out.ellipses[i].a *= factor;
            out.ellipses[i].b *= factor;
        }
        out
    }
}

/// Per-pixel tissue fractions from `ss x ss` supersampling. `motion` moves
/// the rendered content (pixel units, about the image center).
pub(crate) struct Coverage {
    pub fractions: Vec<[f64; N_TISSUE]>,
}

impl Coverage {
    pub fn brain_fraction(&self, i: usize) -> f64 {
        let f = &self.fractions[i];
        1.0 - f[0] - f[Tissue::Fat as usize]
    }
}

pub(crate) fn rasterize(layout: &Layout, size: usize, z: f64, ss: usize, motion: Option<&RigidTransform2D>) -> Coverage {
    let brain = layout.brain.section(z);
    let sections: Vec<(Tissue, Section)> = layout
        .ellipses
        .iter()
        .filter_map(|e| e.section(z).map(|s| (e.tissue, s)))
        .collect();
    let inv = motion.map(|t| t.inverse());
    let half = (size as f64 - 1.0) / 2.0;
    let scale = 2.0 / size as f64;
    let w = 1.0 / (ss * ss) as f64;
    let mut fractions = vec![[0.0; N_TISSUE]; size * size];
    for r in 0..size {
        for c in 0..size {
            let f = &mut fractions[r * size + c];
            for i in 0..ss {
                for j in 0..ss {
                    let py = r as f64 - half + (i as f64 + 0.5) / ss as f64 - 0.5;
                    let px = c as f64 - half + (j as f64 + 0.5) / ss as f64 - 0.5;
                    let (px, py) = match &inv {
                        Some(t) => t.map(px, py),
                        None => (px, py),
                    };
                    let (x, y) = (px * scale, py * scale);
                    let mut label = 0usize;
                    if let Some(b) = &brain {
                        let rho2 = b.rho2(x, y);
                        if (FAT_INNER * FAT_INNER..FAT_OUTER * FAT_OUTER).contains(&rho2) {
                            label = Tissue::Fat as usize;
                        }
                    }
                    for (tissue, s) in &sections {
                        if s.rho2(x, y) < 1.0 {
                            label = *tissue as usize;
                        }
                    }
                    f[label] += w;
                }
            }
        }
    }
    Coverage { fractions }
}

#[cfg(test)]
/// Pixels whose center lies inside ellipse `idx` of `layout` at `z = 0`.
pub(crate) fn ellipse_interior(layout: &Layout, idx: usize, size: usize) -> Vec<bool> {
    let s = layout.ellipses[idx].section(0.0);
    let half = (size as f64 - 1.0) / 2.0;
    let scale = 2.0 / size as f64;
    (0..size * size)
        .map(|i| {
            let (r, c) = (i / size, i % size);
            s.is_some_and(|s| s.rho2((c as f64 - half) * scale, (r as f64 - half) * scale) < 1.0)
        })
        .collect()
}

#[cfg(test)]
/// Pixels whose center lies in the fat annulus of `layout` at `z = 0`.
pub(crate) fn fat_annulus(layout: &Layout, size: usize) -> Vec<bool> {
    let b = layout.brain.section(0.0).expect("brain present at z = 0");
    let half = (size as f64 - 1.0) / 2.0;
    let scale = 2.0 / size as f64;
    (0..size * size)
        .map(|i| {
            let (r, c) = (i / size, i % size);
            let rho2 = b.rho2((c as f64 - half) * scale, (r as f64 - half) * scale);
            (FAT_INNER * FAT_INNER..FAT_OUTER * FAT_OUTER).contains(&rho2)
        })
        .collect()
}
