use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{generate, generate_longitudinal, stream, LongitudinalPair, MetaVector, PhantomInstance, PhantomSpec, ScanParams};
use crate::container::{DType, Tensor};
use crate::error::{Error, Result};
use crate::kspace::RealImage;
use crate::register::RigidTransform2D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "flair-analog")]
    Flair,
    #[serde(rename = "longitudinal-analog")]
    Longitudinal,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flair-analog" | "flair" => Ok(Task::Flair),
            "longitudinal-analog" | "longitudinal" => Ok(Task::Longitudinal),
            _ => Err(Error::InvalidArgument(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

/// Seeds of different splits never collide for counts below this stride.
const SPLIT_STRIDE: u64 = 1_000_000;
const FAT_STREAM: u64 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    pub spec: PhantomSpec,
    /// sha256 of the generated C1..C3 center slices.
    pub hash: String,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub task: Task,
    pub base_spec: PhantomSpec,
    pub counts: [usize; 3],
    pub entries: Vec<CorpusEntry>,
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ItemData {
    Single(PhantomInstance),
    Pair(Box<LongitudinalPair>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusItem {
    pub entry: CorpusEntry,
    pub data: ItemData,
}

impl CorpusItem {
    /// The instance whose contrasts serve as conditions (the baseline of a pair).
    pub fn source(&self) -> &PhantomInstance {
        match &self.data {
            ItemData::Single(i) => i,
            ItemData::Pair(p) => &p.baseline,
        }
    }

    /// Task-layout metadata.
    pub fn meta(&self) -> MetaVector {
        match &self.data {
            ItemData::Single(i) => i.meta,
            ItemData::Pair(p) => p.meta,
        }
    }

    pub fn pair(&self) -> Option<&LongitudinalPair> {
        match &self.data {
            ItemData::Pair(p) => Some(p),
            ItemData::Single(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub items: Vec<CorpusItem>,
}

fn instance_hash(inst: &PhantomInstance) -> String {
    let mut h = Sha256::new();
    for c in &inst.contrasts {
        for v in c.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn entry_spec(base: &PhantomSpec, task: Task, split: Split, i: usize, n: usize) -> PhantomSpec {
    let seed = base
        .seed
        .wrapping_mul(3 * SPLIT_STRIDE)
        .wrapping_add(split.index() * SPLIT_STRIDE + i as u64);
    let mut rng = stream(seed, FAT_STREAM);
    let mut spec = PhantomSpec {
        seed,
        fat_rim_flag: rng.random_bool(0.5),
        ..base.clone()
    };
    if task == Task::Longitudinal {
        // Stratified over [0, 1] so every split covers low and high change.
        spec.change_magnitude = ((i as f64 + rng.random_range(0.0..1.0)) / n as f64).min(1.0);
    }
    spec
}

impl Corpus {
    /// Generates all splits in memory.
    pub fn generate(task: Task, counts: [usize; 3], base: &PhantomSpec) -> Result<Corpus> {
        if counts.iter().any(|&c| c == 0 || c as u64 >= SPLIT_STRIDE) {
            return Err(Error::InvalidArgument(format!("split counts must be in 1..{SPLIT_STRIDE}")));
        }
        base.validate()?;
        let jobs: Vec<(Split, usize, usize)> = Split::ALL
            .iter()
            .zip(counts)
            .flat_map(|(&s, n)| (0..n).map(move |i| (s, i, n)))
            .collect();
        let items = jobs
            .par_iter()
            .map(|&(split, i, n)| {
                let spec = entry_spec(base, task, split, i, n);
                let data = match task {
                    Task::Flair => ItemData::Single(generate(&spec)?),
                    Task::Longitudinal => ItemData::Pair(Box::new(generate_longitudinal(&spec)?)),
                };
                let id = format!("{}-{:05}", split.name(), i);
                let mut item = CorpusItem {
                    entry: CorpusEntry {
                        path: format!("{}/{}", split.name(), id),
                        id,
                        split,
                        seed: spec.seed,
                        spec,
                        hash: String::new(),
                    },
                    data,
                };
                item.entry.hash = instance_hash(item.source());
                Ok(item)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            manifest: CorpusManifest {
                task,
                base_spec: base.clone(),
                counts,
                entries: items.iter().map(|i| i.entry.clone()).collect(),
            },
            items,
        })
    }

    pub fn task(&self) -> Task {
        self.manifest.task
    }

    pub fn split(&self, split: Split) -> Vec<&CorpusItem> {
        self.items.iter().filter(|i| i.entry.split == split).collect()
    }

    /// Writes `<root>/<split>/<id>/...` and `<root>/manifest.json`.
    pub fn write(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        self.items.par_iter().try_for_each(|item| {
            let dir = root.join(&item.entry.path);
            match &item.data {
                ItemData::Single(inst) => write_instance(&dir, inst, &inst.meta),
                ItemData::Pair(p) => {
                    write_instance(&dir, &p.baseline, &p.meta)?;
                    write_instance(&dir.join("followup"), &p.followup, &p.meta)?;
                    write_instance(&dir.join("aligned"), &p.followup_aligned, &p.meta)?;
                    write_image(&dir.join("change.prt"), &p.change_map)?;
                    let extra = PairInfo {
                        offset: p.offset,
                        change_magnitude: p.change_magnitude,
                    };
                    write_json(&dir.join("pair.json"), &extra)
                }
            }
        })?;
        write_json(&root.join("manifest.json"), &self.manifest)
    }

    /// Reads a corpus written by [`Corpus::write`], verifying instance hashes.
    pub fn load(root: &Path) -> Result<Corpus> {
        let manifest: CorpusManifest = read_json(&root.join("manifest.json"))?;
        let items = manifest
            .entries
            .par_iter()
            .map(|entry| {
                let dir = root.join(&entry.path);
                let data = match manifest.task {
                    Task::Flair => ItemData::Single(read_instance(&dir)?.0),
                    Task::Longitudinal => {
                        let (baseline, meta) = read_instance(&dir)?;
                        let info: PairInfo = read_json(&dir.join("pair.json"))?;
                        ItemData::Pair(Box::new(LongitudinalPair {
                            baseline,
                            followup: read_instance(&dir.join("followup"))?.0,
                            followup_aligned: read_instance(&dir.join("aligned"))?.0,
                            change_map: read_image(&dir.join("change.prt"))?,
                            offset: info.offset,
                            meta,
                            change_magnitude: info.change_magnitude,
                        }))
                    }
                };
                let item = CorpusItem {
                    entry: entry.clone(),
                    data,
                };
                if instance_hash(item.source()) != entry.hash {
                    return Err(Error::Container(format!("instance {} does not match its manifest hash", entry.id)));
                }
                Ok(item)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus { manifest, items })
    }
}

/// Generates and writes a corpus; returns its manifest.
pub fn build_corpus(
    root: &Path,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    base_spec: &PhantomSpec,
    task: Task,
) -> Result<CorpusManifest> {
    let corpus = Corpus::generate(task, [n_train, n_val, n_test], base_spec)?;
    corpus.write(root)?;
    Ok(corpus.manifest)
}

#[derive(Serialize, Deserialize)]
struct PairInfo {
    offset: RigidTransform2D,
    change_magnitude: f64,
}

#[derive(Serialize, Deserialize)]
struct InstanceInfo {
    scan: ScanParams,
    scale: [f64; 3],
    flair_meta: MetaVector,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn write_image(path: &Path, img: &RealImage) -> Result<()> {
    Tensor::real(vec![img.height(), img.width()], img.data().to_vec(), DType::F64)?.write(path)
}

pub(crate) fn read_image(path: &Path) -> Result<RealImage> {
    let t = Tensor::read(path)?;
    let dims = t.dims.clone();
    if dims.len() != 2 {
        return Err(Error::Container(format!("{}: expected a 2D image", path.display())));
    }
    RealImage::new(dims[0], dims[1], t.into_real()?)
}

fn write_instance(dir: &Path, inst: &PhantomInstance, meta: &MetaVector) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = inst.size();
    for k in 0..3 {
        let data: Vec<f64> = inst.slices(k).iter().flat_map(|s| s.data().iter().copied()).collect();
        Tensor::real(vec![3, n, n], data, DType::F64)?.write(&dir.join(format!("c{}.prt", k + 1)))?;
    }
    let support = inst.support_mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Tensor::real(vec![n, n], support, DType::F32)?.write(&dir.join("support.prt"))?;
    Tensor::real(vec![meta.0.len()], meta.0.to_vec(), DType::F64)?.write(&dir.join("meta.prt"))?;
    let info = InstanceInfo {
        scan: inst.scan,
        scale: inst.scale,
        flair_meta: inst.meta,
    };
    write_json(&dir.join("instance.json"), &info)
}

fn read_instance(dir: &Path) -> Result<(PhantomInstance, MetaVector)> {
    let path = |name: &str| -> PathBuf { dir.join(name) };
    let mut slices = Vec::new();
    for k in 1..=3 {
        let p = path(&format!("c{k}.prt"));
        let t = Tensor::read(&p)?;
        let dims = t.dims.clone();
        if dims.len() != 3 || dims[0] != 3 {
            return Err(Error::Container(format!("{}: expected 3 slices", p.display())));
        }
        let (h, w) = (dims[1], dims[2]);
        let data = t.into_real()?;
        let planes: Vec<RealImage> = data
            .chunks(h * w)
            .map(|c| RealImage::new(h, w, c.to_vec()))
            .collect::<Result<_>>()?;
        slices.push(planes);
    }
    let support: Vec<bool> = Tensor::read(&path("support.prt"))?.into_real()?.iter().map(|&v| v != 0.0).collect();
    let meta_vals = Tensor::read(&path("meta.prt"))?.into_real()?;
    let meta = MetaVector(
        meta_vals
            .try_into()
            .map_err(|_| Error::Container("meta vector must have 8 entries".into()))?,
    );
    let info: InstanceInfo = read_json(&path("instance.json"))?;
    let mut it = slices.into_iter().map(|mut s| {
        let above = s.pop().expect("3 slices");
        let center = s.pop().expect("3 slices");
        let below = s.pop().expect("3 slices");
        (center, [below, above])
    });
    let (c1, n1) = it.next().expect("three contrasts");
    let (c2, n2) = it.next().expect("three contrasts");
    let (c3, n3) = it.next().expect("three contrasts");
    Ok((
        PhantomInstance {
            contrasts: [c1, c2, c3],
            support_mask: support,
            meta: info.flair_meta,
            neighbor_slices: [n1, n2, n3],
            scan: info.scan,
            scale: info.scale,
        },
        meta,
    ))
}
