//! Dataset sources: the synthetic Gaussian generator, CSV and IDX files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Moves `class`'s mean a fraction `lambda` of the way toward `target`'s mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardClass {
    pub class: usize,
    pub target: usize,
    pub lambda: f64,
}

/// Isotropic Gaussian classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub k: usize,
    pub d: usize,
    /// Examples per class.
    pub counts: Vec<usize>,
    /// Class means; defaults to `separation * e_y` (needs `d >= k`).
    #[serde(default)]
    pub means: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_separation")]
    pub separation: f64,
    pub std: f64,
    #[serde(default)]
    pub hard_class: Option<HardClass>,
    /// Seed for drawing the data; defaults to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_separation() -> f64 {
    1.0
}

impl SyntheticSpec {
    /// `k` balanced classes of `per_class` examples.
    pub fn balanced(k: usize, d: usize, per_class: usize, std: f64) -> Self {
        Self {
            k,
            d,
            counts: vec![per_class; k],
            means: None,
            separation: 1.0,
            std,
            hard_class: None,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("synthetic: {msg}")));
        if self.k < 2 || self.d == 0 {
            return bad(format!("need k >= 2 and d >= 1, got k={} d={}", self.k, self.d));
        }
        if self.counts.len() != self.k || self.counts.contains(&0) {
            return bad(format!("counts must hold {} positive entries", self.k));
        }
        if !(self.std > 0.0 && self.std.is_finite()) {
            return bad(format!("std {} must be positive", self.std));
        }
        match &self.means {
            Some(means) => {
                if means.len() != self.k || means.iter().any(|m| m.len() != self.d) {
                    return bad(format!("means must be {} vectors of length {}", self.k, self.d));
                }
            }
            None if self.d < self.k => {
                return bad(format!("default means need d >= k, got d={} k={}", self.d, self.k));
            }
            None => {}
        }
        if let Some(h) = self.hard_class {
            if h.class >= self.k || h.target >= self.k || h.class == h.target {
                return bad(format!("hard_class {}/{} invalid for k={}", h.class, h.target, self.k));
            }
            if !(0.0..=1.0).contains(&h.lambda) {
                return bad(format!("hard_class lambda {} not in [0, 1]", h.lambda));
            }
        }
        Ok(())
    }

    /// Class means after the hard-class adjustment.
    pub fn effective_means(&self) -> Vec<Vec<f64>> {
        let mut means = self.means.clone().unwrap_or_else(|| {
            (0..self.k)
                .map(|y| {
                    let mut m = vec![0.0; self.d];
                    m[y] = self.separation;
                    m
                })
                .collect()
        });
        if let Some(h) = self.hard_class {
            let target = means[h.target].clone();
            for (a, b) in means[h.class].iter_mut().zip(&target) {
                *a = (1.0 - h.lambda) * *a + h.lambda * b;
            }
        }
        means
    }
}

/// Draws `mean_y + std * N(0, I)` for every requested example, rows shuffled.
pub fn generate_synthetic(spec: &SyntheticSpec, rng: &mut SeededRng) -> Result<LabeledDataset> {
    spec.validate()?;
    let means = spec.effective_means();
    let mut labels: Vec<usize> = spec
        .counts
        .iter()
        .enumerate()
        .flat_map(|(y, &c)| std::iter::repeat(y).take(c))
        .collect();
    rng.shuffle(&mut labels);
    let mut features = Vec::with_capacity(labels.len() * spec.d);
    for &y in &labels {
        for &m in &means[y] {
            features.push(m + spec.std * rng.standard_normal());
        }
    }
    LabeledDataset::new(features, labels, spec.k, spec.d)
}

/// Where the examples come from; exactly one source per experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Csv {
        path: PathBuf,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit_per_class: Option<usize>,
    },
}

impl DatasetSource {
    /// Loads the dataset; relative paths are resolved against `base`.
    pub fn load(&self, base: &Path, run_seed: u64) -> Result<LabeledDataset> {
        match self {
            DatasetSource::Synthetic(spec) => {
                generate_synthetic(spec, &mut SeededRng::new(spec.seed.unwrap_or(run_seed)))
            }
            DatasetSource::Csv { path } => load_csv(&base.join(path)),
            DatasetSource::Idx {
                images,
                labels,
                limit_per_class,
            } => load_idx(&base.join(images), &base.join(labels), *limit_per_class),
        }
    }
}

fn labels_to_dataset(features: Vec<f64>, labels: Vec<usize>, d: usize) -> Result<LabeledDataset> {
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut seen = vec![false; k];
    for &y in &labels {
        seen[y] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::MissingClass(missing));
    }
    LabeledDataset::new(features, labels, k, d)
}

/// Reads `label,f0,f1,...` rows. Line and column numbers in errors are 1-based
/// and count the header as line 1.
pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .clone();
    if header.get(0) != Some("label") || header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "header must be label,f0,f1,...".into(),
        });
    }
    let d = header.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(e, i + 2))?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        let label = record[0].parse::<usize>().map_err(|e| Error::Parse {
            line,
            column: 1,
            message: format!("label {:?}: {e}", &record[0]),
        })?;
        labels.push(label);
        for (j, cell) in record.iter().enumerate().skip(1) {
            let v = cell.parse::<f64>().map_err(|e| Error::Parse {
                line,
                column: j + 1,
                message: format!("{cell:?}: {e}"),
            })?;
            features.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::InvalidDataset(format!("{} has no rows", path.display())));
    }
    labels_to_dataset(features, labels, d)
}

fn csv_error(e: csv::Error, line: usize) -> Error {
    let line = e
        .position()
        .map_or(line, |p| p.line() as usize);
    Error::Parse {
        line,
        column: 0,
        message: e.to_string(),
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::CountMismatch(format!("{what}: truncated header")))
}

/// Reads an IDX image file (`0x00000803`, `n x rows x cols` unsigned bytes)
/// and its label file (`0x00000801`). Pixels are scaled by `1/255`. With
/// `limit_per_class`, only the first that many examples of each class are kept.
pub fn load_idx(images: &Path, labels: &Path, limit_per_class: Option<usize>) -> Result<LabeledDataset> {
    let img = fs::read(images).map_err(|e| Error::Io(format!("{}: {e}", images.display())))?;
    let lab = fs::read(labels).map_err(|e| Error::Io(format!("{}: {e}", labels.display())))?;

    let magic = read_u32_be(&img, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let magic = read_u32_be(&lab, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let n = read_u32_be(&img, 4, "images")? as usize;
    let rows = read_u32_be(&img, 8, "images")? as usize;
    let cols = read_u32_be(&img, 12, "images")? as usize;
    let n_labels = read_u32_be(&lab, 4, "labels")? as usize;
    if n != n_labels {
        return Err(Error::CountMismatch(format!("{n} images but {n_labels} labels")));
    }
    let d = rows * cols;
    if img.len() != 16 + n * d {
        return Err(Error::CountMismatch(format!(
            "images header promises {} bytes of pixels, file has {}",
            n * d,
            img.len().saturating_sub(16)
        )));
    }
    if lab.len() != 8 + n {
        return Err(Error::CountMismatch(format!(
            "labels header promises {n} labels, file has {}",
            lab.len().saturating_sub(8)
        )));
    }
    let pixels = &img[16..];
    let mut taken: Vec<usize> = Vec::new();
    let mut features = Vec::new();
    let mut out_labels = Vec::new();
    for (i, &y) in lab[8..].iter().enumerate() {
        let y = y as usize;
        if let Some(limit) = limit_per_class {
            if taken.len() <= y {
                taken.resize(y + 1, 0);
            }
            if taken[y] >= limit {
                continue;
            }
            taken[y] += 1;
        }
        out_labels.push(y);
        features.extend(pixels[i * d..(i + 1) * d].iter().map(|&b| f64::from(b) / 255.0));
    }
    if out_labels.is_empty() {
        return Err(Error::InvalidDataset("IDX files hold no examples".into()));
    }
    labels_to_dataset(features, out_labels, d)
}
