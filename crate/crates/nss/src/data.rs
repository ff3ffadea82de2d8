//! Dataset ingestion: MNIST IDX files (optionally gzip'd), synthetic
//! Gaussian blob datasets, and mean/std normalization.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::net::Normalization;
use crate::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Inputs plus class labels. Inputs are raw (e.g. pixels in [0, 1]) until
/// [`normalize`] is applied, after which `normalization` records the exact
/// transform.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub normalization: Option<Normalization>,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::CountMismatch {
                images: inputs.len(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let slice = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| Error::TruncatedIdx(format!("missing {what}")))?;
    Ok(u32::from_be_bytes(slice.try_into().unwrap()))
}

/// Parses the big-endian IDX pair into a dataset with pixels scaled to
/// [0, 1]. Accepts `.gz` paths transparently.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let img = read_bytes(images_path)?;
    let lbl = read_bytes(labels_path)?;

    let magic = read_u32_be(&img, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            got: magic,
        });
    }
    let count = read_u32_be(&img, 4, "image count")? as usize;
    let rows = read_u32_be(&img, 8, "row count")? as usize;
    let cols = read_u32_be(&img, 12, "column count")? as usize;
    let pixels = rows * cols;
    if img.len() != 16 + count * pixels {
        return Err(Error::TruncatedIdx(format!(
            "image payload: expected {} bytes, file has {}",
            16 + count * pixels,
            img.len()
        )));
    }

    let magic = read_u32_be(&lbl, 0, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_LABELS_MAGIC,
            got: magic,
        });
    }
    let label_count = read_u32_be(&lbl, 4, "label count")? as usize;
    if lbl.len() != 8 + label_count {
        return Err(Error::TruncatedIdx(format!(
            "label payload: expected {} bytes, file has {}",
            8 + label_count,
            lbl.len()
        )));
    }
    if count != label_count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let inputs = img[16..]
        .chunks_exact(pixels)
        .map(|chunk| chunk.iter().map(|&b| b as f64 / 255.0).collect())
        .collect();
    let labels: Vec<usize> = lbl[8..].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    LabeledDataset::new(inputs, labels, num_classes)
}

/// Re-serializes a [0, 1]-scaled image dataset back into IDX bytes
/// (images, labels). Bit-exact inverse of `load_mnist_idx` for data that
/// came from u8 pixels.
pub fn to_idx_bytes(dataset: &LabeledDataset, rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
    let count = dataset.len() as u32;
    let mut img = Vec::with_capacity(16 + dataset.len() * rows * cols);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&count.to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for input in &dataset.inputs {
        img.extend(input.iter().map(|&v| (v * 255.0).round() as u8));
    }
    let mut lbl = Vec::with_capacity(8 + dataset.len());
    lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&count.to_be_bytes());
    lbl.extend(dataset.labels.iter().map(|&l| l as u8));
    (img, lbl)
}

/// Normalizes with scalar mean/std computed over every feature of every
/// input (the training-split statistics).
pub fn normalize(dataset: &LabeledDataset) -> Result<LabeledDataset> {
    let total: usize = dataset.inputs.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    let sum: f64 = dataset.inputs.iter().flatten().sum();
    let mean = sum / total as f64;
    let var: f64 = dataset
        .inputs
        .iter()
        .flatten()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<f64>()
        / total as f64;
    if var == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let stats = Normalization::scalar(mean, var.sqrt());
    normalize_with(dataset, &stats)
}

/// Applies existing statistics (e.g. training-split stats to the test
/// split).
pub fn normalize_with(dataset: &LabeledDataset, stats: &Normalization) -> Result<LabeledDataset> {
    let inputs = dataset.inputs.iter().map(|x| stats.apply(x)).collect();
    let mut out = LabeledDataset::new(inputs, dataset.labels.clone(), dataset.num_classes)?;
    out.normalization = Some(stats.clone());
    Ok(out)
}

pub fn denormalize(dataset: &LabeledDataset) -> Result<LabeledDataset> {
    let stats = dataset
        .normalization
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("dataset is not normalized".into()))?;
    let inputs = dataset.inputs.iter().map(|x| stats.invert(x)).collect();
    LabeledDataset::new(inputs, dataset.labels.clone(), dataset.num_classes)
}

/// Gaussian clusters with unit covariance and class means placed at
/// `separation * e_c`; a desk-scale stand-in for image datasets.
/// Deterministic per seed, exactly `per_class` samples per class.
pub fn synthetic_blobs(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes == 0 || dim == 0 || per_class == 0 {
        return Err(Error::InvalidConfig(
            "num_classes, dim and per_class must be positive".into(),
        ));
    }
    if num_classes > dim {
        return Err(Error::InvalidConfig(format!(
            "synthetic blobs need num_classes ({num_classes}) <= dim ({dim})"
        )));
    }
    if separation <= 0.0 {
        return Err(Error::InvalidConfig("separation must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(num_classes * per_class);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for class in 0..num_classes {
        for _ in 0..per_class {
            let mut x: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            x[class] += separation;
            inputs.push(x);
            labels.push(class);
        }
    }
    LabeledDataset::new(inputs, labels, num_classes)
}

/// CSV export with the header `label,f0,f1,...`.
pub fn export_csv<W: std::io::Write>(dataset: &LabeledDataset, mut w: W) -> Result<()> {
    write!(w, "label")?;
    for j in 0..dataset.input_dim() {
        write!(w, ",f{j}")?;
    }
    writeln!(w)?;
    for (x, &label) in dataset.inputs.iter().zip(&dataset.labels) {
        write!(w, "{label}")?;
        for v in x {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
