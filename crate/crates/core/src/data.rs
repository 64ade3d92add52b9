//! Dataset representation and the on-disk dataset format.
//!
//! A dataset is described by a manifest of `key=value` lines:
//!
//! ```text
//! features=features.bin
//! labels=labels.txt        # or `none`
//! classes=10
//! thumbnails=thumbs        # or `none`
//! ```
//!
//! Relative paths resolve against the manifest's directory. The features file
//! is little-endian binary: the magic `SALPFTR1`, `u64` sample count, `u64`
//! dimension count, then `f32` values in row-major order. The labels file has
//! one integer per line, `-1` marking an unlabeled sample.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::{Label, SampleId};

pub const FEATURE_MAGIC: &[u8; 8] = b"SALPFTR1";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: SampleId,
    pub true_label: Option<Label>,
    /// Raster image shown in the annotation tooltip.
    pub thumbnail: Option<PathBuf>,
}

/// Dense row-major matrix of finite feature values, one row per sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_samples: usize,
    n_dims: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_samples: usize, n_dims: usize, values: Vec<f64>) -> Result<Self> {
        if n_samples == 0 || n_dims == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature matrix must be non-empty, got {n_samples}x{n_dims}"
            )));
        }
        if values.len() != n_samples * n_dims {
            return Err(Error::InvalidArgument(format!(
                "{} values do not fill a {n_samples}x{n_dims} matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos / n_dims, col: pos % n_dims });
        }
        Ok(Self { n_samples, n_dims, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_dims = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * n_dims);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n_dims {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has {} values, expected {n_dims}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), n_dims, values)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_dims..(i + 1) * self.n_dims]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.n_dims)
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * self.n_dims);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        Self::new(rows.len(), self.n_dims, values)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 24 || &bytes[..8] != FEATURE_MAGIC {
            return Err(Error::format(path, 0, "missing SALPFTR1 header"));
        }
        let n_samples = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let n_dims = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let expected = n_samples
            .checked_mul(n_dims)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(path, 0, "header dimensions overflow"))?;
        if bytes.len() - 24 != expected {
            return Err(Error::format(
                path,
                0,
                format!("{n_samples}x{n_dims} header needs {expected} payload bytes, found {}", bytes.len() - 24),
            ));
        }
        let values = bytes[24..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(n_samples, n_dims, values)
    }

    /// Writes the binary format; values are narrowed to `f32`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(FEATURE_MAGIC).map_err(io)?;
        w.write_all(&(self.n_samples as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.n_dims as u64).to_le_bytes()).map_err(io)?;
        for v in &self.values {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Parsed manifest. Paths are as written in the file, unresolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
    pub classes: usize,
    pub thumbnails: Option<PathBuf>,
}

impl Manifest {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let (mut features, mut labels, mut classes, mut thumbnails) = (None, None, None, None);
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, idx + 1, format!("expected key=value, got `{line}`")))?;
            let value = value.trim();
            let optional = |v: &str| (v != "none").then(|| PathBuf::from(v));
            match key.trim() {
                "features" => features = Some(PathBuf::from(value)),
                "labels" => labels = Some(optional(value)),
                "thumbnails" => thumbnails = Some(optional(value)),
                "classes" => {
                    classes = Some(value.parse::<usize>().map_err(|_| {
                        Error::format(path, idx + 1, format!("classes must be a non-negative integer, got `{value}`"))
                    })?)
                }
                other => return Err(Error::format(path, idx + 1, format!("unknown key `{other}`"))),
            }
        }
        Ok(Self {
            features: features.ok_or_else(|| Error::format(path, 0, "missing `features` key"))?,
            labels: labels.unwrap_or(None),
            classes: classes.ok_or_else(|| Error::format(path, 0, "missing `classes` key"))?,
            thumbnails: thumbnails.unwrap_or(None),
        })
    }

    pub fn render(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string());
        format!(
            "features={}\nlabels={}\nclasses={}\nthumbnails={}\n",
            self.features.display(),
            opt(&self.labels),
            self.classes,
            opt(&self.thumbnails)
        )
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub features: FeatureMatrix,
    pub n_classes: usize,
    pub thumbnails: Option<PathBuf>,
}

impl Dataset {
    pub fn new(features: FeatureMatrix, labels: Option<Vec<Label>>, n_classes: usize) -> Result<Self> {
        let n = features.n_samples();
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::RowMismatch { features: n, labels: labels.len(), index: n.min(labels.len()) });
            }
        }
        let samples = (0..n)
            .map(|id| Sample { id, true_label: labels.as_ref().map(|l| l[id]), thumbnail: None })
            .collect();
        let dataset = Self { samples, features, n_classes, thumbnails: None };
        dataset.validate()?;
        Ok(dataset)
    }

    fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if let Some(label) = s.true_label {
                if label >= self.n_classes {
                    return Err(Error::LabelOutOfRange { id: s.id, label, n_classes: self.n_classes });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_labels(&self) -> bool {
        self.samples.iter().all(|s| s.true_label.is_some())
    }

    /// Ground truth for every sample, or an error naming `purpose`.
    pub fn labels(&self, purpose: &'static str) -> Result<Vec<Label>> {
        self.samples
            .iter()
            .map(|s| s.true_label.ok_or(Error::MissingLabels(purpose)))
            .collect()
    }

    pub fn with_features(&self, features: FeatureMatrix) -> Result<Self> {
        if features.n_samples() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), actual: features.n_samples() });
        }
        Ok(Self { features, ..self.clone() })
    }

    /// Short content hash over features and labels; identifies a dataset in reports.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.features.n_samples() as u64).to_le_bytes());
        hasher.update((self.features.n_dims() as u64).to_le_bytes());
        for v in self.features.values() {
            hasher.update(v.to_le_bytes());
        }
        for s in &self.samples {
            hasher.update(s.true_label.map_or(-1i64, |l| l as i64).to_le_bytes());
        }
        hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Writes manifest, features and labels into `dir`. Returns the manifest path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.features.write(&dir.join("features.bin"))?;
        let labels = if self.samples.iter().any(|s| s.true_label.is_some()) {
            let text: String = self
                .samples
                .iter()
                .map(|s| s.true_label.map_or_else(|| "-1\n".to_string(), |l| format!("{l}\n")))
                .collect();
            let path = dir.join("labels.txt");
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Some(PathBuf::from("labels.txt"))
        } else {
            None
        };
        let manifest = Manifest {
            features: PathBuf::from("features.bin"),
            labels,
            classes: self.n_classes,
            // Absolute, so the manifest still resolves thumbnails from its new directory.
            thumbnails: self.thumbnails.as_ref().map(|t| std::path::absolute(t).unwrap_or_else(|_| t.clone())),
        };
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest.render()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn read_labels(path: &Path) -> Result<Vec<Option<Label>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let v: i64 = line
                .trim()
                .parse()
                .map_err(|_| Error::format(path, i + 1, format!("expected an integer label, got `{line}`")))?;
            match v {
                -1 => Ok(None),
                v if v >= 0 => Ok(Some(v as Label)),
                v => Err(Error::format(path, i + 1, format!("label {v} is negative"))),
            }
        })
        .collect()
}

/// Loads a dataset from its manifest. Sample ids are `0..N`.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = Manifest::parse(manifest_path, &text)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let features = FeatureMatrix::read(&base.join(&manifest.features))?;
    let n = features.n_samples();

    let labels = match &manifest.labels {
        Some(p) => {
            let labels = read_labels(&base.join(p))?;
            if labels.len() != n {
                return Err(Error::RowMismatch { features: n, labels: labels.len(), index: n.min(labels.len()) });
            }
            labels
        }
        None => vec![None; n],
    };
    let thumbnails = manifest.thumbnails.as_ref().map(|t| base.join(t));
    let samples = labels
        .into_iter()
        .enumerate()
        .map(|(id, true_label)| Sample {
            id,
            true_label,
            thumbnail: thumbnails.as_ref().map(|d| d.join(format!("{id}.png"))),
        })
        .collect();
    let dataset = Dataset { samples, features, n_classes: manifest.classes, thumbnails };
    dataset.validate()?;
    Ok(dataset)
}
