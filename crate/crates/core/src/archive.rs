//! Session archives: a directory holding everything needed to resume an
//! annotation session.
//!
//! ```text
//! session.txt         format, dataset manifest, protocol, seed, classes, status
//! split.txt           S/U/T ids
//! projection.txt      2D coordinates (absent when the session has none)
//! propagation.txt     OPF-Semi labels and confidences for U
//! tau.txt             current threshold
//! manual_labels.txt   `id label` per line
//! ```
//!
//! The undo history is not persisted.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::opf::PropagationResult;
use crate::pipeline::{SessionState, SessionStatus};
use crate::projection::Projection2D;
use crate::split::Split;
use crate::{Label, SampleId};

pub const FORMAT: &str = "salp-session v1";

pub const SESSION_FILE: &str = "session.txt";
pub const SPLIT_FILE: &str = "split.txt";
pub const PROJECTION_FILE: &str = "projection.txt";
pub const PROPAGATION_FILE: &str = "propagation.txt";
pub const TAU_FILE: &str = "tau.txt";
pub const MANUAL_FILE: &str = "manual_labels.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct SessionArchive {
    /// Dataset manifest, exactly as recorded.
    pub dataset: PathBuf,
    pub session: SessionState,
}

impl SessionArchive {
    /// The manifest path with relative paths taken against the archive directory.
    pub fn dataset_path(&self, dir: &Path) -> PathBuf {
        if self.dataset.is_absolute() { self.dataset.clone() } else { dir.join(&self.dataset) }
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn read(dir: &Path, name: &str) -> Result<(PathBuf, String)> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok((path, text))
}

pub fn render_manual_labels(labels: &BTreeMap<SampleId, Label>) -> String {
    labels.iter().fold(String::new(), |mut out, (id, l)| {
        writeln!(out, "{id} {l}").unwrap();
        out
    })
}

pub fn parse_manual_labels(path: &Path, text: &str) -> Result<BTreeMap<SampleId, Label>> {
    let mut labels = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::format(path, idx + 1, format!("expected `id label`, got `{line}`"));
        let (id, label) = line.trim().split_once(char::is_whitespace).ok_or_else(bad)?;
        let id: SampleId = id.parse().map_err(|_| bad())?;
        let label: Label = label.trim().parse().map_err(|_| bad())?;
        if labels.insert(id, label).is_some() {
            return Err(Error::format(path, idx + 1, format!("sample {id} labeled twice")));
        }
    }
    Ok(labels)
}

pub fn save_archive(dir: &Path, archive: &SessionArchive) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = &archive.session;
    let meta = format!(
        "format={FORMAT}\ndataset={}\nprotocol={}\nseed={}\nclasses={}\nstatus={}\n",
        archive.dataset.display(),
        s.protocol(),
        s.seed(),
        s.n_classes(),
        s.status().name()
    );
    write(dir, SESSION_FILE, &meta)?;
    write(dir, SPLIT_FILE, &s.split().render())?;
    let projection = dir.join(PROJECTION_FILE);
    match s.projection() {
        Some(p) => p.write(&projection)?,
        None if projection.exists() => fs::remove_file(&projection).map_err(|e| Error::io(&projection, e))?,
        None => {}
    }
    write(dir, PROPAGATION_FILE, &s.propagation().render())?;
    write(dir, TAU_FILE, &format!("{}\n", s.tau()))?;
    write(dir, MANUAL_FILE, &render_manual_labels(s.manual_labels()))
}

pub fn load_archive(dir: &Path) -> Result<SessionArchive> {
    let (path, meta) = read(dir, SESSION_FILE)?;
    let mut fields: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (idx, line) in meta.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::format(&path, idx + 1, "expected `key=value`"))?;
        fields.insert(k.trim(), (idx + 1, v.trim()));
    }
    let field = |key: &str| fields.get(key).copied().ok_or_else(|| Error::format(&path, 0, format!("missing `{key}`")));
    let parsed = |key: &str| -> Result<(usize, &str)> { field(key) };
    let (line, format) = parsed("format")?;
    if format != FORMAT {
        return Err(Error::format(&path, line, format!("unsupported archive format `{format}`")));
    }
    let (_, dataset) = field("dataset")?;
    let (line, protocol) = field("protocol")?;
    let protocol = protocol.parse().map_err(|e: Error| Error::format(&path, line, e.to_string()))?;
    let (line, seed) = field("seed")?;
    let seed = seed.parse().map_err(|_| Error::format(&path, line, format!("bad seed `{seed}`")))?;
    let (line, classes) = field("classes")?;
    let n_classes = classes.parse().map_err(|_| Error::format(&path, line, format!("bad class count `{classes}`")))?;
    let (line, status) = field("status")?;
    let status = match status {
        "open" => SessionStatus::Open,
        "finalized" => SessionStatus::Finalized,
        other => return Err(Error::format(&path, line, format!("unknown status `{other}`"))),
    };

    let (split_path, split) = read(dir, SPLIT_FILE)?;
    let split = Split::parse(&split_path, &split)?;
    let projection_path = dir.join(PROJECTION_FILE);
    let projection = if projection_path.exists() { Some(Projection2D::read(&projection_path)?) } else { None };
    let (prop_path, prop) = read(dir, PROPAGATION_FILE)?;
    let propagation = PropagationResult::parse(&prop_path, &prop)?;
    let (tau_path, tau) = read(dir, TAU_FILE)?;
    let tau: f64 = tau.trim().parse().map_err(|_| Error::format(&tau_path, 1, format!("bad threshold `{}`", tau.trim())))?;
    let (manual_path, manual) = read(dir, MANUAL_FILE)?;
    let manual = parse_manual_labels(&manual_path, &manual)?;

    // Attribute consistency failures to the file that carries the offending data.
    let session = SessionState::restore(protocol, n_classes, seed, split, projection, propagation, tau, manual, status)
        .map_err(|e| {
            let culprit = match &e {
                Error::InvalidTau(_) => &tau_path,
                Error::AutoLabeled(_) | Error::NotUnsupervised(_) | Error::UnknownLabel { .. } => &manual_path,
                _ => &prop_path,
            };
            Error::format(culprit, 0, e.to_string())
        })?;
    Ok(SessionArchive { dataset: PathBuf::from(dataset), session })
}
