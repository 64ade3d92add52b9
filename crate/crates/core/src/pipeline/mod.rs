//! The annotation workflow: split, embed, propagate, threshold, label, train, evaluate.

mod experiment;
mod report;
mod session;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::data::{FeatureMatrix, Sample};
use crate::error::{Error, Result};
use crate::opf::{opf_semi_propagate, DistanceMatrix, PropagationResult};
use crate::split::Split;
use crate::SampleId;

pub use experiment::{prepare_latent, run_experiment, run_protocols, ExperimentParams, ExperimentResult};
pub use report::{
    parse_report, render_lines, render_report, render_table, summarize, EvaluationReport, ReportFile, Summary,
    REPORT_HEADER,
};
pub use session::{
    HistoryEntry, SessionState, SessionStatus, SharedSession, ThresholdOutcome, UserPolicy, DEFAULT_TAU,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    /// Train on S alone.
    Nlp,
    /// Accept every OPF-Semi label computed in the 2D projection.
    Alp2d,
    /// Accept every OPF-Semi label computed in the latent space.
    AlpNd,
    /// No automatic labels; the user labels U directly.
    Ilp,
    /// Accept confident 2D labels, the user handles the rest.
    Salp,
}

impl Protocol {
    pub const ALL: [Protocol; 5] = [Protocol::Nlp, Protocol::Alp2d, Protocol::AlpNd, Protocol::Ilp, Protocol::Salp];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Nlp => "NLP",
            Protocol::Alp2d => "ALP-2D",
            Protocol::AlpNd => "ALP-nD",
            Protocol::Ilp => "ILP",
            Protocol::Salp => "SALP",
        }
    }

    /// Space OPF-Semi runs in, if the protocol propagates at all.
    pub fn space(self) -> Option<Space> {
        match self {
            Protocol::Alp2d | Protocol::Salp => Some(Space::Projection),
            Protocol::AlpNd => Some(Space::Latent),
            Protocol::Nlp | Protocol::Ilp => None,
        }
    }

    pub fn takes_manual_labels(self) -> bool {
        matches!(self, Protocol::Salp | Protocol::Ilp)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nlp" => Ok(Protocol::Nlp),
            "alp2d" | "alp-2d" => Ok(Protocol::Alp2d),
            "alpnd" | "alp-nd" => Ok(Protocol::AlpNd),
            "ilp" => Ok(Protocol::Ilp),
            "salp" => Ok(Protocol::Salp),
            _ => Err(Error::InvalidArgument(format!("unknown protocol `{s}` (nlp, alp2d, alpnd, ilp, salp)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    Projection,
    Latent,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Projection => "2d",
            Space::Latent => "nd",
        }
    }
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2d" => Ok(Space::Projection),
            "nd" => Ok(Space::Latent),
            _ => Err(Error::InvalidArgument(format!("unknown space `{s}` (2d, nd)"))),
        }
    }
}

/// Auto-accepted ids (`confidence >= tau`) and the residue.
pub fn threshold_split(propagation: &PropagationResult, tau: f64) -> Result<(BTreeSet<SampleId>, BTreeSet<SampleId>)> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidTau(tau));
    }
    let mut auto = BTreeSet::new();
    let mut residue = BTreeSet::new();
    for s in &propagation.samples {
        if s.confidence >= tau { &mut auto } else { &mut residue }.insert(s.id);
    }
    Ok((auto, residue))
}

const DISTANCE_CACHE_LIMIT: usize = 6000;

/// OPF-Semi from S to U over `points`, whose row `r` holds sample `row_ids[r]`.
/// The result is keyed by sample id.
pub fn propagate(points: &FeatureMatrix, row_ids: &[SampleId], split: &Split, samples: &[Sample]) -> Result<PropagationResult> {
    if row_ids.len() != points.n_samples() {
        return Err(Error::DimensionMismatch { expected: points.n_samples(), actual: row_ids.len() });
    }
    let mut row_of = std::collections::HashMap::with_capacity(row_ids.len());
    for (r, &id) in row_ids.iter().enumerate() {
        row_of.insert(id, r);
    }
    let lookup = |id: SampleId| {
        row_of.get(&id).copied().ok_or_else(|| Error::InvalidArgument(format!("sample {id} has no row in the propagation space")))
    };
    let supervised = split
        .s_ids
        .iter()
        .map(|&id| {
            let label = samples.get(id).and_then(|s| s.true_label).ok_or(Error::MissingLabels("propagate from S"))?;
            Ok((lookup(id)?, label))
        })
        .collect::<Result<Vec<_>>>()?;
    let unsupervised = split.u_ids.iter().map(|&id| lookup(id)).collect::<Result<Vec<_>>>()?;
    let covered = supervised.len() + unsupervised.len();
    let (metric, supervised, unsupervised, rows) = if covered == points.n_samples() {
        (std::borrow::Cow::Borrowed(points), supervised, unsupervised, row_ids.to_vec())
    } else {
        // Restrict to S and U when the space also holds other samples.
        let keep: Vec<usize> = supervised.iter().map(|(r, _)| *r).chain(unsupervised.iter().copied()).collect();
        let sub = points.select_rows(&keep)?;
        let n_s = supervised.len();
        let sup = supervised.iter().enumerate().map(|(i, (_, l))| (i, *l)).collect();
        let uns = (n_s..keep.len()).collect();
        (std::borrow::Cow::Owned(sub), sup, uns, keep.iter().map(|&r| row_ids[r]).collect())
    };
    // One forest per class revisits every pair, so cache distances that are costly to recompute.
    let mut result = if metric.n_dims() > 2 && metric.n_samples() <= DISTANCE_CACHE_LIMIT {
        opf_semi_propagate(&DistanceMatrix::euclidean(&metric), &supervised, &unsupervised)?
    } else {
        opf_semi_propagate(metric.as_ref(), &supervised, &unsupervised)?
    };
    for s in &mut result.samples {
        s.id = rows[s.id];
    }
    result.samples.sort_by_key(|s| s.id);
    Ok(result)
}
