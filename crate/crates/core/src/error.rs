use std::io;
use std::path::PathBuf;

use crate::SampleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the workbench can report.
///
/// Variants are grouped by [`ErrorClass`] so front ends can map them onto
/// exit statuses or HTTP codes without matching on every case.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}:{line}: {message}", path.display())]
    Format { path: PathBuf, line: usize, message: String },

    #[error("row {row}, column {col}: non-finite feature value")]
    NonFinite { row: usize, col: usize },

    #[error("label file has {labels} rows but feature file has {features} (first unmatched index {index})")]
    RowMismatch { features: usize, labels: usize, index: usize },

    #[error("sample {id}: label {label} is outside the {n_classes} declared classes")]
    LabelOutOfRange { id: SampleId, label: usize, n_classes: usize },

    #[error("class {class} has {count} members; stratified splitting needs at least 3")]
    ClassTooSmall { class: usize, count: usize },

    #[error("ground-truth labels are required to {0}")]
    MissingLabels(&'static str),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite coordinate at iteration {iteration}; learning rate too high?")]
    Diverged { iteration: usize },

    #[error("root set is empty")]
    EmptyRoots,

    #[error("supervision covers a single class; confidence is undefined")]
    SingleClassSupervision,

    #[error("training set covers a single class")]
    SingleClassTraining,

    #[error("training set is empty")]
    EmptyTraining,

    #[error("sample {0} is auto-labeled")]
    AutoLabeled(SampleId),

    #[error("sample {0} is not an unsupervised sample of this session")]
    NotUnsupervised(SampleId),

    #[error("label {label} is not a declared class (classes: {n_classes})")]
    UnknownLabel { label: usize, n_classes: usize },

    #[error("session is finalized")]
    Finalized,

    #[error("nothing to undo")]
    EmptyHistory,

    #[error("threshold {0} outside [0, 1]")]
    InvalidTau(f64),
}

/// Coarse failure classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input data or files.
    Data,
    /// Caller asked for something invalid.
    Usage,
    /// The computation itself failed.
    Runtime,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), line, message: message.into() }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Io { .. } | Format { .. } | NonFinite { .. } | RowMismatch { .. } | LabelOutOfRange { .. }
            | ClassTooSmall { .. } | MissingLabels(_) | DimensionMismatch { .. } => ErrorClass::Data,
            InvalidArgument(_) | AutoLabeled(_) | NotUnsupervised(_) | UnknownLabel { .. } | Finalized
            | EmptyHistory | InvalidTau(_) | EmptyRoots => ErrorClass::Usage,
            Diverged { .. } | SingleClassSupervision | SingleClassTraining | EmptyTraining => {
                ErrorClass::Runtime
            }
        }
    }

    /// Stable machine-readable code, used on the wire.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            Io { .. } => "io_error",
            Format { .. } => "format_error",
            NonFinite { .. } => "non_finite_value",
            RowMismatch { .. } => "row_mismatch",
            LabelOutOfRange { .. } => "label_out_of_range",
            ClassTooSmall { .. } => "class_too_small",
            MissingLabels(_) => "missing_labels",
            DimensionMismatch { .. } => "dimension_mismatch",
            InvalidArgument(_) => "invalid_argument",
            Diverged { .. } => "diverged",
            EmptyRoots => "empty_roots",
            SingleClassSupervision => "single_class_supervision",
            SingleClassTraining => "single_class_training_set",
            EmptyTraining => "empty_training_set",
            AutoLabeled(_) => "auto_labeled_sample",
            NotUnsupervised(_) => "not_unsupervised_sample",
            UnknownLabel { .. } => "unknown_label",
            Finalized => "session_finalized",
            EmptyHistory => "empty_history",
            InvalidTau(_) => "invalid_tau",
        }
    }
}
