use std::fmt;
use std::io;

/// Errors raised anywhere in the diagnosis pipeline.
#[derive(Debug)]
pub enum Error {
    /// Segment index outside the recorded signal.
    SegmentBounds { index: usize, needed: usize, available: usize },
    /// Signal too short to hold a single one-second segment.
    TooShort { len: usize, sample_rate: u32 },
    /// All-zero input where a norm is required.
    DegenerateSegment,
    /// Frequency outside the range representable with the configured component count.
    FrequencyRange { hz: f64, max_hz: f64 },
    /// Tensor or sequence shapes do not line up.
    Shape(String),
    /// Invalid configuration value.
    Config(String),
    /// Class label outside `[0, classes)`.
    Label { label: usize, classes: usize },
    /// Reference insertion violated the fault-free / training-only rule.
    RejectedReference(String),
    /// No fault-free reference exists for the requested condition.
    MissingReference { condition: usize },
    /// Store, manifest, or checkpoint could not be restored.
    Persistence(String),
    /// Binary payload failed validation.
    Format(String),
    /// Dataset is empty or unusable for training.
    Data(String),
    Io(io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::SegmentBounds { index, needed, available } => write!(
                f,
                "segment {index} needs {needed} samples but only {available} are available"
            ),
            Error::TooShort { len, sample_rate } => write!(
                f,
                "signal of {len} samples is shorter than one second at {sample_rate} Hz"
            ),
            Error::DegenerateSegment => write!(f, "degenerate segment: all-zero input cannot be normalized"),
            Error::FrequencyRange { hz, max_hz } => {
                write!(f, "frequency {hz} Hz outside representable range [0, {max_hz}] Hz")
            }
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Label { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Error::RejectedReference(msg) => write!(f, "rejected reference: {msg}"),
            Error::MissingReference { condition } => write!(
                f,
                "no fault-free reference recorded for working condition {condition}; \
                 a healthy signal under the same working condition must be collected first"
            ),
            Error::Persistence(msg) => write!(f, "persistence error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io(err)
    }
}
