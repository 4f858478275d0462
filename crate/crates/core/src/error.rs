use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A shape is malformed on its own (zero extent, wrong rank, odd GLU axis...).
    InvalidShape {
        op: &'static str,
        reason: String,
    },
    /// A convolution or stage would produce no output frames.
    EmptyOutput {
        op: &'static str,
        len: usize,
        kernel: usize,
    },
    /// A reduction stage collapsed an utterance to zero frames.
    DegenerateInput {
        utterance: usize,
        stage: usize,
    },
    /// Upsampled and skip branches cannot be aligned.
    Alignment {
        upsampled: usize,
        skip: usize,
    },
    /// Reduction policy text could not be parsed.
    Policy {
        position: usize,
        reason: String,
    },
    /// Encoder or layer configuration is invalid.
    Config(String),
    /// A `key=value` configuration line could not be parsed.
    Parse {
        line: usize,
        reason: String,
    },
    /// CTC targets cannot be aligned to the available output frames.
    Infeasible {
        frames: usize,
        labels: usize,
        required: usize,
    },
    /// A label is out of range or equals the blank index.
    Label {
        label: usize,
        vocab: usize,
    },
    /// Tape misuse, e.g. running backward twice.
    TapeState(&'static str),
    /// Checkpoint decoding failures.
    BadMagic,
    UnsupportedVersion(u32),
    Truncated {
        needed: usize,
        available: usize,
    },
    UnknownTensor(String),
    MissingTensor(String),
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    /// Input audio/features are too short for analysis.
    TooShort {
        len: usize,
        min: usize,
    },
    /// No trainable utterances remain after feasibility filtering.
    EmptyDataset {
        dropped: usize,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Shape { op, lhs, rhs } => {
                write!(f, "{op}: dimension mismatch between {lhs:?} and {rhs:?}")
            }
            Self::InvalidShape { op, reason } => write!(f, "{op}: invalid shape: {reason}"),
            Self::EmptyOutput { op, len, kernel } => write!(
                f,
                "{op}: padded length {len} is shorter than kernel {kernel}, output would be empty"
            ),
            Self::DegenerateInput { utterance, stage } => {
                write!(f, "utterance {utterance} has zero frames at stage {stage}")
            }
            Self::Alignment { upsampled, skip } => {
                write!(f, "cannot align upsampled length {upsampled} with skip length {skip}")
            }
            Self::Policy { position, reason } => {
                write!(f, "invalid reduction policy at position {position}: {reason}")
            }
            Self::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Self::Parse { line, reason } => write!(f, "line {line}: {reason}"),
            Self::Infeasible {
                frames,
                labels,
                required,
            } => write!(
                f,
                "CTC infeasible: {frames} output frames for {labels} labels (needs {required})"
            ),
            Self::Label { label, vocab } => {
                write!(
                    f,
                    "label {label} is not a non-blank index of a {vocab}-entry vocabulary"
                )
            }
            Self::TapeState(msg) => write!(f, "tape state error: {msg}"),
            Self::BadMagic => write!(f, "bad magic"),
            Self::UnsupportedVersion(v) => write!(f, "unsupported checkpoint version {v}"),
            Self::Truncated { needed, available } => write!(
                f,
                "truncated checkpoint: needed {needed} more bytes, {available} available"
            ),
            Self::UnknownTensor(name) => write!(f, "unknown tensor '{name}'"),
            Self::MissingTensor(name) => write!(f, "missing tensor '{name}'"),
            Self::TensorShape { name, expected, found } => {
                write!(f, "tensor '{name}' has shape {found:?}, expected {expected:?}")
            }
            Self::TooShort { len, min } => {
                write!(f, "input too short: {len} samples/frames, need at least {min}")
            }
            Self::EmptyDataset { dropped } => {
                write!(f, "no feasible utterances to train on ({dropped} dropped)")
            }
        }
    }
}

impl core::error::Error for Error {}
