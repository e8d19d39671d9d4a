use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not conform for the named operation.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// Backward was requested from a non-scalar node.
    NonScalarRoot { shape: Vec<usize> },
    /// A vector had the wrong dimension.
    Dimension { expected: usize, found: usize },
    /// A value that must be finite was not.
    NonFinite { context: &'static str },
    /// Not enough samples for the requested operation.
    TooFewSamples {
        context: &'static str,
        needed: usize,
        found: usize,
    },
    /// Two aligned sequences differ in length.
    LengthMismatch { left: usize, right: usize },
    /// Both classes are required but only one is present.
    SingleClass,
    InvalidArgument(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => {
                write!(f, "shape mismatch in {op}: {lhs:?} vs {rhs:?}")
            }
            Error::NonScalarRoot { shape } => {
                write!(f, "backward requires a scalar root, got shape {shape:?}")
            }
            Error::Dimension { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::TooFewSamples {
                context,
                needed,
                found,
            } => write!(f, "{context}: need at least {needed} samples, found {found}"),
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::SingleClass => write!(f, "both nominal and anomalous samples are required"),
            Error::InvalidArgument(msg) => f.write_str(msg),
        }
    }
}

impl core::error::Error for Error {}
