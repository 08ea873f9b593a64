use std::fmt;

use thiserror::Error;

use crate::quantum::Violation;
use crate::tomography::MeasurementSetting;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown polarization label `{0}` (expected one of H, V, D, A, L, R)")]
    UnknownLabel(String),

    #[error("Pauli index {0} out of range (expected 1, 2 or 3)")]
    PauliIndex(usize),

    #[error("vector is not normalized (norm = {norm})")]
    NotNormalized { norm: f64 },

    #[error("matrix is not a physical density matrix: {}", ViolationList(.0))]
    Unphysical(Vec<Violation>),

    #[error("top eigenvalue is degenerate (gap {gap:e}); dominant eigenstate is ambiguous")]
    DegenerateEigenvalue { gap: f64 },

    #[error("incomplete tomography dataset: {}", SettingList(.missing, .duplicated))]
    IncompleteDataset {
        missing: Vec<MeasurementSetting>,
        duplicated: Vec<MeasurementSetting>,
    },

    #[error("all coincidence counts are zero")]
    EmptyCounts,

    #[error("{name} = {value} is outside its valid range {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("CAR is infinite: no accidental coincidences (mu and dark counts both zero)")]
    InfiniteCar,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn out_of_range(name: &'static str, value: f64, range: &'static str) -> Self {
        Error::OutOfRange { name, value, range }
    }
}

struct ViolationList<'a>(&'a [Violation]);

impl fmt::Display for ViolationList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

struct SettingList<'a>(&'a [MeasurementSetting], &'a [MeasurementSetting]);

impl fmt::Display for SettingList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |s: &[MeasurementSetting]| {
            s.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(" ")
        };
        if !self.0.is_empty() {
            write!(f, "missing settings [{}]", join(self.0))?;
        }
        if !self.1.is_empty() {
            if !self.0.is_empty() {
                f.write_str(", ")?;
            }
            write!(f, "duplicated settings [{}]", join(self.1))?;
        }
        Ok(())
    }
}
