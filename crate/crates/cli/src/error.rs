use std::fmt;

use glvreduce_core::algebraic::AlgebraicError;
use glvreduce_core::integrate::IntegrationError;
use glvreduce_core::memory::ReductionError;
use glvreduce_core::model::ModelError;
use glvreduce_core::reducibility::ReducibilityError;
use glvreduce_core::verify::CompareError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;
pub const EXIT_INFEASIBLE: i32 = 5;
pub const EXIT_CONVERGENCE: i32 = 6;
pub const EXIT_IO: i32 = 7;
pub const EXIT_INTEGRATION: i32 = 8;
pub const EXIT_INTEGRITY: i32 = 9;
pub const EXIT_BUDGET: i32 = 10;

pub const EXIT_CODES_HELP: &str = "\
Exit codes:
  0   success / verification passed
  1   verification ran but a tolerance was exceeded
  2   usage error (bad flags, dt > t_end, ...)
  3   parse error in an input file
  4   model validation failed
  5   reduction infeasible (required zeros nonzero or zero pivot)
  6   fixed-point iteration did not converge
  7   I/O error
  8   integration failure (positivity breach, singular pivot, non-finite value)
  9   reduced-system integrity error
  10  ordering search exceeds the exhaustive limit (pass --heuristic)";

#[derive(Debug)]
pub enum CliError {
    Failed(String),
    Usage(String),
    Parse(String),
    Validation(String),
    Infeasible(String),
    Convergence(String),
    Io(String),
    Integration(String),
    Integrity(String),
    Budget(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            Self::Failed(_) => EXIT_FAILED,
            Self::Usage(_) => EXIT_USAGE,
            Self::Parse(_) => EXIT_PARSE,
            Self::Validation(_) => EXIT_VALIDATION,
            Self::Infeasible(_) => EXIT_INFEASIBLE,
            Self::Convergence(_) => EXIT_CONVERGENCE,
            Self::Io(_) => EXIT_IO,
            Self::Integration(_) => EXIT_INTEGRATION,
            Self::Integrity(_) => EXIT_INTEGRITY,
            Self::Budget(_) => EXIT_BUDGET,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            Self::Failed(m) => ("verification failed", m),
            Self::Usage(m) => ("usage", m),
            Self::Parse(m) => ("parse", m),
            Self::Validation(m) => ("validation", m),
            Self::Infeasible(m) => ("infeasible", m),
            Self::Convergence(m) => ("convergence", m),
            Self::Io(m) => ("io", m),
            Self::Integration(m) => ("integration", m),
            Self::Integrity(m) => ("integrity", m),
            Self::Budget(m) => ("search budget", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Parse { .. } => Self::Parse(e.to_string()),
            ModelError::Dimension(_) | ModelError::Invalid(_) => Self::Validation(e.to_string()),
        }
    }
}

impl From<IntegrationError> for CliError {
    fn from(e: IntegrationError) -> Self {
        match e {
            IntegrationError::Settings(_) | IntegrationError::Range { .. } => Self::Usage(e.to_string()),
            IntegrationError::Positivity { .. } | IntegrationError::NonFinite { .. } => {
                Self::Integration(e.to_string())
            }
        }
    }
}

impl From<ReducibilityError> for CliError {
    fn from(e: ReducibilityError) -> Self {
        match e {
            ReducibilityError::Budget { .. } => Self::Budget(e.to_string()),
            _ => Self::Usage(e.to_string()),
        }
    }
}

impl From<ReductionError> for CliError {
    fn from(e: ReductionError) -> Self {
        match e {
            ReductionError::Infeasible(ref v) => Self::Infeasible(
                v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
            ),
            ReductionError::Singularity { .. } => Self::Integration(e.to_string()),
            ReductionError::Convergence { .. } => Self::Convergence(e.to_string()),
            ReductionError::Integrity(_) => Self::Integrity(e.to_string()),
            ReductionError::Integration(i) => i.into(),
            ReductionError::Plan(p) => p.into(),
            ReductionError::Model(m) => m.into(),
        }
    }
}

impl From<AlgebraicError> for CliError {
    fn from(e: AlgebraicError) -> Self {
        match e {
            AlgebraicError::Contract(_) => Self::Usage(e.to_string()),
            AlgebraicError::NotReducible => Self::Infeasible(e.to_string()),
            AlgebraicError::Singularity(..) => Self::Integration(e.to_string()),
            AlgebraicError::Integration(i) => i.into(),
        }
    }
}

impl From<CompareError> for CliError {
    fn from(e: CompareError) -> Self {
        match e {
            CompareError::Grid(_) => Self::Usage(e.to_string()),
            CompareError::Csv(_) => Self::Parse(e.to_string()),
            CompareError::Algebraic(a) => a.into(),
        }
    }
}
