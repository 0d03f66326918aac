use std::process::ExitCode;

use panosense::calib::CalibError;
use panosense::dataio::DataError;
use panosense::fusion::FusionError;
use panosense::occupancy::OccupancyError;
use panosense::optim::OptimError;
use panosense::polarization::PolarizationError;
use panosense::raster::RasterError;
use panosense::signal::SignalError;

/// Failure of a command, classified by the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Missing or unreadable files, malformed input, bad flags.
    #[error("{0}")]
    Input(String),
    /// Input that is well formed but cannot determine a solution.
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// The solver hit its iteration limit. Outputs were still written.
    #[error("solver did not converge: {0}")]
    NotConverged(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Degenerate(_) => 2,
            CliError::NotConverged(_) => 3,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

impl From<CalibError> for CliError {
    fn from(e: CalibError) -> Self {
        let degenerate = e.is_degenerate()
            || matches!(
                e,
                CalibError::Geometry(_)
                    | CalibError::Optim(OptimError::SingularNormalEquations { .. } | OptimError::NonFiniteResidual)
            );
        if degenerate {
            CliError::Degenerate(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

macro_rules! input_error {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Input(e.to_string())
            }
        })*
    };
}

input_error!(
    DataError,
    FusionError,
    OccupancyError,
    PolarizationError,
    RasterError,
    SignalError,
    panosense::GeometryError,
    std::io::Error,
    serde_json::Error
);
