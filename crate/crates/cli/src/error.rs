use affine_ltf::factorization::FactorError;
use affine_ltf::riccati::RiccatiError;
use affine_ltf::simulate::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Divergent(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 2,
            CliError::Divergent(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<FactorError> for CliError {
    fn from(e: FactorError) -> Self {
        match e {
            FactorError::Model(m) => CliError::Input(m.to_string()),
            FactorError::Divergent(_) => CliError::Divergent(e.to_string()),
            FactorError::Riccati(r) => r.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<RiccatiError> for CliError {
    fn from(e: RiccatiError) -> Self {
        match e {
            RiccatiError::Model(_)
            | RiccatiError::InvalidHorizon(_)
            | RiccatiError::OutOfRange { .. }
            | RiccatiError::NonPositiveMaturity(_) => CliError::Input(e.to_string()),
            RiccatiError::FiniteExplosion { .. } | RiccatiError::Unbounded { .. } => {
                CliError::Divergent(e.to_string())
            }
            RiccatiError::PriceOverflow { .. } | RiccatiError::Integrator(_) => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Riccati(r) => r.into(),
            SimError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}
