use hpverify_core::deliberation::DeliberationError;
use hpverify_core::fixtures::FixtureError;
use hpverify_core::instance::InstanceError;
use hpverify_core::model::ModelError;
use hpverify_core::prediction::PredictionError;
use hpverify_core::sampling::SamplingError;
use hpverify_core::stochastic::StochasticError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    /// A theorem's preconditions fail on the instance.
    #[error("not applicable: {0}")]
    Refused(String),
    #[error("invariant breach: {0}")]
    Breach(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Input(_) => 2,
            CliError::Refused(_) => 3,
            CliError::Breach(_) => 4,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<InstanceError> for CliError {
    fn from(e: InstanceError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PredictionError> for CliError {
    fn from(e: PredictionError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DeliberationError> for CliError {
    fn from(e: DeliberationError) -> Self {
        match e {
            DeliberationError::NotApplicable { .. } => CliError::Refused(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<SamplingError> for CliError {
    fn from(e: SamplingError) -> Self {
        match e {
            SamplingError::NotApplicable { .. } | SamplingError::BestTie(_) => {
                CliError::Refused(e.to_string())
            }
            SamplingError::Deliberation(d) => d.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<StochasticError> for CliError {
    fn from(e: StochasticError) -> Self {
        match e {
            StochasticError::NotAbsorbing { .. } => CliError::Breach(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<FixtureError> for CliError {
    fn from(e: FixtureError) -> Self {
        match e {
            FixtureError::Deliberation(d) => d.into(),
            FixtureError::Stochastic(s) => s.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}
