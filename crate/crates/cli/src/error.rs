use diffdec_core::corpus::CorpusError;
use diffdec_core::diffusion::DiffusionError;
use diffdec_core::metrics::MetricsError;
use diffdec_core::nets::NetsError;
use diffdec_core::oracle::OracleError;
use diffdec_core::sampler::SamplerError;
use diffdec_core::tensor::TensorError;
use diffdec_core::train::TrainError;
use thiserror::Error;

/// Command failures, bucketed by exit code: 1 usage/config, 2 failed
/// verification, 3 numerical breakdown.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Verification(String),
    #[error("{0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Verification(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> CliError {
        CliError::Usage(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> CliError {
        CliError::Usage(e.to_string())
    }
}

impl From<NetsError> for CliError {
    fn from(e: NetsError) -> CliError {
        CliError::Usage(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> CliError {
        match e {
            TensorError::NonFinite { .. } | TensorError::NonFiniteGrad { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> CliError {
        match e {
            DiffusionError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            DiffusionError::Tensor(t) => t.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> CliError {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
            TrainError::Tensor(t) => t.into(),
            TrainError::Diffusion(d) => d.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> CliError {
        match e {
            SamplerError::DenoiserFailure { .. } => CliError::Numerical(e.to_string()),
            SamplerError::Diffusion(d) => d.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> CliError {
        match e {
            OracleError::VerificationFailed { .. } | OracleError::RouteDisagreement { .. } => {
                CliError::Verification(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> CliError {
        match e {
            // a run that produced nothing scoreable is a numerical
            // failure of the pipeline, not a flag mistake
            MetricsError::EmptySampleSet | MetricsError::ZeroNgrams { .. } => {
                CliError::Numerical(e.to_string())
            }
            MetricsError::Nets(n) => n.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}
