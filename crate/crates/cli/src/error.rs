use diffformer::data::DataError;
use diffformer::metrics::MetricsError;
use diffformer::model::ModelError;
use diffformer::tensor::TensorError;
use diffformer::train::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{stage}: {message}")]
    Data { stage: &'static str, message: String },
    #[error("{stage}: numeric failure: {message}")]
    Numeric { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data { .. } => 2,
            CliError::Numeric { .. } => 3,
        }
    }

    pub fn data(stage: &'static str, err: impl std::fmt::Display) -> Self {
        CliError::Data {
            stage,
            message: err.to_string(),
        }
    }
}

/// Attaches the pipeline stage to a library error.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

fn classify_tensor(stage: &'static str, e: &TensorError) -> CliError {
    match e {
        TensorError::NonFinite { .. } => CliError::Numeric {
            stage,
            message: e.to_string(),
        },
        _ => CliError::data(stage, e),
    }
}

impl<T> Stage<T> for Result<T, TrainError> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|e| match &e {
            TrainError::NonFinite { .. } => CliError::Numeric {
                stage,
                message: e.to_string(),
            },
            TrainError::Tensor(t) | TrainError::Model(ModelError::Tensor(t)) => classify_tensor(stage, t),
            TrainError::Config(_) | TrainError::Model(ModelError::Config(_)) => {
                CliError::Usage(format!("{stage}: {e}"))
            }
            _ => CliError::data(stage, e),
        })
    }
}

impl<T> Stage<T> for Result<T, ModelError> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(TrainError::Model).stage(stage)
    }
}

impl<T> Stage<T> for Result<T, DataError> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::data(stage, e))
    }
}

impl<T> Stage<T> for Result<T, MetricsError> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::data(stage, e))
    }
}

impl<T> Stage<T> for Result<T, std::io::Error> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::data(stage, e))
    }
}
