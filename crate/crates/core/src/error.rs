use thiserror::Error;

pub type Result<T> = std::result::Result<T, FdrError>;

/// Which stage of the analysis raised an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Density,
    Null,
    Fdr,
    Power,
    Accuracy,
    Simulate,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Ingest => "ingest",
            Stage::Density => "density",
            Stage::Null => "null_estimation",
            Stage::Fdr => "fdr",
            Stage::Power => "power",
            Stage::Accuracy => "accuracy",
            Stage::Simulate => "simulate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum FdrError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate histogram: {0}")]
    DegenerateHistogram(String),

    #[error("ill-conditioned {stage} system: {detail}")]
    Conditioning { stage: Stage, detail: String },

    #[error("{stage} iteration did not converge after {iterations} iterations (last objective {last_objective:.6e})")]
    NonConvergence {
        stage: Stage,
        iterations: usize,
        last_objective: f64,
        /// Objective value (deviance or negative log-likelihood) per iteration.
        trace: Vec<f64>,
        last_iterate: Vec<f64>,
    },

    #[error("no central null peak: quadratic coefficient {beta2:.4e} is not negative")]
    NoNullPeak { beta2: f64 },

    #[error("degenerate null: fitted sigma0 = {sigma0:.3e}")]
    DegenerateNull { sigma0: f64 },

    #[error("no nonnull mass: fdr is identically 1")]
    NoNonnullMass,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl FdrError {
    /// Module the error originates from, for user-facing reports.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            FdrError::Conditioning { stage, .. } | FdrError::NonConvergence { stage, .. } => {
                Some(*stage)
            }
            FdrError::NoNullPeak { .. } | FdrError::DegenerateNull { .. } => Some(Stage::Null),
            FdrError::NoNonnullMass => Some(Stage::Power),
            FdrError::DegenerateHistogram(_) => Some(Stage::Ingest),
            _ => None,
        }
    }

    /// True for failures of a numerical routine rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            FdrError::Conditioning { .. }
                | FdrError::NonConvergence { .. }
                | FdrError::NoNullPeak { .. }
                | FdrError::DegenerateNull { .. }
                | FdrError::NoNonnullMass
        )
    }
}
