use std::fmt;

use dmlm_core::corpus::CorpusError;
use dmlm_core::geneval::GenError;
use dmlm_core::mixture::MixtureError;
use dmlm_core::training::TrainError;

/// A command failure together with the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unreadable or malformed files: exit 2.
    Input(anyhow::Error),
    /// A request the model or pipeline contract forbids: exit 3.
    Contract(anyhow::Error),
    /// Anything else: exit 1.
    Internal(anyhow::Error),
}

pub type CmdResult<T = ()> = Result<T, Failure>;

impl Failure {
    pub fn input(msg: impl fmt::Display) -> Self {
        Failure::Input(anyhow::anyhow!("{msg}"))
    }

    pub fn contract(msg: impl fmt::Display) -> Self {
        Failure::Contract(anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Contract(_) => 3,
            Failure::Internal(_) => 1,
        }
    }

    pub fn context(self, ctx: impl fmt::Display) -> Self {
        let wrap = |e: anyhow::Error| e.context(ctx.to_string());
        match self {
            Failure::Input(e) => Failure::Input(wrap(e)),
            Failure::Contract(e) => Failure::Contract(wrap(e)),
            Failure::Internal(e) => Failure::Internal(wrap(e)),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (Failure::Input(e) | Failure::Contract(e) | Failure::Internal(e)) = self;
        write!(f, "{e:#}")
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        Failure::Input(e.into())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::PhaseOrderViolation(_) => Failure::Contract(e.into()),
            TrainError::InvalidConfig(_)
            | TrainError::Io { .. }
            | TrainError::Format(_)
            | TrainError::EmptyBatch => Failure::Input(e.into()),
            _ => Failure::Internal(e.into()),
        }
    }
}

impl From<MixtureError> for Failure {
    fn from(e: MixtureError) -> Self {
        match e {
            MixtureError::Unsupported(_) => Failure::Contract(e.into()),
            MixtureError::Model(_) => Failure::Input(e.into()),
            _ => Failure::Internal(e.into()),
        }
    }
}

impl From<GenError> for Failure {
    fn from(e: GenError) -> Self {
        match e {
            GenError::Mixture(m) => m.into(),
            GenError::Train(t) => t.into(),
            GenError::DegenerateDistribution => Failure::Internal(e.into()),
            _ => Failure::Input(e.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.into())
    }
}
