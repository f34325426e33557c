use alloc::string::String;

/// Errors raised by the learning core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged: non-finite value in {loss}")]
    Divergence { loss: &'static str },
    #[error("action component {index} = {value} lies on or outside the open action interval")]
    Boundary { index: usize, value: f64 },
    #[error("environment used after the episode finished; call reset first")]
    EpisodeFinished,
    #[error("replay buffer holds {size} transitions, {requested} requested")]
    NotReady { size: usize, requested: usize },
    #[error("variance needs at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("trajectory enumeration exceeded the cap of {0} branches")]
    EnumerationCap(usize),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
