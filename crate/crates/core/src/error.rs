use thiserror::Error;

/// Errors raised by the numeric core: belief arithmetic, tasks, and the
/// generation loop.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid belief: {0}")]
    InvalidBelief(String),

    #[error("belief over space `{found}` used with space `{expected}`")]
    SpaceMismatch { expected: String, found: String },

    #[error("example ({x}, {y}) is outside the task's input/output range")]
    ExampleOutOfRange { x: usize, y: usize },

    #[error("data contradicts every hypothesis")]
    Contradiction,

    #[error("inconsistent examples: {0}")]
    InconsistentExamples(String),

    #[error("infeasible effective set")]
    InfeasibleEffectiveSet,

    #[error("effective set misuse: {0}")]
    EffectiveSetMisuse(&'static str),

    #[error("filter excludes entire pool")]
    EmptyPoolWeighting,

    #[error("generation {generation} aborted: {source}")]
    GenerationAborted {
        generation: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("EM iterates entered a cycle: {0:?}")]
    EmCycle(Vec<usize>),

    #[error("agent error: {0}")]
    Agent(String),

    #[error("chat error: {0}")]
    Chat(#[from] crate::agent::chat::ChatError),

    #[error("empty stratum: no {0} words available")]
    EmptyStratum(&'static str),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
