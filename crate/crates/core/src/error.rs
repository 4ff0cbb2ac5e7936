use thiserror::Error;

use crate::model::{RequestId, Step};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("lifetime steps are 1-indexed; step 0 is not a decode step")]
    ZeroLifetimeStep,

    #[error("load vector is empty")]
    EmptyLoads,

    #[error("invalid request {id}: {reason}")]
    InvalidRequest { id: RequestId, reason: String },

    #[error("discount factor must lie in (0, 1], got {0}")]
    InvalidDiscount(f64),

    #[error("margin vector has {margins} entries but discount vector has {discount}")]
    LengthMismatch { margins: usize, discount: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("active request {0} has no cached prediction")]
    MissingPrediction(RequestId),

    #[error("window sum {sum} exceeds the bitset bound {bound}")]
    SumBound { sum: u64, bound: u64 },

    #[error("window holds {size} candidates, more than the supported {max}")]
    WindowTooLarge { size: usize, max: usize },

    #[error("output history is empty")]
    EmptyHistory,

    #[error("power-of-two-choices needs at least two workers, got {0}")]
    TooFewWorkers(usize),

    #[error("record list is empty")]
    NoRecords,

    #[error("trace is not sorted by arrival step at request {0}")]
    UnsortedTrace(RequestId),

    #[error("duplicate request id {0}")]
    DuplicateId(RequestId),

    #[error("invalid dispatch at step {step}: {reason}")]
    InvalidDispatch { step: Step, reason: String },

    #[error("run hit the {max_steps}-step cap with {outstanding} requests outstanding")]
    NonTermination { max_steps: Step, outstanding: usize },
}
