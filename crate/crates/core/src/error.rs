use thiserror::Error;

use crate::log::EventLog;
use crate::model::{RequestId, Seconds, UnitId, Violation};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot schedule at t={at} before current clock {now}")]
    ScheduleInPast { at: Seconds, now: Seconds },

    #[error("run requested with an empty schedule")]
    EmptySchedule,

    #[error("event budget of {budget} exceeded at t={clock}")]
    Runaway { budget: u64, clock: Seconds },

    #[error("event at t={at} for request {request} precedes its last event at t={last}")]
    Causality { request: RequestId, at: Seconds, last: Seconds },

    #[error("zero-length or inverted utilization window [{start}, {end}]")]
    EmptyWindow { start: Seconds, end: Seconds },

    #[error("memory capacity of tier must be positive")]
    ZeroCapacity,

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("object {unit} not present in bucket `{bucket}`")]
    MissingObject { bucket: String, unit: UnitId },

    #[error("dequeue from empty queue `{0}`")]
    EmptyQueue(String),

    #[error("request {0} is not completed")]
    NotCompleted(RequestId),

    #[error("request {0} not found in the event log")]
    UnknownRequest(RequestId),

    #[error("invalid pipeline: {}", join(.0))]
    InvalidPipeline(Vec<Violation>),

    #[error("invalid load: {0}")]
    InvalidLoad(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed event log line {line}: {msg}")]
    LogFormat { line: usize, msg: String },

    #[error("missing cells: {}", .0.join(", "))]
    MissingCells(Vec<String>),

    /// A run stopped early; `partial` holds the events logged before the
    /// failure.
    #[error("{cause}")]
    Aborted { cause: Box<SimError>, partial: Box<EventLog> },

    #[error("cell {cell}: {source}")]
    Cell { cell: String, source: Box<SimError> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SimError {
    /// The underlying failure, looking through run and cell wrappers.
    pub fn root(&self) -> &SimError {
        match self {
            SimError::Aborted { cause, .. } => cause.root(),
            SimError::Cell { source, .. } => source.root(),
            other => other,
        }
    }
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
