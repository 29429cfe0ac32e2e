//! Shared domain types: tiers, links, data units, requests, functions,
//! storage units and pipeline topologies.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Virtual time in seconds.
pub type Seconds = f64;

/// Resolution below which two virtual timestamps are considered equal.
pub const TIME_RESOLUTION: Seconds = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TierKind {
    Edge,
    Fog,
    Cloud,
}

impl TierKind {
    pub const ALL: [TierKind; 3] = [TierKind::Edge, TierKind::Fog, TierKind::Cloud];

    pub fn index(self) -> usize {
        match self {
            TierKind::Edge => 0,
            TierKind::Fog => 1,
            TierKind::Cloud => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TierKind::Edge => "edge",
            TierKind::Fog => "fog",
            TierKind::Cloud => "cloud",
        }
    }
}

impl fmt::Display for TierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Compute and storage capacity of one infrastructure layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tier {
    pub kind: TierKind,
    pub cpu_cores: u32,
    /// Bytes.
    pub mem_capacity: u64,
    /// Bytes per second.
    pub disk_read_rate: f64,
    /// Bytes per second.
    pub disk_write_rate: f64,
}

impl Tier {
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.cpu_cores < 1 {
            out.push(Violation::Tier(self.kind, "cpu_cores must be at least 1".into()));
        }
        if !(self.disk_read_rate > 0.0) || !(self.disk_write_rate > 0.0) {
            out.push(Violation::Tier(self.kind, "disk rates must be positive".into()));
        }
        out
    }
}

/// A directed network path between two tiers. `from == to` describes the
/// intra-tier LAN (e.g. broker to function on another fog node).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLink {
    pub from: TierKind,
    pub to: TierKind,
    /// Bytes per second.
    pub bandwidth: f64,
    /// Seconds.
    pub latency: Seconds,
}

impl NetworkLink {
    pub fn transfer_time(&self, bytes: u64) -> Seconds {
        self.latency + bytes as f64 / self.bandwidth
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.bandwidth > 0.0) {
            out.push(Violation::Link(self.from, self.to, "bandwidth must be positive".into()));
        }
        if !(self.latency >= 0.0) {
            out.push(Violation::Link(self.from, self.to, "latency must be non-negative".into()));
        }
        out
    }
}

/// Identifier of a user request `r_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub u64);

/// Identifier of a data unit. Allocated from the same counter as request
/// ids so the two spaces are disjoint within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitId(pub u64);

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.0)
    }
}

/// Hands out request and unit ids from one monotone counter.
#[derive(Debug, Default, Clone)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn starting_at(next: u64) -> Self {
        IdAllocator { next }
    }

    pub fn request(&mut self) -> RequestId {
        self.next += 1;
        RequestId(self.next - 1)
    }

    pub fn unit(&mut self) -> UnitId {
        self.next += 1;
        UnitId(self.next - 1)
    }
}

/// One piece of application payload travelling through a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataUnit {
    pub unit_id: UnitId,
    pub request_id: RequestId,
    /// Bytes, always > 0.
    pub size: u64,
    pub stage_index: usize,
    pub created_at: Seconds,
}

impl DataUnit {
    /// Size after applying a multiplicative transform, never below one byte.
    pub fn scaled_size(size: u64, ratio: f64) -> u64 {
        ((size as f64 * ratio).round() as u64).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    InFlight,
    Completed,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: RequestId,
    pub arrival_at_source: Seconds,
    pub completion_at_sink: Option<Seconds>,
    pub status: RequestStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InvocationMode {
    #[default]
    Sync,
    Async,
}

/// A serverless function `f_j` and its service-time model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub name: String,
    #[serde(rename = "tier")]
    pub tier_placement: TierKind,
    pub base_time: Seconds,
    #[serde(default)]
    pub per_byte_time: Seconds,
    #[serde(default)]
    pub mem_footprint: u64,
    #[serde(default = "one_f64")]
    pub output_ratio: f64,
    #[serde(default = "one_u32")]
    pub replicas: u32,
    #[serde(default)]
    pub invocation_mode: InvocationMode,
    /// Accepted for configuration compatibility; not applied.
    #[serde(default)]
    pub cold_start_penalty: Seconds,
    /// Splits its output into per-frame units (video `Split`).
    #[serde(default)]
    pub fans_out: bool,
    /// Storage unit the function's input arrives through, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_storage: Option<String>,
}

fn one_f64() -> f64 {
    1.0
}

fn one_u32() -> u32 {
    1
}

impl FunctionSpec {
    pub fn new(name: impl Into<String>, tier: TierKind, base_time: Seconds) -> Self {
        FunctionSpec {
            name: name.into(),
            tier_placement: tier,
            base_time,
            per_byte_time: 0.0,
            mem_footprint: 0,
            output_ratio: 1.0,
            replicas: 1,
            invocation_mode: InvocationMode::Sync,
            cold_start_penalty: 0.0,
            fans_out: false,
            input_storage: None,
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |msg: &str| out.push(Violation::Function(self.name.clone(), msg.to_string()));
        if !(self.base_time >= 0.0) {
            bad("base_time must be non-negative");
        }
        if !(self.per_byte_time >= 0.0) {
            bad("per_byte_time must be non-negative");
        }
        if !(self.output_ratio > 0.0) {
            bad("output_ratio must be positive");
        }
        if self.replicas < 1 {
            bad("replicas must be at least 1");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageKind {
    FlowQueue,
    Bucket,
    Topic,
    /// Pending-invocation queue in front of a function's replicas.
    GatewayQueue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StorageRole {
    #[default]
    Intermediate,
    /// Final destination; a unit stored here has reached the data sink.
    Sink,
}

/// Count capacity of a queue-like structure. Serialized as a plain count
/// or the string `"unbounded"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(try_from = "CapacityRepr", into = "CapacityRepr")]
pub enum Capacity {
    #[default]
    Unbounded,
    Bounded(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CapacityRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<CapacityRepr> for Capacity {
    type Error = String;

    fn try_from(r: CapacityRepr) -> Result<Self, String> {
        match r {
            CapacityRepr::Count(n) => Ok(Capacity::Bounded(n)),
            CapacityRepr::Word(w) if w == "unbounded" => Ok(Capacity::Unbounded),
            CapacityRepr::Word(w) => Err(format!("capacity must be a count or \"unbounded\", got `{w}`")),
        }
    }
}

impl From<Capacity> for CapacityRepr {
    fn from(c: Capacity) -> Self {
        match c {
            Capacity::Unbounded => CapacityRepr::Word("unbounded".into()),
            Capacity::Bounded(n) => CapacityRepr::Count(n),
        }
    }
}

impl Capacity {
    pub fn admits(self, occupancy: usize) -> bool {
        match self {
            Capacity::Unbounded => true,
            Capacity::Bounded(n) => occupancy < n,
        }
    }
}

/// An intermediate storage unit `S_j`: a flow queue, bucket or topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageUnitSpec {
    pub name: String,
    pub kind: StorageKind,
    #[serde(default)]
    pub capacity: Capacity,
    #[serde(rename = "tier")]
    pub tier_placement: TierKind,
    #[serde(default)]
    pub role: StorageRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Application {
    Aeneas,
    #[serde(alias = "pocket_sphinx")]
    PocketSphinx,
    Video,
}

impl Application {
    pub const ALL: [Application; 3] = [Application::Aeneas, Application::PocketSphinx, Application::Video];

    pub fn as_str(self) -> &'static str {
        match self {
            Application::Aeneas => "aeneas",
            Application::PocketSphinx => "pocketsphinx",
            Application::Video => "video",
        }
    }
}

impl fmt::Display for Application {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Application {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "aeneas" => Ok(Application::Aeneas),
            "pocketsphinx" | "pocket_sphinx" => Ok(Application::PocketSphinx),
            "video" => Ok(Application::Video),
            other => Err(format!("unknown application `{other}`")),
        }
    }
}

/// Intermediate-data handling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "dft", alias = "DFT")]
    Dft,
    #[serde(rename = "oss", alias = "OSS")]
    Oss,
    #[serde(rename = "mqtt", alias = "MQTT", alias = "mq", alias = "MQ")]
    Mqtt,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Dft, Strategy::Oss, Strategy::Mqtt];

    pub fn index(self) -> usize {
        match self {
            Strategy::Dft => 0,
            Strategy::Oss => 1,
            Strategy::Mqtt => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Dft => "DFT",
            Strategy::Oss => "OSS",
            Strategy::Mqtt => "MQTT",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Dft => "dft",
            Strategy::Oss => "oss",
            Strategy::Mqtt => "mqtt",
        }
    }

    /// The storage-unit kind the strategy's backend is built on.
    pub fn storage_kind(self) -> StorageKind {
        match self {
            Strategy::Dft => StorageKind::FlowQueue,
            Strategy::Oss => StorageKind::Bucket,
            Strategy::Mqtt => StorageKind::Topic,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dft" => Ok(Strategy::Dft),
            "oss" => Ok(Strategy::Oss),
            "mqtt" | "mq" => Ok(Strategy::Mqtt),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// Number of serverless functions each (strategy, application) pipeline uses.
pub fn expected_function_count(app: Application, strategy: Strategy) -> usize {
    match (strategy, app) {
        (Strategy::Dft, Application::Aeneas) => 2,
        (Strategy::Dft, _) => 3,
        (Strategy::Oss, Application::Aeneas) => 5,
        (Strategy::Oss, _) => 6,
        (Strategy::Mqtt, Application::Aeneas) => 2,
        (Strategy::Mqtt, _) => 3,
    }
}

/// Ordered function chain plus storage units for one (application, strategy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub application: Application,
    pub strategy: Strategy,
    pub stages: Vec<FunctionSpec>,
    pub storage_units: Vec<StorageUnitSpec>,
    pub function_count: usize,
}

impl PipelineSpec {
    pub fn storage(&self, name: &str) -> Option<&StorageUnitSpec> {
        self.storage_units.iter().find(|s| s.name == name)
    }

    pub fn sinks(&self) -> impl Iterator<Item = &StorageUnitSpec> {
        self.storage_units.iter().filter(|s| s.role == StorageRole::Sink)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    FunctionCount { expected: usize, actual: usize },
    DeclaredCount { declared: usize, actual: usize },
    Function(String, String),
    Storage(String, String),
    DuplicateName(String),
    UnknownStorage { function: String, storage: String },
    MissingSink,
    EmptyPipeline,
    Tier(TierKind, String),
    Link(TierKind, TierKind, String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::FunctionCount { expected, actual } => {
                write!(f, "function count {actual} does not match expected {expected}")
            }
            Violation::DeclaredCount { declared, actual } => {
                write!(f, "declared function_count {declared} but {actual} stages given")
            }
            Violation::Function(name, msg) => write!(f, "function `{name}`: {msg}"),
            Violation::Storage(name, msg) => write!(f, "storage unit `{name}`: {msg}"),
            Violation::DuplicateName(name) => write!(f, "duplicate name `{name}`"),
            Violation::UnknownStorage { function, storage } => {
                write!(f, "function `{function}` reads from unknown storage unit `{storage}`")
            }
            Violation::MissingSink => f.write_str("pipeline has no sink storage unit"),
            Violation::EmptyPipeline => f.write_str("pipeline has no stages"),
            Violation::Tier(kind, msg) => write!(f, "tier {kind}: {msg}"),
            Violation::Link(from, to, msg) => write!(f, "link {from}->{to}: {msg}"),
        }
    }
}

/// Checks every structural invariant of a pipeline, including the
/// per-application function count. Returns an empty list when valid.
pub fn validate_pipeline(spec: &PipelineSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if spec.stages.is_empty() {
        out.push(Violation::EmptyPipeline);
    }
    let expected = expected_function_count(spec.application, spec.strategy);
    if spec.stages.len() != expected {
        out.push(Violation::FunctionCount { expected, actual: spec.stages.len() });
    }
    if spec.function_count != spec.stages.len() {
        out.push(Violation::DeclaredCount { declared: spec.function_count, actual: spec.stages.len() });
    }

    let mut names = HashSet::new();
    for f in &spec.stages {
        if !names.insert(f.name.as_str()) {
            out.push(Violation::DuplicateName(f.name.clone()));
        }
        out.extend(f.violations());
        if let Some(storage) = &f.input_storage {
            if spec.storage(storage).is_none() {
                out.push(Violation::UnknownStorage { function: f.name.clone(), storage: storage.clone() });
            }
        }
    }

    let expected_kind = spec.strategy.storage_kind();
    for s in &spec.storage_units {
        if !names.insert(s.name.as_str()) {
            out.push(Violation::DuplicateName(s.name.clone()));
        }
        if s.capacity == Capacity::Bounded(0) {
            out.push(Violation::Storage(s.name.clone(), "bounded capacity must be at least 1".into()));
        }
        // Sinks are cloud buckets regardless of strategy.
        let kind_ok = s.kind == expected_kind || (s.role == StorageRole::Sink && s.kind == StorageKind::Bucket);
        if !kind_ok {
            out.push(Violation::Storage(
                s.name.clone(),
                format!("kind {:?} does not belong to the {} backend", s.kind, spec.strategy),
            ));
        }
    }
    if spec.sinks().next().is_none() {
        out.push(Violation::MissingSink);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pipeline(app: Application, strategy: Strategy, stages: usize) -> PipelineSpec {
        let stages: Vec<_> =
            (0..stages).map(|i| FunctionSpec::new(format!("f{i}"), TierKind::Fog, 1.0)).collect();
        PipelineSpec {
            application: app,
            strategy,
            function_count: stages.len(),
            stages,
            storage_units: vec![StorageUnitSpec {
                name: "sink".into(),
                kind: StorageKind::Bucket,
                capacity: Capacity::Unbounded,
                tier_placement: TierKind::Cloud,
                role: StorageRole::Sink,
            }],
        }
    }

    #[test]
    fn function_counts_follow_the_table() {
        assert!(validate_pipeline(&pipeline(Application::Aeneas, Strategy::Dft, 2)).is_empty());
        assert!(validate_pipeline(&pipeline(Application::Video, Strategy::Oss, 6)).is_empty());
        let v = validate_pipeline(&pipeline(Application::Aeneas, Strategy::Dft, 5));
        assert_eq!(v, vec![Violation::FunctionCount { expected: 2, actual: 5 }]);
    }

    #[test]
    fn all_nine_counts() {
        let table = [
            (Strategy::Dft, [2, 3, 3]),
            (Strategy::Oss, [5, 6, 6]),
            (Strategy::Mqtt, [2, 3, 3]),
        ];
        for (s, counts) in table {
            for (app, n) in Application::ALL.into_iter().zip(counts) {
                assert_eq!(expected_function_count(app, s), n, "{s} {app}");
            }
        }
    }

    #[test]
    fn function_invariants_reported() {
        let mut p = pipeline(Application::Aeneas, Strategy::Mqtt, 2);
        p.stages[0].output_ratio = 0.0;
        p.stages[1].replicas = 0;
        p.stages[1].input_storage = Some("nope".into());
        let v = validate_pipeline(&p);
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn storage_kind_must_match_backend() {
        let mut p = pipeline(Application::Aeneas, Strategy::Mqtt, 2);
        p.storage_units.push(StorageUnitSpec {
            name: "q".into(),
            kind: StorageKind::FlowQueue,
            capacity: Capacity::Bounded(0),
            tier_placement: TierKind::Fog,
            role: StorageRole::Intermediate,
        });
        let v = validate_pipeline(&p);
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn ids_never_collide() {
        let mut ids = IdAllocator::default();
        let r = ids.request();
        let u = ids.unit();
        assert_ne!(r.0, u.0);
    }

    #[test]
    fn transfer_time_is_latency_plus_serialization() {
        let link = NetworkLink { from: TierKind::Edge, to: TierKind::Fog, bandwidth: 1e6, latency: 0.5 };
        assert!((link.transfer_time(2_000_000) - 2.5).abs() < 1e-12);
    }
}
