//! Application profiles, request generation and per-strategy pipeline
//! construction. Function costs and backend constants come from a
//! calibration file; a default one is compiled in.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::backend::BackendParams;
use crate::error::{Result, SimError};
use crate::kernel::rng_stream;
use crate::model::{
    Application, Capacity, FunctionSpec, InvocationMode, PipelineSpec, RequestId, RequestRecord, RequestStatus,
    Seconds, StorageKind, StorageRole, StorageUnitSpec, Strategy, TierKind,
};

pub const MAX_FPS: u32 = 15;

const DEFAULT_CALIBRATION: &str = include_str!("../calibration/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    /// Latency critical.
    LC,
    /// Bandwidth intensive.
    BI,
    /// Location aware.
    LA,
    /// Computationally intensive.
    CI,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SizeDistribution {
    Fixed { bytes: u64 },
    Uniform { min: u64, max: u64 },
    LogNormal { median: u64, sigma: f64 },
}

impl SizeDistribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            SizeDistribution::Fixed { bytes } => bytes > 0,
            SizeDistribution::Uniform { min, max } => min > 0 && min <= max,
            SizeDistribution::LogNormal { median, sigma } => median > 0 && sigma >= 0.0 && sigma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!("invalid unit size distribution {self:?}")))
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match *self {
            SizeDistribution::Fixed { bytes } => bytes,
            SizeDistribution::Uniform { min, max } => rng.random_range(min..=max),
            SizeDistribution::LogNormal { median, sigma } => {
                let d = LogNormal::new((median as f64).ln(), sigma).expect("validated parameters");
                (d.sample(rng).round() as u64).max(1)
            }
        }
    }
}

/// Service-time model of one function, keyed by name in the profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionCost {
    #[serde(default = "fog")]
    pub tier: TierKind,
    pub base_time: Seconds,
    #[serde(default)]
    pub per_byte_time: Seconds,
    #[serde(default)]
    pub mem_footprint: u64,
    #[serde(default = "one")]
    pub output_ratio: f64,
    #[serde(default = "one_replica")]
    pub replicas: u32,
    #[serde(default)]
    pub fans_out: bool,
}

fn fog() -> TierKind {
    TierKind::Fog
}

fn one() -> f64 {
    1.0
}

fn one_replica() -> u32 {
    1
}

/// Function names per strategy, in pipeline order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chains {
    pub dft: Vec<String>,
    pub oss: Vec<String>,
    pub mqtt: Vec<String>,
}

impl Chains {
    pub fn get(&self, strategy: Strategy) -> &[String] {
        match strategy {
            Strategy::Dft => &self.dft,
            Strategy::Oss => &self.oss,
            Strategy::Mqtt => &self.mqtt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplicationProfile {
    pub tags: Vec<Tag>,
    pub unit_size: SizeDistribution,
    /// Length of one video chunk; frames = fps × clip_seconds.
    #[serde(default)]
    pub clip_seconds: Option<u32>,
    #[serde(default)]
    pub default_fps: Option<u32>,
    pub chains: Chains,
    pub functions: BTreeMap<String, FunctionCost>,
    /// Object-store layout: triggering bucket per function.
    #[serde(default)]
    pub oss_triggers: BTreeMap<String, String>,
    /// Cloud buckets results land in; the first is the success path.
    pub oss_sinks: Vec<String>,
}

/// Calibrated constants for the three built-in applications and backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub label: String,
    #[serde(default)]
    pub backends: BackendParams,
    pub profiles: BTreeMap<Application, ApplicationProfile>,
}

impl Calibration {
    pub fn embedded() -> Self {
        Self::parse(DEFAULT_CALIBRATION).expect("embedded calibration is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cal: Calibration = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cal.validate()?;
        Ok(cal)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("cannot read calibration {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn profile(&self, app: Application) -> Result<&ApplicationProfile> {
        self.profiles.get(&app).ok_or_else(|| SimError::Unknown { kind: "profile", name: app.to_string() })
    }

    fn validate(&self) -> Result<()> {
        for (app, p) in &self.profiles {
            p.unit_size.validate()?;
            for strategy in Strategy::ALL {
                for name in p.chains.get(strategy) {
                    if !p.functions.contains_key(name) {
                        return Err(SimError::Config(format!("{app}: chain references unknown function `{name}`")));
                    }
                }
            }
            if p.oss_sinks.is_empty() {
                return Err(SimError::Config(format!("{app}: at least one object-store sink is required")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalPattern {
    /// Every request arrives at t = 0.
    #[default]
    Burst,
    /// Exponential inter-arrival times with `rate` requests per second.
    Poisson { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub n_users: usize,
    #[serde(default)]
    pub arrival: ArrivalPattern,
    #[serde(default)]
    pub fps: Option<u32>,
    #[serde(default)]
    pub seed: u64,
}

impl LoadSpec {
    pub fn burst(n_users: usize, seed: u64) -> Self {
        LoadSpec { n_users, arrival: ArrivalPattern::Burst, fps: None, seed }
    }

    pub fn validate(&self, app: Application) -> Result<()> {
        if self.n_users < 1 {
            return Err(SimError::InvalidLoad("n_users must be at least 1".into()));
        }
        if let ArrivalPattern::Poisson { rate } = self.arrival {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(SimError::InvalidLoad(format!("poisson rate must be positive, got {rate}")));
            }
        }
        if let Some(fps) = self.fps {
            if app == Application::Video && !(1..=MAX_FPS).contains(&fps) {
                return Err(SimError::InvalidLoad(format!("fps must be within 1..={MAX_FPS}, got {fps}")));
            }
        }
        Ok(())
    }
}

/// One generated user request and the size of its data unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRequest {
    pub record: RequestRecord,
    pub unit_size: u64,
}

/// Seeded request stream ordered by arrival time.
pub fn generate_requests(app: Application, profile: &ApplicationProfile, load: &LoadSpec) -> Result<Vec<GeneratedRequest>> {
    load.validate(app)?;
    profile.unit_size.validate()?;
    let mut arrivals_rng = rng_stream(load.seed, "arrivals");
    let mut sizes_rng = rng_stream(load.seed, "sizes");
    let gap = match load.arrival {
        ArrivalPattern::Burst => None,
        ArrivalPattern::Poisson { rate } => Some(Exp::new(rate).map_err(|e| SimError::InvalidLoad(e.to_string()))?),
    };
    let mut clock = 0.0;
    let mut out = Vec::with_capacity(load.n_users);
    for i in 0..load.n_users {
        if let Some(exp) = &gap {
            clock += exp.sample(&mut arrivals_rng);
        }
        out.push(GeneratedRequest {
            record: RequestRecord {
                request_id: RequestId(i as u64),
                arrival_at_source: clock,
                completion_at_sink: None,
                status: RequestStatus::InFlight,
            },
            unit_size: profile.unit_size.sample(&mut sizes_rng),
        });
    }
    Ok(out)
}

/// Frame units the split stage produces from one video chunk.
pub fn video_stage_multiplier(fps: u32, clip_seconds: u32) -> Result<usize> {
    if !(1..=MAX_FPS).contains(&fps) {
        return Err(SimError::InvalidLoad(format!("fps must be within 1..={MAX_FPS}, got {fps}")));
    }
    Ok(fps as usize * clip_seconds.max(1) as usize)
}

/// Fan-out factor for `app` under `load`; 1 for applications without a
/// splitting stage.
pub fn fanout_for(app: Application, profile: &ApplicationProfile, load: &LoadSpec) -> Result<usize> {
    let splits = profile.functions.values().any(|f| f.fans_out);
    match (splits, profile.clip_seconds) {
        (true, Some(clip)) => {
            let fps = load.fps.or(profile.default_fps).unwrap_or(1);
            video_stage_multiplier(fps, clip)
        }
        _ => {
            let _ = app;
            Ok(1)
        }
    }
}

/// Instantiates the (application, strategy) pipeline with storage units
/// sized from `params`.
pub fn build_pipeline(app: Application, profile: &ApplicationProfile, strategy: Strategy, params: &BackendParams) -> Result<PipelineSpec> {
    let names = profile.chains.get(strategy);
    let mode = match strategy {
        Strategy::Mqtt => InvocationMode::Async,
        Strategy::Dft | Strategy::Oss => InvocationMode::Sync,
    };
    let mut stages = Vec::with_capacity(names.len());
    let mut storage_units = Vec::new();
    let storage = |name: String, kind, capacity, tier, role| StorageUnitSpec { name, kind, capacity, tier_placement: tier, role };

    for name in names {
        let cost = profile
            .functions
            .get(name)
            .ok_or_else(|| SimError::Config(format!("{app}: unknown function `{name}`")))?;
        let mut f = FunctionSpec::new(name.clone(), cost.tier, cost.base_time);
        f.per_byte_time = cost.per_byte_time;
        f.mem_footprint = cost.mem_footprint;
        f.output_ratio = cost.output_ratio;
        f.replicas = cost.replicas;
        f.fans_out = cost.fans_out;
        f.invocation_mode = mode;
        match strategy {
            Strategy::Dft => {
                let q = format!("{name}-queue");
                let cap = Capacity::Bounded(params.flow_queue.capacity);
                storage_units.push(storage(q.clone(), StorageKind::FlowQueue, cap, cost.tier, StorageRole::Intermediate));
                f.input_storage = Some(q);
            }
            Strategy::Mqtt => {
                let topic = format!("{name}-topic");
                let cap = params.pubsub.topic_capacity;
                storage_units.push(storage(topic.clone(), StorageKind::Topic, cap, TierKind::Fog, StorageRole::Intermediate));
                f.input_storage = Some(topic);
            }
            Strategy::Oss => {
                if let Some(bucket) = profile.oss_triggers.get(name) {
                    if !storage_units.iter().any(|s: &StorageUnitSpec| &s.name == bucket) {
                        storage_units.push(storage(
                            bucket.clone(),
                            StorageKind::Bucket,
                            Capacity::Unbounded,
                            TierKind::Fog,
                            StorageRole::Intermediate,
                        ));
                    }
                    f.input_storage = Some(bucket.clone());
                }
            }
        }
        stages.push(f);
    }

    match strategy {
        Strategy::Oss => {
            for sink in &profile.oss_sinks {
                storage_units.push(storage(sink.clone(), StorageKind::Bucket, Capacity::Unbounded, TierKind::Cloud, StorageRole::Sink));
            }
        }
        Strategy::Mqtt => {
            let cap = params.pubsub.topic_capacity;
            storage_units.push(storage("results-topic".into(), StorageKind::Topic, cap, TierKind::Fog, StorageRole::Intermediate));
            storage_units.push(storage(format!("{app}-sink"), StorageKind::Bucket, Capacity::Unbounded, TierKind::Cloud, StorageRole::Sink));
        }
        Strategy::Dft => {
            storage_units.push(storage(format!("{app}-sink"), StorageKind::Bucket, Capacity::Unbounded, TierKind::Cloud, StorageRole::Sink));
        }
    }

    Ok(PipelineSpec { application: app, strategy, function_count: stages.len(), stages, storage_units })
}
