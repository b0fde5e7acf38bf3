//! Scenario ingestion, envelope evaluation, Monte Carlo campaigns, and
//! report assembly.
//!
//! A scenario file fixes everything: seed, horizon, input scripts or
//! distributions, the pattern and its options, the simulated component's
//! error profile, injected faults, the safety envelope, and trial count.
//! Given the same file and seed the report is byte-identical — trials draw
//! their seeds from the master seed by index, inputs are pre-generated per
//! trial, and every aggregate is a commutative sum over trials.
//!
//! Metric vocabulary: a **hazard** is a *valid* output violating the
//! envelope (the dangerous case — downstream trusts it); a **loss** tick
//! has an absent or self-invalid output (annoying but fail-safe). Every
//! tick is exactly one of hazard, loss, or in-envelope.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    derive_rng, derive_subseed, run, Annotation, PortRef, Signal, Tick, Trace, TraceEvent, Value,
};
use crate::faults::{validate_faults, FaultError, FaultSpec};
use crate::patterns::{
    self, CombinedVariant, CombinerMode, ConsistencyConfig, DecisionPolicy, GateAction,
    MonitorSpec, OverrideConfig, PatternError, PatternInstance, RtaBoundary, RtaOptions,
    SwitchConfig, VoterMode,
};
use crate::surrogate::{
    BackupMode, DetectorConfig, OddRegion, ReferenceFn, SurrogateError, SurrogateProfile,
};

// ── Errors ──────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Scenario or architecture file problem, with a JSON-pointer to the
    /// offending location.
    #[error("schema error at `{pointer}`: {message}")]
    Schema { pointer: String, message: String },
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

fn schema_err(pointer: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Schema {
        pointer: pointer.into(),
        message: message.into(),
    }
}

/// serde's dotted path (`pattern.monitors[0].ranges`) as a JSON pointer
/// (`/pattern/monitors/0/ranges`).
fn path_to_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => {
                out.push('/');
                out.push_str(&index.to_string());
            }
            Segment::Map { key } => {
                out.push('/');
                out.push_str(key);
            }
            Segment::Enum { variant } => {
                out.push('/');
                out.push_str(variant);
            }
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, HarnessError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Schema {
        pointer: path_to_pointer(e.path()),
        message: e.inner().to_string(),
    })
}

// ── Safety envelope ─────────────────────────────────────────────────

/// The per-tick safety predicate the harness judges the pattern output
/// against. `abs_deviation` compares a valid scalar output to the
/// reference evaluated at the *true* (pre-fault) input carried by the
/// output's stamp; `bounds` checks every component of the value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyEnvelope {
    AbsDeviation { epsilon: f64 },
    Bounds { lo: f64, hi: f64 },
}

impl SafetyEnvelope {
    pub fn validate(&self) -> Result<(), HarnessError> {
        match self {
            SafetyEnvelope::AbsDeviation { epsilon } if *epsilon < 0.0 => Err(schema_err(
                "/envelope/epsilon",
                format!("epsilon must be non-negative, got {epsilon}"),
            )),
            SafetyEnvelope::Bounds { lo, hi } if lo.is_nan() || hi.is_nan() || lo >= hi => Err(schema_err(
                "/envelope",
                format!("bounds must satisfy lo < hi, got [{lo}, {hi}]"),
            )),
            _ => Ok(()),
        }
    }

    /// Whether a *valid* output value satisfies the envelope. `reference`
    /// is the trusted value for deviation checks; a deviation check that
    /// cannot be evaluated (no reference, non-scalar output) counts as a
    /// violation — unverifiable is unsafe here.
    pub fn holds(&self, value: &Value, reference: Option<f64>) -> bool {
        match self {
            SafetyEnvelope::AbsDeviation { epsilon } => match (value.as_scalar(), reference) {
                (Some(v), Some(r)) => (v - r).abs() <= *epsilon,
                _ => false,
            },
            SafetyEnvelope::Bounds { lo, hi } => {
                value.as_slice().iter().all(|x| (*lo..=*hi).contains(x))
            }
        }
    }
}

// ── Scenario schema ─────────────────────────────────────────────────

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputDist {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
    Constant { value: f64 },
}

/// One external input stream: a script cycled over the horizon, or a
/// per-tick draw from a distribution (seeded per trial and per source).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    Script { values: Vec<Value> },
    Distribution { dist: InputDist },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub trials: u64,
}

fn default_backup() -> BackupMode {
    BackupMode::Equivalent
}

fn default_gate_action() -> GateAction {
    GateAction::Disconnect
}

fn default_voter() -> VoterMode {
    VoterMode::MajorityExact { tolerance: 1e-9 }
}

/// Pattern selection plus per-kind options, tagged by `kind` in JSON.
/// `rta_ensemble` is a scenario-level pseudo-kind: it builds an
/// ensemble-channel instance whose pattern kind is `rta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternConfig {
    SingleChannel {},
    ActiveMonitor {
        monitor: MonitorSpec,
        #[serde(default = "default_gate_action")]
        action: GateAction,
    },
    BackupParallel {
        #[serde(default = "default_backup")]
        backup: BackupMode,
        #[serde(default)]
        switch: SwitchConfig,
    },
    Combined {
        monitor: MonitorSpec,
        variant: CombinedVariant,
        #[serde(default = "default_backup")]
        backup: BackupMode,
        #[serde(default)]
        switch: SwitchConfig,
    },
    Rta {
        monitors: Vec<MonitorSpec>,
        alternatives: Vec<BackupMode>,
        #[serde(default)]
        boundary: RtaBoundary,
        #[serde(default)]
        decision: DecisionPolicy,
        #[serde(default)]
        switch: SwitchConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clamp: Option<Vec<[f64; 2]>>,
    },
    RtaEnsemble {
        n_models: usize,
        combiner: CombinerMode,
        consistency: ConsistencyConfig,
        #[serde(default = "default_backup")]
        alternative: BackupMode,
        #[serde(default)]
        switch: SwitchConfig,
    },
    ValueOverride {
        #[serde(rename = "override")]
        config: OverrideConfig,
    },
    FunctionModification {
        detector: DetectorConfig,
        iou_floor: f64,
    },
    InputPartitioning {
        space: Vec<OddRegion>,
        partitions: Vec<Vec<OddRegion>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        channel_modes: Option<Vec<BackupMode>>,
    },
    Tmr {
        #[serde(default = "default_voter")]
        voter: VoterMode,
    },
}

impl PatternConfig {
    /// The name reports carry; distinguishes the ensemble pseudo-kind.
    pub fn kind_name(&self) -> &'static str {
        match self {
            PatternConfig::SingleChannel {} => "single_channel",
            PatternConfig::ActiveMonitor { .. } => "active_monitor",
            PatternConfig::BackupParallel { .. } => "backup_parallel",
            PatternConfig::Combined { .. } => "combined",
            PatternConfig::Rta { .. } => "rta",
            PatternConfig::RtaEnsemble { .. } => "rta_ensemble",
            PatternConfig::ValueOverride { .. } => "value_override",
            PatternConfig::FunctionModification { .. } => "function_modification",
            PatternConfig::InputPartitioning { .. } => "input_partitioning",
            PatternConfig::Tmr { .. } => "tmr",
        }
    }

    fn needs_surrogate(&self) -> bool {
        !matches!(
            self,
            PatternConfig::FunctionModification { .. } | PatternConfig::InputPartitioning { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seed: u64,
    pub horizon_ticks: u64,
    pub ticks_per_hour: u64,
    /// External streams keyed by source component id (`input`, and for
    /// patterns that need them, `risk` / `indep_input`).
    pub inputs: BTreeMap<String, InputSpec>,
    pub pattern: PatternConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<SurrogateProfile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<FaultSpec>,
    pub envelope: SafetyEnvelope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarlo>,
    /// `simulate` exits nonzero when hazard_count exceeds this.
    #[serde(default)]
    pub hazard_threshold: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, HarnessError> {
        let scenario: Scenario = parse_json(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_file(path: &Path) -> Result<Scenario, HarnessError> {
        Scenario::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(schema_err(
                "/schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if self.horizon_ticks == 0 {
            return Err(schema_err("/horizon_ticks", "horizon must be at least 1"));
        }
        if self.ticks_per_hour == 0 {
            return Err(schema_err("/ticks_per_hour", "must be a positive integer"));
        }
        if let Some(mc) = &self.monte_carlo {
            if mc.trials == 0 {
                return Err(schema_err("/monte_carlo/trials", "must be at least 1"));
            }
        }
        self.envelope.validate()?;
        for (name, spec) in &self.inputs {
            if let InputSpec::Script { values } = spec {
                if values.is_empty() {
                    return Err(schema_err(
                        &format!("/inputs/{name}/values"),
                        "script must contain at least one value",
                    ));
                }
            }
        }
        if self.pattern.needs_surrogate() && self.surrogate.is_none() {
            return Err(schema_err(
                "/surrogate",
                format!(
                    "pattern kind `{}` requires a surrogate profile",
                    self.pattern.kind_name()
                ),
            ));
        }
        if let Some(profile) = &self.surrogate {
            profile.validate()?;
        }
        validate_faults(&self.faults)?;
        Ok(())
    }

    pub fn trials(&self) -> u64 {
        self.monte_carlo.map(|m| m.trials).unwrap_or(1)
    }

    /// The reference function hazards are judged against, when one exists.
    pub fn reference(&self) -> Option<&ReferenceFn> {
        self.surrogate.as_ref().map(|p| &p.reference)
    }
}

fn need(p: Option<&SurrogateProfile>) -> Result<&SurrogateProfile, HarnessError> {
    p.ok_or_else(|| schema_err("/surrogate", "surrogate profile required"))
}

/// Builds the runnable instance a scenario describes.
pub fn build_pattern(scenario: &Scenario) -> Result<PatternInstance, HarnessError> {
    let profile = scenario.surrogate.as_ref();
    let instance = match &scenario.pattern {
        PatternConfig::SingleChannel {} => patterns::make_single_channel(need(profile)?)?,
        PatternConfig::ActiveMonitor { monitor, action } => {
            patterns::make_active_monitor(need(profile)?, monitor.clone(), *action)?
        }
        PatternConfig::BackupParallel { backup, switch } => {
            patterns::make_backup_parallel(need(profile)?, backup.clone(), *switch)?
        }
        PatternConfig::Combined {
            monitor,
            variant,
            backup,
            switch,
        } => patterns::make_combined(
            need(profile)?,
            backup.clone(),
            monitor.clone(),
            *variant,
            *switch,
        )?,
        PatternConfig::Rta {
            monitors,
            alternatives,
            boundary,
            decision,
            switch,
            clamp,
        } => patterns::make_rta(
            need(profile)?,
            RtaOptions {
                monitors: monitors.clone(),
                alternatives: alternatives.clone(),
                boundary: *boundary,
                decision: decision.clone(),
                switch: *switch,
                clamp: clamp.clone(),
            },
        )?,
        PatternConfig::RtaEnsemble {
            n_models,
            combiner,
            consistency,
            alternative,
            switch,
        } => patterns::make_rta_ensemble(
            need(profile)?,
            patterns::EnsembleOptions {
                n_models: *n_models,
                combiner: combiner.clone(),
                consistency: consistency.clone(),
                alternative: alternative.clone(),
                switch: *switch,
            },
        )?,
        PatternConfig::ValueOverride { config } => {
            patterns::make_value_override(need(profile)?, config.clone())?
        }
        PatternConfig::FunctionModification { detector, iou_floor } => {
            patterns::make_function_modification(detector.clone(), *iou_floor)?
        }
        PatternConfig::InputPartitioning {
            space,
            partitions,
            channel_modes,
        } => {
            let reference = scenario
                .reference()
                .cloned()
                .unwrap_or(ReferenceFn::Linear {
                    weights: vec![1.0],
                    bias: 0.0,
                });
            let modes = channel_modes
                .clone()
                .unwrap_or_else(|| vec![BackupMode::Equivalent; partitions.len()]);
            patterns::make_input_partitioning(&reference, space.clone(), partitions.clone(), modes)?
        }
        PatternConfig::Tmr { voter } => patterns::make_tmr(need(profile)?, voter.clone())?,
    };
    // Every external source the instance declares must have a stream.
    let mut needed = vec![instance.input_source.clone()];
    needed.extend(instance.extra_sources.iter().cloned());
    for port in &needed {
        if !scenario.inputs.contains_key(&port.component) {
            return Err(schema_err(
                &format!("/inputs/{}", port.component),
                format!("pattern needs an input stream for source `{}`", port.component),
            ));
        }
    }
    Ok(instance)
}

// ── Input timelines ─────────────────────────────────────────────────

/// Pre-generated per-trial input values, one entry per tick per source.
/// The timeline is the *true* world: metrics judge deviation against it
/// even when injected faults corrupt what the pattern actually received.
pub struct Timelines {
    pub by_source: BTreeMap<String, Vec<Value>>,
}

impl Timelines {
    pub fn generate(scenario: &Scenario, trial_seed: u64) -> Timelines {
        let horizon = scenario.horizon_ticks as usize;
        let mut by_source = BTreeMap::new();
        for (source, spec) in &scenario.inputs {
            let values = match spec {
                InputSpec::Script { values } => (0..horizon)
                    .map(|t| values[t % values.len()].clone())
                    .collect(),
                InputSpec::Distribution { dist } => {
                    let mut rng = derive_rng(trial_seed, "input", source);
                    (0..horizon).map(|_| Value::Scalar(draw(dist, &mut rng))).collect()
                }
            };
            by_source.insert(source.clone(), values);
        }
        Timelines { by_source }
    }

    pub fn value_at(&self, source: &str, tick: u64) -> Option<&Value> {
        self.by_source.get(source).and_then(|v| v.get(tick as usize))
    }
}

fn draw(dist: &InputDist, rng: &mut ChaCha8Rng) -> f64 {
    match dist {
        InputDist::Uniform { lo, hi } => lo + rng.gen::<f64>() * (hi - lo),
        InputDist::Normal { mean, std } => {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            mean + std * z
        }
        InputDist::Constant { value } => *value,
    }
}

// ── Metrics ─────────────────────────────────────────────────────────

/// Single-trial tallies; addition is commutative so aggregation order
/// never shows in the report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrialMetrics {
    pub horizon: u64,
    pub hazards: u64,
    pub loss_ticks: u64,
    pub in_envelope: u64,
    pub backup_active_ticks: u64,
    pub switch_events: u64,
    pub monitor_trips: u64,
    pub override_ticks: u64,
    pub hour_windows: u64,
    pub failing_windows: u64,
}

impl TrialMetrics {
    pub fn add(&mut self, other: &TrialMetrics) {
        self.horizon += other.horizon;
        self.hazards += other.hazards;
        self.loss_ticks += other.loss_ticks;
        self.in_envelope += other.in_envelope;
        self.backup_active_ticks += other.backup_active_ticks;
        self.switch_events += other.switch_events;
        self.monitor_trips += other.monitor_trips;
        self.override_ticks += other.override_ticks;
        self.hour_windows += other.hour_windows;
        self.failing_windows += other.failing_windows;
    }
}

/// One pass over a trial's trace: envelope judgment per output tick,
/// switch/trip/override counting, and per-hour failure windows.
pub fn compute_metrics(
    trace: &Trace,
    envelope: &SafetyEnvelope,
    instance: &PatternInstance,
    reference: Option<&ReferenceFn>,
    timelines: &Timelines,
    ticks_per_hour: u64,
) -> TrialMetrics {
    let horizon = trace.horizon;
    let mut m = TrialMetrics {
        horizon,
        ..TrialMetrics::default()
    };
    let input_source = &instance.input_source.component;
    let mut hazard_ticks: Vec<u64> = Vec::new();

    for event in &trace.events {
        match event {
            TraceEvent::Delivery {
                tick,
                component,
                port,
                signal,
                ..
            } => {
                if *component != instance.output.component || *port != instance.output.port {
                    continue;
                }
                match signal {
                    Some(sig) if sig.valid => {
                        let reference_value = reference.and_then(|f| {
                            let stamp = sig.stamp.0.min(horizon.saturating_sub(1));
                            timelines
                                .value_at(input_source, stamp)
                                .and_then(|input| f.eval(input.as_slice()).ok())
                        });
                        if envelope.holds(&sig.value, reference_value) {
                            m.in_envelope += 1;
                        } else {
                            m.hazards += 1;
                            hazard_ticks.push(tick.0);
                        }
                    }
                    _ => m.loss_ticks += 1,
                }
            }
            TraceEvent::Note { note, .. } => match note {
                Annotation::Switch { .. } => m.switch_events += 1,
                Annotation::MonitorTrip { .. } => m.monitor_trips += 1,
                Annotation::Overridden => m.override_ticks += 1,
            },
        }
    }

    // Backup-active fraction: walk the switch notes to know which channel
    // fed the output at each tick (the engagement tick already delivers
    // the new channel).
    let mut boundaries: Vec<(u64, bool)> = trace
        .notes()
        .filter_map(|(t, _, n)| match n {
            Annotation::Switch { to, .. } => Some((t.0, to != "ch0")),
            _ => None,
        })
        .collect();
    boundaries.sort();
    let mut active_backup = false;
    let mut prev = 0u64;
    for (t, backup) in boundaries {
        if active_backup {
            m.backup_active_ticks += t - prev;
        }
        active_backup = backup;
        prev = t;
    }
    if active_backup {
        m.backup_active_ticks += horizon - prev;
    }

    // Non-overlapping hour windows; a window fails if it contains a
    // hazard. Partial trailing windows are discarded.
    m.hour_windows = horizon / ticks_per_hour;
    let mut failing = vec![false; m.hour_windows as usize];
    for t in hazard_ticks {
        let w = t / ticks_per_hour;
        if (w as usize) < failing.len() {
            failing[w as usize] = true;
        }
    }
    m.failing_windows = failing.iter().filter(|f| **f).count() as u64;
    m
}

// ── Wilson interval ─────────────────────────────────────────────────

/// 95% Wilson score interval for `k` successes in `n` Bernoulli trials.
/// `None` below 30 observations — too few windows for the interval to
/// mean anything.
pub fn wilson_interval(k: u64, n: u64) -> Option<[f64; 2]> {
    if n < 30 {
        return None;
    }
    let z = 1.96_f64;
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Some([(center - half).max(0.0), (center + half).min(1.0)])
}

// ── Reports ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_name: Option<String>,
    pub pattern_kind: String,
    pub seed: u64,
    pub trials: u64,
    pub horizon_ticks: u64,
    pub ticks_per_hour: u64,
    pub hazard_count: u64,
    pub loss_ticks: u64,
    pub in_envelope_ticks: u64,
    pub availability: f64,
    pub backup_active: f64,
    pub switch_events: u64,
    pub monitor_trips: u64,
    pub override_ticks: u64,
    pub hour_windows: u64,
    pub failing_windows: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_rate_per_hour: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_rate_interval: Option<[f64; 2]>,
    pub trial_seeds: Vec<u64>,
}

impl SimReport {
    fn from_metrics(scenario: &Scenario, total: TrialMetrics, trial_seeds: Vec<u64>) -> SimReport {
        let ticks = total.horizon.max(1) as f64;
        SimReport {
            schema_version: SCHEMA_VERSION,
            scenario_name: scenario.name.clone(),
            pattern_kind: scenario.pattern.kind_name().to_string(),
            seed: scenario.seed,
            trials: trial_seeds.len() as u64,
            horizon_ticks: scenario.horizon_ticks,
            ticks_per_hour: scenario.ticks_per_hour,
            hazard_count: total.hazards,
            loss_ticks: total.loss_ticks,
            in_envelope_ticks: total.in_envelope,
            availability: 1.0 - total.loss_ticks as f64 / ticks,
            backup_active: total.backup_active_ticks as f64 / ticks,
            switch_events: total.switch_events,
            monitor_trips: total.monitor_trips,
            override_ticks: total.override_ticks,
            hour_windows: total.hour_windows,
            failing_windows: total.failing_windows,
            failure_rate_per_hour: (total.hour_windows > 0)
                .then(|| total.failing_windows as f64 / total.hour_windows as f64),
            failure_rate_interval: wilson_interval(total.failing_windows, total.hour_windows),
            trial_seeds,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text rendering for terminals.
    pub fn render(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            (
                "scenario".into(),
                self.scenario_name.clone().unwrap_or_else(|| "-".into()),
            ),
            ("pattern".into(), self.pattern_kind.clone()),
            ("seed".into(), self.seed.to_string()),
            ("trials".into(), self.trials.to_string()),
            ("horizon_ticks".into(), self.horizon_ticks.to_string()),
            ("ticks_per_hour".into(), self.ticks_per_hour.to_string()),
            ("hazard_count".into(), self.hazard_count.to_string()),
            ("loss_ticks".into(), self.loss_ticks.to_string()),
            ("in_envelope_ticks".into(), self.in_envelope_ticks.to_string()),
            ("availability".into(), format!("{:.6}", self.availability)),
            ("backup_active".into(), format!("{:.6}", self.backup_active)),
            ("switch_events".into(), self.switch_events.to_string()),
            ("monitor_trips".into(), self.monitor_trips.to_string()),
            ("override_ticks".into(), self.override_ticks.to_string()),
            ("hour_windows".into(), self.hour_windows.to_string()),
            ("failing_windows".into(), self.failing_windows.to_string()),
        ];
        if let Some(rate) = self.failure_rate_per_hour {
            rows.push(("failure_rate_per_hour".into(), format!("{rate:.6}")));
        }
        if let Some([lo, hi]) = self.failure_rate_interval {
            rows.push(("failure_rate_95ci".into(), format!("[{lo:.6}, {hi:.6}]")));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        out
    }
}

// ── Campaign execution ──────────────────────────────────────────────

fn run_trial(
    scenario: &Scenario,
    instance: &PatternInstance,
    trial_seed: u64,
) -> Result<(TrialMetrics, Trace), HarnessError> {
    let timelines = Timelines::generate(scenario, trial_seed);
    let mut ports: Vec<PortRef> = vec![instance.input_source.clone()];
    ports.extend(instance.extra_sources.iter().cloned());

    let mut feed = |tick: Tick| {
        let mut m = BTreeMap::new();
        for port in &ports {
            if let Some(value) = timelines.value_at(&port.component, tick.0) {
                m.insert(
                    port.clone(),
                    Signal {
                        value: value.clone(),
                        valid: true,
                        stamp: tick,
                    },
                );
            }
        }
        m
    };
    let trace = run(
        &instance.topology,
        &scenario.faults,
        &mut feed,
        scenario.horizon_ticks,
        trial_seed,
    )?;
    let metrics = compute_metrics(
        &trace,
        &scenario.envelope,
        instance,
        scenario.reference(),
        &timelines,
        scenario.ticks_per_hour,
    );
    Ok((metrics, trace))
}

/// Runs every trial of the scenario and aggregates the report. The
/// returned trace is trial 0's, for inspection and replay checks.
pub fn run_scenario(scenario: &Scenario) -> Result<(SimReport, Trace), HarnessError> {
    let instance = build_pattern(scenario)?;
    let trials = scenario.trials();
    let mut total = TrialMetrics::default();
    let mut trial_seeds = Vec::with_capacity(trials as usize);
    let mut first_trace = None;
    for i in 0..trials {
        let trial_seed = derive_subseed(scenario.seed, i);
        trial_seeds.push(trial_seed);
        let (metrics, trace) = run_trial(scenario, &instance, trial_seed)?;
        total.add(&metrics);
        if first_trace.is_none() {
            first_trace = Some(trace);
        }
    }
    let report = SimReport::from_metrics(scenario, total, trial_seeds);
    Ok((report, first_trace.expect("at least one trial")))
}

// ── Pattern comparison ──────────────────────────────────────────────

#[derive(Debug, Serialize)]
pub struct CompareRow {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<SimReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The envelope restated as a perfect output monitor: it condemns exactly
/// the outputs the harness would count as hazards (plus staleness, which
/// the envelope can't see but a deviation check needs).
pub fn envelope_monitor(envelope: &SafetyEnvelope) -> MonitorSpec {
    match envelope {
        SafetyEnvelope::AbsDeviation { epsilon } => MonitorSpec::OutputValidity {
            bounds: None,
            max_deviation: Some(*epsilon),
            staleness: Some(0),
        },
        SafetyEnvelope::Bounds { lo, hi } => MonitorSpec::OutputValidity {
            bounds: Some([*lo, *hi]),
            max_deviation: None,
            staleness: Some(0),
        },
    }
}

/// Default per-kind configuration for comparison runs: guards are derived
/// from the scenario's envelope, channels default to equivalent
/// conventional implementations, switches engage immediately.
pub fn default_config_for(kind: &str, envelope: &SafetyEnvelope) -> Option<PatternConfig> {
    let monitor = envelope_monitor(envelope);
    let instant = SwitchConfig {
        latency: 0,
        switch_back: false,
        hold_down: 0,
    };
    Some(match kind {
        "single_channel" => PatternConfig::SingleChannel {},
        "active_monitor" => PatternConfig::ActiveMonitor {
            monitor,
            action: GateAction::Disconnect,
        },
        "backup_parallel" => PatternConfig::BackupParallel {
            backup: BackupMode::Equivalent,
            switch: instant,
        },
        "combined" => PatternConfig::Combined {
            monitor,
            variant: CombinedVariant::OutputMonitor,
            backup: BackupMode::Equivalent,
            switch: instant,
        },
        "rta" => PatternConfig::Rta {
            monitors: vec![monitor],
            alternatives: vec![BackupMode::Equivalent],
            boundary: RtaBoundary::MlOnly,
            decision: DecisionPolicy::AnyTrip,
            switch: instant,
            clamp: None,
        },
        "rta_ensemble" => PatternConfig::RtaEnsemble {
            n_models: 3,
            combiner: CombinerMode::Median,
            consistency: ConsistencyConfig {
                spread_threshold: 1e-6,
                stamp_tolerance: 0,
            },
            alternative: BackupMode::Equivalent,
            switch: instant,
        },
        "tmr" => PatternConfig::Tmr {
            voter: VoterMode::MajorityExact { tolerance: 1e-9 },
        },
        _ => return None,
    })
}

/// Runs the scenario once per requested kind under identical seed,
/// inputs, and faults. Kinds that cannot be built from the scenario's
/// components report a per-row error; the rest still run.
pub fn compare_patterns(base: &Scenario, kinds: &[String]) -> Vec<CompareRow> {
    kinds
        .iter()
        .map(|kind| {
            let config = if kind == base.pattern.kind_name() {
                Some(base.pattern.clone())
            } else {
                default_config_for(kind, &base.envelope)
            };
            let Some(config) = config else {
                return CompareRow {
                    kind: kind.clone(),
                    report: None,
                    error: Some(format!(
                        "kind `{kind}` is not derivable from this scenario's components"
                    )),
                };
            };
            let mut variant = base.clone();
            variant.pattern = config;
            match run_scenario(&variant) {
                Ok((report, _)) => CompareRow {
                    kind: kind.clone(),
                    report: Some(report),
                    error: None,
                },
                Err(e) => CompareRow {
                    kind: kind.clone(),
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Aligned text table over comparison rows.
pub fn render_comparison(rows: &[CompareRow]) -> String {
    let headers = [
        "kind",
        "hazards",
        "loss",
        "availability",
        "backup_active",
        "switches",
        "error",
    ];
    let mut table: Vec<[String; 7]> = vec![headers.map(str::to_string)];
    for row in rows {
        table.push(match (&row.report, &row.error) {
            (Some(r), _) => [
                row.kind.clone(),
                r.hazard_count.to_string(),
                r.loss_ticks.to_string(),
                format!("{:.6}", r.availability),
                format!("{:.6}", r.backup_active),
                r.switch_events.to_string(),
                String::new(),
            ],
            (None, Some(e)) => [
                row.kind.clone(),
                "-".into(),
                "-".into(),
                "-".into(),
                "-".into(),
                "-".into(),
                e.clone(),
            ],
            (None, None) => unreachable!("row has neither report nor error"),
        });
    }
    let mut widths = [0usize; 7];
    for row in &table {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &table {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, cell)| format!("{cell:<width$}", width = widths[i]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

// ── Architecture files ──────────────────────────────────────────────

/// Versioned wrapper for allocation trees on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchitectureFile {
    pub schema_version: u32,
    pub allocation: crate::assurance::AllocationNode,
}

impl ArchitectureFile {
    pub fn from_json(text: &str) -> Result<ArchitectureFile, HarnessError> {
        let arch: ArchitectureFile = parse_json(text)?;
        if arch.schema_version != SCHEMA_VERSION {
            return Err(schema_err(
                "/schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", arch.schema_version),
            ));
        }
        Ok(arch)
    }

    pub fn from_file(path: &Path) -> Result<ArchitectureFile, HarnessError> {
        ArchitectureFile::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Versioned wrapper for trade matrices on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffFile {
    pub schema_version: u32,
    pub matrix: crate::assurance::TradeMatrix,
}

impl TradeoffFile {
    pub fn from_json(text: &str) -> Result<TradeoffFile, HarnessError> {
        let file: TradeoffFile = parse_json(text)?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(schema_err(
                "/schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", file.schema_version),
            ));
        }
        Ok(file)
    }

    pub fn from_file(path: &Path) -> Result<TradeoffFile, HarnessError> {
        TradeoffFile::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{ErrorModel, Uncertainty};

    fn base_scenario() -> Scenario {
        Scenario {
            schema_version: 1,
            name: Some("unit".into()),
            seed: 7,
            horizon_ticks: 100,
            ticks_per_hour: 10,
            inputs: BTreeMap::from([(
                "input".to_string(),
                InputSpec::Script {
                    values: vec![Value::Scalar(0.25), Value::Scalar(0.5)],
                },
            )]),
            pattern: PatternConfig::SingleChannel {},
            surrogate: Some(SurrogateProfile {
                reference: ReferenceFn::Linear {
                    weights: vec![2.0],
                    bias: 0.0,
                },
                regions: vec![],
                ood: ErrorModel::default(),
                p_selftest: 0.0,
            }),
            faults: vec![],
            envelope: SafetyEnvelope::AbsDeviation { epsilon: 1e-9 },
            monte_carlo: None,
            hazard_threshold: 0,
        }
    }

    #[test]
    fn fault_free_perfect_surrogate_is_clean() {
        let (report, _) = run_scenario(&base_scenario()).unwrap();
        assert_eq!(report.hazard_count, 0);
        assert_eq!(report.loss_ticks, 0);
        assert_eq!(report.in_envelope_ticks, 100);
        assert_eq!(report.availability, 1.0);
        assert_eq!(report.hour_windows, 10);
        assert_eq!(report.failing_windows, 0);
    }

    #[test]
    fn erroneous_surrogate_counts_hazards_and_rta_masks_them() {
        let mut scenario = base_scenario();
        scenario.surrogate.as_mut().unwrap().ood = ErrorModel {
            erroneous_prob: 1.0,
            erroneous_offset: 5.0,
            ..ErrorModel::default()
        };
        let (report, _) = run_scenario(&scenario).unwrap();
        assert_eq!(report.hazard_count, 100, "every tick violates the envelope");

        // Same world behind a perfect-monitor wrapper: zero hazards, and
        // the switch fired.
        let mut wrapped = scenario.clone();
        wrapped.pattern = default_config_for("rta", &scenario.envelope).unwrap();
        let (report, _) = run_scenario(&wrapped).unwrap();
        assert_eq!(report.hazard_count, 0);
        assert!(report.switch_events >= 1);
        assert!(report.backup_active > 0.0);
    }

    #[test]
    fn metric_identity_holds_per_trial() {
        let mut scenario = base_scenario();
        scenario.surrogate.as_mut().unwrap().ood = ErrorModel {
            erroneous_prob: 0.3,
            erroneous_offset: 5.0,
            ..ErrorModel::default()
        };
        scenario.monte_carlo = Some(MonteCarlo { trials: 5 });
        let (report, _) = run_scenario(&scenario).unwrap();
        assert_eq!(
            report.hazard_count + report.loss_ticks + report.in_envelope_ticks,
            500,
            "hazard + loss + in-envelope covers every tick of every trial"
        );
        assert_eq!(report.trial_seeds.len(), 5);
        let expected: Vec<u64> = (0..5).map(|i| derive_subseed(7, i)).collect();
        assert_eq!(report.trial_seeds, expected);
    }

    #[test]
    fn reports_are_deterministic() {
        let mut scenario = base_scenario();
        scenario.inputs.insert(
            "input".into(),
            InputSpec::Distribution {
                dist: InputDist::Uniform { lo: 0.0, hi: 1.0 },
            },
        );
        scenario.surrogate.as_mut().unwrap().ood = ErrorModel {
            noise_std: 0.5,
            erroneous_prob: 0.1,
            erroneous_offset: 3.0,
            uncertainty: Uncertainty {
                base: 0.1,
                jitter: 0.2,
            },
            ..ErrorModel::default()
        };
        scenario.monte_carlo = Some(MonteCarlo { trials: 3 });
        let (a, _) = run_scenario(&scenario).unwrap();
        let (b, _) = run_scenario(&scenario).unwrap();
        assert_eq!(a.to_json(), b.to_json(), "byte-identical reports");
        // The master seed reaches the stochastic inputs: trial 0 under a
        // different master draws a different stream.
        let t7 = Timelines::generate(&scenario, derive_subseed(7, 0));
        let t8 = Timelines::generate(&scenario, derive_subseed(8, 0));
        assert_ne!(
            t7.value_at("input", 0).unwrap().as_scalar(),
            t8.value_at("input", 0).unwrap().as_scalar()
        );
    }

    #[test]
    fn loss_ticks_lower_availability() {
        // Omission fault on the output for 10 of 100 ticks.
        let mut scenario = base_scenario();
        scenario.faults = vec![FaultSpec {
            guideword: crate::faults::Guideword::Omission,
            component: "complex".into(),
            port: "out".into(),
            schedule: crate::faults::Schedule::Interval([40, 49]),
            delay: None,
            value: None,
            offset: None,
        }];
        let (report, _) = run_scenario(&scenario).unwrap();
        assert_eq!(report.loss_ticks, 10);
        assert!((report.availability - 0.9).abs() < 1e-12);
    }

    #[test]
    fn value_fault_on_input_judged_against_true_world() {
        // A value fault corrupts the input the pattern sees; the envelope
        // judges the output against the *scripted* world, so the faithful
        // tracking of a corrupted input is itself the hazard.
        let mut scenario = base_scenario();
        scenario.faults = vec![FaultSpec {
            guideword: crate::faults::Guideword::Value,
            component: "input".into(),
            port: "out".into(),
            schedule: crate::faults::Schedule::Ticks(vec![3]),
            delay: None,
            value: Some(Value::Scalar(9.0)),
            offset: None,
        }];
        let (report, _) = run_scenario(&scenario).unwrap();
        assert_eq!(report.hazard_count, 1);
    }

    #[test]
    fn schema_errors_carry_pointers() {
        let bad = r#"{ "schema_version": 1, "seed": 1 }"#;
        let err = Scenario::from_json(bad).unwrap_err();
        assert!(matches!(err, HarnessError::Schema { .. }));

        let mut scenario = base_scenario();
        scenario.horizon_ticks = 0;
        let err = scenario.validate().unwrap_err();
        match err {
            HarnessError::Schema { pointer, .. } => assert_eq!(pointer, "/horizon_ticks"),
            other => panic!("unexpected error {other}"),
        }

        let text = serde_json::to_string(&base_scenario()).unwrap();
        let mangled = text.replace("\"abs_deviation\"", "\"abs_dev\"");
        let err = Scenario::from_json(&mangled).unwrap_err();
        match err {
            HarnessError::Schema { pointer, .. } => {
                assert!(pointer.contains("envelope"), "pointer was {pointer}")
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_extra_input_is_a_schema_error() {
        let mut scenario = base_scenario();
        scenario.pattern = PatternConfig::ValueOverride {
            config: OverrideConfig {
                threshold: 0.5,
                policy: patterns::ReplacementPolicy::Point {
                    worst_case: patterns::WorstCase::Constant(0.0),
                },
                direction: patterns::Direction::Lower,
                adaptive: Some(patterns::RiskMap {
                    points: vec![(0.0, 0.5)],
                }),
            },
        };
        let err = build_pattern(&scenario).unwrap_err();
        match err {
            HarnessError::Schema { pointer, .. } => assert_eq!(pointer, "/inputs/risk"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn wilson_interval_matches_frozen_values() {
        assert_eq!(wilson_interval(5, 20), None, "below 30 observations");
        // k=30, n=100: center/width computed from the closed form.
        let [lo, hi] = wilson_interval(30, 100).unwrap();
        assert!((lo - 0.2189).abs() < 5e-4, "lo {lo}");
        assert!((hi - 0.3958).abs() < 5e-4, "hi {hi}");
        // Degenerate p=0 stays clamped at zero.
        let [lo, hi] = wilson_interval(0, 1000).unwrap();
        assert_eq!(lo, 0.0);
        assert!(hi < 0.005);
    }

    #[test]
    fn compare_runs_every_kind_and_reports_row_errors() {
        let mut scenario = base_scenario();
        scenario.surrogate.as_mut().unwrap().ood = ErrorModel {
            erroneous_prob: 0.5,
            erroneous_offset: 5.0,
            ..ErrorModel::default()
        };
        let kinds: Vec<String> = [
            "single_channel",
            "rta",
            "tmr",
            "function_modification",
            "single_channel",
        ]
        .map(str::to_string)
        .to_vec();
        let rows = compare_patterns(&scenario, &kinds);
        assert_eq!(rows.len(), 5);
        let single = rows[0].report.as_ref().unwrap();
        let rta = rows[1].report.as_ref().unwrap();
        assert!(
            rta.hazard_count < single.hazard_count,
            "wrapper masks what the bare channel leaks"
        );
        assert!(rows[3].error.is_some(), "non-derivable kind reports an error");
        // Determinism: the duplicated kind produces identical rows.
        assert_eq!(
            serde_json::to_string(&rows[0].report).unwrap(),
            serde_json::to_string(&rows[4].report).unwrap()
        );
        let table = render_comparison(&rows);
        assert!(table.contains("single_channel"));
    }

    #[test]
    fn script_cycles_and_distribution_draws_are_per_source() {
        let mut scenario = base_scenario();
        scenario.horizon_ticks = 5;
        scenario.inputs.insert(
            "risk".into(),
            InputSpec::Distribution {
                dist: InputDist::Uniform { lo: 0.0, hi: 1.0 },
            },
        );
        let t = Timelines::generate(&scenario, 99);
        let input: Vec<f64> = (0..5)
            .map(|i| t.value_at("input", i).unwrap().as_scalar().unwrap())
            .collect();
        assert_eq!(input, vec![0.25, 0.5, 0.25, 0.5, 0.25], "script cycles");
        let r0 = t.value_at("risk", 0).unwrap().as_scalar().unwrap();
        assert!((0.0..1.0).contains(&r0));
        // Regeneration with the same trial seed is identical.
        let t2 = Timelines::generate(&scenario, 99);
        assert_eq!(
            t2.value_at("risk", 3).unwrap().as_scalar(),
            t.value_at("risk", 3).unwrap().as_scalar()
        );
    }

    #[test]
    fn scenario_roundtrips_through_json() {
        let scenario = base_scenario();
        let text = serde_json::to_string_pretty(&scenario).unwrap();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(scenario, back);
    }
}
