//! Architectural safety patterns and the components they are built from.
//!
//! Each `make_*` constructor assembles a ready-to-run [`PatternInstance`]:
//! an engine topology wired from reusable parts (monitors, switches, gates,
//! voters, override stages, partition selectors) around the simulated
//! complex component, with conventional channels where the pattern calls
//! for them. Construction validates the pattern-specific rules — decision
//! tables must be total, monitor modes must fit the variant, input
//! partitions must tile the declared space — so a scenario that builds is a
//! scenario that runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    build_topology, Annotation, Behavior, ComponentDef, EdgeDef, EngineError, Inputs, PortRef,
    Role, Signal, StepContext, StepOutput, Tick, Value,
};
use crate::geometry::{self, GeometryError};
use crate::surrogate::{
    BackupBehavior, BackupMode, ComplexBehavior, DetectorBehavior, DetectorConfig, OddRegion,
    ReferenceFn, SurrogateError, SurrogateProfile,
};

// ── Errors ──────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("variant `{variant}` requires a {required} monitor")]
    IncompatibleMonitorMode { variant: String, required: String },
    #[error("decision table must enumerate {expected} verdict combinations, got {got}")]
    IncompleteDecisionTable { expected: usize, got: usize },
    #[error("decision table routes to channel {index}, only {channels} channels exist")]
    InvalidChannelInTable { index: usize, channels: usize },
    #[error("partitions `{a}` and `{b}` overlap with positive volume")]
    PartitionOverlap { a: String, b: String },
    #[error("partitions leave {missing_volume} of the declared input space uncovered")]
    PartitionGap { missing_volume: f64 },
    #[error("partition `{label}` is not contained in the declared input space")]
    PartitionOutsideSpace { label: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Topology(#[from] EngineError),
    #[error("{0}")]
    Invalid(String),
}

// ── Monitors ────────────────────────────────────────────────────────

/// What a monitor checks. The first three observe the *input* stream and
/// pass on absence (no input, nothing to judge); `output_validity` observes
/// the guarded component's *output* and trips on absence, self-reported
/// invalidity, bound or deviation violations, and timestamp skew.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorSpec {
    /// Per-dimension closed ranges the input must stay inside.
    InputRange { ranges: Vec<[f64; 2]> },
    /// Input must lie in the declared operating domain.
    OddConformance { regions: Vec<OddRegion> },
    /// Per-dimension quantile envelope of the training distribution;
    /// anything outside is treated as out-of-distribution.
    OodEnvelope { bounds: Vec<[f64; 2]> },
    OutputValidity {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bounds: Option<[f64; 2]>,
        /// Maximum |output - reference(input)|; requires the monitor to be
        /// wired with a reference function and the raw input.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_deviation: Option<f64>,
        /// Maximum |now - stamp| in ticks before the output counts stale.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        staleness: Option<u64>,
    },
}

impl MonitorSpec {
    pub fn observes_input(&self) -> bool {
        !matches!(self, MonitorSpec::OutputValidity { .. })
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            MonitorSpec::InputRange { .. } => "input_range",
            MonitorSpec::OddConformance { .. } => "odd_conformance",
            MonitorSpec::OodEnvelope { .. } => "ood_envelope",
            MonitorSpec::OutputValidity { .. } => "output_validity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripReason {
    Range,
    Odd,
    Ood,
    Validity,
    Staleness,
    Consistency,
}

impl TripReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TripReason::Range => "range",
            TripReason::Odd => "odd",
            TripReason::Ood => "ood",
            TripReason::Validity => "validity",
            TripReason::Staleness => "staleness",
            TripReason::Consistency => "consistency",
        }
    }
}

fn within(ranges: &[[f64; 2]], value: &Value) -> bool {
    let slice = value.as_slice();
    slice.len() == ranges.len()
        && ranges
            .iter()
            .zip(slice)
            .all(|(r, x)| (r[0]..=r[1]).contains(x))
}

/// Pure monitor predicate: `None` means pass. `reference` is the trusted
/// value for deviation checks; a deviation check with no reference wired
/// trips defensively instead of silently passing.
pub fn eval_monitor(
    spec: &MonitorSpec,
    observed: Option<&Signal>,
    reference: Option<f64>,
    tick: Tick,
) -> Option<TripReason> {
    match spec {
        MonitorSpec::InputRange { ranges } => match observed {
            None => None,
            Some(sig) => (!within(ranges, &sig.value)).then_some(TripReason::Range),
        },
        MonitorSpec::OddConformance { regions } => match observed {
            None => None,
            Some(sig) => match crate::surrogate::in_odd(regions, sig.value.as_slice()) {
                Ok(true) => None,
                _ => Some(TripReason::Odd),
            },
        },
        MonitorSpec::OodEnvelope { bounds } => match observed {
            None => None,
            Some(sig) => (!within(bounds, &sig.value)).then_some(TripReason::Ood),
        },
        MonitorSpec::OutputValidity {
            bounds,
            max_deviation,
            staleness,
        } => {
            let Some(sig) = observed else {
                return Some(TripReason::Validity);
            };
            if !sig.valid {
                return Some(TripReason::Validity);
            }
            if let Some(b) = bounds {
                if !sig.value.as_slice().iter().all(|x| (b[0]..=b[1]).contains(x)) {
                    return Some(TripReason::Validity);
                }
            }
            if let Some(eps) = max_deviation {
                match (sig.value.as_scalar(), reference) {
                    (Some(v), Some(r)) if (v - r).abs() <= *eps => {}
                    _ => return Some(TripReason::Validity),
                }
            }
            if let Some(tol) = staleness {
                let skew = tick.0.abs_diff(sig.stamp.0);
                if skew > *tol {
                    return Some(TripReason::Staleness);
                }
            }
            None
        }
    }
}

/// Monitor component. Ports: `in` (observed stream), optional `ref_in`
/// (raw input for deviation checks) -> `verdict` (0 pass / 1 trip, always
/// valid, stamped with the current tick).
#[derive(Clone)]
pub struct MonitorBehavior {
    pub spec: MonitorSpec,
    pub reference: Option<ReferenceFn>,
}

impl Behavior for MonitorBehavior {
    fn step(
        &mut self,
        ctx: &mut StepContext<'_>,
        inputs: &Inputs<'_>,
    ) -> Result<StepOutput, EngineError> {
        let observed = inputs.get("in");
        let reference = match (&self.reference, inputs.get("ref_in")) {
            (Some(f), Some(raw)) => f.eval(raw.value.as_slice()).ok(),
            _ => None,
        };
        let trip = eval_monitor(&self.spec, observed, reference, ctx.tick);
        let verdict = Signal::scalar(if trip.is_some() { 1.0 } else { 0.0 }, ctx.tick);
        let mut out = StepOutput::single("verdict", Some(verdict));
        if let Some(reason) = trip {
            out = out.note(Annotation::MonitorTrip {
                reason: reason.as_str().to_string(),
            });
        }
        Ok(out)
    }

    fn fresh(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

/// Trip test shared by everything that consumes verdict signals: a missing
/// or self-invalid verdict counts as a trip (a silent monitor must not be
/// mistaken for a passing one).
fn verdict_tripped(verdict: Option<&Signal>) -> bool {
    match verdict {
        None => true,
        Some(sig) => !sig.valid || sig.value.as_scalar().is_none_or(|v| v >= 0.5),
    }
}

// ── Gate (active monitor) ───────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateAction {
    /// Tripped output is removed entirely (absence downstream).
    Disconnect,
    /// Tripped output is forwarded with `valid` forced to false.
    FlagInvalid,
}

/// Combinational gate: forwards `in` unless `verdict` trips, then applies
/// the configured action in the same tick.
#[derive(Clone)]
pub struct GateBehavior {
    pub action: GateAction,
}

impl Behavior for GateBehavior {
    fn step(
        &mut self,
        _ctx: &mut StepContext<'_>,
        inputs: &Inputs<'_>,
    ) -> Result<StepOutput, EngineError> {
        let signal = inputs.get("in").cloned();
        let out = if verdict_tripped(inputs.get("verdict")) {
            match self.action {
                GateAction::Disconnect => None,
                GateAction::FlagInvalid => signal.map(|mut s| {
                    s.valid = false;
                    s
                }),
            }
        } else {
            signal
        };
        Ok(StepOutput::single("out", out))
    }

    fn fresh(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

// ── Decision tables and the switch ──────────────────────────────────

/// Total map from monitor-verdict combinations to the desired channel
/// (0 = primary). Row index is the verdict bitmask: bit `i` set means
/// monitor `i` tripped.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTable {
    n_monitors: usize,
    rows: Vec<usize>,
}

impl DecisionTable {
    pub fn new(n_monitors: usize, rows: Vec<usize>, n_channels: usize) -> Result<Self, PatternError> {
        let expected = 1usize << n_monitors;
        if rows.len() != expected {
            return Err(PatternError::IncompleteDecisionTable {
                expected,
                got: rows.len(),
            });
        }
        if let Some(&bad) = rows.iter().find(|&&c| c >= n_channels) {
            return Err(PatternError::InvalidChannelInTable {
                index: bad,
                channels: n_channels,
            });
        }
        Ok(DecisionTable { n_monitors, rows })
    }

    pub fn select(&self, mask: usize) -> usize {
        self.rows[mask & ((1 << self.n_monitors) - 1)]
    }

    pub fn n_monitors(&self) -> usize {
        self.n_monitors
    }
}

/// Shorthand policies for building decision tables from scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecisionPolicy {
    /// Any tripped monitor routes to the (single) alternative.
    #[default]
    AnyTrip,
    /// Only a unanimous trip routes away from the primary.
    AllTrip,
    /// Full row listing, one desired channel per verdict bitmask.
    Explicit(Vec<usize>),
}

impl DecisionPolicy {
    pub fn build(&self, n_monitors: usize, n_channels: usize) -> Result<DecisionTable, PatternError> {
        let size = 1usize << n_monitors;
        match self {
            DecisionPolicy::AnyTrip => {
                let alt = if n_channels > 1 { 1 } else { 0 };
                let rows = (0..size).map(|m| if m == 0 { 0 } else { alt }).collect();
                DecisionTable::new(n_monitors, rows, n_channels)
            }
            DecisionPolicy::AllTrip => {
                let alt = if n_channels > 1 { 1 } else { 0 };
                let rows = (0..size)
                    .map(|m| if m == size - 1 && n_monitors > 0 { alt } else { 0 })
                    .collect();
                DecisionTable::new(n_monitors, rows, n_channels)
            }
            DecisionPolicy::Explicit(rows) => {
                DecisionTable::new(n_monitors, rows.clone(), n_channels)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchConfig {
    /// Ticks between the decision to switch and the new channel appearing
    /// on the output. 0 engages in the same tick; during a non-zero window
    /// the previously active channel keeps flowing.
    #[serde(default = "default_latency")]
    pub latency: u64,
    /// Whether the switch may ever return to the primary. Off by default:
    /// a tripped primary stays suspect.
    #[serde(default)]
    pub switch_back: bool,
    /// Consecutive clear ticks required before a switch-back is scheduled.
    #[serde(default)]
    pub hold_down: u64,
}

fn default_latency() -> u64 {
    1
}

impl Default for SwitchConfig {
    fn default() -> Self {
        SwitchConfig {
            latency: 1,
            switch_back: false,
            hold_down: 0,
        }
    }
}

/// Channel selector. Ports: `ch0` (primary), `ch1`.. (alternatives),
/// `v0`.. (monitor verdicts) -> `out`.
///
/// Every tick the decision table (plus, optionally, a primary
/// absent-or-invalid trip) yields the desired channel. A change is engaged
/// after `latency` ticks; a scheduled switch always completes, and while it
/// is pending the previously active channel is forwarded — a deliberately
/// unflattering model of real changeover windows.
#[derive(Clone)]
pub struct SwitchBehavior {
    n_channels: usize,
    table: DecisionTable,
    trip_on_invalid_primary: bool,
    config: SwitchConfig,
    // Run state:
    active: usize,
    pending: Option<(usize, u64)>,
    clear_streak: u64,
}

impl SwitchBehavior {
    pub fn new(
        n_channels: usize,
        table: DecisionTable,
        trip_on_invalid_primary: bool,
        config: SwitchConfig,
    ) -> Self {
        SwitchBehavior {
            n_channels,
            table,
            trip_on_invalid_primary,
            config,
            active: 0,
            pending: None,
            clear_streak: 0,
        }
    }

    fn channel_port(i: usize) -> String {
        format!("ch{i}")
    }

    fn verdict_port(i: usize) -> String {
        format!("v{i}")
    }
}

impl Behavior for SwitchBehavior {
    fn step(
        &mut self,
        _ctx: &mut StepContext<'_>,
        inputs: &Inputs<'_>,
    ) -> Result<StepOutput, EngineError> {
        let mut mask = 0usize;
        for i in 0..self.table.n_monitors() {
            if verdict_tripped(inputs.get(&Self::verdict_port(i))) {
                mask |= 1 << i;
            }
        }
        let mut desired = self.table.select(mask);
        if self.trip_on_invalid_primary
            && desired == 0
            && self.n_channels > 1
            && inputs
                .get(&Self::channel_port(0))
                .is_none_or(|s| !s.valid)
        {
            desired = 1;
        }

        if desired == 0 {
            self.clear_streak += 1;
        } else {
            self.clear_streak = 0;
        }

        let mut notes = Vec::new();
        let engage = |sw: &mut Self, target: usize, notes: &mut Vec<Annotation>| {
            notes.push(Annotation::Switch {
                from: Self::channel_port(sw.active),
                to: Self::channel_port(target),
            });
            sw.active = target;
        };

        // Progress a committed switch.
        if let Some((target, remaining)) = self.pending {
            if remaining <= 1 {
                engage(self, target, &mut notes);
                self.pending = None;
            } else {
                self.pending = Some((target, remaining - 1));
            }
        }

        // Schedule a new change if nothing is in flight.
        if self.pending.is_none() && desired != self.active {
            let returning = desired == 0;
            let allowed = if returning {
                self.config.switch_back && self.clear_streak > self.config.hold_down
            } else {
                true
            };
            if allowed {
                if self.config.latency == 0 {
                    engage(self, desired, &mut notes);
                } else {
                    self.pending = Some((desired, self.config.latency));
                }
            }
        }

        let out = inputs.get(&Self::channel_port(self.active)).cloned();
        let mut step_out = StepOutput::single("out", out);
        step_out.notes = notes;
        Ok(step_out)
    }

    fn fresh(&self) -> Box<dyn Behavior> {
        Box::new(SwitchBehavior {
            active: 0,
            pending: None,
            clear_streak: 0,
            ..self.clone()
        })
    }
}

// ── Voter ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoterMode {
    /// Output the value shared (within `tolerance`, componentwise) by a
    /// majority of participating replicas. With no majority the voter
    /// delivers the componentwise median flagged invalid.
    MajorityExact { tolerance: f64 },
    /// Componentwise median of the participating replicas.
    Median,
}

fn median_sorted(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn componentwise_median(values: &[&Value]) -> Value {
    let dim = values[0].dim();
    if dim == 1 {
        Value::Scalar(median_sorted(
            values.iter().filter_map(|v| v.as_scalar()).collect(),
        ))
    } else {
        let comps = (0..dim)
            .map(|d| median_sorted(values.iter().map(|v| v.as_slice()[d]).collect()))
            .collect();
        Value::Vector(comps)
    }
}

fn values_close(a: &Value, b: &Value, tol: f64) -> bool {
    let (a, b) = (a.as_slice(), b.as_slice());
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Redundancy voter. Ports `r0`..`r{n-1}` -> `out`. Replicas participate
/// if present and self-valid; fewer than two participants yields absence.
#[derive(Clone)]
pub struct VoterBehavior {
    pub n_replicas: usize,
    pub mode: VoterMode,
}

impl Behavior for VoterBehavior {
    fn step(
        &mut self,
        _ctx: &mut StepContext<'_>,
        inputs: &Inputs<'_>,
    ) -> Result<StepOutput, EngineError> {
        let mut participating: Vec<&Signal> = Vec::new();
        for i in 0..self.n_replicas {
            if let Some(sig) = inputs.get(&format!("r{i}")) {
                if sig.valid {
                    participating.push(sig);
                }
            }
        }
        // Discard shape outliers relative to the first participant.
        let dim0 = participating.first().map(|s| s.value.dim());
        if let Some(d) = dim0 {
            participating.retain(|s| s.value.dim() == d);
        }
        if participating.len() < 2 {
            return Ok(StepOutput::single("out", None));
        }
        let min_stamp = participating.iter().map(|s| s.stamp).min().unwrap();
        let out = match &self.mode {
            VoterMode::MajorityExact { tolerance } => {
                let need = self.n_replicas / 2 + 1;
                let mut winner = None;
                'search: for i in 0..participating.len() {
                    let mut votes = 1;
                    for j in 0..participating.len() {
                        if i != j
                            && values_close(
                                &participating[i].value,
                                &participating[j].value,
                                *tolerance,
                            )
                        {
                            votes += 1;
                        }
                    }
                    if votes >= need {
                        winner = Some(i);
                        break 'search;
                    }
                }
                match winner {
                    Some(i) => Signal {
                        value: participating[i].value.clone(),
                        valid: true,
                        stamp: min_stamp,
                    },
                    None => Signal {
                        value: componentwise_median(
                            &participating.iter().map(|s| &s.value).collect::<Vec<_>>(),
                        ),
                        valid: false,
                        stamp: min_stamp,
                    },
                }
            }
            VoterMode::Median => Signal {
                value: componentwise_median(
                    &participating.iter().map(|s| &s.value).collect::<Vec<_>>(),
                ),
                valid: true,
                stamp: min_stamp,
            },
        };
        Ok(StepOutput::single("out", Some(out)))
    }

    fn fresh(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

// ── Value override ──────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorstCase {
    Constant(f64),
    /// Worst case as a function of the raw input (wired on `ref_in`).
    Reference(ReferenceFn),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacementDist {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
}

impl ReplacementDist {
    fn quantile(&self, q: f64) -> f64 {
        match self {
            ReplacementDist::Uniform { lo, hi } => lo + q * (hi - lo),
            ReplacementDist::Normal { mean, std } => mean + std * inverse_normal_cdf(q),
        }
    }
}

/// Standard normal quantile via the Acklam rational approximation
/// (absolute error below 1.2e-8 over (0, 1)).
#[allow(clippy::excessive_precision)] // published constants kept verbatim
pub fn inverse_normal_cdf(q: f64) -> f64 {
    assert!(q > 0.0 && q < 1.0, "quantile must lie in (0, 1), got {q}");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const Q_LOW: f64 = 0.02425;

    if q < Q_LOW {
        let u = (-2.0 * q.ln()).sqrt();
        (((((C[0] * u + C[1]) * u + C[2]) * u + C[3]) * u + C[4]) * u + C[5])
            / ((((D[0] * u + D[1]) * u + D[2]) * u + D[3]) * u + 1.0)
    } else if q <= 1.0 - Q_LOW {
        let u = q - 0.5;
        let r = u * u;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * u
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -inverse_normal_cdf(1.0 - q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacementPolicy {
    /// Replace with the worst-case provider's value.
    Point { worst_case: WorstCase },
    /// Replace with a fixed quantile of a reference distribution.
    Distribution { dist: ReplacementDist, quantile: f64 },
}

/// Which side of the quantity is safe: `lower` means the override must
/// substitute a pessimistically small value (and the distribution mode
/// takes its quantile from the lower tail), `upper` the reverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Lower,
    Upper,
}

/// Monotone risk-to-threshold map: entries are `(risk_at_least, threshold)`
/// with risks strictly ascending and thresholds non-increasing, all at or
/// below the base threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskMap {
    pub points: Vec<(f64, f64)>,
}

impl RiskMap {
    pub fn validate(&self, base_threshold: f64) -> Result<(), PatternError> {
        if self.points.is_empty() {
            return Err(PatternError::Invalid("risk map has no points".into()));
        }
        for w in self.points.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(PatternError::Invalid(
                    "risk map risks must be strictly ascending".into(),
                ));
            }
            if w[0].1 < w[1].1 {
                return Err(PatternError::Invalid(
                    "risk map thresholds must not increase with risk".into(),
                ));
            }
        }
        if self.points.iter().any(|p| p.1 > base_threshold) {
            return Err(PatternError::Invalid(
                "risk map thresholds must not exceed the base threshold".into(),
            ));
        }
        Ok(())
    }

    pub fn threshold_for(&self, risk: f64, base: f64) -> f64 {
        self.points
            .iter()
            .rev()
            .find(|(r, _)| *r <= risk)
            .map(|(_, t)| *t)
            .unwrap_or(base)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideConfig {
    /// Base uncertainty threshold above which the estimate is replaced.
    pub threshold: f64,
    pub policy: ReplacementPolicy,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptive: Option<RiskMap>,
}

impl OverrideConfig {
    pub fn validate(&self) -> Result<(), PatternError> {
        if let ReplacementPolicy::Distribution { quantile, .. } = &self.policy {
            if !(*quantile > 0.0 && *quantile < 1.0) {
                return Err(PatternError::Invalid(format!(
                    "replacement quantile {quantile} outside (0, 1)"
                )));
            }
        }
        if let Some(map) = &self.adaptive {
            map.validate(self.threshold)?;
        }
        Ok(())
    }

    fn replacement(&self, raw_input: Option<&Signal>) -> f64 {
        match &self.policy {
            ReplacementPolicy::Point { worst_case } => match worst_case {
                WorstCase::Constant(v) => *v,
                WorstCase::Reference(f) => raw_input
                    .and_then(|s| f.eval(s.value.as_slice()).ok())
                    .unwrap_or(match self.direction {
                        Direction::Lower => f64::NEG_INFINITY,
                        Direction::Upper => f64::INFINITY,
                    }),
            },
            ReplacementPolicy::Distribution { dist, quantile } => {
                let q = match self.direction {
                    Direction::Lower => *quantile,
                    Direction::Upper => 1.0 - *quantile,
                };
                dist.quantile(q)
            }
        }
    }
}

/// Uncertainty-gated substitution. Ports: `in` (estimate), `uncertainty`
/// (reported confidence), optional `risk`, optional `ref_in` -> `out`.
/// A missing uncertainty report fails safe: the estimate is overridden.
#[derive(Clone)]
pub struct OverrideBehavior {
    pub config: OverrideConfig,
}

impl Behavior for OverrideBehavior {
    fn step(
        &mut self,
        _ctx: &mut StepContext<'_>,
        inputs: &Inputs<'_>,
    ) -> Result<StepOutput, EngineError> {
        let Some(estimate) = inputs.get("in") else {
            return Ok(StepOutput::single("out", None));
        };
        let threshold = match (&self.config.adaptive, inputs.get("risk")) {
            (Some(map), Some(risk)) => match risk.value.as_scalar() {
                Some(r) => map.threshold_for(r, self.config.threshold),
                None => map.points.last().map(|p| p.1).unwrap_or(self.config.threshold),
            },
            _ => self.config.threshold,
        };
        let uncertainty = inputs
            .get("uncertainty")
            .and_then(|s| s.value.as_scalar())
            .unwrap_or(f64::INFINITY);

        if uncertainty <= threshold {
            return Ok(StepOutput::single("out", Some(estimate.clone())));
        }
        let replaced = Signal {
            value: Value::Scalar(self.config.replacement(inputs.get("ref_in"))),
            valid: true,
            stamp: estimate.stamp,
        };
        Ok(StepOutput::single("out", Some(replaced)).note(Annotation::Overridden))
    }

    fn fresh(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

// ── Ensemble parts ──────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerMode {
    Mean,
    Median,
    /// Majority vote within `tolerance`; no majority yields an invalid
    /// median, mirroring the redundancy voter.
    Vote { tolerance: f64 },
}

/// Ensemble combiner. Ports `m0`..`m{n-1}` -> `out`. Members participate
/// if present and valid; with no participants the output is absent.
#[derive(Clone)]
pub struct CombinerBehavior {
    pub n_models: usize,
    pub mode: CombinerMode,
}

impl Behavior for CombinerBehavior {
    fn step(
        &mut self,
        _ctx: &mut StepContext<'_>,
        inputs: &Inputs<'_>,
    ) -> Result<StepOutput, EngineError> {
        let mut participating: Vec<&Signal> = Vec::new();
        for i in 0..self.n_models {
            if let Some(sig) = inputs.get(&format!("m{i}")) {
                if sig.valid {
                    participating.push(sig);
                }
            }
        }
        let dim0 = participating.first().map(|s| s.value.dim());
        if let Some(d) = dim0 {
            participating.retain(|s| s.value.dim() == d);
        }
        if participating.is_empty() {
            return Ok(StepOutput::single("out", None));
        }
        let min_stamp = participating.iter().map(|s| s.stamp).min().unwrap();
        let values: Vec<&Value> = participating.iter().map(|s| &s.value).collect();
        let out = match &self.mode {
            CombinerMode::Mean => {
                let dim = values[0].dim();
                let n = values.len() as f64;
                let mean: Vec<f64> = (0..dim)
                    .map(|d| values.iter().map(|v| v.as_slice()[d]).sum::<f64>() / n)
                    .collect();
                Signal {
                    value: if dim == 1 {
                        Value::Scalar(mean[0])
                    } else {
                        Value::Vector(mean)
                    },
                    valid: true,
                    stamp: min_stamp,
                }
            }
            CombinerMode::Median => Signal {
                value: componentwise_median(&values),
                valid: true,
                stamp: min_stamp,
            },
            CombinerMode::Vote { tolerance } => {
                let need = self.n_models / 2 + 1;
                let winner = (0..values.len()).find(|&i| {
                    let votes = 1 + (0..values.len())
                        .filter(|&j| j != i && values_close(values[i], values[j], *tolerance))
                        .count();
                    votes >= need
                });
                match winner {
                    Some(i) => Signal {
                        value: values[i].clone(),
                        valid: true,
                        stamp: min_stamp,
                    },
                    None => Signal {
                        value: componentwise_median(&values),
                        valid: false,
                        stamp: min_stamp,
                    },
                }
            }
        };
        Ok(StepOutput::single("out", Some(out)))
    }

    fn fresh(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    /// Maximum pairwise spread (componentwise) the members may show.
    pub spread_threshold: f64,
    /// Maximum stamp misalignment between members, in ticks.
    #[serde(default)]
    pub stamp_tolerance: u64,
}

/// Ensemble consistency check. Ports `m0`..`m{n-1}` -> `verdict`. Trips if
/// any member is absent or invalid, stamps disagree beyond tolerance, or
/// the value spread exceeds the threshold.
#[derive(Clone)]
pub struct ConsistencyBehavior {
    pub n_models: usize,
    pub config: ConsistencyConfig,
}

impl Behavior for ConsistencyBehavior {
    fn step(
        &mut self,
        ctx: &mut StepContext<'_>,
        inputs: &Inputs<'_>,
    ) -> Result<StepOutput, EngineError> {
        let mut members: Vec<&Signal> = Vec::new();
        let mut tripped = false;
        for i in 0..self.n_models {
            match inputs.get(&format!("m{i}")) {
                Some(sig) if sig.valid => members.push(sig),
                _ => tripped = true,
            }
        }
        if !tripped {
            let stamps: Vec<u64> = members.iter().map(|s| s.stamp.0).collect();
            let skew = stamps.iter().max().unwrap() - stamps.iter().min().unwrap();
            if skew > self.config.stamp_tolerance {
                tripped = true;
            }
        }
        if !tripped {
            'outer: for i in 0..members.len() {
                for j in i + 1..members.len() {
                    if !values_close(
                        &members[i].value,
                        &members[j].value,
                        self.config.spread_threshold,
                    ) {
                        tripped = true;
                        break 'outer;
                    }
                }
            }
        }
        let verdict = Signal::scalar(if tripped { 1.0 } else { 0.0 }, ctx.tick);
        let mut out = StepOutput::single("verdict", Some(verdict));
        if tripped {
            out = out.note(Annotation::MonitorTrip {
                reason: TripReason::Consistency.as_str().to_string(),
            });
        }
        Ok(out)
    }

    fn fresh(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

// ── Small plumbing behaviors ────────────────────────────────────────

/// Identity, or per-dimension clamp when bounds are given. Used for the
/// assured pre/post stages around a wrapped component.
#[derive(Clone)]
pub struct ClampBehavior {
    pub bounds: Option<Vec<[f64; 2]>>,
}

impl Behavior for ClampBehavior {
    fn step(
        &mut self,
        _ctx: &mut StepContext<'_>,
        inputs: &Inputs<'_>,
    ) -> Result<StepOutput, EngineError> {
        let out = inputs.get("in").map(|sig| {
            let mut sig = sig.clone();
            if let Some(bounds) = &self.bounds {
                let clamped: Vec<f64> = sig
                    .value
                    .as_slice()
                    .iter()
                    .enumerate()
                    .map(|(d, &x)| match bounds.get(d) {
                        Some(b) => x.clamp(b[0], b[1]),
                        None => x,
                    })
                    .collect();
                sig.value = match sig.value {
                    Value::Scalar(_) => Value::Scalar(clamped[0]),
                    Value::Vector(_) => Value::Vector(clamped),
                };
            }
            sig
        });
        Ok(StepOutput::single("out", out))
    }

    fn fresh(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

/// Detection-stream safety stage: enlarges every positive detection so the
/// guarded overlap bound implies containment. Malformed streams yield
/// absence (downstream counts it as loss, never as a plausible value).
#[derive(Clone)]
pub struct DetectionPostprocess {
    pub iou_floor: f64,
}

impl Behavior for DetectionPostprocess {
    fn step(
        &mut self,
        _ctx: &mut StepContext<'_>,
        inputs: &Inputs<'_>,
    ) -> Result<StepOutput, EngineError> {
        let out = inputs.get("in").and_then(|sig| {
            let detections = geometry::decode_detections(sig.value.as_slice()).ok()?;
            let processed = geometry::safety_postprocess(&detections, self.iou_floor).ok()?;
            Some(Signal {
                value: Value::Vector(geometry::encode_detections(&processed)),
                valid: sig.valid,
                stamp: sig.stamp,
            })
        });
        Ok(StepOutput::single("out", out))
    }

    fn fresh(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

/// Ownership-based selector for partitioned inputs. Ports: `in` (raw
/// input), `ch0`..`ch{n-1}` -> `out`. The owning channel is the first
/// whose partition contains the input (ties on shared boundaries go to the
/// lowest index); inputs outside every partition yield absence and a trip
/// note.
#[derive(Clone)]
pub struct SelectorBehavior {
    pub partitions: Vec<Vec<OddRegion>>,
}

impl Behavior for SelectorBehavior {
    fn step(
        &mut self,
        _ctx: &mut StepContext<'_>,
        inputs: &Inputs<'_>,
    ) -> Result<StepOutput, EngineError> {
        let Some(input) = inputs.get("in") else {
            return Ok(StepOutput::single("out", None));
        };
        let point = input.value.as_slice();
        let owner = self
            .partitions
            .iter()
            .position(|regions| crate::surrogate::in_odd(regions, point).unwrap_or(false));
        match owner {
            Some(i) => Ok(StepOutput::single(
                "out",
                inputs.get(&format!("ch{i}")).cloned(),
            )),
            None => Ok(StepOutput::single("out", None).note(Annotation::MonitorTrip {
                reason: TripReason::Odd.as_str().to_string(),
            })),
        }
    }

    fn fresh(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

// ── Partition validation ────────────────────────────────────────────

fn boxes_overlap_volume(a: &OddRegion, b: &OddRegion) -> f64 {
    a.bounds
        .iter()
        .zip(&b.bounds)
        .map(|(x, y)| (x[1].min(y[1]) - x[0].max(y[0])).max(0.0))
        .product()
}

fn box_contained(inner: &OddRegion, outer: &OddRegion) -> bool {
    inner
        .bounds
        .iter()
        .zip(&outer.bounds)
        .all(|(i, o)| o[0] <= i[0] && i[1] <= o[1])
}

/// Checks that the channel partitions tile the declared input space:
/// pairwise disjoint up to measure-zero shared faces, each piece inside one
/// space box, and total volume matching. Shared closed boundaries are fine;
/// routing resolves them to the lowest channel index.
pub fn validate_partitions(
    space: &[OddRegion],
    partitions: &[Vec<OddRegion>],
) -> Result<(), PatternError> {
    if space.is_empty() || partitions.is_empty() {
        return Err(PatternError::Invalid(
            "partitioning needs a non-empty space and at least one channel".into(),
        ));
    }
    let dim = space[0].bounds.len();
    for r in space.iter().chain(partitions.iter().flatten()) {
        r.validate()?;
        if r.bounds.len() != dim {
            return Err(SurrogateError::DimensionMismatch {
                expected: dim,
                got: r.bounds.len(),
            }
            .into());
        }
    }
    for i in 0..space.len() {
        for j in i + 1..space.len() {
            if boxes_overlap_volume(&space[i], &space[j]) > 0.0 {
                return Err(PatternError::Invalid(format!(
                    "declared space boxes `{}` and `{}` overlap",
                    space[i].label, space[j].label
                )));
            }
        }
    }

    let all: Vec<&OddRegion> = partitions.iter().flatten().collect();
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            if boxes_overlap_volume(all[i], all[j]) > 0.0 {
                return Err(PatternError::PartitionOverlap {
                    a: all[i].label.clone(),
                    b: all[j].label.clone(),
                });
            }
        }
    }
    for r in &all {
        if !space.iter().any(|s| box_contained(r, s)) {
            return Err(PatternError::PartitionOutsideSpace {
                label: r.label.clone(),
            });
        }
    }
    let space_vol: f64 = space.iter().map(|r| r.volume()).sum();
    let part_vol: f64 = all.iter().map(|r| r.volume()).sum();
    let missing = space_vol - part_vol;
    let tol = 1e-9 * space_vol.max(1.0);
    if missing > tol {
        return Err(PatternError::PartitionGap {
            missing_volume: missing,
        });
    }
    Ok(())
}

// ── Pattern instances ───────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    SingleChannel,
    ActiveMonitor,
    BackupParallel,
    Combined,
    Rta,
    ValueOverride,
    FunctionModification,
    InputPartitioning,
    Tmr,
}

impl PatternKind {
    pub fn all() -> [PatternKind; 9] {
        [
            PatternKind::SingleChannel,
            PatternKind::ActiveMonitor,
            PatternKind::BackupParallel,
            PatternKind::Combined,
            PatternKind::Rta,
            PatternKind::ValueOverride,
            PatternKind::FunctionModification,
            PatternKind::InputPartitioning,
            PatternKind::Tmr,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            PatternKind::SingleChannel => "single_channel",
            PatternKind::ActiveMonitor => "active_monitor",
            PatternKind::BackupParallel => "backup_parallel",
            PatternKind::Combined => "combined",
            PatternKind::Rta => "rta",
            PatternKind::ValueOverride => "value_override",
            PatternKind::FunctionModification => "function_modification",
            PatternKind::InputPartitioning => "input_partitioning",
            PatternKind::Tmr => "tmr",
        }
    }

    pub fn parse(s: &str) -> Option<PatternKind> {
        PatternKind::all().into_iter().find(|k| k.name() == s)
    }
}

/// A fully wired, runnable pattern.
#[derive(Debug)]
pub struct PatternInstance {
    pub kind: PatternKind,
    pub topology: crate::engine::Topology,
    /// System output the harness judges against the safety envelope.
    pub output: PortRef,
    /// External feed for the main input stream.
    pub input_source: PortRef,
    /// Additional external feeds this instance needs (risk, independent
    /// observations, ...), by source port.
    pub extra_sources: Vec<PortRef>,
    pub summary: String,
}

const INPUT: &str = "input";

fn input_source() -> ComponentDef {
    ComponentDef::external_source(INPUT, "out")
}

fn complex_component(profile: &SurrogateProfile) -> ComponentDef {
    ComponentDef::new(
        "complex",
        Role::Complex,
        &["out", "uncertainty"],
        Box::new(ComplexBehavior {
            profile: profile.clone(),
        }),
    )
}

fn backup_component(id: &str, role: Role, mode: BackupMode, reference: ReferenceFn) -> ComponentDef {
    ComponentDef::new(id, role, &["out"], Box::new(BackupBehavior { mode, reference }))
}

fn monitor_component(id: &str, spec: MonitorSpec, reference: Option<ReferenceFn>) -> ComponentDef {
    ComponentDef::new(
        id,
        Role::Monitor,
        &["verdict"],
        Box::new(MonitorBehavior { spec, reference }),
    )
}

fn edge(from_c: &str, from_p: &str, to_c: &str, to_p: &str) -> EdgeDef {
    EdgeDef::direct(from_c, from_p, to_c, to_p)
}

fn instance(
    kind: PatternKind,
    components: Vec<ComponentDef>,
    edges: Vec<EdgeDef>,
    output: PortRef,
    extra_sources: Vec<PortRef>,
    summary: impl Into<String>,
) -> Result<PatternInstance, PatternError> {
    Ok(PatternInstance {
        kind,
        topology: build_topology(components, edges)?,
        output,
        input_source: PortRef::new(INPUT, "out"),
        extra_sources,
        summary: summary.into(),
    })
}

/// Unguarded baseline: the complex component's output is the system output.
pub fn make_single_channel(profile: &SurrogateProfile) -> Result<PatternInstance, PatternError> {
    instance(
        PatternKind::SingleChannel,
        vec![input_source(), complex_component(profile)],
        vec![edge(INPUT, "out", "complex", "in")],
        PortRef::new("complex", "out"),
        vec![],
        "input -> complex -> out; no guards",
    )
}

/// Monitor gating the complex output in the same tick.
pub fn make_active_monitor(
    profile: &SurrogateProfile,
    spec: MonitorSpec,
    action: GateAction,
) -> Result<PatternInstance, PatternError> {
    let observes_input = spec.observes_input();
    let mode = spec.mode_name();
    let monitor = monitor_component("monitor", spec, Some(profile.reference.clone()));
    let gate = ComponentDef::new(
        "gate",
        Role::Switch,
        &["out"],
        Box::new(GateBehavior { action }),
    );
    let mut edges = vec![
        edge(INPUT, "out", "complex", "in"),
        edge("complex", "out", "gate", "in"),
        edge("monitor", "verdict", "gate", "verdict"),
    ];
    if observes_input {
        edges.push(edge(INPUT, "out", "monitor", "in"));
    } else {
        edges.push(edge("complex", "out", "monitor", "in"));
        edges.push(edge(INPUT, "out", "monitor", "ref_in"));
    }
    instance(
        PatternKind::ActiveMonitor,
        vec![input_source(), complex_component(profile), monitor, gate],
        edges,
        PortRef::new("gate", "out"),
        vec![],
        format!("complex gated by a {mode} monitor"),
    )
}

/// Hot standby: a conventional channel takes over when the primary output
/// is absent or self-flagged invalid.
pub fn make_backup_parallel(
    profile: &SurrogateProfile,
    backup_mode: BackupMode,
    switch: SwitchConfig,
) -> Result<PatternInstance, PatternError> {
    let table = DecisionTable::new(0, vec![0], 2)?;
    let switch_comp = ComponentDef::new(
        "switch",
        Role::Switch,
        &["out"],
        Box::new(SwitchBehavior::new(2, table, true, switch)),
    );
    instance(
        PatternKind::BackupParallel,
        vec![
            input_source(),
            complex_component(profile),
            backup_component("backup", Role::Backup, backup_mode, profile.reference.clone()),
            switch_comp,
        ],
        vec![
            edge(INPUT, "out", "complex", "in"),
            edge(INPUT, "out", "backup", "in"),
            edge("complex", "out", "switch", "ch0"),
            edge("backup", "out", "switch", "ch1"),
        ],
        PortRef::new("switch", "out"),
        vec![],
        "complex primary with conventional hot standby; takeover on absent or invalid primary",
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinedVariant {
    /// Monitor watches the input stream.
    InputMonitor,
    /// Monitor watches the complex output against the shared input.
    OutputMonitor,
    /// Monitor watches the complex output against an independent
    /// observation stream.
    IndependentChannel,
}

impl CombinedVariant {
    pub fn name(&self) -> &'static str {
        match self {
            CombinedVariant::InputMonitor => "input_monitor",
            CombinedVariant::OutputMonitor => "output_monitor",
            CombinedVariant::IndependentChannel => "independent_channel",
        }
    }
}

/// Monitored switchover to a conventional backup. The variant fixes where
/// the monitor sits, and the monitor mode must match it.
pub fn make_combined(
    profile: &SurrogateProfile,
    backup_mode: BackupMode,
    spec: MonitorSpec,
    variant: CombinedVariant,
    switch: SwitchConfig,
) -> Result<PatternInstance, PatternError> {
    match variant {
        CombinedVariant::InputMonitor if !spec.observes_input() => {
            return Err(PatternError::IncompatibleMonitorMode {
                variant: variant.name().into(),
                required: "input-observing".into(),
            });
        }
        CombinedVariant::OutputMonitor | CombinedVariant::IndependentChannel
            if spec.observes_input() =>
        {
            return Err(PatternError::IncompatibleMonitorMode {
                variant: variant.name().into(),
                required: "output_validity".into(),
            });
        }
        _ => {}
    }

    let monitor = monitor_component("monitor", spec, Some(profile.reference.clone()));
    let table = DecisionPolicy::AnyTrip.build(1, 2)?;
    let switch_comp = ComponentDef::new(
        "switch",
        Role::Switch,
        &["out"],
        Box::new(SwitchBehavior::new(2, table, true, switch)),
    );
    let mut components = vec![
        input_source(),
        complex_component(profile),
        backup_component("backup", Role::Backup, backup_mode, profile.reference.clone()),
        monitor,
        switch_comp,
    ];
    let mut edges = vec![
        edge(INPUT, "out", "complex", "in"),
        edge(INPUT, "out", "backup", "in"),
        edge("complex", "out", "switch", "ch0"),
        edge("backup", "out", "switch", "ch1"),
        edge("monitor", "verdict", "switch", "v0"),
    ];
    let mut extra = vec![];
    match variant {
        CombinedVariant::InputMonitor => {
            edges.push(edge(INPUT, "out", "monitor", "in"));
        }
        CombinedVariant::OutputMonitor => {
            edges.push(edge("complex", "out", "monitor", "in"));
            edges.push(edge(INPUT, "out", "monitor", "ref_in"));
        }
        CombinedVariant::IndependentChannel => {
            components.push(ComponentDef::external_source("indep_input", "out"));
            edges.push(edge("complex", "out", "monitor", "in"));
            edges.push(edge("indep_input", "out", "monitor", "ref_in"));
            extra.push(PortRef::new("indep_input", "out"));
        }
    }
    instance(
        PatternKind::Combined,
        components,
        edges,
        PortRef::new("switch", "out"),
        extra,
        format!(
            "monitored switchover to a conventional backup ({} variant)",
            variant.name()
        ),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RtaBoundary {
    #[default]
    MlOnly,
    /// Assured clamp stages before the complex component and after the
    /// switch widen the wrapped boundary.
    WithPrepost,
    /// The monitor reads the component's self-reported uncertainty instead
    /// of observing independently — constructible, but a design smell the
    /// allocation validator flags.
    MonitorInside,
}

impl RtaBoundary {
    pub fn name(&self) -> &'static str {
        match self {
            RtaBoundary::MlOnly => "ml_only",
            RtaBoundary::WithPrepost => "with_prepost",
            RtaBoundary::MonitorInside => "monitor_inside",
        }
    }
}

pub struct RtaOptions {
    pub monitors: Vec<MonitorSpec>,
    pub alternatives: Vec<BackupMode>,
    pub boundary: RtaBoundary,
    pub decision: DecisionPolicy,
    pub switch: SwitchConfig,
    /// Clamp bounds for the pre/post stages when the boundary includes
    /// them; `None` leaves them as identity stages.
    pub clamp: Option<Vec<[f64; 2]>>,
}

/// Runtime-assured wrapper: monitors arbitrate, via a total decision table,
/// between the complex channel and one or more assured alternatives.
pub fn make_rta(
    profile: &SurrogateProfile,
    options: RtaOptions,
) -> Result<PatternInstance, PatternError> {
    if options.monitors.is_empty() {
        return Err(PatternError::Invalid("rta needs at least one monitor".into()));
    }
    if options.alternatives.is_empty() {
        return Err(PatternError::Invalid(
            "rta needs at least one alternative".into(),
        ));
    }
    let n_channels = 1 + options.alternatives.len();
    let table = options.decision.build(options.monitors.len(), n_channels)?;

    let with_prepost = options.boundary == RtaBoundary::WithPrepost;
    let feed = if with_prepost { "pre" } else { INPUT };

    let mut components = vec![input_source(), complex_component(profile)];
    let mut edges = vec![edge(feed, "out", "complex", "in")];

    if with_prepost {
        components.push(ComponentDef::new(
            "pre",
            Role::Preprocess,
            &["out"],
            Box::new(ClampBehavior {
                bounds: options.clamp.clone(),
            }),
        ));
        edges.push(edge(INPUT, "out", "pre", "in"));
    }

    for (i, mode) in options.alternatives.iter().enumerate() {
        let id = format!("alt{i}");
        components.push(backup_component(
            &id,
            Role::Alternative,
            mode.clone(),
            profile.reference.clone(),
        ));
        edges.push(edge(feed, "out", &id, "in"));
    }

    for (i, spec) in options.monitors.iter().enumerate() {
        let id = format!("monitor{i}");
        let observes_input = spec.observes_input();
        components.push(monitor_component(
            &id,
            spec.clone(),
            Some(profile.reference.clone()),
        ));
        match options.boundary {
            RtaBoundary::MonitorInside => {
                // Trusts the component's own self-assessment.
                edges.push(edge("complex", "uncertainty", &id, "in"));
            }
            _ if observes_input => edges.push(edge(feed, "out", &id, "in")),
            _ => {
                edges.push(edge("complex", "out", &id, "in"));
                edges.push(edge(feed, "out", &id, "ref_in"));
            }
        }
        edges.push(edge(&id, "verdict", "switch", &format!("v{i}")));
    }

    components.push(ComponentDef::new(
        "switch",
        Role::Switch,
        &["out"],
        Box::new(SwitchBehavior::new(n_channels, table, true, options.switch)),
    ));
    edges.push(edge("complex", "out", "switch", "ch0"));
    for i in 0..options.alternatives.len() {
        edges.push(edge(&format!("alt{i}"), "out", "switch", &format!("ch{}", i + 1)));
    }

    let output = if with_prepost {
        components.push(ComponentDef::new(
            "post",
            Role::Postprocess,
            &["out"],
            Box::new(ClampBehavior { bounds: None }),
        ));
        edges.push(edge("switch", "out", "post", "in"));
        PortRef::new("post", "out")
    } else {
        PortRef::new("switch", "out")
    };

    instance(
        PatternKind::Rta,
        components,
        edges,
        output,
        vec![],
        format!(
            "runtime-assured wrapper ({} boundary, {} monitor(s), {} alternative(s))",
            options.boundary.name(),
            options.monitors.len(),
            options.alternatives.len()
        ),
    )
}

pub struct EnsembleOptions {
    pub n_models: usize,
    pub combiner: CombinerMode,
    pub consistency: ConsistencyConfig,
    pub alternative: BackupMode,
    pub switch: SwitchConfig,
}

/// Runtime-assured wrapper whose complex channel is an ensemble of simpler
/// models: a combiner merges them and a consistency check over the members
/// drives the switch.
pub fn make_rta_ensemble(
    profile: &SurrogateProfile,
    options: EnsembleOptions,
) -> Result<PatternInstance, PatternError> {
    if options.n_models < 2 {
        return Err(PatternError::Invalid(
            "ensemble needs at least two models".into(),
        ));
    }
    let mut components = vec![input_source()];
    let mut edges = Vec::new();
    for i in 0..options.n_models {
        // Same profile, distinct ids: every member draws from its own
        // random stream, so members disagree exactly where the error model
        // says they can.
        let id = format!("model{i}");
        components.push(ComponentDef::new(
            &id,
            Role::Complex,
            &["out", "uncertainty"],
            Box::new(ComplexBehavior {
                profile: profile.clone(),
            }),
        ));
        edges.push(edge(INPUT, "out", &id, "in"));
        edges.push(edge(&id, "out", "combiner", &format!("m{i}")));
        edges.push(edge(&id, "out", "consistency", &format!("m{i}")));
    }
    components.push(ComponentDef::new(
        "combiner",
        Role::Voter,
        &["out"],
        Box::new(CombinerBehavior {
            n_models: options.n_models,
            mode: options.combiner.clone(),
        }),
    ));
    components.push(ComponentDef::new(
        "consistency",
        Role::Monitor,
        &["verdict"],
        Box::new(ConsistencyBehavior {
            n_models: options.n_models,
            config: options.consistency.clone(),
        }),
    ));
    components.push(backup_component(
        "alt0",
        Role::Alternative,
        options.alternative.clone(),
        profile.reference.clone(),
    ));
    edges.push(edge(INPUT, "out", "alt0", "in"));

    let table = DecisionPolicy::AnyTrip.build(1, 2)?;
    components.push(ComponentDef::new(
        "switch",
        Role::Switch,
        &["out"],
        Box::new(SwitchBehavior::new(2, table, true, options.switch)),
    ));
    edges.push(edge("combiner", "out", "switch", "ch0"));
    edges.push(edge("alt0", "out", "switch", "ch1"));
    edges.push(edge("consistency", "verdict", "switch", "v0"));

    instance(
        PatternKind::Rta,
        components,
        edges,
        PortRef::new("switch", "out"),
        vec![],
        format!(
            "runtime-assured ensemble ({} models, consistency-checked)",
            options.n_models
        ),
    )
}

/// Uncertainty-gated substitution of the estimate by a safe value.
/// Adaptive instances take a `risk` source that tightens the threshold.
pub fn make_value_override(
    profile: &SurrogateProfile,
    config: OverrideConfig,
) -> Result<PatternInstance, PatternError> {
    config.validate()?;
    let adaptive = config.adaptive.is_some();
    let mut components = vec![
        input_source(),
        complex_component(profile),
        ComponentDef::new(
            "override",
            Role::Postprocess,
            &["out"],
            Box::new(OverrideBehavior { config }),
        ),
    ];
    let mut edges = vec![
        edge(INPUT, "out", "complex", "in"),
        edge("complex", "out", "override", "in"),
        edge("complex", "uncertainty", "override", "uncertainty"),
        edge(INPUT, "out", "override", "ref_in"),
    ];
    let mut extra = vec![];
    if adaptive {
        components.push(ComponentDef::external_source("risk", "out"));
        edges.push(edge("risk", "out", "override", "risk"));
        extra.push(PortRef::new("risk", "out"));
    }
    instance(
        PatternKind::ValueOverride,
        components,
        edges,
        PortRef::new("override", "out"),
        extra,
        if adaptive {
            "uncertainty-gated worst-case substitution with risk-adaptive threshold".to_string()
        } else {
            "uncertainty-gated worst-case substitution".to_string()
        },
    )
}

/// Output-modification stage after a detector: positives are enlarged so
/// the detector's guaranteed overlap implies containment of the truth.
pub fn make_function_modification(
    detector: DetectorConfig,
    iou_floor: f64,
) -> Result<PatternInstance, PatternError> {
    // Shares the overlap-bound domain check with the geometry operators.
    geometry::min_enlargement(iou_floor)?;
    if detector.training_iou.is_nan() || detector.training_iou < iou_floor {
        return Err(PatternError::Invalid(format!(
            "detector trained to overlap {} cannot support a floor of {}",
            detector.training_iou, iou_floor
        )));
    }
    instance(
        PatternKind::FunctionModification,
        vec![
            input_source(),
            ComponentDef::new(
                "detector",
                Role::Complex,
                &["out", "gt"],
                Box::new(DetectorBehavior { config: detector }),
            ),
            ComponentDef::new(
                "post",
                Role::Postprocess,
                &["out"],
                Box::new(DetectionPostprocess { iou_floor }),
            ),
        ],
        vec![
            edge(INPUT, "out", "detector", "in"),
            edge("detector", "out", "post", "in"),
        ],
        PortRef::new("post", "out"),
        vec![],
        "detector output enlarged for guaranteed containment",
    )
}

/// Decomposition into per-region channels with an ownership selector.
/// Partitions must tile the declared space exactly.
pub fn make_input_partitioning(
    reference: &ReferenceFn,
    space: Vec<OddRegion>,
    partitions: Vec<Vec<OddRegion>>,
    channel_modes: Vec<BackupMode>,
) -> Result<PatternInstance, PatternError> {
    if channel_modes.len() != partitions.len() {
        return Err(PatternError::Invalid(format!(
            "{} channels for {} partitions",
            channel_modes.len(),
            partitions.len()
        )));
    }
    validate_partitions(&space, &partitions)?;
    let n = partitions.len();
    let mut components = vec![input_source()];
    let mut edges = Vec::new();
    for (i, mode) in channel_modes.into_iter().enumerate() {
        let id = format!("channel{i}");
        components.push(backup_component(&id, Role::Backup, mode, reference.clone()));
        edges.push(edge(INPUT, "out", &id, "in"));
        edges.push(edge(&id, "out", "selector", &format!("ch{i}")));
    }
    components.push(ComponentDef::new(
        "selector",
        Role::Selector,
        &["out"],
        Box::new(SelectorBehavior { partitions }),
    ));
    edges.push(edge(INPUT, "out", "selector", "in"));
    instance(
        PatternKind::InputPartitioning,
        components,
        edges,
        PortRef::new("selector", "out"),
        vec![],
        format!("{n} per-region channels behind an ownership selector"),
    )
}

/// Triple modular redundancy: three replicas of the complex component
/// behind a voter.
pub fn make_tmr(
    profile: &SurrogateProfile,
    mode: VoterMode,
) -> Result<PatternInstance, PatternError> {
    let mut components = vec![input_source()];
    let mut edges = Vec::new();
    for i in 0..3 {
        let id = format!("replica{i}");
        components.push(ComponentDef::new(
            &id,
            Role::Complex,
            &["out", "uncertainty"],
            Box::new(ComplexBehavior {
                profile: profile.clone(),
            }),
        ));
        edges.push(edge(INPUT, "out", &id, "in"));
        edges.push(edge(&id, "out", "voter", &format!("r{i}")));
    }
    components.push(ComponentDef::new(
        "voter",
        Role::Voter,
        &["out"],
        Box::new(VoterBehavior {
            n_replicas: 3,
            mode,
        }),
    ));
    instance(
        PatternKind::Tmr,
        components,
        edges,
        PortRef::new("voter", "out"),
        vec![],
        "three replicas behind a voter",
    )
}

// ── Catalogue ───────────────────────────────────────────────────────

pub struct CatalogueEntry {
    pub kind: PatternKind,
    pub structure: &'static str,
    pub guarantees: &'static str,
    pub assumptions: &'static str,
    pub origin: &'static str,
}

/// Static descriptions backing `patterns list` / `patterns describe`.
pub fn catalogue() -> Vec<CatalogueEntry> {
    vec![
        CatalogueEntry {
            kind: PatternKind::SingleChannel,
            structure: "input -> complex component -> output",
            guarantees: "none beyond the component itself; the baseline other patterns are judged against",
            assumptions: "the component alone meets the allocated integrity level",
            origin: "baseline architecture",
        },
        CatalogueEntry {
            kind: PatternKind::ActiveMonitor,
            structure: "complex component with a monitor gating its output (disconnect or flag-invalid) in the same tick",
            guarantees: "outputs the monitor condemns never reach consumers as apparently-good values",
            assumptions: "the monitored condition captures the hazard; the monitor itself is assured and independent",
            origin: "classic guarded-channel practice in safety architectures",
        },
        CatalogueEntry {
            kind: PatternKind::BackupParallel,
            structure: "complex primary and a conventional hot standby behind a takeover switch",
            guarantees: "service continues through detected primary failures (absence or self-flagged invalidity)",
            assumptions: "primary failures are self-evident; the standby is independently assured",
            origin: "standby redundancy, long-standing fault-tolerance practice",
        },
        CatalogueEntry {
            kind: PatternKind::Combined,
            structure: "monitor plus backup: the monitor verdict drives the switchover to the conventional channel",
            guarantees: "failures the monitor observes are masked by the backup, not just suppressed",
            assumptions: "monitor placement matches the failure class it must catch; backup is assured",
            origin: "monitored-standby composition of the two simpler patterns",
        },
        CatalogueEntry {
            kind: PatternKind::Rta,
            structure: "complex channel, one or more monitors, a total decision table, and assured alternative channels behind a switch",
            guarantees: "whenever the monitors trip, control moves to an assured alternative within the switch latency",
            assumptions: "monitors and alternatives are assured; the decision table is total; the latency window is tolerable",
            origin: "runtime assurance wrappers from the aerospace literature",
        },
        CatalogueEntry {
            kind: PatternKind::ValueOverride,
            structure: "estimate and reported uncertainty feed an override stage that substitutes a safe bound when uncertainty crosses a threshold",
            guarantees: "consumers never act on a low-confidence estimate; substituted values are pessimistic by construction",
            assumptions: "the uncertainty report correlates with true error; the worst-case provider is total and safe",
            origin: "fail-safe estimation practice in automated driving",
        },
        CatalogueEntry {
            kind: PatternKind::FunctionModification,
            structure: "detector followed by an assured post-processing stage that enlarges every positive detection",
            guarantees: "if the detector meets its guaranteed overlap bound, every enlarged box contains the true object",
            assumptions: "the overlap bound actually holds at runtime; downstream tolerates systematically larger boxes",
            origin: "output-modification safety margins for perception",
        },
        CatalogueEntry {
            kind: PatternKind::InputPartitioning,
            structure: "the input space is tiled into regions, each served by a simpler per-region channel; a selector routes by ownership",
            guarantees: "every input is handled by exactly one channel that only ever sees its own region",
            assumptions: "partitions are disjoint and cover the declared space; the selector is assured",
            origin: "divide-and-assure decomposition",
        },
        CatalogueEntry {
            kind: PatternKind::Tmr,
            structure: "three replicas of the component behind a majority voter",
            guarantees: "any single-replica value fault is outvoted; disagreement beyond majority is flagged invalid",
            assumptions: "replica failures are independent; the voter is assured",
            origin: "triple modular redundancy, the oldest masking pattern",
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{derive_rng, run, Tick};
    use crate::surrogate::ErrorModel;
    use std::collections::BTreeMap;

    fn linear_profile() -> SurrogateProfile {
        SurrogateProfile {
            reference: ReferenceFn::Linear {
                weights: vec![2.0],
                bias: 0.0,
            },
            regions: vec![],
            ood: ErrorModel::default(),
            p_selftest: 0.0,
        }
    }

    fn feed_script(
        port: PortRef,
        script: Vec<f64>,
    ) -> impl FnMut(Tick) -> BTreeMap<PortRef, Signal> {
        move |t: Tick| {
            let v = script[(t.0 as usize) % script.len()];
            let mut m = BTreeMap::new();
            m.insert(port.clone(), Signal::scalar(v, t));
            m
        }
    }

    fn out_values(trace: &crate::engine::Trace, port: &PortRef) -> Vec<Option<f64>> {
        trace
            .deliveries(port)
            .iter()
            .map(|(_, sig, _)| sig.as_ref().and_then(|s| s.value.as_scalar()))
            .collect()
    }

    // ── monitors ────────────────────────────────────────────────

    #[test]
    fn input_range_monitor_passes_absence_trips_out_of_range() {
        let spec = MonitorSpec::InputRange {
            ranges: vec![[0.0, 1.0]],
        };
        assert_eq!(eval_monitor(&spec, None, None, Tick(0)), None);
        let inside = Signal::scalar(0.5, Tick(0));
        assert_eq!(eval_monitor(&spec, Some(&inside), None, Tick(0)), None);
        let outside = Signal::scalar(1.5, Tick(0));
        assert_eq!(
            eval_monitor(&spec, Some(&outside), None, Tick(0)),
            Some(TripReason::Range)
        );
        // Wrong dimensionality is a defensive trip.
        let wrong = Signal::vector(vec![0.5, 0.5], Tick(0));
        assert_eq!(
            eval_monitor(&spec, Some(&wrong), None, Tick(0)),
            Some(TripReason::Range)
        );
    }

    #[test]
    fn odd_and_ood_monitors() {
        let odd = MonitorSpec::OddConformance {
            regions: vec![OddRegion {
                label: "nominal".into(),
                bounds: vec![[0.0, 1.0]],
            }],
        };
        let in_sig = Signal::scalar(1.0, Tick(0));
        let out_sig = Signal::scalar(1.1, Tick(0));
        assert_eq!(eval_monitor(&odd, Some(&in_sig), None, Tick(0)), None);
        assert_eq!(
            eval_monitor(&odd, Some(&out_sig), None, Tick(0)),
            Some(TripReason::Odd)
        );

        let ood = MonitorSpec::OodEnvelope {
            bounds: vec![[-1.0, 1.0]],
        };
        assert_eq!(eval_monitor(&ood, Some(&in_sig), None, Tick(0)), None);
        assert_eq!(
            eval_monitor(&ood, Some(&Signal::scalar(2.0, Tick(0))), None, Tick(0)),
            Some(TripReason::Ood)
        );
    }

    #[test]
    fn output_validity_monitor_checks_everything() {
        let spec = MonitorSpec::OutputValidity {
            bounds: Some([-10.0, 10.0]),
            max_deviation: Some(0.5),
            staleness: Some(1),
        };
        // Absence trips.
        assert_eq!(
            eval_monitor(&spec, None, Some(0.0), Tick(5)),
            Some(TripReason::Validity)
        );
        // Self-invalid trips.
        let mut sig = Signal::scalar(0.2, Tick(5));
        sig.valid = false;
        assert_eq!(
            eval_monitor(&spec, Some(&sig), Some(0.0), Tick(5)),
            Some(TripReason::Validity)
        );
        // Bounds violation trips.
        let big = Signal::scalar(11.0, Tick(5));
        assert_eq!(
            eval_monitor(&spec, Some(&big), Some(11.0), Tick(5)),
            Some(TripReason::Validity)
        );
        // Deviation beyond epsilon trips.
        let off = Signal::scalar(1.0, Tick(5));
        assert_eq!(
            eval_monitor(&spec, Some(&off), Some(0.0), Tick(5)),
            Some(TripReason::Validity)
        );
        // Missing reference for a deviation check trips defensively.
        let ok = Signal::scalar(0.2, Tick(5));
        assert_eq!(
            eval_monitor(&spec, Some(&ok), None, Tick(5)),
            Some(TripReason::Validity)
        );
        // Stale stamp trips (covers early skew too: |now - stamp|).
        let stale = Signal::scalar(0.2, Tick(3));
        assert_eq!(
            eval_monitor(&spec, Some(&stale), Some(0.0), Tick(5)),
            Some(TripReason::Staleness)
        );
        let early = Signal {
            value: Value::Scalar(0.2),
            valid: true,
            stamp: Tick(9),
        };
        assert_eq!(
            eval_monitor(&spec, Some(&early), Some(0.0), Tick(5)),
            Some(TripReason::Staleness)
        );
        // All conditions satisfied passes.
        let good = Signal::scalar(0.2, Tick(5));
        assert_eq!(eval_monitor(&spec, Some(&good), Some(0.0), Tick(5)), None);
    }

    // ── decision tables ─────────────────────────────────────────

    #[test]
    fn decision_table_must_be_total() {
        let err = DecisionTable::new(2, vec![0, 1, 1], 2).unwrap_err();
        assert!(matches!(
            err,
            PatternError::IncompleteDecisionTable {
                expected: 4,
                got: 3
            }
        ));
        let err = DecisionTable::new(1, vec![0, 5], 2).unwrap_err();
        assert!(matches!(err, PatternError::InvalidChannelInTable { .. }));
        let table = DecisionTable::new(2, vec![0, 1, 1, 1], 2).unwrap();
        assert_eq!(table.select(0b00), 0);
        assert_eq!(table.select(0b10), 1);
    }

    #[test]
    fn decision_policies() {
        let any = DecisionPolicy::AnyTrip.build(2, 2).unwrap();
        assert_eq!(any.select(0), 0);
        assert_eq!(any.select(1), 1);
        assert_eq!(any.select(2), 1);
        assert_eq!(any.select(3), 1);
        let all = DecisionPolicy::AllTrip.build(2, 2).unwrap();
        assert_eq!(all.select(1), 0);
        assert_eq!(all.select(3), 1);
        let exp = DecisionPolicy::Explicit(vec![0, 1]).build(1, 3).unwrap();
        assert_eq!(exp.select(1), 1);
        assert!(DecisionPolicy::Explicit(vec![0]).build(1, 2).is_err());
    }

    // ── switch semantics ────────────────────────────────────────

    /// Combined pattern, latency 1, input leaves the monitored range at
    /// t=3: t=3 still delivers the primary (changeover in flight), t=4
    /// delivers the backup.
    #[test]
    fn switch_latency_one_leaks_one_tick() {
        let profile = linear_profile();
        let inst = make_combined(
            &profile,
            BackupMode::Equivalent,
            MonitorSpec::InputRange {
                ranges: vec![[0.0, 1.0]],
            },
            CombinedVariant::InputMonitor,
            SwitchConfig {
                latency: 1,
                switch_back: false,
                hold_down: 0,
            },
        )
        .unwrap();
        let script = vec![0.5, 0.5, 0.5, 2.0, 2.0, 2.0];
        let mut feed = feed_script(inst.input_source.clone(), script);
        let trace = run(&inst.topology, &[], &mut feed, 6, 1).unwrap();
        let out = out_values(&trace, &inst.output);
        // Perfect profile: primary == backup == 2*input, so distinguish by
        // the switch notes instead of values.
        assert_eq!(out[3], Some(4.0), "changeover window forwards the primary");
        let switches: Vec<_> = trace
            .notes()
            .filter(|(_, c, n)| *c == "switch" && matches!(n, Annotation::Switch { .. }))
            .collect();
        assert_eq!(switches.len(), 1);
        assert_eq!(switches[0].0, Tick(4), "trip at 3 + latency 1 = engage at 4");
    }

    #[test]
    fn switch_latency_zero_masks_same_tick() {
        let profile = linear_profile();
        let inst = make_combined(
            &profile,
            BackupMode::Equivalent,
            MonitorSpec::InputRange {
                ranges: vec![[0.0, 1.0]],
            },
            CombinedVariant::InputMonitor,
            SwitchConfig {
                latency: 0,
                switch_back: false,
                hold_down: 0,
            },
        )
        .unwrap();
        let mut feed = feed_script(inst.input_source.clone(), vec![0.5, 2.0, 2.0]);
        let trace = run(&inst.topology, &[], &mut feed, 3, 1).unwrap();
        let switches: Vec<_> = trace
            .notes()
            .filter(|(_, c, _)| *c == "switch")
            .collect();
        assert_eq!(switches[0].0, Tick(1), "engages the tick the monitor trips");
    }

    #[test]
    fn switch_latches_by_default_and_returns_with_switch_back() {
        let profile = linear_profile();
        let build = |switch_back: bool, hold_down: u64| {
            make_combined(
                &profile,
                BackupMode::Equivalent,
                MonitorSpec::InputRange {
                    ranges: vec![[0.0, 1.0]],
                },
                CombinedVariant::InputMonitor,
                SwitchConfig {
                    latency: 0,
                    switch_back,
                    hold_down,
                },
            )
            .unwrap()
        };
        // Excursion at t=2..3, clear afterwards.
        let script = vec![0.5, 0.5, 2.0, 2.0, 0.5, 0.5, 0.5, 0.5];

        let inst = build(false, 0);
        let mut feed = feed_script(inst.input_source.clone(), script.clone());
        let trace = run(&inst.topology, &[], &mut feed, 8, 1).unwrap();
        let n_switches = trace.notes().filter(|(_, c, _)| *c == "switch").count();
        assert_eq!(n_switches, 1, "without switch-back the trip latches");

        let inst = build(true, 2);
        let mut feed = feed_script(inst.input_source.clone(), script);
        let trace = run(&inst.topology, &[], &mut feed, 8, 1).unwrap();
        let switches: Vec<Tick> = trace
            .notes()
            .filter(|(_, c, _)| *c == "switch")
            .map(|(t, _, _)| t)
            .collect();
        // Away at t=2; clear from t=4, hold-down 2 satisfied at t=6.
        assert_eq!(switches, vec![Tick(2), Tick(6)]);
    }

    #[test]
    fn backup_parallel_takes_over_on_invalid_primary() {
        // Complex always erroneous and always self-flagged: from the first
        // tick the primary delivers invalid signals, so the switch engages
        // after its latency and the backup's correct value flows.
        let mut profile = linear_profile();
        profile.ood = ErrorModel {
            erroneous_prob: 1.0,
            erroneous_offset: 100.0,
            ..ErrorModel::default()
        };
        profile.p_selftest = 1.0;
        let inst = make_backup_parallel(
            &profile,
            BackupMode::Equivalent,
            SwitchConfig {
                latency: 1,
                switch_back: false,
                hold_down: 0,
            },
        )
        .unwrap();
        let mut feed = feed_script(inst.input_source.clone(), vec![1.0]);
        let trace = run(&inst.topology, &[], &mut feed, 4, 5).unwrap();
        let out: Vec<Option<(f64, bool)>> = trace
            .deliveries(&inst.output)
            .iter()
            .map(|(_, sig, _)| {
                sig.as_ref()
                    .map(|s| (s.value.as_scalar().unwrap(), s.valid))
            })
            .collect();
        // t=0 forwards the invalid primary (takeover decided, not engaged);
        // from t=1 the backup's valid 2.0 flows.
        assert_eq!(out[0], Some((102.0, false)));
        assert_eq!(out[1], Some((2.0, true)));
        assert_eq!(out[2], Some((2.0, true)));
    }

    // ── gate ────────────────────────────────────────────────────

    #[test]
    fn gate_disconnects_or_flags() {
        let profile = linear_profile();
        // Monitor range [0,1]; input 2.0 trips it immediately.
        let build = |action| {
            make_active_monitor(
                &profile,
                MonitorSpec::InputRange {
                    ranges: vec![[0.0, 1.0]],
                },
                action,
            )
            .unwrap()
        };
        let inst = build(GateAction::Disconnect);
        let mut feed = feed_script(inst.input_source.clone(), vec![2.0]);
        let trace = run(&inst.topology, &[], &mut feed, 1, 1).unwrap();
        assert_eq!(trace.deliveries(&inst.output)[0].1, &None);

        let inst = build(GateAction::FlagInvalid);
        let mut feed = feed_script(inst.input_source.clone(), vec![2.0]);
        let trace = run(&inst.topology, &[], &mut feed, 1, 1).unwrap();
        let sig = trace.deliveries(&inst.output)[0].1.clone().unwrap();
        assert!(!sig.valid);
        assert_eq!(sig.value, Value::Scalar(4.0));

        // In-range input passes untouched.
        let inst = build(GateAction::Disconnect);
        let mut feed = feed_script(inst.input_source.clone(), vec![0.5]);
        let trace = run(&inst.topology, &[], &mut feed, 1, 1).unwrap();
        let sig = trace.deliveries(&inst.output)[0].1.clone().unwrap();
        assert!(sig.valid);
        assert_eq!(sig.value, Value::Scalar(1.0));
    }

    // ── voter ───────────────────────────────────────────────────

    fn vote(
        mode: VoterMode,
        inputs: Vec<Option<Signal>>,
    ) -> Option<Signal> {
        let mut behavior = VoterBehavior {
            n_replicas: inputs.len(),
            mode,
        };
        let mut map = BTreeMap::new();
        for (i, s) in inputs.into_iter().enumerate() {
            map.insert(format!("r{i}"), s);
        }
        let mut rng = derive_rng(0, "component", "voter");
        let mut ctx = StepContext {
            tick: Tick(0),
            component: "voter",
            rng: &mut rng,
            externals: &Default::default(),
        };
        let mut out = behavior.step(&mut ctx, &Inputs::new(&map)).unwrap();
        out.ports.remove("out").flatten()
    }

    fn s(v: f64) -> Option<Signal> {
        Some(Signal::scalar(v, Tick(0)))
    }

    #[test]
    fn majority_voter_agreement_and_fallback() {
        let mode = VoterMode::MajorityExact { tolerance: 1e-9 };
        // All agree.
        let out = vote(mode.clone(), vec![s(1.0), s(1.0), s(1.0)]).unwrap();
        assert_eq!(out.value, Value::Scalar(1.0));
        assert!(out.valid);
        // One divergent replica is outvoted.
        let out = vote(mode.clone(), vec![s(1.0), s(9.0), s(1.0)]).unwrap();
        assert_eq!(out.value, Value::Scalar(1.0));
        assert!(out.valid);
        // Pairwise disagreement: median payload, flagged invalid.
        let out = vote(mode.clone(), vec![s(1.0), s(5.0), s(9.0)]).unwrap();
        assert_eq!(out.value, Value::Scalar(5.0));
        assert!(!out.valid);
        // Fewer than two participants: absence.
        assert!(vote(mode.clone(), vec![s(1.0), None, None]).is_none());
        let mut invalid = Signal::scalar(1.0, Tick(0));
        invalid.valid = false;
        assert!(vote(mode, vec![Some(invalid), s(1.0), None]).is_none());
    }

    #[test]
    fn median_voter_frozen_example() {
        let out = vote(VoterMode::Median, vec![s(1.0), s(5.0), s(9.0)]).unwrap();
        assert_eq!(out.value, Value::Scalar(5.0));
        assert!(out.valid);
        // Two participants: midpoint.
        let out = vote(VoterMode::Median, vec![s(1.0), None, s(2.0)]).unwrap();
        assert_eq!(out.value, Value::Scalar(1.5));
    }

    #[test]
    fn tmr_end_to_end_matches_reference() {
        let profile = linear_profile();
        let inst = make_tmr(&profile, VoterMode::MajorityExact { tolerance: 1e-9 }).unwrap();
        let mut feed = feed_script(inst.input_source.clone(), vec![0.25, 0.5, 1.0]);
        let trace = run(&inst.topology, &[], &mut feed, 9, 42).unwrap();
        let out = out_values(&trace, &inst.output);
        let expect = [0.5, 1.0, 2.0, 0.5, 1.0, 2.0, 0.5, 1.0, 2.0];
        for (got, want) in out.iter().zip(expect) {
            assert_eq!(*got, Some(want));
        }
    }

    // ── override ────────────────────────────────────────────────

    fn run_override(
        config: OverrideConfig,
        estimate: Option<Signal>,
        uncertainty: Option<Signal>,
        risk: Option<Signal>,
        raw: Option<Signal>,
    ) -> (Option<Signal>, bool) {
        let mut behavior = OverrideBehavior { config };
        let mut map = BTreeMap::new();
        map.insert("in".to_string(), estimate);
        map.insert("uncertainty".to_string(), uncertainty);
        map.insert("risk".to_string(), risk);
        map.insert("ref_in".to_string(), raw);
        let mut rng = derive_rng(0, "component", "override");
        let mut ctx = StepContext {
            tick: Tick(0),
            component: "override",
            rng: &mut rng,
            externals: &Default::default(),
        };
        let mut out = behavior.step(&mut ctx, &Inputs::new(&map)).unwrap();
        let overridden = out
            .notes
            .iter()
            .any(|n| matches!(n, Annotation::Overridden));
        (out.ports.remove("out").flatten(), overridden)
    }

    fn base_override_config() -> OverrideConfig {
        OverrideConfig {
            threshold: 0.5,
            policy: ReplacementPolicy::Point {
                worst_case: WorstCase::Constant(-1.0),
            },
            direction: Direction::Lower,
            adaptive: None,
        }
    }

    #[test]
    fn override_gates_on_uncertainty() {
        let cfg = base_override_config();
        // Confident estimate passes untouched.
        let (out, tag) = run_override(cfg.clone(), s(3.0), s(0.2), None, s(0.0));
        assert_eq!(out.unwrap().value, Value::Scalar(3.0));
        assert!(!tag);
        // Uncertain estimate is replaced by the worst case and tagged.
        let (out, tag) = run_override(cfg.clone(), s(3.0), s(0.9), None, s(0.0));
        assert_eq!(out.unwrap().value, Value::Scalar(-1.0));
        assert!(tag);
        // Missing uncertainty fails safe.
        let (out, tag) = run_override(cfg.clone(), s(3.0), None, None, s(0.0));
        assert_eq!(out.unwrap().value, Value::Scalar(-1.0));
        assert!(tag);
        // Missing estimate yields absence.
        let (out, _) = run_override(cfg, None, s(0.2), None, s(0.0));
        assert!(out.is_none());
    }

    #[test]
    fn override_boundary_is_inclusive() {
        let cfg = base_override_config();
        let (out, tag) = run_override(cfg, s(3.0), s(0.5), None, s(0.0));
        assert_eq!(out.unwrap().value, Value::Scalar(3.0));
        assert!(!tag, "uncertainty exactly at threshold passes");
    }

    #[test]
    fn adaptive_threshold_tightens_with_risk() {
        let mut cfg = base_override_config();
        cfg.adaptive = Some(RiskMap {
            points: vec![(0.0, 0.5), (0.7, 0.1)],
        });
        cfg.validate().unwrap();
        // Low risk: base-equivalent threshold 0.5, uncertainty 0.3 passes.
        let (_, tag) = run_override(cfg.clone(), s(3.0), s(0.3), s(0.2), s(0.0));
        assert!(!tag);
        // High risk: threshold drops to 0.1, the same estimate is replaced.
        let (_, tag) = run_override(cfg.clone(), s(3.0), s(0.3), s(0.9), s(0.0));
        assert!(tag);
        // Missing risk falls back to the base threshold.
        let (_, tag) = run_override(cfg, s(3.0), s(0.3), None, s(0.0));
        assert!(!tag);
    }

    #[test]
    fn risk_map_validation() {
        let increasing = RiskMap {
            points: vec![(0.0, 0.1), (0.5, 0.4)],
        };
        assert!(increasing.validate(0.5).is_err());
        let above_base = RiskMap {
            points: vec![(0.0, 0.9)],
        };
        assert!(above_base.validate(0.5).is_err());
        let ok = RiskMap {
            points: vec![(0.0, 0.5), (0.5, 0.2), (0.9, 0.1)],
        };
        ok.validate(0.5).unwrap();
        assert_eq!(ok.threshold_for(0.6, 0.5), 0.2);
        assert_eq!(ok.threshold_for(-1.0, 0.5), 0.5);
    }

    #[test]
    fn distribution_replacement_uses_tail_quantile() {
        let mut cfg = base_override_config();
        cfg.policy = ReplacementPolicy::Distribution {
            dist: ReplacementDist::Uniform { lo: 0.0, hi: 1.0 },
            quantile: 0.05,
        };
        cfg.direction = Direction::Lower;
        let (out, _) = run_override(cfg.clone(), s(3.0), s(0.9), None, None);
        assert!((out.unwrap().value.as_scalar().unwrap() - 0.05).abs() < 1e-12);
        cfg.direction = Direction::Upper;
        let (out, _) = run_override(cfg, s(3.0), s(0.9), None, None);
        assert!((out.unwrap().value.as_scalar().unwrap() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn inverse_normal_cdf_known_quantiles() {
        assert!(inverse_normal_cdf(0.5).abs() < 1e-9);
        assert!((inverse_normal_cdf(0.975) - 1.959964).abs() < 1e-5);
        assert!((inverse_normal_cdf(0.05) + 1.644854).abs() < 1e-5);
        assert!((inverse_normal_cdf(0.001) + 3.090232).abs() < 1e-5);
        // Symmetry.
        for q in [0.01, 0.2, 0.4] {
            let a = inverse_normal_cdf(q);
            let b = inverse_normal_cdf(1.0 - q);
            assert!((a + b).abs() < 1e-9);
        }
    }

    // ── partitioning ────────────────────────────────────────────

    fn rect(label: &str, x: [f64; 2], y: [f64; 2]) -> OddRegion {
        OddRegion {
            label: label.into(),
            bounds: vec![x, y],
        }
    }

    #[test]
    fn partition_validation_catches_overlap_and_gap() {
        let space = vec![rect("space", [0.0, 2.0], [0.0, 1.0])];
        let ok = vec![
            vec![rect("left", [0.0, 1.0], [0.0, 1.0])],
            vec![rect("right", [1.0, 2.0], [0.0, 1.0])],
        ];
        validate_partitions(&space, &ok).unwrap();

        let overlapping = vec![
            vec![rect("left", [0.0, 1.2], [0.0, 1.0])],
            vec![rect("right", [1.0, 2.0], [0.0, 1.0])],
        ];
        assert!(matches!(
            validate_partitions(&space, &overlapping),
            Err(PatternError::PartitionOverlap { .. })
        ));

        let gappy = vec![
            vec![rect("left", [0.0, 0.8], [0.0, 1.0])],
            vec![rect("right", [1.0, 2.0], [0.0, 1.0])],
        ];
        assert!(matches!(
            validate_partitions(&space, &gappy),
            Err(PatternError::PartitionGap { .. })
        ));

        let outside = vec![
            vec![rect("left", [0.0, 1.0], [0.0, 1.0])],
            vec![rect("right", [1.0, 2.5], [0.0, 1.0])],
        ];
        assert!(matches!(
            validate_partitions(&space, &outside),
            Err(PatternError::PartitionOutsideSpace { .. })
        ));
    }

    #[test]
    fn partitioning_routes_by_ownership_lowest_index_on_boundary() {
        let reference = ReferenceFn::Linear {
            weights: vec![1.0],
            bias: 0.0,
        };
        let space = vec![OddRegion {
            label: "space".into(),
            bounds: vec![[0.0, 2.0]],
        }];
        let parts = vec![
            vec![OddRegion {
                label: "low".into(),
                bounds: vec![[0.0, 1.0]],
            }],
            vec![OddRegion {
                label: "high".into(),
                bounds: vec![[1.0, 2.0]],
            }],
        ];
        let inst = make_input_partitioning(
            &reference,
            space,
            parts,
            vec![BackupMode::Equivalent, BackupMode::Degraded { tolerance: 0.5 }],
        )
        .unwrap();
        // 0.5 -> channel0 exact; 1.0 boundary -> channel0 (lowest index,
        // exact, so 1.0); 1.6 -> channel1 quantised to bin centre 1.75;
        // 5.0 outside -> absence.
        let mut feed = feed_script(inst.input_source.clone(), vec![0.5, 1.0, 1.6, 5.0]);
        let trace = run(&inst.topology, &[], &mut feed, 4, 2).unwrap();
        let out = out_values(&trace, &inst.output);
        assert_eq!(out, vec![Some(0.5), Some(1.0), Some(1.75), None]);
        let trips = trace
            .notes()
            .filter(|(_, c, _)| *c == "selector")
            .count();
        assert_eq!(trips, 1, "out-of-space input leaves a trip note");
    }

    // ── constructors ────────────────────────────────────────────

    #[test]
    fn combined_variant_mode_compatibility() {
        let profile = linear_profile();
        let input_spec = MonitorSpec::InputRange {
            ranges: vec![[0.0, 1.0]],
        };
        let output_spec = MonitorSpec::OutputValidity {
            bounds: Some([-10.0, 10.0]),
            max_deviation: None,
            staleness: None,
        };
        assert!(matches!(
            make_combined(
                &profile,
                BackupMode::Equivalent,
                output_spec.clone(),
                CombinedVariant::InputMonitor,
                SwitchConfig::default(),
            ),
            Err(PatternError::IncompatibleMonitorMode { .. })
        ));
        assert!(matches!(
            make_combined(
                &profile,
                BackupMode::Equivalent,
                input_spec.clone(),
                CombinedVariant::OutputMonitor,
                SwitchConfig::default(),
            ),
            Err(PatternError::IncompatibleMonitorMode { .. })
        ));
        assert!(make_combined(
            &profile,
            BackupMode::Equivalent,
            input_spec,
            CombinedVariant::InputMonitor,
            SwitchConfig::default(),
        )
        .is_ok());
        assert!(make_combined(
            &profile,
            BackupMode::Equivalent,
            output_spec,
            CombinedVariant::IndependentChannel,
            SwitchConfig::default(),
        )
        .is_ok());
    }

    #[test]
    fn every_kind_constructs() {
        let profile = linear_profile();
        let range = MonitorSpec::InputRange {
            ranges: vec![[0.0, 1.0]],
        };
        make_single_channel(&profile).unwrap();
        make_active_monitor(&profile, range.clone(), GateAction::Disconnect).unwrap();
        make_backup_parallel(&profile, BackupMode::Equivalent, SwitchConfig::default()).unwrap();
        make_combined(
            &profile,
            BackupMode::Equivalent,
            range.clone(),
            CombinedVariant::InputMonitor,
            SwitchConfig::default(),
        )
        .unwrap();
        make_rta(
            &profile,
            RtaOptions {
                monitors: vec![range],
                alternatives: vec![BackupMode::Equivalent],
                boundary: RtaBoundary::MlOnly,
                decision: DecisionPolicy::AnyTrip,
                switch: SwitchConfig::default(),
                clamp: None,
            },
        )
        .unwrap();
        make_rta_ensemble(
            &profile,
            EnsembleOptions {
                n_models: 3,
                combiner: CombinerMode::Median,
                consistency: ConsistencyConfig {
                    spread_threshold: 0.5,
                    stamp_tolerance: 0,
                },
                alternative: BackupMode::Equivalent,
                switch: SwitchConfig::default(),
            },
        )
        .unwrap();
        make_value_override(&profile, base_override_config()).unwrap();
        make_function_modification(
            DetectorConfig {
                gt_width: 1.0,
                gt_height: 1.0,
                training_iou: 0.7,
                score: 0.9,
            },
            0.5,
        )
        .unwrap();
        make_tmr(&profile, VoterMode::Median).unwrap();
    }

    #[test]
    fn rta_explicit_table_must_cover_all_combinations() {
        let profile = linear_profile();
        let err = make_rta(
            &profile,
            RtaOptions {
                monitors: vec![
                    MonitorSpec::InputRange {
                        ranges: vec![[0.0, 1.0]],
                    },
                    MonitorSpec::OodEnvelope {
                        bounds: vec![[0.0, 1.0]],
                    },
                ],
                alternatives: vec![BackupMode::Equivalent],
                boundary: RtaBoundary::MlOnly,
                decision: DecisionPolicy::Explicit(vec![0, 1, 1]),
                switch: SwitchConfig::default(),
                clamp: None,
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            PatternError::IncompleteDecisionTable {
                expected: 4,
                got: 3
            }
        ));
    }

    #[test]
    fn function_modification_rejects_bad_bounds() {
        let det = DetectorConfig {
            gt_width: 1.0,
            gt_height: 1.0,
            training_iou: 0.7,
            score: 0.9,
        };
        assert!(matches!(
            make_function_modification(det.clone(), 0.0),
            Err(PatternError::Geometry(_))
        ));
        assert!(matches!(
            make_function_modification(det, 0.8),
            Err(PatternError::Invalid(_))
        ));
    }

    #[test]
    fn ensemble_consistency_trips_on_spread_and_absence() {
        let mk = |inputs: Vec<Option<Signal>>| {
            let mut behavior = ConsistencyBehavior {
                n_models: inputs.len(),
                config: ConsistencyConfig {
                    spread_threshold: 0.5,
                    stamp_tolerance: 0,
                },
            };
            let mut map = BTreeMap::new();
            for (i, s) in inputs.into_iter().enumerate() {
                map.insert(format!("m{i}"), s);
            }
            let mut rng = derive_rng(0, "component", "consistency");
            let mut ctx = StepContext {
                tick: Tick(0),
                component: "consistency",
                rng: &mut rng,
                externals: &Default::default(),
            };
            let mut out = behavior.step(&mut ctx, &Inputs::new(&map)).unwrap();
            out.ports
                .remove("verdict")
                .flatten()
                .and_then(|s| s.value.as_scalar())
                .unwrap()
        };
        assert_eq!(mk(vec![s(1.0), s(1.1), s(0.9)]), 0.0);
        assert_eq!(mk(vec![s(1.0), s(2.0), s(1.0)]), 1.0, "spread");
        assert_eq!(mk(vec![s(1.0), None, s(1.0)]), 1.0, "absence");
        let skewed = Some(Signal::scalar(1.0, Tick(3)));
        assert_eq!(mk(vec![s(1.0), skewed, s(1.0)]), 1.0, "stamp skew");
    }

    #[test]
    fn catalogue_covers_every_kind() {
        let entries = catalogue();
        assert_eq!(entries.len(), 9);
        for kind in PatternKind::all() {
            assert!(entries.iter().any(|e| e.kind == kind), "{}", kind.name());
        }
        for kind in PatternKind::all() {
            assert_eq!(PatternKind::parse(kind.name()), Some(kind));
        }
        assert_eq!(PatternKind::parse("nonsense"), None);
    }
}
