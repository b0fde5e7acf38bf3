//! Deterministic discrete-time dataflow engine.
//!
//! A [`Topology`] is a set of components joined by directed port-to-port
//! edges, each with a non-negative tick delay. Zero-delay edges must form a
//! DAG; feedback needs at least one delayed edge, which keeps every tick
//! schedulable without fixed-point iteration. Execution advances one tick at
//! a time: every component steps exactly once per tick in topological order
//! of the zero-delay subgraph, fault injectors transform each produced signal
//! at the port boundary, and every delivery (or deliberate absence) is
//! recorded in a [`Trace`] that replays byte-for-byte for the same seed.

use std::collections::{BTreeMap, VecDeque};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::faults::{FaultRuntime, FaultSpec};

// ── Time, signals, roles ────────────────────────────────────────────

/// Simulation time step, starting at 0. The scenario's `ticks_per_hour`
/// maps ticks onto operational hours for rate reporting.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct Tick(pub u64);

impl std::fmt::Display for Tick {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Payload carried by a signal: one real number or a fixed-order vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Value {
    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(v) => Some(*v),
            Value::Vector(v) if v.len() == 1 => Some(v[0]),
            _ => None,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            Value::Scalar(v) => std::slice::from_ref(v),
            Value::Vector(v) => v.as_slice(),
        }
    }

    pub fn dim(&self) -> usize {
        self.as_slice().len()
    }

    /// Adds `offset` to every element.
    pub fn offset(&self, offset: f64) -> Value {
        match self {
            Value::Scalar(v) => Value::Scalar(v + offset),
            Value::Vector(v) => Value::Vector(v.iter().map(|x| x + offset).collect()),
        }
    }
}

/// One delivered sample. An absent signal (no delivery at all) is a
/// different thing from a delivered signal with `valid == false`: the first
/// models loss of service, the second a service that reports itself bad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub value: Value,
    pub valid: bool,
    /// The tick this value claims to describe. Stays <= the current tick
    /// unless an `early` fault skews it.
    pub stamp: Tick,
}

impl Signal {
    pub fn scalar(v: f64, tick: Tick) -> Self {
        Signal {
            value: Value::Scalar(v),
            valid: true,
            stamp: tick,
        }
    }

    pub fn vector(v: Vec<f64>, tick: Tick) -> Self {
        Signal {
            value: Value::Vector(v),
            valid: true,
            stamp: tick,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Complex,
    Monitor,
    Switch,
    Backup,
    Alternative,
    Voter,
    Selector,
    Preprocess,
    Postprocess,
    Sink,
}

/// (component, port) address used by edges, faults, and external feeds.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PortRef {
    pub component: String,
    pub port: String,
}

impl PortRef {
    pub fn new(component: impl Into<String>, port: impl Into<String>) -> Self {
        PortRef {
            component: component.into(),
            port: port.into(),
        }
    }
}

impl std::fmt::Display for PortRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.component, self.port)
    }
}

// ── Errors ──────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("duplicate component id `{0}`")]
    DuplicateId(String),
    #[error("edge endpoint does not exist: {0}")]
    DanglingEdge(String),
    #[error("consumer port {0} has more than one producer")]
    DuplicateProducer(PortRef),
    #[error("zero-delay cycle through components: {}", .0.join(" -> "))]
    ZeroDelayCycle(Vec<String>),
    #[error("no external input supplied for source port {port} at tick {tick}")]
    MissingExternalInput { port: PortRef, tick: Tick },
    #[error("component `{component}` emitted on undeclared port `{port}`")]
    UnknownOutputPort { component: String, port: String },
    #[error("fault targets unknown port {0}")]
    UnknownFaultTarget(PortRef),
    #[error("step called at tick {got}, engine expects {expected}")]
    TickMismatch { expected: Tick, got: Tick },
    #[error("horizon must be at least one tick")]
    EmptyHorizon,
    #[error("at tick {tick}: {source}")]
    AtTick {
        tick: Tick,
        #[source]
        source: Box<EngineError>,
    },
}

// ── Components ──────────────────────────────────────────────────────

/// Everything a behavior may see while stepping.
pub struct StepContext<'a> {
    pub tick: Tick,
    pub component: &'a str,
    /// Per-component random stream derived from (master seed, component id),
    /// so edits elsewhere in the topology never shift this component's draws.
    pub rng: &'a mut ChaCha8Rng,
    pub externals: &'a BTreeMap<PortRef, Signal>,
}

/// Input view for one component at one tick. `get` returns `None` both for
/// an absent delivery and for a port with no edge, which downstream
/// behaviors treat uniformly as absence.
pub struct Inputs<'a> {
    map: &'a BTreeMap<String, Option<Signal>>,
}

impl<'a> Inputs<'a> {
    pub fn new(map: &'a BTreeMap<String, Option<Signal>>) -> Self {
        Inputs { map }
    }

    pub fn get(&self, port: &str) -> Option<&'a Signal> {
        self.map.get(port).and_then(|s| s.as_ref())
    }

    /// Distinguishes "no edge delivered anything" from "edge delivered
    /// absence"; only diagnostics need the difference.
    pub fn raw(&self, port: &str) -> Option<&'a Option<Signal>> {
        self.map.get(port)
    }
}

/// Side-band trace annotations emitted by behaviors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annotation {
    MonitorTrip { reason: String },
    Switch { from: String, to: String },
    Overridden,
}

#[derive(Debug, Default)]
pub struct StepOutput {
    /// Explicit emissions; declared output ports not present here deliver
    /// absence for the tick.
    pub ports: BTreeMap<String, Option<Signal>>,
    pub notes: Vec<Annotation>,
}

impl StepOutput {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(port: &str, signal: Option<Signal>) -> Self {
        let mut out = Self::default();
        out.ports.insert(port.to_string(), signal);
        out
    }

    pub fn with(mut self, port: &str, signal: Option<Signal>) -> Self {
        self.ports.insert(port.to_string(), signal);
        self
    }

    pub fn note(mut self, note: Annotation) -> Self {
        self.notes.push(note);
        self
    }
}

/// A component's transfer function. State lives inside the behavior;
/// [`Behavior::fresh`] must return a copy reset to the initial state so one
/// topology can serve many independent runs.
pub trait Behavior: Send + Sync {
    fn step(&mut self, ctx: &mut StepContext<'_>, inputs: &Inputs<'_>)
        -> Result<StepOutput, EngineError>;
    fn fresh(&self) -> Box<dyn Behavior>;
}

/// Source behavior fed from the per-tick external input map.
#[derive(Clone)]
pub struct ExternalSource {
    pub port: String,
}

impl Behavior for ExternalSource {
    fn step(
        &mut self,
        ctx: &mut StepContext<'_>,
        _inputs: &Inputs<'_>,
    ) -> Result<StepOutput, EngineError> {
        let key = PortRef::new(ctx.component, self.port.clone());
        match ctx.externals.get(&key) {
            Some(sig) => Ok(StepOutput::single(&self.port, Some(sig.clone()))),
            None => Err(EngineError::MissingExternalInput {
                port: key,
                tick: ctx.tick,
            }),
        }
    }

    fn fresh(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

pub struct ComponentDef {
    pub id: String,
    pub role: Role,
    pub outputs: Vec<String>,
    pub behavior: Box<dyn Behavior>,
}

impl ComponentDef {
    pub fn new(
        id: impl Into<String>,
        role: Role,
        outputs: &[&str],
        behavior: Box<dyn Behavior>,
    ) -> Self {
        ComponentDef {
            id: id.into(),
            role,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            behavior,
        }
    }

    /// Source component delivering the externally scripted stream `port`.
    pub fn external_source(id: impl Into<String>, port: &str) -> Self {
        ComponentDef::new(
            id,
            Role::Source,
            &[port],
            Box::new(ExternalSource {
                port: port.to_string(),
            }),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDef {
    pub from: PortRef,
    pub to: PortRef,
    pub delay: u64,
}

impl EdgeDef {
    pub fn new(from: PortRef, to: PortRef, delay: u64) -> Self {
        EdgeDef { from, to, delay }
    }

    pub fn direct(
        from_c: &str,
        from_p: &str,
        to_c: &str,
        to_p: &str,
    ) -> Self {
        EdgeDef {
            from: PortRef::new(from_c, from_p),
            to: PortRef::new(to_c, to_p),
            delay: 0,
        }
    }
}

// ── Topology ────────────────────────────────────────────────────────

struct InEdge {
    port: String,
    src_out: usize,
    delay: u64,
    buffer: Option<usize>,
}

pub struct Topology {
    components: Vec<ComponentDef>,
    index: BTreeMap<String, usize>,
    /// Execution order: topological over zero-delay edges.
    order: Vec<usize>,
    /// Global output-port index.
    out_ports: BTreeMap<PortRef, usize>,
    out_port_list: Vec<PortRef>,
    /// Incoming wiring per component, resolved to output-port indices.
    in_edges: Vec<Vec<InEdge>>,
    /// Delayed producers: (component idx -> list of (out port idx, buffer idx, delay)).
    delayed_out: Vec<Vec<(usize, usize, u64)>>,
    buffer_count: usize,
}

/// Validates the graph and fixes the execution order.
pub fn build_topology(
    components: Vec<ComponentDef>,
    edges: Vec<EdgeDef>,
) -> Result<Topology, EngineError> {
    let mut index = BTreeMap::new();
    for (i, c) in components.iter().enumerate() {
        if index.insert(c.id.clone(), i).is_some() {
            return Err(EngineError::DuplicateId(c.id.clone()));
        }
    }

    let mut out_ports = BTreeMap::new();
    let mut out_port_list = Vec::new();
    for c in &components {
        for p in &c.outputs {
            let pr = PortRef::new(c.id.clone(), p.clone());
            out_ports.insert(pr.clone(), out_port_list.len());
            out_port_list.push(pr);
        }
    }

    let mut in_edges: Vec<Vec<InEdge>> = components.iter().map(|_| Vec::new()).collect();
    let mut delayed_out: Vec<Vec<(usize, usize, u64)>> =
        components.iter().map(|_| Vec::new()).collect();
    let mut seen_consumers = BTreeMap::new();
    let mut buffer_count = 0;

    for e in &edges {
        let src_out = *out_ports
            .get(&e.from)
            .ok_or_else(|| EngineError::DanglingEdge(format!("{} (producer)", e.from)))?;
        let dst = *index
            .get(&e.to.component)
            .ok_or_else(|| EngineError::DanglingEdge(format!("{} (consumer)", e.to)))?;
        if seen_consumers.insert(e.to.clone(), ()).is_some() {
            return Err(EngineError::DuplicateProducer(e.to.clone()));
        }
        let buffer = if e.delay >= 1 {
            let b = buffer_count;
            buffer_count += 1;
            let src_comp = index[&e.from.component];
            delayed_out[src_comp].push((src_out, b, e.delay));
            Some(b)
        } else {
            None
        };
        in_edges[dst].push(InEdge {
            port: e.to.port.clone(),
            src_out,
            delay: e.delay,
            buffer,
        });
    }

    // Kahn's algorithm over the zero-delay subgraph; delayed edges impose no
    // same-tick ordering.
    let n = components.len();
    let mut indegree = vec![0usize; n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (dst, edges) in in_edges.iter().enumerate() {
        for e in edges {
            if e.delay == 0 {
                let src = index[&out_port_list[e.src_out].component];
                succ[src].push(dst);
                indegree[dst] += 1;
            }
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    // Deterministic tie-break: insertion order (ready is kept sorted).
    ready.sort_unstable();
    let mut order = Vec::with_capacity(n);
    while let Some(&next) = ready.first() {
        ready.remove(0);
        order.push(next);
        for &s in &succ[next] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                let pos = ready.partition_point(|&r| r < s);
                ready.insert(pos, s);
            }
        }
    }
    if order.len() != n {
        let stuck: Vec<String> = (0..n)
            .filter(|&i| indegree[i] > 0)
            .map(|i| components[i].id.clone())
            .collect();
        return Err(EngineError::ZeroDelayCycle(stuck));
    }

    Ok(Topology {
        components,
        index,
        order,
        out_ports,
        out_port_list,
        in_edges,
        delayed_out,
        buffer_count,
    })
}

impl std::fmt::Debug for Topology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Topology")
            .field("components", &self.index.keys().collect::<Vec<_>>())
            .field("out_ports", &self.out_port_list)
            .finish_non_exhaustive()
    }
}

impl Topology {
    pub fn component_ids(&self) -> impl Iterator<Item = &str> {
        self.components.iter().map(|c| c.id.as_str())
    }

    pub fn role_of(&self, id: &str) -> Option<Role> {
        self.index.get(id).map(|&i| self.components[i].role)
    }

    pub fn has_out_port(&self, port: &PortRef) -> bool {
        self.out_ports.contains_key(port)
    }

    /// Component ids in execution order.
    pub fn execution_order(&self) -> Vec<&str> {
        self.order
            .iter()
            .map(|&i| self.components[i].id.as_str())
            .collect()
    }
}

// ── Traces ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEvent {
    /// Exactly one per (tick, output port): the post-fault delivery.
    Delivery {
        tick: Tick,
        component: String,
        port: String,
        signal: Option<Signal>,
        /// Set when a commission fault replaced a genuinely produced signal.
        commission: bool,
    },
    Note {
        tick: Tick,
        component: String,
        note: Annotation,
    },
}

impl TraceEvent {
    pub fn tick(&self) -> Tick {
        match self {
            TraceEvent::Delivery { tick, .. } | TraceEvent::Note { tick, .. } => *tick,
        }
    }
}

/// Complete record of one run: every delivery and annotation, ordered by
/// (tick, execution rank). Identical (topology, config, seed) reproduce an
/// identical trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub horizon: u64,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    /// Deliveries on one port in tick order.
    pub fn deliveries(&self, port: &PortRef) -> Vec<(Tick, &Option<Signal>, bool)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Delivery {
                    tick,
                    component,
                    port: p,
                    signal,
                    commission,
                } if component == &port.component && p == &port.port => {
                    Some((*tick, signal, *commission))
                }
                _ => None,
            })
            .collect()
    }

    pub fn notes(&self) -> impl Iterator<Item = (Tick, &str, &Annotation)> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Note {
                tick,
                component,
                note,
            } => Some((*tick, component.as_str(), note)),
            _ => None,
        })
    }
}

// ── Engine state and stepping ───────────────────────────────────────

pub struct EngineState {
    next_tick: Tick,
    behaviors: Vec<Box<dyn Behavior>>,
    rngs: Vec<ChaCha8Rng>,
    /// One FIFO per delayed edge, pre-filled with `delay` absences so the
    /// front always holds the production from `delay` ticks ago.
    buffers: Vec<VecDeque<Option<Signal>>>,
    faults: FaultRuntime,
}

/// 64-byte-domain-separated seed derivation; stable across platforms.
pub fn derive_rng(master: u64, scope: &str, which: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update([0x1f]);
    h.update(scope.as_bytes());
    h.update([0x1f]);
    h.update(which.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Stable sub-seed for trial `index` of a campaign under `master`.
pub fn derive_subseed(master: u64, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update([0x2f]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

impl EngineState {
    pub fn new(
        topology: &Topology,
        faults: &[FaultSpec],
        seed: u64,
    ) -> Result<Self, EngineError> {
        for f in faults {
            if !topology.has_out_port(&f.target()) {
                return Err(EngineError::UnknownFaultTarget(f.target()));
            }
        }
        let behaviors = topology
            .components
            .iter()
            .map(|c| c.behavior.fresh())
            .collect();
        let rngs = topology
            .components
            .iter()
            .map(|c| derive_rng(seed, "component", &c.id))
            .collect();
        let buffers = {
            let mut bufs = vec![VecDeque::new(); topology.buffer_count];
            for outs in &topology.delayed_out {
                for &(_, buf, delay) in outs {
                    bufs[buf] = std::iter::repeat_n(None, delay as usize).collect();
                }
            }
            bufs
        };
        Ok(EngineState {
            next_tick: Tick(0),
            behaviors,
            rngs,
            buffers,
            faults: FaultRuntime::bind(faults, seed),
        })
    }

    pub fn next_tick(&self) -> Tick {
        self.next_tick
    }
}

/// Executes one tick: gathers each component's inputs (zero-delay values
/// from this tick's earlier productions, delayed values from edge buffers),
/// steps the behavior, passes every produced output through the fault
/// pipeline bound to its port, and records the deliveries.
pub fn step(
    topology: &Topology,
    state: &mut EngineState,
    tick: Tick,
    externals: &BTreeMap<PortRef, Signal>,
) -> Result<Vec<TraceEvent>, EngineError> {
    if tick != state.next_tick {
        return Err(EngineError::TickMismatch {
            expected: state.next_tick,
            got: tick,
        });
    }

    let mut deliveries: Vec<Option<Signal>> = vec![None; topology.out_port_list.len()];
    let mut events = Vec::new();

    for &ci in &topology.order {
        let comp = &topology.components[ci];

        let mut input_map: BTreeMap<String, Option<Signal>> = BTreeMap::new();
        for e in &topology.in_edges[ci] {
            let sig = match e.buffer {
                None => deliveries[e.src_out].clone(),
                Some(b) => state.buffers[b].pop_front().flatten(),
            };
            input_map.insert(e.port.clone(), sig);
        }

        let step_out = {
            let mut ctx = StepContext {
                tick,
                component: &comp.id,
                rng: &mut state.rngs[ci],
                externals,
            };
            state.behaviors[ci]
                .step(&mut ctx, &Inputs { map: &input_map })
                .map_err(|e| EngineError::AtTick {
                    tick,
                    source: Box::new(e),
                })?
        };

        let mut ports = step_out.ports;
        for name in ports.keys() {
            if !comp.outputs.contains(name) {
                return Err(EngineError::UnknownOutputPort {
                    component: comp.id.clone(),
                    port: name.clone(),
                });
            }
        }

        for out_name in &comp.outputs {
            let produced = ports.remove(out_name).flatten();
            let port_ref = PortRef::new(comp.id.clone(), out_name.clone());
            let (delivered, commission) = state.faults.apply(&port_ref, produced, tick);
            let out_idx = topology.out_ports[&port_ref];
            deliveries[out_idx] = delivered.clone();
            events.push(TraceEvent::Delivery {
                tick,
                component: comp.id.clone(),
                port: out_name.clone(),
                signal: delivered,
                commission,
            });
        }

        for &(out_idx, buf, _) in &topology.delayed_out[ci] {
            state.buffers[buf].push_back(deliveries[out_idx].clone());
        }

        for note in step_out.notes {
            events.push(TraceEvent::Note {
                tick,
                component: comp.id.clone(),
                note,
            });
        }
    }

    state.next_tick = Tick(tick.0 + 1);
    Ok(events)
}

/// Per-tick external input feed. Implementations must be deterministic in
/// (tick, their own construction parameters) for traces to replay.
pub trait ExternalFeed {
    fn at(&mut self, tick: Tick) -> BTreeMap<PortRef, Signal>;
}

impl<F> ExternalFeed for F
where
    F: FnMut(Tick) -> BTreeMap<PortRef, Signal>,
{
    fn at(&mut self, tick: Tick) -> BTreeMap<PortRef, Signal> {
        self(tick)
    }
}

/// Runs ticks `0..horizon`, producing the complete trace.
pub fn run(
    topology: &Topology,
    faults: &[FaultSpec],
    feed: &mut dyn ExternalFeed,
    horizon: u64,
    seed: u64,
) -> Result<Trace, EngineError> {
    if horizon == 0 {
        return Err(EngineError::EmptyHorizon);
    }
    let mut state = EngineState::new(topology, faults, seed)?;
    let mut events = Vec::new();
    for t in 0..horizon {
        let tick = Tick(t);
        let externals = feed.at(tick);
        events.extend(step(topology, &mut state, tick, &externals)?);
    }
    Ok(Trace { horizon, events })
}
