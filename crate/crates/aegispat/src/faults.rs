//! Guideword-driven fault injection at port boundaries.
//!
//! Each fault targets one output port and transforms what the producer
//! emitted before any consumer sees it. The five guidewords cover the
//! classic service failure modes:
//!
//! * `omission` — the signal is dropped (absence delivered),
//! * `commission` — a spurious value appears; if the producer also emitted,
//!   the injected value replaces it and the delivery is tagged,
//! * `early` — the timestamp is skewed forward, modelling a value that
//!   claims to be fresher than it is,
//! * `late` — deliveries are queued for `delay` extra ticks, FIFO, never
//!   reordered; a late burst therefore shifts the whole subsequent stream,
//! * `value` — the payload is corrupted (offset or replacement) while
//!   validity and timestamp stay untouched.
//!
//! Multiple faults on the same port compose in declaration order. With an
//! empty fault list the pipeline is the identity, so fault-free runs are
//! bit-identical with and without the machinery in place.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{derive_rng, PortRef, Signal, Tick, Value};

// ── Fault descriptions ──────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guideword {
    Omission,
    Commission,
    Early,
    Late,
    Value,
}

/// When a fault is active. `ticks` and `interval` are exact; `probability`
/// draws an independent Bernoulli per tick from the fault's own random
/// stream, so campaigns stay reproducible per (seed, fault index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Ticks(Vec<u64>),
    /// Inclusive on both ends.
    Interval([u64; 2]),
    Probability(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum FaultError {
    #[error("fault {index}: guideword `{guideword}` requires a delay of at least 1 tick")]
    MissingDelay { index: usize, guideword: String },
    #[error("fault {index}: guideword `{guideword}` requires `value` or `offset`")]
    MissingValue { index: usize, guideword: String },
    #[error("fault {index}: probability {p} outside [0, 1]")]
    BadProbability { index: usize, p: f64 },
    #[error("fault {index}: interval start {from} after end {to}")]
    BadInterval { index: usize, from: u64, to: u64 },
}

/// One injected fault. `component`/`port` address the producer-side port the
/// fault attaches to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub guideword: Guideword,
    pub component: String,
    pub port: String,
    pub schedule: Schedule,
    /// Tick skew for `early` / queueing delay for `late`; must be >= 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<u64>,
    /// Replacement payload for `commission` / `value`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    /// Additive payload corruption for `value`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
}

impl FaultSpec {
    pub fn target(&self) -> PortRef {
        PortRef::new(self.component.clone(), self.port.clone())
    }

    pub fn validate(&self, index: usize) -> Result<(), FaultError> {
        match self.schedule {
            Schedule::Probability(p) if !(0.0..=1.0).contains(&p) => {
                return Err(FaultError::BadProbability { index, p });
            }
            Schedule::Interval([from, to]) if from > to => {
                return Err(FaultError::BadInterval { index, from, to });
            }
            _ => {}
        }
        match self.guideword {
            Guideword::Early | Guideword::Late => {
                if self.delay.unwrap_or(0) < 1 {
                    return Err(FaultError::MissingDelay {
                        index,
                        guideword: guideword_name(self.guideword).to_string(),
                    });
                }
            }
            Guideword::Commission => {
                if self.value.is_none() {
                    return Err(FaultError::MissingValue {
                        index,
                        guideword: "commission".to_string(),
                    });
                }
            }
            Guideword::Value => {
                if self.value.is_none() && self.offset.is_none() {
                    return Err(FaultError::MissingValue {
                        index,
                        guideword: "value".to_string(),
                    });
                }
            }
            Guideword::Omission => {}
        }
        Ok(())
    }
}

fn guideword_name(g: Guideword) -> &'static str {
    match g {
        Guideword::Omission => "omission",
        Guideword::Commission => "commission",
        Guideword::Early => "early",
        Guideword::Late => "late",
        Guideword::Value => "value",
    }
}

/// Pure part of the schedule; probability schedules consume one draw from
/// `rng` per call and must therefore be polled exactly once per tick.
pub fn fault_active(schedule: &Schedule, tick: Tick, rng: &mut ChaCha8Rng) -> bool {
    match schedule {
        Schedule::Ticks(list) => list.contains(&tick.0),
        Schedule::Interval([from, to]) => (*from..=*to).contains(&tick.0),
        Schedule::Probability(p) => rng.gen::<f64>() < *p,
    }
}

// ── Runtime ─────────────────────────────────────────────────────────

struct BoundFault {
    spec: FaultSpec,
    rng: ChaCha8Rng,
    /// Pending deliveries for `late`: (ready_at, signal), FIFO.
    queue: VecDeque<(u64, Signal)>,
}

/// Per-run fault state: one random stream and one late-queue per fault,
/// derived from (seed, fault index) so editing one fault never shifts the
/// draws of another.
pub struct FaultRuntime {
    faults: Vec<BoundFault>,
}

impl FaultRuntime {
    pub fn bind(specs: &[FaultSpec], seed: u64) -> Self {
        let faults = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| BoundFault {
                spec: spec.clone(),
                rng: derive_rng(seed, "fault", &i.to_string()),
                queue: VecDeque::new(),
            })
            .collect();
        FaultRuntime { faults }
    }

    /// Runs every fault bound to `port` over the produced signal, in
    /// declaration order. Returns the delivered signal and whether a
    /// commission fault replaced a genuine production.
    ///
    /// Must be called exactly once per (tick, output port): probability
    /// schedules and late queues advance on every call.
    pub fn apply(
        &mut self,
        port: &PortRef,
        produced: Option<Signal>,
        tick: Tick,
    ) -> (Option<Signal>, bool) {
        let mut current = produced;
        let mut commission_tag = false;
        for f in &mut self.faults {
            if f.spec.component != port.component || f.spec.port != port.port {
                continue;
            }
            let active = fault_active(&f.spec.schedule, tick, &mut f.rng);
            let (next, tagged) = apply_fault(&f.spec, &mut f.queue, active, current, tick);
            commission_tag |= tagged;
            current = next;
        }
        (current, commission_tag)
    }
}

/// One guideword applied to one production. `queue` is the fault's own late
/// buffer (unused by the other guidewords).
fn apply_fault(
    spec: &FaultSpec,
    queue: &mut VecDeque<(u64, Signal)>,
    active: bool,
    produced: Option<Signal>,
    tick: Tick,
) -> (Option<Signal>, bool) {
    match spec.guideword {
        Guideword::Omission => {
            if active {
                (None, false)
            } else {
                (produced, false)
            }
        }
        Guideword::Commission => {
            if active {
                let injected = Signal {
                    value: spec.value.clone().expect("validated"),
                    valid: true,
                    stamp: tick,
                };
                let replaced = produced.is_some();
                (Some(injected), replaced)
            } else {
                (produced, false)
            }
        }
        Guideword::Early => {
            let d = spec.delay.expect("validated");
            let out = match produced {
                Some(mut sig) if active => {
                    sig.stamp = Tick(sig.stamp.0 + d);
                    Some(sig)
                }
                other => other,
            };
            (out, false)
        }
        Guideword::Late => {
            let d = spec.delay.expect("validated");
            let mut out = None;
            if let Some(sig) = produced {
                if active {
                    queue.push_back((tick.0 + d, sig));
                } else if !queue.is_empty() {
                    // FIFO: fresh productions may not overtake held ones.
                    queue.push_back((tick.0, sig));
                } else {
                    out = Some(sig);
                }
            }
            if out.is_none() {
                if let Some(&(ready, _)) = queue.front() {
                    if ready <= tick.0 {
                        out = Some(queue.pop_front().expect("front checked").1);
                    }
                }
            }
            (out, false)
        }
        Guideword::Value => {
            let out = match produced {
                Some(mut sig) if active => {
                    if let Some(v) = &spec.value {
                        sig.value = v.clone();
                    } else if let Some(off) = spec.offset {
                        sig.value = sig.value.offset(off);
                    }
                    Some(sig)
                }
                other => other,
            };
            (out, false)
        }
    }
}

/// Validates a whole campaign, reporting the first bad spec.
pub fn validate_faults(specs: &[FaultSpec]) -> Result<(), FaultError> {
    for (i, s) in specs.iter().enumerate() {
        s.validate(i)?;
    }
    Ok(())
}
