//! Analytic stand-ins for learned components.
//!
//! Instead of shipping real models, scenarios describe a *reference
//! function* (the ideal input-output map) plus region-dependent error
//! models. The simulated complex component evaluates the reference and
//! perturbs it: bias and Gaussian noise for nominal behaviour, a configured
//! probability of producing an *erroneous* output (reference plus a large
//! offset, still self-reported as valid unless a self-test catches it), and
//! a reported uncertainty that may understate the true error. Conventional
//! backup channels evaluate the same reference either exactly or through a
//! quantisation that models a simpler implementation.
//!
//! This keeps runs fast and exactly reproducible while preserving the
//! failure modes that matter to the architecture around the model:
//! plausible-but-wrong outputs, optimistic uncertainty, and behaviour that
//! degrades outside the region the model was built for.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    Behavior, EngineError, Inputs, Signal, StepContext, StepOutput, Tick, Value,
};
use crate::geometry::{encode_detections, Box2D, Detection};

// ── Errors ──────────────────────────────────────────────────────────

#[derive(Debug, Error, PartialEq)]
pub enum SurrogateError {
    #[error("input has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid surrogate definition: {0}")]
    Invalid(String),
}

// ── Reference functions ─────────────────────────────────────────────

/// Ideal input-output map the learned component is supposed to realise.
/// All variants are total over R^dim: piecewise and grid forms clamp the
/// input into their support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceFn {
    Linear {
        weights: Vec<f64>,
        bias: f64,
    },
    /// 1-D piecewise polynomial. `breaks` are strictly ascending segment
    /// boundaries (`coeffs.len() + 1` of them); segment `i` evaluates
    /// `sum_j coeffs[i][j] * (x - breaks[i])^j`.
    PiecewisePoly {
        breaks: Vec<f64>,
        coeffs: Vec<Vec<f64>>,
    },
    /// Multilinear interpolation over a rectilinear grid. `values` is
    /// row-major with the last axis fastest.
    LookupGrid {
        axes: Vec<Vec<f64>>,
        values: Vec<f64>,
    },
}

impl ReferenceFn {
    pub fn dim(&self) -> usize {
        match self {
            ReferenceFn::Linear { weights, .. } => weights.len(),
            ReferenceFn::PiecewisePoly { .. } => 1,
            ReferenceFn::LookupGrid { axes, .. } => axes.len(),
        }
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        match self {
            ReferenceFn::Linear { weights, .. } => {
                if weights.is_empty() {
                    return Err(SurrogateError::Invalid("linear: no weights".into()));
                }
            }
            ReferenceFn::PiecewisePoly { breaks, coeffs } => {
                if coeffs.is_empty() || breaks.len() != coeffs.len() + 1 {
                    return Err(SurrogateError::Invalid(format!(
                        "piecewise: {} breaks for {} segments",
                        breaks.len(),
                        coeffs.len()
                    )));
                }
                if breaks.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(SurrogateError::Invalid(
                        "piecewise: breaks not strictly ascending".into(),
                    ));
                }
            }
            ReferenceFn::LookupGrid { axes, values } => {
                if axes.is_empty() {
                    return Err(SurrogateError::Invalid("grid: no axes".into()));
                }
                let mut cells = 1usize;
                for (i, axis) in axes.iter().enumerate() {
                    if axis.len() < 2 || axis.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(SurrogateError::Invalid(format!(
                            "grid: axis {i} must have >= 2 strictly ascending knots"
                        )));
                    }
                    cells = cells.saturating_mul(axis.len());
                }
                if values.len() != cells {
                    return Err(SurrogateError::Invalid(format!(
                        "grid: {} values for {} knots",
                        values.len(),
                        cells
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, input: &[f64]) -> Result<f64, SurrogateError> {
        let expected = self.dim();
        if input.len() != expected {
            return Err(SurrogateError::DimensionMismatch {
                expected,
                got: input.len(),
            });
        }
        Ok(match self {
            ReferenceFn::Linear { weights, bias } => {
                weights.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + bias
            }
            ReferenceFn::PiecewisePoly { breaks, coeffs } => {
                let lo = breaks[0];
                let hi = *breaks.last().unwrap();
                let x = input[0].clamp(lo, hi);
                // Last segment is closed on the right.
                let seg = breaks[1..breaks.len() - 1]
                    .iter()
                    .filter(|b| **b <= x)
                    .count();
                let t = x - breaks[seg];
                coeffs[seg].iter().rev().fold(0.0, |acc, c| acc * t + c)
            }
            ReferenceFn::LookupGrid { axes, values } => {
                // Per-axis cell index and interpolation fraction, clamped.
                let mut idx = Vec::with_capacity(axes.len());
                let mut frac = Vec::with_capacity(axes.len());
                for (axis, &x) in axes.iter().zip(input) {
                    let x = x.clamp(axis[0], *axis.last().unwrap());
                    let cell = axis[..axis.len() - 1]
                        .iter()
                        .filter(|k| **k <= x)
                        .count()
                        .saturating_sub(1);
                    let span = axis[cell + 1] - axis[cell];
                    idx.push(cell);
                    frac.push((x - axis[cell]) / span);
                }
                let mut strides = vec![1usize; axes.len()];
                for d in (0..axes.len() - 1).rev() {
                    strides[d] = strides[d + 1] * axes[d + 1].len();
                }
                let mut acc = 0.0;
                for corner in 0..(1usize << axes.len()) {
                    let mut weight = 1.0;
                    let mut offset = 0usize;
                    for d in 0..axes.len() {
                        let hi_side = corner >> d & 1 == 1;
                        weight *= if hi_side { frac[d] } else { 1.0 - frac[d] };
                        offset += (idx[d] + hi_side as usize) * strides[d];
                    }
                    acc += weight * values[offset];
                }
                acc
            }
        })
    }
}

// ── Operating regions and error models ──────────────────────────────

/// Closed axis-aligned box in input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddRegion {
    pub label: String,
    /// Per-dimension `[lower, upper]`, both inclusive.
    pub bounds: Vec<[f64; 2]>,
}

impl OddRegion {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        if self.bounds.is_empty() {
            return Err(SurrogateError::Invalid(format!(
                "region `{}`: empty bounds",
                self.label
            )));
        }
        for (d, b) in self.bounds.iter().enumerate() {
            if b[0].is_nan() || b[1].is_nan() || b[0] > b[1] {
                return Err(SurrogateError::Invalid(format!(
                    "region `{}` dim {d}: lower {} above upper {}",
                    self.label, b[0], b[1]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, input: &[f64]) -> Result<bool, SurrogateError> {
        if input.len() != self.bounds.len() {
            return Err(SurrogateError::DimensionMismatch {
                expected: self.bounds.len(),
                got: input.len(),
            });
        }
        Ok(self
            .bounds
            .iter()
            .zip(input)
            .all(|(b, x)| (b[0]..=b[1]).contains(x)))
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|b| b[1] - b[0]).product()
    }
}

/// Membership in the declared operating domain: inside any region, with
/// closed boundaries.
pub fn in_odd(regions: &[OddRegion], input: &[f64]) -> Result<bool, SurrogateError> {
    for r in regions {
        if r.contains(input)? {
            return Ok(true);
        }
    }
    Ok(false)
}

fn default_p() -> f64 {
    0.0
}

/// Reported-confidence model: `reported = base + jitter * U[0,1)`. The
/// report is independent of the actual error, so a profile can understate
/// uncertainty exactly where the output is erroneous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Uncertainty {
    #[serde(default)]
    pub base: f64,
    #[serde(default)]
    pub jitter: f64,
}

/// How the simulated model errs within one region. All-default is a perfect
/// model: output equals the reference, uncertainty reported as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ErrorModel {
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub noise_std: f64,
    /// Per-tick probability of an erroneous output.
    #[serde(default = "default_p")]
    pub erroneous_prob: f64,
    /// Added to the reference value when erroneous; scenarios pick it large
    /// enough to breach their safety envelope.
    #[serde(default)]
    pub erroneous_offset: f64,
    #[serde(default)]
    pub uncertainty: Uncertainty,
}

impl ErrorModel {
    pub fn validate(&self, what: &str) -> Result<(), SurrogateError> {
        if self.noise_std < 0.0 {
            return Err(SurrogateError::Invalid(format!(
                "{what}: negative noise_std"
            )));
        }
        if !(0.0..=1.0).contains(&self.erroneous_prob) {
            return Err(SurrogateError::Invalid(format!(
                "{what}: erroneous_prob outside [0, 1]"
            )));
        }
        if self.uncertainty.jitter < 0.0 {
            return Err(SurrogateError::Invalid(format!(
                "{what}: negative uncertainty jitter"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionModel {
    pub region: OddRegion,
    pub model: ErrorModel,
}

/// Full description of a simulated learned component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateProfile {
    pub reference: ReferenceFn,
    /// First region containing the input wins; outside all regions the
    /// `ood` model applies.
    #[serde(default)]
    pub regions: Vec<RegionModel>,
    #[serde(default)]
    pub ood: ErrorModel,
    /// Probability that an erroneous output is caught by a built-in
    /// self-test and delivered with `valid == false`.
    #[serde(default)]
    pub p_selftest: f64,
}

impl SurrogateProfile {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        self.reference.validate()?;
        let dim = self.reference.dim();
        for (i, rm) in self.regions.iter().enumerate() {
            rm.region.validate()?;
            if rm.region.bounds.len() != dim {
                return Err(SurrogateError::DimensionMismatch {
                    expected: dim,
                    got: rm.region.bounds.len(),
                });
            }
            rm.model.validate(&format!("region {i}"))?;
        }
        self.ood.validate("ood")?;
        if !(0.0..=1.0).contains(&self.p_selftest) {
            return Err(SurrogateError::Invalid("p_selftest outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn odd_regions(&self) -> Vec<OddRegion> {
        self.regions.iter().map(|rm| rm.region.clone()).collect()
    }

    fn model_for(&self, input: &[f64]) -> Result<&ErrorModel, SurrogateError> {
        for rm in &self.regions {
            if rm.region.contains(input)? {
                return Ok(&rm.model);
            }
        }
        Ok(&self.ood)
    }
}

// ── Evaluation ──────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexEval {
    pub signal: Signal,
    pub uncertainty: f64,
    /// Ground truth for analysis; components never expose it downstream.
    pub erroneous: bool,
}

/// One production of the simulated complex component.
///
/// Draw order per evaluation (part of the determinism contract): erroneous
/// Bernoulli first; then either the self-test Bernoulli (erroneous path) or
/// the Gaussian noise sample (nominal path); the uncertainty jitter last.
pub fn eval_complex(
    profile: &SurrogateProfile,
    input: &[f64],
    tick: Tick,
    rng: &mut ChaCha8Rng,
) -> Result<ComplexEval, SurrogateError> {
    let reference = profile.reference.eval(input)?;
    let model = profile.model_for(input)?;

    let erroneous = rng.gen::<f64>() < model.erroneous_prob;
    let (value, valid) = if erroneous {
        let caught = rng.gen::<f64>() < profile.p_selftest;
        (reference + model.erroneous_offset, !caught)
    } else {
        let z: f64 = StandardNormal.sample(rng);
        (reference + model.bias + model.noise_std * z, true)
    };
    let uncertainty = model.uncertainty.base + model.uncertainty.jitter * rng.gen::<f64>();

    Ok(ComplexEval {
        signal: Signal {
            value: Value::Scalar(value),
            valid,
            stamp: tick,
        },
        uncertainty,
        erroneous,
    })
}

/// How a conventional channel realises the reference function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackupMode {
    /// Bit-exact reference evaluation.
    Equivalent,
    /// Quantised reference: deviation stays within `tolerance / 2`.
    Degraded { tolerance: f64 },
}

/// One production of a conventional backup channel. Always valid; the
/// degraded mode rounds the reference to the centre of a `tolerance`-wide
/// bin (tolerance 0 means exact).
pub fn eval_backup(
    mode: &BackupMode,
    reference: &ReferenceFn,
    input: &[f64],
    tick: Tick,
) -> Result<Signal, SurrogateError> {
    let exact = reference.eval(input)?;
    let value = match mode {
        BackupMode::Equivalent => exact,
        BackupMode::Degraded { tolerance } if *tolerance == 0.0 => exact,
        BackupMode::Degraded { tolerance } => {
            (exact / tolerance).floor() * tolerance + tolerance / 2.0
        }
    };
    Ok(Signal::scalar(value, tick))
}

// ── Engine behaviors ────────────────────────────────────────────────

/// Simulated learned component: port `in` to ports `out` and `uncertainty`.
/// Absent or self-invalid input yields absence on both outputs.
#[derive(Clone)]
pub struct ComplexBehavior {
    pub profile: SurrogateProfile,
}

impl Behavior for ComplexBehavior {
    fn step(
        &mut self,
        ctx: &mut StepContext<'_>,
        inputs: &Inputs<'_>,
    ) -> Result<StepOutput, EngineError> {
        let Some(input) = inputs.get("in").filter(|s| s.valid) else {
            return Ok(StepOutput::empty().with("out", None).with("uncertainty", None));
        };
        // Carry the input's stamp so timestamp skew stays observable
        // through the function.
        let stamp = input.stamp;
        match eval_complex(&self.profile, input.value.as_slice(), stamp, ctx.rng) {
            Ok(eval) => Ok(StepOutput::empty()
                .with("out", Some(eval.signal))
                .with(
                    "uncertainty",
                    Some(Signal::scalar(eval.uncertainty, stamp)),
                )),
            Err(_) => Ok(StepOutput::empty().with("out", None).with("uncertainty", None)),
        }
    }

    fn fresh(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

/// Conventional channel: port `in` to port `out`.
#[derive(Clone)]
pub struct BackupBehavior {
    pub mode: BackupMode,
    pub reference: ReferenceFn,
}

impl Behavior for BackupBehavior {
    fn step(
        &mut self,
        _ctx: &mut StepContext<'_>,
        inputs: &Inputs<'_>,
    ) -> Result<StepOutput, EngineError> {
        let Some(input) = inputs.get("in").filter(|s| s.valid) else {
            return Ok(StepOutput::single("out", None));
        };
        let out = eval_backup(&self.mode, &self.reference, input.value.as_slice(), input.stamp)
            .ok();
        Ok(StepOutput::single("out", out))
    }

    fn fresh(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}

/// Simulated object detector for post-processing scenarios: the input point
/// is the true object centre; the detector emits one positive detection
/// whose box overlaps the ground truth with intersection-over-union at
/// least `training_iou`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub gt_width: f64,
    pub gt_height: f64,
    pub training_iou: f64,
    #[serde(default)]
    pub score: f64,
}

#[derive(Clone)]
pub struct DetectorBehavior {
    pub config: DetectorConfig,
}

impl DetectorBehavior {
    fn centre(input: &Value) -> (f64, f64) {
        match input {
            Value::Scalar(x) => (*x, *x),
            Value::Vector(v) if v.len() >= 2 => (v[0], v[1]),
            Value::Vector(v) if v.len() == 1 => (v[0], v[0]),
            Value::Vector(_) => (0.0, 0.0),
        }
    }
}

impl Behavior for DetectorBehavior {
    fn step(
        &mut self,
        ctx: &mut StepContext<'_>,
        inputs: &Inputs<'_>,
    ) -> Result<StepOutput, EngineError> {
        let Some(input) = inputs.get("in").filter(|s| s.valid) else {
            return Ok(StepOutput::empty().with("out", None).with("gt", None));
        };
        let (cx, cy) = Self::centre(&input.value);
        let (w, h) = (self.config.gt_width, self.config.gt_height);
        let gt = Box2D::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
            .expect("positive ground-truth extent");

        // Perturb until the prediction clears the training overlap; the
        // unperturbed box is the (always-valid) fallback.
        let mut pred = gt;
        let jitter = 0.08 * w.min(h);
        for _ in 0..16 {
            let dx = (ctx.rng.gen::<f64>() - 0.5) * 2.0 * jitter;
            let dy = (ctx.rng.gen::<f64>() - 0.5) * 2.0 * jitter;
            let grow = 1.0 + (ctx.rng.gen::<f64>() - 0.5) * 0.1;
            let (pw, ph) = (w * grow, h * grow);
            let cand = Box2D::new(
                cx + dx - pw / 2.0,
                cy + dy - ph / 2.0,
                cx + dx + pw / 2.0,
                cy + dy + ph / 2.0,
            )
            .expect("positive candidate extent");
            if crate::geometry::iou(&cand, &gt) >= self.config.training_iou {
                pred = cand;
                break;
            }
        }

        let stamp = input.stamp;
        let make = |bbox: Box2D, score: f64| Detection {
            bbox,
            positive: true,
            score,
        };
        Ok(StepOutput::empty()
            .with(
                "out",
                Some(Signal {
                    value: Value::Vector(encode_detections(&[make(pred, self.config.score)])),
                    valid: true,
                    stamp,
                }),
            )
            .with(
                "gt",
                Some(Signal {
                    value: Value::Vector(encode_detections(&[make(gt, 1.0)])),
                    valid: true,
                    stamp,
                }),
            ))
    }

    fn fresh(&self) -> Box<dyn Behavior> {
        Box::new(self.clone())
    }
}
