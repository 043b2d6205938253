//! Spike encoding, LIF/IF membrane dynamics, and surrogate gradients.
//!
//! The membrane recurrence is `V' = V·λ + R·I`, spiking where `V' ≥ V_th`;
//! the post-spike membrane follows the layer's [`ResetMode`]. Training
//! substitutes a smooth surrogate for the Heaviside derivative; "smooth mode"
//! (see [`surrogate_primitive`]) additionally replaces the forward spike with
//! the surrogate's primitive so gradients can be validated against finite
//! differences.

use crate::scalar::{real, Real};
use crate::tensor::TimedTensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("state error: {0}")]
    State(String),
}

/// Post-spike membrane handling.
///
/// `None` disables the reset entirely; it exists for diagnostics and property
/// tests (e.g. spike-count monotonicity) and is not used by model layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResetMode {
    #[default]
    ToZero,
    SubtractThreshold,
    None,
}

/// LIF neuron constants. `decay` is λ = e^(−Δt/τ_m) ∈ (0, 1];
/// λ = 1, R = 1 gives the IF neuron.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifParams<F> {
    pub decay: F,
    pub resistance: F,
    pub threshold: F,
    pub reset: ResetMode,
}

impl<F: Real> Default for LifParams<F> {
    fn default() -> Self {
        LifParams {
            decay: real(0.5),
            resistance: F::one(),
            threshold: F::one(),
            reset: ResetMode::ToZero,
        }
    }
}

impl<F: Real> LifParams<F> {
    /// IF parameters: no leak, unit resistance.
    pub fn integrate_and_fire(threshold: F, reset: ResetMode) -> Self {
        LifParams {
            decay: F::one(),
            resistance: F::one(),
            threshold,
            reset,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let ok = self.decay > F::zero()
            && self.decay <= F::one()
            && self.resistance > F::zero()
            && self.threshold > F::zero()
            && self.decay.is_finite()
            && self.resistance.is_finite()
            && self.threshold.is_finite();
        if ok {
            Ok(())
        } else {
            Err(EngineError::InvalidConfig(format!(
                "LIF params out of range: decay {} (need (0,1]), resistance {} (> 0), threshold {} (> 0)",
                self.decay, self.resistance, self.threshold
            )))
        }
    }
}

/// Per-neuron state carried across time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronState<F> {
    pub membrane: Vec<F>,
    pub spike_count: Vec<u32>,
}

impl<F: Real> NeuronState<F> {
    pub fn new(size: usize) -> Self {
        NeuronState {
            membrane: vec![F::zero(); size],
            spike_count: vec![0; size],
        }
    }

    pub fn reset(&mut self) {
        self.membrane.fill(F::zero());
        self.spike_count.fill(0);
    }
}

/// One LIF step over a flat slice of input currents; returns the spike slice
/// (exactly 0 or 1 per neuron) and updates membrane and spike counts.
pub fn lif_step<F: Real>(
    state: &mut NeuronState<F>,
    input: &[F],
    params: &LifParams<F>,
) -> Result<Vec<F>, EngineError> {
    params.validate()?;
    if state.membrane.len() != input.len() {
        return Err(EngineError::Shape(format!(
            "state has {} neurons, input has {}",
            state.membrane.len(),
            input.len()
        )));
    }
    let mut spikes = vec![F::zero(); input.len()];
    for (i, ((v, s), &cur)) in state
        .membrane
        .iter_mut()
        .zip(&mut spikes)
        .zip(input)
        .enumerate()
    {
        let v_pre = *v * params.decay + params.resistance * cur;
        if v_pre >= params.threshold {
            *s = F::one();
            state.spike_count[i] += 1;
            *v = match params.reset {
                ResetMode::ToZero => F::zero(),
                ResetMode::SubtractThreshold => v_pre - params.threshold,
                ResetMode::None => v_pre,
            };
        } else {
            *v = v_pre;
        }
    }
    Ok(spikes)
}

/// One IF step: [`lif_step`] with λ = 1, R = 1.
pub fn if_step<F: Real>(
    state: &mut NeuronState<F>,
    input: &[F],
    threshold: F,
    reset: ResetMode,
) -> Result<Vec<F>, EngineError> {
    lif_step(state, input, &LifParams::integrate_and_fire(threshold, reset))
}

/// Surrogate family for the spike derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SurrogateKind {
    #[default]
    Arctangent,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateSpec<F> {
    pub kind: SurrogateKind,
    pub alpha: F,
}

impl<F: Real> Default for SurrogateSpec<F> {
    fn default() -> Self {
        SurrogateSpec {
            kind: SurrogateKind::Arctangent,
            alpha: real(2.0),
        }
    }
}

/// Surrogate derivative at `x = V − V_th`.
///
/// Arctangent: `(α/2) / (1 + (π·α·x/2)²)`; sigmoid: `α·σ(αx)·(1−σ(αx))`.
/// Both are positive, even, and maximal at the threshold.
pub fn surrogate_grad<F: Real>(x: F, spec: &SurrogateSpec<F>) -> F {
    let a = spec.alpha;
    match spec.kind {
        SurrogateKind::Arctangent => {
            let half_pi_ax = real::<F>(std::f64::consts::FRAC_PI_2) * a * x;
            a / real::<F>(2.0) / (F::one() + half_pi_ax * half_pi_ax)
        }
        SurrogateKind::Sigmoid => {
            let s = sigmoid(a * x);
            a * s * (F::one() - s)
        }
    }
}

/// Antiderivative of [`surrogate_grad`], rising from 0 to 1: the smooth-mode
/// stand-in for the Heaviside spike. Arctangent: `1/2 + arctan(π·α·x/2)/π`;
/// sigmoid: `σ(αx)`.
pub fn surrogate_primitive<F: Real>(x: F, spec: &SurrogateSpec<F>) -> F {
    let a = spec.alpha;
    match spec.kind {
        SurrogateKind::Arctangent => {
            let half = real::<F>(0.5);
            let pi = real::<F>(std::f64::consts::PI);
            half + (half * pi * a * x).atan() / pi
        }
        SurrogateKind::Sigmoid => sigmoid(a * x),
    }
}

pub fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Replicates a static slice across `steps` time steps (constant-rate
/// encoding: the normalized CSI acts as a sustained input current).
pub fn encode_constant_rate<F: Real>(
    values: &[F],
    slice_shape: &[usize],
    steps: usize,
) -> Result<TimedTensor<F>, EngineError> {
    if steps == 0 {
        return Err(EngineError::InvalidConfig(
            "time steps must be ≥ 1".into(),
        ));
    }
    let slice_len: usize = slice_shape.iter().product();
    if values.len() != slice_len {
        return Err(EngineError::Shape(format!(
            "values length {} does not match shape {slice_shape:?}",
            values.len()
        )));
    }
    let mut out = TimedTensor::zeros(steps, slice_shape);
    for t in 0..steps {
        out.slice_mut(t).copy_from_slice(values);
    }
    Ok(out)
}
