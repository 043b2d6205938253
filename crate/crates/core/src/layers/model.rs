//! Declarative model assembly, forward execution, and BPTT backward.
//!
//! A [`Model`] is a sequential stack compiled from [`ModelConfig`] by
//! [`build_model`], which resolves shapes, type-checks the chain (spiking
//! layers must follow current-producing layers, vote is terminal and consumes
//! binary spikes), and initializes parameters from a seeded uniform fan-in
//! scheme.
//!
//! Forward runs time-major: for each step the input slice flows through all
//! layers; binary activations travel as sorted index lists so convolutions
//! and FC layers after neurons cost one accumulation per active spike. The
//! first convolution detects identical input slices (constant-rate encoding)
//! and computes its output once.
//!
//! Backward replays the recorded [`Trace`] in reverse time and layer order,
//! substituting the configured surrogate for the spike derivative, with the
//! membrane reset detached (spike mode) or differentiated exactly (smooth
//! mode, where the forward spike is the surrogate's primitive — this is what
//! makes central finite differences match the analytic gradients).

use crate::engine::{
    surrogate_grad, surrogate_primitive, LifParams, ResetMode, SurrogateKind, SurrogateSpec,
};
use crate::layers::kernels::*;
use crate::scalar::{real, Real};
use crate::seed::{self, domain};
use crate::tensor::TimedTensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(String),
}

// ---------------------------------------------------------------------------
// Declarative configuration
// ---------------------------------------------------------------------------

fn default_time_steps() -> usize {
    4
}
fn default_stride() -> [usize; 2] {
    [1, 1]
}
fn default_attention_kernel() -> [usize; 2] {
    [2, 2]
}
fn default_attention_stride() -> usize {
    2
}
fn default_decay() -> f64 {
    0.5
}
fn default_unit() -> f64 {
    1.0
}
fn default_group() -> usize {
    1
}
fn default_alpha() -> f64 {
    2.0
}

/// Reset rule, config-side (the diagnostic `None` mode is not configurable).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResetConfig {
    #[default]
    ToZero,
    SubtractThreshold,
}

impl From<ResetConfig> for ResetMode {
    fn from(r: ResetConfig) -> ResetMode {
        match r {
            ResetConfig::ToZero => ResetMode::ToZero,
            ResetConfig::SubtractThreshold => ResetMode::SubtractThreshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKindConfig {
    #[default]
    Arctangent,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    #[serde(default)]
    pub kind: SurrogateKindConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            kind: SurrogateKindConfig::Arctangent,
            alpha: default_alpha(),
        }
    }
}

/// One layer of the declarative stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: [usize; 2],
        #[serde(default = "default_stride")]
        stride: [usize; 2],
        #[serde(default)]
        padding: [usize; 2],
    },
    Fc {
        /// Omitted on the final FC: resolves to `n_class · vote group`.
        #[serde(default)]
        out_features: Option<usize>,
    },
    Lif {
        #[serde(default = "default_decay")]
        decay: f64,
        #[serde(default = "default_unit")]
        resistance: f64,
        #[serde(default = "default_unit")]
        threshold: f64,
        #[serde(default)]
        reset: ResetConfig,
    },
    If {
        #[serde(default = "default_unit")]
        threshold: f64,
        #[serde(default)]
        reset: ResetConfig,
    },
    TemporalAttention {
        #[serde(default = "default_attention_kernel")]
        kernel: [usize; 2],
        #[serde(default = "default_attention_stride")]
        stride: usize,
    },
    Maxpool {
        kernel: [usize; 2],
    },
    Avgpool {
        kernel: [usize; 2],
    },
    Flatten,
    Vote {
        #[serde(default = "default_group")]
        group_size: usize,
    },
}

impl LayerSpec {
    fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Lif { .. } => "lif",
            LayerSpec::If { .. } => "if",
            LayerSpec::TemporalAttention { .. } => "temporal_attention",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Avgpool { .. } => "avgpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Vote { .. } => "vote",
        }
    }
}

/// Declarative model description (the `[model]` section of a run config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_time_steps")]
    pub time_steps: usize,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    #[serde(rename = "layer")]
    pub layers: Vec<LayerSpec>,
}

// ---------------------------------------------------------------------------
// Runtime layers
// ---------------------------------------------------------------------------

/// Logical value kind flowing between layers; drives both type checking and
/// AC/MAC classification in telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    /// Dense real values (encoder output, conv/fc pre-activations).
    Current,
    /// Binary spikes.
    Spike,
    /// Spikes scaled by a positive factor (attention output, pooled spikes):
    /// still sparse events for energy purposes.
    Event,
}

/// Layer I/O shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spatial(usize, usize, usize),
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Spatial(c, h, w) => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Spatial(c, h, w) => vec![c, h, w],
            Shape::Flat(n) => vec![n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer<F> {
    pub geom: ConvGeom,
    /// Layout `[in_c][kh][kw][out_c]`.
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct FcLayer<F> {
    pub n_in: usize,
    pub n_out: usize,
    /// Layout `[in][out]`.
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct NeuronLayer<F> {
    pub params: LifParams<F>,
    pub size: usize,
    pub is_if: bool,
}

#[derive(Debug, Clone)]
pub struct AttentionLayer<F> {
    pub win: WindowGeom,
    pub channels: usize,
    pub alpha: F,
    pub beta: F,
    pub gate_w: F,
    pub gate_b: F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone)]
pub struct PoolLayer {
    pub win: WindowGeom,
    pub channels: usize,
    pub kind: PoolKind,
}

#[derive(Debug, Clone)]
pub enum Layer<F> {
    Conv(ConvLayer<F>),
    Fc(FcLayer<F>),
    Neuron(NeuronLayer<F>),
    Attention(AttentionLayer<F>),
    Pool(PoolLayer),
    Flatten,
    Vote,
}

/// A compiled layer with resolved shapes and value kinds.
#[derive(Debug, Clone)]
pub struct ModelLayer<F> {
    pub name: String,
    pub op: Layer<F>,
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub in_kind: ValueKind,
    pub out_kind: ValueKind,
}

/// Compiled sequential spiking model.
#[derive(Debug, Clone)]
pub struct Model<F> {
    pub time_steps: usize,
    pub input_shape: [usize; 3],
    pub n_class: usize,
    pub vote_group: usize,
    pub surrogate: SurrogateSpec<F>,
    pub layers: Vec<ModelLayer<F>>,
    /// Spiking layer whose time-averaged output feeds the projection head
    /// (the one preceding the final FC), if the stack has that pattern.
    pub tap_layer: Option<usize>,
}

/// Forward activation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActivationMode {
    /// Binary spikes (normal operation).
    #[default]
    Spike,
    /// The spike Heaviside is replaced by the surrogate's primitive and the
    /// reset is applied softly; the whole network becomes differentiable so
    /// analytic gradients can be checked against finite differences.
    Smooth,
}

// ---------------------------------------------------------------------------
// build_model
// ---------------------------------------------------------------------------

/// Compiles a config into a [`Model`], checking the layer chain and
/// initializing parameters with seed-deterministic uniform fan-in draws.
pub fn build_model<F: Real>(
    config: &ModelConfig,
    input_shape: [usize; 3],
    n_class: usize,
    seed: u64,
) -> Result<Model<F>, ModelError> {
    if config.time_steps == 0 {
        return Err(ModelError::Config("time_steps must be ≥ 1".into()));
    }
    if n_class == 0 {
        return Err(ModelError::Config("n_class must be ≥ 1".into()));
    }
    if config.layers.is_empty() {
        return Err(ModelError::Config("model has no layers".into()));
    }
    if !(config.surrogate.alpha > 0.0) {
        return Err(ModelError::Config(format!(
            "surrogate alpha must be > 0, got {}",
            config.surrogate.alpha
        )));
    }
    let vote_group = config
        .layers
        .iter()
        .find_map(|l| match l {
            LayerSpec::Vote { group_size } => Some(*group_size),
            _ => None,
        })
        .unwrap_or(1);
    if vote_group == 0 {
        return Err(ModelError::Config("vote group_size must be ≥ 1".into()));
    }

    let mut rng = seed::rng_for(seed, &[domain::MODEL_INIT]);
    let mut layers: Vec<ModelLayer<F>> = Vec::with_capacity(config.layers.len());
    let mut shape = Shape::Spatial(input_shape[0], input_shape[1], input_shape[2]);
    let mut kind = ValueKind::Current;
    let mut prev_name = "input".to_string();
    let mut saw_vote = false;

    let pair_err = |i: usize, spec: &LayerSpec, prev: &str, why: &str| {
        ModelError::Config(format!(
            "layer {i} ({}) cannot follow {prev}: {why}",
            spec.kind_name()
        ))
    };

    for (i, spec) in config.layers.iter().enumerate() {
        if saw_vote {
            return Err(ModelError::Config(format!(
                "layer {i} ({}) appears after vote; vote must be terminal",
                spec.kind_name()
            )));
        }
        let name = format!("layer{i:02}_{}", spec.kind_name());
        let (op, out_shape, out_kind): (Layer<F>, Shape, ValueKind) = match *spec {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let Shape::Spatial(c, h, w) = shape else {
                    return Err(pair_err(i, spec, &prev_name, "conv needs a spatial input"));
                };
                let geom = ConvGeom::resolve(
                    c,
                    h,
                    w,
                    out_channels,
                    (kernel[0], kernel[1]),
                    (stride[0], stride[1]),
                    (padding[0], padding[1]),
                )
                .ok_or_else(|| {
                    ModelError::Config(format!(
                        "layer {i} (conv): kernel {kernel:?} stride {stride:?} padding {padding:?} \
                         invalid for input {c}x{h}x{w}"
                    ))
                })?;
                let fan_in = geom.in_c * geom.kh * geom.kw;
                let weight = init_uniform(&mut rng, geom.weight_len(), fan_in);
                let bias = init_uniform(&mut rng, geom.out_c, fan_in);
                let out = Shape::Spatial(geom.out_c, geom.out_h, geom.out_w);
                (
                    Layer::Conv(ConvLayer { geom, weight, bias }),
                    out,
                    ValueKind::Current,
                )
            }
            LayerSpec::Fc { out_features } => {
                let Shape::Flat(n_in) = shape else {
                    return Err(pair_err(
                        i,
                        spec,
                        &prev_name,
                        "fc needs a flat input (add flatten first)",
                    ));
                };
                let n_out = out_features.unwrap_or(n_class * vote_group);
                if n_out == 0 {
                    return Err(ModelError::Config(format!(
                        "layer {i} (fc): out_features must be ≥ 1"
                    )));
                }
                let weight = init_uniform(&mut rng, n_in * n_out, n_in);
                let bias = init_uniform(&mut rng, n_out, n_in);
                (
                    Layer::Fc(FcLayer {
                        n_in,
                        n_out,
                        weight,
                        bias,
                    }),
                    Shape::Flat(n_out),
                    ValueKind::Current,
                )
            }
            LayerSpec::Lif { .. } | LayerSpec::If { .. } => {
                let is_if = matches!(spec, LayerSpec::If { .. });
                let (decay, resistance, threshold, reset) = match *spec {
                    LayerSpec::Lif {
                        decay,
                        resistance,
                        threshold,
                        reset,
                    } => (decay, resistance, threshold, reset),
                    LayerSpec::If { threshold, reset } => (1.0, 1.0, threshold, reset),
                    _ => unreachable!(),
                };
                let current_producer = matches!(
                    layers.last().map(|l: &ModelLayer<F>| &l.op),
                    Some(Layer::Conv(_)) | Some(Layer::Fc(_))
                );
                if kind != ValueKind::Current || !current_producer {
                    return Err(pair_err(
                        i,
                        spec,
                        &prev_name,
                        "spiking layers must directly follow a current-producing layer (conv or fc)",
                    ));
                }
                let params = LifParams {
                    decay: real::<F>(decay),
                    resistance: real::<F>(resistance),
                    threshold: real::<F>(threshold),
                    reset: reset.into(),
                };
                params
                    .validate()
                    .map_err(|e| ModelError::Config(format!("layer {i}: {e}")))?;
                (
                    Layer::Neuron(NeuronLayer {
                        params,
                        size: shape.len(),
                        is_if,
                    }),
                    shape,
                    ValueKind::Spike,
                )
            }
            LayerSpec::TemporalAttention { kernel, stride } => {
                let Shape::Spatial(c, h, w) = shape else {
                    return Err(pair_err(
                        i,
                        spec,
                        &prev_name,
                        "temporal_attention needs a spatial input",
                    ));
                };
                let win = WindowGeom::resolve(h, w, kernel[0], kernel[1], stride, stride)
                    .ok_or_else(|| {
                        ModelError::Config(format!(
                            "layer {i} (temporal_attention): window {kernel:?} stride {stride} \
                             does not fit input {h}x{w}"
                        ))
                    })?;
                let out_kind = match kind {
                    ValueKind::Current => ValueKind::Current,
                    _ => ValueKind::Event,
                };
                (
                    Layer::Attention(AttentionLayer {
                        win,
                        channels: c,
                        alpha: real::<F>(0.5),
                        beta: real::<F>(0.5),
                        gate_w: F::zero(),
                        gate_b: F::zero(),
                    }),
                    shape,
                    out_kind,
                )
            }
            LayerSpec::Maxpool { kernel } | LayerSpec::Avgpool { kernel } => {
                let Shape::Spatial(c, h, w) = shape else {
                    return Err(pair_err(i, spec, &prev_name, "pooling needs a spatial input"));
                };
                let win = WindowGeom::resolve(h, w, kernel[0], kernel[1], kernel[0], kernel[1])
                    .ok_or_else(|| {
                        ModelError::Config(format!(
                            "layer {i} ({}): kernel {kernel:?} does not fit input {h}x{w}",
                            spec.kind_name()
                        ))
                    })?;
                let pool_kind = if matches!(spec, LayerSpec::Maxpool { .. }) {
                    PoolKind::Max
                } else {
                    PoolKind::Avg
                };
                let out_kind = match (pool_kind, kind) {
                    (PoolKind::Avg, ValueKind::Spike) => ValueKind::Event,
                    (_, k) => k,
                };
                (
                    Layer::Pool(PoolLayer {
                        win,
                        channels: c,
                        kind: pool_kind,
                    }),
                    Shape::Spatial(c, win.n_h, win.n_w),
                    out_kind,
                )
            }
            LayerSpec::Flatten => {
                let Shape::Spatial(..) = shape else {
                    return Err(pair_err(i, spec, &prev_name, "flatten needs a spatial input"));
                };
                (Layer::Flatten, Shape::Flat(shape.len()), kind)
            }
            LayerSpec::Vote { group_size } => {
                let Shape::Flat(n) = shape else {
                    return Err(pair_err(i, spec, &prev_name, "vote needs a flat input"));
                };
                if kind != ValueKind::Spike {
                    return Err(pair_err(
                        i,
                        spec,
                        &prev_name,
                        "vote consumes binary spikes (precede it with a spiking layer)",
                    ));
                }
                if n % group_size != 0 {
                    return Err(ModelError::Config(format!(
                        "layer {i} (vote): input size {n} not divisible by group_size {group_size}"
                    )));
                }
                if n / group_size != n_class {
                    return Err(ModelError::Config(format!(
                        "layer {i} (vote): {n} neurons / group {group_size} = {} classes, but the \
                         model was built for {n_class}",
                        n / group_size
                    )));
                }
                saw_vote = true;
                (Layer::Vote, Shape::Flat(n_class), ValueKind::Current)
            }
        };

        layers.push(ModelLayer {
            name,
            op,
            in_shape: shape,
            out_shape,
            in_kind: kind,
            out_kind,
        });
        shape = out_shape;
        kind = out_kind;
        prev_name = format!(
            "layer {} ({})",
            i,
            config.layers[i].kind_name()
        );
    }

    if !saw_vote {
        return Err(ModelError::Config(format!(
            "model must end with a vote layer; last layer is {}",
            config.layers.last().unwrap().kind_name()
        )));
    }

    // Projection tap: the spiking layer immediately upstream of the final FC.
    let last_fc = layers
        .iter()
        .rposition(|l| matches!(l.op, Layer::Fc(_)));
    let tap_layer = last_fc.and_then(|fi| {
        layers[..fi]
            .iter()
            .rposition(|l| matches!(l.op, Layer::Neuron(_)))
    });

    let surrogate = SurrogateSpec {
        kind: match config.surrogate.kind {
            SurrogateKindConfig::Arctangent => SurrogateKind::Arctangent,
            SurrogateKindConfig::Sigmoid => SurrogateKind::Sigmoid,
        },
        alpha: real::<F>(config.surrogate.alpha),
    };

    Ok(Model {
        time_steps: config.time_steps,
        input_shape,
        n_class,
        vote_group,
        surrogate,
        layers,
        tap_layer,
    })
}

fn init_uniform<F: Real>(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<F> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..n)
        .map(|_| real::<F>(rng.gen_range(-bound..bound)))
        .collect()
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Identifies one parameter tensor inside a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Alpha,
    Beta,
    GateW,
    GateB,
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub layer: usize,
    pub kind: ParamKind,
    pub name: String,
    pub len: usize,
}

impl<F: Real> Model<F> {
    /// Stable enumeration of all trainable parameters, in layer order.
    pub fn param_entries(&self) -> Vec<ParamEntry> {
        let mut out = Vec::new();
        for (li, l) in self.layers.iter().enumerate() {
            let mut push = |kind: ParamKind, suffix: &str, len: usize| {
                out.push(ParamEntry {
                    layer: li,
                    kind,
                    name: format!("{}.{suffix}", l.name),
                    len,
                })
            };
            match &l.op {
                Layer::Conv(c) => {
                    push(ParamKind::Weight, "weight", c.weight.len());
                    push(ParamKind::Bias, "bias", c.bias.len());
                }
                Layer::Fc(f) => {
                    push(ParamKind::Weight, "weight", f.weight.len());
                    push(ParamKind::Bias, "bias", f.bias.len());
                }
                Layer::Attention(_) => {
                    push(ParamKind::Alpha, "alpha", 1);
                    push(ParamKind::Beta, "beta", 1);
                    push(ParamKind::GateW, "gate_weight", 1);
                    push(ParamKind::GateB, "gate_bias", 1);
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_entries().iter().map(|e| e.len).sum()
    }

    pub fn param_slice(&self, e: &ParamEntry) -> &[F] {
        match (&self.layers[e.layer].op, e.kind) {
            (Layer::Conv(c), ParamKind::Weight) => &c.weight,
            (Layer::Conv(c), ParamKind::Bias) => &c.bias,
            (Layer::Fc(f), ParamKind::Weight) => &f.weight,
            (Layer::Fc(f), ParamKind::Bias) => &f.bias,
            (Layer::Attention(a), ParamKind::Alpha) => std::slice::from_ref(&a.alpha),
            (Layer::Attention(a), ParamKind::Beta) => std::slice::from_ref(&a.beta),
            (Layer::Attention(a), ParamKind::GateW) => std::slice::from_ref(&a.gate_w),
            (Layer::Attention(a), ParamKind::GateB) => std::slice::from_ref(&a.gate_b),
            _ => panic!("param entry does not match layer"),
        }
    }

    pub fn param_slice_mut(&mut self, e: &ParamEntry) -> &mut [F] {
        match (&mut self.layers[e.layer].op, e.kind) {
            (Layer::Conv(c), ParamKind::Weight) => &mut c.weight,
            (Layer::Conv(c), ParamKind::Bias) => &mut c.bias,
            (Layer::Fc(f), ParamKind::Weight) => &mut f.weight,
            (Layer::Fc(f), ParamKind::Bias) => &mut f.bias,
            (Layer::Attention(a), ParamKind::Alpha) => std::slice::from_mut(&mut a.alpha),
            (Layer::Attention(a), ParamKind::Beta) => std::slice::from_mut(&mut a.beta),
            (Layer::Attention(a), ParamKind::GateW) => std::slice::from_mut(&mut a.gate_w),
            (Layer::Attention(a), ParamKind::GateB) => std::slice::from_mut(&mut a.gate_b),
            _ => panic!("param entry does not match layer"),
        }
    }
}

/// Per-parameter gradient accumulator aligned with `param_entries`.
#[derive(Debug, Clone)]
pub struct GradBuffer<F> {
    pub slots: Vec<Vec<F>>,
}

impl<F: Real> GradBuffer<F> {
    pub fn zeros(model: &Model<F>) -> Self {
        GradBuffer {
            slots: model
                .param_entries()
                .iter()
                .map(|e| vec![F::zero(); e.len])
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        for s in &mut self.slots {
            s.fill(F::zero());
        }
    }
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

/// Activation passing between layers at one time step.
#[derive(Debug, Clone)]
enum Activ<F> {
    Dense(Vec<F>),
    /// Sorted active indices of a binary slice.
    Spikes(Vec<u32>),
    /// Sorted active indices, every active element worth `scale`.
    Scaled(Vec<u32>, F),
}

impl<F: Real> Activ<F> {
    fn to_dense(&self, len: usize) -> Vec<F> {
        match self {
            Activ::Dense(v) => v.clone(),
            Activ::Spikes(idx) => {
                let mut out = vec![F::zero(); len];
                for &i in idx {
                    out[i as usize] = F::one();
                }
                out
            }
            Activ::Scaled(idx, s) => {
                let mut out = vec![F::zero(); len];
                for &i in idx {
                    out[i as usize] = *s;
                }
                out
            }
        }
    }

    fn active_count(&self) -> u64 {
        match self {
            Activ::Dense(v) => v.iter().filter(|&&x| x != F::zero()).count() as u64,
            Activ::Spikes(idx) | Activ::Scaled(idx, _) => idx.len() as u64,
        }
    }
}

/// Cached value needed by backward, per layer per step.
#[derive(Debug, Clone)]
enum TraceAct<F> {
    Dense(Vec<F>),
    Spikes(Vec<u32>),
    Scaled(Vec<u32>, F),
}

impl<F: Real> TraceAct<F> {
    fn of(a: &Activ<F>) -> Self {
        match a {
            Activ::Dense(v) => TraceAct::Dense(v.clone()),
            Activ::Spikes(i) => TraceAct::Spikes(i.clone()),
            Activ::Scaled(i, s) => TraceAct::Scaled(i.clone(), *s),
        }
    }
}

#[derive(Debug, Clone)]
enum LayerTrace<F> {
    Conv { inputs: Vec<TraceAct<F>> },
    Fc { inputs: Vec<TraceAct<F>> },
    Neuron { v_pre: Vec<Vec<F>> },
    Attention {
        inputs: Vec<TraceAct<F>>,
        f_avg: Vec<Vec<F>>,
        f_max: Vec<Vec<F>>,
        argmax: Vec<Vec<u32>>,
        tw: Vec<F>,
        m_mean: Vec<F>,
    },
    PoolMax { argmax: Vec<Vec<u32>> },
    Inert,
}

/// Recorded forward pass, consumed by [`Model::backward`].
#[derive(Debug, Clone)]
pub struct Trace<F> {
    mode: ActivationMode,
    steps: usize,
    /// All input slices were identical, so the first conv ran once.
    const_input: bool,
    layers: Vec<LayerTrace<F>>,
}

/// Spike-activity counters filled during an instrumented forward; the
/// telemetry module turns these into rate and energy reports.
#[derive(Debug, Clone)]
pub struct ActivityCounters {
    pub forwards: u64,
    /// Per layer: Σ over steps of non-zero input elements.
    pub layer_input_active: Vec<u64>,
    /// Per layer: Σ over steps of input elements (T · M_in per forward).
    pub layer_input_elems: Vec<u64>,
    /// Per spiking layer index: per-neuron total spike counts.
    pub neuron_spikes: Vec<Option<Vec<u64>>>,
    /// Time steps per forward (copied from the model for rate math).
    pub time_steps: usize,
}

impl ActivityCounters {
    pub fn for_model<F: Real>(model: &Model<F>) -> Self {
        ActivityCounters {
            forwards: 0,
            layer_input_active: vec![0; model.layers.len()],
            layer_input_elems: vec![0; model.layers.len()],
            neuron_spikes: model
                .layers
                .iter()
                .map(|l| match &l.op {
                    Layer::Neuron(n) => Some(vec![0u64; n.size]),
                    _ => None,
                })
                .collect(),
            time_steps: model.time_steps,
        }
    }
}

/// Result of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput<F> {
    /// Class scores f_c ∈ [0,1].
    pub scores: Vec<F>,
    /// Argmax with ties broken by lowest class index.
    pub prediction: usize,
    /// Time-averaged spikes of the tap layer (projection-head input).
    pub tap: Option<Vec<F>>,
}

struct ForwardControls<'a> {
    mode: ActivationMode,
    record: bool,
    counters: Option<&'a mut ActivityCounters>,
    capture: Option<usize>,
}

impl<F: Real> Model<F> {
    /// Inference forward in spike mode.
    pub fn forward(&self, x: &TimedTensor<F>) -> Result<ForwardOutput<F>, ModelError> {
        let (out, _, _) = self.drive(
            x,
            ForwardControls {
                mode: ActivationMode::Spike,
                record: false,
                counters: None,
                capture: None,
            },
        )?;
        Ok(out)
    }

    /// Forward recording the trace needed by [`Model::backward`].
    pub fn forward_traced(
        &self,
        x: &TimedTensor<F>,
        mode: ActivationMode,
    ) -> Result<(ForwardOutput<F>, Trace<F>), ModelError> {
        let (out, trace, _) = self.drive(
            x,
            ForwardControls {
                mode,
                record: true,
                counters: None,
                capture: None,
            },
        )?;
        Ok((out, trace.expect("trace recorded")))
    }

    /// Spike-mode forward accumulating activity counters.
    pub fn forward_counted(
        &self,
        x: &TimedTensor<F>,
        counters: &mut ActivityCounters,
    ) -> Result<ForwardOutput<F>, ModelError> {
        let (out, _, _) = self.drive(
            x,
            ForwardControls {
                mode: ActivationMode::Spike,
                record: false,
                counters: Some(counters),
                capture: None,
            },
        )?;
        Ok(out)
    }

    /// Spike-mode forward returning the named layer's output per time step.
    pub fn forward_captured(
        &self,
        x: &TimedTensor<F>,
        layer: usize,
    ) -> Result<(ForwardOutput<F>, TimedTensor<F>), ModelError> {
        if layer >= self.layers.len() {
            return Err(ModelError::Config(format!(
                "capture layer {layer} out of range ({} layers)",
                self.layers.len()
            )));
        }
        let (out, _, cap) = self.drive(
            x,
            ForwardControls {
                mode: ActivationMode::Spike,
                record: false,
                counters: None,
                capture: Some(layer),
            },
        )?;
        Ok((out, cap.expect("capture requested")))
    }

    fn drive(
        &self,
        x: &TimedTensor<F>,
        mut ctl: ForwardControls<'_>,
    ) -> Result<(ForwardOutput<F>, Option<Trace<F>>, Option<TimedTensor<F>>), ModelError> {
        let t_steps = self.time_steps;
        let in_len = self.input_shape.iter().product::<usize>();
        if x.steps() != t_steps || x.slice_len() != in_len {
            return Err(ModelError::Shape(format!(
                "input has {} steps of {} values; model expects {} steps of {}",
                x.steps(),
                x.slice_len(),
                t_steps,
                in_len
            )));
        }

        let const_input = (1..t_steps).all(|t| x.slice(t) == x.slice(0));
        let mut trace = ctl.record.then(|| Trace {
            mode: ctl.mode,
            steps: t_steps,
            const_input,
            layers: self
                .layers
                .iter()
                .map(|l| match &l.op {
                    Layer::Conv(_) => LayerTrace::Conv { inputs: Vec::new() },
                    Layer::Fc(_) => LayerTrace::Fc { inputs: Vec::new() },
                    Layer::Neuron(_) => LayerTrace::Neuron { v_pre: Vec::new() },
                    Layer::Attention(_) => LayerTrace::Attention {
                        inputs: Vec::new(),
                        f_avg: Vec::new(),
                        f_max: Vec::new(),
                        argmax: Vec::new(),
                        tw: Vec::new(),
                        m_mean: Vec::new(),
                    },
                    Layer::Pool(p) if p.kind == PoolKind::Max => {
                        LayerTrace::PoolMax { argmax: Vec::new() }
                    }
                    _ => LayerTrace::Inert,
                })
                .collect(),
        });

        // Membrane state per neuron layer.
        let mut membranes: Vec<Option<Vec<F>>> = self
            .layers
            .iter()
            .map(|l| match &l.op {
                Layer::Neuron(n) => Some(vec![F::zero(); n.size]),
                _ => None,
            })
            .collect();

        let vote_size = self.n_class * self.vote_group;
        let mut vote_acc = vec![F::zero(); vote_size];
        let tap_size = self.tap_layer.map(|li| self.layers[li].out_shape.len());
        let mut tap_acc = tap_size.map(|n| vec![F::zero(); n]);
        let mut conv1_cache: Option<Vec<F>> = None;
        let mut captured: Option<TimedTensor<F>> = ctl.capture.map(|li| {
            TimedTensor::zeros(t_steps, &self.layers[li].out_shape.dims())
        });

        for t in 0..t_steps {
            let mut act = Activ::Dense(x.slice(t).to_vec());
            for (li, layer) in self.layers.iter().enumerate() {
                if let Some(counters) = ctl.counters.as_deref_mut() {
                    counters.layer_input_active[li] += act.active_count();
                    counters.layer_input_elems[li] += layer.in_shape.len() as u64;
                }

                act = self.layer_forward(
                    li,
                    layer,
                    act,
                    t,
                    ctl.mode,
                    const_input,
                    &mut membranes,
                    &mut conv1_cache,
                    &mut vote_acc,
                    tap_acc.as_deref_mut(),
                    trace.as_mut(),
                    ctl.counters.as_deref_mut(),
                )?;

                if ctl.capture == Some(li) {
                    let dense = act.to_dense(layer.out_shape.len());
                    captured
                        .as_mut()
                        .expect("capture tensor allocated")
                        .slice_mut(t)
                        .copy_from_slice(&dense);
                }
            }
        }

        if let Some(counters) = ctl.counters.as_deref_mut() {
            counters.forwards += 1;
        }

        let norm = F::one() / F::from_usize(t_steps * self.vote_group).unwrap();
        let mut scores = vec![F::zero(); self.n_class];
        for (i, &acc) in vote_acc.iter().enumerate() {
            scores[i / self.vote_group] += acc;
        }
        for s in &mut scores {
            *s *= norm;
        }
        let prediction = argmax_first(&scores);

        let tap = tap_acc.map(|mut v| {
            let inv_t = F::one() / F::from_usize(t_steps).unwrap();
            for x in &mut v {
                *x *= inv_t;
            }
            v
        });

        Ok((
            ForwardOutput {
                scores,
                prediction,
                tap,
            },
            trace,
            captured,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_forward(
        &self,
        li: usize,
        layer: &ModelLayer<F>,
        act: Activ<F>,
        t: usize,
        mode: ActivationMode,
        const_input: bool,
        membranes: &mut [Option<Vec<F>>],
        conv1_cache: &mut Option<Vec<F>>,
        vote_acc: &mut [F],
        tap_acc: Option<&mut [F]>,
        trace: Option<&mut Trace<F>>,
        counters: Option<&mut ActivityCounters>,
    ) -> Result<Activ<F>, ModelError> {
        let in_len = layer.in_shape.len();
        let out_len = layer.out_shape.len();
        match &layer.op {
            Layer::Conv(conv) => {
                if let Some(tr) = trace {
                    if let LayerTrace::Conv { inputs } = &mut tr.layers[li] {
                        // Constant replicated input: keep one copy.
                        if !(li == 0 && tr.const_input && t > 0) {
                            inputs.push(TraceAct::of(&act));
                        }
                    }
                }
                if li == 0 && const_input {
                    if let Some(cache) = conv1_cache {
                        return Ok(Activ::Dense(cache.clone()));
                    }
                }
                let mut out = vec![F::zero(); out_len];
                let plane = conv.geom.out_h * conv.geom.out_w;
                match &act {
                    Activ::Dense(v) => {
                        fill_bias(&mut out, &conv.bias, plane);
                        conv_forward_dense(&conv.geom, &conv.weight, v, &mut out);
                    }
                    Activ::Spikes(idx) => {
                        fill_bias(&mut out, &conv.bias, plane);
                        conv_forward_spikes(&conv.geom, &conv.weight, idx, &mut out);
                    }
                    Activ::Scaled(idx, s) => {
                        conv_forward_spikes(&conv.geom, &conv.weight, idx, &mut out);
                        for (co, o) in out.chunks_exact_mut(plane).enumerate() {
                            for v in o {
                                *v = *v * *s + conv.bias[co];
                            }
                        }
                    }
                }
                if li == 0 && const_input {
                    *conv1_cache = Some(out.clone());
                }
                Ok(Activ::Dense(out))
            }
            Layer::Fc(fc) => {
                if let Some(tr) = trace {
                    if let LayerTrace::Fc { inputs } = &mut tr.layers[li] {
                        inputs.push(TraceAct::of(&act));
                    }
                }
                let mut out = vec![F::zero(); fc.n_out];
                match &act {
                    Activ::Dense(v) => fc_forward_dense(&fc.weight, &fc.bias, v, &mut out),
                    Activ::Spikes(idx) => {
                        fc_forward_spikes(&fc.weight, &fc.bias, idx, F::one(), &mut out)
                    }
                    Activ::Scaled(idx, s) => {
                        fc_forward_spikes(&fc.weight, &fc.bias, idx, *s, &mut out)
                    }
                }
                Ok(Activ::Dense(out))
            }
            Layer::Neuron(neuron) => {
                let Activ::Dense(input) = &act else {
                    return Err(ModelError::State(
                        "neuron layer received non-dense input".into(),
                    ));
                };
                if input.len() != in_len {
                    return Err(ModelError::Shape(format!(
                        "{}: input length {} != {}",
                        layer.name,
                        input.len(),
                        in_len
                    )));
                }
                let v = membranes[li].as_mut().expect("neuron state allocated");
                let p = &neuron.params;
                let mut v_pre_store = Vec::new();
                let out = match mode {
                    ActivationMode::Spike => {
                        let mut idx = Vec::new();
                        for (i, (vi, &cur)) in v.iter_mut().zip(input).enumerate() {
                            let v_pre = *vi * p.decay + p.resistance * cur;
                            if v_pre >= p.threshold {
                                idx.push(i as u32);
                                *vi = match p.reset {
                                    ResetMode::ToZero => F::zero(),
                                    ResetMode::SubtractThreshold => v_pre - p.threshold,
                                    ResetMode::None => v_pre,
                                };
                            } else {
                                *vi = v_pre;
                            }
                            v_pre_store.push(v_pre);
                        }
                        if let Some(counters) = counters {
                            if let Some(counts) = counters.neuron_spikes[li].as_mut() {
                                for &i in &idx {
                                    counts[i as usize] += 1;
                                }
                            }
                        }
                        if let Some(tap) = tap_acc {
                            if self.tap_layer == Some(li) {
                                for &i in &idx {
                                    tap[i as usize] += F::one();
                                }
                            }
                        }
                        Activ::Spikes(idx)
                    }
                    ActivationMode::Smooth => {
                        let mut s_out = vec![F::zero(); input.len()];
                        for ((vi, &cur), s) in v.iter_mut().zip(input).zip(&mut s_out) {
                            let v_pre = *vi * p.decay + p.resistance * cur;
                            let s_val = surrogate_primitive(v_pre - p.threshold, &self.surrogate);
                            *s = s_val;
                            *vi = match p.reset {
                                ResetMode::ToZero => v_pre * (F::one() - s_val),
                                ResetMode::SubtractThreshold => v_pre - p.threshold * s_val,
                                ResetMode::None => v_pre,
                            };
                            v_pre_store.push(v_pre);
                        }
                        if let Some(tap) = tap_acc {
                            if self.tap_layer == Some(li) {
                                for (acc, &s) in tap.iter_mut().zip(&s_out) {
                                    *acc += s;
                                }
                            }
                        }
                        Activ::Dense(s_out)
                    }
                };
                if let Some(tr) = trace {
                    if let LayerTrace::Neuron { v_pre } = &mut tr.layers[li] {
                        v_pre.push(v_pre_store);
                    }
                }
                Ok(out)
            }
            Layer::Attention(attn) => {
                let Shape::Spatial(c, h, w) = layer.in_shape else {
                    unreachable!("attention input is spatial by construction");
                };
                let dense = act.to_dense(in_len);
                let win = &attn.win;
                let nw = win.windows();
                let mut f_avg = vec![F::zero(); c * nw];
                let mut f_max = vec![F::zero(); c * nw];
                let mut argmax = vec![0u32; c * nw];
                for ch in 0..c {
                    let plane = &dense[ch * h * w..(ch + 1) * h * w];
                    window_avg(win, plane, &mut f_avg[ch * nw..(ch + 1) * nw]);
                    window_max(
                        win,
                        plane,
                        &mut f_max[ch * nw..(ch + 1) * nw],
                        &mut argmax[ch * nw..(ch + 1) * nw],
                    );
                    // Make argmax global over [C,H,W].
                    for a in &mut argmax[ch * nw..(ch + 1) * nw] {
                        *a += (ch * h * w) as u32;
                    }
                }
                let mut m_sum = F::zero();
                for (&fa, &fm) in f_avg.iter().zip(&f_max) {
                    m_sum += attn.alpha * fa + attn.beta * fm;
                }
                let m_mean = m_sum / F::from_usize(c * nw).unwrap();
                let tw = crate::engine::sigmoid(attn.gate_w * m_mean + attn.gate_b);
                let gain = F::one() + tw;

                if let Some(tr) = trace {
                    if let LayerTrace::Attention {
                        inputs,
                        f_avg: fa,
                        f_max: fm,
                        argmax: am,
                        tw: tws,
                        m_mean: mms,
                    } = &mut tr.layers[li]
                    {
                        inputs.push(TraceAct::of(&act));
                        fa.push(f_avg);
                        fm.push(f_max);
                        am.push(argmax);
                        tws.push(tw);
                        mms.push(m_mean);
                    }
                }

                Ok(match act {
                    Activ::Dense(v) => {
                        Activ::Dense(v.into_iter().map(|x| x * gain).collect())
                    }
                    Activ::Spikes(idx) => Activ::Scaled(idx, gain),
                    Activ::Scaled(idx, s) => Activ::Scaled(idx, s * gain),
                })
            }
            Layer::Pool(pool) => {
                let Shape::Spatial(c, h, w) = layer.in_shape else {
                    unreachable!("pool input is spatial by construction");
                };
                let win = &pool.win;
                let nw = win.windows();
                match pool.kind {
                    PoolKind::Max => {
                        let dense = act.to_dense(in_len);
                        let mut out = vec![F::zero(); c * nw];
                        let mut argmax = vec![0u32; c * nw];
                        for ch in 0..c {
                            let plane = &dense[ch * h * w..(ch + 1) * h * w];
                            window_max(
                                win,
                                plane,
                                &mut out[ch * nw..(ch + 1) * nw],
                                &mut argmax[ch * nw..(ch + 1) * nw],
                            );
                            for a in &mut argmax[ch * nw..(ch + 1) * nw] {
                                *a += (ch * h * w) as u32;
                            }
                        }
                        if let Some(tr) = trace {
                            if let LayerTrace::PoolMax { argmax: am } = &mut tr.layers[li] {
                                am.push(argmax);
                            }
                        }
                        // Keep the sparse representation when the input was sparse.
                        Ok(match act {
                            Activ::Dense(_) => Activ::Dense(out),
                            Activ::Spikes(_) => Activ::Spikes(
                                out.iter()
                                    .enumerate()
                                    .filter(|(_, &v)| v != F::zero())
                                    .map(|(i, _)| i as u32)
                                    .collect(),
                            ),
                            Activ::Scaled(_, s) => Activ::Scaled(
                                out.iter()
                                    .enumerate()
                                    .filter(|(_, &v)| v != F::zero())
                                    .map(|(i, _)| i as u32)
                                    .collect(),
                                s,
                            ),
                        })
                    }
                    PoolKind::Avg => {
                        let dense = act.to_dense(in_len);
                        let mut out = vec![F::zero(); c * nw];
                        for ch in 0..c {
                            let plane = &dense[ch * h * w..(ch + 1) * h * w];
                            window_avg(win, plane, &mut out[ch * nw..(ch + 1) * nw]);
                        }
                        Ok(Activ::Dense(out))
                    }
                }
            }
            Layer::Flatten => Ok(act),
            Layer::Vote => {
                match &act {
                    Activ::Spikes(idx) => {
                        for &i in idx {
                            vote_acc[i as usize] += F::one();
                        }
                    }
                    Activ::Dense(v) => {
                        for (acc, &x) in vote_acc.iter_mut().zip(v) {
                            *acc += x;
                        }
                    }
                    Activ::Scaled(idx, s) => {
                        for &i in idx {
                            vote_acc[i as usize] += *s;
                        }
                    }
                }
                Ok(Activ::Dense(Vec::new()))
            }
        }
    }
}

/// First index of the maximal value.
pub fn argmax_first<F: Real>(v: &[F]) -> usize {
    let mut best = 0usize;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Backward (BPTT)
// ---------------------------------------------------------------------------

impl<F: Real> Model<F> {
    /// Accumulates parameter gradients for one sample into `grads`.
    ///
    /// `d_scores` is ∂L/∂scores; `d_tap` (if the model has a tap layer and the
    /// loss uses it) is ∂L/∂tap where tap is the time-averaged tap-layer
    /// output. Gradients flow through the spike nonlinearity via the
    /// surrogate; in spike mode the reset branch is detached, in smooth mode
    /// it is differentiated exactly.
    pub fn backward(
        &self,
        trace: &Trace<F>,
        d_scores: &[F],
        d_tap: Option<&[F]>,
        grads: &mut GradBuffer<F>,
    ) -> Result<(), ModelError> {
        if d_scores.len() != self.n_class {
            return Err(ModelError::Shape(format!(
                "d_scores has {} entries, model has {} classes",
                d_scores.len(),
                self.n_class
            )));
        }
        if trace.layers.len() != self.layers.len() || trace.steps != self.time_steps {
            return Err(ModelError::State(
                "trace does not match this model".into(),
            ));
        }
        let t_steps = self.time_steps;
        let inv_t = F::one() / F::from_usize(t_steps).unwrap();

        // Map layer index -> grad slot base index.
        let entries = self.param_entries();
        if grads.slots.len() != entries.len() {
            return Err(ModelError::State("gradient buffer mismatch".into()));
        }
        let slot_of = |layer: usize, kind: ParamKind| -> usize {
            entries
                .iter()
                .position(|e| e.layer == layer && e.kind == kind)
                .expect("param slot exists")
        };

        // Vote-layer gradient, identical at each step.
        let vote_size = self.n_class * self.vote_group;
        let vote_norm = F::one() / F::from_usize(t_steps * self.vote_group).unwrap();
        let d_vote: Vec<F> = (0..vote_size)
            .map(|i| d_scores[i / self.vote_group] * vote_norm)
            .collect();

        let d_tap_step: Option<Vec<F>> = match (d_tap, self.tap_layer) {
            (Some(dt), Some(li)) => {
                let n = self.layers[li].out_shape.len();
                if dt.len() != n {
                    return Err(ModelError::Shape(format!(
                        "d_tap has {} entries, tap layer emits {n}",
                        dt.len()
                    )));
                }
                Some(dt.iter().map(|&d| d * inv_t).collect())
            }
            (Some(_), None) => {
                return Err(ModelError::State(
                    "loss provided tap gradients but the model has no tap layer".into(),
                ))
            }
            _ => None,
        };

        let mut dv_carry: Vec<Option<Vec<F>>> = self
            .layers
            .iter()
            .map(|l| match &l.op {
                Layer::Neuron(n) => Some(vec![F::zero(); n.size]),
                _ => None,
            })
            .collect();
        // Summed upstream gradient for a constant-input first conv.
        let mut conv1_dout_sum: Option<Vec<F>> = None;

        for t in (0..t_steps).rev() {
            let mut dcur: Vec<F> = Vec::new();
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                match (&layer.op, &trace.layers[li]) {
                    (Layer::Vote, _) => {
                        dcur = d_vote.clone();
                    }
                    (Layer::Flatten, _) => {}
                    (Layer::Neuron(neuron), LayerTrace::Neuron { v_pre }) => {
                        if let Some(dt) = &d_tap_step {
                            if self.tap_layer == Some(li) {
                                for (d, &x) in dcur.iter_mut().zip(dt) {
                                    *d += x;
                                }
                            }
                        }
                        let v_pre_t = &v_pre[t];
                        let carry = dv_carry[li].as_mut().expect("carry allocated");
                        let p = &neuron.params;
                        for i in 0..neuron.size {
                            let x = v_pre_t[i] - p.threshold;
                            let s_grad = surrogate_grad(x, &self.surrogate);
                            let dpost_dpre = match trace.mode {
                                ActivationMode::Spike => {
                                    // Detached reset: the spike is a constant.
                                    let fired = v_pre_t[i] >= p.threshold;
                                    match p.reset {
                                        ResetMode::ToZero if fired => F::zero(),
                                        _ => F::one(),
                                    }
                                }
                                ActivationMode::Smooth => {
                                    let s = surrogate_primitive(x, &self.surrogate);
                                    match p.reset {
                                        ResetMode::ToZero => F::one() - s - v_pre_t[i] * s_grad,
                                        ResetMode::SubtractThreshold => {
                                            F::one() - p.threshold * s_grad
                                        }
                                        ResetMode::None => F::one(),
                                    }
                                }
                            };
                            let g = dcur[i] * s_grad + carry[i] * dpost_dpre;
                            dcur[i] = g * p.resistance;
                            carry[i] = g * p.decay;
                        }
                    }
                    (Layer::Fc(fc), LayerTrace::Fc { inputs }) => {
                        let wslot = slot_of(li, ParamKind::Weight);
                        let bslot = slot_of(li, ParamKind::Bias);
                        // Two sequential mutable borrows of different slots.
                        let (gw, gb) = two_slots(&mut grads.slots, wslot, bslot);
                        match &inputs[t] {
                            TraceAct::Dense(x) => fc_wgrad_dense(x, &dcur, gw, gb),
                            TraceAct::Spikes(idx) => {
                                fc_wgrad_spikes(idx, F::one(), &dcur, gw, gb)
                            }
                            TraceAct::Scaled(idx, s) => fc_wgrad_spikes(idx, *s, &dcur, gw, gb),
                        }
                        if li > 0 {
                            let mut din = vec![F::zero(); fc.n_in];
                            fc_input_grad(&fc.weight, &dcur, &mut din);
                            dcur = din;
                        }
                    }
                    (Layer::Conv(conv), LayerTrace::Conv { inputs }) => {
                        if li == 0 && trace.const_input {
                            // Defer the weight gradient: sum upstream grads.
                            match &mut conv1_dout_sum {
                                Some(sum) => {
                                    for (s, &d) in sum.iter_mut().zip(&dcur) {
                                        *s += d;
                                    }
                                }
                                None => conv1_dout_sum = Some(dcur.clone()),
                            }
                            continue;
                        }
                        let wslot = slot_of(li, ParamKind::Weight);
                        let bslot = slot_of(li, ParamKind::Bias);
                        let (gw, gb) = two_slots(&mut grads.slots, wslot, bslot);
                        match &inputs[t] {

                            TraceAct::Dense(x) => conv_wgrad_dense(&conv.geom, x, &dcur, gw, gb),
                            TraceAct::Spikes(idx) => {
                                conv_wgrad_spikes(&conv.geom, idx, F::one(), &dcur, gw, gb)
                            }
                            TraceAct::Scaled(idx, s) => {
                                conv_wgrad_spikes(&conv.geom, idx, *s, &dcur, gw, gb)
                            }
                        }
                        if li > 0 {
                            let mut din = vec![F::zero(); conv.geom.in_len()];
                            conv_input_grad(&conv.geom, &conv.weight, &dcur, &mut din);
                            dcur = din;
                        }
                    }
                    (Layer::Attention(attn), LayerTrace::Attention {
                        inputs,
                        f_avg,
                        f_max,
                        argmax,
                        tw,
                        m_mean,
                    }) => {
                        let in_len = layer.in_shape.len();
                        let n_win_total = attn.channels * attn.win.windows();
                        let tw_t = tw[t];
                        let gain = F::one() + tw_t;

                        // dL/d tw = Σ dout ⊙ X.
                        let d_tw = match &inputs[t] {
                            TraceAct::Dense(x) => {
                                let mut acc = F::zero();
                                for (&d, &xv) in dcur.iter().zip(x) {
                                    acc += d * xv;
                                }
                                acc
                            }
                            TraceAct::Spikes(idx) => {
                                let mut acc = F::zero();
                                for &i in idx {
                                    acc += dcur[i as usize];
                                }
                                acc
                            }
                            TraceAct::Scaled(idx, s) => {
                                let mut acc = F::zero();
                                for &i in idx {
                                    acc += dcur[i as usize];
                                }
                                acc * *s
                            }
                        };
                        let d_u = d_tw * tw_t * (F::one() - tw_t);
                        let d_mmean = d_u * attn.gate_w;
                        let d_m = d_mmean / F::from_usize(n_win_total).unwrap();

                        let (mut fa_sum, mut fm_sum) = (F::zero(), F::zero());
                        for (&fa, &fm) in f_avg[t].iter().zip(&f_max[t]) {
                            fa_sum += fa;
                            fm_sum += fm;
                        }
                        let a_slot = slot_of(li, ParamKind::Alpha);
                        let b_slot = slot_of(li, ParamKind::Beta);
                        let gw_slot = slot_of(li, ParamKind::GateW);
                        let gb_slot = slot_of(li, ParamKind::GateB);
                        grads.slots[a_slot][0] += d_m * fa_sum;
                        grads.slots[b_slot][0] += d_m * fm_sum;
                        grads.slots[gw_slot][0] += d_u * m_mean[t];
                        grads.slots[gb_slot][0] += d_u;

                        // dL/dX = dout·gain + window terms from M.
                        let mut din = vec![F::zero(); in_len];
                        for (d, &up) in din.iter_mut().zip(dcur.iter()) {
                            *d = up * gain;
                        }
                        let Shape::Spatial(_, h, w) = layer.in_shape else {
                            unreachable!()
                        };
                        let win = &attn.win;
                        let kk = F::from_usize(win.kh * win.kw).unwrap();
                        let avg_term = d_m * attn.alpha / kk;
                        let max_term = d_m * attn.beta;
                        for ch in 0..attn.channels {
                            for wy in 0..win.n_h {
                                for wx in 0..win.n_w {
                                    let (y0, x0) = (wy * win.sh, wx * win.sw);
                                    for dy in 0..win.kh {
                                        let row = ch * h * w + (y0 + dy) * w + x0;
                                        for dx in 0..win.kw {
                                            din[row + dx] += avg_term;
                                        }
                                    }
                                }
                            }
                            for &am in &argmax[t]
                                [ch * win.windows()..(ch + 1) * win.windows()]
                            {
                                din[am as usize] += max_term;
                            }
                        }
                        dcur = din;
                    }
                    (Layer::Pool(pool), tr) => {
                        let in_len = layer.in_shape.len();
                        let mut din = vec![F::zero(); in_len];
                        match (pool.kind, tr) {
                            (PoolKind::Max, LayerTrace::PoolMax { argmax }) => {
                                for (wi, &am) in argmax[t].iter().enumerate() {
                                    din[am as usize] += dcur[wi];
                                }
                            }
                            (PoolKind::Avg, _) => {
                                let Shape::Spatial(_, h, w) = layer.in_shape else {
                                    unreachable!()
                                };
                                let win = &pool.win;
                                let inv = F::one() / F::from_usize(win.kh * win.kw).unwrap();
                                let nw = win.windows();
                                for ch in 0..pool.channels {
                                    for wy in 0..win.n_h {
                                        for wx in 0..win.n_w {
                                            let d = dcur[ch * nw + wy * win.n_w + wx] * inv;
                                            let (y0, x0) = (wy * win.sh, wx * win.sw);
                                            for dy in 0..win.kh {
                                                let row = ch * h * w + (y0 + dy) * w + x0;
                                                for dx in 0..win.kw {
                                                    din[row + dx] += d;
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                            _ => return Err(ModelError::State("trace/layer mismatch".into())),
                        }
                        dcur = din;
                    }
                    _ => return Err(ModelError::State("trace/layer mismatch".into())),
                }
            }
        }

        // Deferred first-conv weight gradient over the summed upstream grads.
        if let Some(dout_sum) = conv1_dout_sum {
            let Layer::Conv(conv) = &self.layers[0].op else {
                unreachable!("conv1_dout_sum only set for a first conv layer");
            };
            let LayerTrace::Conv { inputs } = &trace.layers[0] else {
                unreachable!()
            };
            let wslot = slot_of(0, ParamKind::Weight);
            let bslot = slot_of(0, ParamKind::Bias);
            let (gw, gb) = two_slots(&mut grads.slots, wslot, bslot);
            match &inputs[0] {
                TraceAct::Dense(x) => conv_wgrad_dense(&conv.geom, x, &dout_sum, gw, gb),
                TraceAct::Spikes(idx) => {
                    conv_wgrad_spikes(&conv.geom, idx, F::one(), &dout_sum, gw, gb)
                }
                TraceAct::Scaled(idx, s) => {
                    conv_wgrad_spikes(&conv.geom, idx, *s, &dout_sum, gw, gb)
                }
            }
        }

        Ok(())
    }
}

/// Disjoint mutable borrows of two gradient slots.
fn two_slots<F>(slots: &mut [Vec<F>], a: usize, b: usize) -> (&mut [F], &mut [F]) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = slots.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = slots.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

/// Records one forward pass and hands out its gradients; calling
/// [`GradTape::backward`] without a recorded forward is a state error.
#[derive(Debug, Default)]
pub struct GradTape<F> {
    recorded: Option<Trace<F>>,
}

impl<F: Real> GradTape<F> {
    pub fn new() -> Self {
        GradTape { recorded: None }
    }

    pub fn forward(
        &mut self,
        model: &Model<F>,
        x: &TimedTensor<F>,
        mode: ActivationMode,
    ) -> Result<ForwardOutput<F>, ModelError> {
        let (out, trace) = model.forward_traced(x, mode)?;
        self.recorded = Some(trace);
        Ok(out)
    }

    pub fn backward(
        &mut self,
        model: &Model<F>,
        d_scores: &[F],
        d_tap: Option<&[F]>,
        grads: &mut GradBuffer<F>,
    ) -> Result<(), ModelError> {
        let trace = self.recorded.take().ok_or_else(|| {
            ModelError::State("backward called before any recorded forward".into())
        })?;
        model.backward(&trace, d_scores, d_tap, grads)
    }
}
