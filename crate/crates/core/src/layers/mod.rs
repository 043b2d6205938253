//! Network layers: spiking convolutions, FC layers, temporal attention,
//! pooling, and population voting, plus the [`Model`] container that chains
//! them with shape/type checking and differentiates the whole stack with
//! BPTT and surrogate gradients.
//!
//! Standalone functional entry points ([`spiking_conv_forward`],
//! [`temporal_attention_forward`], [`voting_forward`]) operate on spike
//! tensors directly and are primarily useful for testing and for composing
//! custom stacks; training goes through [`build_model`] and [`Model`].

mod kernels;
mod model;

pub use kernels::{ConvGeom, WindowGeom};
pub use model::{
    argmax_first, build_model, ActivationMode, ActivityCounters, AttentionLayer, ConvLayer,
    FcLayer, ForwardOutput, GradBuffer, GradTape, Layer, LayerSpec, Model, ModelConfig,
    ModelError, ModelLayer, NeuronLayer, ParamEntry, ParamKind, PoolKind, PoolLayer, ResetConfig,
    Shape, SurrogateConfig, SurrogateKindConfig, Trace, ValueKind,
};

use crate::scalar::Real;
use crate::tensor::{SpikeTensor, TimedTensor};

/// Event-driven convolution over a binary spike tensor: for every time step,
/// `out[t] = bias + Σ_{active i} w[i, ·]`, accumulating only at active
/// positions. Bitwise-identical to a dense convolution of the same slices.
pub fn spiking_conv_forward<F: Real>(
    spikes: &SpikeTensor<F>,
    conv: &ConvLayer<F>,
) -> Result<TimedTensor<F>, ModelError> {
    let x = &spikes.0;
    if !spikes.is_binary() {
        return Err(ModelError::Shape(
            "spiking_conv_forward: input tensor is not binary".into(),
        ));
    }
    let geom = &conv.geom;
    if x.slice_len() != geom.in_len() {
        return Err(ModelError::Shape(format!(
            "spiking_conv_forward: slice has {} values, conv expects {}",
            x.slice_len(),
            geom.in_len()
        )));
    }
    let mut out = TimedTensor::zeros(x.steps(), &[geom.out_c, geom.out_h, geom.out_w]);
    let plane = geom.out_h * geom.out_w;
    for t in 0..x.steps() {
        let idx: Vec<u32> = x
            .slice(t)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != F::zero())
            .map(|(i, _)| i as u32)
            .collect();
        let o = out.slice_mut(t);
        kernels::fill_bias(o, &conv.bias, plane);
        kernels::conv_forward_spikes(geom, &conv.weight, &idx, o);
    }
    Ok(out)
}

/// Temporal attention over a timed tensor: per step, per-channel k×k windows
/// produce average and max features, their weighted mean is squashed through
/// a scalar gate, and the slice is rescaled by `1 + gate`.
pub fn temporal_attention_forward<F: Real>(
    x: &TimedTensor<F>,
    attn: &AttentionLayer<F>,
) -> Result<TimedTensor<F>, ModelError> {
    let c = attn.channels;
    let win = &attn.win;
    let (h, w) = (win.h, win.w);
    if x.slice_len() != c * h * w {
        return Err(ModelError::Shape(format!(
            "temporal_attention_forward: slice has {} values, expected {}x{}x{}",
            x.slice_len(),
            c,
            h,
            w
        )));
    }
    let nw = win.windows();
    let mut out = TimedTensor::zeros(x.steps(), &[c, h, w]);
    let mut f_avg = vec![F::zero(); nw];
    let mut f_max = vec![F::zero(); nw];
    let mut argmax = vec![0u32; nw];
    for t in 0..x.steps() {
        let slice = x.slice(t);
        let mut m_sum = F::zero();
        for ch in 0..c {
            let plane = &slice[ch * h * w..(ch + 1) * h * w];
            kernels::window_avg(win, plane, &mut f_avg);
            kernels::window_max(win, plane, &mut f_max, &mut argmax);
            for (&fa, &fm) in f_avg.iter().zip(&f_max) {
                m_sum += attn.alpha * fa + attn.beta * fm;
            }
        }
        let m_mean = m_sum / F::from_usize(c * nw).unwrap();
        let tw = crate::engine::sigmoid(attn.gate_w * m_mean + attn.gate_b);
        let gain = F::one() + tw;
        for (o, &v) in out.slice_mut(t).iter_mut().zip(slice) {
            *o = v * gain;
        }
    }
    Ok(out)
}

/// Population voting: neurons are split into contiguous groups of
/// `group_size` per class and the class score is the mean firing rate of its
/// group, `f_c = (Σ_t Σ_g s[t, c·G+g]) / (T·G)` ∈ [0, 1].
pub fn voting_forward<F: Real>(
    spikes: &SpikeTensor<F>,
    group_size: usize,
) -> Result<Vec<F>, ModelError> {
    let x = &spikes.0;
    if group_size == 0 {
        return Err(ModelError::Shape("voting_forward: group_size is 0".into()));
    }
    let n = x.slice_len();
    if n % group_size != 0 {
        return Err(ModelError::Shape(format!(
            "voting_forward: {n} neurons not divisible by group_size {group_size}"
        )));
    }
    if !spikes.is_binary() {
        return Err(ModelError::Shape(
            "voting_forward: input tensor is not binary".into(),
        ));
    }
    let n_class = n / group_size;
    let mut scores = vec![F::zero(); n_class];
    for t in 0..x.steps() {
        for (i, &s) in x.slice(t).iter().enumerate() {
            scores[i / group_size] += s;
        }
    }
    let norm = F::one() / F::from_usize(x.steps() * group_size).unwrap();
    for s in &mut scores {
        *s *= norm;
    }
    Ok(scores)
}
