//! Firing-rate instrumentation and the AC/MAC energy model.
//!
//! Synaptic-operation accounting follows the 45 nm convention: one
//! accumulate (AC) costs 0.9 pJ, one multiply-accumulate (MAC) 4.6 pJ.
//! Layers fed binary or event activations are AC-counted (each active input
//! element feeds `fan-out` accumulations: `kh·kw·out_c` for a convolution,
//! `out_features` for an FC layer — the border-free uniform fan-out, exact
//! for stride-1 same-padded convolutions). Layers fed real-valued currents
//! (the first convolution consuming replicated CSI, anything after an
//! average-pool) are MAC-counted over every input element. The temporal
//! attention gate's arithmetic (window pooling, blend, mean, affine+sigmoid)
//! is MAC-counted; its output rescale costs one factored MAC on sparse
//! inputs and one per element on dense inputs. Max-pool comparisons, neuron
//! state updates, flatten, voting, and bias adds are charged zero energy.
//!
//! Two counting modes agree bit-for-bit: [`count_dynamic`] consumes observed
//! [`ActivityCounters`], [`count_static`] reconstructs the same counts from
//! per-layer mean input rates. An honest total includes MACs; the
//! ACs-only figure reproduces the common SNN-literature convention of
//! reporting accumulation energy alone.

use crate::layers::{ActivityCounters, Layer, Model, PoolKind, ValueKind};
use crate::scalar::Real;
use crate::tensor::SpikeTensor;
use thiserror::Error;

/// Energy per accumulate operation, picojoules.
pub const AC_PJ: f64 = 0.9;
/// Energy per multiply-accumulate operation, picojoules.
pub const MAC_PJ: f64 = 4.6;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("invalid spikes: {0}")]
    InvalidSpikes(String),
    #[error("invalid rate: {0}")]
    InvalidRate(String),
    #[error("state error: {0}")]
    State(String),
}

/// Mean firing rate of a binary spike record `[T, M]`:
/// `r = (1/M) Σᵢ Nᵢ/T` where `Nᵢ` is neuron i's spike count.
pub fn firing_rate<F: Real>(spikes: &SpikeTensor<F>) -> Result<f64, TelemetryError> {
    if !spikes.is_binary() {
        return Err(TelemetryError::InvalidSpikes(
            "record contains values other than 0 and 1".into(),
        ));
    }
    let x = &spikes.0;
    let (t, m) = (x.steps(), x.slice_len());
    if t == 0 || m == 0 {
        return Err(TelemetryError::InvalidSpikes(
            "record has no steps or no neurons".into(),
        ));
    }
    Ok(spikes.spike_count() as f64 / (t as f64 * m as f64))
}

/// Per-layer firing statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRateStat {
    pub name: String,
    /// Mean rate over neurons, ∈ [0,1].
    pub mean: f64,
    /// Population standard deviation of per-neuron rates.
    pub std: f64,
}

/// Firing rates of every spiking layer, from instrumented forwards.
#[derive(Debug, Clone, PartialEq)]
pub struct FiringRateReport {
    pub layers: Vec<LayerRateStat>,
    /// Forward passes the statistics cover.
    pub samples: u64,
}

/// Computes per-spiking-layer firing rates from accumulated counters.
pub fn firing_rates_from_counters<F: Real>(
    model: &Model<F>,
    counters: &ActivityCounters,
) -> Result<FiringRateReport, TelemetryError> {
    check_counters(model, counters)?;
    let denom = (counters.time_steps as u64 * counters.forwards) as f64;
    let mut layers = Vec::new();
    for (li, l) in model.layers.iter().enumerate() {
        let Some(counts) = &counters.neuron_spikes[li] else {
            continue;
        };
        let rates: Vec<f64> = counts.iter().map(|&c| c as f64 / denom).collect();
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        let var = rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / rates.len() as f64;
        layers.push(LayerRateStat {
            name: l.name.clone(),
            mean,
            std: var.sqrt(),
        });
    }
    Ok(FiringRateReport {
        layers,
        samples: counters.forwards,
    })
}

/// Per-layer mean input rates (active fraction per step), aligned with model
/// layers; feeding these to [`count_static`] reproduces [`count_dynamic`]
/// exactly.
pub fn input_rates_from_counters<F: Real>(
    model: &Model<F>,
    counters: &ActivityCounters,
) -> Result<Vec<f64>, TelemetryError> {
    check_counters(model, counters)?;
    Ok(counters
        .layer_input_active
        .iter()
        .zip(&counters.layer_input_elems)
        .map(|(&a, &e)| if e == 0 { 0.0 } else { a as f64 / e as f64 })
        .collect())
}

fn check_counters<F: Real>(
    model: &Model<F>,
    counters: &ActivityCounters,
) -> Result<(), TelemetryError> {
    if counters.forwards == 0 {
        return Err(TelemetryError::State(
            "no instrumented forward pass recorded".into(),
        ));
    }
    if counters.layer_input_active.len() != model.layers.len()
        || counters.neuron_spikes.len() != model.layers.len()
    {
        return Err(TelemetryError::State(format!(
            "counters cover {} layers, model has {}",
            counters.layer_input_active.len(),
            model.layers.len()
        )));
    }
    if counters.time_steps != model.time_steps {
        return Err(TelemetryError::State(format!(
            "counters recorded {} time steps, model runs {}",
            counters.time_steps, model.time_steps
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMode {
    Dynamic,
    Static,
}

/// One layer's operation counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerEnergy {
    pub name: String,
    pub acs: u64,
    pub macs: u64,
}

/// Operation counts and derived energy for a batch of forwards.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub algorithm: String,
    pub mode: CountMode,
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerEnergy>,
    pub samples: u64,
    pub params: u64,
    /// Classification accuracy on the measured set, if known.
    pub accuracy: Option<f64>,
}

impl EnergyReport {
    pub fn total_acs(&self) -> u64 {
        self.layers.iter().map(|l| l.acs).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    /// Honest energy: `0.9·ACs + 4.6·MACs` picojoules, all operations.
    pub fn energy_pj(&self) -> f64 {
        AC_PJ * self.total_acs() as f64 + MAC_PJ * self.total_macs() as f64
    }

    /// Accumulation energy alone (the common SNN-reporting convention).
    pub fn energy_pj_acs_only(&self) -> f64 {
        AC_PJ * self.total_acs() as f64
    }

    pub fn energy_pj_per_sample(&self) -> f64 {
        self.energy_pj() / self.samples.max(1) as f64
    }

    pub fn energy_pj_acs_only_per_sample(&self) -> f64 {
        self.energy_pj_acs_only() / self.samples.max(1) as f64
    }
}

/// Uniform per-active-element fan-out of an energy-bearing layer.
fn layer_fanout<F: Real>(layer: &Layer<F>) -> Option<u64> {
    match layer {
        Layer::Conv(c) => Some(c.geom.fanout()),
        Layer::Fc(f) => Some(f.n_out as u64),
        _ => None,
    }
}

/// Activity-independent MAC cost of the attention gate, per time step.
fn attention_macs_per_step<F: Real>(
    attn: &crate::layers::AttentionLayer<F>,
    in_kind: ValueKind,
    in_elems: u64,
) -> u64 {
    let n_win = (attn.channels * attn.win.windows()) as u64;
    let kk = (attn.win.kh * attn.win.kw) as u64;
    // Window pooling (kk per window), blend (2), mean (1) → n_win·(kk+3);
    // gate affine + sigmoid → 2; output rescale: factored scalar on sparse
    // inputs, per-element on dense inputs.
    let rescale = match in_kind {
        ValueKind::Current => in_elems,
        _ => 1,
    };
    n_win * (kk + 3) + 2 + rescale
}

/// Counts operations from observed spike activity.
pub fn count_dynamic<F: Real>(
    model: &Model<F>,
    counters: &ActivityCounters,
) -> Result<EnergyReport, TelemetryError> {
    check_counters(model, counters)?;
    let steps = (model.time_steps as u64) * counters.forwards;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (li, l) in model.layers.iter().enumerate() {
        let (mut acs, mut macs) = (0u64, 0u64);
        let active = counters.layer_input_active[li];
        let elems = counters.layer_input_elems[li];
        match &l.op {
            Layer::Conv(_) | Layer::Fc(_) => {
                let fanout = layer_fanout(&l.op).unwrap();
                match l.in_kind {
                    ValueKind::Current => macs = elems * fanout,
                    ValueKind::Spike | ValueKind::Event => acs = active * fanout,
                }
            }
            Layer::Attention(a) => {
                macs = steps * attention_macs_per_step(a, l.in_kind, l.in_shape.len() as u64);
            }
            Layer::Pool(p) => {
                if p.kind == PoolKind::Avg {
                    acs = active;
                }
            }
            Layer::Neuron(_) | Layer::Flatten | Layer::Vote => {}
        }
        layers.push(LayerEnergy {
            name: l.name.clone(),
            acs,
            macs,
        });
    }
    Ok(EnergyReport {
        algorithm: "wi-spike-snn".into(),
        mode: CountMode::Dynamic,
        input_shape: model.input_shape,
        layers,
        samples: counters.forwards,
        params: model.param_count() as u64,
        accuracy: None,
    })
}

/// Counts operations from per-layer mean input rates: for an AC layer,
/// `ACs = round(rate_in · T · M_in · samples) · fan-out`. With exact measured
/// rates this reproduces [`count_dynamic`] bit-for-bit.
pub fn count_static<F: Real>(
    model: &Model<F>,
    rates: &[f64],
    samples: u64,
) -> Result<EnergyReport, TelemetryError> {
    if rates.len() != model.layers.len() {
        return Err(TelemetryError::State(format!(
            "{} rates for {} layers",
            rates.len(),
            model.layers.len()
        )));
    }
    if samples == 0 {
        return Err(TelemetryError::State("samples must be ≥ 1".into()));
    }
    for (li, &r) in rates.iter().enumerate() {
        if !(0.0..=1.0).contains(&r) {
            return Err(TelemetryError::InvalidRate(format!(
                "layer {} ({}) input rate {r} outside [0, 1]",
                li, model.layers[li].name
            )));
        }
    }
    let t = model.time_steps as u64;
    let steps = t * samples;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (li, l) in model.layers.iter().enumerate() {
        let m_in = l.in_shape.len() as u64;
        let elems = m_in * steps;
        let active = (rates[li] * elems as f64).round() as u64;
        let (mut acs, mut macs) = (0u64, 0u64);
        match &l.op {
            Layer::Conv(_) | Layer::Fc(_) => {
                let fanout = layer_fanout(&l.op).unwrap();
                match l.in_kind {
                    ValueKind::Current => macs = elems * fanout,
                    ValueKind::Spike | ValueKind::Event => acs = active * fanout,
                }
            }
            Layer::Attention(a) => {
                macs = steps * attention_macs_per_step(a, l.in_kind, m_in);
            }
            Layer::Pool(p) => {
                if p.kind == PoolKind::Avg {
                    acs = active;
                }
            }
            Layer::Neuron(_) | Layer::Flatten | Layer::Vote => {}
        }
        layers.push(LayerEnergy {
            name: l.name.clone(),
            acs,
            macs,
        });
    }
    Ok(EnergyReport {
        algorithm: "wi-spike-snn".into(),
        mode: CountMode::Static,
        input_shape: model.input_shape,
        layers,
        samples,
        params: model.param_count() as u64,
        accuracy: None,
    })
}

// ---------------------------------------------------------------------------
// Dense baseline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BaselineLayer {
    pub name: String,
    pub macs_per_sample: u64,
    pub params: u64,
}

/// A conventional CNN comparator: the spiking model's conv/pool/FC skeleton
/// with neurons replaced by pointwise activations, attention dropped, the
/// head emitting `n_class` logits, and a single (non-temporal) pass per
/// sample. Only its operation counts matter, so no weights are materialized.
#[derive(Debug, Clone)]
pub struct DenseBaseline {
    pub input_shape: [usize; 3],
    pub n_class: usize,
    pub layers: Vec<BaselineLayer>,
}

impl DenseBaseline {
    /// Derives the comparator skeleton from a compiled spiking model.
    pub fn from_model<F: Real>(model: &Model<F>) -> Self {
        let last_fc = model
            .layers
            .iter()
            .rposition(|l| matches!(l.op, Layer::Fc(_)));
        let mut layers = Vec::new();
        for (li, l) in model.layers.iter().enumerate() {
            match &l.op {
                Layer::Conv(c) => {
                    let g = &c.geom;
                    layers.push(BaselineLayer {
                        name: format!("conv{li:02}"),
                        macs_per_sample: g.in_len() as u64 * g.fanout(),
                        params: (c.weight.len() + c.bias.len()) as u64,
                    });
                }
                Layer::Fc(f) => {
                    // The head collapses vote groups to plain class logits.
                    let n_out = if Some(li) == last_fc {
                        model.n_class
                    } else {
                        f.n_out
                    };
                    layers.push(BaselineLayer {
                        name: format!("fc{li:02}"),
                        macs_per_sample: (f.n_in * n_out) as u64,
                        params: (f.n_in * n_out + n_out) as u64,
                    });
                }
                // Neurons → pointwise activations (free); attention, pooling,
                // flatten, vote → no MAC-bearing counterpart.
                _ => {}
            }
        }
        DenseBaseline {
            input_shape: model.input_shape,
            n_class: model.n_class,
            layers,
        }
    }

    pub fn param_count(&self) -> u64 {
        self.layers.iter().map(|l| l.params).sum()
    }

    /// Energy report for `samples` single-pass forwards.
    pub fn count(&self, samples: u64) -> EnergyReport {
        EnergyReport {
            algorithm: "dense-cnn".into(),
            mode: CountMode::Static,
            input_shape: self.input_shape,
            layers: self
                .layers
                .iter()
                .map(|l| LayerEnergy {
                    name: l.name.clone(),
                    acs: 0,
                    macs: l.macs_per_sample * samples,
                })
                .collect(),
            samples,
            params: self.param_count(),
            accuracy: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

/// One comparison-table row (algorithm, input size, energy, accuracy, MACs,
/// ACs, params — per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub algorithm: String,
    pub input_size: String,
    pub energy_pj: f64,
    pub accuracy: String,
    pub macs: u64,
    pub acs: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyComparison {
    /// SNN energy / baseline energy, all operations counted.
    pub ratio_honest: f64,
    /// Same ratio with the SNN charged for ACs only.
    pub ratio_acs_only: f64,
    pub rows: Vec<TableRow>,
}

fn report_row(r: &EnergyReport) -> TableRow {
    let s = r.samples.max(1);
    TableRow {
        algorithm: r.algorithm.clone(),
        input_size: format!(
            "{}x{}x{}",
            r.input_shape[0], r.input_shape[1], r.input_shape[2]
        ),
        energy_pj: r.energy_pj_per_sample(),
        accuracy: r
            .accuracy
            .map(|a| format!("{:.2}%", a * 100.0))
            .unwrap_or_else(|| "-".into()),
        macs: r.total_macs() / s,
        acs: r.total_acs() / s,
        params: r.params,
    }
}

/// Side-by-side energy comparison; expects reports over the same input shape.
pub fn compare_energy(snn: &EnergyReport, baseline: &EnergyReport) -> EnergyComparison {
    let base = baseline.energy_pj_per_sample();
    let denom = if base > 0.0 { base } else { f64::INFINITY };
    EnergyComparison {
        ratio_honest: snn.energy_pj_per_sample() / denom,
        ratio_acs_only: snn.energy_pj_acs_only_per_sample() / denom,
        rows: vec![report_row(snn), report_row(baseline)],
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Per-layer CSV: `layer,acs,macs,energy_pj`.
pub fn energy_report_csv(r: &EnergyReport) -> String {
    let mut out = String::from("layer,acs,macs,energy_pj\n");
    for l in &r.layers {
        out.push_str(&format!(
            "{},{},{},{}\n",
            l.name,
            l.acs,
            l.macs,
            AC_PJ * l.acs as f64 + MAC_PJ * l.macs as f64
        ));
    }
    out.push_str(&format!(
        "total,{},{},{}\n",
        r.total_acs(),
        r.total_macs(),
        r.energy_pj()
    ));
    out
}

/// Human-readable per-layer breakdown plus totals.
pub fn energy_report_text(r: &EnergyReport) -> String {
    let mode = match r.mode {
        CountMode::Dynamic => "dynamic",
        CountMode::Static => "static",
    };
    let mut out = format!(
        "energy report ({mode} count, {} samples, input {}x{}x{})\n",
        r.samples, r.input_shape[0], r.input_shape[1], r.input_shape[2]
    );
    out.push_str(&format!(
        "{:<28} {:>14} {:>14} {:>16}\n",
        "layer", "ACs", "MACs", "energy (pJ)"
    ));
    for l in &r.layers {
        out.push_str(&format!(
            "{:<28} {:>14} {:>14} {:>16.1}\n",
            l.name,
            l.acs,
            l.macs,
            AC_PJ * l.acs as f64 + MAC_PJ * l.macs as f64
        ));
    }
    out.push_str(&format!(
        "{:<28} {:>14} {:>14} {:>16.1}\n",
        "total",
        r.total_acs(),
        r.total_macs(),
        r.energy_pj()
    ));
    out.push_str(&format!(
        "per sample: {:.1} pJ (honest), {:.1} pJ (ACs only)\n",
        r.energy_pj_per_sample(),
        r.energy_pj_acs_only_per_sample()
    ));
    out
}

/// Comparison table in the algorithm/input/energy/accuracy/MACs/ACs/params
/// layout (per-sample numbers).
pub fn comparison_table_text(c: &EnergyComparison) -> String {
    let mut out = format!(
        "{:<16} {:>12} {:>16} {:>10} {:>14} {:>14} {:>12}\n",
        "algorithm", "input", "energy (pJ)", "accuracy", "MACs", "ACs", "params"
    );
    for r in &c.rows {
        out.push_str(&format!(
            "{:<16} {:>12} {:>16.1} {:>10} {:>14} {:>14} {:>12}\n",
            r.algorithm, r.input_size, r.energy_pj, r.accuracy, r.macs, r.acs, r.params
        ));
    }
    out.push_str(&format!(
        "energy ratio (snn/dense): {:.4} honest, {:.4} ACs-only\n",
        c.ratio_honest, c.ratio_acs_only
    ));
    out
}

/// Comparison rows as CSV.
pub fn comparison_csv(c: &EnergyComparison) -> String {
    let mut out = String::from("algorithm,input_size,energy_pj,accuracy,macs,acs,params\n");
    for r in &c.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.algorithm, r.input_size, r.energy_pj, r.accuracy, r.macs, r.acs, r.params
        ));
    }
    out
}

/// Firing-rate report as CSV: `layer,mean_rate,std_rate`.
pub fn rate_report_csv(r: &FiringRateReport) -> String {
    let mut out = String::from("layer,mean_rate,std_rate\n");
    for l in &r.layers {
        out.push_str(&format!("{},{},{}\n", l.name, l.mean, l.std));
    }
    out
}
