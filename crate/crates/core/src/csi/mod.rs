//! CSI sample representation, normalization, composition, and activity density.
//!
//! A [`CsiSample`] is a real amplitude tensor of shape `[C, H, W]` — antenna
//! pair × subcarrier × packet — with a composite action label and a packet
//! rate. Samples are stored row-major in a flat `Vec<f32>` (the on-disk
//! dtype); the training pipeline converts to its own scalar type on load.

mod format;
mod manifest;
mod synth;

pub use format::{read_csi_file, write_csi_file};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use synth::{
    atom_amplitude, atom_band, generate_benchmark, synthesize_sample, BenchmarkSpec, SynthShape,
    SyntheticActionSpec,
};

use std::path::PathBuf;
use thiserror::Error;

/// Errors for CSI data handling.
#[derive(Debug, Error)]
pub enum CsiError {
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Ordered multi-action label: constituent atomic action ids plus the index
/// of the ordered tuple in the enumerated composite-class set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositeLabel {
    pub atoms: Vec<u32>,
    pub class_index: u32,
}

impl CompositeLabel {
    pub fn single(atom: u32) -> Self {
        CompositeLabel {
            atoms: vec![atom],
            class_index: atom,
        }
    }
}

/// Class index of an ordered atom tuple under base-N enumeration, with the
/// first atom most significant: `[a0, a1]` over N atoms maps to `a0·N + a1`.
pub fn composite_class_index(atoms: &[u32], atom_count: u32) -> u32 {
    let mut idx: u32 = 0;
    for &a in atoms {
        idx = idx * atom_count + a;
    }
    idx
}

/// One CSI block: amplitudes `[C, H, W]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiSample {
    pub values: Vec<f32>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub label: CompositeLabel,
    /// Packets per second.
    pub sample_rate: f32,
    /// Opaque provenance string; not serialized to `.csit`.
    pub source_id: String,
}

impl CsiSample {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
        label: CompositeLabel,
        sample_rate: f32,
    ) -> Self {
        assert_eq!(values.len(), channels * height * width);
        CsiSample {
            values,
            channels,
            height,
            width,
            label,
            sample_rate,
            source_id: String::new(),
        }
    }

    #[inline]
    pub fn index(&self, c: usize, h: usize, w: usize) -> usize {
        (c * self.height + h) * self.width + w
    }

    #[inline]
    pub fn at(&self, c: usize, h: usize, w: usize) -> f32 {
        self.values[self.index(c, h, w)]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_finite(&self) -> Result<(), CsiError> {
        if let Some(pos) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(CsiError::InvalidSample(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(())
    }
}

/// Subtracts the scalar mean over all `C·H·W` entries.
///
/// The mean is accumulated in f64 so the result's recomputed mean is zero to
/// well under the 1e-6 tolerance even for large tensors.
pub fn normalize_mean_subtract(x: &CsiSample) -> Result<CsiSample, CsiError> {
    x.check_finite()?;
    let n = x.values.len().max(1) as f64;
    let mean = (x.values.iter().map(|&v| v as f64).sum::<f64>() / n) as f32;
    let mut out = x.clone();
    for v in &mut out.values {
        *v -= mean;
    }
    Ok(out)
}

/// Concatenates samples along the packet axis, optionally resampling the
/// result to `target_width` by linear interpolation (endpoint-aligned).
///
/// The output label carries the concatenated atoms with `class_index` 0; the
/// caller assigns the composite index for its enumeration (see
/// [`composite_class_index`]).
pub fn compose_multi_action(
    samples: &[CsiSample],
    target_width: Option<usize>,
) -> Result<CsiSample, CsiError> {
    if samples.len() < 2 {
        return Err(CsiError::InvalidSpec(format!(
            "composition needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let (c, h) = (samples[0].channels, samples[0].height);
    for (i, s) in samples.iter().enumerate() {
        if s.channels != c || s.height != h {
            return Err(CsiError::Shape(format!(
                "sample {i} has shape {}x{}xW, expected {c}x{h}xW",
                s.channels, s.height
            )));
        }
        if s.width == 0 {
            return Err(CsiError::Shape(format!("sample {i} has zero width")));
        }
    }

    let w_cat: usize = samples.iter().map(|s| s.width).sum();
    let duration: f64 = samples
        .iter()
        .map(|s| s.width as f64 / s.sample_rate as f64)
        .sum();
    let mut cat = vec![0.0f32; c * h * w_cat];
    for ch in 0..c {
        for row in 0..h {
            let mut w0 = 0;
            for s in samples {
                let src = &s.values[s.index(ch, row, 0)..s.index(ch, row, 0) + s.width];
                let dst_start = (ch * h + row) * w_cat + w0;
                cat[dst_start..dst_start + s.width].copy_from_slice(src);
                w0 += s.width;
            }
        }
    }

    let atoms: Vec<u32> = samples
        .iter()
        .flat_map(|s| s.label.atoms.iter().copied())
        .collect();
    let (values, width) = match target_width {
        None => (cat, w_cat),
        Some(tw) => {
            if tw == 0 {
                return Err(CsiError::Shape("target_width must be ≥ 1".into()));
            }
            (resample_width(&cat, c, h, w_cat, tw), tw)
        }
    };
    let sample_rate = (width as f64 / duration) as f32;
    let mut out = CsiSample::new(
        c,
        h,
        width,
        values,
        CompositeLabel {
            atoms,
            class_index: 0,
        },
        sample_rate,
    );
    out.source_id = "composed".into();
    Ok(out)
}

/// Endpoint-aligned linear resampling along the packet axis.
fn resample_width(values: &[f32], c: usize, h: usize, w_in: usize, w_out: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; c * h * w_out];
    let scale = if w_out > 1 {
        (w_in - 1) as f64 / (w_out - 1) as f64
    } else {
        0.0
    };
    for row in 0..c * h {
        let src = &values[row * w_in..(row + 1) * w_in];
        let dst = &mut out[row * w_out..(row + 1) * w_out];
        for (j, d) in dst.iter_mut().enumerate() {
            let u = j as f64 * scale;
            let i0 = u.floor() as usize;
            let i1 = (i0 + 1).min(w_in - 1);
            let frac = u - i0 as f64;
            *d = (src[i0] as f64 * (1.0 - frac) + src[i1] as f64 * frac) as f32;
        }
    }
    out
}

/// Seconds of "active" signal: packets whose mean absolute deviation from the
/// per-subcarrier temporal median exceeds `epsilon`, divided by the packet
/// rate.
pub fn activity_density(x: &CsiSample, epsilon: f64) -> Result<f64, CsiError> {
    if !(epsilon > 0.0) {
        return Err(CsiError::InvalidThreshold(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    if !(x.sample_rate > 0.0) || !x.sample_rate.is_finite() {
        return Err(CsiError::InvalidSample(format!(
            "sample_rate must be positive, got {}",
            x.sample_rate
        )));
    }
    x.check_finite()?;

    let rows = x.channels * x.height;
    let w = x.width;
    let mut medians = vec![0.0f64; rows];
    let mut scratch = vec![0.0f32; w];
    for (r, med) in medians.iter_mut().enumerate() {
        scratch.copy_from_slice(&x.values[r * w..(r + 1) * w]);
        scratch.sort_by(f32::total_cmp);
        *med = if w % 2 == 1 {
            scratch[w / 2] as f64
        } else {
            (scratch[w / 2 - 1] as f64 + scratch[w / 2] as f64) / 2.0
        };
    }

    let mut active = 0usize;
    for t in 0..w {
        let mut dev = 0.0f64;
        for r in 0..rows {
            dev += (x.values[r * w + t] as f64 - medians[r]).abs();
        }
        if dev / rows as f64 > epsilon {
            active += 1;
        }
    }
    Ok(active as f64 / x.sample_rate as f64)
}
