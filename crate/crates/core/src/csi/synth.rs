//! Synthetic CSI generation and benchmark dataset construction.
//!
//! Each action contributes a band-limited perturbation — four sinusoids with
//! frequencies drawn uniformly from the action's Doppler band — riding on a
//! per-subcarrier constant baseline, with a slow drift whose size scales with
//! the action amplitude and i.i.d. Gaussian noise on top. Actions in a
//! multi-spec call occupy consecutive time segments. Every draw flows through
//! one seeded ChaCha8 stream, so generation is bit-deterministic.

use super::{
    compose_multi_action, composite_class_index, write_csi_file, CompositeLabel, CsiError,
    CsiSample, DatasetManifest, ManifestEntry, Split,
};
use crate::seed::{self, domain};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

/// One action to synthesize: its id, Doppler band, strength, and length.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticActionSpec {
    pub action_id: u32,
    /// (low, high) in Hz; low < high.
    pub doppler_band: (f64, f64),
    /// Perturbation amplitude, ≥ 0 (0 leaves the baseline untouched).
    pub amplitude: f64,
    /// Segment length in seconds, > 0.
    pub duration_s: f64,
}

/// Tensor geometry for generated samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthShape {
    pub channels: usize,
    pub height: usize,
    /// Packets per second.
    pub sample_rate: f64,
}

impl Default for SynthShape {
    fn default() -> Self {
        SynthShape {
            channels: 3,
            height: 8,
            sample_rate: 32.0,
        }
    }
}

const SINUSOIDS_PER_ACTION: usize = 4;
/// Drift amplitude as a fraction of the action amplitude; zero-amplitude
/// actions therefore leave the sample constant in time.
const DRIFT_FRACTION: f64 = 0.05;

/// Catalog Doppler band for an atomic action id.
///
/// Bands are disjoint with ≥ 0.9 Hz guard gaps so that adjacent atoms stay
/// separable even at the slow apparent frequencies of an uncompressed
/// single-action window. Atoms 0–2 stay below 4.3 Hz so triple-composition of
/// 1-second atoms resampled back to one second (effective rate ≈ 10.7 pkt/s
/// at the default 32 pkt/s) stays under the post-resampling Nyquist frequency
/// (≈ 5.3 Hz); atoms 0–3 stay below the double-composition Nyquist (8 Hz).
pub fn atom_band(action_id: u32) -> (f64, f64) {
    const BANDS: [(f64, f64); 6] = [
        (0.5, 0.9),
        (1.8, 2.4),
        (3.5, 4.3),
        (5.5, 6.5),
        (8.2, 9.4),
        (11.0, 12.6),
    ];
    BANDS[action_id as usize % BANDS.len()]
}

/// Catalog perturbation amplitude for an atomic action id.
pub fn atom_amplitude(action_id: u32) -> f64 {
    0.8 + 0.25 * (action_id % 6) as f64
}

/// Deterministic per-atom spatial weighting across (channel, subcarrier):
/// different actions excite different subcarrier patterns, mimicking distinct
/// multipath responses.
fn atom_profile(action_id: u32, c: usize, h: usize, height: usize) -> f64 {
    let phase = 0.9 * action_id as f64;
    let x = (h + 7 * c) as f64 / height as f64;
    0.55 + 0.45 * (TAU * (action_id + 1) as f64 * x + phase).cos()
}

/// Generates one sample; the specs occupy consecutive time segments in order.
pub fn synthesize_sample(
    specs: &[SyntheticActionSpec],
    shape: SynthShape,
    noise_sigma: f64,
    seed: u64,
) -> Result<CsiSample, CsiError> {
    if specs.is_empty() {
        return Err(CsiError::InvalidSpec("no action specs given".into()));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(CsiError::InvalidSpec(format!(
            "noise_sigma must be finite and ≥ 0, got {noise_sigma}"
        )));
    }
    if shape.channels == 0 || shape.height == 0 || !(shape.sample_rate > 0.0) {
        return Err(CsiError::InvalidSpec(format!(
            "bad shape: {shape:?}"
        )));
    }
    let mut seg_widths = Vec::with_capacity(specs.len());
    for (i, s) in specs.iter().enumerate() {
        if !(s.doppler_band.0 < s.doppler_band.1) || s.doppler_band.0 < 0.0 {
            return Err(CsiError::InvalidSpec(format!(
                "spec {i}: band low must satisfy 0 ≤ low < high, got {:?}",
                s.doppler_band
            )));
        }
        if !(s.amplitude >= 0.0) || !(s.duration_s > 0.0) {
            return Err(CsiError::InvalidSpec(format!(
                "spec {i}: amplitude must be ≥ 0 and duration > 0"
            )));
        }
        let w = (s.duration_s * shape.sample_rate).round() as usize;
        if w == 0 {
            return Err(CsiError::InvalidSpec(format!(
                "spec {i}: duration {}s yields zero packets at {} pkt/s",
                s.duration_s, shape.sample_rate
            )));
        }
        seg_widths.push(w);
    }

    let (c_n, h_n) = (shape.channels, shape.height);
    let width: usize = seg_widths.iter().sum();
    let mut rng = seed::rng_for(seed, &[domain::SAMPLE]);

    let baseline: Vec<f64> = (0..c_n * h_n).map(|_| rng.gen_range(0.7..1.3)).collect();

    let mut values = vec![0.0f32; c_n * h_n * width];
    let mut t0 = 0usize;
    for (spec, &seg_w) in specs.iter().zip(&seg_widths) {
        let (lo, hi) = spec.doppler_band;
        let freqs: Vec<f64> = (0..SINUSOIDS_PER_ACTION)
            .map(|_| rng.gen_range(lo..hi))
            .collect();
        let phases: Vec<f64> = (0..SINUSOIDS_PER_ACTION)
            .map(|_| rng.gen_range(0.0..TAU))
            .collect();
        let drift_freq = rng.gen_range(0.08..0.2);
        let drift_phase = rng.gen_range(0.0..TAU);

        // Temporal waveform is shared across subcarriers; precompute it.
        let mut wave = vec![0.0f64; seg_w];
        let mut drift = vec![0.0f64; seg_w];
        for (k, (wv, dr)) in wave.iter_mut().zip(&mut drift).enumerate() {
            let t = (t0 + k) as f64 / shape.sample_rate;
            *wv = freqs
                .iter()
                .zip(&phases)
                .map(|(&f, &p)| (TAU * f * t + p).sin())
                .sum::<f64>()
                / SINUSOIDS_PER_ACTION as f64;
            *dr = DRIFT_FRACTION * (TAU * drift_freq * t + drift_phase).sin();
        }

        for c in 0..c_n {
            for h in 0..h_n {
                let prof = atom_profile(spec.action_id, c, h, h_n);
                let base = baseline[c * h_n + h];
                let row = (c * h_n + h) * width + t0;
                for k in 0..seg_w {
                    values[row + k] =
                        (base + spec.amplitude * (prof * wave[k] + drift[k])) as f32;
                }
            }
        }
        t0 += seg_w;
    }

    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("sigma validated");
        for v in &mut values {
            *v += normal.sample(&mut rng) as f32;
        }
    }

    let atoms: Vec<u32> = specs.iter().map(|s| s.action_id).collect();
    let mut out = CsiSample::new(
        c_n,
        h_n,
        width,
        values,
        CompositeLabel {
            atoms,
            class_index: 0,
        },
        shape.sample_rate as f32,
    );
    out.source_id = format!("synth:seed={seed}");
    Ok(out)
}

/// Parameters for [`generate_benchmark`].
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    /// Number of atomic actions in the catalog (ids `0..atom_count`).
    pub atom_count: u32,
    /// Actions per sample M; classes are the ordered M-tuples.
    pub actions: u32,
    /// Samples per composite class, train + test combined.
    pub per_class: u32,
    /// Fraction assigned to the train split (rounded per class).
    pub train_fraction: f64,
    pub seed: u64,
    pub noise_sigma: f64,
    pub shape: SynthShape,
    /// Seconds per atomic action.
    pub duration_s: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            atom_count: 4,
            actions: 1,
            per_class: 250,
            train_fraction: 0.8,
            seed: 7,
            noise_sigma: 0.05,
            shape: SynthShape::default(),
            duration_s: 1.0,
        }
    }
}

/// Generates a labelled benchmark into `out_dir`: one `.csit` per sample and
/// a `manifest.csv` with paths relative to `out_dir`.
///
/// Classes enumerate the ordered M-tuples over the atom catalog in base-N
/// order. Multi-action samples are built by synthesizing the constituent
/// single-action samples independently, concatenating them, and resampling
/// back to the single-action width, so every class shares one input shape.
/// Split assignment shuffles each class with a seed-derived stream.
pub fn generate_benchmark(
    spec: &BenchmarkSpec,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest, CsiError> {
    if !(1..=3).contains(&spec.actions) {
        return Err(CsiError::InvalidSpec(format!(
            "actions must be 1, 2, or 3, got {}",
            spec.actions
        )));
    }
    if spec.atom_count == 0 || spec.per_class == 0 {
        return Err(CsiError::InvalidSpec(
            "atom_count and per_class must be ≥ 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.train_fraction) {
        return Err(CsiError::InvalidSpec(format!(
            "train_fraction must be in [0,1], got {}",
            spec.train_fraction
        )));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|source| CsiError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let n = spec.atom_count;
    let m = spec.actions;
    let class_count = (n as u64).pow(m) as u32;
    let single_width = (spec.duration_s * spec.shape.sample_rate).round() as usize;
    let n_train = (spec.train_fraction * spec.per_class as f64).round() as u32;

    let mut entries = Vec::new();
    for class in 0..class_count {
        let atoms = class_atoms(class, n, m);

        let mut split_order: Vec<u32> = (0..spec.per_class).collect();
        split_order.shuffle(&mut seed::rng_for(spec.seed, &[domain::SPLIT, class as u64]));

        for inst in 0..spec.per_class {
            let sample_seed = seed::derive_seed(spec.seed, &[domain::SAMPLE, class as u64, inst as u64]);
            let mut sample = synthesize_composite(&atoms, spec, sample_seed, single_width)?;
            sample.label.class_index = class;

            let file_name = format!("cls{class:03}_{inst:04}.csit");
            write_csi_file(&sample, out_dir.join(&file_name))?;

            let rank = split_order.iter().position(|&x| x == inst).unwrap() as u32;
            let split = if rank < n_train {
                Split::Train
            } else {
                Split::Test
            };
            entries.push(ManifestEntry {
                path: PathBuf::from(file_name),
                label: sample.label.clone(),
                split,
            });
        }
    }

    let manifest = DatasetManifest::new(out_dir.to_path_buf(), entries);
    manifest.save(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Digits of `class` in base `n`, most significant first, `m` digits.
fn class_atoms(class: u32, n: u32, m: u32) -> Vec<u32> {
    let mut atoms = vec![0u32; m as usize];
    let mut rem = class;
    for slot in atoms.iter_mut().rev() {
        *slot = rem % n;
        rem /= n;
    }
    atoms
}

fn synthesize_composite(
    atoms: &[u32],
    spec: &BenchmarkSpec,
    sample_seed: u64,
    target_width: usize,
) -> Result<CsiSample, CsiError> {
    let make_spec = |id: u32| SyntheticActionSpec {
        action_id: id,
        doppler_band: atom_band(id),
        amplitude: atom_amplitude(id),
        duration_s: spec.duration_s,
    };
    if atoms.len() == 1 {
        return synthesize_sample(
            &[make_spec(atoms[0])],
            spec.shape,
            spec.noise_sigma,
            sample_seed,
        );
    }
    if !(spec.noise_sigma >= 0.0) || !spec.noise_sigma.is_finite() {
        return Err(CsiError::InvalidSpec(format!(
            "noise_sigma must be finite and ≥ 0, got {}",
            spec.noise_sigma
        )));
    }
    // Constituents are synthesized clean; receiver noise belongs to the capture
    // of the final recording. Adding it per constituent would let the resample
    // average it down, making composites quieter than single-action samples.
    let parts: Vec<CsiSample> = atoms
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            synthesize_sample(
                &[make_spec(id)],
                spec.shape,
                0.0,
                seed::derive_seed(sample_seed, &[i as u64]),
            )
        })
        .collect::<Result<_, _>>()?;
    let mut composed = compose_multi_action(&parts, Some(target_width))?;
    if spec.noise_sigma > 0.0 {
        let mut rng = seed::rng_for(sample_seed, &[domain::CAPTURE_NOISE]);
        let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma validated above");
        for v in &mut composed.values {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    composed.label.class_index = composite_class_index(&composed.label.atoms, spec.atom_count);
    composed.source_id = format!("synth:seed={sample_seed}");
    Ok(composed)
}
