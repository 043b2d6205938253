//! Time-major tensors for spiking computation.
//!
//! A [`TimedTensor`] stores `steps` equally-shaped slices contiguously:
//! slice `t` occupies `data[t * slice_len .. (t + 1) * slice_len]`, and each
//! slice is row-major over `slice_shape`. [`SpikeTensor`] is the same layout
//! for neuron outputs; in spike mode its values are exactly 0 or 1, in smooth
//! mode they live in `[0, 1]`.

use crate::scalar::Real;

/// Dense tensor with a leading time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedTensor<F> {
    steps: usize,
    slice_shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> TimedTensor<F> {
    /// Zero-filled tensor of `steps` slices shaped `slice_shape`.
    pub fn zeros(steps: usize, slice_shape: &[usize]) -> Self {
        let slice_len: usize = slice_shape.iter().product();
        TimedTensor {
            steps,
            slice_shape: slice_shape.to_vec(),
            data: vec![F::zero(); steps * slice_len],
        }
    }

    /// Builds from raw data; `data.len()` must equal `steps * prod(slice_shape)`.
    pub fn from_data(steps: usize, slice_shape: &[usize], data: Vec<F>) -> Self {
        let slice_len: usize = slice_shape.iter().product();
        assert_eq!(
            data.len(),
            steps * slice_len,
            "timed tensor data length mismatch"
        );
        TimedTensor {
            steps,
            slice_shape: slice_shape.to_vec(),
            data,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn slice_shape(&self) -> &[usize] {
        &self.slice_shape
    }

    /// Elements per time slice.
    pub fn slice_len(&self) -> usize {
        self.slice_shape.iter().product()
    }

    pub fn slice(&self, t: usize) -> &[F] {
        let n = self.slice_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn slice_mut(&mut self, t: usize) -> &mut [F] {
        let n = self.slice_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// Mean over the time axis, one value per slice element.
    pub fn time_mean(&self) -> Vec<F> {
        let n = self.slice_len();
        let mut out = vec![F::zero(); n];
        for t in 0..self.steps {
            let s = self.slice(t);
            for (o, &v) in out.iter_mut().zip(s) {
                *o += v;
            }
        }
        let inv = F::one() / F::from_usize(self.steps.max(1)).unwrap();
        for o in &mut out {
            *o *= inv;
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Neuron output tensor: binary in spike mode, `[0, 1]` in smooth mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTensor<F>(pub TimedTensor<F>);

impl<F: Real> SpikeTensor<F> {
    pub fn zeros(steps: usize, slice_shape: &[usize]) -> Self {
        SpikeTensor(TimedTensor::zeros(steps, slice_shape))
    }

    pub fn steps(&self) -> usize {
        self.0.steps()
    }

    pub fn slice_len(&self) -> usize {
        self.0.slice_len()
    }

    pub fn slice(&self, t: usize) -> &[F] {
        self.0.slice(t)
    }

    /// True when every value is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.0
            .data()
            .iter()
            .all(|&v| v == F::zero() || v == F::one())
    }

    /// Total number of ones; only meaningful for binary tensors.
    pub fn spike_count(&self) -> u64 {
        self.0.data().iter().filter(|&&v| v != F::zero()).count() as u64
    }
}
