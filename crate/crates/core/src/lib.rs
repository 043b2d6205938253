//! Spiking neural network engine for WiFi-CSI human action recognition.
//!
//! The crate is organised around the data path of a spiking classifier:
//!
//! * [`csi`] — CSI sample container, `.csit` binary format, synthetic sample
//!   generation, multi-action composition, and dataset manifests.
//! * [`engine`] — spike encoding, LIF/IF membrane dynamics, and surrogate
//!   gradients for backpropagation through the spike nonlinearity.
//! * [`layers`] — spiking convolution / fully-connected layers, temporal
//!   attention, pooling, population voting, and the sequential [`layers::Model`].
//! * [`objective`] — MSE, supervised-contrastive, and hybrid losses with
//!   analytic gradients, plus the projection head feeding the contrastive term.
//! * [`training`] — Adam, the training loop, evaluation, and checkpointing.
//! * [`telemetry`] — firing-rate statistics and AC/MAC energy accounting with
//!   a dense-CNN baseline for comparison.
//!
//! All numeric kernels are generic over [`scalar::Real`] (implemented for
//! `f32` and `f64`). Training and checkpoints use `f32`; `f64` instantiations
//! exist for high-precision verification such as finite-difference gradient
//! checks. Everything is deterministic for a fixed seed: no threads, no
//! iteration-order dependence, and all randomness flows through explicitly
//! seeded ChaCha8 streams.

pub mod csi;
pub mod engine;
pub mod layers;
pub mod objective;
pub mod scalar;
pub mod seed;
pub mod telemetry;
pub mod tensor;
pub mod training;
