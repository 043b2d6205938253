//! Training objective: rate-target MSE, supervised contrastive loss over
//! projected embeddings, and their weighted hybrid.
//!
//! The contrastive term operates on unit-norm embeddings produced by a
//! [`ProjectionHead`] (affine map + L2 normalization) from the time-averaged
//! output of the penultimate spiking layer. All losses come with analytic
//! gradients (`*_grad` variants) used by the trainer; the gradients are
//! verified against finite differences in the tests.

use crate::scalar::{real, Real};
use crate::seed::{self, domain};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
}

fn default_gamma1() -> f64 {
    1.0
}
fn default_gamma2() -> f64 {
    0.1
}
fn default_tau() -> f64 {
    0.07
}
fn default_projection_dim() -> usize {
    64
}

/// Weights and temperature of the hybrid loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// MSE weight γ₁.
    #[serde(default = "default_gamma1")]
    pub gamma1: f64,
    /// Contrastive weight γ₂.
    #[serde(default = "default_gamma2")]
    pub gamma2: f64,
    /// Softmax temperature τ.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_projection_dim")]
    pub projection_dim: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma1: default_gamma1(),
            gamma2: default_gamma2(),
            tau: default_tau(),
            projection_dim: default_projection_dim(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.gamma1 >= 0.0) || !(self.gamma2 >= 0.0) {
            return Err(LossError::Shape(format!(
                "loss weights must be ≥ 0 (gamma1={}, gamma2={})",
                self.gamma1, self.gamma2
            )));
        }
        if self.gamma1 + self.gamma2 <= 0.0 {
            return Err(LossError::Shape(
                "at least one of gamma1, gamma2 must be > 0".into(),
            ));
        }
        if !(self.tau > 0.0) {
            return Err(LossError::Shape(format!(
                "temperature must be > 0, got {}",
                self.tau
            )));
        }
        if self.projection_dim < 2 {
            return Err(LossError::Shape(format!(
                "projection_dim must be ≥ 2, got {}",
                self.projection_dim
            )));
        }
        Ok(())
    }
}

/// One-hot target row for a class label.
pub fn one_hot<F: Real>(class: usize, n_class: usize) -> Vec<F> {
    let mut y = vec![F::zero(); n_class];
    y[class] = F::one();
    y
}

fn check_rows<F: Real>(name: &str, rows: &[Vec<F>]) -> Result<usize, LossError> {
    let d = rows
        .first()
        .map(|r| r.len())
        .ok_or_else(|| LossError::Shape(format!("{name}: empty batch")))?;
    for (i, r) in rows.iter().enumerate() {
        if r.len() != d {
            return Err(LossError::Shape(format!(
                "{name}: row {i} has {} values, row 0 has {d}",
                r.len()
            )));
        }
    }
    Ok(d)
}

/// Mean squared error between predicted firing rates and one-hot targets:
/// `(1/N) Σᵢ ‖fᵢ − yᵢ‖²`.
pub fn mse_loss<F: Real>(f: &[Vec<F>], y: &[Vec<F>]) -> Result<F, LossError> {
    Ok(mse_loss_grad(f, y)?.0)
}

/// MSE plus its gradient w.r.t. `f`: `∂L/∂fᵢ = 2(fᵢ − yᵢ)/N`.
pub fn mse_loss_grad<F: Real>(
    f: &[Vec<F>],
    y: &[Vec<F>],
) -> Result<(F, Vec<Vec<F>>), LossError> {
    if f.len() != y.len() {
        return Err(LossError::Shape(format!(
            "mse_loss: {} predictions vs {} targets",
            f.len(),
            y.len()
        )));
    }
    let d = check_rows("mse_loss", f)?;
    let dy = check_rows("mse_loss targets", y)?;
    if d != dy {
        return Err(LossError::Shape(format!(
            "mse_loss: prediction rows have {d} values, target rows {dy}"
        )));
    }
    let n = real::<F>(f.len() as f64);
    let mut loss = F::zero();
    let two_over_n = real::<F>(2.0) / n;
    let grads = f
        .iter()
        .zip(y)
        .map(|(fr, yr)| {
            fr.iter()
                .zip(yr)
                .map(|(&fv, &yv)| {
                    let e = fv - yv;
                    loss += e * e;
                    e * two_over_n
                })
                .collect()
        })
        .collect();
    Ok((loss / n, grads))
}

fn check_embeddings<F: Real>(z: &[Vec<F>]) -> Result<usize, LossError> {
    let d = check_rows("supcon_loss", z)?;
    let tol = real::<F>(1e-4);
    for (i, row) in z.iter().enumerate() {
        let norm = row.iter().map(|&v| v * v).sum::<F>().sqrt();
        if (norm - F::one()).abs() > tol {
            return Err(LossError::InvalidEmbedding(format!(
                "row {i} has norm {norm:?}, expected unit length"
            )));
        }
    }
    Ok(d)
}

/// Supervised contrastive loss over a batch of unit-norm embeddings.
///
/// For each anchor i with positives P(i) (same label, ≠ i):
/// `−(1/|P(i)|) Σ_{p∈P(i)} log( exp(zᵢ·z_p/τ) / Σ_{a≠i} exp(zᵢ·z_a/τ) )`,
/// averaged over the N′ anchors with non-empty P(i). Anchors without
/// positives contribute nothing; a batch with no positive pairs scores 0.
pub fn supcon_loss<F: Real>(z: &[Vec<F>], labels: &[usize], tau: F) -> Result<F, LossError> {
    Ok(supcon_loss_grad(z, labels, tau)?.0)
}

/// Contrastive loss plus its gradient w.r.t. each embedding row.
pub fn supcon_loss_grad<F: Real>(
    z: &[Vec<F>],
    labels: &[usize],
    tau: F,
) -> Result<(F, Vec<Vec<F>>), LossError> {
    let n = z.len();
    if n < 2 {
        return Err(LossError::Shape(format!(
            "supcon_loss: need at least 2 embeddings, got {n}"
        )));
    }
    if labels.len() != n {
        return Err(LossError::Shape(format!(
            "supcon_loss: {n} embeddings vs {} labels",
            labels.len()
        )));
    }
    if !(tau > F::zero()) {
        return Err(LossError::Shape("supcon_loss: tau must be > 0".into()));
    }
    let d = check_embeddings(z)?;

    // Scaled similarity matrix s_ia = zᵢ·z_a / τ.
    let mut s = vec![F::zero(); n * n];
    for i in 0..n {
        for a in (i + 1)..n {
            let dot = z[i]
                .iter()
                .zip(&z[a])
                .map(|(&x, &y)| x * y)
                .sum::<F>()
                / tau;
            s[i * n + a] = dot;
            s[a * n + i] = dot;
        }
    }

    // Anchors with positives.
    let pos_count: Vec<usize> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&p| p != i && labels[p] == labels[i])
                .count()
        })
        .collect();
    let n_prime = pos_count.iter().filter(|&&c| c > 0).count();
    if n_prime == 0 {
        return Ok((F::zero(), vec![vec![F::zero(); d]; n]));
    }
    let inv_np = F::one() / F::from_usize(n_prime).unwrap();

    let mut loss = F::zero();
    // g[i*n+a] = ∂L/∂s_ia (a ≠ i).
    let mut g = vec![F::zero(); n * n];
    for i in 0..n {
        if pos_count[i] == 0 {
            continue;
        }
        let inv_p = F::one() / F::from_usize(pos_count[i]).unwrap();
        // Stable log-sum-exp over a ≠ i.
        let mut m = F::neg_infinity();
        for a in 0..n {
            if a != i && s[i * n + a] > m {
                m = s[i * n + a];
            }
        }
        let mut denom = F::zero();
        for a in 0..n {
            if a != i {
                denom += (s[i * n + a] - m).exp();
            }
        }
        let log_denom = m + denom.ln();
        for a in 0..n {
            if a == i {
                continue;
            }
            let q = (s[i * n + a] - m).exp() / denom;
            let positive = labels[a] == labels[i];
            if positive {
                loss -= (s[i * n + a] - log_denom) * inv_p * inv_np;
            }
            // ∂L/∂s_ia = (1/N′)(q_ia − [a∈P(i)]/|P(i)|)
            g[i * n + a] = inv_np * (q - if positive { inv_p } else { F::zero() });
        }
    }

    // s_ia = zᵢ·z_a/τ contributes to both rows.
    let mut dz = vec![vec![F::zero(); d]; n];
    let inv_tau = F::one() / tau;
    for i in 0..n {
        for a in 0..n {
            if a == i || g[i * n + a] == F::zero() {
                continue;
            }
            let gv = g[i * n + a] * inv_tau;
            for k in 0..d {
                dz[i][k] += gv * z[a][k];
                dz[a][k] += gv * z[i][k];
            }
        }
    }
    Ok((loss, dz))
}

/// Hybrid objective `γ₁·MSE + γ₂·SupCon`.
pub fn hybrid_loss<F: Real>(
    f: &[Vec<F>],
    y: &[Vec<F>],
    z: &[Vec<F>],
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<F, LossError> {
    cfg.validate()?;
    let mse = mse_loss(f, y)?;
    let scl = supcon_loss(z, labels, real::<F>(cfg.tau))?;
    Ok(real::<F>(cfg.gamma1) * mse + real::<F>(cfg.gamma2) * scl)
}

/// Affine projection to the contrastive embedding space followed by L2
/// normalization; output rows have unit norm (to 1e-6) whenever the
/// pre-normalization vector is not degenerate (norm ≥ 1e-12).
#[derive(Debug, Clone)]
pub struct ProjectionHead<F> {
    pub n_in: usize,
    pub n_out: usize,
    /// Layout `[in][out]`.
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

/// Gradients for a [`ProjectionHead`].
#[derive(Debug, Clone)]
pub struct HeadGrads<F> {
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> HeadGrads<F> {
    pub fn zeros(head: &ProjectionHead<F>) -> Self {
        HeadGrads {
            weight: vec![F::zero(); head.weight.len()],
            bias: vec![F::zero(); head.n_out],
        }
    }

    pub fn clear(&mut self) {
        self.weight.fill(F::zero());
        self.bias.fill(F::zero());
    }
}

impl<F: Real> ProjectionHead<F> {
    /// Seed-deterministic uniform fan-in initialization.
    pub fn new(n_in: usize, n_out: usize, seed: u64) -> Result<Self, LossError> {
        if n_in == 0 || n_out < 2 {
            return Err(LossError::Shape(format!(
                "projection head needs n_in ≥ 1 and n_out ≥ 2, got {n_in}→{n_out}"
            )));
        }
        let mut rng = seed::rng_for(seed, &[domain::HEAD_INIT]);
        let bound = 1.0 / (n_in as f64).sqrt();
        let weight = (0..n_in * n_out)
            .map(|_| real::<F>(rng.gen_range(-bound..bound)))
            .collect();
        let bias = (0..n_out)
            .map(|_| real::<F>(rng.gen_range(-bound..bound)))
            .collect();
        Ok(ProjectionHead {
            n_in,
            n_out,
            weight,
            bias,
        })
    }

    fn affine(&self, x: &[F]) -> Vec<F> {
        let mut u = self.bias.clone();
        for (i, &xv) in x.iter().enumerate() {
            if xv == F::zero() {
                continue;
            }
            let row = &self.weight[i * self.n_out..(i + 1) * self.n_out];
            for (uv, &wv) in u.iter_mut().zip(row) {
                *uv += xv * wv;
            }
        }
        u
    }

    /// Projects a feature vector to a unit-norm embedding.
    pub fn project(&self, x: &[F]) -> Result<Vec<F>, LossError> {
        if x.len() != self.n_in {
            return Err(LossError::Shape(format!(
                "projection head expects {} features, got {}",
                self.n_in,
                x.len()
            )));
        }
        let mut u = self.affine(x);
        let norm = u.iter().map(|&v| v * v).sum::<F>().sqrt();
        let r = norm.max(real::<F>(1e-12));
        for v in &mut u {
            *v /= r;
        }
        Ok(u)
    }

    /// Backward through normalize + affine. Accumulates parameter gradients
    /// into `grads` and returns ∂L/∂x.
    pub fn backward(
        &self,
        x: &[F],
        dz: &[F],
        grads: &mut HeadGrads<F>,
    ) -> Result<Vec<F>, LossError> {
        if x.len() != self.n_in || dz.len() != self.n_out {
            return Err(LossError::Shape(format!(
                "projection backward: got {}→{}, head is {}→{}",
                x.len(),
                dz.len(),
                self.n_in,
                self.n_out
            )));
        }
        let u = self.affine(x);
        let norm = u.iter().map(|&v| v * v).sum::<F>().sqrt();
        let r = norm.max(real::<F>(1e-12));
        let z: Vec<F> = u.iter().map(|&v| v / r).collect();
        // d/du of u/‖u‖: (dz − z (z·dz)) / ‖u‖.
        let zdz = z.iter().zip(dz).map(|(&zv, &dv)| zv * dv).sum::<F>();
        let du: Vec<F> = z
            .iter()
            .zip(dz)
            .map(|(&zv, &dv)| (dv - zv * zdz) / r)
            .collect();
        for (j, &dv) in du.iter().enumerate() {
            grads.bias[j] += dv;
        }
        let mut dx = vec![F::zero(); self.n_in];
        for (i, &xv) in x.iter().enumerate() {
            let row = &self.weight[i * self.n_out..(i + 1) * self.n_out];
            let mut acc = F::zero();
            for (j, (&dv, &wv)) in du.iter().zip(row).enumerate() {
                grads.weight[i * self.n_out + j] += xv * dv;
                acc += wv * dv;
            }
            dx[i] = acc;
        }
        Ok(dx)
    }
}
