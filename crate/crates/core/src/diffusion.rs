//! Variance-preserving forward diffusion over embedding sequences: the
//! cosine noise schedule, the velocity parameterization and its inverse,
//! and the weighted regression loss used to train the denoiser.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("diffusion time {t} outside [0, 1]")]
    TimeOutOfRange { t: f64 },
    #[error("schedule offset {s} must be positive")]
    BadOffset { s: f64 },
    #[error("sequence shape mismatch: {lhs_len}x{lhs_dim} vs {rhs_len}x{rhs_dim}")]
    ShapeMismatch {
        lhs_len: usize,
        lhs_dim: usize,
        rhs_len: usize,
        rhs_dim: usize,
    },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("values length {len} does not match {rows}x{dim}")]
    BadLength { len: usize, rows: usize, dim: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DiffusionError>;

/// Cosine noise schedule mapping t in [0,1] to the variance-preserving
/// pair (alpha, sigma) with alpha^2 + sigma^2 = 1, alpha(0) = 1 and
/// alpha(1) = 0.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSchedule {
    s: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule { s: 0.008 }
    }
}

impl NoiseSchedule {
    pub fn new(s: f64) -> Result<NoiseSchedule> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(DiffusionError::BadOffset { s });
        }
        Ok(NoiseSchedule { s })
    }

    pub fn offset(&self) -> f64 {
        self.s
    }

    fn squared_alpha(&self, t: f64) -> f64 {
        if t >= 1.0 {
            return 0.0; // cos(pi/2) exactly; f64 cos leaves ~6e-17 residue
        }
        let phase = |u: f64| {
            let c = ((u + self.s) / (1.0 + self.s) * std::f64::consts::FRAC_PI_2).cos();
            c * c
        };
        (phase(t) / phase(0.0)).clamp(0.0, 1.0)
    }

    /// The pair (alpha(t), sigma(t)).
    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&t) {
            return Err(DiffusionError::TimeOutOfRange { t });
        }
        let a2 = self.squared_alpha(t);
        Ok((a2.sqrt(), (1.0 - a2).sqrt()))
    }

    /// Signal-to-noise ratio alpha^2 / sigma^2 (infinite at t = 0).
    pub fn snr(&self, t: f64) -> Result<f64> {
        let (a, s) = self.alpha_sigma(t)?;
        Ok(a * a / (s * s))
    }

    /// Log-SNR coordinate ln(alpha/sigma): +inf at t = 0, -inf at t = 1,
    /// strictly decreasing in between.
    pub fn log_snr(&self, t: f64) -> Result<f64> {
        let (a, s) = self.alpha_sigma(t)?;
        Ok((a / s).ln())
    }

    /// Inverse of [`NoiseSchedule::log_snr`] by bisection; infinities map
    /// to the endpoints.
    pub fn time_of_log_snr(&self, lambda: f64) -> f64 {
        if lambda == f64::INFINITY {
            return 0.0;
        }
        if lambda == f64::NEG_INFINITY {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64); // log_snr(lo) > lambda > log_snr(hi)
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.log_snr(mid).expect("mid inside [0,1]") > lambda {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// An L x d block of continuous sequence state: clean embeddings, noised
/// states, velocities, and noise all share this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    len: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingSequence {
    pub fn new(len: usize, dim: usize, values: Vec<f32>) -> Result<EmbeddingSequence> {
        if values.len() != len * dim {
            return Err(DiffusionError::BadLength {
                len: values.len(),
                rows: len,
                dim,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::NonFinite {
                what: "embedding sequence values".into(),
            });
        }
        Ok(EmbeddingSequence { len, dim, values })
    }

    pub fn zeros(len: usize, dim: usize) -> EmbeddingSequence {
        EmbeddingSequence {
            len,
            dim,
            values: vec![0.0; len * dim],
        }
    }

    /// Fresh standard-normal draw, the epsilon of the forward process.
    pub fn standard_normal<R: Rng + ?Sized>(len: usize, dim: usize, rng: &mut R) -> EmbeddingSequence {
        let values = (0..len * dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
            .collect();
        EmbeddingSequence { len, dim, values }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.values.clone(), &[self.len, self.dim])
            .expect("length invariant holds")
    }

    pub fn from_tensor(t: &Tensor) -> Result<EmbeddingSequence> {
        match *t.shape() {
            [len, dim] => EmbeddingSequence::new(len, dim, t.to_vec()),
            _ => Err(DiffusionError::BadLength {
                len: t.numel(),
                rows: 0,
                dim: 0,
            }),
        }
    }

    fn check_same_shape(&self, other: &EmbeddingSequence) -> Result<()> {
        if self.len != other.len || self.dim != other.dim {
            return Err(DiffusionError::ShapeMismatch {
                lhs_len: self.len,
                lhs_dim: self.dim,
                rhs_len: other.len,
                rhs_dim: other.dim,
            });
        }
        Ok(())
    }

    fn combine(&self, ca: f64, other: &EmbeddingSequence, cb: f64) -> Result<EmbeddingSequence> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (ca * a as f64 + cb * b as f64) as f32)
            .collect();
        Ok(EmbeddingSequence {
            len: self.len,
            dim: self.dim,
            values,
        })
    }
}

/// x_t = alpha(t) x0 + sigma(t) eps.
pub fn forward_diffuse(
    x0: &EmbeddingSequence,
    eps: &EmbeddingSequence,
    schedule: &NoiseSchedule,
    t: f64,
) -> Result<EmbeddingSequence> {
    let (a, s) = schedule.alpha_sigma(t)?;
    x0.combine(a, eps, s)
}

/// v_t = alpha(t) eps - sigma(t) x0, the regression target of the
/// velocity-parameterized denoiser.
pub fn velocity_target(
    x0: &EmbeddingSequence,
    eps: &EmbeddingSequence,
    schedule: &NoiseSchedule,
    t: f64,
) -> Result<EmbeddingSequence> {
    let (a, s) = schedule.alpha_sigma(t)?;
    eps.combine(a, x0, -s)
}

/// Inverts the pair (forward_diffuse, velocity_target):
/// x0_hat = alpha x_t - sigma v_hat, eps_hat = sigma x_t + alpha v_hat.
/// Exact when v_hat is the true velocity, since alpha^2 + sigma^2 = 1.
pub fn recover_x0_eps(
    x_t: &EmbeddingSequence,
    v_hat: &EmbeddingSequence,
    schedule: &NoiseSchedule,
    t: f64,
) -> Result<(EmbeddingSequence, EmbeddingSequence)> {
    let (a, s) = schedule.alpha_sigma(t)?;
    let x0 = x_t.combine(a, v_hat, -s)?;
    let eps = x_t.combine(s, v_hat, a)?;
    Ok((x0, eps))
}

/// Time-dependent weighting of the regression loss.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossWeighting {
    Constant,
    /// min(SNR(t), gamma); finite everywhere, positive on [0, 1).
    SnrCapped { gamma: f64 },
}

impl Default for LossWeighting {
    fn default() -> Self {
        LossWeighting::Constant
    }
}

impl LossWeighting {
    pub fn weight(&self, schedule: &NoiseSchedule, t: f64) -> Result<f64> {
        match self {
            LossWeighting::Constant => {
                schedule.alpha_sigma(t)?; // still validates t
                Ok(1.0)
            }
            LossWeighting::SnrCapped { gamma } => Ok(schedule.snr(t)?.min(*gamma)),
        }
    }
}

/// w(t) times the mean squared error between prediction and target,
/// averaged over all L*d entries. Differentiable through `v_hat`.
pub fn diffusion_loss(
    v_hat: &Tensor,
    v_target: &EmbeddingSequence,
    weighting: &LossWeighting,
    schedule: &NoiseSchedule,
    t: f64,
) -> Result<Tensor> {
    if v_hat.shape() != [v_target.len(), v_target.dim()] {
        return Err(DiffusionError::ShapeMismatch {
            lhs_len: v_hat.shape().first().copied().unwrap_or(0),
            lhs_dim: v_hat.shape().get(1).copied().unwrap_or(0),
            rhs_len: v_target.len(),
            rhs_dim: v_target.dim(),
        });
    }
    if v_hat.data().iter().any(|v| !v.is_finite()) {
        return Err(DiffusionError::NonFinite {
            what: "velocity prediction".into(),
        });
    }
    let w = weighting.weight(schedule, t)?;
    let target = v_target.to_tensor();
    let diff = v_hat.add(&target.scale(-1.0)?)?;
    let loss = diff.mul(&diff)?.mean_all()?.scale(w as f32)?;
    Ok(loss)
}
