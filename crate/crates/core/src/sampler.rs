//! Reverse-process generation: stochastic ancestral sampling and the
//! deterministic first- and second-order ODE solvers in log-SNR
//! coordinates, all driven by a velocity-prediction denoiser.

use thiserror::Error;

use crate::diffusion::{recover_x0_eps, DiffusionError, EmbeddingSequence, NoiseSchedule};
use crate::rng::rng_from_seed;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("sampler config: {reason}")]
    BadConfig { reason: String },
    #[error("denoiser returned shape {got_len}x{got_dim}, expected {want_len}x{want_dim}")]
    DenoiserShape {
        got_len: usize,
        got_dim: usize,
        want_len: usize,
        want_dim: usize,
    },
    #[error("denoiser evaluation failed: {message}")]
    DenoiserFailure { message: String },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

pub type Result<T> = std::result::Result<T, SamplerError>;

/// Anything that predicts a velocity field over embedding sequences.
pub trait Denoiser {
    fn velocity(&self, x_t: &EmbeddingSequence, t: f64) -> Result<EmbeddingSequence>;
}

impl<F> Denoiser for F
where
    F: Fn(&EmbeddingSequence, f64) -> Result<EmbeddingSequence>,
{
    fn velocity(&self, x_t: &EmbeddingSequence, t: f64) -> Result<EmbeddingSequence> {
        self(x_t, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Ancestral,
    Dpm1,
    Dpm2,
}

impl std::str::FromStr for Solver {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Solver, String> {
        match s {
            "ancestral" => Ok(Solver::Ancestral),
            "dpm1" => Ok(Solver::Dpm1),
            "dpm2" => Ok(Solver::Dpm2),
            other => Err(format!("unknown solver `{other}` (ancestral, dpm1, dpm2)")),
        }
    }
}

impl std::fmt::Display for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Solver::Ancestral => "ancestral",
            Solver::Dpm1 => "dpm1",
            Solver::Dpm2 => "dpm2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    UniformTime,
    UniformLogSnr,
}

/// Noise injected by the ancestral sampler at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    /// The exact posterior standard deviation of the forward chain.
    #[default]
    Posterior,
    /// No injected noise; the ancestral update becomes deterministic.
    Zero,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    pub solver: Solver,
    pub steps: usize,
    pub seed: u64,
    pub t_start: f64,
    pub t_end: f64,
    pub spacing: Spacing,
    pub ancestral_noise: NoiseLevel,
}

impl SamplerConfig {
    pub fn new(solver: Solver, steps: usize, seed: u64) -> SamplerConfig {
        SamplerConfig {
            solver,
            steps,
            seed,
            t_start: 1.0,
            t_end: 1e-3,
            spacing: Spacing::UniformTime,
            ancestral_noise: NoiseLevel::Posterior,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(SamplerError::BadConfig {
                reason: "steps must be at least 1".into(),
            });
        }
        if !(self.t_end > 0.0 && self.t_end < self.t_start && self.t_start <= 1.0) {
            return Err(SamplerError::BadConfig {
                reason: format!(
                    "need 0 < t_end < t_start <= 1, got t_start={} t_end={}",
                    self.t_start, self.t_end
                ),
            });
        }
        Ok(())
    }
}

/// Decreasing grid t_0 = t_start > ... > t_N = t_end with N = steps.
pub fn timesteps(config: &SamplerConfig, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    config.validate()?;
    let n = config.steps;
    let mut grid = Vec::with_capacity(n + 1);
    match config.spacing {
        Spacing::UniformTime => {
            for k in 0..=n {
                let frac = k as f64 / n as f64;
                grid.push(config.t_start + (config.t_end - config.t_start) * frac);
            }
        }
        Spacing::UniformLogSnr => {
            // log-SNR is -inf exactly at t=1; stand in with a point just
            // inside the boundary so interior spacing stays uniform.
            let lam_end = schedule.log_snr(config.t_end)?;
            let raw = schedule.log_snr(config.t_start)?;
            let lam_start = if raw.is_finite() {
                raw
            } else {
                schedule.log_snr(config.t_start - 1e-9)?
            };
            grid.push(config.t_start);
            for k in 1..n {
                let lam = lam_start + (lam_end - lam_start) * k as f64 / n as f64;
                grid.push(schedule.time_of_log_snr(lam));
            }
            grid.push(config.t_end);
        }
    }
    grid[0] = config.t_start;
    grid[n] = config.t_end;
    for w in grid.windows(2) {
        if !(w[1] < w[0]) {
            return Err(SamplerError::BadConfig {
                reason: format!("time grid not strictly decreasing near t={}", w[0]),
            });
        }
    }
    Ok(grid)
}

fn checked_velocity(
    denoiser: &dyn Denoiser,
    x: &EmbeddingSequence,
    t: f64,
) -> Result<EmbeddingSequence> {
    let v = denoiser.velocity(x, t)?;
    if v.len() != x.len() || v.dim() != x.dim() {
        return Err(SamplerError::DenoiserShape {
            got_len: v.len(),
            got_dim: v.dim(),
            want_len: x.len(),
            want_dim: x.dim(),
        });
    }
    Ok(v)
}

fn linear_combo(
    a: f64,
    x: &EmbeddingSequence,
    b: f64,
    y: &EmbeddingSequence,
    c: f64,
    z: Option<&EmbeddingSequence>,
) -> EmbeddingSequence {
    let values: Vec<f32> = (0..x.values().len())
        .map(|i| {
            let mut acc = a * x.values()[i] as f64 + b * y.values()[i] as f64;
            if let Some(z) = z {
                acc += c * z.values()[i] as f64;
            }
            acc as f32
        })
        .collect();
    EmbeddingSequence::new(x.len(), x.dim(), values).expect("finite linear combination")
}

/// DDPM-style ancestral chain. Each step recovers (x0_hat, eps_hat) and
/// moves to the next grid time with posterior noise (or none, in the
/// deterministic variant); the final step returns x0_hat directly.
/// The trace holds the state after every step, final state last.
pub fn ancestral_sample_with_trace(
    denoiser: &dyn Denoiser,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    len: usize,
    dim: usize,
) -> Result<(EmbeddingSequence, Vec<EmbeddingSequence>)> {
    let grid = timesteps(config, schedule)?;
    let mut rng = rng_from_seed(config.seed);
    let (_, sigma_start) = schedule.alpha_sigma(config.t_start)?;
    let noise = EmbeddingSequence::standard_normal(len, dim, &mut rng);
    let mut x = linear_combo(sigma_start, &noise, 0.0, &noise, 0.0, None);
    let mut trace = Vec::with_capacity(config.steps);

    for i in 0..config.steps {
        let t = grid[i];
        let t_next = grid[i + 1];
        let v = checked_velocity(denoiser, &x, t)?;
        let (x0_hat, eps_hat) = recover_x0_eps(&x, &v, schedule, t)?;
        if i + 1 == config.steps {
            x = x0_hat;
            trace.push(x.clone());
            break;
        }
        let (a_t, s_t) = schedule.alpha_sigma(t)?;
        let (a_n, s_n) = schedule.alpha_sigma(t_next)?;
        let eta = match config.ancestral_noise {
            NoiseLevel::Posterior => {
                let ratio = (a_t * a_t * s_n * s_n) / (a_n * a_n * s_t * s_t);
                (s_n * (1.0 - ratio).max(0.0).sqrt()).min(s_n)
            }
            NoiseLevel::Zero => 0.0,
        };
        let keep = (s_n * s_n - eta * eta).max(0.0).sqrt();
        if eta > 0.0 {
            let z = EmbeddingSequence::standard_normal(len, dim, &mut rng);
            x = linear_combo(a_n, &x0_hat, keep, &eps_hat, eta, Some(&z));
        } else {
            x = linear_combo(a_n, &x0_hat, keep, &eps_hat, 0.0, None);
        }
        trace.push(x.clone());
    }
    Ok((trace.last().expect("steps >= 1").clone(), trace))
}

pub fn ancestral_sample(
    denoiser: &dyn Denoiser,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    len: usize,
    dim: usize,
) -> Result<EmbeddingSequence> {
    Ok(ancestral_sample_with_trace(denoiser, config, schedule, len, dim)?.0)
}

/// Deterministic ODE solve in log-SNR coordinates, orders 1 and 2.
///
/// The order-1 update is the data-prediction exponential-integrator
/// step x' = (sigma'/sigma) x - alpha' (e^{-h} - 1) x0_hat with
/// h = logSNR' - logSNR, which is algebraically the DDIM step
/// alpha' x0_hat + sigma' eps_hat. Order 2 adds one midpoint
/// evaluation at the log-SNR midpoint. Both forms stay regular at the
/// pure-noise boundary where h is infinite: e^{-h} -> 0, and the
/// midpoint step collapses to its order-1 limit there.
pub fn dpm_solver_sample_with_trace(
    denoiser: &dyn Denoiser,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    len: usize,
    dim: usize,
) -> Result<(EmbeddingSequence, Vec<EmbeddingSequence>)> {
    let order = match config.solver {
        Solver::Dpm1 => 1,
        Solver::Dpm2 => 2,
        Solver::Ancestral => {
            return Err(SamplerError::BadConfig {
                reason: "ODE solver requires dpm1 or dpm2".into(),
            })
        }
    };
    let grid = timesteps(config, schedule)?;
    let mut rng = rng_from_seed(config.seed);
    let (_, sigma_start) = schedule.alpha_sigma(config.t_start)?;
    let noise = EmbeddingSequence::standard_normal(len, dim, &mut rng);
    let mut x = linear_combo(sigma_start, &noise, 0.0, &noise, 0.0, None);
    let mut trace = Vec::with_capacity(config.steps);

    for i in 0..config.steps {
        let t = grid[i];
        let t_next = grid[i + 1];
        let (_, s_t) = schedule.alpha_sigma(t)?;
        let (a_n, s_n) = schedule.alpha_sigma(t_next)?;
        let h = schedule.log_snr(t_next)? - schedule.log_snr(t)?;

        let v = checked_velocity(denoiser, &x, t)?;
        let (x0_hat, _) = recover_x0_eps(&x, &v, schedule, t)?;

        let x0_for_step = if order == 2 && h.is_finite() {
            let lam_mid = schedule.log_snr(t)? + 0.5 * h;
            let t_mid = schedule.time_of_log_snr(lam_mid);
            let (a_m, s_m) = schedule.alpha_sigma(t_mid)?;
            let u = linear_combo(
                s_m / s_t,
                &x,
                -a_m * (-0.5 * h).exp_m1(),
                &x0_hat,
                0.0,
                None,
            );
            let v_mid = checked_velocity(denoiser, &u, t_mid)?;
            let (x0_mid, _) = recover_x0_eps(&u, &v_mid, schedule, t_mid)?;
            x0_mid
        } else {
            // order 1, or the infinite first interval where the midpoint
            // update degenerates to the order-1 step
            x0_hat
        };
        x = linear_combo(s_n / s_t, &x, -a_n * (-h).exp_m1(), &x0_for_step, 0.0, None);
        trace.push(x.clone());
    }
    Ok((trace.last().expect("steps >= 1").clone(), trace))
}

pub fn dpm_solver_sample(
    denoiser: &dyn Denoiser,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    len: usize,
    dim: usize,
) -> Result<EmbeddingSequence> {
    Ok(dpm_solver_sample_with_trace(denoiser, config, schedule, len, dim)?.0)
}

/// Dispatch on the configured solver.
pub fn sample(
    denoiser: &dyn Denoiser,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    len: usize,
    dim: usize,
) -> Result<EmbeddingSequence> {
    match config.solver {
        Solver::Ancestral => ancestral_sample(denoiser, config, schedule, len, dim),
        Solver::Dpm1 | Solver::Dpm2 => dpm_solver_sample(denoiser, config, schedule, len, dim),
    }
}

/// Closed-form denoisers for validating the samplers.
pub mod analytic {
    use super::*;

    /// Exact velocity for a dataset holding the single point x0*.
    pub struct ConstantPointDenoiser {
        pub point: EmbeddingSequence,
        pub schedule: NoiseSchedule,
    }

    impl Denoiser for ConstantPointDenoiser {
        fn velocity(&self, x_t: &EmbeddingSequence, t: f64) -> Result<EmbeddingSequence> {
            // x0_hat = point exactly: v = (alpha x_t - x0*) / sigma
            let (a, s) = self.schedule.alpha_sigma(t)?;
            let values = x_t
                .values()
                .iter()
                .zip(self.point.values())
                .map(|(&x, &p)| ((a * x as f64 - p as f64) / s) as f32)
                .collect();
            Ok(EmbeddingSequence::new(x_t.len(), x_t.dim(), values)?)
        }
    }

    /// Optimal velocity when every coordinate of x0 is iid N(mean, var):
    /// the posterior mean of x0 given x_t is linear in x_t, and
    /// v* = (alpha x_t - E[x0 | x_t]) / sigma.
    pub struct GaussianDenoiser {
        pub mean: f64,
        pub var: f64,
        pub schedule: NoiseSchedule,
    }

    impl Denoiser for GaussianDenoiser {
        fn velocity(&self, x_t: &EmbeddingSequence, t: f64) -> Result<EmbeddingSequence> {
            let (a, s) = self.schedule.alpha_sigma(t)?;
            let denom = a * a * self.var + s * s;
            let values = x_t
                .values()
                .iter()
                .map(|&x| {
                    let post = (self.mean * s * s + self.var * a * x as f64) / denom;
                    ((a * x as f64 - post) / s) as f32
                })
                .collect();
            Ok(EmbeddingSequence::new(x_t.len(), x_t.dim(), values)?)
        }
    }
}
