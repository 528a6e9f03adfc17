//! AdamW optimizer with global gradient-norm clipping and decoupled
//! weight decay. The learning rate is supplied per step so schedules
//! live with the training loop, not here.

use super::{Result, Tensor, TensorError};

/// Parameters in a stable order, each with a diagnostic name.
pub type NamedParams = Vec<(String, Tensor)>;

pub struct AdamState {
    first_moment: Vec<Vec<f32>>,
    second_moment: Vec<Vec<f32>>,
    step_count: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    grad_clip_norm: f64,
}

impl AdamState {
    /// `grad_clip_norm <= 0` disables clipping.
    pub fn new(
        params: &NamedParams,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
        grad_clip_norm: f64,
    ) -> AdamState {
        AdamState {
            first_moment: params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
            second_moment: params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
            step_count: 0,
            beta1,
            beta2,
            eps,
            weight_decay,
            grad_clip_norm,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update from the gradients currently stored on `params`
    /// (zeros for parameters the loss never touched). Clears nothing;
    /// callers zero gradients before the next backward pass.
    ///
    /// Returns the pre-clip global gradient norm.
    pub fn step(&mut self, params: &NamedParams, lr: f64) -> Result<f64> {
        assert_eq!(
            params.len(),
            self.first_moment.len(),
            "optimizer state was built for a different parameter list"
        );
        let grads: Vec<Vec<f32>> = params.iter().map(|(_, p)| p.grad_or_zeros()).collect();
        let mut sq_sum = 0.0f64;
        for ((name, _), g) in params.iter().zip(&grads) {
            for &v in g {
                if !v.is_finite() {
                    return Err(TensorError::NonFiniteGrad { name: name.clone() });
                }
                sq_sum += v as f64 * v as f64;
            }
        }
        let norm = sq_sum.sqrt();
        let clip = if self.grad_clip_norm > 0.0 && norm > self.grad_clip_norm {
            self.grad_clip_norm / norm
        } else {
            1.0
        };

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for (i, (_, p)) in params.iter().enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            debug_assert_eq!(m.len(), grads[i].len());
            let mut data = p.to_vec();
            for j in 0..data.len() {
                let g = grads[i][j] as f64 * clip;
                let mj = self.beta1 * m[j] as f64 + (1.0 - self.beta1) * g;
                let vj = self.beta2 * v[j] as f64 + (1.0 - self.beta2) * g * g;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let m_hat = mj / bc1;
                let v_hat = vj / bc2;
                let x = data[j] as f64;
                data[j] = (x - lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * x))
                    as f32;
            }
            p.set_data(&data)?;
        }
        Ok(norm)
    }
}
