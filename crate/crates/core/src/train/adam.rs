use super::TrainError;
use crate::tensor::Tensor;

/// Adam moments plus the hyperparameters that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimState {
    /// Zero moments shaped like `params`.
    pub fn new(params: &[Tensor], lr: f64, decay: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Step size used by update number `t` (1-based).
    pub fn lr_at(&self, t: u64) -> f64 {
        self.lr / (1.0 + self.decay * t as f64)
    }

    /// Step size of the most recent update.
    pub fn current_lr(&self) -> f64 {
        self.lr_at(self.t.max(1))
    }

    /// One bias-corrected Adam update in place; returns the step size used.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<f64, TrainError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(TrainError::Misaligned(format!(
                "{} parameters, {} gradients, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(TrainError::Misaligned(format!(
                    "tensor {i}: parameter {:?}, gradient {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
        }
        self.t += 1;
        let lr_t = self.lr_at(self.t);
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((theta, &gi), (mi, vi)) in it {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta -= lr_t * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(lr_t)
    }
}
