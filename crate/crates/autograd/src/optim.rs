use crate::{ModelParams, Result, TensorError};

/// Adam with bias correction.
#[derive(Clone, Copy, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam { lr, ..Self::default() }
    }

    /// Applies one update to every parameter and clears the gradients.
    ///
    /// Fails without touching anything if some parameter has no gradient.
    pub fn step(&self, params: &mut ModelParams) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(TensorError::Contract(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(p) = params.params().find(|p| p.grad.is_none()) {
            return Err(TensorError::Contract(format!("parameter '{}' has no gradient", p.name)));
        }
        for p in params.params_mut() {
            let grad = p.grad.take().expect("checked above");
            p.step += 1;
            let bc1 = 1.0 - self.beta1.powi(p.step as i32);
            let bc2 = 1.0 - self.beta2.powi(p.step as i32);
            let values = p.value.data_mut();
            for (i, &g) in grad.data().iter().enumerate() {
                let m = &mut p.first_moment[i];
                let v = &mut p.second_moment[i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Halves the learning rate when the loss stops improving.
///
/// An epoch counts as an improvement when its loss is below the best loss so
/// far by more than `threshold`. The epoch that sets the best value starts a
/// new stall window; once the window spans `patience` epochs the rate is
/// reduced (never below `min_lr`) and the window restarts.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    pub threshold: f64,
    best: f64,
    stalled: usize,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        PlateauScheduler {
            patience: 20,
            factor: 0.5,
            min_lr: 1e-4,
            threshold: 1e-4,
            best: f64::INFINITY,
            stalled: 0,
        }
    }
}

impl PlateauScheduler {
    pub fn step(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best - self.threshold {
            self.best = loss;
            self.stalled = 1;
            return lr;
        }
        self.stalled += 1;
        if self.stalled >= self.patience {
            self.stalled = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Learning rate after replaying `history` through a default scheduler.
pub fn plateau_lr(history: &[f64], lr: f64) -> f64 {
    let mut sched = PlateauScheduler::default();
    history.iter().fold(lr, |lr, &loss| sched.step(loss, lr))
}
