use crate::error::{Error, Result};

/// One parameter handed to [`Adam::step`]: its name (for diagnostics), its
/// values and the gradient of the objective with respect to them.
pub struct Update<'a> {
    pub name: &'a str,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

/// Adam with bias correction. Moment buffers are created on the first step
/// and bound positionally to the parameters passed then.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update. All gradients are validated before any parameter
    /// is touched, so a failed step leaves parameters and state unchanged.
    pub fn step(&mut self, updates: &mut [Update<'_>]) -> Result<()> {
        for u in updates.iter() {
            if u.value.len() != u.grad.len() {
                return Err(Error::dim(
                    "adam_step",
                    format!(
                        "`{}` has {} values but {} gradients",
                        u.name,
                        u.value.len(),
                        u.grad.len()
                    ),
                ));
            }
            if u.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: u.name.to_string(),
                });
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = updates.iter().map(|u| vec![0.0; u.value.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != updates.len()
            || self
                .first_moment
                .iter()
                .zip(updates.iter())
                .any(|(m, u)| m.len() != u.value.len())
        {
            return Err(Error::dim(
                "adam_step",
                "parameter set differs from the one the optimizer was started with",
            ));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((u, m), v) in updates
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for i in 0..u.value.len() {
                let g = u.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                u.value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
