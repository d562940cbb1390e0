use super::{Matrix, ParamTensor};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { learning_rate: 5e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter moment accumulators for one parameter group.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub first_moment: Vec<Matrix>,
    pub second_moment: Vec<Matrix>,
    pub step_count: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient entry was NaN or infinite; nothing changed.
    SkippedNonFinite,
}

impl AdamState {
    pub fn new(params: &[ParamTensor]) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        Self { first_moment: zeros(), second_moment: zeros(), step_count: 0 }
    }
}

impl Adam {
    /// Effective learning rate for a group scaled by `lr_scale`.
    pub fn effective_lr(&self, lr_scale: f64) -> f64 {
        self.learning_rate * lr_scale
    }

    /// One bias-corrected Adam update of `params` from their `grad` buffers.
    pub fn step(&self, params: &mut [ParamTensor], state: &mut AdamState, lr_scale: f64) -> StepOutcome {
        assert_eq!(params.len(), state.first_moment.len(), "adam state does not match parameter group");
        if params.iter().any(|p| !p.grad.is_finite()) {
            log::warn!("skipping optimizer step: non-finite gradient");
            return StepOutcome::SkippedNonFinite;
        }
        state.step_count += 1;
        let t = state.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = self.effective_lr(lr_scale);
        for ((p, m), v) in params.iter_mut().zip(&mut state.first_moment).zip(&mut state.second_moment) {
            assert_eq!(p.value.shape(), m.shape(), "adam moment shape mismatch for {}", p.name);
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g).zip(md.iter_mut()).zip(vd.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        StepOutcome::Applied
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(groups: &mut [&mut [ParamTensor]], max_norm: f64) -> f64 {
    let norm = groups
        .iter()
        .flat_map(|g| g.iter())
        .flat_map(|p| p.grad.data().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in groups.iter_mut() {
            for p in g.iter_mut() {
                p.grad.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64) -> ParamTensor {
        ParamTensor::new("p", Matrix::scalar(v))
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![param(1.25)];
        let mut s = AdamState::new(&p);
        let adam = Adam::default();
        for _ in 0..10 {
            assert_eq!(adam.step(&mut p, &mut s, 1.0), StepOutcome::Applied);
        }
        assert_eq!(p[0].value.data()[0], 1.25);
        assert_eq!(s.step_count, 10);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut p = vec![param(0.0)];
        p[0].grad = Matrix::scalar(2.0);
        let mut s = AdamState::new(&p);
        let adam = Adam::default();
        for _ in 0..50 {
            adam.step(&mut p, &mut s, 1.0);
        }
        assert!(p[0].value.data()[0] < 0.0);
        // bias-corrected Adam moves ~lr per step for a constant gradient
        assert!((p[0].value.data()[0] + 50.0 * 5e-4).abs() < 1e-6);
    }

    #[test]
    fn encoder_scale() {
        let adam = Adam { learning_rate: 5e-4, ..Adam::default() };
        assert!((adam.effective_lr(0.3) - 1.5e-4).abs() < 1e-18);
    }

    #[test]
    fn nan_gradient_skips() {
        let mut p = vec![param(1.0)];
        p[0].grad = Matrix::scalar(f64::NAN);
        let mut s = AdamState::new(&p);
        assert_eq!(Adam::default().step(&mut p, &mut s, 1.0), StepOutcome::SkippedNonFinite);
        assert_eq!(p[0].value.data()[0], 1.0);
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut a = vec![param(0.0), param(0.0)];
        a[0].grad = Matrix::scalar(3.0);
        a[1].grad = Matrix::scalar(4.0);
        let n = clip_grad_norm(&mut [&mut a[..]], 1.0);
        assert_eq!(n, 5.0);
        assert!((a[0].grad.data()[0] - 0.6).abs() < 1e-12);
    }
}
