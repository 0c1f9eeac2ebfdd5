//! Adaptive-moment gradient descent and the cosine decay schedule.

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    first: Vec<f64>,
    second: Vec<f64>,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
}

impl Adam {
    pub fn new(parameter_count: usize) -> Self {
        Adam {
            first: vec![0.0; parameter_count],
            second: vec![0.0; parameter_count],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over the whole vector; `grads` must match the length
    /// the optimizer was built with.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grads.len(), self.first.len());
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first[i] = self.beta1 * self.first[i] + (1.0 - self.beta1) * g;
            self.second[i] = self.beta2 * self.second[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first[i] / bc1;
            let v_hat = self.second[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Cosine decay from the base rate at step 0 to zero at the horizon.
#[derive(Debug, Clone, Copy)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub horizon: u64,
}

impl CosineSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        if self.horizon == 0 {
            return self.base_lr;
        }
        let progress = (step.min(self.horizon) as f64) / self.horizon as f64;
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_monotonicity() {
        let sched = CosineSchedule {
            base_lr: 3e-4,
            horizon: 1000,
        };
        assert_eq!(sched.lr(0), 3e-4);
        assert!(sched.lr(1000) <= 1e-3 * 3e-4);
        assert!(sched.lr(2000) <= 1e-3 * 3e-4);
        let mut prev = f64::INFINITY;
        for step in 0..=1000 {
            let lr = sched.lr(step);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let mut params = vec![0.5, -1.25, 3.0];
        let before = params.clone();
        let mut adam = Adam::new(3);
        adam.step(&mut params, &[1.0, -2.0, 0.3], 0.0);
        adam.step(&mut params, &[0.4, 0.1, -0.9], 0.0);
        assert_eq!(params, before);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut params = vec![5.0];
        let mut adam = Adam::new(1);
        for _ in 0..2000 {
            let grad = vec![2.0 * params[0]];
            adam.step(&mut params, &grad, 1e-2);
        }
        assert!(params[0].abs() < 1e-2);
    }
}
