use super::matrix::Matrix;
use super::param::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer with bias-corrected moment estimates.
///
/// Moment buffers are allocated on the first step, one per parameter in the
/// model's visit order.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    first_moment: Vec<Matrix>,
    second_moment: Vec<Matrix>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step<P: Parameterized + ?Sized>(&mut self, model: &mut P) {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let first = &mut self.first_moment;
        let second = &mut self.second_moment;
        let mut slot = 0;
        model.visit_params(&mut |p| {
            if first.len() == slot {
                first.push(Matrix::zeros(p.value.rows(), p.value.cols()));
                second.push(Matrix::zeros(p.value.rows(), p.value.cols()));
            }
            let (m, v) = (&mut first[slot], &mut second[slot]);
            assert_eq!(m.shape(), p.value.shape(), "moment shape for {}", p.name());
            let values = p.value.data_mut();
            for (((w, &g), mi), vi) in values
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            p.grad.fill(0.0);
            slot += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::param::Param;

    struct Scalar(Param);

    impl Parameterized for Scalar {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
            f(&mut self.0);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = Scalar(Param::new("w", Matrix::row_vector(&[0.3, -1.2])));
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut s);
        }
        assert_eq!(s.0.value().data(), &[0.3, -1.2]);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = Scalar(Param::new("w", Matrix::row_vector(&[2.0])));
        s.0.grad_mut().data_mut()[0] = 1.0;
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut s);
        // m̂ = 1, v̂ = 1, so Δ = -lr·1/(1+ε)
        let delta = s.0.value().get(0, 0) - 2.0;
        assert!((delta + 0.001).abs() < 1e-10, "{delta}");
        assert_eq!(s.0.grad().data(), &[0.0]);
    }

    #[test]
    fn quadratic_step_moves_toward_minimizer() {
        // f(w) = (w-3)², gradient 2(w-3)
        for start in [-4.0, 0.5, 10.0] {
            let mut s = Scalar(Param::new("w", Matrix::row_vector(&[start])));
            s.0.grad_mut().data_mut()[0] = 2.0 * (start - 3.0);
            Adam::new(AdamConfig::default()).step(&mut s);
            let after = s.0.value().get(0, 0);
            assert!((after - 3.0).abs() < (start - 3.0_f64).abs());
        }
    }
}
