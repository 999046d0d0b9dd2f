/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One descent step on `params` along `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "adam state length");
        assert_eq!(grads.len(), self.m.len(), "gradient length");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = self.lr / bc1;
        for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step * *m / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut adam = Adam::new(1, 0.1);
        let mut p = [0.0];
        adam.step(&mut p, &[1.0]);
        assert!((p[0] + 0.1).abs() < 1e-6);
        let mut adam = Adam::new(2, 0.01);
        let mut p = [1.0, 1.0];
        adam.step(&mut p, &[-250.0, 3e-3]);
        assert!((p[0] - 1.01).abs() < 1e-6);
        assert!((p[1] - 0.99).abs() < 1e-4);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(3, 0.5);
        let mut p = [1.0, -2.0, 3.0];
        for _ in 0..10 {
            adam.step(&mut p, &[0.0; 3]);
        }
        assert_eq!(p, [1.0, -2.0, 3.0]);
        assert_eq!(adam.steps(), 10);
    }

    #[test]
    fn identical_inputs_identical_trajectories() {
        let grads = [[0.3, -1.2], [0.1, 0.7], [-2.0, 0.05]];
        let run = || {
            let mut adam = Adam::new(2, 1e-3);
            let mut p = [0.5, 0.25];
            for g in &grads {
                adam.step(&mut p, g);
            }
            p
        };
        assert_eq!(run().map(f64::to_bits), run().map(f64::to_bits));
    }
}
