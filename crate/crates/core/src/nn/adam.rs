use super::{Network, Tensor};

/// Adam with bias-corrected moments. Moments are kept in `f64`; parameters
/// are rounded back to `f32` precision after every step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` mirrors the layout of the network's
    /// trainable tensors.
    pub fn step(&mut self, net: &mut Network, grads: &[Vec<Tensor>]) {
        let flat: Vec<&Tensor> = grads.iter().flatten().collect();
        if self.m.is_empty() {
            self.m = flat.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((param, g), m), v) in net.trainable_mut().zip(flat).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &gi), mi), vi) in param.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *p = (*p - self.lr * m_hat / (v_hat.sqrt() + self.epsilon)) as f32 as f64;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, NetworkSpec};

    fn tiny() -> Network {
        let spec =
            NetworkSpec::relaxed([1, 2, 2, 2], vec![LayerSpec::Flatten, LayerSpec::Fc { input: 8, output: 1 }], 1.0)
                .unwrap();
        Network::new(spec, 3).unwrap()
    }

    fn grads_like(net: &Network, value: f64) -> Vec<Vec<Tensor>> {
        net.layers()
            .iter()
            .map(|l| l.trainable.iter().map(|t| Tensor::filled(t.shape().to_vec(), value)).collect())
            .collect()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = tiny();
        let before = net.clone();
        let mut adam = Adam::new(1e-3);
        adam.step(&mut net, &grads_like(&before, 0.0));
        assert_eq!(net, before);
    }

    /// First bias-corrected step: m_hat = g, v_hat = g^2, so the update is
    /// lr * g / (|g| + eps).
    #[test]
    fn first_step_is_lr_times_sign() {
        for &g in &[0.37, -2.5, 1e-3] {
            let mut net = tiny();
            let before = net.clone();
            let lr = 1e-2;
            let mut adam = Adam::new(lr);
            adam.step(&mut net, &grads_like(&before, g));
            let expected_step = lr * g / (g.abs() + 1e-8);
            for (a, b) in net.layers()[1].trainable[0].data().iter().zip(before.layers()[1].trainable[0].data()) {
                let moved = b - a;
                assert!((moved - expected_step).abs() < 1e-6 * lr.max(1.0), "{moved} vs {expected_step}");
                assert!((moved - lr * g.signum()).abs() < 1e-6);
            }
        }
    }
}
