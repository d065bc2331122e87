use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

/// ADAM optimizer state, one first/second moment accumulator per parameter.
///
/// Moments and the update arithmetic run in `f64`; only the final parameter
/// values are rounded back to `f32`. Defaults: lr 1e-3, β₁ 0.9, β₂ 0.999,
/// ε 1e-8.
#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &Network, lr: f64) -> AdamState {
        AdamState::with_hyper(net, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(net: &Network, lr: f64, beta1: f64, beta2: f64, eps: f64) -> AdamState {
        let sizes: Vec<usize> = net.parameters().iter().map(|(_, t)| t.len()).collect();
        AdamState {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update. `grads` must line up with
    /// `net.parameters()`; non-finite gradients abort with a diagnostic
    /// naming the offending parameter.
    pub fn step(&mut self, net: &mut Network, grads: &[Tensor]) -> Result<()> {
        let mut params = net.parameters_mut();
        if grads.len() != params.len() {
            return Err(Error::ShapeMismatch {
                context: "AdamState::step",
                expected: vec![params.len()],
                got: vec![grads.len()],
            });
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    context: "AdamState::step",
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, (_, p)) in params.iter_mut().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let pd = p.data_mut();
            let gd = grads[idx].data();
            for k in 0..pd.len() {
                let g = gd[k] as f64;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                pd[k] = (pd[k] as f64 - self.lr * m_hat / (v_hat.sqrt() + self.eps)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::Layer;

    fn one_param_net(w0: f32) -> Network {
        let mut net = Network::new(vec![Layer::fully_connected_zeroed(1, 1)]);
        net.parameters_mut()[0].1.data_mut()[0] = w0;
        net
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut net = one_param_net(0.7);
        let mut adam = AdamState::new(&net, 1e-3);
        let grads = vec![
            Tensor::zeros(vec![1, 1]),
            Tensor::zeros(vec![1]),
        ];
        adam.step(&mut net, &grads).unwrap();
        assert_eq!(net.parameters()[0].1.data()[0], 0.7);
    }

    #[test]
    fn first_step_moves_against_the_gradient_by_about_lr() {
        for &g0 in &[2.5f32, -0.04, 11.0] {
            let mut net = one_param_net(0.0);
            let mut adam = AdamState::new(&net, 1e-3);
            let grads = vec![
                Tensor::new(vec![1, 1], vec![g0]).unwrap(),
                Tensor::zeros(vec![1]),
            ];
            adam.step(&mut net, &grads).unwrap();
            let w = net.parameters()[0].1.data()[0];
            assert!(w * g0 < 0.0, "step must oppose the gradient sign");
            assert!(
                ((w.abs() - 1e-3).abs() as f64) < 1e-5,
                "first-step magnitude {} should be ≈ lr",
                w.abs()
            );
        }
    }

    #[test]
    fn non_finite_gradients_abort_with_the_parameter_name() {
        let mut net = one_param_net(0.0);
        let mut adam = AdamState::new(&net, 1e-3);
        let grads = vec![
            Tensor::new(vec![1, 1], vec![f32::NAN]).unwrap(),
            Tensor::zeros(vec![1]),
        ];
        match adam.step(&mut net, &grads) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "layer0.weight"),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }

    #[test]
    fn adam_solves_a_small_least_squares_problem() {
        // Fit y = w·x on fixed data; the optimum is w* = Σxy/Σx² computed
        // directly as the oracle.
        let xs = [0.5f64, -1.0, 2.0, 0.25];
        let ys = [1.1f64, -2.1, 4.2, 0.55];
        let w_star = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>()
            / xs.iter().map(|x| x * x).sum::<f64>();
        let loss_star: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (w_star * x - y).powi(2))
            .sum();

        let mut net = one_param_net(0.0);
        let mut adam = AdamState::new(&net, 0.05);
        let mut losses = Vec::new();
        for _ in 0..200 {
            let w = net.parameters()[0].1.data()[0] as f64;
            let mut grad = 0.0;
            let mut loss = 0.0;
            for (x, y) in xs.iter().zip(&ys) {
                let r = w * x - y;
                loss += r * r;
                grad += 2.0 * r * x;
            }
            losses.push(loss);
            let grads = vec![
                Tensor::new(vec![1, 1], vec![grad as f32]).unwrap(),
                Tensor::zeros(vec![1]),
            ];
            adam.step(&mut net, &grads).unwrap();
        }
        let w = net.parameters()[0].1.data()[0] as f64;
        assert!((w - w_star).abs() < 1e-3, "w={w} vs w*={w_star}");
        assert!(
            losses[199] - loss_star < 1e-4,
            "final loss {} vs optimum {}",
            losses[199],
            loss_star
        );
    }
}
