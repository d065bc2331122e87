use rand::Rng;

use crate::error::{Error, Result};
use crate::layer::{Layer, LayerCache, Tangent};
use crate::tensor::Tensor;

/// Forward-pass mode. Dropout is active only in `Train`; `Eval` is fully
/// deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A plain sequence of layers.
///
/// Training flow: `forward_train` caches every layer input, `backward`
/// consumes that cache exactly once and returns gradients in parameter-
/// registry order (ascending layer index, weight before bias). Inference
/// (`forward`, `jacobian`) never mutates the network.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    cache: Option<Vec<LayerCache>>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Network {
        Network {
            layers,
            cache: None,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn has_dropout(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Dropout { .. }))
    }

    /// Output shape as a pure function of the input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input.to_vec();
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(shape)
    }

    /// Deterministic evaluation-mode forward pass.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut cur = input.clone();
        for layer in &self.layers {
            cur = layer.forward_eval(&cur)?;
        }
        Ok(cur)
    }

    /// Train-mode forward pass; caches layer inputs for `backward` and draws
    /// dropout masks from `rng`.
    pub fn forward_train(&mut self, input: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        let mut cur = input.clone();
        let mut entries = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, entry) = layer.forward_train(&cur, rng)?;
            entries.push(entry);
            cur = out;
        }
        self.cache = Some(entries);
        Ok(cur)
    }

    /// Backward pass over the most recent `forward_train` call.
    ///
    /// Returns `(parameter_gradients, input_gradient)`; the parameter list
    /// lines up one-to-one with [`Network::parameters`]. The cached forward
    /// state is consumed: a second call without a new forward errors.
    pub fn backward(&mut self, output_grad: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        let cache = self.cache.take().ok_or(Error::NoForwardCache)?;
        let expected = {
            let last = cache.last().ok_or(Error::NoForwardCache)?;
            self.layers
                .last()
                .expect("cache implies at least one layer")
                .output_shape(last.input.shape())?
        };
        if output_grad.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch {
                context: "Network::backward",
                expected,
                got: output_grad.shape().to_vec(),
            });
        }

        let mut g: Vec<f64> = output_grad.data().iter().map(|&v| v as f64).collect();
        // Collected in reverse layer order, flipped at the end.
        let mut rev_param_grads: Vec<(Vec<usize>, Vec<usize>, Vec<f64>, Vec<f64>)> = Vec::new();
        for (layer, entry) in self.layers.iter().zip(&cache).rev() {
            let (pg, xg) = layer.backward(entry, &g);
            if let Some((wg, bg)) = pg {
                let (ws, bs) = match layer {
                    Layer::FullyConnected { weight, bias }
                    | Layer::Conv2d { weight, bias, .. }
                    | Layer::ConvTranspose2d { weight, bias, .. } => {
                        (weight.shape().to_vec(), bias.shape().to_vec())
                    }
                    _ => unreachable!("only parameterized layers return gradients"),
                };
                rev_param_grads.push((ws, bs, wg, bg));
            }
            g = xg;
        }

        let mut grads = Vec::with_capacity(rev_param_grads.len() * 2);
        for (ws, bs, wg, bg) in rev_param_grads.into_iter().rev() {
            grads.push(Tensor::new(ws, wg.into_iter().map(|v| v as f32).collect())?);
            grads.push(Tensor::new(bs, bg.into_iter().map(|v| v as f32).collect())?);
        }
        let input_grad = Tensor::new(
            cache[0].input.shape().to_vec(),
            g.into_iter().map(|v| v as f32).collect(),
        )?;
        Ok((grads, input_grad))
    }

    /// Full Jacobian of the network at `input`, shaped `[m, n]` for an
    /// m-element output and n-element input.
    ///
    /// Computed by pushing the identity tangent bundle forward through each
    /// layer's linearization — the product of the per-layer Jacobians taken
    /// right to left, which keeps every intermediate at `n` columns. Requesting
    /// a Jacobian through train-mode dropout is refused: the sampled masks
    /// make the map non-deterministic.
    pub fn jacobian(&self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Train && self.has_dropout() {
            return Err(Error::NonDifferentiable(
                "train-mode dropout randomizes the map; linearize in eval mode".into(),
            ));
        }
        let n = input.len();
        let mut t = Tangent::identity(n);
        let mut cur = input.clone();
        for layer in &self.layers {
            t = layer.jvp(&cur, &t);
            cur = layer.forward_eval(&cur)?;
        }
        let m = cur.len();
        Tensor::new(
            vec![m, n],
            t.data.into_iter().map(|v| v as f32).collect(),
        )
    }

    /// Named parameters in registry order: ascending layer index, weight
    /// before bias. Names are stable and used by the checkpoint format.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::FullyConnected { weight, bias }
                | Layer::Conv2d { weight, bias, .. }
                | Layer::ConvTranspose2d { weight, bias, .. } => {
                    out.push((format!("layer{i}.weight"), weight));
                    out.push((format!("layer{i}.bias"), bias));
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::FullyConnected { weight, bias }
                | Layer::Conv2d { weight, bias, .. }
                | Layer::ConvTranspose2d { weight, bias, .. } => {
                    out.push((format!("layer{i}.weight"), weight));
                    out.push((format!("layer{i}.bias"), bias));
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::new(vec![
            Layer::fully_connected(4, 8, &mut rng),
            Layer::relu(),
            Layer::fully_connected(8, 3, &mut rng),
        ])
    }

    #[test]
    fn eval_forward_is_deterministic_and_finite() {
        let net = small_net(3);
        let x = Tensor::from_vec(vec![0.3, -0.7, 1.1, 0.0]);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
        assert!(a.all_finite());
    }

    #[test]
    fn backward_without_forward_errors() {
        let mut net = small_net(4);
        let g = Tensor::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(matches!(net.backward(&g), Err(Error::NoForwardCache)));
    }

    #[test]
    fn backward_consumes_the_cache() {
        let mut net = small_net(5);
        let x = Tensor::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        net.forward_train(&x, &mut rng).unwrap();
        let g = Tensor::from_vec(vec![1.0, -1.0, 0.5]);
        assert!(net.backward(&g).is_ok());
        assert!(matches!(net.backward(&g), Err(Error::NoForwardCache)));
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mut net = small_net(6);
        let x = Tensor::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        net.forward_train(&x, &mut rng).unwrap();
        let (grads, xg) = net.backward(&Tensor::zeros(vec![3])).unwrap();
        assert!(grads.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(xg.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_of_linear_layer_is_the_weight_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layer = Layer::fully_connected(4, 6, &mut rng);
        let w = match &layer {
            Layer::FullyConnected { weight, .. } => weight.clone(),
            _ => unreachable!(),
        };
        let net = Network::new(vec![layer]);
        let x = Tensor::from_vec(vec![0.5, -0.25, 0.0, 2.0]);
        let j = net.jacobian(&x, Mode::Eval).unwrap();
        assert_eq!(j.shape(), &[6, 4]);
        assert_eq!(j.data(), w.data());
    }

    #[test]
    fn jacobian_in_train_mode_with_dropout_is_refused() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = Network::new(vec![
            Layer::fully_connected(4, 4, &mut rng),
            Layer::dropout(0.5),
        ]);
        let x = Tensor::from_vec(vec![1.0; 4]);
        assert!(matches!(
            net.jacobian(&x, Mode::Train),
            Err(Error::NonDifferentiable(_))
        ));
        assert!(net.jacobian(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn parameter_registry_is_stable() {
        let net = small_net(12);
        let names: Vec<String> = net.parameters().into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            vec!["layer0.weight", "layer0.bias", "layer2.weight", "layer2.bias"]
        );
    }
}
