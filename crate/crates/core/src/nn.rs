//! Minimal dense network substrate used by the TD3 agent.
//!
//! Everything is `f64`. Batches are row-major: one sample per row, so a
//! layer computes `x · W + b` with `W` shaped `(fan_in, fan_out)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: &'static str,
    },
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("non-finite parameter in layer {layer} after update")]
    NonFiniteParameter { layer: usize },
    #[error("polyak rate {0} outside [0, 1]")]
    PolyakRate(f64),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => x.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => x.mapv_inplace(f64::tanh),
        }
    }

    /// Multiplies `grad` in place by the activation derivative, given the
    /// pre-activation `pre` and the activation output `out`.
    fn backprop(self, grad: &mut Array2<f64>, pre: &Array2<f64>, out: &Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => Zip::from(grad).and(pre).for_each(|g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(grad).and(out).for_each(|g, &y| *g *= 1.0 - y * y),
        }
    }
}

/// One affine layer. Also used as the container for gradients and Adam
/// moments, which share the parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Self {
        Dense {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    hidden: Activation,
    output: Activation,
}

/// Intermediate values recorded by [`Mlp::forward_trace`], consumed by
/// [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl Mlp {
    /// Builds a network with layer widths `sizes` (input first, output last).
    /// Parameters are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output widths");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_fn((fan_in, fan_out), |_| {
                        rng.random_range(-bound..=bound)
                    }),
                    bias: Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..=bound)),
                }
            })
            .collect();
        Mlp {
            layers,
            hidden,
            output,
        }
    }

    /// Builds a network from explicit layers. Shapes must chain.
    pub fn from_layers(layers: Vec<Dense>, hidden: Activation, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(NnError::Architecture("no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.ncols() != l.bias.len() {
                return Err(NnError::Dimension {
                    expected: l.weights.ncols(),
                    actual: l.bias.len(),
                    context: "bias width",
                });
            }
            if i > 0 && layers[i - 1].weights.ncols() != l.weights.nrows() {
                return Err(NnError::Dimension {
                    expected: layers[i - 1].weights.ncols(),
                    actual: l.weights.nrows(),
                    context: "layer chaining",
                });
            }
        }
        Ok(Mlp {
            layers,
            hidden,
            output,
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weights.nrows()];
        s.extend(self.layers.iter().map(|l| l.weights.ncols()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weights.ncols()).unwrap_or(0)
    }

    pub fn activations(&self) -> (Activation, Activation) {
        (self.hidden, self.output)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(NnError::Dimension {
                expected: self.input_dim(),
                actual: width,
                context: "network input",
            });
        }
        Ok(())
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let batch = x.insert_axis(Axis(0));
        Ok(self.forward_batch(batch)?.index_axis_move(Axis(0), 0))
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weights);
            z += &layer.bias;
            self.activation_for(i).apply(&mut z);
            h = z;
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: ArrayView2<f64>) -> Result<ForwardTrace> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weights);
            z += &layer.bias;
            let mut a = z.clone();
            self.activation_for(i).apply(&mut a);
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok(ForwardTrace {
            inputs,
            pre,
            output: h,
        })
    }

    /// Reverse-mode pass. `grad_output` is dL/d(output) for every row of the
    /// traced batch; the returned gradients are summed over rows. Also returns
    /// dL/d(input), which the actor update needs from the critic.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_output: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if trace.inputs.len() != self.layers.len() {
            return Err(NnError::Architecture(format!(
                "trace has {} layers, network has {}",
                trace.inputs.len(),
                self.layers.len()
            )));
        }
        if grad_output.dim() != trace.output.dim() {
            return Err(NnError::Dimension {
                expected: trace.output.ncols(),
                actual: grad_output.ncols(),
                context: "upstream gradient",
            });
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_output.to_owned();
        for i in (0..self.layers.len()).rev() {
            let out = if i + 1 == self.layers.len() {
                &trace.output
            } else {
                &trace.inputs[i + 1]
            };
            self.activation_for(i).backprop(&mut delta, &trace.pre[i], out);
            let layer = &self.layers[i];
            grads.push(Dense {
                weights: trace.inputs[i].t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            delta = delta.dot(&layer.weights.t());
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Dense>,
    second: Vec<Dense>,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        let zeros: Vec<Dense> = net.layers.iter().map(Dense::zeros_like).collect();
        AdamState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    fn matches(&self, net: &Mlp) -> bool {
        self.first.len() == net.layers.len()
            && self
                .first
                .iter()
                .zip(&net.layers)
                .all(|(m, l)| m.weights.dim() == l.weights.dim() && m.bias.dim() == l.bias.dim())
    }
}

/// One bias-corrected Adam step. Rejects non-finite gradients before
/// touching any state.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if !state.matches(net) || grads.layers.len() != net.layers.len() {
        return Err(NnError::Architecture("optimizer state does not match network".into()));
    }
    for (i, (g, l)) in grads.layers.iter().zip(&net.layers).enumerate() {
        if g.weights.dim() != l.weights.dim() || g.bias.dim() != l.bias.dim() {
            return Err(NnError::Architecture(format!("gradient shape mismatch in layer {i}")));
        }
        if !g.is_finite() {
            return Err(NnError::NonFiniteGradient { layer: i });
        }
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    };
    for (i, layer) in net.layers.iter_mut().enumerate() {
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        Zip::from(&mut layer.weights)
            .and(&grads.layers[i].weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .for_each(update);
        Zip::from(&mut layer.bias)
            .and(&grads.layers[i].bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(update);
        if !layer.is_finite() {
            return Err(NnError::NonFiniteParameter { layer: i });
        }
    }
    Ok(())
}

/// `target <- tau * online + (1 - tau) * target`, element-wise.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(NnError::PolyakRate(tau));
    }
    if target.sizes() != online.sizes() {
        return Err(NnError::Architecture(format!(
            "target {:?} vs online {:?}",
            target.sizes(),
            online.sizes()
        )));
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        Zip::from(&mut t.weights)
            .and(&o.weights)
            .for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
        Zip::from(&mut t.bias)
            .and(&o.bias)
            .for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_net(sizes: &[usize], output: Activation) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(sizes, Activation::Relu, output, &mut rng);
        for l in net.layers_mut() {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        net
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = zero_net(&[3, 4, 2], Activation::Identity);
        let y = net.forward(array![1.0, -2.0, 3.0].view()).unwrap();
        assert_eq!(y, array![0.0, 0.0]);
    }

    #[test]
    fn single_identity_layer_with_relu() {
        // A one-layer net applies the output activation; use ReLU there.
        let layer = Dense {
            weights: Array2::eye(2),
            bias: Array1::zeros(2),
        };
        let net = Mlp::from_layers(vec![layer], Activation::Relu, Activation::Relu).unwrap();
        assert_eq!(net.forward(array![-1.0, 2.0].view()).unwrap(), array![0.0, 2.0]);
    }

    #[test]
    fn input_width_checked() {
        let net = zero_net(&[3, 2], Activation::Identity);
        assert!(matches!(
            net.forward(array![1.0].view()),
            Err(NnError::Dimension { expected: 3, actual: 1, .. })
        ));
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[3, 5, 2], Activation::Relu, Activation::Tanh, &mut rng);
        let x = array![[0.1, 0.2, 0.3], [0.5, -0.1, 0.0]];
        let trace = net.forward_trace(x.view()).unwrap();
        let (g, dx) = net.backward(&trace, Array2::zeros((2, 2)).view()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_tanh_has_vanishing_gradient() {
        let layer = Dense {
            weights: array![[100.0]],
            bias: array![0.0],
        };
        let net = Mlp::from_layers(vec![layer], Activation::Relu, Activation::Tanh).unwrap();
        let trace = net.forward_trace(array![[1.0]].view()).unwrap();
        let (g, _) = net.backward(&trace, array![[1.0]].view()).unwrap();
        assert!(g.max_abs() < 1e-6, "{}", g.max_abs());
    }

    #[test]
    fn backward_rejects_mismatched_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng);
        let trace = net.forward_trace(array![[1.0, 2.0]].view()).unwrap();
        assert!(net.backward(&trace, array![[1.0, 1.0]].view()).is_err());
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng);
        let before = net.clone();
        let mut st = AdamState::new(&net, AdamConfig::default());
        let zeros = Gradients {
            layers: net.layers.iter().map(Dense::zeros_like).collect(),
        };
        adam_step(&mut net, &zeros, &mut st).unwrap();
        assert_eq!(net, before);
        assert_eq!(st.step, 1);
    }

    fn scalar_net(w: f64) -> Mlp {
        Mlp::from_layers(
            vec![Dense {
                weights: array![[w]],
                bias: array![0.0],
            }],
            Activation::Identity,
            Activation::Identity,
        )
        .unwrap()
    }

    fn scalar_grad(g: f64) -> Gradients {
        Gradients {
            layers: vec![Dense {
                weights: array![[g]],
                bias: array![0.0],
            }],
        }
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        // m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
        let mut net = scalar_net(0.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(&net, cfg);
        adam_step(&mut net, &scalar_grad(1.0), &mut st).unwrap();
        let w = net.layers()[0].weights[[0, 0]];
        assert!((w + 0.1).abs() < 1e-8, "{w}");
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut net = scalar_net(5.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(&net, cfg);
        for _ in 0..1000 {
            let w = net.layers()[0].weights[[0, 0]];
            adam_step(&mut net, &scalar_grad(2.0 * w), &mut st).unwrap();
        }
        assert!(net.layers()[0].weights[[0, 0]].abs() < 0.1);
    }

    #[test]
    fn adam_rejects_nan_gradient() {
        let mut net = scalar_net(1.0);
        let before = net.clone();
        let mut st = AdamState::new(&net, AdamConfig::default());
        let err = adam_step(&mut net, &scalar_grad(f64::NAN), &mut st).unwrap_err();
        assert_eq!(err, NnError::NonFiniteGradient { layer: 0 });
        assert_eq!(net, before);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn polyak_extremes_and_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let online = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng);
        let mut target = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng);
        let original = target.clone();
        polyak_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target, original);
        polyak_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target, online);

        let mut zeros = zero_net(&[2, 3, 1], Activation::Identity);
        let mut ones = zeros.clone();
        for l in ones.layers_mut() {
            l.weights.fill(1.0);
            l.bias.fill(1.0);
        }
        polyak_update(&mut zeros, &ones, 0.005).unwrap();
        for l in zeros.layers() {
            assert!(l.weights.iter().chain(l.bias.iter()).all(|&v| v == 0.005));
        }
    }

    #[test]
    fn polyak_rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng);
        let mut b = Mlp::new(&[2, 4, 1], Activation::Relu, Activation::Identity, &mut rng);
        assert!(polyak_update(&mut b, &a, 0.5).is_err());
        let mut c = a.clone();
        assert_eq!(polyak_update(&mut c, &a, 1.5), Err(NnError::PolyakRate(1.5)));
    }
}
