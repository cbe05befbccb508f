use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor2D};
use crate::{Error, Result};

/// Slope of the leaky rectifier, matching the framework default the
/// architecture was specified against.
pub const LEAKY_SLOPE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    LeakyRectifier,
    Rectifier,
    Tanh,
}

impl Activation {
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Linear => z,
            Activation::LeakyRectifier => {
                if z >= T::ZERO {
                    z
                } else {
                    T::from_f64(LEAKY_SLOPE) * z
                }
            }
            Activation::Rectifier => {
                if z >= T::ZERO {
                    z
                } else {
                    T::ZERO
                }
            }
            Activation::Tanh => T::from_f64(z.to_f64().tanh()),
        }
    }

    /// Derivative as a function of the pre-activation.
    fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Linear => T::ONE,
            Activation::LeakyRectifier => {
                if z >= T::ZERO {
                    T::ONE
                } else {
                    T::from_f64(LEAKY_SLOPE)
                }
            }
            Activation::Rectifier => {
                if z >= T::ZERO {
                    T::ONE
                } else {
                    T::ZERO
                }
            }
            Activation::Tanh => {
                let t = z.to_f64().tanh();
                T::from_f64(1.0 - t * t)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct DenseLayer<T: Scalar> {
    /// Weights, stored input×output.
    pub weights: Tensor2D<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

/// A plain multilayer perceptron.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct DenseNet<T: Scalar> {
    layers: Vec<DenseLayer<T>>,
}

/// Cached per-layer inputs and pre-activations from a forward pass,
/// consumed by [`DenseNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Scalar> {
    inputs: Vec<Tensor2D<T>>,
    preacts: Vec<Tensor2D<T>>,
    output: Tensor2D<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &Tensor2D<T> {
        &self.output
    }

    pub fn into_output(self) -> Tensor2D<T> {
        self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.rows()
    }
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone)]
pub struct NetGrads<T: Scalar> {
    pub weights: Vec<Tensor2D<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Scalar> NetGrads<T> {
    pub fn zeros_like(net: &DenseNet<T>) -> Self {
        NetGrads {
            weights: net
                .layers
                .iter()
                .map(|l| Tensor2D::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
            bias: net.layers.iter().map(|l| vec![T::ZERO; l.bias.len()]).collect(),
        }
    }

    /// Accumulate another gradient set (fixed order, used for the chunked
    /// batch reduction).
    pub fn accumulate(&mut self, other: &NetGrads<T>) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += *y;
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for w in &mut self.weights {
            for v in w.data_mut() {
                *v = *v * factor;
            }
        }
        for b in &mut self.bias {
            for v in b.iter_mut() {
                *v = *v * factor;
            }
        }
    }

    /// Visit gradients in the same canonical order as
    /// [`DenseNet::visit_params_mut`].
    pub fn visit<F: FnMut(&[T])>(&self, mut f: F) {
        for (w, b) in self.weights.iter().zip(&self.bias) {
            f(w.data());
            f(b);
        }
    }
}

impl<T: Scalar> DenseNet<T> {
    /// Build a network with the given layer widths; all hidden layers use
    /// `hidden`, the final layer `last`. Weights are Glorot-uniform from the
    /// provided stream, biases zero.
    pub fn new(dims: &[usize], hidden: Activation, last: Activation, rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data: Vec<T> = (0..fan_in * fan_out)
                .map(|_| T::from_f64(rng.gen_range(-limit..=limit)))
                .collect();
            layers.push(DenseLayer {
                weights: Tensor2D::from_vec(fan_in, fan_out, data),
                bias: vec![T::ZERO; fan_out],
                activation: if i == dims.len() - 2 { last } else { hidden },
            });
        }
        DenseNet { layers }
    }

    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Self {
        DenseNet { layers }
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.cols()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    /// Mutable access to all parameters in canonical order (per layer:
    /// weights then bias). The Adam update relies on this order being fixed.
    pub fn visit_params_mut<F: FnMut(&mut [T])>(&mut self, mut f: F) {
        for layer in &mut self.layers {
            f(layer.weights.data_mut());
            f(&mut layer.bias);
        }
    }

    /// Forward pass caching per-layer inputs and pre-activations.
    pub fn forward(&self, input: &Tensor2D<T>) -> Result<ForwardCache<T>> {
        if input.cols() != self.input_dim() {
            return Err(Error::contract(format!(
                "forward input has {} features, network expects {}",
                input.cols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for layer in &self.layers {
            let mut z = current.matmul(&layer.weights);
            z.add_bias(&layer.bias);
            inputs.push(current);
            let mut a = z.clone();
            for v in a.data_mut() {
                *v = layer.activation.apply(*v);
            }
            a.debug_check_finite("activation");
            preacts.push(z);
            current = a;
        }
        Ok(ForwardCache { inputs, preacts, output: current })
    }

    /// Forward pass without caching (inference).
    pub fn infer(&self, input: &Tensor2D<T>) -> Result<Tensor2D<T>> {
        Ok(self.forward(input)?.into_output())
    }

    /// Exact reverse-mode gradients of the cached forward pass. Returns the
    /// gradient with respect to the input and the parameter gradients.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        upstream: &Tensor2D<T>,
    ) -> Result<(Tensor2D<T>, NetGrads<T>)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::contract("forward cache does not match network depth"));
        }
        if upstream.rows() != cache.output.rows() || upstream.cols() != cache.output.cols() {
            return Err(Error::contract(format!(
                "upstream gradient is {}x{}, output is {}x{}",
                upstream.rows(),
                upstream.cols(),
                cache.output.rows(),
                cache.output.cols()
            )));
        }
        let mut grads = NetGrads::zeros_like(self);
        let mut delta = upstream.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.preacts[idx];
            // delta := upstream ⊙ act'(z)
            for (d, zv) in delta.data_mut().iter_mut().zip(z.data()) {
                *d = *d * layer.activation.derivative(*zv);
            }
            grads.weights[idx] = cache.inputs[idx].matmul_tn(&delta);
            grads.bias[idx] = delta.column_sums();
            delta = delta.matmul_nt(&layer.weights);
        }
        Ok((delta, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn tiny_net(seed: u64) -> DenseNet<f64> {
        let mut rng = stream(seed, "test-net", 0);
        DenseNet::new(&[3, 5, 2], Activation::LeakyRectifier, Activation::Linear, &mut rng)
    }

    #[test]
    fn zero_weight_net_outputs_bias() {
        let mut net = tiny_net(1);
        net.visit_params_mut(|p| p.fill(0.0));
        net.layers[1].bias = vec![2.5, -1.0];
        // keep the first layer fully zero so the bias of the head shows through
        let x = Tensor2D::from_vec(4, 3, vec![1.0; 12]);
        let y = net.infer(&x).unwrap();
        for r in 0..4 {
            assert_eq!(y.row(r), &[2.5, -1.0]);
        }
    }

    #[test]
    fn identity_linear_layer_is_identity() {
        let mut w = Tensor2D::zeros(3, 3);
        for i in 0..3 {
            w.set(i, i, 1.0f64);
        }
        let net = DenseNet::from_layers(vec![DenseLayer {
            weights: w,
            bias: vec![0.0; 3],
            activation: Activation::Linear,
        }]);
        let x = Tensor2D::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.0, 0.5, -0.25]);
        let y = net.infer(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn forward_is_pure() {
        let net = tiny_net(2);
        let x = Tensor2D::from_vec(3, 3, vec![0.1, -0.2, 0.3, 1.0, 2.0, -3.0, 0.0, 0.0, 1.0]);
        let a = net.infer(&x).unwrap();
        let b = net.infer(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = tiny_net(3);
        let x = Tensor2D::from_vec(2, 3, vec![0.3; 6]);
        let cache = net.forward(&x).unwrap();
        let upstream = Tensor2D::zeros(2, 2);
        let (dx, grads) = net.backward(&cache, &upstream).unwrap();
        assert!(dx.data().iter().all(|v| *v == 0.0));
        grads.visit(|g| assert!(g.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn linear_layer_input_grad_is_upstream_times_w_transposed() {
        let w = Tensor2D::from_vec(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]);
        let net = DenseNet::from_layers(vec![DenseLayer {
            weights: w.clone(),
            bias: vec![0.0; 2],
            activation: Activation::Linear,
        }]);
        let x = Tensor2D::from_vec(1, 2, vec![0.5, -0.5]);
        let cache = net.forward(&x).unwrap();
        let upstream = Tensor2D::from_vec(1, 2, vec![1.0, -1.0]);
        let (dx, _) = net.backward(&cache, &upstream).unwrap();
        // dx = upstream @ W^T
        assert_eq!(dx.data(), upstream.matmul_nt(&w).data());
    }

    #[test]
    fn backward_matches_finite_differences_f64() {
        let net = tiny_net(7);
        let x = Tensor2D::from_vec(4, 3, vec![
            0.2, -0.4, 0.6, 1.1, -0.3, 0.7, -0.9, 0.05, 0.0, 0.33, -0.21, 0.9,
        ]);
        // scalar loss: sum of outputs squared / 2
        let cache = net.forward(&x).unwrap();
        let upstream = cache.output().clone();
        let (_, grads) = net.backward(&cache, &upstream).unwrap();

        let loss = |n: &DenseNet<f64>| -> f64 {
            let y = n.infer(&x).unwrap();
            0.5 * y.data().iter().map(|v| v * v).sum::<f64>()
        };
        let h = 1e-6;
        let mut flat_grads = Vec::new();
        grads.visit(|g| flat_grads.extend_from_slice(g));
        let mut idx = 0;
        let mut max_rel: f64 = 0.0;
        let base = net.clone();
        // perturb every parameter in canonical order
        let total = base.param_count();
        for p in 0..total {
            let mut plus = base.clone();
            let mut minus = base.clone();
            let mut seen = 0;
            plus.visit_params_mut(|sl| {
                if p >= seen && p < seen + sl.len() {
                    sl[p - seen] += h;
                }
                seen += sl.len();
            });
            seen = 0;
            minus.visit_params_mut(|sl| {
                if p >= seen && p < seen + sl.len() {
                    sl[p - seen] -= h;
                }
                seen += sl.len();
            });
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let g = flat_grads[idx];
            idx += 1;
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-6, "max rel err {max_rel}");
    }

    #[test]
    fn backward_rejects_mismatched_upstream() {
        let net = tiny_net(4);
        let x = Tensor2D::from_vec(2, 3, vec![0.1; 6]);
        let cache = net.forward(&x).unwrap();
        let bad = Tensor2D::zeros(2, 5);
        assert!(matches!(net.backward(&cache, &bad), Err(Error::Contract(_))));
    }

    #[test]
    fn serialization_roundtrip_is_bit_exact() {
        let net = tiny_net(5);
        let json = serde_json::to_string(&net).unwrap();
        let back: DenseNet<f64> = serde_json::from_str(&json).unwrap();
        for (a, b) in net.layers().iter().zip(back.layers()) {
            assert_eq!(a.weights.data(), b.weights.data());
            assert_eq!(a.bias, b.bias);
            assert_eq!(a.activation, b.activation);
        }
    }
}
