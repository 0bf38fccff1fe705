use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Hidden-layer nonlinearity. The last layer of an [`Mlp`] is always affine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if pre > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::LeakyRelu => "leaky_relu",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "leaky_relu" => Some(Activation::LeakyRelu),
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Affine map `x ↦ W x + b`, `W` stored out × in.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = Matrix::zeros(x.rows(), self.output_dim());
        gemm(x, false, &self.weight, true, &mut y, false);
        for r in 0..y.rows() {
            for (out, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *out += b;
            }
        }
        y
    }
}

/// Intermediate values of a batched forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

/// Multilayer perceptron: affine layers with the activation after every
/// layer but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    activation: Activation,
}

impl Mlp {
    /// `sizes` lists every width from input to output, so `sizes.len() - 1`
    /// layers. Weights are He-scaled normals, biases zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (input, output) = (w[0], w[1]);
                let scale = (2.0 / input.max(1) as f64).sqrt();
                let mut layer = Dense::zeros(input, output);
                for v in layer.weight.as_mut_slice() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = z * scale;
                }
                layer
            })
            .collect();
        Mlp { layers, activation }
    }

    /// Chaining is checked.
    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::usage("an MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::usage(format!(
                    "layer dimensions do not chain: {} then {}",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::usage("bias length does not match layer output"));
            }
        }
        Ok(Mlp { layers, activation })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// `(input, output)` of every layer.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.input_dim(), l.output_dim()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Same shapes, all parameters zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            activation: self.activation,
        }
    }

    /// Parameter storage in checkpoint order: per layer, weights then bias.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::usage(format!(
                "input has {} components, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let x = Matrix::from_vec(1, input.len(), input.to_vec());
        Ok(self.forward_batch(&x).0.row(0).to_vec())
    }

    /// Each row of `x` is one input. Panics on a column mismatch.
    pub fn forward_batch(&self, x: &Matrix) -> (Matrix, MlpCache) {
        assert_eq!(x.cols(), self.input_dim(), "batch width");
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.clone();
        for (j, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            if j == last {
                return (z, MlpCache { inputs, pre });
            }
            let mut a = z.clone();
            for v in a.as_mut_slice() {
                *v = self.activation.apply(*v);
            }
            pre.push(z);
            h = a;
        }
        unreachable!()
    }

    /// Forward without keeping the cache.
    pub fn infer(&self, x: &Matrix) -> Matrix {
        let last = self.layers.len() - 1;
        let mut h = self.layers[0].forward(x);
        for layer in &self.layers[1..=last] {
            for v in h.as_mut_slice() {
                *v = self.activation.apply(*v);
            }
            h = layer.forward(&h);
        }
        h
    }

    /// Reverse pass. Parameter gradients are added into `grads` (which has
    /// this network's shapes); the gradient with respect to the input is
    /// returned.
    pub fn backward(&self, cache: &MlpCache, upstream: &Matrix, grads: &mut Mlp) -> Matrix {
        let mut g = upstream.clone();
        for j in (0..self.layers.len()).rev() {
            if j + 1 < self.layers.len() {
                for (gv, &z) in g.as_mut_slice().iter_mut().zip(cache.pre[j].as_slice()) {
                    *gv *= self.activation.derivative(z);
                }
            }
            let layer = &self.layers[j];
            let input = &cache.inputs[j];
            let acc = &mut grads.layers[j];
            gemm(&g, true, input, false, &mut acc.weight, true);
            for r in 0..g.rows() {
                for (b, go) in acc.bias.iter_mut().zip(g.row(r)) {
                    *b += go;
                }
            }
            let mut g_in = Matrix::zeros(g.rows(), layer.input_dim());
            gemm(&g, false, &layer.weight, false, &mut g_in, false);
            g = g_in;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: Vec<f64>, b: Vec<f64>, input: usize, act: Activation) -> Mlp {
        let out = b.len();
        Mlp::from_layers(
            vec![Dense {
                weight: Matrix::from_vec(out, input, w),
                bias: b,
            }],
            act,
        )
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_through() {
        let net = single(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, Activation::LeakyRelu);
        assert_eq!(net.forward(&[0.25, -3.0]).unwrap(), vec![0.25, -3.0]);
        let (_, cache) = net.forward_batch(&Matrix::from_vec(1, 2, vec![0.25, -3.0]));
        let mut grads = net.zeros_like();
        let up = Matrix::from_vec(1, 2, vec![0.7, -1.1]);
        assert_eq!(net.backward(&cache, &up, &mut grads), up);
    }

    #[test]
    fn leaky_slope_on_hidden_layer() {
        // W=[[1]], b=[-1] then an identity read-out so the activation applies
        let layers = vec![
            Dense {
                weight: Matrix::from_vec(1, 1, vec![1.0]),
                bias: vec![-1.0],
            },
            Dense {
                weight: Matrix::from_vec(1, 1, vec![1.0]),
                bias: vec![0.0],
            },
        ];
        let net = Mlp::from_layers(layers, Activation::LeakyRelu).unwrap();
        let y = net.forward(&[0.0]).unwrap();
        assert!((y[0] + 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_give_last_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(&[3, 5, 2], Activation::LeakyRelu, &mut rng);
        for s in net.param_slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
        net.param_slices_mut()[3].copy_from_slice(&[0.5, -2.0]);
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.5, -2.0]);
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 2], Activation::LeakyRelu, &mut rng);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Usage(_))));
        let bad = vec![Dense::zeros(2, 3), Dense::zeros(4, 1)];
        assert!(Mlp::from_layers(bad, Activation::Relu).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[4, 6, 6, 3], Activation::LeakyRelu, &mut rng);
        let x = Matrix::from_vec(2, 4, (0..8).map(|i| i as f64 * 0.3 - 1.0).collect());
        let (_, cache) = net.forward_batch(&x);
        let mut grads = net.zeros_like();
        let g_in = net.backward(&cache, &Matrix::zeros(2, 3), &mut grads);
        assert!(grads.param_slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(g_in.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn infer_matches_forward_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[2, 8, 8, 4], Activation::LeakyRelu, &mut rng);
        let x = Matrix::from_vec(3, 2, vec![0.1, 0.2, -1.0, 2.0, 0.0, 0.0]);
        assert_eq!(net.infer(&x), net.forward_batch(&x).0);
    }

    #[test]
    fn rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[5, 16, 16, 3], Activation::LeakyRelu, &mut rng);
        let x = Matrix::from_vec(4, 5, (0..20).map(|i| (i as f64).cos()).collect());
        let all = net.infer(&x);
        for r in 0..4 {
            assert_eq!(net.forward(x.row(r)).unwrap().as_slice(), all.row(r));
        }
    }
}
