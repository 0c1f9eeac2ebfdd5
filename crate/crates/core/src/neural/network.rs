//! Plain fully-connected networks with hand-written forward and backward
//! passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dims, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
    /// Applied by the loss, not the layer; forward emits logits.
    Softmax,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
            Activation::Softmax => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            2 => Some(Activation::Softmax),
            _ => None,
        }
    }
}

/// A stack of dense layers over one flat parameter vector. Layer l holds
/// weights W (out x in, row-major) followed by the bias.
#[derive(Debug, Clone)]
pub struct DenseNetwork {
    shapes: Vec<(usize, usize)>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Per-layer activations retained for the backward pass.
pub struct ForwardCache {
    /// inputs[0] is the network input; inputs[l+1] the post-activation
    /// output of layer l.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation values per layer.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().unwrap()
    }
}

impl DenseNetwork {
    pub fn zeroed(shapes: Vec<(usize, usize)>, activations: Vec<Activation>) -> Self {
        assert_eq!(shapes.len(), activations.len());
        for w in shapes.windows(2) {
            assert_eq!(w[0].1, w[1].0, "layer shapes must chain");
        }
        let count: usize = shapes.iter().map(|(i, o)| i * o + o).sum();
        DenseNetwork {
            shapes,
            activations,
            params: vec![0.0; count],
        }
    }

    /// He-style initialization: weights ~ U(-b, b) with b = sqrt(6/in),
    /// biases zero.
    pub fn seeded(shapes: Vec<(usize, usize)>, activations: Vec<Activation>, seed: u64) -> Self {
        let mut net = Self::zeroed(shapes, activations);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.shapes.len() {
            let (fan_in, fan_out) = net.shapes[l];
            let bound = (6.0 / fan_in as f64).sqrt();
            let (w_off, b_off) = net.layer_offsets(l);
            for i in w_off..b_off {
                net.params[i] = rng.gen_range(-bound..bound);
            }
            let _ = fan_out;
        }
        net
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) {
        assert_eq!(params.len(), self.params.len());
        self.params = params;
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.shapes[0].0
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().unwrap().1
    }

    /// (weights offset, bias offset) of layer l in the flat vector.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for &(i, o) in &self.shapes[..l] {
            off += i * o + o;
        }
        let (i, o) = self.shapes[l];
        (off, off + i * o)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut cache = self.forward_cached(x)?;
        Ok(cache.inputs.pop().unwrap())
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        check_dims(self.input_dim(), x.len())?;
        let mut inputs = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.shapes.len());
        for l in 0..self.shapes.len() {
            let (fan_in, fan_out) = self.shapes[l];
            let (w_off, b_off) = self.layer_offsets(l);
            let weights = &self.params[w_off..b_off];
            let bias = &self.params[b_off..b_off + fan_out];
            let input = inputs.last().unwrap();
            let mut z = vec![0.0; fan_out];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                *zo = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + bias[o];
            }
            let out = match self.activations[l] {
                Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
                // Softmax layers emit logits; normalization lives in the
                // loss for stability.
                Activation::Identity | Activation::Softmax => z.clone(),
            };
            pre.push(z);
            inputs.push(out);
        }
        Ok(ForwardCache { inputs, pre })
    }

    /// Backpropagate a loss gradient w.r.t. the network output. Returns
    /// the parameter gradient (flat, same layout as `params`) and the
    /// gradient w.r.t. the input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(grad_output.len(), self.output_dim());
        let mut grad_params = vec![0.0; self.params.len()];
        let mut delta = grad_output.to_vec();
        for l in (0..self.shapes.len()).rev() {
            let (fan_in, fan_out) = self.shapes[l];
            let (w_off, b_off) = self.layer_offsets(l);
            // Activation derivative.
            match self.activations[l] {
                Activation::Relu => {
                    for (d, &z) in delta.iter_mut().zip(&cache.pre[l]) {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                Activation::Identity | Activation::Softmax => {}
            }
            let input = &cache.inputs[l];
            let weights = &self.params[w_off..b_off];
            for o in 0..fan_out {
                let d = delta[o];
                let g_row = &mut grad_params[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                for (g, &x) in g_row.iter_mut().zip(input) {
                    *g += d * x;
                }
                grad_params[b_off + o] += d;
            }
            let mut grad_in = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                for (gi, &w) in grad_in.iter_mut().zip(row) {
                    *gi += d * w;
                }
            }
            delta = grad_in;
        }
        (grad_params, delta)
    }
}
