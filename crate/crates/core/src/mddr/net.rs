//! Dense tanh networks with hand-written backpropagation, and Adam.

use rand::Rng;

/// Fully connected network: tanh on every hidden layer, identity output.
///
/// Parameters live in one flat vector, layer by layer, each layer stored as
/// its weight matrix (`out x in`, row-major) followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Post-activation values of every layer for one input (input first).
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least the input")
    }
}

impl Mlp {
    /// Uniform Glorot initialization; the output layer is further scaled by
    /// `output_scale` so that fresh policies start close to their biases.
    pub fn new(sizes: &[usize], output_scale: f64, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0));
        let mut params = Vec::with_capacity(Self::param_count(sizes));
        let layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if l + 1 == layers {
                limit *= output_scale;
            }
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-limit..=limit));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == Self::param_count(&sizes))
            .then_some(Self { sizes, params })
    }

    fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Index range of layer `l`'s parameters in the flat vector.
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        let start: usize = self.sizes[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        start..start + self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let r = self.layer_range(l);
        let n_out = self.sizes[l + 1];
        &mut self.params[r.end - n_out..r.end]
    }

    pub fn forward_trace(&self, x: &[f64]) -> ForwardTrace {
        assert_eq!(x.len(), self.sizes[0]);
        let layers = self.num_layers();
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(x.to_vec());
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let input = &activations[l];
            let mut out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b[o] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>()
                })
                .collect();
            if l + 1 < layers {
                for v in &mut out {
                    *v = v.tanh();
                }
            }
            activations.push(out);
            offset += n_in * n_out + n_out;
        }
        ForwardTrace { activations }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut t = self.forward_trace(x);
        t.activations.pop().expect("output layer")
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`
    /// and returns `d loss / d input`.
    pub fn backward(&self, trace: &ForwardTrace, grad_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(grads.len(), self.params.len());
        let layers = self.num_layers();
        let mut delta = grad_out.to_vec();
        for l in (0..layers).rev() {
            let r = self.layer_range(l);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &trace.activations[l];
            let w = &self.params[r.start..r.start + n_in * n_out];
            let (gw, gb) = grads[r].split_at_mut(n_in * n_out);
            let mut grad_in = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                gb[o] += d;
                let row = &w[o * n_in..(o + 1) * n_in];
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += d * input[i];
                    grad_in[i] += d * row[i];
                }
            }
            if l > 0 {
                // Input of layer l is tanh of the previous pre-activation.
                for (g, a) in grad_in.iter_mut().zip(input) {
                    *g *= 1.0 - a * a;
                }
            }
            delta = grad_in;
        }
        delta
    }
}

/// Adam optimizer state for one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One descent step on `params` along `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        if self.lr == 0.0 {
            return;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scales `grads` down so its Euclidean norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_match_layer_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[5, 256, 10], 1.0, &mut rng);
        assert_eq!(net.params().len(), 5 * 256 + 256 + 256 * 10 + 10);
        assert_eq!(net.forward(&[0.0; 5]).len(), 10);
        assert_eq!(net.layer_range(1), 5 * 256 + 256..net.params().len());
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut net = Mlp::from_parts(vec![3, 4, 2], vec![0.0; 3 * 4 + 4 + 4 * 2 + 2]).unwrap();
        net.bias_mut(1).copy_from_slice(&[0.5, -1.5]);
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]), vec![0.5, -1.5]);
    }

    #[test]
    fn adam_with_zero_rate_is_a_no_op() {
        let mut p = vec![1.0, 2.0];
        let mut opt = Adam::new(2, 0.0);
        opt.step(&mut p, &[3.0, -4.0]);
        assert_eq!(p, vec![1.0, 2.0]);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut p = vec![3.0];
        let mut opt = Adam::new(1, 0.1);
        for _ in 0..500 {
            let g = [2.0 * p[0]];
            opt.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-2);
    }
}
