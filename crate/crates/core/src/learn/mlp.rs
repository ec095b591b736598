//! Dense tanh networks with hand-written reverse mode, plus Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LearnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Fully connected network. Hidden layers use tanh; the output layer uses
/// `output`. Parameters are stored flat, per layer `W` (row-major,
/// out x in) followed by `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    output: Activation,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_cached`]; `acts[0]` is the input
/// and the last entry is the output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    pub acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds at least the input")
    }

    /// Activation feeding the output layer.
    pub fn last_hidden(&self) -> &[f64] {
        &self.acts[self.acts.len() - 2]
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize], output: Activation) -> Self {
        assert!(sizes.len() >= 2, "an Mlp needs input and output sizes");
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self {
            sizes: sizes.to_vec(),
            output,
            params: vec![0.0; count],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: Activation, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes, output);
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[off..off + fan_in * fan_out] {
                *p = rng.random_range(-a..a);
            }
            off += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Multiplies the output layer's weights by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let n = self.sizes.len();
        let (fan_in, fan_out) = (self.sizes[n - 2], self.sizes[n - 1]);
        let start = self.params.len() - fan_out - fan_in * fan_out;
        for p in &mut self.params[start..start + fan_in * fan_out] {
            *p *= factor;
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), LearnError> {
        if x.len() != self.input_dim() {
            return Err(LearnError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, LearnError> {
        Ok(self.forward_cached(x)?.acts.pop().unwrap())
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<MlpCache, LearnError> {
        self.check_input(x)?;
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for (i, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let act = if i + 1 == layers {
                self.output
            } else {
                Activation::Tanh
            };
            let input = &acts[i];
            let weights = &self.params[off..off + fan_in * fan_out];
            let bias = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    let z = bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
                    act.apply(z)
                })
                .collect();
            acts.push(out);
            off += fan_in * fan_out + fan_out;
        }
        Ok(MlpCache { acts })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input. `hidden_grad`, when given, is an extra
    /// upstream gradient on [`MlpCache::last_hidden`].
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_out: &[f64],
        hidden_grad: Option<&[f64]>,
        grads: &mut [f64],
    ) -> Vec<f64> {
        debug_assert_eq!(grads.len(), self.params.len());
        debug_assert_eq!(grad_out.len(), self.output_dim());
        let layers = self.sizes.len() - 1;
        let mut delta: Vec<f64> = grad_out
            .iter()
            .zip(cache.output())
            .map(|(g, y)| g * self.output.grad_from_output(*y))
            .collect();
        let mut off = self.params.len();
        for i in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[i], self.sizes[i + 1]);
            off -= fan_in * fan_out + fan_out;
            let input = &cache.acts[i];
            let (gw, gb) = grads[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let weights = &self.params[off..off + fan_in * fan_out];
            let mut grad_in = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                gb[o] += d;
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let grow = &mut gw[o * fan_in..(o + 1) * fan_in];
                for j in 0..fan_in {
                    grow[j] += d * input[j];
                    grad_in[j] += d * row[j];
                }
            }
            if i == 0 {
                return grad_in;
            }
            if i + 1 == layers {
                if let Some(h) = hidden_grad {
                    for (g, e) in grad_in.iter_mut().zip(h) {
                        *g += e;
                    }
                }
            }
            delta = grad_in
                .iter()
                .zip(input)
                .map(|(g, a)| g * Activation::Tanh.grad_from_output(*a))
                .collect();
        }
        unreachable!("loop returns at the input layer")
    }
}

/// Rescales `grads` so its L2 norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
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
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_bias() {
        let mut net = Mlp::zeros(&[3, 4, 2], Activation::Identity);
        let n = net.param_count();
        net.params_mut()[n - 2] = 0.5;
        net.params_mut()[n - 1] = -1.5;
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.5, -1.5]);
    }

    #[test]
    fn linear_unit_gradient() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Identity);
        net.params_mut().copy_from_slice(&[2.0, 1.0]);
        let cache = net.forward_cached(&[3.0]).unwrap();
        assert_eq!(cache.output(), &[7.0]);
        let mut g = vec![0.0; 2];
        let gx = net.backward(&cache, &[1.0], None, &mut g);
        assert_eq!(g, vec![3.0, 1.0]);
        assert_eq!(gx, vec![2.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let net = Mlp::zeros(&[3, 2], Activation::Identity);
        assert!(matches!(
            net.forward(&[1.0]),
            Err(LearnError::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for out_act in [Activation::Identity, Activation::Tanh] {
            let net = Mlp::new(&[3, 5, 4, 2], out_act, &mut rng);
            let x = [0.3, -0.7, 1.1];
            let up = [0.7, -1.3];
            let hid = [0.2, -0.1, 0.4, 0.3];
            // loss = up . y + hid . h_last
            let loss = |n: &Mlp| {
                let c = n.forward_cached(&x).unwrap();
                up.iter().zip(c.output()).map(|(a, b)| a * b).sum::<f64>()
                    + hid.iter().zip(c.last_hidden()).map(|(a, b)| a * b).sum::<f64>()
            };
            let cache = net.forward_cached(&x).unwrap();
            let mut g = vec![0.0; net.param_count()];
            net.backward(&cache, &up, Some(&hid), &mut g);
            let h = 1e-6;
            for i in 0..net.param_count() {
                let mut p = net.clone();
                p.params_mut()[i] += h;
                let mut m = net.clone();
                m.params_mut()[i] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
                assert!(rel < 1e-4, "param {i}: fd {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
