use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exec;

/// Rows per work item in batched passes. Partial gradients are summed in
/// chunk order, so results do not depend on the thread count.
const CHUNK_ROWS: usize = 32;

/// Fully connected layer, `y = W x + b` with `W` stored row-major (`outputs × inputs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn xavier(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut d = Dense::zeros(inputs, outputs);
        for w in &mut d.weight {
            *w = rng.gen_range(-limit..limit);
        }
        d
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for o in 0..self.outputs {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            y[o] = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Multi-layer perceptron with `tanh` hidden units and a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations of a batched forward pass, `acts[0]` being the input.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub rows: usize,
    pub acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least the input")
    }
}

impl Mlp {
    /// `hidden` tanh layers of width `width`; hidden weights Xavier, output layer zero.
    pub fn new(
        inputs: usize,
        width: usize,
        hidden: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden + 1);
        let mut fan_in = inputs;
        for _ in 0..hidden {
            layers.push(Dense::xavier(fan_in, width, rng));
            fan_in = width;
        }
        layers.push(Dense::zeros(fan_in, outputs));
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "parameter count");
        let mut i = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&p[i..i + nw]);
            i += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[i..i + nb]);
            i += nb;
        }
    }

    fn forward_rows(&self, x: &[f64], rows: usize) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let prev = acts.last().unwrap();
            let mut y = vec![0.0; rows * l.outputs];
            for r in 0..rows {
                let out = &mut y[r * l.outputs..(r + 1) * l.outputs];
                l.apply(&prev[r * l.inputs..(r + 1) * l.inputs], out);
                if li < last {
                    out.iter_mut().for_each(|v| *v = v.tanh());
                }
            }
            acts.push(y);
        }
        acts
    }

    /// Forward pass over `rows` inputs stored row-major in `x`.
    pub fn forward_batch(&self, x: &[f64], rows: usize) -> MlpCache {
        let d = self.input_dim();
        assert_eq!(x.len(), rows * d, "input batch size");
        let chunks = rows.div_ceil(CHUNK_ROWS);
        let parts = exec::map_range(chunks, |c| {
            let (r0, r1) = (c * CHUNK_ROWS, ((c + 1) * CHUNK_ROWS).min(rows));
            self.forward_rows(&x[r0 * d..r1 * d], r1 - r0)
        });
        let mut acts: Vec<Vec<f64>> = (0..=self.layers.len()).map(|_| Vec::new()).collect();
        acts[0] = x.to_vec();
        for part in parts {
            for (k, a) in part.into_iter().enumerate().skip(1) {
                acts[k].extend(a);
            }
        }
        MlpCache { rows, acts }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_batch(x, 1).output().to_vec()
    }

    fn backward_rows(&self, acts: &[&[f64]], d_out: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
        let mut grad = vec![0.0; self.param_count()];
        let offsets = self.offsets();
        let last = self.layers.len() - 1;
        let mut delta = d_out.to_vec();
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let out_act = acts[li + 1];
            if li < last {
                for (d, a) in delta.iter_mut().zip(out_act) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = acts[li];
            let (wo, bo) = offsets[li];
            let mut d_in = vec![0.0; rows * l.inputs];
            for r in 0..rows {
                let dr = &delta[r * l.outputs..(r + 1) * l.outputs];
                let xr = &input[r * l.inputs..(r + 1) * l.inputs];
                let dir = &mut d_in[r * l.inputs..(r + 1) * l.inputs];
                for o in 0..l.outputs {
                    let g = dr[o];
                    if g == 0.0 {
                        continue;
                    }
                    grad[bo + o] += g;
                    let gw = &mut grad[wo + o * l.inputs..wo + (o + 1) * l.inputs];
                    let row = &l.weight[o * l.inputs..(o + 1) * l.inputs];
                    for i in 0..l.inputs {
                        gw[i] += g * xr[i];
                        dir[i] += g * row[i];
                    }
                }
            }
            delta = d_in;
        }
        (grad, delta)
    }

    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut i = 0;
        for l in &self.layers {
            out.push((i, i + l.weight.len()));
            i += l.weight.len() + l.bias.len();
        }
        out
    }

    /// Gradients of `Σ d_out · output` with respect to the flattened
    /// parameters (layout of [`Mlp::params`]) and to the inputs.
    pub fn backward_batch(&self, cache: &MlpCache, d_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let rows = cache.rows;
        let od = self.output_dim();
        assert_eq!(d_out.len(), rows * od, "output gradient size");
        let chunks = rows.div_ceil(CHUNK_ROWS);
        let parts = exec::map_range(chunks, |c| {
            let (r0, r1) = (c * CHUNK_ROWS, ((c + 1) * CHUNK_ROWS).min(rows));
            let acts: Vec<&[f64]> = self
                .layers
                .iter()
                .enumerate()
                .map(|(li, l)| &cache.acts[li][r0 * l.inputs..r1 * l.inputs])
                .chain(std::iter::once(
                    &cache.acts[self.layers.len()][r0 * od..r1 * od],
                ))
                .collect();
            self.backward_rows(&acts, &d_out[r0 * od..r1 * od], r1 - r0)
        });
        let mut grad = vec![0.0; self.param_count()];
        let mut d_in = Vec::with_capacity(rows * self.input_dim());
        for (g, di) in parts {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
            d_in.extend(di);
        }
        (grad, d_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::new(5, 8, 3, 4, &mut rng);
        let last = net.layers.last_mut().unwrap();
        for w in &mut last.weight {
            *w = rng.gen_range(-0.5..0.5);
        }
        for b in &mut last.bias {
            *b = rng.gen_range(-0.5..0.5);
        }
        net
    }

    #[test]
    fn zero_output_layer_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(12, 64, 4, 10, &mut rng);
        let x: Vec<f64> = (0..12 * 7).map(|i| (i as f64 * 0.37).sin()).collect();
        assert!(net.forward_batch(&x, 7).output().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_rows_are_independent() {
        let net = random_net(3);
        let x: Vec<f64> = (0..5 * 70).map(|i| (i as f64 * 0.11).cos()).collect();
        let all = net.forward_batch(&x, 70);
        for r in [0, 33, 69] {
            let one = net.forward(&x[r * 5..(r + 1) * 5]);
            assert_eq!(one, all.output()[r * 4..(r + 1) * 4].to_vec());
        }
    }

    #[test]
    fn params_round_trip() {
        let net = random_net(4);
        let mut other = Mlp::new(5, 8, 3, 4, &mut ChaCha8Rng::seed_from_u64(9));
        other.set_params(&net.params());
        assert_eq!(other, net);
    }

    #[test]
    fn backward_matches_central_difference() {
        let net = random_net(5);
        let rows = 40;
        let x: Vec<f64> = (0..5 * rows).map(|i| (i as f64 * 0.23).sin()).collect();
        let w: Vec<f64> = (0..4 * rows).map(|i| (i as f64 * 0.71).cos()).collect();
        let loss = |n: &Mlp, x: &[f64]| -> f64 {
            n.forward_batch(x, rows)
                .output()
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum()
        };
        let cache = net.forward_batch(&x, rows);
        let (g, dx) = net.backward_batch(&cache, &w);
        let p = net.params();
        let h = 1e-6;
        for k in (0..p.len()).step_by(7) {
            let mut a = net.clone();
            let mut pp = p.clone();
            pp[k] += h;
            a.set_params(&pp);
            pp[k] -= 2.0 * h;
            let mut b = net.clone();
            b.set_params(&pp);
            let n = (loss(&a, &x) - loss(&b, &x)) / (2.0 * h);
            assert!(
                (n - g[k]).abs() < 1e-6 * (1.0 + n.abs()),
                "param {k}: {n} vs {}",
                g[k]
            );
        }
        for k in (0..x.len()).step_by(13) {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let n = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!((n - dx[k]).abs() < 1e-6 * (1.0 + n.abs()), "input {k}");
        }
    }
}
