//! Fully connected ReLU network with hand-written backpropagation.
//!
//! Weights are stored per layer, row-major `[out][in]`. The first layer can
//! consume sparse inputs so that one- and two-hot observations cost
//! `O(active * width)` instead of `O(input * width)`.

mod optim;

pub use optim::{FreezeMask, LrSchedule, Optimizer, OptimizerKind};

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Architecture of an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dimension: usize,
    pub hidden: Vec<usize>,
    pub output_dimension: usize,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(input_dimension: usize, hidden: Vec<usize>, output_dimension: usize, seed: u64) -> Result<Self> {
        let spec = Self { input_dimension, hidden, output_dimension, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dimension == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if self.output_dimension < 2 {
            return Err(Error::Config(format!("output dimension {} < 2", self.output_dimension)));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![self.input_dimension];
        sizes.extend(&self.hidden);
        sizes.push(self.output_dimension);
        sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S> {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Layer<S> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { fan_in, fan_out, weights: vec![S::zero(); fan_in * fan_out], bias: vec![S::zero(); fan_out] }
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> S {
        self.weights[out * self.fan_in + inp]
    }

    fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Network input: dense vector or sparse `(index, value)` pairs.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a, S> {
    Dense(&'a [S]),
    Sparse(&'a [(usize, S)]),
}

/// Supervision for one example.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a, S> {
    /// Squared error `0.5 (q(a) - value)^2` on one output.
    Action { action: usize, value: S },
    /// Cross-entropy of `softmax(q)` against a distribution.
    Distribution(&'a [S]),
}

#[derive(Debug, Clone, Copy)]
pub struct Example<'a, S> {
    pub input: Input<'a, S>,
    pub target: Target<'a, S>,
}

/// Gradient (or optimizer moment) buffers shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub layers: Vec<Layer<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(net: &Mlp<S>) -> Self {
        Self { layers: net.layers.iter().map(|l| Layer::zeros(l.fan_in, l.fan_out)).collect() }
    }

    fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = S::zero());
            l.bias.iter_mut().for_each(|b| *b = S::zero());
        }
    }

    fn scale(&mut self, k: S) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w *= k);
            l.bias.iter_mut().for_each(|b| *b *= k);
        }
    }

    /// Flat view in dump order: per layer, weights then biases.
    pub fn flatten(&self) -> Vec<S> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers<S: Scalar>(layers: &[Layer<S>]) -> Vec<S> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(&l.weights);
        out.extend(&l.bias);
    }
    out
}

/// Reusable activation buffers for forward/backward passes.
#[derive(Debug, Clone)]
pub struct Workspace<S> {
    /// Post-activation values per layer; the last entry holds the outputs.
    acts: Vec<Vec<S>>,
    deltas: Vec<Vec<S>>,
}

impl<S: Scalar> Workspace<S> {
    pub fn new(net: &Mlp<S>) -> Self {
        let acts: Vec<Vec<S>> = net.layers.iter().map(|l| vec![S::zero(); l.fan_out]).collect();
        Self { deltas: acts.clone(), acts }
    }

    pub fn output(&self) -> &[S] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Multilayer perceptron: affine layers with ReLU between them and a linear
/// output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<S> {
    spec: MlpSpec,
    pub layers: Vec<Layer<S>>,
}

impl<S: Scalar> Mlp<S> {
    /// Uniform fan-based initialization `U(-b, b)`, `b = sqrt(6 / (fan_in +
    /// fan_out))`, zero biases, drawn from `spec.seed`.
    pub fn init(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = (0..fan_in * fan_out).map(|_| S::lit(rng.gen_range(-bound..bound))).collect();
                Layer { fan_in, fan_out, weights, bias: vec![S::zero(); fan_out] }
            })
            .collect();
        Ok(Self { spec: spec.clone(), layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dimension(&self) -> usize {
        self.spec.input_dimension
    }

    pub fn output_dimension(&self) -> usize {
        self.spec.output_dimension
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    pub fn flatten(&self) -> Vec<S> {
        flatten_layers(&self.layers)
    }

    /// Overwrites parameters from a flat vector in [`Mlp::flatten`] order.
    pub fn set_flat(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.parameter_count())));
        }
        let mut i = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = flat[i];
                i += 1;
            }
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (li, l) in self.layers.iter().enumerate() {
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("non-finite parameter in layer {li}")));
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &Input<'_, S>) -> Result<()> {
        let d = self.spec.input_dimension;
        let ok = match input {
            Input::Dense(x) => x.len() == d,
            Input::Sparse(x) => x.iter().all(|&(i, _)| i < d),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("input does not fit dimension {d}")))
        }
    }

    /// Forward pass into `ws`; returns the output slice.
    pub fn forward_into<'w>(&self, input: Input<'_, S>, ws: &'w mut Workspace<S>) -> Result<&'w [S]> {
        self.check_input(&input)?;
        self.forward_unchecked(input, ws);
        Ok(ws.output())
    }

    pub fn forward(&self, input: Input<'_, S>) -> Result<Vec<S>> {
        let mut ws = Workspace::new(self);
        self.forward_into(input, &mut ws).map(<[S]>::to_vec)
    }

    fn forward_unchecked(&self, input: Input<'_, S>, ws: &mut Workspace<S>) {
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let (before, rest) = ws.acts.split_at_mut(li);
            let out = &mut rest[0];
            out.copy_from_slice(&layer.bias);
            if li == 0 {
                match input {
                    Input::Dense(x) => affine_dense(layer, x, out),
                    Input::Sparse(x) => {
                        for &(i, v) in x {
                            if v == S::zero() {
                                continue;
                            }
                            for (o, acc) in out.iter_mut().enumerate() {
                                *acc += layer.weights[o * layer.fan_in + i] * v;
                            }
                        }
                    }
                }
            } else {
                affine_dense(layer, &before[li - 1], out);
            }
            if li != last {
                out.iter_mut().for_each(|v| *v = v.max(S::zero()));
            }
        }
    }

    /// Mean loss over `batch` and its gradient.
    pub fn loss_and_grad(&self, batch: &[Example<'_, S>]) -> Result<(S, Gradients<S>)> {
        let mut grads = Gradients::zeros_like(self);
        let mut ws = Workspace::new(self);
        let loss = self.accumulate_grad(batch, &mut ws, &mut grads)?;
        Ok((loss, grads))
    }

    /// Like [`Mlp::loss_and_grad`] but reuses caller-owned buffers.
    pub fn accumulate_grad(&self, batch: &[Example<'_, S>], ws: &mut Workspace<S>, grads: &mut Gradients<S>) -> Result<S> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        grads.fill_zero();
        let m = self.spec.output_dimension;
        let mut total = S::zero();
        for ex in batch {
            self.check_input(&ex.input)?;
            self.forward_unchecked(ex.input, ws);
            let out = ws.acts.last().expect("at least one layer");
            let delta_out = ws.deltas.last_mut().expect("at least one layer");
            match ex.target {
                Target::Action { action, value } => {
                    if action >= m {
                        return Err(Error::Shape(format!("action {action} >= {m}")));
                    }
                    let err = out[action] - value;
                    total += S::lit(0.5) * err * err;
                    delta_out.iter_mut().for_each(|d| *d = S::zero());
                    delta_out[action] = err;
                }
                Target::Distribution(p) => {
                    if p.len() != m {
                        return Err(Error::Shape("target distribution length".into()));
                    }
                    let peak = out.iter().copied().fold(S::neg_infinity(), S::max);
                    let z: S = out.iter().map(|&v| (v - peak).exp()).sum();
                    let log_z = z.ln() + peak;
                    for (a, d) in delta_out.iter_mut().enumerate() {
                        let q = (out[a] - log_z).exp();
                        *d = q - p[a];
                        if p[a] > S::zero() {
                            total -= p[a] * (out[a] - log_z);
                        }
                    }
                }
            }
            self.backward(ex.input, ws, grads);
        }
        let inv = S::one() / S::from_count(batch.len());
        grads.scale(inv);
        Ok(total * inv)
    }

    /// Accumulates parameter gradients given the output delta already stored
    /// in `ws.deltas[last]`.
    fn backward(&self, input: Input<'_, S>, ws: &mut Workspace<S>, grads: &mut Gradients<S>) {
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let g = &mut grads.layers[li];
            let (lower, upper) = ws.deltas.split_at_mut(li);
            let delta = &upper[0];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
            }
            if li == 0 {
                match input {
                    Input::Dense(x) => outer_add(&mut g.weights, delta, x),
                    Input::Sparse(x) => {
                        for (o, &d) in delta.iter().enumerate() {
                            if d == S::zero() {
                                continue;
                            }
                            for &(i, v) in x {
                                g.weights[o * layer.fan_in + i] += d * v;
                            }
                        }
                    }
                }
            } else {
                let prev_act = &ws.acts[li - 1];
                outer_add(&mut g.weights, delta, prev_act);
                let below = &mut lower[li - 1];
                below.iter_mut().for_each(|b| *b = S::zero());
                for (o, &d) in delta.iter().enumerate() {
                    if d == S::zero() {
                        continue;
                    }
                    let row = &layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                    for (b, &w) in below.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
                // ReLU derivative; the kink at 0 takes subgradient 0.
                for (b, &a) in below.iter_mut().zip(prev_act.iter()) {
                    if a <= S::zero() {
                        *b = S::zero();
                    }
                }
            }
        }
    }

    /// Writes `layer,kind,row,col,value` lines in layer-major, row-major order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "layer,kind,row,col,value")?;
        for (li, l) in self.layers.iter().enumerate() {
            for o in 0..l.fan_out {
                for i in 0..l.fan_in {
                    writeln!(out, "{li},w,{o},{i},{:e}", l.weight(o, i).as_f64())?;
                }
            }
            for (o, b) in l.bias.iter().enumerate() {
                writeln!(out, "{li},b,{o},0,{:e}", b.as_f64())?;
            }
        }
        Ok(())
    }
}

#[inline]
fn affine_dense<S: Scalar>(layer: &Layer<S>, x: &[S], out: &mut [S]) {
    for (o, acc) in out.iter_mut().enumerate() {
        let row = &layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
        let mut sum = S::zero();
        for (&w, &v) in row.iter().zip(x) {
            sum += w * v;
        }
        *acc += sum;
    }
}

#[inline]
fn outer_add<S: Scalar>(g: &mut [S], delta: &[S], x: &[S]) {
    let n = x.len();
    for (o, &d) in delta.iter().enumerate() {
        if d == S::zero() {
            continue;
        }
        for (gw, &v) in g[o * n..(o + 1) * n].iter_mut().zip(x) {
            *gw += d * v;
        }
    }
}

/// Denominator floor for relative gradient errors, so parameters with
/// near-zero gradient are judged on absolute error.
pub const FD_RELATIVE_FLOOR: f64 = 1e-6;

/// Largest relative error between backprop gradients and central differences
/// with step `h`. Relative error is `|g - fd| / max(|g|, |fd|, floor)`.
pub fn finite_difference_check<S: Scalar>(net: &Mlp<S>, batch: &[Example<'_, S>], h: S) -> Result<S> {
    let (_, grads) = net.loss_and_grad(batch)?;
    let analytic = grads.flatten();
    let base = net.flatten();
    let mut probe = net.clone();
    let mut flat = base.clone();
    let floor = S::lit(FD_RELATIVE_FLOOR);
    let mut worst = S::zero();
    for i in 0..base.len() {
        flat[i] = base[i] + h;
        probe.set_flat(&flat)?;
        let (up, _) = probe.loss_and_grad(batch)?;
        flat[i] = base[i] - h;
        probe.set_flat(&flat)?;
        let (down, _) = probe.loss_and_grad(batch)?;
        flat[i] = base[i];
        let fd = (up - down) / (h + h);
        let denom = analytic[i].abs().max(fd.abs()).max(floor);
        worst = worst.max((analytic[i] - fd).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(hidden: Vec<usize>) -> MlpSpec {
        MlpSpec::new(4, hidden, 3, 7).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let s = MlpSpec::new(50, vec![25], 3, 11).unwrap();
        let a = Mlp::<f64>::init(&s).unwrap();
        let b = Mlp::<f64>::init(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.layers[0].fan_out, a.layers[0].fan_in), (25, 50));
        assert_eq!((a.layers[1].fan_out, a.layers[1].fan_in), (3, 25));
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(MlpSpec::new(0, vec![], 3, 0).is_err());
        assert!(MlpSpec::new(3, vec![0], 3, 0).is_err());
        assert!(MlpSpec::new(3, vec![], 1, 0).is_err());
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut net = Mlp::<f64>::init(&spec(vec![5])).unwrap();
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        net.layers[1].bias = vec![0.5, -1.0, 2.0];
        assert_eq!(net.forward(Input::Dense(&[1.0, 2.0, 3.0, 4.0])).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn sparse_and_dense_agree() {
        let net = Mlp::<f64>::init(&spec(vec![6, 5])).unwrap();
        let dense = net.forward(Input::Dense(&[0.0, 1.0, 0.0, 0.5])).unwrap();
        let sparse = net.forward(Input::Sparse(&[(1, 1.0), (3, 0.5)])).unwrap();
        for (a, b) in dense.iter().zip(&sparse) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = Mlp::<f64>::init(&spec(vec![])).unwrap();
        assert!(net.forward(Input::Dense(&[1.0])).is_err());
        assert!(net.forward(Input::Sparse(&[(9, 1.0)])).is_err());
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let net = Mlp::<f64>::init(&spec(vec![5])).unwrap();
        let x = [0.3, -0.2, 0.1, 0.9];
        let q = net.forward(Input::Dense(&x)).unwrap();
        let ex = Example { input: Input::Dense(&x), target: Target::Action { action: 2, value: q[2] } };
        let (loss, grads) = net.loss_and_grad(&[ex]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn uniform_cross_entropy_is_log_actions() {
        let mut net = Mlp::<f64>::init(&spec(vec![])).unwrap();
        net.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
        let target = [1.0 / 3.0; 3];
        let ex = Example { input: Input::Dense(&[1.0, 0.0, 0.0, 0.0]), target: Target::Distribution(&target) };
        let (loss, _) = net.loss_and_grad(&[ex]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = Mlp::<f64>::init(&spec(vec![6, 5])).unwrap();
        let xs = [[0.3, -0.7, 1.1, 0.2], [1.0, 0.5, -0.4, 0.8]];
        let dist = [0.2, 0.5, 0.3];
        let batch = [
            Example { input: Input::Dense(&xs[0]), target: Target::Action { action: 1, value: 0.7 } },
            Example { input: Input::Dense(&xs[1]), target: Target::Distribution(&dist) },
        ];
        assert!(finite_difference_check(&net, &batch, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn csv_dump_has_one_line_per_parameter() {
        let net = Mlp::<f64>::init(&spec(vec![2])).unwrap();
        let mut buf = Vec::new();
        net.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + net.parameter_count());
    }
}
