//! Small dense-network engine: fully connected layers, a few activations,
//! hand-written reverse mode, Adam/SGD and Polyak target blending.
//!
//! Batches are row-major matrices, one sample per row. Layer weights are
//! stored row-major `[out × in]`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Columns `start..start + width` as a new matrix.
    pub fn columns(&self, start: usize, width: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..start + width]);
        }
        out
    }

    /// Side-by-side concatenation.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                expected: self.rows,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, self.cols + other.cols);
        for r in 0..self.rows {
            let row = out.row_mut(r);
            row[..self.cols].copy_from_slice(self.row(r));
            row[self.cols..].copy_from_slice(other.row(r));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    fn from_tag(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Activation::Linear),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `[n_out × n_in]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// A multilayer perceptron; the parameter set of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Gradients, shape-congruent with an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().flatten().chain(self.bias.iter().flatten())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub fn global_norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            let k = max_norm / norm;
            self.weights.iter_mut().chain(self.bias.iter_mut()).flatten().for_each(|g| *g *= k);
        }
    }
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// `outputs[0]` is the input batch, `outputs[k]` the output of layer `k-1`.
    outputs: Vec<Matrix>,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        self.outputs.last().expect("tape holds at least the input")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators so the loop vectorizes.
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Builds a network with fan-in scaled uniform weights and zero biases.
/// `activations[k]` is applied after layer `k`.
pub fn mlp_init(layer_sizes: &[usize], activations: &[Activation], rng_seed: u64) -> Result<Mlp> {
    if layer_sizes.len() < 2 {
        return Err(invalid("a network needs at least an input and an output size"));
    }
    if activations.len() != layer_sizes.len() - 1 {
        return Err(invalid(format!(
            "{} activations for {} layers",
            activations.len(),
            layer_sizes.len() - 1
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(invalid("layer sizes must be positive"));
    }
    let mut rng = seed::rng_for(rng_seed, seed::tag::INIT);
    let layers = layer_sizes
        .windows(2)
        .zip(activations)
        .map(|(w, &activation)| {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (1.0 / n_in as f64).sqrt();
            Layer {
                n_in,
                n_out,
                weights: (0..n_in * n_out).map(|_| rng.random_range(-limit..limit)).collect(),
                bias: vec![0.0; n_out],
                activation,
            }
        })
        .collect();
    Ok(Mlp { layers })
}

impl Mlp {
    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty network").n_out
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// One sample through the network.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = (0..layer.n_out)
                .map(|o| {
                    let w = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    layer.activation.apply(dot(w, &x) + layer.bias[o])
                })
                .collect();
        }
        Ok(x)
    }

    pub fn forward_batch(&self, input: &Matrix) -> Result<Matrix> {
        Ok(self.forward_tape(input)?.outputs.pop().expect("non-empty tape"))
    }

    /// Batched forward pass keeping every layer output for backprop.
    pub fn forward_tape(&self, input: &Matrix) -> Result<Tape> {
        if input.cols != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                got: input.cols,
            });
        }
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(input.clone());
        for layer in &self.layers {
            let x = outputs.last().expect("input pushed");
            let mut y = Matrix::zeros(x.rows, layer.n_out);
            for r in 0..x.rows {
                let xr = x.row(r);
                let yr = y.row_mut(r);
                for (o, out) in yr.iter_mut().enumerate() {
                    let w = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    *out = layer.activation.apply(dot(w, xr) + layer.bias[o]);
                }
            }
            outputs.push(y);
        }
        Ok(Tape { outputs })
    }

    /// Reverse pass. `upstream` is dLoss/dOutput for every sample; returns
    /// the parameter gradients summed over the batch and dLoss/dInput.
    pub fn backward(&self, tape: &Tape, upstream: &Matrix) -> Result<(Gradients, Matrix)> {
        let out = tape.output();
        if upstream.rows != out.rows || upstream.cols != out.cols {
            return Err(Error::ShapeMismatch {
                expected: out.rows * out.cols,
                got: upstream.rows * upstream.cols,
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let y = &tape.outputs[k + 1];
            let x = &tape.outputs[k];
            // Through the activation.
            if layer.activation != Activation::Linear {
                for (d, &yv) in delta.data.iter_mut().zip(&y.data) {
                    *d *= layer.activation.derivative_from_output(yv);
                }
            }
            let gw = &mut grads.weights[k];
            let gb = &mut grads.bias[k];
            let mut dx = Matrix::zeros(x.rows, layer.n_in);
            for r in 0..x.rows {
                let dr = delta.row(r);
                let xr = x.row(r);
                let dxr = dx.row_mut(r);
                for (o, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    axpy(d, xr, &mut gw[o * layer.n_in..(o + 1) * layer.n_in]);
                    axpy(d, &layer.weights[o * layer.n_in..(o + 1) * layer.n_in], dxr);
                }
            }
            delta = dx;
        }
        Ok((grads, delta))
    }

    fn check_congruent(&self, other: &Mlp) -> Result<()> {
        let same = self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.n_in == b.n_in && a.n_out == b.n_out);
        if same {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: self.n_params(),
                got: other.n_params(),
            })
        }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }
}

/// Polyak blend `target ← τ·online + (1−τ)·target`. `τ = 1` copies exactly.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(invalid(format!("tau must lie in (0, 1], got {tau}")));
    }
    target.check_congruent(online)?;
    if tau == 1.0 {
        target.clone_from(online);
        return Ok(());
    }
    for (t, &o) in target.params_mut().zip(online.params()) {
        *t += tau * (o - *t);
    }
    Ok(())
}

/// Adam with the usual defaults (β1 0.9, β2 0.999, ε 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let n = net.n_params();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(Adam),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, net: &Mlp, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(net, lr)),
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
        }
    }

    /// Descends along `grads`. Non-finite gradients abort with
    /// [`Error::Divergence`] before anything is touched.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        match self {
            Optimizer::Sgd { lr } => {
                let lr = *lr;
                for (p, g) in net.params_mut().zip(grads_in_param_order(grads)) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam(adam) => adam_step(net, grads, adam),
        }
        Ok(())
    }
}

/// Flattened in the same order as the network's parameters.
fn grads_in_param_order(grads: &Gradients) -> impl Iterator<Item = f64> + '_ {
    grads
        .weights
        .iter()
        .zip(&grads.bias)
        .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
}

/// One Adam update, in place.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut Adam) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    let params = net.params_mut();
    let g_iter = grads_in_param_order(grads);
    for (((p, g), m), v) in params.zip(g_iter).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

const FORMAT_MAGIC: &str = "uav-alloc-mlp";
const FORMAT_VERSION: u32 = 1;

/// Writes the network as versioned text:
///
/// ```text
/// uav-alloc-mlp 1
/// layers <L>
/// layer <in> <out> <activation>
/// <out lines of `in` weights, row-major>
/// <one line of `out` biases>
/// ...
/// ```
///
/// Values use the shortest round-trip decimal form, so loading is bit-exact.
pub fn save_mlp<W: Write>(net: &Mlp, mut w: W) -> Result<()> {
    let mut s = String::new();
    writeln!(s, "{FORMAT_MAGIC} {FORMAT_VERSION}").unwrap();
    writeln!(s, "layers {}", net.layers.len()).unwrap();
    for l in &net.layers {
        writeln!(s, "layer {} {} {}", l.n_in, l.n_out, l.activation.tag()).unwrap();
        for row in l.weights.chunks(l.n_in) {
            write_values(&mut s, row);
        }
        write_values(&mut s, &l.bias);
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_values(s: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:?}").unwrap();
    }
    s.push('\n');
}

pub fn load_mlp<R: BufRead>(r: R) -> Result<Mlp> {
    let mut lines = r.lines();
    let mut next = move || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Format("unexpected end of model file".into()))?
            .map_err(Error::from)
    };
    let header = next()?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(FORMAT_MAGIC) {
        return Err(Error::Format("not a uav-alloc model file".into()));
    }
    let version: u32 = parse_token(parts.next())?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let count_line = next()?;
    let n_layers: usize = match count_line.split_whitespace().collect::<Vec<_>>()[..] {
        ["layers", n] => parse_token(Some(n))?,
        _ => return Err(Error::Format("expected `layers <n>`".into())),
    };
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let head = next()?;
        let (n_in, n_out, activation) = match head.split_whitespace().collect::<Vec<_>>()[..] {
            ["layer", i, o, a] => (parse_token(Some(i))?, parse_token(Some(o))?, Activation::from_tag(a)?),
            _ => return Err(Error::Format(format!("bad layer header `{head}`"))),
        };
        let mut weights = Vec::with_capacity(n_in * n_out);
        for _ in 0..n_out {
            let row = parse_values(&next()?)?;
            if row.len() != n_in {
                return Err(Error::Format(format!("weight row has {} values, expected {n_in}", row.len())));
            }
            weights.extend(row);
        }
        let bias = parse_values(&next()?)?;
        if bias.len() != n_out {
            return Err(Error::Format(format!("bias has {} values, expected {n_out}", bias.len())));
        }
        layers.push(Layer {
            n_in,
            n_out,
            weights,
            bias,
            activation,
        });
    }
    for pair in layers.windows(2) {
        if pair[0].n_out != pair[1].n_in {
            return Err(Error::Format("layer dimensions do not chain".into()));
        }
    }
    if layers.is_empty() {
        return Err(Error::Format("model has no layers".into()));
    }
    Ok(Mlp { layers })
}

fn parse_token<T: std::str::FromStr>(tok: Option<&str>) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Format(format!("cannot parse `{}`", tok.unwrap_or(""))))
}

fn parse_values(line: &str) -> Result<Vec<f64>> {
    line.split_whitespace().map(|t| parse_token(Some(t))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin(weights: Vec<f64>, bias: Vec<f64>, n_in: usize, n_out: usize) -> Mlp {
        Mlp {
            layers: vec![Layer {
                n_in,
                n_out,
                weights,
                bias,
                activation: Activation::Linear,
            }],
        }
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let acts = [Activation::Relu, Activation::Relu, Activation::Linear];
        let a = mlp_init(&[4, 64, 64, 2], &acts, 9).unwrap();
        let b = mlp_init(&[4, 64, 64, 2], &acts, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert!(mlp_init(&[], &[], 1).is_err());
        assert!(mlp_init(&[3], &[], 1).is_err());
    }

    #[test]
    fn odd_activations_map_zero_to_zero() {
        let net = mlp_init(&[3, 8, 2], &[Activation::Tanh, Activation::Tanh], 4).unwrap();
        assert_eq!(net.forward(&[0.0; 3]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = lin(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, 2);
        assert_eq!(net.forward(&[0.25, -3.0]).unwrap(), vec![0.25, -3.0]);
    }

    #[test]
    fn hand_computed_affine_layer() {
        let net = lin(vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 1.0], 2, 2);
        assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), vec![3.0, 8.0]);
        assert!(matches!(net.forward(&[1.0]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn batch_forward_preserves_order() {
        let net = mlp_init(&[3, 5, 2], &[Activation::Relu, Activation::Linear], 2).unwrap();
        let rows: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, -(i as f64) * 0.5, 1.0]).collect();
        let out = net.forward_batch(&Matrix::from_rows(&rows).unwrap()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(out.row(i), net.forward(r).unwrap().as_slice());
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = mlp_init(&[3, 8, 2], &[Activation::Tanh, Activation::Linear], 1).unwrap();
        let x = Matrix::from_rows(&[[0.3, -0.1, 0.8]]).unwrap();
        let tape = net.forward_tape(&x).unwrap();
        let (g, dx) = net.backward(&tape, &Matrix::zeros(1, 2)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(dx.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_quadratic_loss_derivative() {
        // f(x) = w·x, L = (w·x − y)^2, dL/dw = 2x(w·x − y).
        let (w, x, y) = (1.5, 2.0, 0.5);
        let net = lin(vec![w], vec![0.0], 1, 1);
        let tape = net.forward_tape(&Matrix::from_rows(&[[x]]).unwrap()).unwrap();
        let up = Matrix::from_rows(&[[2.0 * (w * x - y)]]).unwrap();
        let (g, _) = net.backward(&tape, &up).unwrap();
        assert_eq!(g.weights[0][0], 2.0 * x * (w * x - y));
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut net = mlp_init(&[2, 3, 1], &[Activation::Relu, Activation::Linear], 3).unwrap();
        let before = net.clone();
        let mut adam = Adam::new(&net, 0.01);
        let g = Gradients::zeros_like(&net);
        adam_step(&mut net, &g, &mut adam);
        assert_eq!(net, before);
        assert_eq!(adam.step, 1);
        assert!(adam.first_moment().iter().all(|&m| m == 0.0));
        assert!(adam.second_moment().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut net = lin(vec![1.0], vec![0.0], 1, 1);
        let mut adam = Adam::new(&net, 0.01);
        let mut g = Gradients::zeros_like(&net);
        g.weights[0][0] = 1.0;
        adam_step(&mut net, &g, &mut adam);
        assert!((net.layers[0].weights[0] - (1.0 - 0.01)).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_a_parabola() {
        let mut net = lin(vec![1.0], vec![0.0], 1, 1);
        let mut opt = Optimizer::new(OptimizerKind::Adam, &net, 0.01);
        for _ in 0..1000 {
            let w = net.layers[0].weights[0];
            let mut g = Gradients::zeros_like(&net);
            g.weights[0][0] = 2.0 * w;
            opt.step(&mut net, &g).unwrap();
        }
        assert!(net.layers[0].weights[0].abs() < 0.05);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut net = lin(vec![1.0], vec![0.0], 1, 1);
        let mut opt = Optimizer::new(OptimizerKind::Adam, &net, 0.01);
        let mut g = Gradients::zeros_like(&net);
        g.bias[0][0] = f64::NAN;
        assert!(matches!(opt.step(&mut net, &g), Err(Error::Divergence(_))));
        assert_eq!(net.layers[0].weights[0], 1.0);
    }

    #[test]
    fn sgd_step() {
        let mut net = lin(vec![1.0], vec![0.5], 1, 1);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, &net, 0.1);
        let mut g = Gradients::zeros_like(&net);
        g.weights[0][0] = 2.0;
        g.bias[0][0] = -1.0;
        opt.step(&mut net, &g).unwrap();
        assert!((net.layers[0].weights[0] - 0.8).abs() < 1e-15);
        assert!((net.layers[0].bias[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn soft_update_cases() {
        let online = mlp_init(&[2, 4, 1], &[Activation::Tanh, Activation::Linear], 1).unwrap();
        let mut target = mlp_init(&[2, 4, 1], &[Activation::Tanh, Activation::Linear], 2).unwrap();
        soft_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target, online);

        let mut t = lin(vec![0.0], vec![0.0], 1, 1);
        let o = lin(vec![1.0], vec![1.0], 1, 1);
        soft_update(&mut t, &o, 0.005).unwrap();
        assert_eq!(t.layers[0].weights[0], 0.005);

        let mut same = online.clone();
        soft_update(&mut same, &online, 0.3).unwrap();
        assert_eq!(same, online);

        assert!(soft_update(&mut t, &o, 0.0).is_err());
        assert!(soft_update(&mut t, &o, 1.5).is_err());
        let wrong = lin(vec![1.0, 2.0], vec![0.0], 2, 1);
        assert!(soft_update(&mut t, &wrong, 0.5).is_err());
    }

    #[test]
    fn soft_update_contracts_geometrically() {
        let o = lin(vec![1.0], vec![0.0], 1, 1);
        let mut t = lin(vec![0.0], vec![0.0], 1, 1);
        let tau = 0.1;
        for n in 1..=50 {
            soft_update(&mut t, &o, tau).unwrap();
            let gap = 1.0 - t.layers[0].weights[0];
            assert!((gap - (1.0 - tau).powi(n)).abs() < 1e-12);
        }
    }

    #[test]
    fn model_text_round_trip_is_bit_exact() {
        let acts = [Activation::Relu, Activation::Tanh, Activation::Linear];
        let net = mlp_init(&[4, 7, 5, 2], &acts, 77).unwrap();
        let mut buf = Vec::new();
        save_mlp(&net, &mut buf).unwrap();
        let back = load_mlp(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        assert!(load_mlp("garbage\n".as_bytes()).is_err());
    }
}
