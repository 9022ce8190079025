//! Small dense feedforward networks with exact backpropagation and Adam.
//!
//! Every learned component in the crate (Q-networks, dynamics models and the
//! context auto-encoder) is an [`MlpParams`]: a layer-shape descriptor plus a
//! single flat parameter vector. Keeping parameters flat makes the Reptile
//! interpolation and checkpointing trivial.
//!
//! Parameter layout, per layer `l` mapping `sizes[l]` inputs to `sizes[l+1]`
//! outputs: the weight matrix in row-major order (`out x in`), immediately
//! followed by the `out` biases. Layers are stored in order.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    /// ReLU on hidden layers, identity on the output layer.
    ReluLinear,
    /// Logistic sigmoid on every layer, output included.
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    sizes: Vec<usize>,
    activation: Activation,
}

impl LayerShape {
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Input(format!(
                "layer shape needs at least input and output sizes, got {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::Input(format!("layer sizes must be >= 1, got {sizes:?}")));
        }
        Ok(Self { sizes, activation })
    }

    /// Builds `input -> hidden... -> output`.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, activation: Activation) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes, activation)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Offsets of (weights, biases) for layer `l`.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let start: usize = self.sizes[..l + 1].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        (start, start + self.sizes[l] * self.sizes[l + 1])
    }
}

/// Samples processed together by the batched kernels.
const TILE: usize = 16;

const LANES: usize = 16;

#[inline]
fn reduce_lanes(mut acc: [f64; LANES], tail: f64) -> f64 {
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for k in 0..width {
            acc[k] += acc[k + width];
        }
    }
    acc[0] + tail
}

/// Dot product with sixteen independent accumulators.
#[inline]
pub fn fast_dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    reduce_lanes(acc, tail)
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, &b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

/// Row-major activations of a batch, `layers[0]` being the inputs.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    pub n: usize,
    pub layers: Vec<Vec<f64>>,
}

impl BatchTrace {
    /// `n x output_dim` outputs.
    pub fn output(&self) -> &[f64] {
        self.layers.last().unwrap()
    }
}

/// Activations recorded by [`MlpParams::forward_trace`]; `layers[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    pub layers: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    shape: LayerShape,
    theta: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl MlpParams {
    pub fn zeros(shape: LayerShape) -> Self {
        let n = shape.n_params();
        Self {
            shape,
            theta: vec![0.0; n],
        }
    }

    /// He-uniform weights for ReLU layers, Xavier-uniform for sigmoid and
    /// linear-output layers. Biases start at zero.
    pub fn init<R: Rng + ?Sized>(shape: LayerShape, rng: &mut R) -> Self {
        let mut params = Self::zeros(shape);
        let n_layers = params.shape.n_layers();
        for l in 0..n_layers {
            let fan_in = params.shape.sizes[l];
            let fan_out = params.shape.sizes[l + 1];
            let relu = params.shape.activation == Activation::ReluLinear && l + 1 < n_layers;
            let limit = if relu {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            let (w0, b0) = params.shape.offsets(l);
            for v in &mut params.theta[w0..b0] {
                *v = rng.random_range(-limit..limit);
            }
        }
        params
    }

    pub fn from_theta(shape: LayerShape, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != shape.n_params() {
            return Err(Error::shape("parameter vector", shape.n_params(), theta.len()));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(Self { shape, theta })
    }

    pub fn shape(&self) -> &LayerShape {
        &self.shape
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    /// Mutable views of layer `l`'s weight matrix and bias vector.
    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (w0, b0) = self.shape.offsets(l);
        let end = b0 + self.shape.sizes[l + 1];
        let (w, b) = self.theta[w0..end].split_at_mut(b0 - w0);
        (w, b)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.shape.input_dim() {
            return Err(Error::shape("network input", self.shape.input_dim(), x.len()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for l in 0..self.shape.n_layers() {
            self.layer_forward(l, &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut layers = Vec::with_capacity(self.shape.sizes.len());
        layers.push(x.to_vec());
        for l in 0..self.shape.n_layers() {
            let mut out = Vec::new();
            self.layer_forward(l, &layers[l], &mut out);
            layers.push(out);
        }
        Ok(Trace { layers })
    }

    fn layer_forward(&self, l: usize, input: &[f64], out: &mut Vec<f64>) {
        let n_in = self.shape.sizes[l];
        let n_out = self.shape.sizes[l + 1];
        let (w0, b0) = self.shape.offsets(l);
        let w = &self.theta[w0..b0];
        let b = &self.theta[b0..b0 + n_out];
        let last = l + 1 == self.shape.n_layers();
        out.clear();
        out.extend(w.chunks_exact(n_in).zip(b).map(|(row, &bias)| {
            let z = fast_dot(row, input) + bias;
            self.activate(z, last)
        }));
    }

    #[inline]
    fn activate(&self, z: f64, last: bool) -> f64 {
        match self.shape.activation {
            Activation::Sigmoid => sigmoid(z),
            Activation::ReluLinear if last => z,
            Activation::ReluLinear => z.max(0.0),
        }
    }

    fn check_batch(&self, xs: &[f64], n: usize) -> Result<()> {
        if xs.len() != n * self.shape.input_dim() {
            return Err(Error::shape("batch input", n * self.shape.input_dim(), xs.len()));
        }
        Ok(())
    }

    fn layer_forward_batch(&self, l: usize, input: &[f64], n: usize, out: &mut Vec<f64>) {
        let n_in = self.shape.sizes[l];
        let n_out = self.shape.sizes[l + 1];
        let (w0, b0) = self.shape.offsets(l);
        let w = &self.theta[w0..b0];
        let b = &self.theta[b0..b0 + n_out];
        let last = l + 1 == self.shape.n_layers();
        out.clear();
        out.resize(n * n_out, 0.0);
        for t0 in (0..n).step_by(TILE) {
            let t1 = (t0 + TILE).min(n);
            for (o, row) in w.chunks_exact(n_in).enumerate() {
                for s in t0..t1 {
                    let z = fast_dot(row, &input[s * n_in..(s + 1) * n_in]) + b[o];
                    out[s * n_out + o] = self.activate(z, last);
                }
            }
        }
    }

    /// Forward pass of `n` row-major inputs; returns `n x output_dim` values
    /// equal to `n` calls of [`MlpParams::forward`].
    pub fn forward_batch(&self, xs: &[f64], n: usize) -> Result<Vec<f64>> {
        self.check_batch(xs, n)?;
        let mut cur = xs.to_vec();
        let mut next = Vec::new();
        for l in 0..self.shape.n_layers() {
            self.layer_forward_batch(l, &cur, n, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_batch_trace(&self, xs: &[f64], n: usize) -> Result<BatchTrace> {
        self.check_batch(xs, n)?;
        let mut layers = Vec::with_capacity(self.shape.sizes.len());
        layers.push(xs.to_vec());
        for l in 0..self.shape.n_layers() {
            let mut out = Vec::new();
            self.layer_forward_batch(l, &layers[l], n, &mut out);
            layers.push(out);
        }
        Ok(BatchTrace { n, layers })
    }

    /// Adds the parameter gradient of `sum_s grad_out[s] . y[s]` into `grad`.
    pub fn accumulate_grad_batch(&self, trace: &BatchTrace, grad_out: &[f64], grad: &mut [f64]) -> Result<()> {
        let n = trace.n;
        let n_layers = self.shape.n_layers();
        if grad_out.len() != n * self.shape.output_dim() {
            return Err(Error::shape(
                "batch cotangent",
                n * self.shape.output_dim(),
                grad_out.len(),
            ));
        }
        if grad.len() != self.theta.len() {
            return Err(Error::shape("gradient buffer", self.theta.len(), grad.len()));
        }
        let mut delta = grad_out.to_vec();
        if self.shape.activation == Activation::Sigmoid {
            for (d, a) in delta.iter_mut().zip(trace.output()) {
                *d *= a * (1.0 - a);
            }
        }
        for l in (0..n_layers).rev() {
            let n_in = self.shape.sizes[l];
            let n_out = self.shape.sizes[l + 1];
            let (w0, b0) = self.shape.offsets(l);
            let input = &trace.layers[l];
            let w = &self.theta[w0..b0];
            let mut prev = if l > 0 { vec![0.0; n * n_in] } else { Vec::new() };
            {
                let (gw, gb) = grad[w0..b0 + n_out].split_at_mut(b0 - w0);
                for t0 in (0..n).step_by(TILE) {
                    let t1 = (t0 + TILE).min(n);
                    for o in 0..n_out {
                        let gw_row = &mut gw[o * n_in..(o + 1) * n_in];
                        let w_row = &w[o * n_in..(o + 1) * n_in];
                        for s in t0..t1 {
                            let d = delta[s * n_out + o];
                            if d == 0.0 {
                                continue;
                            }
                            gb[o] += d;
                            axpy(gw_row, d, &input[s * n_in..(s + 1) * n_in]);
                            if l > 0 {
                                axpy(&mut prev[s * n_in..(s + 1) * n_in], d, w_row);
                            }
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            for (p, &a) in prev.iter_mut().zip(input) {
                match self.shape.activation {
                    Activation::Sigmoid => *p *= a * (1.0 - a),
                    Activation::ReluLinear => {
                        if a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                }
            }
            delta = prev;
        }
        Ok(())
    }

    /// Gradient of `grad_out . forward(x)` with respect to theta.
    pub fn backward(&self, x: &[f64], grad_out: &[f64]) -> Result<Vec<f64>> {
        if x.iter().chain(grad_out).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite input to backward".into()));
        }
        let trace = self.forward_trace(x)?;
        let mut grad = vec![0.0; self.theta.len()];
        self.accumulate_grad(&trace, grad_out, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Adds `scale * d(grad_out . y)/d(theta)` into `grad`, reusing a forward trace.
    pub fn accumulate_grad(&self, trace: &Trace, grad_out: &[f64], scale: f64, grad: &mut [f64]) -> Result<()> {
        if grad_out.len() != self.shape.output_dim() {
            return Err(Error::shape(
                "output cotangent",
                self.shape.output_dim(),
                grad_out.len(),
            ));
        }
        if grad.len() != self.theta.len() {
            return Err(Error::shape("gradient buffer", self.theta.len(), grad.len()));
        }
        let n_layers = self.shape.n_layers();
        let mut delta: Vec<f64> = grad_out.iter().map(|g| g * scale).collect();
        if self.shape.activation == Activation::Sigmoid {
            for (d, a) in delta.iter_mut().zip(trace.output()) {
                *d *= a * (1.0 - a);
            }
        }
        for l in (0..n_layers).rev() {
            let n_in = self.shape.sizes[l];
            let n_out = self.shape.sizes[l + 1];
            let (w0, b0) = self.shape.offsets(l);
            let input = &trace.layers[l];
            {
                let (gw, gb) = grad[w0..b0 + n_out].split_at_mut(b0 - w0);
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, &a) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.theta[w0..b0];
            let mut prev = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, &wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wv;
                }
            }
            for (p, &a) in prev.iter_mut().zip(input) {
                match self.shape.activation {
                    Activation::Sigmoid => *p *= a * (1.0 - a),
                    Activation::ReluLinear => {
                        if a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                }
            }
            delta = prev;
        }
        Ok(())
    }

    /// Checkpoint bytes; layout documented in `docs/formats.md`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.shape.sizes.len() + 8 * self.theta.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let act: u32 = match self.shape.activation {
            Activation::ReluLinear => 0,
            Activation::Sigmoid => 1,
        };
        out.extend_from_slice(&act.to_le_bytes());
        out.extend_from_slice(&(self.shape.sizes.len() as u32).to_le_bytes());
        for &s in &self.shape.sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.theta.len() as u64).to_le_bytes());
        for v in &self.theta {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = ByteReader { bytes, pos: 0 };
        if rd.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Data("checkpoint: bad magic".into()));
        }
        let version = rd.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("checkpoint: unsupported version {version}")));
        }
        let activation = match rd.u32()? {
            0 => Activation::ReluLinear,
            1 => Activation::Sigmoid,
            other => return Err(Error::Data(format!("checkpoint: unknown activation {other}"))),
        };
        let n_sizes = rd.u32()? as usize;
        let sizes = (0..n_sizes)
            .map(|_| rd.u32().map(|s| s as usize))
            .collect::<Result<Vec<_>>>()?;
        let shape = LayerShape::new(sizes, activation)?;
        let n = rd.u64()? as usize;
        if n != shape.n_params() {
            return Err(Error::shape("checkpoint parameters", shape.n_params(), n));
        }
        let theta = (0..n).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
        if rd.pos != bytes.len() {
            return Err(Error::Data("checkpoint: trailing bytes".into()));
        }
        Self::from_theta(shape, theta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// FNV-1a over the raw parameter bits; cheap identity check for restarts.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.theta {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"MLPF";
const CHECKPOINT_VERSION: u32 = 1;

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data("checkpoint: truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of `theta` in place.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if grad.len() != theta.len() || self.m.len() != theta.len() {
            return Err(Error::shape("adam gradient", theta.len(), grad.len()));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss_grad(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.is_empty() {
        return Err(Error::Input("mse of empty vectors".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::shape("mse target", pred.len(), target.len()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Dense matmul oracle that does not share the layout helpers.
    fn oracle_forward(params: &MlpParams, x: &[f64]) -> Vec<f64> {
        let sizes = params.shape().sizes().to_vec();
        let theta = params.theta();
        let mut off = 0;
        let mut a = x.to_vec();
        for l in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let mut w = vec![vec![0.0; n_in]; n_out];
            for (o, row) in w.iter_mut().enumerate() {
                for (i, v) in row.iter_mut().enumerate() {
                    *v = theta[off + o * n_in + i];
                }
            }
            off += n_in * n_out;
            let b = &theta[off..off + n_out];
            off += n_out;
            let last = l + 2 == sizes.len();
            a = (0..n_out)
                .map(|o| {
                    let mut z = b[o];
                    for i in 0..n_in {
                        z += w[o][i] * a[i];
                    }
                    match params.shape().activation() {
                        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                        Activation::ReluLinear if last => z,
                        Activation::ReluLinear => z.max(0.0),
                    }
                })
                .collect();
        }
        a
    }

    #[test]
    fn zero_network_outputs_zero() {
        let shape = LayerShape::new(vec![3, 5, 2], Activation::ReluLinear).unwrap();
        let p = MlpParams::zeros(shape);
        assert_eq!(p.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_chain() {
        let shape = LayerShape::new(vec![1, 1, 1], Activation::ReluLinear).unwrap();
        let p = MlpParams::from_theta(shape, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(p.forward(&[2.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn forward_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for act in [Activation::ReluLinear, Activation::Sigmoid] {
            let shape = LayerShape::new(vec![5, 7, 6, 3], act).unwrap();
            let p = MlpParams::init(shape, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = p.forward(&x).unwrap();
            let y_ref = oracle_forward(&p, &x);
            for (a, b) in y.iter().zip(&y_ref) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_kernels_match_single_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for act in [Activation::ReluLinear, Activation::Sigmoid] {
            let shape = LayerShape::new(vec![6, 37, 19, 4], act).unwrap();
            let p = MlpParams::init(shape, &mut rng);
            let n = 41;
            let xs: Vec<f64> = (0..n * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g_out: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let trace = p.forward_batch_trace(&xs, n).unwrap();
            assert_eq!(trace.output(), p.forward_batch(&xs, n).unwrap().as_slice());
            let mut g_batch = vec![0.0; p.len()];
            p.accumulate_grad_batch(&trace, &g_out, &mut g_batch).unwrap();
            let mut g_single = vec![0.0; p.len()];
            for s in 0..n {
                let x = &xs[s * 6..(s + 1) * 6];
                assert_eq!(&trace.output()[s * 4..(s + 1) * 4], p.forward(x).unwrap().as_slice());
                let t = p.forward_trace(x).unwrap();
                p.accumulate_grad(&t, &g_out[s * 4..(s + 1) * 4], 1.0, &mut g_single)
                    .unwrap();
            }
            assert_eq!(g_batch, g_single);
            assert!(p.forward_batch(&xs[1..], n).is_err());
        }
    }

    #[test]
    fn forward_rejects_bad_input() {
        let shape = LayerShape::new(vec![2, 2], Activation::ReluLinear).unwrap();
        let p = MlpParams::zeros(shape);
        assert!(matches!(p.forward(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn layer_shape_validation() {
        assert!(LayerShape::new(vec![3], Activation::Sigmoid).is_err());
        assert!(LayerShape::new(vec![3, 0, 1], Activation::Sigmoid).is_err());
        let s = LayerShape::new(vec![4, 8, 3], Activation::ReluLinear).unwrap();
        assert_eq!(s.n_params(), 4 * 8 + 8 + 8 * 3 + 3);
    }

    #[test]
    fn zero_cotangent_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = LayerShape::new(vec![3, 4, 2], Activation::ReluLinear).unwrap();
        let p = MlpParams::init(shape, &mut rng);
        let g = p.backward(&[0.3, 0.1, -0.5], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_bias_gradient_is_cotangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shape = LayerShape::new(vec![3, 2], Activation::ReluLinear).unwrap();
        let p = MlpParams::init(shape, &mut rng);
        let x = [0.5, -1.0, 2.0];
        let g = p.backward(&x, &[0.7, -1.3]).unwrap();
        assert_eq!(&g[6..8], &[0.7, -1.3]);
        assert_eq!(&g[0..3], &[0.7 * 0.5, -0.7, 0.7 * 2.0]);
    }

    #[test]
    fn backward_rejects_non_finite() {
        let shape = LayerShape::new(vec![1, 1], Activation::ReluLinear).unwrap();
        let p = MlpParams::zeros(shape);
        assert!(matches!(p.backward(&[f64::NAN], &[1.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn adam_zero_gradient_keeps_theta() {
        let mut theta = vec![0.3, -0.2];
        let mut adam = AdamState::new(2, 1e-3);
        adam.step(&mut theta, &[0.0, 0.0]).unwrap();
        assert_eq!(theta, vec![0.3, -0.2]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        for g in [2.5, -0.01, 1e3] {
            let mut theta = vec![1.0];
            let mut adam = AdamState::new(1, 0.01);
            adam.step(&mut theta, &[g]).unwrap();
            let moved = theta[0] - 1.0;
            let expected = -0.01 * g.signum() * (g.abs() / (g.abs() + 1e-8));
            assert!((moved - expected).abs() < 1e-15, "{moved} vs {expected}");
        }
    }

    #[test]
    fn adam_steps_do_not_grow_under_constant_gradient() {
        let mut theta = vec![0.0];
        let mut adam = AdamState::new(1, 0.01);
        adam.step(&mut theta, &[0.4]).unwrap();
        let d1 = theta[0].abs();
        let before = theta[0];
        adam.step(&mut theta, &[0.4]).unwrap();
        let d2 = (theta[0] - before).abs();
        assert!(d2 <= d1 * (1.0 + 1e-12));
    }

    #[test]
    fn mse_cases() {
        let (l, g) = mse_loss_grad(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
        let (l, g) = mse_loss_grad(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g, vec![1.0, 0.0]);
        let (l2, g2) = mse_loss_grad(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(l2, l);
        assert_eq!(g2, vec![-1.0, 0.0]);
        assert!(mse_loss_grad(&[], &[]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = LayerShape::new(vec![2, 3, 1], Activation::Sigmoid).unwrap();
        let p = MlpParams::init(shape, &mut rng);
        let bytes = p.to_bytes();
        assert_eq!(MlpParams::from_bytes(&bytes).unwrap(), p);
        assert!(MlpParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(MlpParams::from_bytes(&bad).is_err());
    }
}
