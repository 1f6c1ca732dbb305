//! Dense feedforward networks with exact reverse-mode gradients, Adam, and
//! Polyak target averaging.
//!
//! Parameters live in one flat vector, per layer: weights row-major
//! `(out_dim x in_dim)`, then biases. No minibatch abstraction here; batching
//! is a caller-side loop with gradient accumulation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Element-wise activation applied after each affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the post-activation value `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Linear => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Linear),
            _ => Err(Error::Parse(format!("unknown activation tag {tag}"))),
        }
    }
}

/// Fully connected feedforward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    sizes: Vec<usize>,
    acts: Vec<Activation>,
    /// Per layer: weights row-major (out x in), then biases.
    params: Vec<f64>,
}

/// Per-parameter partials plus the gradient w.r.t. the network input.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Same layout as [`Network::params`].
    pub params: Vec<f64>,
    /// d(upstream . output) / d(input).
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            params: vec![0.0; net.params.len()],
            input: vec![0.0; net.input_dim()],
        }
    }

    /// Accumulates `other * scale` into `self` (input gradient included).
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            *a += b * scale;
        }
        for (a, b) in self.input.iter_mut().zip(&other.input) {
            *a += b * scale;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite()) && self.input.iter().all(|v| v.is_finite())
    }
}

fn layer_param_len(in_dim: usize, out_dim: usize) -> usize {
    out_dim * in_dim + out_dim
}

impl Network {
    /// Number of scalar parameters for the given layer sizes.
    pub fn param_count_for(sizes: &[usize]) -> usize {
        sizes
            .windows(2)
            .map(|w| layer_param_len(w[0], w[1]))
            .sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.acts
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn same_architecture(&self, other: &Network) -> bool {
        self.sizes == other.sizes && self.acts == other.acts
    }

    fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }
}

/// Reusable forward/backward buffers for one network architecture. The hot
/// training loop runs many passes per second; reusing these avoids an
/// allocation storm.
#[derive(Debug, Clone)]
pub struct Workspace {
    /// Post-activations per layer: `acts[0]` is the input copy.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    prev_delta: Vec<f64>,
}

impl Workspace {
    pub fn for_network(net: &Network) -> Workspace {
        let acts = net.sizes.iter().map(|&s| vec![0.0; s]).collect();
        let widest = *net.sizes.iter().max().unwrap();
        Workspace { acts, delta: vec![0.0; widest], prev_delta: vec![0.0; widest] }
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

impl Network {
    /// Forward pass into reusable buffers; the result stays in `ws.output()`.
    pub fn forward_ws(&self, input: &[f64], ws: &mut Workspace) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "forward input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        ws.acts[0].copy_from_slice(input);
        let mut offset = 0usize;
        for l in 0..self.num_layers() {
            let (in_dim, out_dim) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + out_dim * in_dim];
            let b = &self.params[offset + out_dim * in_dim..offset + out_dim * in_dim + out_dim];
            let (before, after) = ws.acts.split_at_mut(l + 1);
            let prev = &before[l];
            let out = &mut after[0];
            let act = self.acts[l];
            for o in 0..out_dim {
                let row = &w[o * in_dim..(o + 1) * in_dim];
                let mut acc = b[o];
                for (wi, ai) in row.iter().zip(prev.iter()) {
                    acc += wi * ai;
                }
                out[o] = act.apply(acc);
            }
            offset += out_dim * in_dim + out_dim;
        }
        Ok(())
    }

    /// Reverse pass over the activations left in `ws` by `forward_ws`.
    /// Accumulates `d(upstream . output)/d(params)` into `param_grads` when
    /// given, and overwrites `input_grad` with the input gradient when given.
    pub fn backward_ws(
        &self,
        ws: &mut Workspace,
        upstream: &[f64],
        mut param_grads: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        if upstream.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient has length {}, network output is {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        if let Some(g) = param_grads.as_ref() {
            if g.len() != self.params.len() {
                return Err(Error::Shape("gradient buffer does not mirror network".into()));
            }
        }
        let last_act = *self.acts.last().unwrap();
        for (i, (u, a)) in upstream.iter().zip(ws.acts[self.num_layers()].iter()).enumerate() {
            ws.delta[i] = u * last_act.derivative_from_output(*a);
        }
        let mut offset = self.params.len();
        for l in (0..self.num_layers()).rev() {
            let (in_dim, out_dim) = (self.sizes[l], self.sizes[l + 1]);
            offset -= out_dim * in_dim + out_dim;
            let prev = &ws.acts[l];
            if let Some(g) = param_grads.as_deref_mut() {
                let (dw, db) = g[offset..offset + out_dim * in_dim + out_dim]
                    .split_at_mut(out_dim * in_dim);
                for o in 0..out_dim {
                    let d = ws.delta[o];
                    if d != 0.0 {
                        let row = &mut dw[o * in_dim..(o + 1) * in_dim];
                        for (gi, pi) in row.iter_mut().zip(prev.iter()) {
                            *gi += d * pi;
                        }
                    }
                    db[o] += d;
                }
            }
            let need_input = l > 0 || input_grad.is_some();
            if !need_input {
                break;
            }
            let w = &self.params[offset..offset + out_dim * in_dim];
            ws.prev_delta[..in_dim].fill(0.0);
            for o in 0..out_dim {
                let d = ws.delta[o];
                if d != 0.0 {
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    for (pd, wi) in ws.prev_delta[..in_dim].iter_mut().zip(row.iter()) {
                        *pd += wi * d;
                    }
                }
            }
            if l == 0 {
                if let Some(ig) = input_grad {
                    ig.copy_from_slice(&ws.prev_delta[..in_dim]);
                }
                break;
            }
            let act = self.acts[l - 1];
            for (pd, a) in ws.prev_delta[..in_dim].iter_mut().zip(ws.acts[l].iter()) {
                *pd *= act.derivative_from_output(*a);
            }
            std::mem::swap(&mut ws.delta, &mut ws.prev_delta);
        }
        Ok(())
    }
}

/// Builds a seeded network. Weights are uniform in +/-1/sqrt(fan_in) per
/// layer, biases start at zero; identical seeds give bit-identical networks.
pub fn init_network(layer_sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Network> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 layer sizes, got {}",
            layer_sizes.len()
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config("layer sizes must be positive".into()));
    }
    if activations.len() != layer_sizes.len() - 1 {
        return Err(Error::Config(format!(
            "{} activations for {} layers (need {})",
            activations.len(),
            layer_sizes.len(),
            layer_sizes.len() - 1
        )));
    }
    let mut rng = rng::stream(seed, &[rng::role::NET_INIT]);
    let mut params = Vec::with_capacity(Network::param_count_for(layer_sizes));
    for w in layer_sizes.windows(2) {
        let (in_dim, out_dim) = (w[0], w[1]);
        let limit = 1.0 / (in_dim as f64).sqrt();
        for _ in 0..out_dim * in_dim {
            params.push(rng.gen_range(-limit..=limit));
        }
        params.extend(std::iter::repeat(0.0).take(out_dim));
    }
    Ok(Network {
        sizes: layer_sizes.to_vec(),
        acts: activations.to_vec(),
        params,
    })
}

/// Activations of the final layer. Pure.
pub fn forward(net: &Network, input: &[f64]) -> Result<Vec<f64>> {
    let mut ws = Workspace::for_network(net);
    net.forward_ws(input, &mut ws)?;
    Ok(ws.acts.pop().unwrap())
}

/// Exact reverse-mode gradients of `upstream . output` with respect to every
/// parameter and to the input vector.
pub fn backward(net: &Network, input: &[f64], upstream: &[f64]) -> Result<Gradients> {
    let mut ws = Workspace::for_network(net);
    net.forward_ws(input, &mut ws)?;
    let mut grads = Gradients::zeros_like(net);
    let mut input_grad = vec![0.0; net.input_dim()];
    net.backward_ws(&mut ws, upstream, Some(&mut grads.params), Some(&mut input_grad))?;
    grads.input = input_grad;
    Ok(grads)
}

/// Adam optimizer accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    pub fn for_network(net: &Network) -> Self {
        Self::new(net.params().len())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moments(&self) -> &[f64] {
        &self.v
    }
}

/// One bias-corrected Adam update in place. Errors on non-finite gradients so
/// the caller can decide whether to skip or abort.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.params.len() != net.params.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries, network has {} parameters",
            grads.params.len(),
            net.params.len()
        )));
    }
    if state.m.len() != net.params.len() {
        return Err(Error::Shape("Adam state does not mirror network".into()));
    }
    if lr <= 0.0 {
        return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
    }
    if !grads.params.iter().all(|g| g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient in adam_step".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..net.params.len() {
        let g = grads.params[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        net.params[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    if !net.params.iter().all(|p| p.is_finite()) {
        return Err(Error::Numeric("non-finite parameter after adam_step".into()));
    }
    Ok(())
}

/// target <- (1 - tau) * target + tau * source, element-wise.
/// tau = 0 and tau = 1 are exact (bit-preserving) by construction.
pub fn polyak_update(target: &mut Network, source: &Network, tau: f64) -> Result<()> {
    if !target.same_architecture(source) {
        return Err(Error::Shape("polyak_update on mismatched architectures".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must be in [0, 1], got {tau}")));
    }
    if tau == 1.0 {
        target.params.copy_from_slice(&source.params);
    } else if tau != 0.0 {
        for (t, s) in target.params.iter_mut().zip(&source.params) {
            *t = (1.0 - tau) * *t + tau * s;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoint files
// ---------------------------------------------------------------------------
//
// Network layout (integers and floats little-endian):
//   magic  b"GMNET1"
//   u32    number of layer sizes L
//   L*u32  layer sizes
//   (L-1)*u8 activation tags (0 relu, 1 tanh, 2 linear)
//   f64[]  parameters, per layer: weights row-major (out x in) then biases
//
// Adam layout:
//   magic  b"GMADM1"
//   u64    step counter
//   f64    beta1, beta2, epsilon
//   u64    parameter count
//   f64[]  first moments, then second moments

const NET_MAGIC: &[u8; 6] = b"GMNET1";
const ADAM_MAGIC: &[u8; 6] = b"GMADM1";

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

impl Network {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(NET_MAGIC)?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for s in &self.sizes {
            w.write_all(&(*s as u32).to_le_bytes())?;
        }
        for a in &self.acts {
            w.write_all(&[a.tag()])?;
        }
        write_f64s(&mut w, &self.params)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Network> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != NET_MAGIC {
            return Err(Error::Parse(format!("bad network checkpoint magic in {path:?}")));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        if n < 2 {
            return Err(Error::Parse("network checkpoint with fewer than 2 layers".into()));
        }
        let mut sizes = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b4)?;
            sizes.push(u32::from_le_bytes(b4) as usize);
        }
        let mut acts = Vec::with_capacity(n - 1);
        let mut b1 = [0u8; 1];
        for _ in 0..n - 1 {
            r.read_exact(&mut b1)?;
            acts.push(Activation::from_tag(b1[0])?);
        }
        let params = read_f64s(&mut r, Network::param_count_for(&sizes))?;
        Ok(Network { sizes, acts, params })
    }
}

impl AdamState {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(ADAM_MAGIC)?;
        w.write_all(&self.step.to_le_bytes())?;
        write_f64s(&mut w, &[self.beta1, self.beta2, self.epsilon])?;
        w.write_all(&(self.m.len() as u64).to_le_bytes())?;
        write_f64s(&mut w, &self.m)?;
        write_f64s(&mut w, &self.v)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AdamState> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != ADAM_MAGIC {
            return Err(Error::Parse(format!("bad Adam checkpoint magic in {path:?}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let step = u64::from_le_bytes(b8);
        let consts = read_f64s(&mut r, 3)?;
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let m = read_f64s(&mut r, len)?;
        let v = read_f64s(&mut r, len)?;
        Ok(AdamState {
            m,
            v,
            step,
            beta1: consts[0],
            beta2: consts[1],
            epsilon: consts[2],
        })
    }
}
