//! Dense feed-forward networks with reverse-mode gradients and the Adam rule.
//!
//! A network is a flat `f64` parameter vector plus a list of layer shapes. Each
//! layer stores its weights row-major as `W[out][in]` followed by its bias.
//! All gradients in this crate are *ascent* directions: an optimizer moves
//! parameters along them.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self { fan_in, fan_out, activation }
    }

    pub fn param_count(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

/// Activations recorded by [`Mlp::forward_tape`], consumed by [`Mlp::backward_tape`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// `values[0]` is the input, `values[i + 1]` the output of layer `i`.
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("tape always holds the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.values[0]
    }
}

/// A multilayer perceptron over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
}

impl Mlp {
    /// All-zero parameters.
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        validate_layers(&layers)?;
        let n = layers.iter().map(LayerSpec::param_count).sum();
        Ok(Self { layers, params: vec![0.0; n] })
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` init per layer; the final
    /// layer is additionally scaled by `final_scale`.
    pub fn init<R: Rng + ?Sized>(layers: Vec<LayerSpec>, final_scale: f64, rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(layers)?;
        let n_layers = mlp.layers.len();
        let mut offset = 0;
        for (i, spec) in mlp.layers.iter().enumerate() {
            let bound = 1.0 / (spec.fan_in as f64).sqrt();
            let scale = if i + 1 == n_layers { final_scale } else { 1.0 };
            for p in &mut mlp.params[offset..offset + spec.param_count()] {
                *p = rng.random_range(-bound..bound) * scale;
            }
            offset += spec.param_count();
        }
        Ok(mlp)
    }

    /// Builds `sizes[0] -> sizes[1] -> ... -> sizes[n]` with `hidden` activations
    /// between layers and `output` on the last one.
    pub fn with_sizes<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Self::init(layer_stack(sizes, hidden, output)?, 1e-3, rng)
    }

    pub fn from_params(layers: Vec<LayerSpec>, params: Vec<f64>) -> Result<Self> {
        validate_layers(&layers)?;
        let n: usize = layers.iter().map(LayerSpec::param_count).sum();
        check_len("parameter vector", params.len(), n)?;
        Ok(Self { layers, params })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// A copy of this network carrying `params` instead.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let mut net = self.clone();
        net.set_params(params)?;
        Ok(net)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("parameter vector", params.len(), self.params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("network input", input.len(), self.input_dim())?;
        let mut x = input.to_vec();
        let mut offset = 0;
        for spec in &self.layers {
            x = self.layer_forward(spec, offset, &x);
            offset += spec.param_count();
        }
        Ok(x)
    }

    pub fn forward_tape(&self, input: &[f64]) -> Result<Tape> {
        check_len("network input", input.len(), self.input_dim())?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        let mut offset = 0;
        for spec in &self.layers {
            let y = self.layer_forward(spec, offset, values.last().unwrap());
            values.push(y);
            offset += spec.param_count();
        }
        Ok(Tape { values })
    }

    fn layer_forward(&self, spec: &LayerSpec, offset: usize, x: &[f64]) -> Vec<f64> {
        let w = &self.params[offset..offset + spec.fan_in * spec.fan_out];
        let b = &self.params[offset + spec.fan_in * spec.fan_out..offset + spec.param_count()];
        (0..spec.fan_out)
            .map(|o| {
                let row = &w[o * spec.fan_in..(o + 1) * spec.fan_in];
                let z = b[o] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
                spec.activation.apply(z)
            })
            .collect()
    }

    /// Reverse pass: adds `d(cotangent . output)/d(params)` into `grad` and
    /// returns the gradient with respect to the input.
    pub fn backward_tape(&self, tape: &Tape, cotangent: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        check_len("output cotangent", cotangent.len(), self.output_dim())?;
        check_len("gradient buffer", grad.len(), self.params.len())?;
        if tape.values.len() != self.layers.len() + 1 {
            return Err(Error::usage("tape was recorded by a different network"));
        }
        let mut delta = cotangent.to_vec();
        let mut offset = self.params.len();
        for (i, spec) in self.layers.iter().enumerate().rev() {
            offset -= spec.param_count();
            let x = &tape.values[i];
            let y = &tape.values[i + 1];
            for (d, &yo) in delta.iter_mut().zip(y) {
                *d *= spec.activation.derivative(yo);
            }
            let n_w = spec.fan_in * spec.fan_out;
            let (gw, gb) = grad[offset..offset + spec.param_count()].split_at_mut(n_w);
            let w = &self.params[offset..offset + n_w];
            let mut dx = vec![0.0; spec.fan_in];
            for o in 0..spec.fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let grow = &mut gw[o * spec.fan_in..(o + 1) * spec.fan_in];
                let wrow = &w[o * spec.fan_in..(o + 1) * spec.fan_in];
                for j in 0..spec.fan_in {
                    grow[j] += d * x[j];
                    dx[j] += d * wrow[j];
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// Convenience wrapper returning `(param_gradient, input_gradient)`.
    pub fn backward(&self, input: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let tape = self.forward_tape(input)?;
        let mut grad = vec![0.0; self.params.len()];
        let dx = self.backward_tape(&tape, cotangent, &mut grad)?;
        Ok((grad, dx))
    }

    /// Writes the snapshot format: one JSON header line, then `count` little-endian f64s.
    pub fn write_snapshot<W: Write>(&self, mut out: W, kind: Option<&str>, meta: serde_json::Value) -> Result<()> {
        let header = SnapshotHeader {
            layer_specs: self.layers.clone(),
            count: self.params.len(),
            kind: kind.map(str::to_owned),
            meta,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for p in &self.params {
            out.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut input: R) -> Result<(Self, SnapshotHeader)> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::config("snapshot has no header line"))?;
        let header: SnapshotHeader = serde_json::from_slice(&bytes[..nl])?;
        let body = &bytes[nl + 1..];
        if body.len() != header.count * 8 {
            return Err(Error::config(format!(
                "snapshot body holds {} bytes, header declares {} parameters",
                body.len(),
                header.count
            )));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Self::from_params(header.layer_specs.clone(), params)?, header))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub layer_specs: Vec<LayerSpec>,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

pub fn layer_stack(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Vec<LayerSpec>> {
    if sizes.len() < 2 {
        return Err(Error::usage("a network needs at least an input and an output size"));
    }
    let n = sizes.len() - 1;
    Ok((0..n)
        .map(|i| LayerSpec::new(sizes[i], sizes[i + 1], if i + 1 == n { output } else { hidden }))
        .collect())
}

fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::usage("network has no layers"));
    }
    for pair in layers.windows(2) {
        if pair[0].fan_out != pair[1].fan_in {
            return Err(Error::usage(format!(
                "layer fan_out {} does not feed fan_in {}",
                pair[0].fan_out, pair[1].fan_in
            )));
        }
    }
    if layers.iter().any(|l| l.fan_in == 0 || l.fan_out == 0) {
        return Err(Error::usage("layer with zero width"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam moments for one parameter vector. Updates are ascent steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
        }
    }

    /// Moves `params` along `grad`. Refuses non-finite gradients, leaving the state untouched.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len("adam params", params.len(), self.first_moment.len())?;
        check_len("adam gradient", grad.len(), self.first_moment.len())?;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::numeric(format!("non-finite gradient entry at index {i}")));
        }
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p += learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

/// Scales `grad` in place so its L2 norm is at most `max_norm`. Returns the original norm.
pub fn clip_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = l2_norm(grad);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `acc += scale * v`
pub fn axpy(acc: &mut [f64], scale: f64, v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}
