use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, Tape, TapeError, Tensor, Var};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Convolutional Q-network layout: valid convolutions with ReLU, then ReLU
/// dense layers, then a linear head with one output per action.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QNetworkSpec {
    /// Stacked channels, height, width of one observation.
    pub input: [usize; 3],
    pub conv: Vec<ConvLayerSpec>,
    pub dense: Vec<usize>,
    pub actions: usize,
}

/// Version of the parameter flattening order (layer order, weight before
/// bias, row-major within each tensor).
pub const FLATTEN_ORDER_VERSION: u32 = 1;

impl QNetworkSpec {
    /// Two stride-2 3x3 convolutions (16, 32 channels), one 128-unit hidden
    /// layer, linear head.
    pub fn standard(input: [usize; 3], actions: usize) -> Self {
        Self {
            input,
            conv: vec![
                ConvLayerSpec {
                    channels: 16,
                    kernel: 3,
                    stride: 2,
                },
                ConvLayerSpec {
                    channels: 32,
                    kernel: 3,
                    stride: 2,
                },
            ],
            dense: vec![128],
            actions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.actions < 2 {
            return Err(TapeError::Spec(format!(
                "network needs at least 2 actions, got {}",
                self.actions
            )));
        }
        if self.input.contains(&0) {
            return Err(TapeError::Spec(format!(
                "empty input shape {:?}",
                self.input
            )));
        }
        if self.dense.contains(&0) {
            return Err(TapeError::Spec("dense layer of width 0".into()));
        }
        let (mut h, mut w) = (self.input[1], self.input[2]);
        for (i, c) in self.conv.iter().enumerate() {
            if c.channels == 0 || c.kernel == 0 || c.stride == 0 {
                return Err(TapeError::Spec(format!(
                    "conv layer {i} has a zero field: {c:?}"
                )));
            }
            if h < c.kernel || w < c.kernel {
                return Err(TapeError::Spec(format!(
                    "conv layer {i}: kernel {} exceeds {h}x{w} feature map",
                    c.kernel
                )));
            }
            h = (h - c.kernel) / c.stride + 1;
            w = (w - c.kernel) / c.stride + 1;
        }
        Ok(())
    }

    /// Channels, height, width after the convolutional stack.
    pub fn conv_output(&self) -> [usize; 3] {
        let (mut c, mut h, mut w) = (self.input[0], self.input[1], self.input[2]);
        for l in &self.conv {
            c = l.channels;
            h = (h - l.kernel) / l.stride + 1;
            w = (w - l.kernel) / l.stride + 1;
        }
        [c, h, w]
    }

    /// Names and shapes of every parameter tensor, in flattening order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut in_c = self.input[0];
        for (i, l) in self.conv.iter().enumerate() {
            out.push((
                format!("conv{i}.weight"),
                vec![l.channels, in_c, l.kernel, l.kernel],
            ));
            out.push((format!("conv{i}.bias"), vec![l.channels]));
            in_c = l.channels;
        }
        let mut width: usize = self.conv_output().iter().product();
        for (i, d) in self.dense.iter().enumerate() {
            out.push((format!("dense{i}.weight"), vec![*d, width]));
            out.push((format!("dense{i}.bias"), vec![*d]));
            width = *d;
        }
        out.push(("head.weight".into(), vec![self.actions, width]));
        out.push(("head.bias".into(), vec![self.actions]));
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Stable textual description, the input of [`QNetworkSpec::fingerprint`].
    pub fn canonical(&self) -> String {
        let conv: Vec<String> = self
            .conv
            .iter()
            .map(|c| format!("{}k{}s{}", c.channels, c.kernel, c.stride))
            .collect();
        let dense: Vec<String> = self.dense.iter().map(|d| d.to_string()).collect();
        format!(
            "qnet-v{FLATTEN_ORDER_VERSION};in={}x{}x{};conv={};dense={};out={}",
            self.input[0],
            self.input[1],
            self.input[2],
            conv.join(","),
            dense.join(","),
            self.actions
        )
    }

    /// 64-bit FNV-1a of the canonical description.
    pub fn fingerprint(&self) -> u64 {
        self.canonical()
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
                (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
            })
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in &self.entries {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Same names and shapes as `self`, values taken from `flat`.
    pub fn unflatten_like(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.num_params() {
            return Err(TapeError::Shape(format!(
                "flat vector of {} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        let entries = self
            .entries
            .iter()
            .map(|(name, t)| {
                let n = t.len();
                let slice = flat[offset..offset + n].to_vec();
                offset += n;
                Ok((name.clone(), Tensor::new(t.shape().to_vec(), slice)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamSet { entries })
    }

    /// Overwrites values in place from a flat vector.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(TapeError::Shape(format!(
                "flat vector of {} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for (_, t) in &mut self.entries {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn matches_spec(&self, spec: &QNetworkSpec) -> bool {
        let shapes = spec.param_shapes();
        shapes.len() == self.entries.len()
            && shapes
                .iter()
                .zip(&self.entries)
                .all(|((n, s), (m, t))| n == m && s.as_slice() == t.shape())
    }
}

/// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights
/// and biases of each layer.
pub fn init_params(spec: &QNetworkSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut entries = Vec::new();
    let shapes = spec.param_shapes();
    for pair in shapes.chunks(2) {
        let (wname, wshape) = &pair[0];
        let (bname, bshape) = &pair[1];
        let fan_in: usize = wshape[1..].iter().product();
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |shape: &Vec<usize>| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            Tensor::from_parts(shape.clone(), data)
        };
        entries.push((wname.clone(), draw(wshape)));
        entries.push((bname.clone(), draw(bshape)));
    }
    Ok(ParamSet { entries })
}

fn check_input(spec: &QNetworkSpec, params: &ParamSet, obs: &Tensor) -> Result<()> {
    let s = obs.shape();
    if s.len() != 4 || s[1..] != spec.input {
        return Err(TapeError::Shape(format!(
            "observation batch {:?} does not match network input {:?}",
            s, spec.input
        )));
    }
    if !params.matches_spec(spec) {
        return Err(TapeError::Shape(
            "parameter set does not match network spec".into(),
        ));
    }
    Ok(())
}

/// Records the forward pass on `tape`. With `trainable` the parameters are
/// registered as differentiable leaves in flattening order; otherwise they
/// enter as constants.
pub fn forward_on(
    tape: &mut Tape,
    spec: &QNetworkSpec,
    params: &ParamSet,
    obs: &Tensor,
    trainable: bool,
) -> Result<Var> {
    check_input(spec, params, obs)?;
    let batch = obs.shape()[0];
    let leaf = |tape: &mut Tape, i: usize| -> Result<Var> {
        let t = params.entries[i].1.clone();
        if trainable {
            tape.param(i, t)
        } else {
            Ok(tape.input(t))
        }
    };
    let mut h = tape.input(obs.clone());
    let mut idx = 0;
    for l in &spec.conv {
        let k = leaf(tape, idx)?;
        let b = leaf(tape, idx + 1)?;
        idx += 2;
        let c = tape.conv2d(h, k, b, l.stride)?;
        h = tape.relu(c);
    }
    let width: usize = spec.conv_output().iter().product();
    h = tape.reshape(h, vec![batch, width])?;
    for _ in &spec.dense {
        let w = leaf(tape, idx)?;
        let b = leaf(tape, idx + 1)?;
        idx += 2;
        let z = tape.matmul_nt(h, w)?;
        let z = tape.bias_add(z, b)?;
        h = tape.relu(z);
    }
    let w = leaf(tape, idx)?;
    let b = leaf(tape, idx + 1)?;
    let z = tape.matmul_nt(h, w)?;
    tape.bias_add(z, b)
}

/// Forward pass with differentiable parameters; returns the `[B, |A|]`
/// Q-values and the tape that produced them.
pub fn q_forward(spec: &QNetworkSpec, params: &ParamSet, obs: &Tensor) -> Result<(Var, Tape)> {
    let mut tape = Tape::new();
    let q = forward_on(&mut tape, spec, params, obs, true)?;
    Ok((q, tape))
}

/// Inference-only forward pass.
pub fn q_values(spec: &QNetworkSpec, params: &ParamSet, obs: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let q = forward_on(&mut tape, spec, params, obs, false)?;
    Ok(tape.value(q).clone())
}

/// Batch-mean squared error of the action-selected Q-values, appended to the
/// tape that computed `q`.
pub fn critic_loss(tape: &mut Tape, q: Var, actions: &[usize], targets: &[f64]) -> Result<Var> {
    tape.select_mse(q, actions, targets)
}
