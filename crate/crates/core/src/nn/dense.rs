use serde::{Deserialize, Serialize};

use super::{Parameters, Rng};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "id")]
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Affine layer `act(W x + b)` with `W` stored row-major as `out x in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "LayerRepr", try_from = "LayerRepr")]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    act: Activation,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    act: Activation,
}

impl From<Dense> for LayerRepr {
    fn from(d: Dense) -> Self {
        let w = if d.in_dim == 0 {
            vec![Vec::new(); d.out_dim]
        } else {
            d.w.chunks(d.in_dim).map(<[f64]>::to_vec).collect()
        };
        LayerRepr { w, b: d.b, act: d.act }
    }
}

impl TryFrom<LayerRepr> for Dense {
    type Error = String;

    fn try_from(r: LayerRepr) -> std::result::Result<Self, String> {
        let out_dim = r.w.len();
        if out_dim == 0 {
            return Err("layer with zero output rows".into());
        }
        let in_dim = r.w[0].len();
        if r.w.iter().any(|row| row.len() != in_dim) {
            return Err("ragged weight matrix".into());
        }
        if r.b.len() != out_dim {
            return Err(format!("bias length {} != rows {}", r.b.len(), out_dim));
        }
        let w: Vec<f64> = r.w.into_iter().flatten().collect();
        if w.iter().chain(&r.b).any(|v| !v.is_finite()) {
            return Err("non-finite parameter".into());
        }
        Ok(Dense {
            in_dim,
            out_dim,
            w,
            b: r.b,
            act: r.act,
        })
    }
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize, act: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
            act,
        }
    }

    /// Fan-based uniform init, biases zero.
    pub fn init(in_dim: usize, out_dim: usize, act: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            w,
            b: vec![0.0; out_dim],
            act,
        }
    }

    pub fn from_parts(w: Vec<Vec<f64>>, b: Vec<f64>, act: Activation) -> Result<Self> {
        Dense::try_from(LayerRepr { w, b, act }).map_err(Error::Invalid)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.act
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.w[row * self.in_dim + col]
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }

    fn affine_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.w.chunks_exact(self.in_dim.max(1)).zip(&self.b).map(|(row, b)| {
            if self.in_dim == 0 {
                *b
            } else {
                row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b
            }
        }));
    }
}

/// Per-layer record of a forward pass: what each layer saw and its
/// pre-activation output.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

/// Feed-forward stack of [`Dense`] layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Dense>,
}

impl DenseNet {
    /// Builds `sizes[0] -> sizes[1] -> ... -> sizes[n]`, ReLU on every hidden
    /// layer and `output` on the last.
    pub fn mlp(sizes: &[usize], output: Activation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { Activation::Relu };
                Dense::init(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid("network without layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::dim(
                    format!("layer {} input", i + 1),
                    pair[0].out_dim,
                    pair[1].in_dim,
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Same shapes, every parameter zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim, l.act))
                .collect(),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("layer 0 input", self.input_dim(), x.len()));
        }
        Ok(())
    }

    /// Output without recording a tape.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.affine_into(&cur, &mut next);
            for v in next.iter_mut() {
                *v = layer.act.apply(*v);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(x)?;
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut pre = Vec::with_capacity(layer.out_dim);
            layer.affine_into(&cur, &mut pre);
            let out = pre.iter().map(|&v| layer.act.apply(v)).collect();
            tape.inputs.push(cur);
            tape.pre.push(pre);
            cur = out;
        }
        Ok((cur, tape))
    }

    /// Chain-rule backward pass; parameter gradients are added into `grads`.
    /// Returns the gradient with respect to the network input.
    pub fn backward_into(
        &self,
        tape: &Tape,
        grad_output: &[f64],
        grads: &mut DenseNet,
    ) -> Result<Vec<f64>> {
        self.check_tape(tape)?;
        if grads.layers.len() != self.layers.len() {
            return Err(Error::dim("gradient accumulator layers", self.layers.len(), grads.layers.len()));
        }
        if grad_output.len() != self.output_dim() {
            return Err(Error::dim("grad_output", self.output_dim(), grad_output.len()));
        }
        let mut delta: Vec<f64> = grad_output.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let pre = &tape.pre[idx];
            let input = &tape.inputs[idx];
            for (d, &p) in delta.iter_mut().zip(pre) {
                *d *= layer.act.derivative(p);
            }
            let g = &mut grads.layers[idx];
            let n_in = layer.in_dim;
            for (o, &d) in delta.iter().enumerate() {
                g.b[o] += d;
                if d != 0.0 {
                    let row = &mut g.w[o * n_in..(o + 1) * n_in];
                    for (gw, &xi) in row.iter_mut().zip(input) {
                        *gw += d * xi;
                    }
                }
            }
            let mut prev = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    let row = &layer.w[o * n_in..(o + 1) * n_in];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Returns `(parameter gradients, input gradient)`.
    pub fn backward(&self, tape: &Tape, grad_output: &[f64]) -> Result<(DenseNet, Vec<f64>)> {
        let mut grads = self.zeros_like();
        let gi = self.backward_into(tape, grad_output, &mut grads)?;
        Ok((grads, gi))
    }

    fn check_tape(&self, tape: &Tape) -> Result<()> {
        if tape.inputs.len() != self.layers.len() || tape.pre.len() != self.layers.len() {
            return Err(Error::StaleTape(format!(
                "tape has {} layers, network has {}",
                tape.pre.len(),
                self.layers.len()
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if tape.inputs[i].len() != layer.in_dim || tape.pre[i].len() != layer.out_dim {
                return Err(Error::StaleTape(format!("layer {i} shape does not match tape")));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }
}

impl Parameters for DenseNet {
    fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
            .collect()
    }
}
