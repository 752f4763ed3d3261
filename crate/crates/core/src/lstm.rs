//! Two-layer stacked LSTM forecaster with a dense ReLU head.

use serde::{Deserialize, Serialize};

use crate::dataset::{NormStats, WindowSample};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNet, Parameters, Rng};
use crate::train::{half_sq_error, LossBreakdown, Objective};

pub const HIDDEN: usize = 40;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM layer. Gate rows are stacked in the order `i, f, g, o`, each
/// block `hidden` rows tall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CellRepr", into = "CellRepr")]
pub struct LstmCell {
    input_dim: usize,
    hidden: usize,
    w_x: Vec<f64>,
    w_h: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CellRepr {
    w_x: Vec<Vec<f64>>,
    w_h: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl From<LstmCell> for CellRepr {
    fn from(c: LstmCell) -> Self {
        Self {
            w_x: c.w_x.chunks(c.input_dim).map(<[f64]>::to_vec).collect(),
            w_h: c.w_h.chunks(c.hidden).map(<[f64]>::to_vec).collect(),
            b: c.b,
        }
    }
}

impl TryFrom<CellRepr> for LstmCell {
    type Error = Error;
    fn try_from(r: CellRepr) -> Result<Self> {
        let rows = r.b.len();
        if rows == 0 || rows % 4 != 0 {
            return Err(Error::Invalid(format!("gate bias length {rows} is not a positive multiple of 4")));
        }
        let hidden = rows / 4;
        let input_dim = r.w_x.first().map_or(0, Vec::len);
        if r.w_x.len() != rows || r.w_x.iter().any(|w| w.len() != input_dim) || input_dim == 0 {
            return Err(Error::Invalid("input gate matrix is not 4H x input".into()));
        }
        if r.w_h.len() != rows || r.w_h.iter().any(|w| w.len() != hidden) {
            return Err(Error::Invalid("recurrent gate matrix is not 4H x H".into()));
        }
        Ok(Self {
            input_dim,
            hidden,
            w_x: r.w_x.concat(),
            w_h: r.w_h.concat(),
            b: r.b,
        })
    }
}

/// Everything a cell step needs to be differentiated.
#[derive(Clone, Debug)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-activation gates `i, f, g, o`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            w_x: vec![0.0; 4 * hidden * input_dim],
            w_h: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
        }
    }

    /// Uniform `±1/sqrt(hidden)` weights, forget-gate bias 1.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut c = Self::zeros(input_dim, hidden);
        let a = 1.0 / (hidden as f64).sqrt();
        for w in c.w_x.iter_mut().chain(c.w_h.iter_mut()) {
            *w = rng.uniform_range(-a, a);
        }
        c.b[hidden..2 * hidden].fill(1.0);
        c
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }

    pub fn weights_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.w_x, &mut self.w_h)
    }

    pub fn step(&self, h: &[f64], c: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (h2, c2, _) = self.step_cached(h, c, x)?;
        Ok((h2, c2))
    }

    pub fn step_cached(&self, h: &[f64], c: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, StepCache)> {
        let nh = self.hidden;
        if x.len() != self.input_dim {
            return Err(Error::dim("lstm cell input", self.input_dim, x.len()));
        }
        if h.len() != nh || c.len() != nh {
            return Err(Error::dim("lstm cell state", nh, h.len().min(c.len())));
        }
        let mut gates = self.b.clone();
        for (r, gv) in gates.iter_mut().enumerate() {
            let wx = &self.w_x[r * self.input_dim..(r + 1) * self.input_dim];
            let wh = &self.w_h[r * nh..(r + 1) * nh];
            *gv += wx.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + wh.iter().zip(h).map(|(w, v)| w * v).sum::<f64>();
        }
        for (r, gv) in gates.iter_mut().enumerate() {
            *gv = if (2 * nh..3 * nh).contains(&r) { gv.tanh() } else { sigmoid(*gv) };
        }
        let mut c2 = vec![0.0; nh];
        let mut h2 = vec![0.0; nh];
        let mut tanh_c = vec![0.0; nh];
        for k in 0..nh {
            let (i, f, g, o) = (gates[k], gates[nh + k], gates[2 * nh + k], gates[3 * nh + k]);
            c2[k] = f * c[k] + i * g;
            tanh_c[k] = c2[k].tanh();
            h2[k] = o * tanh_c[k];
        }
        let cache = StepCache {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            c_prev: c.to_vec(),
            gates,
            tanh_c,
        };
        Ok((h2, c2, cache))
    }

    /// Backward through one step given `dL/dh'` and `dL/dc'`. Parameter
    /// gradients go into `grads`; returns `(dL/dx, dL/dh, dL/dc)`.
    pub fn step_backward(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc: &[f64],
        grads: &mut LstmCell,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let nh = self.hidden;
        let g = &cache.gates;
        let mut dpre = vec![0.0; 4 * nh];
        let mut dc_prev = vec![0.0; nh];
        for k in 0..nh {
            let (i, f, gg, o) = (g[k], g[nh + k], g[2 * nh + k], g[3 * nh + k]);
            let t = cache.tanh_c[k];
            let dck = dc[k] + dh[k] * o * (1.0 - t * t);
            dpre[k] = dck * gg * i * (1.0 - i);
            dpre[nh + k] = dck * cache.c_prev[k] * f * (1.0 - f);
            dpre[2 * nh + k] = dck * i * (1.0 - gg * gg);
            dpre[3 * nh + k] = dh[k] * t * o * (1.0 - o);
            dc_prev[k] = dck * f;
        }
        let mut dx = vec![0.0; self.input_dim];
        let mut dh_prev = vec![0.0; nh];
        for (r, &d) in dpre.iter().enumerate() {
            grads.b[r] += d;
            if d == 0.0 {
                continue;
            }
            let ix = r * self.input_dim;
            for j in 0..self.input_dim {
                grads.w_x[ix + j] += d * cache.x[j];
                dx[j] += d * self.w_x[ix + j];
            }
            let ih = r * nh;
            for j in 0..nh {
                grads.w_h[ih + j] += d * cache.h_prev[j];
                dh_prev[j] += d * self.w_h[ih + j];
            }
        }
        (dx, dh_prev, dc_prev)
    }
}

impl Parameters for LstmCell {
    fn params(&self) -> Vec<&[f64]> {
        vec![&self.w_x, &self.w_h, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.b]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub cells: Vec<LstmCell>,
    pub head: DenseNet,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default)]
    pub norm_stats: Option<NormStats>,
}

impl LstmModel {
    /// Two layers of `hidden` units and a `hidden -> hidden -> 2N` head.
    pub fn new(h: usize, n: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if h == 0 || n == 0 || hidden == 0 {
            return Err(Error::Invalid("H, N and hidden size must be positive".into()));
        }
        let cells = vec![LstmCell::init(3 * n, hidden, rng), LstmCell::init(hidden, hidden, rng)];
        let head = DenseNet::mlp(&[hidden, hidden, 2 * n], Activation::Identity, rng);
        Ok(Self {
            cells,
            head,
            h,
            n,
            norm_stats: None,
        })
    }

    fn unroll(&self, seq: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<StepCache>>)> {
        if seq.len() != self.h {
            return Err(Error::dim("lstm sequence length", self.h, seq.len()));
        }
        let mut caches: Vec<Vec<StepCache>> = vec![Vec::with_capacity(seq.len()); self.cells.len()];
        let mut states: Vec<(Vec<f64>, Vec<f64>)> =
            self.cells.iter().map(|c| (vec![0.0; c.hidden], vec![0.0; c.hidden])).collect();
        for x_t in seq {
            let mut input = x_t.clone();
            for (l, cell) in self.cells.iter().enumerate() {
                let (h, c) = &states[l];
                let (h2, c2, cache) = cell.step_cached(h, c, &input)?;
                caches[l].push(cache);
                input = h2.clone();
                states[l] = (h2, c2);
            }
        }
        let top = states.pop().map(|s| s.0).unwrap_or_default();
        Ok((top, caches))
    }

    pub fn predict(&self, seq: &[Vec<f64>]) -> Result<Vec<f64>> {
        let (top, _) = self.unroll(seq)?;
        self.head.predict(&top)
    }

    pub fn predict_sample(&self, s: &WindowSample) -> Result<Vec<f64>> {
        self.predict(&s.sequence(self.h, self.n))
    }

    /// Half squared error of the forecast for an explicit sequence.
    pub fn seq_loss(&self, seq: &[Vec<f64>], target: &[f64], grads: Option<&mut LstmModel>) -> Result<f64> {
        let (top, caches) = self.unroll(seq)?;
        let (y, tape) = self.head.forward(&top)?;
        if y.len() != target.len() {
            return Err(Error::dim("lstm target", y.len(), target.len()));
        }
        let (loss, gy) = half_sq_error(&y, target);
        if let Some(g) = grads {
            let dtop = self.head.backward_into(&tape, &gy, &mut g.head)?;
            let steps = seq.len();
            let layers = self.cells.len();
            // dh/dc flowing backwards in time, per layer
            let mut dh_next: Vec<Vec<f64>> = self.cells.iter().map(|c| vec![0.0; c.hidden]).collect();
            let mut dc_next = dh_next.clone();
            dh_next[layers - 1] = dtop;
            for t in (0..steps).rev() {
                let mut from_above: Option<Vec<f64>> = None;
                for l in (0..layers).rev() {
                    let mut dh = dh_next[l].clone();
                    if let Some(a) = from_above.take() {
                        dh.iter_mut().zip(&a).for_each(|(d, v)| *d += v);
                    }
                    let (dx, dh_prev, dc_prev) =
                        self.cells[l].step_backward(&caches[l][t], &dh, &dc_next[l], &mut g.cells[l]);
                    dh_next[l] = dh_prev;
                    dc_next[l] = dc_prev;
                    from_above = Some(dx);
                }
            }
        }
        Ok(loss)
    }
}

impl Parameters for LstmModel {
    fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.cells.iter().flat_map(|c| c.params()).collect();
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.cells.iter_mut().flat_map(|c| c.params_mut()).collect();
        out.extend(self.head.params_mut());
        out
    }
}

impl Objective for LstmModel {
    fn sample_loss(&self, s: &WindowSample, _noise: Option<&mut Rng>, grads: Option<&mut Self>) -> Result<LossBreakdown> {
        let pred = self.seq_loss(&s.sequence(self.h, self.n), &s.y_next, grads)?;
        Ok(LossBreakdown {
            total: pred,
            pred,
            ..Default::default()
        })
    }

    fn zeros_like(&self) -> Self {
        Self {
            cells: self.cells.iter().map(|c| LstmCell::zeros(c.input_dim, c.hidden)).collect(),
            head: self.head.zeros_like(),
            h: self.h,
            n: self.n,
            norm_stats: None,
        }
    }
}
