use alloc::vec;
use alloc::vec::Vec;

use crate::ndgrad::{Graph, Tensor, Var};
use crate::rng::{normal, ChaCha8Rng};
use crate::{Error, Result};

/// Two-layer fully connected network `tanh(x·W1 + b1)·W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subnet {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Subnet {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Subnet {
            w1: Tensor::zeros(&[input, hidden]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, output]),
            b2: Tensor::zeros(&[output]),
        }
    }

    /// Gaussian init scaled by fan-in; `output_gain` scales the last layer so
    /// that a small gain starts the coupling close to the identity.
    pub fn random(input: usize, hidden: usize, output: usize, output_gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut net = Self::zeros(input, hidden, output);
        let s1 = 1.0 / libm::sqrt(input.max(1) as f64);
        for w in net.w1.data_mut() {
            *w = s1 * normal(rng);
        }
        let s2 = output_gain / libm::sqrt(hidden.max(1) as f64);
        for w in net.w2.data_mut() {
            *w = s2 * normal(rng);
        }
        for b in net.b2.data_mut() {
            *b = 0.1 * output_gain * normal(rng);
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }

    fn check_shapes(&self) -> Result<()> {
        let (i, h, o) = (self.input_dim(), self.hidden_dim(), self.output_dim());
        let ok = self.w1.shape() == [i, h]
            && self.b1.shape() == [h]
            && self.w2.shape() == [h, o]
            && self.b2.shape() == [o];
        if ok {
            Ok(())
        } else {
            Err(Error::Shape {
                op: "subnet",
                lhs: self.w1.shape().to_vec(),
                rhs: self.w2.shape().to_vec(),
            })
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let (i, h, o) = (self.input_dim(), self.hidden_dim(), self.output_dim());
        let mut hid = self.b1.data().to_vec();
        let w1 = self.w1.data();
        for (p, &xv) in x.iter().enumerate().take(i) {
            for (hv, &wv) in hid.iter_mut().zip(&w1[p * h..(p + 1) * h]) {
                *hv += xv * wv;
            }
        }
        for hv in hid.iter_mut() {
            *hv = libm::tanh(*hv);
        }
        let mut out = self.b2.data().to_vec();
        let w2 = self.w2.data();
        for (p, &hv) in hid.iter().enumerate() {
            for (ov, &wv) in out.iter_mut().zip(&w2[p * o..(p + 1) * o]) {
                *ov += hv * wv;
            }
        }
        out
    }

    pub fn params(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Affine coupling layer preceded by a fixed permutation of the input.
///
/// With `x' = x[permutation]`, the conditioning coordinates `x'_c` pass
/// through unchanged and the active coordinates become
/// `x'_a · exp(s) + t`, where `s = clamp(S(x'_c))` and `t = T(x'_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    mask: Vec<bool>,
    permutation: Vec<usize>,
    cond: Vec<usize>,
    active: Vec<usize>,
    s_max: f64,
    scale_net: Subnet,
    shift_net: Subnet,
}

impl CouplingBlock {
    /// `mask[i]` is true when coordinate `i` (after permutation) conditions the block.
    pub fn new(
        mask: Vec<bool>,
        permutation: Vec<usize>,
        s_max: f64,
        scale_net: Subnet,
        shift_net: Subnet,
    ) -> Result<Self> {
        let d = mask.len();
        if permutation.len() != d {
            return Err(Error::Dimension {
                expected: d,
                found: permutation.len(),
            });
        }
        let mut seen = vec![false; d];
        for &p in &permutation {
            if p >= d || seen[p] {
                return Err(Error::InvalidArgument("permutation is not a bijection".into()));
            }
            seen[p] = true;
        }
        let cond: Vec<usize> = (0..d).filter(|&i| mask[i]).collect();
        let active: Vec<usize> = (0..d).filter(|&i| !mask[i]).collect();
        if active.is_empty() || (d >= 2 && cond.is_empty()) {
            return Err(Error::InvalidArgument(
                "coupling mask must split the dimensions into two non-empty halves".into(),
            ));
        }
        if !(s_max > 0.0) || !s_max.is_finite() {
            return Err(Error::InvalidArgument("s_max must be positive and finite".into()));
        }
        for net in [&scale_net, &shift_net] {
            net.check_shapes()?;
            if net.input_dim() != cond.len() || net.output_dim() != active.len() {
                return Err(Error::Shape {
                    op: "coupling subnet",
                    lhs: vec![cond.len(), active.len()],
                    rhs: vec![net.input_dim(), net.output_dim()],
                });
            }
        }
        if scale_net.hidden_dim() != shift_net.hidden_dim() {
            return Err(Error::InvalidArgument("scale and shift nets differ in width".into()));
        }
        Ok(CouplingBlock {
            mask,
            permutation,
            cond,
            active,
            s_max,
            scale_net,
            shift_net,
        })
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn hidden(&self) -> usize {
        self.scale_net.hidden_dim()
    }

    pub fn conditioning(&self) -> &[usize] {
        &self.cond
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn scale_net(&self) -> &Subnet {
        &self.scale_net
    }

    pub fn shift_net(&self) -> &Subnet {
        &self.shift_net
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.scale_net.params().into_iter().chain(self.shift_net.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.scale_net
            .params_mut()
            .into_iter()
            .chain(self.shift_net.params_mut())
    }

    fn scale_and_shift(&self, xc: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = self
            .scale_net
            .eval(xc)
            .into_iter()
            .map(|v| crate::ndgrad::soft_clamp(v, self.s_max))
            .collect();
        (s, self.shift_net.eval(xc))
    }

    /// Maps one vector forward; returns the output and this block's log-det.
    pub fn forward_row(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let xp: Vec<f64> = self.permutation.iter().map(|&p| x[p]).collect();
        let xc: Vec<f64> = self.cond.iter().map(|&i| xp[i]).collect();
        let (s, t) = self.scale_and_shift(&xc);
        let mut y = xp;
        let mut log_det = 0.0;
        for (j, &i) in self.active.iter().enumerate() {
            y[i] = y[i] * libm::exp(s[j]) + t[j];
            log_det += s[j];
        }
        (y, log_det)
    }

    pub fn inverse_row(&self, y: &[f64]) -> Vec<f64> {
        let yc: Vec<f64> = self.cond.iter().map(|&i| y[i]).collect();
        let (s, t) = self.scale_and_shift(&yc);
        let mut xp = y.to_vec();
        for (j, &i) in self.active.iter().enumerate() {
            xp[i] = (y[i] - t[j]) * libm::exp(-s[j]);
        }
        let mut x = vec![0.0; xp.len()];
        for (j, &p) in self.permutation.iter().enumerate() {
            x[p] = xp[j];
        }
        x
    }

    /// Records the block on `g` for a batch `x` (n×d). `params` are this
    /// block's eight parameter leaves in [`CouplingBlock::params`] order.
    /// Returns the output batch and the scalar sum of all active log-scales.
    pub(crate) fn forward_graph(&self, g: &mut Graph, x: Var, params: &[Var]) -> Result<(Var, Var)> {
        let xp = g.select_cols(x, &self.permutation)?;
        let xc = g.select_cols(xp, &self.cond)?;
        let xa = g.select_cols(xp, &self.active)?;
        let s_raw = subnet_graph(g, xc, &params[0..4])?;
        let s = g.soft_clamp(s_raw, self.s_max);
        let t = subnet_graph(g, xc, &params[4..8])?;
        let es = g.exp(s);
        let scaled = g.mul(xa, es)?;
        let ya = g.add(scaled, t)?;
        let y = g.merge_cols(xc, &self.cond, ya, &self.active)?;
        let log_det = g.sum(s);
        Ok((y, log_det))
    }
}

fn subnet_graph(g: &mut Graph, x: Var, p: &[Var]) -> Result<Var> {
    let pre = g.affine(x, p[0], p[1])?;
    let h = g.tanh(pre);
    g.affine(h, p[2], p[3])
}
