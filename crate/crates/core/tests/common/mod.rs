#![allow(dead_code)]

//! Independent reference implementations shared by the integration tests.

use rad_core::flow::{CouplingBlock, FlowConfig, FlowModel, Subnet};
use rad_core::rng::{self, normal, ChaCha8Rng};

pub fn random_model(dim: usize, blocks: usize, hidden: usize, gain: f64, seed: u64) -> FlowModel {
    FlowModel::new(&FlowConfig {
        blocks,
        hidden,
        output_gain: gain,
        seed,
        ..FlowConfig::new(dim)
    })
    .unwrap()
}

pub fn random_rows(n: usize, dim: usize, scale: f64, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| scale * normal(r)).collect()).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    rng::seeded(seed)
}

fn clamp(x: f64, b: f64) -> f64 {
    b * std::f64::consts::FRAC_2_PI * (x / b).atan()
}

fn clamp_d(x: f64, b: f64) -> f64 {
    let r = x / b;
    std::f64::consts::FRAC_2_PI / (1.0 + r * r)
}

struct NetTrace {
    hidden: Vec<f64>,
    out: Vec<f64>,
}

fn net_forward(net: &Subnet, x: &[f64]) -> NetTrace {
    let (h, o) = (net.hidden_dim(), net.output_dim());
    let (w1, b1, w2, b2) = (net.w1.data(), net.b1.data(), net.w2.data(), net.b2.data());
    let hidden: Vec<f64> = (0..h)
        .map(|j| (b1[j] + x.iter().enumerate().map(|(i, v)| v * w1[i * h + j]).sum::<f64>()).tanh())
        .collect();
    let out = (0..o)
        .map(|k| b2[k] + hidden.iter().enumerate().map(|(j, v)| v * w2[j * o + k]).sum::<f64>())
        .collect();
    NetTrace { hidden, out }
}

/// Accumulates parameter gradients for `dout` and returns the input gradient.
fn net_backward(net: &Subnet, x: &[f64], tr: &NetTrace, dout: &[f64], g: &mut [Vec<f64>]) -> Vec<f64> {
    let (n_in, h, o) = (net.input_dim(), net.hidden_dim(), net.output_dim());
    let (w1, w2) = (net.w1.data(), net.w2.data());
    let mut dpre = vec![0.0; h];
    for j in 0..h {
        let mut dh = 0.0;
        for k in 0..o {
            g[2][j * o + k] += tr.hidden[j] * dout[k];
            dh += dout[k] * w2[j * o + k];
        }
        dpre[j] = dh * (1.0 - tr.hidden[j] * tr.hidden[j]);
    }
    for k in 0..o {
        g[3][k] += dout[k];
    }
    let mut dx = vec![0.0; n_in];
    for i in 0..n_in {
        for j in 0..h {
            g[0][i * h + j] += x[i] * dpre[j];
            dx[i] += dpre[j] * w1[i * h + j];
        }
    }
    for j in 0..h {
        g[1][j] += dpre[j];
    }
    dx
}

/// Per-sample NF loss `‖z‖² − log_det`, written without the library's flow code.
pub fn oracle_loss(model: &FlowModel, u: &[f64]) -> f64 {
    let mut x = u.to_vec();
    let mut log_det = 0.0;
    for b in model.blocks() {
        let xp: Vec<f64> = b.permutation().iter().map(|&p| x[p]).collect();
        let xc: Vec<f64> = b.conditioning().iter().map(|&i| xp[i]).collect();
        let s: Vec<f64> = net_forward(b.scale_net(), &xc).out.iter().map(|&v| clamp(v, b.s_max())).collect();
        let t = net_forward(b.shift_net(), &xc).out;
        let mut y = xp.clone();
        for (j, &i) in b.active().iter().enumerate() {
            y[i] = xp[i] * s[j].exp() + t[j];
            log_det += s[j];
        }
        x = y;
    }
    x.iter().map(|v| v * v).sum::<f64>() - log_det
}

/// Gradient of the mean NF loss over `batch` plus `λ‖θ‖²`, by hand-written
/// reverse accumulation. Returned flat, in `FlowModel::params` order.
pub fn oracle_grad(model: &FlowModel, batch: &[Vec<f64>], lambda: f64) -> Vec<Vec<f64>> {
    let mut grads: Vec<Vec<f64>> = model.params().map(|t| vec![0.0; t.len()]).collect();
    let w = 1.0 / batch.len() as f64;
    for u in batch {
        struct Rec {
            xp: Vec<f64>,
            xc: Vec<f64>,
            s_raw: Vec<f64>,
            s: Vec<f64>,
            st: NetTrace,
            tt: NetTrace,
        }
        let mut recs = Vec::new();
        let mut x = u.clone();
        for b in model.blocks() {
            let xp: Vec<f64> = b.permutation().iter().map(|&p| x[p]).collect();
            let xc: Vec<f64> = b.conditioning().iter().map(|&i| xp[i]).collect();
            let st = net_forward(b.scale_net(), &xc);
            let tt = net_forward(b.shift_net(), &xc);
            let s_raw = st.out.clone();
            let s: Vec<f64> = s_raw.iter().map(|&v| clamp(v, b.s_max())).collect();
            let mut y = xp.clone();
            for (j, &i) in b.active().iter().enumerate() {
                y[i] = xp[i] * s[j].exp() + tt.out[j];
            }
            recs.push(Rec { xp, xc, s_raw, s, st, tt });
            x = y;
        }
        let mut gy: Vec<f64> = x.iter().map(|v| 2.0 * v * w).collect();
        for (bi, b) in model.blocks().iter().enumerate().rev() {
            let r = &recs[bi];
            let base = bi * 8;
            let mut gxp = gy.clone();
            let mut ds = vec![0.0; b.active().len()];
            let mut dt = vec![0.0; b.active().len()];
            for (j, &i) in b.active().iter().enumerate() {
                let e = r.s[j].exp();
                ds[j] = (gy[i] * r.xp[i] * e - w) * clamp_d(r.s_raw[j], b.s_max());
                dt[j] = gy[i];
                gxp[i] = gy[i] * e;
            }
            let dc_s = net_backward(b.scale_net(), &r.xc, &r.st, &ds, &mut grads[base..base + 4]);
            let dc_t = net_backward(b.shift_net(), &r.xc, &r.tt, &dt, &mut grads[base + 4..base + 8]);
            for (k, &i) in b.conditioning().iter().enumerate() {
                gxp[i] += dc_s[k] + dc_t[k];
            }
            let mut gx = vec![0.0; gxp.len()];
            for (j, &p) in b.permutation().iter().enumerate() {
                gx[p] = gxp[j];
            }
            gy = gx;
        }
    }
    for (g, p) in grads.iter_mut().zip(model.params()) {
        for (gv, pv) in g.iter_mut().zip(p.data()) {
            *gv += 2.0 * lambda * pv;
        }
    }
    grads
}

/// Central-difference Jacobian of `f` at `x`, row-major `m × n`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (f(&xp), f(&xm));
        cols.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect::<Vec<f64>>());
    }
    let m = cols[0].len();
    (0..m).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

pub fn log_abs_det(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    m.determinant().abs().ln()
}

/// Relative error with a floor on the denominator for values near zero.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn block(model: &FlowModel, i: usize) -> &CouplingBlock {
    &model.blocks()[i]
}
