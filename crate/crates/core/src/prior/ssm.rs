//! Selective state-space sequence layer and its frequency/spatial wrappers.
//!
//! For a sequence `u_t ∈ R^d` the layer computes input-dependent step sizes
//! `Δ_t = softplus(W_Δ u_t + b_Δ)` and projections `B_t = W_B u_t`,
//! `C_t = W_C u_t ∈ R^S`, then runs the diagonal recurrence
//!
//! ```text
//! h_t[d, s] = exp(Δ_t[d] · A[d, s]) · h_{t-1}[d, s] + Δ_t[d] · B_t[s] · u_t[d]
//! y_t[d]    = Σ_s C_t[s] · h_t[d, s]
//! ```
//!
//! with `A = -exp(A_log)` strictly negative, followed by a linear output
//! projection.

use rand::Rng;

use crate::autodiff::{CustomOp, Tape, Var};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Runs the recurrence; returns `y: [L][d]` and every state `h_t: [L][d][S]`.
///
/// `u, delta: [L][d]`, `b, c: [L][S]`, `a: [d][S]`.
pub fn selective_scan(u: &Tensor, delta: &Tensor, b: &Tensor, c: &Tensor, a: &Tensor) -> (Tensor, Vec<f64>) {
    let (l, d) = (u.shape()[0], u.shape()[1]);
    let s = a.shape()[1];
    assert_eq!(delta.shape(), u.shape());
    assert_eq!(b.shape(), &[l, s]);
    assert_eq!(c.shape(), &[l, s]);
    assert_eq!(a.shape(), &[d, s]);
    let (ud, dd, bd, cd, ad) = (u.data(), delta.data(), b.data(), c.data(), a.data());
    let mut states = vec![0.0; l * d * s];
    let mut y = vec![0.0; l * d];
    let mut h = vec![0.0; d * s];
    for t in 0..l {
        for di in 0..d {
            let dt = dd[t * d + di];
            let drive = dt * ud[t * d + di];
            let mut acc = 0.0;
            for si in 0..s {
                let hv = &mut h[di * s + si];
                *hv = (dt * ad[di * s + si]).exp() * *hv + drive * bd[t * s + si];
                acc += cd[t * s + si] * *hv;
            }
            y[t * d + di] = acc;
        }
        states[t * d * s..(t + 1) * d * s].copy_from_slice(&h);
    }
    (Tensor::from_parts(vec![l, d], y), states)
}

struct ScanOp {
    states: Vec<f64>,
}

impl CustomOp for ScanOp {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let [u, delta, b, c, a] = inputs else {
            unreachable!("scan has five inputs")
        };
        let (l, d) = (u.shape()[0], u.shape()[1]);
        let s = a.shape()[1];
        let (ud, dd, bd, cd, ad) = (u.data(), delta.data(), b.data(), c.data(), a.data());
        let gy = grad.data();
        let hs = &self.states;
        let mut gu = vec![0.0; l * d];
        let mut gdelta = vec![0.0; l * d];
        let mut gb = vec![0.0; l * s];
        let mut gc = vec![0.0; l * s];
        let mut ga = vec![0.0; d * s];
        // gradient flowing into h_t from step t+1
        let mut carry = vec![0.0; d * s];
        for t in (0..l).rev() {
            for di in 0..d {
                let dt = dd[t * d + di];
                let uv = ud[t * d + di];
                let g_out = gy[t * d + di];
                for si in 0..s {
                    let k = di * s + si;
                    let h_t = hs[t * d * s + k];
                    let h_prev = if t > 0 { hs[(t - 1) * d * s + k] } else { 0.0 };
                    gc[t * s + si] += g_out * h_t;
                    let gh = g_out * cd[t * s + si] + carry[k];
                    let decay = (dt * ad[k]).exp();
                    // h_t = decay * h_prev + dt * b * u
                    let g_decay = gh * h_prev;
                    gdelta[t * d + di] += g_decay * decay * ad[k] + gh * bd[t * s + si] * uv;
                    ga[k] += g_decay * decay * dt;
                    gb[t * s + si] += gh * dt * uv;
                    gu[t * d + di] += gh * dt * bd[t * s + si];
                    carry[k] = gh * decay;
                }
            }
        }
        vec![
            Some(Tensor::from_parts(vec![l, d], gu)),
            Some(Tensor::from_parts(vec![l, d], gdelta)),
            Some(Tensor::from_parts(vec![l, s], gb)),
            Some(Tensor::from_parts(vec![l, s], gc)),
            Some(Tensor::from_parts(vec![d, s], ga)),
        ]
    }
}

/// Differentiable [`selective_scan`].
pub fn scan(tape: &mut Tape, u: Var, delta: Var, b: Var, c: Var, a: Var) -> Var {
    let (y, states) = selective_scan(tape.value(u), tape.value(delta), tape.value(b), tape.value(c), tape.value(a));
    tape.custom(&[u, delta, b, c, a], y, Box::new(ScanOp { states }))
}

#[derive(Clone, Debug)]
pub struct SelectiveSsm {
    pub width: usize,
    pub state_dim: usize,
    w_delta: ParamId,
    b_delta: ParamId,
    w_b: ParamId,
    w_c: ParamId,
    a_log: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

impl SelectiveSsm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, width: usize, state_dim: usize, rng: &mut R) -> Self {
        let w_delta = store.add_uniform(format!("{prefix}.w_delta"), &[width, width], width, rng);
        // step sizes start log-spaced in [1e-2, 1e-1]
        let b_delta = store.add(
            format!("{prefix}.b_delta"),
            Tensor::from_parts(
                vec![width],
                (0..width)
                    .map(|i| {
                        let frac = if width > 1 { i as f64 / (width - 1) as f64 } else { 0.5 };
                        let dt = (0.01f64.ln() + frac * (0.1f64.ln() - 0.01f64.ln())).exp();
                        dt.exp_m1().ln()
                    })
                    .collect(),
            ),
        );
        let w_b = store.add_uniform(format!("{prefix}.w_b"), &[state_dim, width], width, rng);
        let w_c = store.add_uniform(format!("{prefix}.w_c"), &[state_dim, width], width, rng);
        let a_log = store.add(
            format!("{prefix}.a_log"),
            Tensor::from_parts(
                vec![width, state_dim],
                (0..width * state_dim).map(|k| ((k % state_dim + 1) as f64).ln()).collect(),
            ),
        );
        let w_out = store.add_uniform(format!("{prefix}.w_out"), &[width, width], width, rng);
        let b_out = store.add(format!("{prefix}.b_out"), Tensor::zeros(&[width]));
        SelectiveSsm {
            width,
            state_dim,
            w_delta,
            b_delta,
            w_b,
            w_c,
            a_log,
            w_out,
            b_out,
        }
    }

    /// Parameters of the output projection (zeroing them makes the layer output 0).
    pub fn output_params(&self) -> [ParamId; 2] {
        [self.w_out, self.b_out]
    }

    /// `u: [L][width] -> [L][width]`.
    /// `u: [L][d]`. Tokens are normalized over channels first so the
    /// input-dependent step, B and C stay bounded.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, u: Var) -> Var {
        let u = tape.norm_rows(u, TOKEN_NORM_EPS);
        let pre = tape.linear(u, p.var(self.w_delta), Some(p.var(self.b_delta)));
        let delta = tape.softplus(pre);
        let b = tape.linear(u, p.var(self.w_b), None);
        let c = tape.linear(u, p.var(self.w_c), None);
        let ea = tape.exp(p.var(self.a_log));
        let a = tape.scale(ea, -1.0);
        let y = scan(tape, u, delta, b, c, a);
        tape.linear(y, p.var(self.w_out), Some(p.var(self.b_out)))
    }
}

const TOKEN_NORM_EPS: f64 = 1e-5;

/// `f + iFFT(SSM(FFT(f)))` with the half spectrum scanned row-major.
#[derive(Clone, Debug)]
pub struct FourierMamba {
    pub ssm: SelectiveSsm,
}

impl FourierMamba {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, channels: usize, state_dim: usize, rng: &mut R) -> Self {
        FourierMamba {
            ssm: SelectiveSsm::new(store, &format!("{prefix}.ssm"), 2 * channels, state_dim, rng),
        }
    }

    /// The sequence branch without the residual, with `seq` standing in for
    /// the state-space layer on `[L][2C]` sequences.
    pub fn spectral_branch(tape: &mut Tape, x: Var, seq: impl FnOnce(&mut Tape, Var) -> Var) -> Var {
        let (c, h, w) = tape.value(x).dims3();
        let z = tape.rfft2(x);
        let wh = tape.shape(z)[2];
        let flat = tape.reshape(z, &[2 * c, h * wh]);
        let u = tape.transpose(flat);
        let y = seq(tape, u);
        let back = tape.transpose(y);
        let z2 = tape.reshape(back, &[2 * c, h, wh]);
        tape.irfft2(z2, w)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let branch = Self::spectral_branch(tape, x, |t, u| self.ssm.forward(t, p, u));
        tape.add(x, branch)
    }
}

/// `f + SSM(flatten(f))` scanning pixels row-major, no transform.
#[derive(Clone, Debug)]
pub struct SpatialMamba {
    pub ssm: SelectiveSsm,
}

impl SpatialMamba {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, channels: usize, state_dim: usize, rng: &mut R) -> Self {
        SpatialMamba {
            ssm: SelectiveSsm::new(store, &format!("{prefix}.ssm"), channels, state_dim, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let (c, h, w) = tape.value(x).dims3();
        let flat = tape.reshape(x, &[c, h * w]);
        let u = tape.transpose(flat);
        let y = self.ssm.forward(tape, p, u);
        let back = tape.transpose(y);
        let y3 = tape.reshape(back, &[c, h, w]);
        tape.add(x, y3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_matches_geometric_sum() {
        // With Δ, B, C fixed and u constant, h_t = Δ·B·u · Σ_{k<t} e^{kΔA}.
        let (l, d, s) = (12, 2, 3);
        let u = Tensor::full(&[l, d], 0.7);
        let delta = Tensor::full(&[l, d], 0.3);
        let b = Tensor::new(&[l, s], (0..l * s).map(|k| [0.5, -1.0, 2.0][k % s]).collect()).unwrap();
        let c = Tensor::new(&[l, s], (0..l * s).map(|k| [1.0, 0.25, -0.5][k % s]).collect()).unwrap();
        let a = Tensor::new(&[d, s], vec![-1.0, -2.0, -0.5, -0.1, -3.0, -1.5]).unwrap();
        let (y, _) = selective_scan(&u, &delta, &b, &c, &a);
        for t in 0..l {
            for di in 0..d {
                let mut want = 0.0;
                for si in 0..s {
                    let r = (0.3 * a.data()[di * s + si]).exp();
                    let geo = (1.0 - r.powi(t as i32 + 1)) / (1.0 - r);
                    want += c.data()[si] * 0.3 * b.data()[si] * 0.7 * geo;
                }
                assert!((y.data()[t * d + di] - want).abs() < 1e-12);
            }
        }
    }
}
