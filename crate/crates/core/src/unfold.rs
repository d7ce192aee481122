//! Unrolled accelerated half-quadratic splitting.
//!
//! Each stage solves the quadratic data subproblem in closed form, applies
//! the learned prior, and extrapolates with a momentum step:
//!
//! ```text
//! x_k = argmin ‖y − Φx‖² + μ_k‖x − ẑ_{k−1}‖²
//! z_k = prior(x_k, η_k)
//! ẑ_k = z_k + β_k (z_k − z_{k−1})
//! ```

use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{sigmoid, softplus, CustomOp, Tape, Var};
use crate::cassi::{Measurement, SensingOperator};
use crate::error::{Error, Result};
use crate::head::{interpolate_bands, SpectralRange};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Floor on `diag(ΦΦᵀ)` in the initial back-projection.
pub const INIT_EPS: f64 = 1e-6;

pub const INIT_MU: f64 = 1e-2;
pub const INIT_BETA: f64 = 0.5;
pub const INIT_ETA: f64 = 0.1;

fn inverse_softplus(v: f64) -> f64 {
    v.exp_m1().ln()
}

/// The learned prior step of one stage.
pub trait StagePrior {
    /// `x: [N][H][W]` at `sensed`, `eta: [1]` → `[len(queries)][H][W]`.
    fn apply(&self, tape: &mut Tape, p: &Bound, x: Var, eta: Var, sensed: &[f64], queries: &[f64]) -> Result<Var>;

    /// Wavelengths the prior can be queried at, if restricted.
    fn range(&self) -> Option<SpectralRange> {
        None
    }
}

/// `z = x`, interpolated when queried off the sensed grid.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPrior;

impl StagePrior for IdentityPrior {
    fn apply(&self, tape: &mut Tape, _p: &Bound, x: Var, _eta: Var, sensed: &[f64], queries: &[f64]) -> Result<Var> {
        if queries == sensed {
            Ok(x)
        } else {
            Ok(interpolate_bands(tape, x, sensed, queries))
        }
    }
}

/// Per-stage unconstrained scalars: `μ = softplus(raw)`, `β = sigmoid(raw)`,
/// `η = softplus(raw)`.
#[derive(Clone, Debug)]
pub struct UnfoldParams {
    pub stages: usize,
    pub mu_raw: ParamId,
    pub beta_raw: ParamId,
    pub eta_raw: ParamId,
}

impl UnfoldParams {
    pub fn new(store: &mut ParamStore, stages: usize) -> Result<Self> {
        if stages == 0 {
            return Err(Error::Config("at least one unfolding stage is required".into()));
        }
        let fill = |v: f64| Tensor::full(&[stages], v);
        Ok(UnfoldParams {
            stages,
            mu_raw: store.add("unfold.mu_raw", fill(inverse_softplus(INIT_MU))),
            beta_raw: store.add("unfold.beta_raw", fill(0.0)),
            eta_raw: store.add("unfold.eta_raw", fill(inverse_softplus(INIT_ETA))),
        })
    }

    /// Effective `(μ_k, β_k, η_k)` for every stage.
    pub fn effective(&self, store: &ParamStore) -> Vec<(f64, f64, f64)> {
        let (m, b, e) = (
            store.get(self.mu_raw).data(),
            store.get(self.beta_raw).data(),
            store.get(self.eta_raw).data(),
        );
        (0..self.stages)
            .map(|k| (softplus(m[k]), sigmoid(b[k]), softplus(e[k])))
            .collect()
    }

    /// Perturbs the raw values, for tests that need non-default stages.
    pub fn jitter<R: Rng + ?Sized>(&self, store: &mut ParamStore, scale: f64, rng: &mut R) {
        for id in [self.mu_raw, self.beta_raw, self.eta_raw] {
            for v in store.get_mut(id).data_mut() {
                *v += rng.random_range(-scale..scale);
            }
        }
    }
}

/// Back-projection `Φᵀ(y ⊘ max(diag(ΦΦᵀ), ε))`.
pub fn init_estimate(op: &SensingOperator, y: &Measurement) -> Result<Tensor> {
    let d = op.phi_phit_diag();
    let scaled = y.data().zip_map(&d, |v, dv| v / dv.max(INIT_EPS));
    op.adjoint(&scaled)
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::Contract(format!("penalty μ must be positive and finite, got {mu}")))
    }
}

/// Closed-form minimiser of `‖y − Φx‖² + μ‖x − ẑ‖²` through the
/// Sherman–Morrison–Woodbury identity with diagonal `ΦΦᵀ`.
pub fn data_step(op: &SensingOperator, y: &Measurement, z_hat: &Tensor, mu: f64) -> Result<Tensor> {
    check_mu(mu)?;
    let d = op.phi_phit_diag();
    let r = y.data().zip_map(&op.apply(z_hat)?, |a, b| a - b);
    let scaled = r.zip_map(&d, |rv, dv| rv / (mu + dv));
    let mut x = op.adjoint(&scaled)?;
    x.add_assign(z_hat);
    Ok(x)
}

/// `z_new + β (z_new − z_old)`.
pub fn accelerate(z_new: &Tensor, z_old: &Tensor, beta: f64) -> Result<Tensor> {
    if z_new.shape() != z_old.shape() {
        return Err(Error::InvalidDimensions(format!(
            "acceleration operands differ: {:?} vs {:?}",
            z_new.shape(),
            z_old.shape()
        )));
    }
    Ok(z_new.zip_map(z_old, |a, b| a + beta * (a - b)))
}

struct DataStepOp {
    op: Rc<SensingOperator>,
    /// `μ + diag(ΦΦᵀ)`.
    denom: Tensor,
    residual: Tensor,
}

impl CustomOp for DataStepOp {
    fn name(&self) -> &'static str {
        "data_step"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let pg = self.op.apply(grad).expect("shape checked in forward");
        let mut g_mu = 0.0;
        for ((p, r), d) in pg.data().iter().zip(self.residual.data()).zip(self.denom.data()) {
            g_mu -= p * r / (d * d);
        }
        let back = self
            .op
            .adjoint(&pg.zip_map(&self.denom, |p, d| p / d))
            .expect("shape checked in forward");
        let g_z = grad.zip_map(&back, |g, b| g - b);
        vec![Some(g_z), Some(Tensor::scalar(g_mu))]
    }
}

/// Differentiable data step in `ẑ` and the scalar `μ`.
pub fn data_step_var(tape: &mut Tape, op: &Rc<SensingOperator>, y: &Measurement, z_hat: Var, mu: Var) -> Result<Var> {
    let mu_v = tape.value(mu).item();
    check_mu(mu_v)?;
    let zv = tape.value(z_hat);
    let residual = y.data().zip_map(&op.apply(zv)?, |a, b| a - b);
    let denom = op.phi_phit_diag().map(|d| d + mu_v);
    let mut x = op.adjoint(&residual.zip_map(&denom, |r, d| r / d))?;
    x.add_assign(zv);
    let custom = DataStepOp {
        op: Rc::clone(op),
        denom,
        residual,
    };
    Ok(tape.custom(&[z_hat, mu], x, Box::new(custom)))
}

/// Scalars reported for one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageDiagnostics {
    pub stage: usize,
    /// `‖y − Φx_k‖₂` after the data step.
    pub residual: f64,
    pub mu: f64,
    pub beta: f64,
    pub eta: f64,
}

#[derive(Clone, Debug)]
pub struct Unrolled {
    /// Final `z_K` at the sensed wavelengths.
    pub recon: Var,
    /// Final-stage prior at the requested queries, when any were given.
    pub render: Option<Var>,
    pub stages: Vec<StageDiagnostics>,
}

fn ensure_finite(tape: &Tape, v: Var, stage: usize, what: &str) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        let origin = match tape.first_non_finite() {
            Some((node, op)) => format!(" (first produced by {op} at node {node})"),
            None => String::new(),
        };
        Err(Error::NonFinite {
            stage,
            what: format!("{what}{origin}"),
        })
    }
}

/// Runs all stages; `queries` are rendered by the last stage's prior only.
pub fn run_stages(
    tape: &mut Tape,
    p: &Bound,
    op: &SensingOperator,
    y: &Measurement,
    prior: &dyn StagePrior,
    params: &UnfoldParams,
    queries: &[f64],
) -> Result<Unrolled> {
    if let Some(range) = prior.range() {
        queries.iter().try_for_each(|&q| range.check(q))?;
    }
    let op = Rc::new(op.clone());
    let sensed = op.sensed_wavelengths().to_vec();
    let init = init_estimate(&op, y)?;
    let z0 = tape.constant(init);
    ensure_finite(tape, z0, 0, "initial estimate")?;
    let (mut z_hat, mut z_prev) = (z0, z0);
    let mu_all = tape.softplus(p.var(params.mu_raw));
    let beta_all = tape.sigmoid(p.var(params.beta_raw));
    let eta_all = tape.softplus(p.var(params.eta_raw));
    let mut diagnostics = Vec::with_capacity(params.stages);
    let mut render = None;
    for k in 0..params.stages {
        let stage = k + 1;
        let mu = tape.slice_leading(mu_all, k, 1);
        let beta = tape.slice_leading(beta_all, k, 1);
        let eta = tape.slice_leading(eta_all, k, 1);
        let x = data_step_var(tape, &op, y, z_hat, mu)?;
        ensure_finite(tape, x, stage, "data step output")?;
        let last = stage == params.stages;
        let z = if last && !queries.is_empty() && queries != sensed.as_slice() {
            let all: Vec<f64> = sensed.iter().chain(queries).copied().collect();
            let out = prior.apply(tape, p, x, eta, &sensed, &all)?;
            render = Some(tape.slice_leading(out, sensed.len(), queries.len()));
            tape.slice_leading(out, 0, sensed.len())
        } else {
            let z = prior.apply(tape, p, x, eta, &sensed, &sensed)?;
            if last && !queries.is_empty() {
                render = Some(z);
            }
            z
        };
        ensure_finite(tape, z, stage, "prior output")?;
        let diff = tape.sub(z, z_prev);
        let step = tape.mul_scalar(diff, beta);
        let z_next_hat = tape.add(z, step);
        ensure_finite(tape, z_next_hat, stage, "accelerated estimate")?;
        let residual = y.data().zip_map(&op.apply(tape.value(x))?, |a, b| a - b).norm();
        let diag = StageDiagnostics {
            stage,
            residual,
            mu: tape.value(mu).item(),
            beta: tape.value(beta).item(),
            eta: tape.value(eta).item(),
        };
        log::debug!(
            target: "phycosf::unfold",
            "stage={} residual={:.6e} mu={:.6e} beta={:.6} eta={:.6e}",
            diag.stage,
            diag.residual,
            diag.mu,
            diag.beta,
            diag.eta
        );
        diagnostics.push(diag);
        z_prev = z;
        z_hat = z_next_hat;
    }
    Ok(Unrolled {
        recon: z_prev,
        render,
        stages: diagnostics,
    })
}
