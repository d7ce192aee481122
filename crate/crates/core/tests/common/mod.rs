#![allow(dead_code)]

use phycosf_core::autodiff::{Tape, Var};
use phycosf_core::cassi::{CodedMask, DispersionModel, SensingOperator};
use phycosf_core::params::{Bound, ParamStore};
use phycosf_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn unit_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// Relative error with a floor on the denominator.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Worst relative error between analytic and central-difference gradients
/// of `Σ w ⊙ build(params, input)`, over up to `per_param` sampled entries
/// of every parameter and of the input.
pub struct FdReport {
    pub worst: f64,
    pub worst_at: String,
    pub checked: usize,
}

pub fn fd_check(
    store: &ParamStore,
    input: Option<&Tensor>,
    per_param: usize,
    seed: u64,
    build: &dyn Fn(&mut Tape, &Bound, Option<Var>) -> Var,
) -> FdReport {
    let mut r = rng(seed);
    // analytic
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let x = input.map(|t| tape.param(t.clone()));
    let out = build(&mut tape, &p, x);
    let weights = random_tensor(tape.shape(out), &mut r);
    let obj = tape.weighted_sum(out, &weights);
    let mut grads = tape.backward(obj);
    let input_grad = x.and_then(|v| grads.take(v));
    let analytic = store.collect_grads(&p, &mut grads);

    let eval = |s: &ParamStore, inp: Option<&Tensor>| {
        let mut tape = Tape::new();
        let p = s.bind_frozen(&mut tape);
        let x = inp.map(|t| tape.constant(t.clone()));
        let out = build(&mut tape, &p, x);
        tape.value(out).dot(&weights)
    };

    let mut report = FdReport {
        worst: 0.0,
        worst_at: String::new(),
        checked: 0,
    };
    let note = |err: f64, what: String, report: &mut FdReport| {
        report.checked += 1;
        if err > report.worst {
            report.worst = err;
            report.worst_at = what;
        }
    };
    for (k, name) in store.names().iter().enumerate() {
        let len = analytic[k].len();
        let picks: Vec<usize> = if len <= per_param {
            (0..len).collect()
        } else {
            (0..per_param).map(|_| r.random_range(0..len)).collect()
        };
        for i in picks {
            let mut plus = store.clone();
            let id = plus.id(name).unwrap();
            plus.get_mut(id).data_mut()[i] += FD_STEP;
            let mut minus = store.clone();
            minus.get_mut(id).data_mut()[i] -= FD_STEP;
            let num = (eval(&plus, input) - eval(&minus, input)) / (2.0 * FD_STEP);
            let a = analytic[k].data()[i];
            note(rel_err(a, num), format!("{name}[{i}] analytic {a:e} numeric {num:e}"), &mut report);
        }
    }
    if let (Some(inp), Some(g)) = (input, input_grad) {
        for _ in 0..per_param.min(inp.len()) {
            let i = r.random_range(0..inp.len());
            let mut plus = inp.clone();
            plus.data_mut()[i] += FD_STEP;
            let mut minus = inp.clone();
            minus.data_mut()[i] -= FD_STEP;
            let num = (eval(store, Some(&plus)) - eval(store, Some(&minus))) / (2.0 * FD_STEP);
            let a = g.data()[i];
            note(rel_err(a, num), format!("input[{i}] analytic {a:e} numeric {num:e}"), &mut report);
        }
    }
    report
}

/// Random operator instance for dense-oracle comparisons.
pub fn random_operator(r: &mut impl Rng, h: usize, w: usize, bands: usize) -> SensingOperator {
    let seed = r.random::<u64>();
    let mask = CodedMask::generate(seed, h, w, 0.5).unwrap();
    let d_total = r.random_range(0..=2 * bands);
    let disp = DispersionModel::new(d_total, 450.0, 650.0).unwrap();
    let mut lams: Vec<f64> = (0..bands).map(|_| r.random_range(450.0..=650.0)).collect();
    lams.sort_by(f64::total_cmp);
    lams.dedup();
    while lams.len() < bands {
        let l = r.random_range(450.0..=650.0);
        if !lams.contains(&l) {
            lams.push(l);
            lams.sort_by(f64::total_cmp);
        }
    }
    SensingOperator::new(mask, disp, lams).unwrap()
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major `n × n`)
/// by Cholesky factorisation.
pub fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                assert!(s > 0.0, "matrix not positive definite");
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
