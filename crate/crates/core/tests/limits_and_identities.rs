//! Limit behaviour of the data step, FFT roundtrips and identity maps of
//! zeroed residual branches.

mod common;

use common::{random_operator, random_tensor, rng, unit_tensor};
use phycosf_core::autodiff::{fourier, Tape};
use phycosf_core::cassi::{CodedMask, DispersionModel, Measurement, SensingOperator};
use phycosf_core::params::ParamStore;
use phycosf_core::prior::blocks::{Cdfe, Gdfn, GlamLite};
use phycosf_core::prior::ssm::{FourierMamba, SpatialMamba};
use phycosf_core::prior::{Mixer, MixerConfig, SeqDomain};
use phycosf_core::unfold::{accelerate, data_step, run_stages, IdentityPrior, UnfoldParams};
use phycosf_core::{SpectralCube, Tensor};
use rand::Rng;

const LIMIT_TOL: f64 = 1e-6;
const IDENTITY_TOL: f64 = 1e-5;

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn huge_penalty_keeps_the_prior_estimate() {
    let mut r = rng(1);
    for _ in 0..20 {
        let (h, w, n) = (r.random_range(2..=8), r.random_range(2..=8), r.random_range(1..=4));
        let op = random_operator(&mut r, h, w, n);
        let z = unit_tensor(&[n, h, w], &mut r);
        let y = Measurement::new(random_tensor(&[h, op.measurement_width()], &mut r), 0.0).unwrap();
        let x = data_step(&op, &y, &z, 1e8).unwrap();
        assert!(max_abs_diff(&x, &z) <= LIMIT_TOL);
    }
}

#[test]
fn noiseless_ground_truth_is_a_fixed_point() {
    let mut r = rng(2);
    for _ in 0..20 {
        let (h, w, n) = (r.random_range(2..=8), r.random_range(2..=8), r.random_range(1..=4));
        let op = random_operator(&mut r, h, w, n);
        let gt = unit_tensor(&[n, h, w], &mut r);
        let cube = SpectralCube::new(gt.clone(), op.sensed_wavelengths().to_vec()).unwrap();
        let y = op.forward_clean(&cube).unwrap();
        for mu in [1e-4, 1e-2, 1.0, 1e3] {
            let x = data_step(&op, &y, &gt, mu).unwrap();
            assert!(max_abs_diff(&x, &gt) <= LIMIT_TOL, "mu {mu}");
        }
    }
}

#[test]
fn unrolled_identity_prior_recovers_an_invertible_scene() {
    // One band under an all-open mask makes Φ the identity.
    let mask = CodedMask::from_values(Tensor::full(&[8, 8], 1.0)).unwrap();
    let disp = DispersionModel::new(0, 450.0, 650.0).unwrap();
    let op = SensingOperator::new(mask, disp, vec![550.0]).unwrap();
    let gt = unit_tensor(&[1, 8, 8], &mut rng(3));
    let y = op.forward_clean(&SpectralCube::new(gt.clone(), vec![550.0]).unwrap()).unwrap();
    let mut store = ParamStore::new();
    let params = UnfoldParams::new(&mut store, 3).unwrap();
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let out = run_stages(&mut tape, &p, &op, &y, &IdentityPrior, &params, &[]).unwrap();
    assert!(max_abs_diff(tape.value(out.recon), &gt) <= LIMIT_TOL);
}

#[test]
fn zero_momentum_is_the_plain_update() {
    let mut r = rng(4);
    let a = random_tensor(&[2, 3, 3], &mut r);
    let b = random_tensor(&[2, 3, 3], &mut r);
    assert_eq!(accelerate(&a, &b, 0.0).unwrap(), a);
    assert_eq!(accelerate(&a, &a, 0.7).unwrap(), a);
}

#[test]
fn fft_roundtrip_even_and_odd_sizes() {
    let mut r = rng(5);
    for (h, w) in [(8, 8), (4, 6), (5, 7), (1, 9), (6, 1), (32, 32)] {
        let x = random_tensor(&[3, h, w], &mut r);
        let z = fourier::rfft2(&x);
        assert_eq!(z.shape(), &[6, h, fourier::half_width(w)]);
        let back = fourier::irfft2(&z, w);
        assert!(max_abs_diff(&back, &x) <= IDENTITY_TOL, "{h}x{w}");
    }
}

fn apply_block(store: &ParamStore, x: &Tensor, f: impl Fn(&mut Tape, &phycosf_core::params::Bound, phycosf_core::autodiff::Var) -> phycosf_core::autodiff::Var) -> Tensor {
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let out = f(&mut tape, &p, xv);
    tape.value(out).clone()
}

fn zero(store: &mut ParamStore, prefix: &str) {
    let names: Vec<String> = store.names().iter().filter(|n| n.starts_with(prefix)).cloned().collect();
    for n in names {
        let t = store.by_name_mut(&n).unwrap();
        *t = Tensor::zeros(t.shape());
    }
}

#[test]
fn zeroed_residual_branches_are_identities() {
    let mut r = rng(7);
    let x = random_tensor(&[6, 8, 8], &mut r);

    let mut store = ParamStore::new();
    let glam = GlamLite::new(&mut store, "g", 6, &mut r);
    zero(&mut store, "g.local");
    assert!(max_abs_diff(&apply_block(&store, &x, |t, p, v| glam.forward(t, p, v)), &x) <= IDENTITY_TOL);

    let mut store = ParamStore::new();
    let fm = FourierMamba::new(&mut store, "f", 6, 4, &mut r);
    zero(&mut store, "f.ssm.w_out");
    zero(&mut store, "f.ssm.b_out");
    assert!(max_abs_diff(&apply_block(&store, &x, |t, p, v| fm.forward(t, p, v)), &x) <= IDENTITY_TOL);

    let mut store = ParamStore::new();
    let sm = SpatialMamba::new(&mut store, "s", 6, 4, &mut r);
    zero(&mut store, "s.ssm.w_out");
    zero(&mut store, "s.ssm.b_out");
    assert!(max_abs_diff(&apply_block(&store, &x, |t, p, v| sm.forward(t, p, v)), &x) <= IDENTITY_TOL);

    let mut store = ParamStore::new();
    let gd = Gdfn::new(&mut store, "d", 6, &mut r);
    zero(&mut store, "d.project");
    assert!(max_abs_diff(&apply_block(&store, &x, |t, p, v| gd.forward(t, p, v)), &x) <= IDENTITY_TOL);
}

#[test]
fn fourier_branch_with_identity_sequence_map_is_a_roundtrip() {
    let x = random_tensor(&[4, 8, 8], &mut rng(8));
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = FourierMamba::spectral_branch(&mut tape, xv, |_, u| u);
    assert!(max_abs_diff(tape.value(out), &x) <= IDENTITY_TOL);
}

#[test]
fn mixer_encoders_become_identities() {
    for domain in [SeqDomain::Frequency, SeqDomain::Spatial, SeqDomain::None] {
        let mut r = rng(9);
        let mut store = ParamStore::new();
        let cfg = MixerConfig {
            channels: 24,
            branches: 3,
            seq_domain: domain,
            state_dim: 4,
        };
        let mixer = Mixer::new(&mut store, cfg, 3, &mut r).unwrap();
        mixer.zero_residual_branches(&mut store);
        let encoders: Vec<&Cdfe> = mixer.encoders();
        assert_eq!(encoders.len(), 3);
        for (level, enc) in encoders.into_iter().enumerate() {
            let c = 2 << level;
            let x = random_tensor(&[c, 8, 8], &mut r);
            let y = apply_block(&store, &x, |t, p, v| enc.forward(t, p, v));
            assert!(max_abs_diff(&y, &x) <= IDENTITY_TOL, "{domain:?} level {level}");
        }
    }
}
