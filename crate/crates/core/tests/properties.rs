//! Property-based invariants over randomly drawn instances.

mod common;

use common::{random_operator, random_tensor, rng};
use phycosf_core::cassi::{DispersionModel, Measurement};
use phycosf_core::head::{interpolation_weights, normalize_lambda, FrequencyBank};
use phycosf_core::metrics::{psnr, sam};
use phycosf_core::pipeline::sample_wavelengths;
use phycosf_core::unfold::{accelerate, data_step};
use phycosf_core::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_pairs_with_forward(seed in any::<u64>(), h in 1usize..9, w in 1usize..9, n in 1usize..5) {
        let mut r = rng(seed);
        let op = random_operator(&mut r, h, w, n);
        let x = random_tensor(&[n, h, w], &mut r);
        let y = random_tensor(&[h, op.measurement_width()], &mut r);
        let lhs = op.apply(&x).unwrap().dot(&y);
        let rhs = x.dot(&op.adjoint(&y).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn gram_diagonal_is_bounded_by_band_count(seed in any::<u64>(), h in 1usize..9, w in 1usize..9, n in 1usize..5) {
        let op = random_operator(&mut rng(seed), h, w, n);
        let d = op.phi_phit_diag();
        prop_assert!(d.data().iter().all(|&v| (0.0..=n as f64).contains(&v)));
    }

    #[test]
    fn data_step_never_increases_the_objective(seed in any::<u64>(), mu in 1e-3f64..10.0) {
        // x minimises ‖y − Φx‖² + μ‖x − ẑ‖², so it beats ẑ itself.
        let mut r = rng(seed);
        let op = random_operator(&mut r, 6, 5, 3);
        let z = random_tensor(&[3, 6, 5], &mut r);
        let y = Measurement::new(random_tensor(&[6, op.measurement_width()], &mut r), 0.0).unwrap();
        let x = data_step(&op, &y, &z, mu).unwrap();
        let objective = |v: &Tensor| {
            let res = y.data().zip_map(&op.apply(v).unwrap(), |a, b| a - b);
            let dev = v.zip_map(&z, |a, b| a - b);
            res.dot(&res) + mu * dev.dot(&dev)
        };
        prop_assert!(objective(&x) <= objective(&z) + 1e-12);
    }

    #[test]
    fn momentum_is_affine(seed in any::<u64>(), beta in 0.0f64..1.0) {
        let mut r = rng(seed);
        let a = random_tensor(&[2, 3, 4], &mut r);
        let b = random_tensor(&[2, 3, 4], &mut r);
        let z = accelerate(&a, &b, beta).unwrap();
        for ((zv, av), bv) in z.data().iter().zip(a.data()).zip(b.data()) {
            prop_assert!((zv - (av + beta * (av - bv))).abs() <= 1e-12);
        }
    }

    #[test]
    fn shifts_are_monotone_and_bounded(d_total in 0usize..40, a in 450.0f64..650.0, b in 450.0f64..650.0) {
        let disp = DispersionModel::new(d_total, 450.0, 650.0).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (s_lo, s_hi) = (disp.shift(lo).unwrap(), disp.shift(hi).unwrap());
        prop_assert!(s_lo <= s_hi && s_hi <= d_total);
    }

    #[test]
    fn normalized_wavelengths_stay_in_unit_interval(l in 450.0f64..=650.0) {
        let v = normalize_lambda(l, 450.0, 650.0).unwrap();
        prop_assert!((-1.0..=1.0).contains(&v));
    }

    #[test]
    fn fourier_codes_are_bounded_pairs(seed in any::<u64>(), l in -1.0f64..=1.0) {
        let bank = FrequencyBank::sample(8, 1.0, &mut rng(seed)).unwrap();
        let code = bank.encode(l);
        prop_assert_eq!(code.len(), 16);
        for k in 0..8 {
            let (s, c) = (code[k], code[k + 8]);
            prop_assert!((s * s + c * c - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn interpolation_weights_form_a_partition_of_unity(
        mut knots in prop::collection::vec(450.0f64..650.0, 1..8),
        queries in prop::collection::vec(440.0f64..660.0, 1..6),
    ) {
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let w = interpolation_weights(&knots, &queries);
        for row in w.data().chunks(knots.len()) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn sampling_returns_sorted_distinct_pool_members(seed in any::<u64>(), n in 0usize..=12) {
        let pool: Vec<f64> = (0..12).map(|k| 450.0 + 10.0 * k as f64).collect();
        let s = sample_wavelengths(&pool, n, &mut rng(seed)).unwrap();
        prop_assert_eq!(s.len(), n);
        prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.iter().all(|l| pool.contains(l)));
    }

    #[test]
    fn sam_ignores_global_scale(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut r = rng(seed);
        let x = random_tensor(&[4, 3, 3], &mut r).map(|v| v.abs() + 0.1);
        let y = random_tensor(&[4, 3, 3], &mut r).map(|v| v.abs() + 0.1);
        let a = sam(&x, &y).unwrap();
        let b = sam(&x.map(|v| v * scale), &y).unwrap();
        prop_assert!((a - b).abs() <= 1e-4);
        prop_assert!((0.0..=180.0).contains(&a));
    }

    #[test]
    fn psnr_is_symmetric(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_tensor(&[3, 4, 4], &mut r);
        let y = random_tensor(&[3, 4, 4], &mut r);
        prop_assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
    }
}
