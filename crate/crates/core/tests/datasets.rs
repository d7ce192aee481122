//! Portable container format, synthetic scenes, patches and splits.

mod common;

use std::fs;

use common::rng;
use phycosf_core::datasets::{
    crop_at, crop_patch, generate_synthetic, linspace, load_array, load_cube, load_plane, save_cube, save_plane,
    scene_id, Header, SceneSplit, SyntheticScene, SyntheticSpec, DATA_FILE, HEADER_FILE,
};
use phycosf_core::{Error, SpectralCube, Tensor};
use rand::Rng;

fn f32_cube(seed: u64, n: usize, h: usize, w: usize) -> SpectralCube {
    let mut r = rng(seed);
    let data: Vec<f64> = (0..n * h * w).map(|_| f64::from(r.random::<f32>())).collect();
    SpectralCube::new(Tensor::new(&[n, h, w], data).unwrap(), linspace(450.0, 650.0, n)).unwrap()
}

fn spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        height: 16,
        width: 12,
        n_blobs: 4,
        n_peaks: 2,
        lambda_min: 450.0,
        lambda_max: 650.0,
    }
}

#[test]
fn cube_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (k, (n, h, w)) in [(1, 1, 1), (3, 5, 7), (16, 8, 8)].into_iter().enumerate() {
        let cube = f32_cube(k as u64, n, h, w);
        let path = dir.path().join(format!("c{k}"));
        save_cube(&cube, &path).unwrap();
        let back = load_cube(&path).unwrap();
        assert_eq!(back.wavelengths(), cube.wavelengths());
        let same = back.data().data().iter().zip(cube.data().data()).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same && back.data().shape() == cube.data().shape());
    }
}

#[test]
fn saved_bytes_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cube = f32_cube(9, 2, 3, 3);
    save_cube(&cube, &dir.path().join("a")).unwrap();
    save_cube(&load_cube(&dir.path().join("a")).unwrap(), &dir.path().join("b")).unwrap();
    for f in [HEADER_FILE, DATA_FILE] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn header_records_shape_and_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cube = f32_cube(1, 3, 4, 5);
    save_cube(&cube, dir.path()).unwrap();
    let header: Header = serde_json::from_str(&fs::read_to_string(dir.path().join(HEADER_FILE)).unwrap()).unwrap();
    assert_eq!(header.shape, [4, 5, 3]);
    assert_eq!(header.wavelengths_nm, cube.wavelengths());
    assert_eq!(fs::metadata(dir.path().join(DATA_FILE)).unwrap().len(), 3 * 4 * 5 * 4);
}

fn rewrite_header(dir: &std::path::Path, edit: impl Fn(&mut serde_json::Value)) {
    let p = dir.join(HEADER_FILE);
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    edit(&mut v);
    fs::write(&p, serde_json::to_string(&v).unwrap()).unwrap();
}

#[test]
fn malformed_containers_give_distinct_errors() {
    let base = tempfile::tempdir().unwrap();
    let fresh = |name: &str| {
        let d = base.path().join(name);
        save_cube(&f32_cube(2, 3, 4, 4), &d).unwrap();
        d
    };

    let d = fresh("short");
    let bytes = fs::read(d.join(DATA_FILE)).unwrap();
    fs::write(d.join(DATA_FILE), &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_cube(&d), Err(Error::LengthMismatch { expected: 192, actual: 188, .. })));

    let d = fresh("order");
    rewrite_header(&d, |v| v["wavelengths_nm"] = serde_json::json!([500.0, 450.0, 600.0]));
    assert!(matches!(load_cube(&d), Err(Error::NonMonotoneWavelengths { .. })));

    let d = fresh("nan");
    let mut bytes = fs::read(d.join(DATA_FILE)).unwrap();
    bytes[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(d.join(DATA_FILE), bytes).unwrap();
    assert!(matches!(load_cube(&d), Err(Error::NonFinitePayload { index: 2, .. })));

    let d = fresh("dtype");
    rewrite_header(&d, |v| v["dtype"] = serde_json::json!("float64-le"));
    assert!(matches!(load_cube(&d), Err(Error::Header { .. })));

    let d = fresh("extra");
    rewrite_header(&d, |v| v["units"] = serde_json::json!("nm"));
    assert!(matches!(load_cube(&d), Err(Error::Header { .. })));

    let d = fresh("count");
    rewrite_header(&d, |v| v["wavelengths_nm"] = serde_json::json!([450.0, 550.0]));
    assert!(matches!(load_cube(&d), Err(Error::Header { .. })));

    assert!(matches!(load_cube(&base.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn planes_roundtrip_without_wavelengths() {
    let dir = tempfile::tempdir().unwrap();
    let plane = Tensor::new(&[3, 4], (0..12).map(|v| v as f64 * 0.25).collect()).unwrap();
    save_plane(&plane, dir.path()).unwrap();
    assert_eq!(load_plane(dir.path()).unwrap(), plane);
    let (arr, wl) = load_array(dir.path()).unwrap();
    assert_eq!(arr.shape(), &[1, 3, 4]);
    assert!(wl.is_empty());
    // A cube needs wavelengths.
    assert!(load_cube(dir.path()).is_err());
}

#[test]
fn synthetic_scenes_are_reproducible_and_bounded() {
    let grid = linspace(450.0, 650.0, 9);
    let a = generate_synthetic(&spec(5), &grid).unwrap();
    let b = generate_synthetic(&spec(5), &grid).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate_synthetic(&spec(6), &grid).unwrap());
    assert!(a.data().data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!((a.bands(), a.height(), a.width()), (9, 16, 12));
}

#[test]
fn unseen_grid_slices_agree_with_the_analytic_scene() {
    // Rendering on a different grid gives exactly the same slice at shared λ.
    let coarse = generate_synthetic(&spec(7), &linspace(450.0, 650.0, 5)).unwrap();
    let fine = generate_synthetic(&spec(7), &linspace(450.0, 650.0, 9)).unwrap();
    for k in 0..5 {
        assert_eq!(coarse.band(k), fine.band(2 * k));
    }
    let scene = SyntheticScene::new(&spec(7)).unwrap();
    let single = scene.render(&[533.3]).unwrap();
    assert_eq!(single.get(3, 4, 0), scene.value(3, 4, 533.3));
}

#[test]
fn midpoint_interpolation_error_respects_the_curvature_bound() {
    // |f(m) − (f(a)+f(b))/2| ≤ (b−a)²/8 · max|f''| for the unclipped field.
    let scene = SyntheticScene::new(&spec(8)).unwrap();
    let mut r = rng(8);
    for _ in 0..500 {
        let (i, j) = (r.random_range(0..16), r.random_range(0..12));
        let a = r.random_range(450.0..640.0);
        let b = a + r.random_range(1.0..10.0);
        let m = 0.5 * (a + b);
        let err = (scene.raw(i, j, m) - 0.5 * (scene.raw(i, j, a) + scene.raw(i, j, b))).abs();
        let bound = (b - a).powi(2) / 8.0 * scene.curvature_bound(i, j);
        assert!(err <= bound + 1e-12, "err {err} bound {bound}");
    }
}

#[test]
fn synthetic_rejects_out_of_range_grid() {
    assert!(matches!(generate_synthetic(&spec(1), &[440.0, 500.0]), Err(Error::OutOfRange { .. })));
    assert!(generate_synthetic(&spec(1), &[500.0, 480.0]).is_err());
}

#[test]
fn crop_at_copies_the_window() {
    let cube = f32_cube(3, 2, 6, 7);
    let patch = crop_at(&cube, 1, 2, 4).unwrap();
    assert_eq!(patch.wavelengths(), cube.wavelengths());
    for n in 0..2 {
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(patch.get(i, j, n), cube.get(i + 1, j + 2, n));
            }
        }
    }
    assert!(crop_at(&cube, 3, 0, 4).is_err());
    assert!(crop_patch(&cube, 7, &mut rng(0)).is_err());
}

#[test]
fn crop_corners_are_uniform() {
    // Chi-square over the 3×3 = 9 possible corners of a 4-patch in a 6×6 scene.
    let mut data = vec![0.0; 36];
    for (k, v) in data.iter_mut().enumerate() {
        *v = k as f64;
    }
    let cube = SpectralCube::new(Tensor::new(&[1, 6, 6], data).unwrap(), vec![500.0]).unwrap();
    let mut counts = [0usize; 9];
    let mut r = rng(99);
    let draws = 9000;
    for _ in 0..draws {
        let p = crop_patch(&cube, 4, &mut r).unwrap();
        let corner = p.get(0, 0, 0) as usize;
        counts[(corner / 6) * 3 + corner % 6] += 1;
    }
    let expected = draws as f64 / 9.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99.9th percentile of chi-square with 8 degrees of freedom.
    assert!(chi2 < 26.12, "chi2 {chi2} counts {counts:?}");
}

#[test]
fn desk_split_shape() {
    let split = SceneSplit::desk();
    assert_eq!(split.train_scenes.len(), 12);
    assert_eq!(split.render_scenes.len(), 4);
    assert_eq!(split.train_lambdas.len(), 12);
    assert_eq!(split.holdout_lambdas.len(), 4);
    assert_eq!(split.grid(), linspace(450.0, 650.0, 16));
    assert_eq!(split.train_scenes[0], scene_id(0));
    assert_eq!(split.render_scenes[3], "scene_15");
    // held-out wavelengths are interior points
    assert!(split.holdout_lambdas.iter().all(|&l| l > 450.0 && l < 650.0));
}

#[test]
fn split_roundtrip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.json");
    let split = SceneSplit::desk();
    split.save(&path).unwrap();
    assert_eq!(SceneSplit::load(&path).unwrap(), split);

    let mut bad = split.clone();
    bad.holdout_lambdas.push(bad.train_lambdas[0]);
    bad.save(&path).unwrap();
    assert!(matches!(SceneSplit::load(&path), Err(Error::Config(_))));

    let mut bad = split;
    bad.render_scenes.push(bad.train_scenes[0].clone());
    bad.save(&path).unwrap();
    assert!(SceneSplit::load(&path).is_err());

    assert!(SceneSplit::new(4, 5, &linspace(450.0, 650.0, 4), &[]).is_err());
    assert!(SceneSplit::new(4, 2, &linspace(450.0, 650.0, 4), &[4]).is_err());
}
