//! Reconstruction quality metrics and evaluation reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cassi::SpectralCube;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported in place of +∞ for identical inputs.
pub const PSNR_CAP: f64 = 100.0;
pub const SAM_EPS: f64 = 1e-8;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(x: &Tensor, r: &Tensor) -> Result<()> {
    if x.shape() != r.shape() {
        return Err(Error::Contract(format!(
            "metric operands differ in shape: {:?} vs {:?}",
            x.shape(),
            r.shape()
        )));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` with unit peak, capped.
pub fn psnr_band(x: &[f64], r: &[f64]) -> f64 {
    let mse = x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// Per-band PSNR of `[N][H][W]` arrays.
pub fn psnr_per_band(x: &Tensor, r: &Tensor) -> Result<Vec<f64>> {
    same_shape(x, r)?;
    let (n, _, _) = x.dims3();
    Ok((0..n).map(|b| psnr_band(x.channel(b), r.channel(b))).collect())
}

/// Band-averaged PSNR.
pub fn psnr(x: &Tensor, r: &Tensor) -> Result<f64> {
    let bands = psnr_per_band(x, r)?;
    Ok(bands.iter().sum::<f64>() / bands.len() as f64)
}

/// Mean spectral angle in degrees over pixels.
pub fn sam(x: &Tensor, r: &Tensor) -> Result<f64> {
    same_shape(x, r)?;
    let (n, h, w) = x.dims3();
    let hw = h * w;
    let (xd, rd) = (x.data(), r.data());
    let mut total = 0.0;
    for p in 0..hw {
        let (mut dot, mut nx, mut nr) = (0.0, 0.0, 0.0);
        for b in 0..n {
            let (a, c) = (xd[b * hw + p], rd[b * hw + p]);
            dot += a * c;
            nx += a * a;
            nr += c * c;
        }
        let cos = (dot / (nx.sqrt() * nr.sqrt() + SAM_EPS)).clamp(-1.0, 1.0);
        total += cos.acos();
    }
    Ok((total / hw as f64).to_degrees())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' filtering with the normalized Gaussian window.
fn filter_valid(img: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..k).map(|t| g[t] * img[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|t| g[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Single-scale SSIM of one `h × w` image pair with unit dynamic range.
pub fn ssim_band(x: &[f64], r: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Contract(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    assert_eq!(x.len(), h * w);
    assert_eq!(r.len(), h * w);
    let g = gaussian_window();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(x, h, w, &g);
    let mr = filter_valid(r, h, w, &g);
    let xx = filter_valid(&prod(x, x), h, w, &g);
    let rr = filter_valid(&prod(r, r), h, w, &g);
    let xr = filter_valid(&prod(x, r), h, w, &g);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for p in 0..mx.len() {
        let (a, b) = (mx[p], mr[p]);
        let va = xx[p] - a * a;
        let vb = rr[p] - b * b;
        let cov = xr[p] - a * b;
        total += ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (va + vb + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Band-averaged SSIM.
pub fn ssim(x: &Tensor, r: &Tensor) -> Result<f64> {
    same_shape(x, r)?;
    let (n, h, w) = x.dims3();
    let mut total = 0.0;
    for b in 0..n {
        total += ssim_band(x.channel(b), r.channel(b), h, w)?;
    }
    Ok(total / n as f64)
}

/// Symmetric difference of two wavelength lists, or `Ok` if equal.
pub fn check_same_wavelengths(left: &[f64], right: &[f64]) -> Result<()> {
    let only_left: Vec<f64> = left.iter().filter(|l| !right.contains(l)).copied().collect();
    let only_right: Vec<f64> = right.iter().filter(|r| !left.contains(r)).copied().collect();
    if only_left.is_empty() && only_right.is_empty() && left.len() == right.len() {
        Ok(())
    } else {
        Err(Error::WavelengthMismatch { only_left, only_right })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub sam: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Continuous,
    SuperResolution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene: String,
    pub scores: Scores,
    pub psnr_per_band: Vec<f64>,
}

/// Scores of a prediction against a reference with identical wavelengths.
pub fn score_scene(scene: &str, pred: &SpectralCube, reference: &SpectralCube) -> Result<SceneReport> {
    check_same_wavelengths(pred.wavelengths(), reference.wavelengths())?;
    let (x, r) = (pred.data(), reference.data());
    if x.shape() != r.shape() {
        return Err(Error::InvalidDimensions(format!(
            "prediction {:?} vs reference {:?}",
            x.shape(),
            r.shape()
        )));
    }
    let psnr_per_band = psnr_per_band(x, r)?;
    let psnr = psnr_per_band.iter().sum::<f64>() / psnr_per_band.len() as f64;
    Ok(SceneReport {
        scene: scene.to_string(),
        scores: Scores {
            sam: sam(x, r)?,
            psnr,
            ssim: ssim(x, r)?,
        },
        psnr_per_band,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub wavelengths: Vec<f64>,
    pub scenes: Vec<SceneReport>,
    pub average: Scores,
    /// PSNR per wavelength averaged over scenes.
    pub psnr_curve: Vec<f64>,
}

impl EvalReport {
    pub fn new(task: Task, wavelengths: Vec<f64>, scenes: Vec<SceneReport>) -> Result<Self> {
        if scenes.is_empty() {
            return Err(Error::Contract("a report needs at least one scene".into()));
        }
        if let Some(s) = scenes.iter().find(|s| s.psnr_per_band.len() != wavelengths.len()) {
            return Err(Error::InvalidDimensions(format!(
                "scene {} has {} bands, report has {}",
                s.scene,
                s.psnr_per_band.len(),
                wavelengths.len()
            )));
        }
        let n = scenes.len() as f64;
        let mean = |f: fn(&Scores) -> f64| scenes.iter().map(|s| f(&s.scores)).sum::<f64>() / n;
        let average = Scores {
            sam: mean(|s| s.sam),
            psnr: mean(|s| s.psnr),
            ssim: mean(|s| s.ssim),
        };
        let psnr_curve = (0..wavelengths.len())
            .map(|b| scenes.iter().map(|s| s.psnr_per_band[b]).sum::<f64>() / n)
            .collect();
        Ok(EvalReport {
            task,
            wavelengths,
            scenes,
            average,
            psnr_curve,
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    /// Markdown table of per-scene and average scores.
    pub fn table(&self) -> String {
        let mut s = String::from("| scene | SAM (deg) | PSNR (dB) | SSIM |\n|---|---|---|---|\n");
        let row = |s: &mut String, name: &str, sc: &Scores| {
            let _ = writeln!(s, "| {name} | {:.3} | {:.2} | {:.4} |", sc.sam, sc.psnr, sc.ssim);
        };
        for sc in &self.scenes {
            row(&mut s, &sc.scene, &sc.scores);
        }
        row(&mut s, "average", &self.average);
        s
    }

    pub fn psnr_curve_svg(&self) -> String {
        line_plot_svg(
            "PSNR per wavelength",
            "wavelength (nm)",
            "PSNR (dB)",
            &[("average", &self.wavelengths, &self.psnr_curve)],
        )
    }
}

/// Mean spectrum over the pixel rectangle `rows × cols` of both cubes.
pub fn region_signature(cube: &SpectralCube, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<f64> {
    let w = cube.width();
    let count = (rows.len() * cols.len()).max(1) as f64;
    (0..cube.bands())
        .map(|b| {
            let band = cube.band(b);
            rows.clone()
                .flat_map(|i| cols.clone().map(move |j| band[i * w + j]))
                .sum::<f64>()
                / count
        })
        .collect()
}

pub fn signature_svg(pred: &SpectralCube, reference: &SpectralCube, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> String {
    let p = region_signature(pred, rows.clone(), cols.clone());
    let r = region_signature(reference, rows, cols);
    line_plot_svg(
        "spectral signature",
        "wavelength (nm)",
        "intensity",
        &[("reference", reference.wavelengths(), &r), ("prediction", pred.wavelengths(), &p)],
    )
}

/// Absolute error of one band as a binary PGM, scaled so `max_err` is white.
pub fn error_heatmap_pgm(pred: &SpectralCube, reference: &SpectralCube, band: usize, max_err: f64) -> Vec<u8> {
    let (h, w) = (reference.height(), reference.width());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(pred.band(band).iter().zip(reference.band(band)).map(|(a, b)| {
        let v = ((a - b).abs() / max_err).clamp(0.0, 1.0);
        (v * 255.0).round() as u8
    }));
    out
}

/// Minimal multi-series line plot.
pub fn line_plot_svg(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, &[f64], &[f64])]) -> String {
    let (width, height, margin) = (640.0, 400.0, 60.0);
    let xs = series.iter().flat_map(|s| s.1.iter().copied());
    let ys = series.iter().flat_map(|s| s.2.iter().copied()).filter(|v| v.is_finite());
    let (x0, x1) = min_max(xs);
    let (y0, y1) = min_max(ys);
    let sx = |x: f64| margin + (x - x0) / (x1 - x0) * (width - 2.0 * margin);
    let sy = |y: f64| height - margin - (y - y0) / (y1 - y0) * (height - 2.0 * margin);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, width / 2.0);
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = margin,
        b = height - margin,
        r = width - margin
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, width / 2.0, height - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{ylabel}</text>"#,
        height / 2.0,
        height / 2.0
    );
    for (v, label) in [(x0, true), (x1, true), (y0, false), (y1, false)] {
        if label {
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{v:.1}</text>"#, sx(v), height - margin + 15.0);
        } else {
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#, margin - 5.0, sy(v) + 4.0);
        }
    }
    for (k, (name, x, y)) in series.iter().enumerate() {
        let color = colors[k % colors.len()];
        let pts: Vec<String> = x
            .iter()
            .zip(y.iter())
            .filter(|(_, v)| v.is_finite())
            .map(|(a, b)| format!("{:.2},{:.2}", sx(*a), sy(*b)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            width - margin - 80.0,
            margin + 15.0 * k as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_constant_offset() {
        let r = Tensor::full(&[2, 4, 4], 1.0);
        let x = Tensor::full(&[2, 4, 4], 0.9);
        assert!((psnr(&x, &r).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&r, &r).unwrap(), PSNR_CAP);
        assert!(psnr(&x, &Tensor::zeros(&[2, 4, 3])).is_err());
    }

    #[test]
    fn sam_orthogonal_and_scaled() {
        let r = Tensor::new(&[2, 1, 2], vec![1.0, 0.3, 0.0, 0.7]).unwrap();
        // ε in the denominator leaves an angle of about sqrt(2ε)/(‖x‖‖r‖) rad
        assert!(sam(&r, &r).unwrap() < 0.02);
        assert!(sam(&r.map(|v| 2.0 * v), &r).unwrap() < 0.02);
        let a = Tensor::new(&[2, 1, 1], vec![1.0, 0.0]).unwrap();
        let b = Tensor::new(&[2, 1, 1], vec![0.0, 1.0]).unwrap();
        assert!((sam(&a, &b).unwrap() - 90.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_small_image() {
        let img: Vec<f64> = (0..144).map(|i| ((i * 7) % 13) as f64 / 13.0).collect();
        assert!((ssim_band(&img, &img, 12, 12).unwrap() - 1.0).abs() < 1e-12);
        let inv: Vec<f64> = img.iter().map(|v| 1.0 - v).collect();
        assert!(ssim_band(&inv, &img, 12, 12).unwrap() < 1.0);
        assert!(matches!(ssim_band(&img[..100], &img[..100], 10, 10), Err(Error::Contract(_))));
    }

    #[test]
    fn wavelength_difference_lists_both_sides() {
        match check_same_wavelengths(&[450.0, 500.0], &[450.0, 510.0]) {
            Err(Error::WavelengthMismatch { only_left, only_right }) => {
                assert_eq!(only_left, vec![500.0]);
                assert_eq!(only_right, vec![510.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
