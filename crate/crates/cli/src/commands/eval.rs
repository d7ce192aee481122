//! `eval`: score predicted cubes against references and emit plots.

use std::path::{Path, PathBuf};

use phycosf_core::datasets::load_cube;
use phycosf_core::metrics::{error_heatmap_pgm, score_scene, signature_svg, EvalReport, Task};

use crate::exit::{io_error, CliError, CliResult};
use crate::manifest::Recorder;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const CURVE_SVG: &str = "psnr_curve.svg";
pub const SIGNATURE_SVG: &str = "signature.svg";
pub const HEATMAP_DIR: &str = "heatmaps";

pub struct EvalArgs<'a> {
    pub preds: &'a [PathBuf],
    pub references: &'a [PathBuf],
    /// Scene names; default to the prediction directory names.
    pub names: &'a [String],
    pub task: Task,
    /// Bands of each reference to score against; all when empty.
    pub select: Vec<f64>,
    pub out: &'a Path,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>, rec: &mut Recorder) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| io_error(path, e))?;
    rec.output(path);
    Ok(())
}

pub fn run(args: EvalArgs<'_>, rec: &mut Recorder) -> CliResult<()> {
    if args.preds.is_empty() || args.preds.len() != args.references.len() {
        return Err(CliError::config(format!(
            "give matching --pred/--reference pairs (got {} and {})",
            args.preds.len(),
            args.references.len()
        )));
    }
    if !args.names.is_empty() && args.names.len() != args.preds.len() {
        return Err(CliError::config("give one --name per prediction or none"));
    }
    std::fs::create_dir_all(args.out).map_err(|e| io_error(args.out, e))?;
    let heat_dir = args.out.join(HEATMAP_DIR);
    std::fs::create_dir_all(&heat_dir).map_err(|e| io_error(&heat_dir, e))?;

    let mut scenes = Vec::new();
    let mut first = None;
    for (k, (p, r)) in args.preds.iter().zip(args.references).enumerate() {
        rec.input(p);
        rec.input(r);
        let pred = load_cube(p)?;
        let mut reference = load_cube(r)?;
        if !args.select.is_empty() {
            reference = reference.select(&args.select)?;
        }
        let name = match args.names.get(k) {
            Some(n) => n.clone(),
            None => p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| format!("scene{k}")),
        };
        scenes.push(score_scene(&name, &pred, &reference)?);
        let max_err = pred
            .data()
            .data()
            .iter()
            .zip(reference.data().data())
            .fold(1e-12_f64, |m, (a, b)| m.max((a - b).abs()));
        for (band, l) in reference.wavelengths().iter().enumerate() {
            let path = heat_dir.join(format!("{name}_{l}nm.pgm"));
            write(&path, error_heatmap_pgm(&pred, &reference, band, max_err), rec)?;
        }
        if first.is_none() {
            first = Some((pred, reference));
        }
    }
    let (pred, reference) = first.expect("at least one pair");
    let report = EvalReport::new(args.task, reference.wavelengths().to_vec(), scenes)?;
    let json = args.out.join(REPORT_JSON);
    report.save_json(&json)?;
    rec.output(&json);
    write(&args.out.join(REPORT_MD), report.table(), rec)?;
    write(&args.out.join(CURVE_SVG), report.psnr_curve_svg(), rec)?;
    // Central quarter of the first scene.
    let (h, w) = (reference.height(), reference.width());
    let svg = signature_svg(&pred, &reference, h / 4..(3 * h / 4).max(h / 4 + 1), w / 4..(3 * w / 4).max(w / 4 + 1));
    write(&args.out.join(SIGNATURE_SVG), svg, rec)?;
    log::info!(
        "average SAM {:.3} deg, PSNR {:.2} dB, SSIM {:.4}",
        report.average.sam,
        report.average.psnr,
        report.average.ssim
    );
    Ok(())
}
