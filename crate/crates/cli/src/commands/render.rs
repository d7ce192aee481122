//! `render`: reconstruct a measurement and render it at query wavelengths.

use std::path::Path;

use phycosf_core::datasets::{load_plane, save_cube};
use phycosf_core::pipeline::{render, Checkpoint, MANIFEST_FILE};
use phycosf_core::Measurement;

use crate::exit::{CliError, CliResult, MISMATCH, QUERY_RANGE};
use crate::manifest::Recorder;
use crate::sensing::Sensing;

pub const CUBE_DIR: &str = "cube";

/// Parses `a,b,c` into wavelengths.
pub fn parse_list(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::new(QUERY_RANGE, format!("{s:?} is not a wavelength")))
        })
        .collect()
}

/// Parses `start:stop:step` into an inclusive, evenly spaced list.
pub fn parse_range(text: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::new(QUERY_RANGE, format!("range {text:?} must look like start:stop:step"));
    let parts: Vec<f64> = text
        .split(':')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<CliResult<_>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0 && step.is_finite() && start.is_finite() && stop >= start) {
        return Err(bad());
    }
    // Tolerate float noise so 450:650:10 includes 650.
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| start + k as f64 * step).collect())
}

pub struct RenderArgs<'a> {
    pub checkpoint: &'a Path,
    pub measurement: &'a Path,
    pub sensing: &'a Path,
    pub queries: Vec<f64>,
    pub out: &'a Path,
}

pub fn run(args: RenderArgs<'_>, rec: &mut Recorder) -> CliResult<()> {
    let q = &args.queries;
    if q.is_empty() {
        return Err(CliError::new(QUERY_RANGE, "at least one query wavelength is required"));
    }
    if q.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::new(QUERY_RANGE, format!("query wavelengths must be strictly increasing: {q:?}")));
    }
    rec.input(&args.checkpoint.join(MANIFEST_FILE));
    rec.input(args.measurement);
    rec.input(args.sensing);
    let ckpt = Checkpoint::load(args.checkpoint)?;
    let model = ckpt.model()?;
    let range = model.range();
    for &l in q {
        range.check(l)?;
    }
    let sensing = Sensing::load(args.sensing)?;
    let op = sensing.operator(args.sensing)?;
    let plane = load_plane(args.measurement)?;
    let expected = [op.height(), op.measurement_width()];
    if plane.shape() != expected {
        return Err(CliError::new(
            MISMATCH,
            format!(
                "measurement is {:?}, the sensing setup expects {:?} ({} bands)",
                plane.shape(),
                expected,
                op.bands()
            ),
        ));
    }
    let y = Measurement::new(plane, sensing.noise_sigma)?;
    let cube = render(&model, &op, &y, q)?;
    let dir = args.out.join(CUBE_DIR);
    save_cube(&cube, &dir)?;
    rec.output(&dir);
    log::info!("rendered {} bands to {}", q.len(), dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_is_inclusive() {
        let r = parse_range("450:650:10").unwrap();
        assert_eq!(r.len(), 21);
        assert_eq!((r[0], r[20]), (450.0, 650.0));
        assert_eq!(parse_range("500:500:5").unwrap(), vec![500.0]);
    }

    #[test]
    fn malformed_queries_are_query_errors() {
        for bad in ["450:650", "a:b:c", "650:450:10", "450:650:0"] {
            assert_eq!(parse_range(bad).unwrap_err().code, QUERY_RANGE, "{bad}");
        }
        assert_eq!(parse_list("500,x").unwrap_err().code, QUERY_RANGE);
        assert_eq!(parse_list("500, 510.5").unwrap(), vec![500.0, 510.5]);
    }
}
