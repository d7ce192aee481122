//! Orthonormal real 2D FFT pair on `[C][H][W]` feature maps.
//!
//! The half spectrum (`W/2 + 1` columns) is stored as real channels followed
//! by imaginary channels, `[2C][H][W/2+1]`. Both directions carry the
//! `1/sqrt(HW)` factor so that `irfft2(rfft2(x)) == x`.

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::tensor::Tensor;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// Unnormalized in-place 2D transform of an `h×w` row-major buffer.
fn fft2(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let (row, colf) = if inverse {
            (p.plan_fft_inverse(w), p.plan_fft_inverse(h))
        } else {
            (p.plan_fft_forward(w), p.plan_fft_forward(h))
        };
        row.process(buf);
        let mut col = vec![Complex64::new(0.0, 0.0); h];
        for j in 0..w {
            for i in 0..h {
                col[i] = buf[i * w + j];
            }
            colf.process(&mut col);
            for i in 0..h {
                buf[i * w + j] = col[i];
            }
        }
    });
}

/// Weight of half-spectrum column `k` in the Hermitian reconstruction.
fn column_weight(k: usize, w: usize) -> f64 {
    if k == 0 || (w.is_multiple_of(2) && k == w / 2) {
        1.0
    } else {
        2.0
    }
}

fn take_half(full: &[Complex64], h: usize, w: usize, scale: impl Fn(usize) -> f64) -> Vec<(f64, f64)> {
    let wh = half_width(w);
    let mut out = Vec::with_capacity(h * wh);
    for i in 0..h {
        for k in 0..wh {
            let v = full[i * w + k] * scale(k);
            out.push((v.re, v.im));
        }
    }
    out
}

fn stack_half(parts: Vec<Vec<(f64, f64)>>, h: usize, wh: usize) -> Tensor {
    let c = parts.len();
    let mut data = vec![0.0; 2 * c * h * wh];
    for (ch, p) in parts.into_iter().enumerate() {
        for (idx, (re, im)) in p.into_iter().enumerate() {
            data[ch * h * wh + idx] = re;
            data[(c + ch) * h * wh + idx] = im;
        }
    }
    Tensor::from_parts(vec![2 * c, h, wh], data)
}

fn expand_half(z: &Tensor, ch: usize, w: usize, scale: impl Fn(usize) -> f64) -> Vec<Complex64> {
    let (c2, h, wh) = z.dims3();
    let c = c2 / 2;
    let re = z.channel(ch);
    let im = z.channel(c + ch);
    let mut full = vec![Complex64::new(0.0, 0.0); h * w];
    for i in 0..h {
        for k in 0..wh {
            full[i * w + k] = Complex64::new(re[i * wh + k], im[i * wh + k]) * scale(k);
        }
    }
    full
}

pub fn rfft2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.dims3();
    let s = 1.0 / ((h * w) as f64).sqrt();
    let parts = (0..c)
        .map(|ch| {
            let mut buf: Vec<Complex64> = x.channel(ch).iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft2(&mut buf, h, w, false);
            take_half(&buf, h, w, |_| s)
        })
        .collect();
    stack_half(parts, h, half_width(w))
}

/// Adjoint of [`rfft2`] as a real-linear map.
pub fn rfft2_adjoint(g: &Tensor, w: usize) -> Tensor {
    let (c2, h, _) = g.dims3();
    let c = c2 / 2;
    let s = 1.0 / ((h * w) as f64).sqrt();
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let mut full = expand_half(g, ch, w, |_| s);
        fft2(&mut full, h, w, true);
        data.extend(full.iter().map(|v| v.re));
    }
    Tensor::from_parts(vec![c, h, w], data)
}

pub fn irfft2(z: &Tensor, w: usize) -> Tensor {
    let (c2, h, wh) = z.dims3();
    assert_eq!(wh, half_width(w), "half-spectrum width does not match output width {w}");
    let c = c2 / 2;
    let s = 1.0 / ((h * w) as f64).sqrt();
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let mut full = expand_half(z, ch, w, |k| s * column_weight(k, w));
        fft2(&mut full, h, w, true);
        data.extend(full.iter().map(|v| v.re));
    }
    Tensor::from_parts(vec![c, h, w], data)
}

/// Adjoint of [`irfft2`] as a real-linear map.
pub fn irfft2_adjoint(g: &Tensor) -> Tensor {
    let (c, h, w) = g.dims3();
    let s = 1.0 / ((h * w) as f64).sqrt();
    let parts = (0..c)
        .map(|ch| {
            let mut buf: Vec<Complex64> = g.channel(ch).iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft2(&mut buf, h, w, false);
            take_half(&buf, h, w, |k| s * column_weight(k, w))
        })
        .collect();
    stack_half(parts, h, half_width(w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize], k: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| ((i as f64) * k + 0.3).sin()).collect()).unwrap()
    }

    /// Direct O(N^2) DFT of one channel's half spectrum.
    fn naive_half(x: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
        let s = 1.0 / ((h * w) as f64).sqrt();
        let mut out = vec![];
        for k1 in 0..h {
            for k2 in 0..half_width(w) {
                let (mut re, mut im) = (0.0, 0.0);
                for n1 in 0..h {
                    for n2 in 0..w {
                        let th = 2.0 * std::f64::consts::PI
                            * ((k1 * n1) as f64 / h as f64 + (k2 * n2) as f64 / w as f64);
                        re += x[n1 * w + n2] * th.cos();
                        im -= x[n1 * w + n2] * th.sin();
                    }
                }
                out.push((re * s, im * s));
            }
        }
        out
    }

    #[test]
    fn matches_direct_dft() {
        for (h, w) in [(4, 6), (5, 5), (8, 8)] {
            let x = ramp(&[2, h, w], 0.77);
            let z = rfft2(&x);
            let wh = half_width(w);
            for ch in 0..2 {
                let want = naive_half(x.channel(ch), h, w);
                for (idx, (re, im)) in want.iter().enumerate() {
                    assert!((z.channel(ch)[idx] - re).abs() < 1e-12);
                    assert!((z.channel(2 + ch)[idx] - im).abs() < 1e-12);
                }
            }
            assert_eq!(z.shape(), &[4, h, wh]);
        }
    }

    #[test]
    fn roundtrip_and_adjoints() {
        for (h, w) in [(4, 6), (5, 5), (8, 8), (3, 7)] {
            let x = ramp(&[3, h, w], 0.41);
            let z = rfft2(&x);
            let back = irfft2(&z, w);
            for (a, b) in x.data().iter().zip(back.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            let gz = ramp(z.shape(), 0.23);
            assert!((z.dot(&gz) - x.dot(&rfft2_adjoint(&gz, w))).abs() < 1e-10);
            let zz = ramp(z.shape(), 0.61);
            let y = irfft2(&zz, w);
            let gy = ramp(y.shape(), 0.19);
            assert!((y.dot(&gy) - zz.dot(&irfft2_adjoint(&gy))).abs() < 1e-10);
        }
    }
}
