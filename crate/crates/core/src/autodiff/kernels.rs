//! Numeric kernels shared by the forward and backward passes: GEMM,
//! im2col convolution and separable bilinear resampling.

use crate::tensor::Tensor;

/// `c = a · b + beta · c` for row-major operands, optionally transposed.
///
/// `a` is `m×k` (stored `k×m` when `ta`), `b` is `k×n` (stored `n×k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds are asserted above and strides describe dense row-major
    // storage of exactly those extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const SAME3: ConvSpec = ConvSpec {
        stride: 1,
        pad: 1,
        groups: 1,
    };
    pub const POINTWISE: ConvSpec = ConvSpec {
        stride: 1,
        pad: 0,
        groups: 1,
    };

    pub fn depthwise3(channels: usize) -> Self {
        ConvSpec {
            stride: 1,
            pad: 1,
            groups: channels,
        }
    }

    pub fn out_size(&self, len: usize, kernel: usize) -> usize {
        (len + 2 * self.pad - kernel) / self.stride + 1
    }
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cg: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    groups: usize,
}

fn geometry(x: &Tensor, w: &Tensor, spec: ConvSpec) -> ConvGeom {
    let (cin, h, wd) = x.dims3();
    let ws = w.shape();
    assert_eq!(ws.len(), 4, "conv weight must be rank 4");
    let (cout, cg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    assert!(spec.groups >= 1 && cin % spec.groups == 0 && cout % spec.groups == 0);
    assert_eq!(cg, cin / spec.groups, "weight in-channels do not match input");
    assert!(h + 2 * spec.pad >= kh && wd + 2 * spec.pad >= kw, "kernel larger than padded input");
    ConvGeom {
        cin,
        h,
        w: wd,
        cout,
        cg,
        kh,
        kw,
        oh: spec.out_size(h, kh),
        ow: spec.out_size(wd, kw),
        groups: spec.groups,
    }
}

fn im2col(x: &[f64], g: &ConvGeom, spec: ConvSpec, col: &mut [f64]) {
    let npix = g.oh * g.ow;
    for c in 0..g.cg {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &mut col[((c * g.kh + ki) * g.kw + kj) * npix..][..npix];
                for oy in 0..g.oh {
                    let iy = (oy * spec.stride + ki) as isize - spec.pad as isize;
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kj) as isize - spec.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeom, spec: ConvSpec, gx: &mut [f64]) {
    let npix = g.oh * g.ow;
    for c in 0..g.cg {
        let plane = &mut gx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &col[((c * g.kh + ki) * g.kw + kj) * npix..][..npix];
                for oy in 0..g.oh {
                    let iy = (oy * spec.stride + ki) as isize - spec.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * spec.stride + kj) as isize - spec.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += row[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Grouped 2D cross-correlation, `x: [Cin][H][W]`, `w: [Cout][Cin/groups][kh][kw]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: ConvSpec) -> Tensor {
    let g = geometry(x, w, spec);
    let npix = g.oh * g.ow;
    let kdim = g.cg * g.kh * g.kw;
    let cout_g = g.cout / g.groups;
    let mut out = vec![0.0; g.cout * npix];
    let mut col = vec![0.0; kdim * npix];
    for grp in 0..g.groups {
        let xg = &x.data()[grp * g.cg * g.h * g.w..(grp + 1) * g.cg * g.h * g.w];
        im2col(xg, &g, spec, &mut col);
        let wg = &w.data()[grp * cout_g * kdim..(grp + 1) * cout_g * kdim];
        gemm(
            cout_g,
            kdim,
            npix,
            wg,
            false,
            &col,
            false,
            &mut out[grp * cout_g * npix..(grp + 1) * cout_g * npix],
            0.0,
        );
    }
    if let Some(b) = b {
        assert_eq!(b.len(), g.cout);
        for (o, bv) in b.data().iter().enumerate() {
            for v in &mut out[o * npix..(o + 1) * npix] {
                *v += bv;
            }
        }
    }
    Tensor::from_parts(vec![g.cout, g.oh, g.ow], out)
}

pub struct ConvGrads {
    pub x: Option<Tensor>,
    pub w: Option<Tensor>,
    pub b: Option<Tensor>,
}

pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    spec: ConvSpec,
    need: (bool, bool, bool),
) -> ConvGrads {
    let g = geometry(x, w, spec);
    let npix = g.oh * g.ow;
    let kdim = g.cg * g.kh * g.kw;
    let cout_g = g.cout / g.groups;
    let mut gx = need.0.then(|| vec![0.0; g.cin * g.h * g.w]);
    let mut gw = need.1.then(|| vec![0.0; w.len()]);
    let mut col = vec![0.0; kdim * npix];
    if need.0 || need.1 {
        for grp in 0..g.groups {
            let go = &gout.data()[grp * cout_g * npix..(grp + 1) * cout_g * npix];
            if let Some(gw) = gw.as_mut() {
                let xg = &x.data()[grp * g.cg * g.h * g.w..(grp + 1) * g.cg * g.h * g.w];
                im2col(xg, &g, spec, &mut col);
                gemm(
                    cout_g,
                    npix,
                    kdim,
                    go,
                    false,
                    &col,
                    true,
                    &mut gw[grp * cout_g * kdim..(grp + 1) * cout_g * kdim],
                    0.0,
                );
            }
            if let Some(gx) = gx.as_mut() {
                let wg = &w.data()[grp * cout_g * kdim..(grp + 1) * cout_g * kdim];
                gemm(kdim, cout_g, npix, wg, true, go, false, &mut col, 0.0);
                col2im(
                    &col,
                    &g,
                    spec,
                    &mut gx[grp * g.cg * g.h * g.w..(grp + 1) * g.cg * g.h * g.w],
                );
            }
        }
    }
    let gb = need.2.then(|| {
        let data = (0..g.cout)
            .map(|o| gout.data()[o * npix..(o + 1) * npix].iter().sum())
            .collect();
        Tensor::from_parts(vec![g.cout], data)
    });
    ConvGrads {
        x: gx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
        w: gw.map(|d| Tensor::from_parts(w.shape().to_vec(), d)),
        b: gb,
    }
}

/// Which 3×3 taps (padding 1) land inside an `h×w` image, per output pixel:
/// `[9][h*w]` of 0/1.
pub fn tap_validity(h: usize, w: usize) -> Vec<f64> {
    let mut m = vec![0.0; 9 * h * w];
    for ki in 0..3 {
        for kj in 0..3 {
            let row = &mut m[(ki * 3 + kj) * h * w..][..h * w];
            for y in 0..h {
                let iy = y as isize + ki as isize - 1;
                for x in 0..w {
                    let ix = x as isize + kj as isize - 1;
                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                        row[y * w + x] = 1.0;
                    }
                }
            }
        }
    }
    m
}

/// One output index of a 1D linear resampler: two source taps and weights.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

/// Half-pixel-centred (non corner-aligned) bilinear taps for upscaling by `factor`.
fn bilinear_taps(len: usize, factor: usize) -> Vec<Tap> {
    (0..len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let w1 = src - i0 as f64;
            Tap {
                i0,
                i1,
                w0: 1.0 - w1,
                w1,
            }
        })
        .collect()
}

pub fn upsample_bilinear(x: &Tensor, factor: usize) -> Tensor {
    let (c, h, w) = x.dims3();
    let (ty, tx) = (bilinear_taps(h, factor), bilinear_taps(w, factor));
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = x.channel(ch);
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, a) in ty.iter().enumerate() {
            let r0 = &src[a.i0 * w..(a.i0 + 1) * w];
            let r1 = &src[a.i1 * w..(a.i1 + 1) * w];
            for (ox, b) in tx.iter().enumerate() {
                dst[oy * ow + ox] = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1])
                    + a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
            }
        }
    }
    Tensor::from_parts(vec![c, oh, ow], out)
}

pub fn upsample_bilinear_backward(g: &Tensor, factor: usize, in_shape: &[usize]) -> Tensor {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (ty, tx) = (bilinear_taps(h, factor), bilinear_taps(w, factor));
    let ow = w * factor;
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        let src = g.channel(ch);
        let dst = &mut gx[ch * h * w..(ch + 1) * h * w];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v = src[oy * ow + ox];
                dst[a.i0 * w + b.i0] += a.w0 * b.w0 * v;
                dst[a.i0 * w + b.i1] += a.w0 * b.w1 * v;
                dst[a.i1 * w + b.i0] += a.w1 * b.w0 * v;
                dst[a.i1 * w + b.i1] += a.w1 * b.w1 * v;
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), gx)
}
