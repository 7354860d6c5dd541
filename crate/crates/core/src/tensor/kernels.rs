//! Raw convolution kernels over flat NCHW buffers.

use super::Real;

/// Spatial output extent of a convolution.
pub fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1, stride 1, no padding: the column matrix is the input itself.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output positions `lo..hi` along one axis whose input index
/// `o·stride + k - pad` falls inside `0..len`.
fn valid(k: usize, stride: usize, pad: usize, len: usize, out: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if len + pad > k { ((len - 1 + pad - k) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Unrolls one `C×H×W` sample into a `(C·kh·kw) × (oh·ow)` matrix whose
/// rows start `ld` elements apart (`ld >= oh·ow`; a batch can share one
/// wide matrix).
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T], ld: usize) {
    let mut row = 0;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (ylo, yhi) = valid(ky, g.stride, g.pad, g.h, g.oh);
            for kx in 0..g.kw {
                let (xlo, xhi) = valid(kx, g.stride, g.pad, g.w, g.ow);
                let dst = &mut col[row * ld..row * ld + g.oh * g.ow];
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if oy < ylo || oy >= yhi {
                        line.fill(T::zero());
                        continue;
                    }
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    line[..xlo].fill(T::zero());
                    line[xhi..].fill(T::zero());
                    let x0 = xlo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        line[xlo..xhi].copy_from_slice(&src[x0..x0 + xhi - xlo]);
                    } else {
                        for (i, out) in line[xlo..xhi].iter_mut().enumerate() {
                            *out = src[x0 + i * g.stride];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the sample.
pub fn col2im<T: Real>(col: &[T], g: &ConvGeom, dx: &mut [T], ld: usize) {
    let mut row = 0;
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (ylo, yhi) = valid(ky, g.stride, g.pad, g.h, g.oh);
            for kx in 0..g.kw {
                let (xlo, xhi) = valid(kx, g.stride, g.pad, g.w, g.ow);
                let src = &col[row * ld..row * ld + g.oh * g.ow];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    let x0 = iy * g.w + xlo * g.stride + kx - g.pad;
                    for (i, &v) in line[xlo..xhi].iter().enumerate() {
                        plane[x0 + i * g.stride] += v;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Direct nested-loop convolution. Slow; kept as the reference the
/// im2col path is tested against.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_reference<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w_in: usize,
    weight: &[T],
    o: usize,
    kh: usize,
    kw: usize,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
) -> alloc::vec::Vec<T> {
    let oh = conv_out(h, kh, stride, pad).expect("kernel fits");
    let ow = conv_out(w_in, kw, stride, pad).expect("kernel fits");
    let mut out = alloc::vec![T::zero(); n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(T::zero(), |bs| bs[oc]);
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w_in as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ic) * h + iy as usize) * w_in + ix as usize];
                                let wv = weight[((oc * c + ic) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}
