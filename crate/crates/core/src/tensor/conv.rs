//! Direct 3D cross-correlation kernels.
//!
//! Forward accumulation per output voxel runs bias first, then input
//! channels, then kernel taps in (kd, kh, kw) order, skipping taps that land
//! in the zero padding. That is exactly the order of the textbook loop nest,
//! so results agree with it bit for bit.

use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub f: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Output extent along one axis, or `None` if the kernel does not fit.
    pub fn out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = input + 2 * pad;
        if kernel == 0 || stride == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }

    /// Range of output positions `o` whose input position
    /// `o * stride + k - pad` lies inside `[0, input)`.
    #[inline]
    fn valid(&self, axis: usize, k: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let n_in = self.input[axis];
        let n_out = self.output[axis];
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        // Largest o with o*s + k - p <= n_in - 1.
        let hi = if n_in + p < k + 1 {
            0
        } else {
            ((n_in + p - k - 1) / s + 1).min(n_out)
        };
        (lo, hi.max(lo))
    }

    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.output.iter().product()
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }
}

/// Iterates all valid (tap, output row) pairs for one kernel tap, calling
/// `row(out_row_start, in_row_start, len)`; positions inside a row advance by
/// 1 in the output and by `stride` in the input.
#[inline]
fn for_each_row(g: &ConvGeom, kd: usize, kh: usize, kw: usize, mut row: impl FnMut(usize, usize, usize)) {
    let (od0, od1) = g.valid(0, kd);
    let (oh0, oh1) = g.valid(1, kh);
    let (ow0, ow1) = g.valid(2, kw);
    if ow1 <= ow0 {
        return;
    }
    let [_, ih_n, iw_n] = g.input;
    let [_, oh_n, ow_n] = g.output;
    let len = ow1 - ow0;
    for od in od0..od1 {
        let id = od * g.stride + kd - g.pad;
        for oh in oh0..oh1 {
            let ih = oh * g.stride + kh - g.pad;
            let iw = ow0 * g.stride + kw - g.pad;
            row((od * oh_n + oh) * ow_n + ow0, (id * ih_n + ih) * iw_n + iw, len);
        }
    }
}

pub(crate) fn forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>, out: &mut [T]) {
    let (iv, ov, taps) = (g.in_vol(), g.out_vol(), g.taps());
    let [_, kh_n, kw_n] = g.kernel;
    let s = g.stride;
    for n in 0..g.n {
        for f in 0..g.f {
            let o = &mut out[(n * g.f + f) * ov..(n * g.f + f + 1) * ov];
            let init = b.map_or(T::zero(), |b| b[f]);
            o.iter_mut().for_each(|v| *v = init);
            for c in 0..g.c {
                let xin = &x[(n * g.c + c) * iv..(n * g.c + c + 1) * iv];
                let wk = &w[(f * g.c + c) * taps..(f * g.c + c + 1) * taps];
                for kd in 0..g.kernel[0] {
                    for kh in 0..kh_n {
                        for kw in 0..kw_n {
                            let wv = wk[(kd * kh_n + kh) * kw_n + kw];
                            for_each_row(g, kd, kh, kw, |orow, irow, len| {
                                let dst = &mut o[orow..orow + len];
                                if s == 1 {
                                    for (d, &xv) in dst.iter_mut().zip(&xin[irow..irow + len]) {
                                        *d += wv * xv;
                                    }
                                } else {
                                    for (d, &xv) in dst.iter_mut().zip(xin[irow..].iter().step_by(s)) {
                                        *d += wv * xv;
                                    }
                                }
                            });
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates the input gradient into `dx`.
pub(crate) fn backward_input<T: Scalar>(g: &ConvGeom, dout: &[T], w: &[T], dx: &mut [T]) {
    let (iv, ov, taps) = (g.in_vol(), g.out_vol(), g.taps());
    let [_, kh_n, kw_n] = g.kernel;
    let s = g.stride;
    for n in 0..g.n {
        for c in 0..g.c {
            let dxc = &mut dx[(n * g.c + c) * iv..(n * g.c + c + 1) * iv];
            for f in 0..g.f {
                let d = &dout[(n * g.f + f) * ov..(n * g.f + f + 1) * ov];
                let wk = &w[(f * g.c + c) * taps..(f * g.c + c + 1) * taps];
                for kd in 0..g.kernel[0] {
                    for kh in 0..kh_n {
                        for kw in 0..kw_n {
                            let wv = wk[(kd * kh_n + kh) * kw_n + kw];
                            for_each_row(g, kd, kh, kw, |orow, irow, len| {
                                let src = &d[orow..orow + len];
                                if s == 1 {
                                    for (xv, &dv) in dxc[irow..irow + len].iter_mut().zip(src) {
                                        *xv += wv * dv;
                                    }
                                } else {
                                    for (xv, &dv) in dxc[irow..].iter_mut().step_by(s).zip(src) {
                                        *xv += wv * dv;
                                    }
                                }
                            });
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Accumulates weight (and bias) gradients into `dw` / `db`.
pub(crate) fn backward_params<T: Scalar>(
    g: &ConvGeom,
    dout: &[T],
    x: &[T],
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (iv, ov, taps) = (g.in_vol(), g.out_vol(), g.taps());
    let [_, kh_n, kw_n] = g.kernel;
    let s = g.stride;
    if let Some(db) = db {
        for n in 0..g.n {
            for f in 0..g.f {
                let d = &dout[(n * g.f + f) * ov..(n * g.f + f + 1) * ov];
                db[f] += d.iter().copied().sum::<T>();
            }
        }
    }
    let Some(dw) = dw else { return };
    for n in 0..g.n {
        for f in 0..g.f {
            let d = &dout[(n * g.f + f) * ov..(n * g.f + f + 1) * ov];
            for c in 0..g.c {
                let xin = &x[(n * g.c + c) * iv..(n * g.c + c + 1) * iv];
                let dwk = &mut dw[(f * g.c + c) * taps..(f * g.c + c + 1) * taps];
                for kd in 0..g.kernel[0] {
                    for kh in 0..kh_n {
                        for kw in 0..kw_n {
                            let mut acc = T::zero();
                            for_each_row(g, kd, kh, kw, |orow, irow, len| {
                                if s == 1 {
                                    acc += dot(&d[orow..orow + len], &xin[irow..irow + len]);
                                } else {
                                    for (&dv, &xv) in d[orow..orow + len].iter().zip(xin[irow..].iter().step_by(s)) {
                                        acc += dv * xv;
                                    }
                                }
                            });
                            dwk[(kd * kh_n + kh) * kw_n + kw] += acc;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_ranges() {
        let g = ConvGeom {
            n: 1,
            c: 1,
            f: 1,
            input: [5, 5, 5],
            kernel: [3, 3, 3],
            output: [5, 5, 5],
            stride: 1,
            pad: 1,
        };
        assert_eq!(g.valid(0, 0), (1, 5));
        assert_eq!(g.valid(0, 1), (0, 5));
        assert_eq!(g.valid(0, 2), (0, 4));
        let g2 = ConvGeom {
            input: [6, 6, 6],
            output: [3, 3, 3],
            stride: 2,
            ..g
        };
        // o*2 + k - 1 in [0, 6)
        assert_eq!(g2.valid(0, 0), (1, 3));
        assert_eq!(g2.valid(0, 1), (0, 3));
        assert_eq!(g2.valid(0, 2), (0, 3));
        assert_eq!(ConvGeom::out_len(6, 3, 2, 1), Some(3));
        assert_eq!(ConvGeom::out_len(1, 3, 1, 0), None);
    }
}
