//! Separable linear operators on interleaved `H×W×C` buffers.
//!
//! Every spatial operator in the crate (Gaussian and box filters, area
//! downsampling, bilinear upsampling) is a pair of 1-D tap tables applied
//! along rows and columns. Keeping them as explicit tables gives the adjoint
//! for free, which is what the backward passes need.

/// A 1-D linear map from `in_len` samples to `taps.len()` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisOp {
    in_len: usize,
    taps: Vec<Vec<(usize, f64)>>,
}

/// Half-sample symmetric reflection (`dcba|abcd|dcba`), periodic with
/// period `2n`, so any offset maps into `0..n`.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

impl AxisOp {
    pub fn identity(n: usize) -> Self {
        Self {
            in_len: n,
            taps: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    /// Centered convolution with an odd-length kernel, reflect-padded.
    pub fn convolution(n: usize, kernel: &[f64]) -> Self {
        debug_assert!(kernel.len() % 2 == 1);
        let r = (kernel.len() / 2) as isize;
        let taps = (0..n as isize)
            .map(|x| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| (reflect_index(x + k as isize - r, n), w))
                    .collect()
            })
            .collect();
        Self { in_len: n, taps }
    }

    /// Box-filter area resampling from `n` to `g` samples. Each output
    /// averages the overlap of `[j·n/g, (j+1)·n/g)` with the input cells.
    pub fn area(n: usize, g: usize) -> Self {
        let scale = n as f64 / g as f64;
        let taps = (0..g)
            .map(|j| {
                let lo = j as f64 * scale;
                let hi = (j + 1) as f64 * scale;
                let first = lo.floor() as usize;
                let last = (hi.ceil() as usize).min(n);
                (first..last)
                    .filter_map(|i| {
                        let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                        (overlap > 0.0).then_some((i, overlap / scale))
                    })
                    .collect()
            })
            .collect();
        Self { in_len: n, taps }
    }

    /// Bilinear interpolation from `g` samples to `n`, half-pixel aligned,
    /// clamped at the borders.
    pub fn bilinear(g: usize, n: usize) -> Self {
        let scale = g as f64 / n as f64;
        let taps = (0..n)
            .map(|x| {
                let u = ((x as f64 + 0.5) * scale - 0.5).clamp(0.0, (g - 1) as f64);
                let i0 = u.floor() as usize;
                let frac = u - i0 as f64;
                let i1 = (i0 + 1).min(g - 1);
                if frac == 0.0 || i1 == i0 {
                    vec![(i0, 1.0)]
                } else {
                    vec![(i0, 1.0 - frac), (i1, frac)]
                }
            })
            .collect();
        Self { in_len: g, taps }
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self, out: usize) -> &[(usize, f64)] {
        &self.taps[out]
    }
}

/// `rows` acts on the height axis, `cols` on the width axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Separable {
    pub rows: AxisOp,
    pub cols: AxisOp,
}

impl Separable {
    pub fn new(rows: AxisOp, cols: AxisOp) -> Self {
        Self { rows, cols }
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.rows.out_len(), self.cols.out_len())
    }

    pub fn in_dims(&self) -> (usize, usize) {
        (self.rows.in_len(), self.cols.in_len())
    }

    /// Apply to an interleaved `in_h × in_w × ch` buffer.
    pub fn apply(&self, input: &[f64], ch: usize) -> Vec<f64> {
        let (ih, iw) = self.in_dims();
        let (oh, ow) = self.out_dims();
        debug_assert_eq!(input.len(), ih * iw * ch);
        // width pass: ih × ow × ch
        let mut tmp = vec![0.0; ih * ow * ch];
        for y in 0..ih {
            let src = &input[y * iw * ch..(y + 1) * iw * ch];
            let dst = &mut tmp[y * ow * ch..(y + 1) * ow * ch];
            for x in 0..ow {
                let out = &mut dst[x * ch..(x + 1) * ch];
                for &(i, w) in self.cols.taps(x) {
                    for c in 0..ch {
                        out[c] += w * src[i * ch + c];
                    }
                }
            }
        }
        // height pass
        let row = ow * ch;
        let mut out = vec![0.0; oh * row];
        for y in 0..oh {
            let dst = &mut out[y * row..(y + 1) * row];
            for &(i, w) in self.rows.taps(y) {
                let src = &tmp[i * row..(i + 1) * row];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        out
    }

    /// Transpose of [`apply`](Self::apply): maps an output-shaped buffer
    /// back onto the input grid.
    pub fn adjoint(&self, grad: &[f64], ch: usize) -> Vec<f64> {
        let (ih, iw) = self.in_dims();
        let (oh, ow) = self.out_dims();
        debug_assert_eq!(grad.len(), oh * ow * ch);
        let row = ow * ch;
        let mut tmp = vec![0.0; ih * row];
        for y in 0..oh {
            let src = &grad[y * row..(y + 1) * row];
            for &(i, w) in self.rows.taps(y) {
                let dst = &mut tmp[i * row..(i + 1) * row];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        let mut out = vec![0.0; ih * iw * ch];
        for y in 0..ih {
            let src = &tmp[y * row..(y + 1) * row];
            let dst = &mut out[y * iw * ch..(y + 1) * iw * ch];
            for x in 0..ow {
                for &(i, w) in self.cols.taps(x) {
                    for c in 0..ch {
                        dst[i * ch + c] += w * src[x * ch + c];
                    }
                }
            }
        }
        out
    }
}
