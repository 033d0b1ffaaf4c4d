//! Dense loops behind the graph ops. All reductions run in a fixed order so
//! results are bit-reproducible.

use super::tensor::Real;

/// `c += op(a) · op(b)` where `op(a)` is `[m, k]` and `op(b)` is `[k, n]`.
///
/// `ta` means `a` is stored as `[k, m]`, `tb` means `b` is stored as `[n, k]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let bt;
    let b = if tb {
        bt = transpose(b, n, k);
        &bt[..]
    } else {
        b
    };
    if ta {
        for p in 0..k {
            let arow = &a[p * m..(p + 1) * m];
            let brow = &b[p * n..(p + 1) * n];
            for (i, &av) in arow.iter().enumerate() {
                axpy(av, brow, &mut c[i * n..(i + 1) * n]);
            }
        }
    } else {
        for i in 0..m {
            let crow = &mut c[i * n..(i + 1) * n];
            for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
                axpy(av, &b[p * n..(p + 1) * n], crow);
            }
        }
    }
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Transposes a row-major `[rows, cols]` buffer.
pub fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    out
}

/// Geometry of one grouped 1-D convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub t_in: usize,
    pub t_out: usize,
}

impl ConvGeom {
    pub fn group_in(&self) -> usize {
        self.c_in / self.groups
    }

    pub fn group_out(&self) -> usize {
        self.c_out / self.groups
    }

    /// Rows of one group's column matrix.
    pub fn col_rows(&self) -> usize {
        self.group_in() * self.kernel
    }
}

/// Unfolds `x: [c_in, t_in]` into per-group column matrices laid out back to back,
/// each `[group_in * kernel, t_out]`.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let rows = g.c_in * g.kernel;
    let mut cols = vec![T::zero(); rows * g.t_out];
    for c in 0..g.c_in {
        let xrow = &x[c * g.t_in..(c + 1) * g.t_in];
        for k in 0..g.kernel {
            let dst = &mut cols[(c * g.kernel + k) * g.t_out..(c * g.kernel + k + 1) * g.t_out];
            for (t, d) in dst.iter_mut().enumerate() {
                let src = (t * g.stride + k) as isize - g.padding as isize;
                if src >= 0 && (src as usize) < g.t_in {
                    *d = xrow[src as usize];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto `dx`.
pub fn col2im<T: Real>(dcols: &[T], g: &ConvGeom, dx: &mut [T]) {
    for c in 0..g.c_in {
        let dxrow = &mut dx[c * g.t_in..(c + 1) * g.t_in];
        for k in 0..g.kernel {
            let src = &dcols[(c * g.kernel + k) * g.t_out..(c * g.kernel + k + 1) * g.t_out];
            for (t, &v) in src.iter().enumerate() {
                let pos = (t * g.stride + k) as isize - g.padding as isize;
                if pos >= 0 && (pos as usize) < g.t_in {
                    dxrow[pos as usize] += v;
                }
            }
        }
    }
}

/// Numerically stable `log Σ exp(x)`.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

pub fn log_add<T: Real>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}
