//! Raw slice kernels shared by forward and backward passes.
//!
//! All matrices are row-major. Every kernel accumulates into its output
//! (`c += ...`) and fixes its summation order, so results do not depend on
//! how many rows are processed together.

use crate::tensor::Real;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[m×n] += aᵀ · b` with `a` stored `[k×m]` and `b` stored `[k×n]`.
pub fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let api = a[p * m + i];
            if api == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += api * bv;
            }
        }
    }
}

/// `c[m×n] += a · bᵀ` with `a` stored `[m×k]` and `b` stored `[n×k]`.
pub fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(b.len(), n * k);
    let bt = transpose(n, k, b);
    gemm_nn(m, k, n, a, &bt, c);
}

/// Transposes a `[rows×cols]` matrix.
pub fn transpose<T: Real>(rows: usize, cols: usize, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
    pub padding: usize,
    pub t_in: usize,
    pub t_out: usize,
}

impl ConvGeom {
    pub fn cg(&self) -> usize {
        self.c_in / self.groups
    }
    pub fn og(&self) -> usize {
        self.c_out / self.groups
    }
}

/// Output length of a 1-D convolution, or `None` when the input is too short.
pub fn conv_out_len(t_in: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = t_in + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Columns `[(cg·K) × T']` for one group of one batch element.
fn im2col<T: Real>(geom: &ConvGeom, x: &[T], group: usize, cols: &mut [T]) {
    let cg = geom.cg();
    let k = geom.kernel;
    let to = geom.t_out;
    for c in 0..cg {
        let x_row = &x[(group * cg + c) * geom.t_in..(group * cg + c + 1) * geom.t_in];
        for kk in 0..k {
            let dst = &mut cols[(c * k + kk) * to..(c * k + kk + 1) * to];
            for (t, d) in dst.iter_mut().enumerate() {
                let pos = (t * geom.stride + kk) as isize - geom.padding as isize;
                *d = if pos >= 0 && (pos as usize) < geom.t_in {
                    x_row[pos as usize]
                } else {
                    T::zero()
                };
            }
        }
    }
}

fn col2im<T: Real>(geom: &ConvGeom, cols: &[T], group: usize, dx: &mut [T]) {
    let cg = geom.cg();
    let k = geom.kernel;
    let to = geom.t_out;
    for c in 0..cg {
        let base = (group * cg + c) * geom.t_in;
        for kk in 0..k {
            let src = &cols[(c * k + kk) * to..(c * k + kk + 1) * to];
            for (t, &v) in src.iter().enumerate() {
                let pos = (t * geom.stride + kk) as isize - geom.padding as isize;
                if pos >= 0 && (pos as usize) < geom.t_in {
                    dx[base + pos as usize] += v;
                }
            }
        }
    }
}

/// Grouped cross-correlation for one batch element: `x[C_in×T] → out[C_out×T']`.
pub fn conv1d_forward<T: Real>(geom: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let cg = geom.cg();
    let og = geom.og();
    let ck = cg * geom.kernel;
    let to = geom.t_out;
    let mut cols = vec![T::zero(); ck * to];
    for g in 0..geom.groups {
        im2col(geom, x, g, &mut cols);
        let w_g = &w[g * og * ck..(g + 1) * og * ck];
        let out_g = &mut out[g * og * to..(g + 1) * og * to];
        if let Some(b) = bias {
            for o in 0..og {
                out_g[o * to..(o + 1) * to].fill(b[g * og + o]);
            }
        }
        gemm_nn(og, ck, to, w_g, &cols, out_g);
    }
}

/// Accumulates input, weight and bias gradients for one batch element.
pub fn conv1d_backward<T: Real>(
    geom: &ConvGeom,
    x: &[T],
    w: &[T],
    grad_out: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let cg = geom.cg();
    let og = geom.og();
    let ck = cg * geom.kernel;
    let to = geom.t_out;
    if let Some(db) = db {
        for (o, d) in db.iter_mut().enumerate() {
            *d += grad_out[o * to..(o + 1) * to].iter().copied().sum::<T>();
        }
    }
    let mut cols = vec![T::zero(); ck * to];
    let mut dx = dx;
    let mut dw = dw;
    for g in 0..geom.groups {
        let g_out = &grad_out[g * og * to..(g + 1) * og * to];
        if let Some(dw) = dw.as_deref_mut() {
            im2col(geom, x, g, &mut cols);
            gemm_nt(og, to, ck, g_out, &cols, &mut dw[g * og * ck..(g + 1) * og * ck]);
        }
        if let Some(dx) = dx.as_deref_mut() {
            cols.fill(T::zero());
            let w_g = &w[g * og * ck..(g + 1) * og * ck];
            gemm_tn(ck, og, to, w_g, g_out, &mut cols);
            col2im(geom, &cols, g, dx);
        }
    }
}
