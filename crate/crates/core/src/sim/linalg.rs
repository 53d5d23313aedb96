//! Row-major dense matrices with tiled, thread-count-independent kernels.
//!
//! Every output tile is produced by exactly one single-threaded `dgemm`
//! call over a fixed partition, so results are bitwise identical for any
//! rayon pool size.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Tile edge for blocked factorizations and parallel row partitions.
pub const BLOCK: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape mismatch");
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Leading `rows` rows as a new matrix.
    pub fn top_rows(&self, rows: usize) -> Mat {
        Mat::from_vec(rows, self.cols, self.data[..rows * self.cols].to_vec())
    }

    /// Leading `n × n` block.
    pub fn leading_block(&self, n: usize) -> Mat {
        let mut out = Mat::zeros(n, n);
        for r in 0..n {
            out.row_mut(r).copy_from_slice(&self.row(r)[..n]);
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn frobenius_sq(&self) -> f64 {
        pairwise_sum_by(&self.data, |v| v * v)
    }

    /// Copies the lower triangle onto the upper one.
    pub fn symmetrize_from_lower(&mut self) {
        let n = self.rows;
        assert_eq!(n, self.cols);
        for r in 0..n {
            for c in r + 1..n {
                self.data[r * n + c] = self.data[c * n + r];
            }
        }
    }
}

/// Pairwise (tree) summation; order fixed by the slice layout.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    pairwise_sum_by(xs, |v| v)
}

pub fn pairwise_sum_by<F: Fn(f64) -> f64 + Copy>(xs: &[f64], f: F) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().map(|&v| f(v)).sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum_by(&xs[..mid], f) + pairwise_sum_by(&xs[mid..], f)
}

/// Strided view used to pass operands to `dgemm`.
#[derive(Clone, Copy)]
pub struct View<'a> {
    pub data: &'a [f64],
    pub rs: isize,
    pub cs: isize,
}

impl<'a> View<'a> {
    /// The matrix as stored.
    pub fn n(m: &'a Mat) -> Self {
        Self { data: &m.data, rs: m.cols as isize, cs: 1 }
    }

    /// The transpose of the matrix as stored.
    pub fn t(m: &'a Mat) -> Self {
        Self { data: &m.data, rs: 1, cs: m.cols as isize }
    }

    /// Shifts the origin by `rows` rows of the logical (possibly transposed) view.
    fn offset_rows(self, rows: usize) -> Self {
        let off = rows as isize * self.rs;
        Self { data: &self.data[off as usize..], ..self }
    }
}

/// `c ← α a b + β c` for logical shapes a: m×k, b: k×n and c: m×n with
/// row stride `ldc`. Bounds of the views are checked by the caller.
fn dgemm_raw(m: usize, k: usize, n: usize, alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64], ldc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= (m - 1) * ldc + n);
    // SAFETY: the views cover every index touched; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// Serial `c ← a b + β c` on a caller-owned tile with row stride `ldc`.
pub fn gemm_strided(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64], ldc: usize) {
    dgemm_raw(m, k, n, 1.0, a, b, beta, c, ldc);
}

/// `c ← α a b + β c`, parallel over row blocks of c.
pub fn gemm(alpha: f64, a: View<'_>, b: View<'_>, k: usize, beta: f64, c: &mut Mat) {
    let n = c.cols;
    c.data.par_chunks_mut(BLOCK * n).enumerate().for_each(|(blk, chunk)| {
        let rows = chunk.len() / n;
        dgemm_raw(rows, k, n, alpha, a.offset_rows(blk * BLOCK), b, beta, chunk, n);
    });
}

/// Product `a b` of two stored matrices.
pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows);
    let mut c = Mat::zeros(a.rows, b.cols);
    gemm(1.0, View::n(a), View::n(b), a.cols, 0.0, &mut c);
    c
}

/// Product `a bᵀ`.
pub fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols);
    let mut c = Mat::zeros(a.rows, b.rows);
    gemm(1.0, View::n(a), View::t(b), a.cols, 0.0, &mut c);
    c
}

/// Product `aᵀ b`.
pub fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows);
    let mut c = Mat::zeros(a.cols, b.cols);
    gemm(1.0, View::t(a), View::n(b), a.rows, 0.0, &mut c);
    c
}

/// In-place lower Cholesky factor of the leading `n × n` block of a
/// symmetric matrix with row stride `a.cols`; only the lower triangle is
/// read. The strict upper triangle is zeroed on success.
pub fn cholesky_in_place(a: &mut Mat) -> Result<()> {
    let n = a.rows;
    assert_eq!(n, a.cols, "cholesky needs a square matrix");
    let ld = n;
    let mut k0 = 0;
    while k0 < n {
        let kb = BLOCK.min(n - k0);
        // Diagonal block, unblocked.
        for j in k0..k0 + kb {
            let mut d = a.data[j * ld + j];
            for l in k0..j {
                d -= a.data[j * ld + l] * a.data[j * ld + l];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { index: j, pivot: d });
            }
            let d = d.sqrt();
            a.data[j * ld + j] = d;
            for i in j + 1..k0 + kb {
                let mut s = a.data[i * ld + j];
                for l in k0..j {
                    s -= a.data[i * ld + l] * a.data[j * ld + l];
                }
                a.data[i * ld + j] = s / d;
            }
        }
        let rest = k0 + kb;
        if rest < n {
            let l11: Vec<f64> = (0..kb * kb).map(|e| a.data[(k0 + e / kb) * ld + k0 + e % kb]).collect();
            // Panel: L21 L11ᵀ = A21, row by row.
            let (_, below) = a.data.split_at_mut(rest * ld);
            below.par_chunks_mut(ld).for_each(|row| {
                let x = &mut row[k0..k0 + kb];
                for j in 0..kb {
                    let mut s = x[j];
                    for l in 0..j {
                        s -= x[l] * l11[j * kb + l];
                    }
                    x[j] = s / l11[j * kb + j];
                }
            });
            // Contiguous copy of the panel for the trailing update.
            let m = n - rest;
            let mut panel = vec![0.0; m * kb];
            for r in 0..m {
                panel[r * kb..(r + 1) * kb].copy_from_slice(&a.data[(rest + r) * ld + k0..(rest + r) * ld + k0 + kb]);
            }
            let (_, trailing) = a.data.split_at_mut(rest * ld);
            trailing.par_chunks_mut(BLOCK * ld).enumerate().for_each(|(blk, chunk)| {
                let r0 = blk * BLOCK;
                let rows = chunk.len() / ld;
                let cols = r0 + rows;
                let av = View { data: &panel[r0 * kb..], rs: kb as isize, cs: 1 };
                let bv = View { data: &panel, rs: 1, cs: kb as isize };
                dgemm_raw(rows, kb, cols, -1.0, av, bv, 1.0, &mut chunk[rest..], ld);
            });
        }
        k0 += kb;
    }
    for r in 0..n {
        for c in r + 1..n {
            a.data[r * ld + c] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L Y = B` in place for the leading `n` rows of `b`, with `l` a
/// lower factor whose leading `n × n` block is used.
pub fn forward_solve(l: &Mat, n: usize, b: &mut Mat) {
    assert!(n <= l.rows && n <= b.rows);
    let ld = l.cols;
    let w = b.cols;
    let mut k0 = 0;
    while k0 < n {
        let kb = BLOCK.min(n - k0);
        for i in k0..k0 + kb {
            let (done, cur) = b.data.split_at_mut(i * w);
            let row = &mut cur[..w];
            for j in k0..i {
                let lij = l.data[i * ld + j];
                if lij != 0.0 {
                    let src = &done[j * w..(j + 1) * w];
                    row.iter_mut().zip(src).for_each(|(r, s)| *r -= lij * s);
                }
            }
            let inv = 1.0 / l.data[i * ld + i];
            row.iter_mut().for_each(|r| *r *= inv);
        }
        let rest = k0 + kb;
        if rest < n {
            let (solved, below) = b.data.split_at_mut(rest * w);
            let yk = &solved[k0 * w..rest * w];
            below[..(n - rest) * w].par_chunks_mut(BLOCK * w).enumerate().for_each(|(blk, chunk)| {
                let rows = chunk.len() / w;
                let r0 = rest + blk * BLOCK;
                let av = View { data: &l.data[r0 * ld + k0..], rs: ld as isize, cs: 1 };
                let bv = View { data: yk, rs: w as isize, cs: 1 };
                dgemm_raw(rows, kb, w, -1.0, av, bv, 1.0, chunk, w);
            });
        }
        k0 = rest;
    }
}

/// Solves `Lᵀ X = B` in place for the leading `n` rows of `b`.
pub fn backward_solve(l: &Mat, n: usize, b: &mut Mat) {
    assert!(n <= l.rows && n <= b.rows);
    let ld = l.cols;
    let w = b.cols;
    let nblocks = n.div_ceil(BLOCK);
    for blk in (0..nblocks).rev() {
        let k0 = blk * BLOCK;
        let k1 = (k0 + BLOCK).min(n);
        for i in (k0..k1).rev() {
            let (head, tail) = b.data.split_at_mut((i + 1) * w);
            let row = &mut head[i * w..];
            for j in i + 1..k1 {
                let lji = l.data[j * ld + i];
                if lji != 0.0 {
                    let src = &tail[(j - i - 1) * w..(j - i) * w];
                    row.iter_mut().zip(src).for_each(|(r, s)| *r -= lji * s);
                }
            }
            let inv = 1.0 / l.data[i * ld + i];
            row.iter_mut().for_each(|r| *r *= inv);
        }
        if k0 > 0 {
            let (above, solved) = b.data.split_at_mut(k0 * w);
            let xk = &solved[..(k1 - k0) * w];
            above.par_chunks_mut(BLOCK * w).enumerate().for_each(|(cb, chunk)| {
                let rows = chunk.len() / w;
                let r0 = cb * BLOCK;
                // (Lᵀ)[r, j] = L[j, r] for j in the solved block.
                let av = View { data: &l.data[k0 * ld + r0..], rs: 1, cs: ld as isize };
                let bv = View { data: xk, rs: w as isize, cs: 1 };
                dgemm_raw(rows, k1 - k0, w, -1.0, av, bv, 1.0, chunk, w);
            });
        }
    }
}

/// Bytes needed for `count` f64 values.
pub fn bytes_for(count: usize) -> u64 {
    (count as u64) * 8
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random::<f64>() - 0.5).collect())
    }

    fn naive(a: &Mat, b: &Mat) -> Mat {
        let mut c = Mat::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let s: f64 = (0..a.cols).map(|k| a.get(i, k) * b.get(k, j)).sum();
                c.set(i, j, s);
            }
        }
        c
    }

    fn max_diff(a: &Mat, b: &Mat) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn gemm_variants_match_naive() {
        let a = random(300, 70, 1);
        let b = random(70, 150, 2);
        let c = naive(&a, &b);
        assert!(max_diff(&matmul(&a, &b), &c) < 1e-12);
        assert!(max_diff(&matmul_nt(&a, &b.transpose()), &c) < 1e-12);
        assert!(max_diff(&matmul_tn(&a.transpose(), &b), &c) < 1e-12);
    }

    #[test]
    fn cholesky_and_solves() {
        let n = 333;
        let g = random(n, n + 20, 3);
        let mut s = matmul_nt(&g, &g);
        for i in 0..n {
            s.data[i * n + i] += 0.5;
        }
        let mut l = s.clone();
        cholesky_in_place(&mut l).unwrap();
        assert!(max_diff(&matmul_nt(&l, &l), &s) < 1e-10);
        let rhs = random(n, 7, 4);
        let mut x = rhs.clone();
        forward_solve(&l, n, &mut x);
        backward_solve(&l, n, &mut x);
        assert!(max_diff(&matmul(&s, &x), &rhs) < 1e-9);
        // Leading blocks of the factor factor the leading blocks of s.
        let m = 200;
        let mut y = rhs.top_rows(m);
        forward_solve(&l, m, &mut y);
        backward_solve(&l, m, &mut y);
        assert!(max_diff(&matmul(&s.leading_block(m), &y), &rhs.top_rows(m)) < 1e-9);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut m = Mat::identity(4);
        m.set(2, 2, -1.0);
        assert!(matches!(cholesky_in_place(&mut m), Err(Error::NotPositiveDefinite { index: 2, .. })));
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }
}
