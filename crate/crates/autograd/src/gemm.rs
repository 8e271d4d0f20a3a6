//! Matrix products on top of `matrixmultiply::sgemm`.
//!
//! Parallel execution splits the output by row blocks. Each output element
//! is still accumulated by the same kernel over the same `k` order, so the
//! result does not depend on the split.

use crate::par::{self, Exec};
use crate::Tensor;

/// Rows per parallel task; smaller products run on one thread.
const ROW_BLOCK: usize = 64;

#[derive(Clone, Copy)]
pub struct Operand<'a> {
    pub t: &'a Tensor,
    pub transposed: bool,
}

impl<'a> Operand<'a> {
    pub fn new(t: &'a Tensor, transposed: bool) -> Self {
        Operand { t, transposed }
    }

    /// Shape of op(t).
    pub fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.t.cols(), self.t.rows())
        } else {
            self.t.shape()
        }
    }

    /// (row stride, column stride) of op(t) in the underlying buffer.
    fn strides(&self) -> (isize, isize) {
        let c = self.t.cols() as isize;
        if self.transposed {
            (1, c)
        } else {
            (c, 1)
        }
    }
}

/// `out = op(a) · op(b)` (or `out += …` when `accumulate`), using the global
/// execution strategy.
pub fn gemm(a: Operand<'_>, b: Operand<'_>, out: &mut Tensor, accumulate: bool) {
    gemm_with(Exec::global(), a, b, out, accumulate);
}

pub fn gemm_with(exec: Exec, a: Operand<'_>, b: Operand<'_>, out: &mut Tensor, accumulate: bool) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "gemm inner dimension mismatch: {k} vs {k2}");
    assert_eq!(out.shape(), (m, n), "gemm output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    let a_data = a.t.data();
    let b_data = b.t.data();

    let run_block = |row0: usize, c_block: &mut [f32]| {
        let rows = c_block.len() / n;
        let a_off = row0 as isize * rsa;
        // SAFETY: strides and extents describe op(a) rows row0..row0+rows,
        // op(b) and the `rows × n` output block, all within their buffers.
        unsafe {
            matrixmultiply::sgemm(
                rows,
                k,
                n,
                1.0,
                a_data.as_ptr().offset(a_off),
                rsa,
                csa,
                b_data.as_ptr(),
                rsb,
                csb,
                beta,
                c_block.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    };

    if exec.is_parallel() && m > ROW_BLOCK {
        par::for_each_chunk_mut(exec, out.data_mut(), ROW_BLOCK * n, |ci, block| run_block(ci * ROW_BLOCK, block));
    } else {
        run_block(0, out.data_mut());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
        let a = if ta { a.transpose() } else { a.clone() };
        let b = if tb { b.transpose() } else { b.clone() };
        let mut out = Tensor::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0f64;
                for p in 0..a.cols() {
                    s += a.get(i, p) as f64 * b.get(p, j) as f64;
                }
                out.set(i, j, s as f32);
            }
        }
        out
    }

    #[test]
    fn transposed_variants_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::randn(150, 7, 1.0, &mut rng);
        let b = Tensor::randn(7, 9, 1.0, &mut rng);
        let at = a.transpose();
        let bt = b.transpose();
        let reference = naive(&a, false, &b, false);
        for (x, tx, y, ty) in [(&a, false, &b, false), (&at, true, &b, false), (&a, false, &bt, true), (&at, true, &bt, true)] {
            let mut out = Tensor::zeros(150, 9);
            gemm(Operand::new(x, tx), Operand::new(y, ty), &mut out, false);
            for (p, q) in out.data().iter().zip(reference.data()) {
                assert!((p - q).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn parallel_split_is_bitwise_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Tensor::randn(517, 93, 1.0, &mut rng);
        let b = Tensor::randn(93, 41, 1.0, &mut rng);
        let mut s = Tensor::zeros(517, 41);
        let mut p = Tensor::zeros(517, 41);
        gemm_with(Exec::Sequential, Operand::new(&a, false), Operand::new(&b, false), &mut s, false);
        gemm_with(Exec::Parallel, Operand::new(&a, false), Operand::new(&b, false), &mut p, false);
        assert_eq!(s, p);
        // transposed A with a row split exercises the column offset path
        let at = a.transpose();
        let mut pt = Tensor::zeros(517, 41);
        gemm_with(Exec::Parallel, Operand::new(&at, true), Operand::new(&b, false), &mut pt, false);
        for (x, y) in pt.data().iter().zip(s.data()) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn accumulate_adds() {
        let a = Tensor::from_vec(1, 1, vec![2.0]);
        let b = Tensor::from_vec(1, 1, vec![3.0]);
        let mut out = Tensor::from_vec(1, 1, vec![1.0]);
        gemm(Operand::new(&a, false), Operand::new(&b, false), &mut out, true);
        assert_eq!(out.data(), &[7.0]);
    }
}
