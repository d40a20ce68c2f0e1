//! Row-major GEMM with optional transposes and deterministic row-band
//! parallelism.

use super::Scalar;
use rayon::prelude::*;

/// FLOPs of one m-k-n matrix product (multiply + add per MAC).
pub fn matmul_flops(m: usize, k: usize, n: usize) -> u64 {
    2 * m as u64 * k as u64 * n as u64
}

struct SendPtr<T>(*mut T);
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

/// C = A·B with row-major storage. `trans_a`/`trans_b` reinterpret the
/// stored matrix as its transpose without copying: when `trans_a` is set,
/// `a` holds a (k x m) row-major buffer.
///
/// Large products are split into row bands of C, one serial kernel call per
/// band, so results are bitwise independent of the rayon schedule.
pub fn gemm<T: Scalar>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a {
        (1isize, m as isize)
    } else {
        (k as isize, 1isize)
    };
    let (rsb, csb) = if trans_b {
        (1isize, k as isize)
    } else {
        (n as isize, 1isize)
    };

    let threads = rayon::current_num_threads().max(1);
    let work = m as u64 * k as u64 * n as u64;
    if threads == 1 || work < (1 << 16) || m < 2 * threads {
        unsafe {
            T::gemm_raw(
                m, k, n, alpha,
                a.as_ptr(), rsa, csa,
                b.as_ptr(), rsb, csb,
                beta,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
        return;
    }

    let bands = threads;
    let band_rows = m.div_ceil(bands);
    let a_ptr = SendPtr(a.as_ptr() as *mut T);
    let b_ptr = SendPtr(b.as_ptr() as *mut T);
    let c_ptr = SendPtr(c.as_mut_ptr());
    (0..bands).into_par_iter().for_each(|band| {
        let r0 = band * band_rows;
        if r0 >= m {
            return;
        }
        let rows = band_rows.min(m - r0);
        unsafe {
            // Logical row r0 lives at offset r0*rsa in either layout.
            let a_band = if trans_a {
                a_ptr.0.add(r0)
            } else {
                a_ptr.0.add(r0 * k)
            };
            let c_band = c_ptr.0.add(r0 * n);
            T::gemm_raw(
                rows, k, n, alpha,
                a_band as *const T, rsa, csa,
                b_ptr.0 as *const T, rsb, csb,
                beta,
                c_band, n as isize, 1,
            );
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(
        ta: bool,
        tb: bool,
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        b: &[f64],
    ) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    let av = if ta { a[p * m + i] } else { a[i * k + p] };
                    let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                    acc += av * bv;
                }
                c[i * n + j] = acc;
            }
        }
        c
    }

    #[test]
    fn gemm_all_transpose_modes() {
        let m = 23;
        let k = 17;
        let n = 31;
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 29 % 13) as f64) * 0.5).collect();
        for &(ta, tb) in &[(false, false), (true, false), (false, true), (true, true)] {
            // For transposed layouts the buffers are the same bytes, just
            // interpreted with swapped strides, so regenerate in that layout.
            let a_buf: Vec<f64> = if ta {
                let mut t = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        t[p * m + i] = a[i * k + p];
                    }
                }
                t
            } else {
                a.clone()
            };
            let b_buf: Vec<f64> = if tb {
                let mut t = vec![0.0; k * n];
                for p in 0..k {
                    for j in 0..n {
                        t[j * k + p] = b[p * n + j];
                    }
                }
                t
            } else {
                b.clone()
            };
            let mut c = vec![0.0; m * n];
            gemm(ta, tb, m, k, n, 1.0, &a_buf, &b_buf, 0.0, &mut c);
            let want = naive(false, false, m, k, n, &a, &b);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-10, "mode ({ta},{tb})");
            }
        }
    }

    #[test]
    fn gemm_band_split_matches_single_call() {
        // Big enough to trigger the parallel path.
        let m = 64;
        let k = 40;
        let n = 48;
        let a: Vec<f32> = (0..m * k).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32 * 0.11).cos()).collect();
        let mut c1 = vec![0.0f32; m * n];
        gemm(false, false, m, k, n, 1.0, &a, &b, 0.0, &mut c1);
        let mut c2 = vec![0.0f32; m * n];
        unsafe {
            f32::gemm_raw(
                m, k, n, 1.0,
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), n as isize, 1,
                0.0,
                c2.as_mut_ptr(), n as isize, 1,
            );
        }
        assert_eq!(c1, c2);
    }
}
