//! Small dense helpers shared by the GP and solver code.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

pub(crate) const JITTER_START: f64 = 1e-10;
pub(crate) const JITTER_MAX: f64 = 1e-4;

/// Cholesky of `m`, retrying with `jitter·I` added (1e-10, ×10 up to 1e-4).
/// Returns the factor and the jitter that was needed (0 when none).
pub(crate) fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let mut jitter = JITTER_START;
    loop {
        let mut mj = m.clone();
        for i in 0..mj.nrows() {
            mj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(mj) {
            log::debug!("cholesky needed jitter {jitter:e}");
            return Ok((c, jitter));
        }
        if jitter >= JITTER_MAX {
            return Err(Error::Factorization { jitter });
        }
        jitter *= 10.0;
    }
}

/// Solve `L · X = B` in place for lower-triangular `l`.
///
/// Column-oriented substitution: every update is an axpy over the
/// contiguous tail of a column of `l` and of `b`. On x86-64 CPUs with AVX2
/// and FMA a build of the same loop using those instructions is picked at
/// run time.
pub(crate) fn forward_solve(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    debug_assert_eq!(b.nrows(), n);
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
        // SAFETY: the required target features were just detected.
        unsafe { forward_solve_avx2(l.as_slice(), n, b.as_mut_slice()) };
        return;
    }
    forward_solve_kernel(l.as_slice(), n, b.as_mut_slice());
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn forward_solve_avx2(l: &[f64], n: usize, b: &mut [f64]) {
    forward_solve_kernel(l, n, b)
}

/// Columns of `l` eliminated together.
const PANEL: usize = 8;
/// Rows of the trailing update processed per tile (the tile of `l` stays in
/// L1 while every right-hand side passes over it).
const TILE: usize = 256;

#[inline(always)]
fn forward_solve_kernel(l: &[f64], n: usize, b: &mut [f64]) {
    if n == 0 {
        return;
    }
    let m = b.len() / n;
    let mut x = vec![[0.0; PANEL]; m];
    let mut j = 0;
    while j < n {
        let jb = PANEL.min(n - j);
        for (bc, xc) in b.chunks_exact_mut(n).zip(x.iter_mut()) {
            *xc = [0.0; PANEL];
            for t in 0..jb {
                let jj = j + t;
                let mut v = bc[jj];
                for (s, xs) in xc.iter().enumerate().take(t) {
                    v -= l[(j + s) * n + jj] * xs;
                }
                xc[t] = v / l[jj * n + jj];
                bc[jj] = xc[t];
            }
        }
        let start = j + jb;
        if jb == PANEL {
            let cols: [&[f64]; PANEL] = std::array::from_fn(|t| &l[(j + t) * n..(j + t + 1) * n]);
            let mut i0 = start;
            while i0 < n {
                let i1 = (i0 + TILE).min(n);
                let len = i1 - i0;
                let c: [&[f64]; PANEL] = std::array::from_fn(|t| &cols[t][i0..i1]);
                for (bc, xc) in b.chunks_exact_mut(n).zip(x.iter()) {
                    let bt = &mut bc[i0..i1];
                    let nx: [f64; PANEL] = std::array::from_fn(|t| -xc[t]);
                    for k in 0..len {
                        let mut acc = bt[k];
                        acc = nx[0].mul_add(c[0][k], acc);
                        acc = nx[1].mul_add(c[1][k], acc);
                        acc = nx[2].mul_add(c[2][k], acc);
                        acc = nx[3].mul_add(c[3][k], acc);
                        acc = nx[4].mul_add(c[4][k], acc);
                        acc = nx[5].mul_add(c[5][k], acc);
                        acc = nx[6].mul_add(c[6][k], acc);
                        acc = nx[7].mul_add(c[7][k], acc);
                        bt[k] = acc;
                    }
                }
                i0 = i1;
            }
        } else {
            for (bc, xc) in b.chunks_exact_mut(n).zip(x.iter()) {
                for i in start..n {
                    let mut acc = bc[i];
                    for t in 0..jb {
                        acc = (-xc[t]).mul_add(l[(j + t) * n + i], acc);
                    }
                    bc[i] = acc;
                }
            }
        }
        j += jb;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_solve_matches_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 300;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let spd = &a * a.transpose() + DMatrix::identity(n, n);
        let l = Cholesky::new(spd).unwrap().l();
        let m = 4;
        let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let want = l.solve_lower_triangular(&b).unwrap();
        let mut got = b.clone();
        forward_solve(&l, &mut got);
        for i in 0..n {
            for c in 0..m {
                assert_abs_diff_eq!(got[(i, c)], want[(i, c)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let v = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let singular = &v * v.transpose();
        let (_, jitter) = cholesky_with_jitter(&singular).unwrap();
        assert!(jitter > 0.0 && jitter <= JITTER_MAX);
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            cholesky_with_jitter(&neg),
            Err(Error::Factorization { .. })
        ));
    }
}
