//! Dense LDLᵀ solver for the reduced KKT system
//!
//! ```text
//! [ H   Aᵀ ] [dx]   [bx]
//! [ A   0  ] [dy] = [by]
//! ```
//!
//! with H positive semidefinite. H is replaced by H + AᵀA (the right-hand
//! side adjusted to match), which leaves the solution unchanged and makes
//! the leading block definite whenever the system is nonsingular. A small
//! static regularization makes the matrix quasi-definite so the factorization
//! needs no pivoting; iterative refinement against the unregularized matrix
//! recovers the lost accuracy.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const STATIC_REG: f64 = 1e-11;
const REFINE_STEPS: usize = 3;

pub(crate) struct Kkt {
    n: usize,
    /// Unregularized matrix, for refinement.
    k: DMatrix<f64>,
    /// Unit lower factor below the diagonal, D on the diagonal.
    ld: DMatrix<f64>,
    a: DMatrix<f64>,
}

impl Kkt {
    pub fn factor(h: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<Self> {
        let n = h.nrows();
        let p = a.nrows();
        let dim = n + p;
        let mut k = DMatrix::zeros(dim, dim);
        let ata = a.transpose() * a;
        k.view_mut((0, 0), (n, n)).copy_from(&(h + ata));
        k.view_mut((n, 0), (p, n)).copy_from(a);
        k.view_mut((0, n), (n, p)).copy_from(&a.transpose());

        let mut ld = k.clone();
        for i in 0..dim {
            ld[(i, i)] += if i < n { STATIC_REG } else { -STATIC_REG };
        }
        ldl_in_place(&mut ld)?;
        Ok(Self {
            n,
            k,
            ld,
            a: a.clone_owned(),
        })
    }

    pub fn solve(&self, bx: &DVector<f64>, by: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.n;
        let mut rhs = DVector::zeros(self.k.nrows());
        rhs.rows_mut(0, n).copy_from(&(bx + self.a.transpose() * by));
        rhs.rows_mut(n, by.len()).copy_from(by);
        let mut sol = ldl_solve(&self.ld, &rhs);
        let rhs_norm = rhs.amax().max(1.0);
        for _ in 0..REFINE_STEPS {
            let res = &rhs - &self.k * &sol;
            if res.amax() <= 1e-15 * rhs_norm {
                break;
            }
            sol += ldl_solve(&self.ld, &res);
        }
        (
            sol.rows(0, n).clone_owned(),
            sol.rows(n, by.len()).clone_owned(),
        )
    }
}

/// In-place LDLᵀ without pivoting.
fn ldl_in_place(m: &mut DMatrix<f64>) -> Result<()> {
    let dim = m.nrows();
    let mut work = vec![0.0; dim];
    for j in 0..dim {
        // work[k] = L[j,k]·D[k]
        let mut djj = m[(j, j)];
        for k in 0..j {
            work[k] = m[(j, k)] * m[(k, k)];
            djj -= m[(j, k)] * work[k];
        }
        if !djj.is_finite() || djj == 0.0 {
            return Err(Error::Solver(format!("KKT factorization broke down at pivot {j}")));
        }
        m[(j, j)] = djj;
        for i in j + 1..dim {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= m[(i, k)] * work[k];
            }
            m[(i, j)] = v / djj;
        }
    }
    Ok(())
}

fn ldl_solve(ld: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let dim = ld.nrows();
    let mut x = b.clone();
    for j in 0..dim {
        let xj = x[j];
        for i in j + 1..dim {
            x[i] -= ld[(i, j)] * xj;
        }
    }
    for i in 0..dim {
        x[i] /= ld[(i, i)];
    }
    for j in (0..dim).rev() {
        let mut v = x[j];
        for i in j + 1..dim {
            v -= ld[(i, j)] * x[i];
        }
        x[j] = v;
    }
    x
}
