//! Dense primal-dual interior-point solver for
//!
//! ```text
//! minimize    ½ zᵀPz + qᵀz
//! subject to  A_eq z = b_eq,   lb ≤ z ≤ ub,
//!             ‖F_i z + g_i‖₂ ≤ c_iᵀz + d0_i
//! ```
//!
//! Cones with an empty `F` are plain linear inequalities `cᵀz + d0 ≥ 0`.
//! Problem sizes are expected to be small (a few hundred variables), so
//! everything is dense.

mod cone;
mod ipm;
mod kkt;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub use ipm::solve;

/// Tolerance on the smallest eigenvalue of P.
pub const PSD_TOL: f64 = -1e-9;

/// `‖f·z + g‖₂ ≤ cᵀz + d0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SocConstraint {
    pub f: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c: DVector<f64>,
    pub d0: f64,
}

impl SocConstraint {
    /// `cᵀz + d0 ≥ 0`.
    pub fn linear(c: DVector<f64>, d0: f64) -> Self {
        Self {
            f: DMatrix::zeros(0, c.len()),
            g: DVector::zeros(0),
            c,
            d0,
        }
    }

    /// `cᵀz + d0 − ‖f·z + g‖`; negative when violated.
    pub fn margin(&self, z: &DVector<f64>) -> f64 {
        self.c.dot(z) + self.d0 - (&self.f * z + &self.g).norm()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConicProgram {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    pub cones: Vec<SocConstraint>,
}

impl ConicProgram {
    /// Unconstrained program in `q.len()` variables.
    pub fn new(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        let d = q.len();
        Self {
            p,
            q,
            a_eq: DMatrix::zeros(0, d),
            b_eq: DVector::zeros(0),
            lb: DVector::from_element(d, f64::NEG_INFINITY),
            ub: DVector::from_element(d, f64::INFINITY),
            cones: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn with_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_cone(mut self, cone: SocConstraint) -> Self {
        self.cones.push(cone);
        self
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z)
    }

    /// Largest violation of any declared constraint at `z` (0 if feasible).
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let mut v: f64 = 0.0;
        if self.a_eq.nrows() > 0 {
            v = v.max((&self.a_eq * z - &self.b_eq).amax());
        }
        for i in 0..self.dim() {
            v = v.max(self.lb[i] - z[i]).max(z[i] - self.ub[i]);
        }
        for c in &self.cones {
            v = v.max(-c.margin(z));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidInput("program has no variables".into()));
        }
        check_dim("P rows", d, self.p.nrows())?;
        check_dim("P cols", d, self.p.ncols())?;
        check_dim("A_eq cols", d, self.a_eq.ncols())?;
        check_dim("b_eq", self.a_eq.nrows(), self.b_eq.len())?;
        check_dim("lb", d, self.lb.len())?;
        check_dim("ub", d, self.ub.len())?;
        for c in &self.cones {
            check_dim("cone F cols", d, c.f.ncols())?;
            check_dim("cone g", c.f.nrows(), c.g.len())?;
            check_dim("cone c", d, c.c.len())?;
            let finite = c.f.iter().chain(c.g.iter()).chain(c.c.iter()).all(|v| v.is_finite())
                && c.d0.is_finite();
            if !finite {
                return Err(Error::InvalidInput("non-finite cone data".into()));
            }
        }
        let finite = self
            .p
            .iter()
            .chain(self.q.iter())
            .chain(self.a_eq.iter())
            .chain(self.b_eq.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("non-finite program data".into()));
        }
        for i in 0..d {
            let (l, u) = (self.lb[i], self.ub[i]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(Error::InvalidInput(format!("bad bounds [{l}, {u}] on variable {i}")));
            }
        }
        let scale = self.p.amax().max(1.0);
        if (&self.p - self.p.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidInput("P is not symmetric".into()));
        }
        let min_eig = self.p.clone().symmetric_eigenvalues().min();
        if min_eig < PSD_TOL * scale {
            return Err(Error::InvalidInput(format!(
                "P is not positive semidefinite (eigenvalue {min_eig:e})"
            )));
        }
        Ok(())
    }

    /// Write the program as a JSON document (dense, row-major matrices;
    /// infinite bounds as null).
    pub fn dump_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(file, &ProgramDocument::from(self))?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let doc: ProgramDocument = serde_json::from_reader(file)?;
        let prog = doc.into_program()?;
        prog.validate()?;
        Ok(prog)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// ‖(A z − b, G z + s − h)‖₂ of the internal standard form.
    pub primal: f64,
    /// Stationarity residual relative to max(1, ‖q‖).
    pub dual: f64,
    /// Complementarity sᵀλ.
    pub gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConicSettings {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iter: usize,
}

impl Default for ConicSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConicSolution {
    /// Primal solution.
    pub z: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub residuals: Residuals,
    pub iterations: usize,
}

#[derive(Serialize, Deserialize)]
struct ConeDocument {
    f: Vec<Vec<f64>>,
    g: Vec<f64>,
    c: Vec<f64>,
    d0: f64,
}

#[derive(Serialize, Deserialize)]
struct ProgramDocument {
    dim: usize,
    p: Vec<Vec<f64>>,
    q: Vec<f64>,
    a_eq: Vec<Vec<f64>>,
    b_eq: Vec<f64>,
    lb: Vec<Option<f64>>,
    ub: Vec<Option<f64>>,
    cones: Vec<ConeDocument>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    for r in rows {
        check_dim("matrix row", ncols, r.len())?;
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl From<&ConicProgram> for ProgramDocument {
    fn from(p: &ConicProgram) -> Self {
        Self {
            dim: p.dim(),
            p: rows_of(&p.p),
            q: p.q.iter().copied().collect(),
            a_eq: rows_of(&p.a_eq),
            b_eq: p.b_eq.iter().copied().collect(),
            lb: p.lb.iter().map(|v| finite_or_none(*v)).collect(),
            ub: p.ub.iter().map(|v| finite_or_none(*v)).collect(),
            cones: p
                .cones
                .iter()
                .map(|c| ConeDocument {
                    f: rows_of(&c.f),
                    g: c.g.iter().copied().collect(),
                    c: c.c.iter().copied().collect(),
                    d0: c.d0,
                })
                .collect(),
        }
    }
}

impl ProgramDocument {
    fn into_program(self) -> Result<ConicProgram> {
        let d = self.dim;
        Ok(ConicProgram {
            p: matrix_from_rows(&self.p, d)?,
            q: DVector::from_vec(self.q),
            a_eq: matrix_from_rows(&self.a_eq, d)?,
            b_eq: DVector::from_vec(self.b_eq),
            lb: DVector::from_iterator(
                self.lb.len(),
                self.lb.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)),
            ),
            ub: DVector::from_iterator(
                self.ub.len(),
                self.ub.iter().map(|v| v.unwrap_or(f64::INFINITY)),
            ),
            cones: self
                .cones
                .into_iter()
                .map(|c| {
                    Ok(SocConstraint {
                        f: matrix_from_rows(&c.f, d)?,
                        g: DVector::from_vec(c.g),
                        c: DVector::from_vec(c.c),
                        d0: c.d0,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }
}
