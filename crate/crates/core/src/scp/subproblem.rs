//! The convex exact-penalty subproblem around a nominal trajectory.

use nalgebra::{DMatrix, DVector};

use super::{cost_terms, CostBreakdown, TrackingMpcSpec};
use crate::argp::{ArSpec, Rollout, Source};
use crate::conic::{ConicProgram, SocConstraint};
use crate::error::{check_dim, Error, Result};
use crate::lingp::LinGp;

/// Index map of the subproblem decision vector
/// `[Δu (H·n_u), Δỹ (H), s (H), band slacks (2H), terminal slacks (2)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub horizon: usize,
    pub input_dim: usize,
}

impl Layout {
    pub fn du(&self, k: usize, c: usize) -> usize {
        k * self.input_dim + c
    }

    pub fn dy(&self, k: usize) -> usize {
        self.horizon * self.input_dim + k
    }

    /// Epigraph variable s_k ≥ σ̃_k.
    pub fn sigma(&self, k: usize) -> usize {
        self.horizon * (self.input_dim + 1) + k
    }

    pub fn band_low(&self, k: usize) -> usize {
        self.horizon * (self.input_dim + 2) + 2 * k
    }

    pub fn band_high(&self, k: usize) -> usize {
        self.band_low(k) + 1
    }

    pub fn terminal_low(&self) -> usize {
        self.horizon * (self.input_dim + 4)
    }

    pub fn terminal_high(&self) -> usize {
        self.terminal_low() + 1
    }

    pub fn dim(&self) -> usize {
        self.horizon * (self.input_dim + 4) + 2
    }

    fn source(&self, s: Source) -> Option<usize> {
        match s {
            Source::Output(i) => Some(self.dy(i)),
            Source::Input(i, c) => Some(self.du(i, c)),
            Source::Measured => None,
        }
    }
}

/// The trajectory the subproblem is linearized around.
#[derive(Clone, Copy, Debug)]
pub struct Nominal<'a> {
    pub rollout: &'a Rollout,
    pub inputs: &'a [Vec<f64>],
    /// Last applied input, before the horizon.
    pub previous_input: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct Subproblem {
    pub program: ConicProgram,
    pub layout: Layout,
    /// Added to the program objective to give the subproblem's φ.
    pub constant: f64,
    /// False when κ = 0 and S = 0: σ plays no role and the cones are dropped.
    pub has_cones: bool,
}

impl Subproblem {
    /// Subproblem φ at `z`, including the constant part.
    pub fn value(&self, z: &DVector<f64>) -> f64 {
        self.program.objective(z) + self.constant
    }

    pub fn input_deltas(&self, z: &DVector<f64>) -> Vec<Vec<f64>> {
        let l = &self.layout;
        (0..l.horizon)
            .map(|k| (0..l.input_dim).map(|c| z[l.du(k, c)]).collect())
            .collect()
    }

    pub fn output_deltas(&self, z: &DVector<f64>) -> Vec<f64> {
        (0..self.layout.horizon).map(|k| z[self.layout.dy(k)]).collect()
    }
}

fn check_inputs(
    spec: &TrackingMpcSpec,
    arspec: &ArSpec,
    lingps: &[LinGp],
    nominal: &Nominal,
) -> Result<()> {
    let h = spec.horizon;
    check_dim("linearizations", h, lingps.len())?;
    check_dim("nominal rollout", h, nominal.rollout.horizon())?;
    check_dim("nominal inputs", h, nominal.inputs.len())?;
    check_dim("previous input", arspec.input_dim, nominal.previous_input.len())?;
    for u in nominal.inputs {
        check_dim("nominal input", arspec.input_dim, u.len())?;
    }
    for l in lingps {
        check_dim("linearization point", arspec.gp_dim(), l.center().len())?;
    }
    Ok(())
}

/// Decision-vector index of each active linGP dimension at step `k`.
fn active_columns(layout: &Layout, arspec: &ArSpec, lingp: &LinGp, k: usize) -> Result<Vec<usize>> {
    let sources = arspec.regressor_sources(k);
    lingp
        .active()
        .iter()
        .map(|&d| {
            layout.source(sources[d]).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "linearization at step {k} leaves measured dimension {d} active"
                ))
            })
        })
        .collect()
}

/// Build the exact-penalty subproblem with trust-region radius `rho`.
///
/// Output deltas are measured from each linearization's own value at zero
/// displacement, so zero deltas are exactly feasible.
pub fn build_subproblem(
    spec: &TrackingMpcSpec,
    arspec: &ArSpec,
    lingps: &[LinGp],
    nominal: &Nominal,
    rho: f64,
    lambda: f64,
) -> Result<Subproblem> {
    spec.validate()?;
    check_inputs(spec, arspec, lingps, nominal)?;
    if !(rho >= 0.0 && rho.is_finite() && lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput("rho and lambda must be finite and non-negative".into()));
    }
    let h = spec.horizon;
    let nu = arspec.input_dim;
    let layout = Layout {
        horizon: h,
        input_dim: nu,
    };
    let n = layout.dim();
    let has_cones = spec.kappa > 0.0 || spec.weight_variance > 0.0;

    let mut p = DMatrix::zeros(n, n);
    let mut q = DVector::zeros(n);
    let mut lb = DVector::from_element(n, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(n, f64::INFINITY);
    let mut constant = 0.0;
    let mut cones = Vec::new();
    let unit = |i: usize| {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        e
    };

    let anchors: Vec<f64> = lingps.iter().map(|l| l.m_hat()[0]).collect();
    let (w_y, w_r, w_s) = (spec.weight_output, spec.weight_input_rate, spec.weight_variance);

    for k in 0..h {
        let i = layout.dy(k);
        let e = anchors[k] - spec.reference;
        p[(i, i)] += 2.0 * w_y;
        q[i] += 2.0 * w_y * e;
        constant += w_y * e * e;
        lb[i] = -rho;
        ub[i] = rho;

        let prev = if k == 0 {
            nominal.previous_input
        } else {
            &nominal.inputs[k - 1]
        };
        for c in 0..nu {
            let u = nominal.inputs[k][c];
            let j = layout.du(k, c);
            let lo = (-rho).max(spec.input_min - u);
            let hi = rho.min(spec.input_max - u);
            if lo > hi {
                return Err(Error::InvalidInput(format!(
                    "nominal input {u} at step {k} lies outside the input bounds"
                )));
            }
            lb[j] = lo;
            ub[j] = hi;

            // rate term R (d + Δu_k − Δu_{k−1})²
            let d = u - prev[c];
            let mut terms = vec![(j, 1.0)];
            if k > 0 {
                terms.push((layout.du(k - 1, c), -1.0));
            }
            for &(a, sa) in &terms {
                q[a] += 2.0 * w_r * d * sa;
                for &(b, sb) in &terms {
                    p[(a, b)] += 2.0 * w_r * sa * sb;
                }
            }
            constant += w_r * d * d;

            let mut expr = DVector::zeros(n);
            for &(a, sa) in &terms {
                expr[a] = sa;
            }
            cones.push(SocConstraint::linear(-&expr, spec.rate_max - d));
            cones.push(SocConstraint::linear(expr, d - spec.rate_min));
        }

        let s = layout.sigma(k);
        p[(s, s)] += 2.0 * w_s;
        lb[s] = 0.0;
        ub[s] = if has_cones { f64::INFINITY } else { 0.0 };
    }

    let mut a_eq = DMatrix::zeros(h, n);
    for (k, lingp) in lingps.iter().enumerate() {
        let cols = active_columns(&layout, arspec, lingp, k)?;
        let m_hat = lingp.m_hat();
        a_eq[(k, layout.dy(k))] += 1.0;
        for (a, &col) in cols.iter().enumerate() {
            a_eq[(k, col)] -= m_hat[1 + a];
        }
        if has_cones {
            let vs = lingp.v_sqrt();
            let mut f = DMatrix::zeros(vs.nrows(), n);
            for (a, &col) in cols.iter().enumerate() {
                for r in 0..vs.nrows() {
                    f[(r, col)] += vs[(r, a + 1)];
                }
            }
            let g = vs.column(0).clone_owned();
            cones.push(SocConstraint {
                f,
                g,
                c: unit(layout.sigma(k)),
                d0: 0.0,
            });
        }
    }
    let b_eq = DVector::zeros(h);

    // Soft constraints, each relaxed by its own non-negative slack.
    let kappa = spec.kappa;
    let mut soft = |slack: usize, sign: f64, k: usize, d0: f64| {
        let mut c = DVector::zeros(n);
        c[layout.dy(k)] = sign;
        c[layout.sigma(k)] = -kappa;
        c[slack] = 1.0;
        cones.push(SocConstraint::linear(c, d0));
        q[slack] += lambda;
        lb[slack] = 0.0;
    };
    for k in 0..h {
        let y = anchors[k];
        soft(layout.band_low(k), 1.0, k, y - spec.output_min);
        soft(layout.band_high(k), -1.0, k, spec.output_max - y);
    }
    let last = h - 1;
    let e = anchors[last] - spec.reference;
    let delta = spec.terminal_halfwidth;
    soft(layout.terminal_low(), 1.0, last, e + delta);
    soft(layout.terminal_high(), -1.0, last, delta - e);

    let mut program = ConicProgram::new(p, q)
        .with_bounds(lb, ub)
        .with_equalities(a_eq, b_eq);
    program.cones = cones;
    Ok(Subproblem {
        program,
        layout,
        constant,
        has_cones,
    })
}

/// φ predicted by the linearizations for the given input and output
/// deltas, with σ̃ evaluated exactly from each linearized variance.
pub fn predicted_cost(
    spec: &TrackingMpcSpec,
    arspec: &ArSpec,
    lingps: &[LinGp],
    nominal: &Nominal,
    input_deltas: &[Vec<f64>],
    output_deltas: &[f64],
) -> Result<CostBreakdown> {
    check_inputs(spec, arspec, lingps, nominal)?;
    let h = spec.horizon;
    check_dim("input deltas", h, input_deltas.len())?;
    check_dim("output deltas", h, output_deltas.len())?;
    let mut means = Vec::with_capacity(h);
    let mut variances = Vec::with_capacity(h);
    for (k, lingp) in lingps.iter().enumerate() {
        let sources = arspec.regressor_sources(k);
        let delta: Vec<f64> = lingp
            .active()
            .iter()
            .map(|&d| match sources[d] {
                Source::Output(i) => Ok(output_deltas[i]),
                Source::Input(i, c) => Ok(input_deltas[i][c]),
                Source::Measured => Err(Error::InvalidInput(format!(
                    "linearization at step {k} leaves measured dimension {d} active"
                ))),
            })
            .collect::<Result<_>>()?;
        let (m, v) = lingp.eval(&delta)?;
        means.push(m);
        variances.push(v);
    }
    let inputs: Vec<Vec<f64>> = nominal
        .inputs
        .iter()
        .zip(input_deltas)
        .map(|(u, d)| u.iter().zip(d).map(|(a, b)| a + b).collect())
        .collect();
    cost_terms(spec, &means, &variances, &inputs, nominal.previous_input)
}
