//! Primal-dual path-following with Nesterov–Todd scaling and a Mehrotra
//! predictor-corrector, in the standard form
//!
//! ```text
//! minimize ½xᵀPx + qᵀx   s.t.   Ax = b,   Gx + s = h,   s ⪰ 0.
//! ```

use nalgebra::{DMatrix, DVector};

use super::cone::{Dims, Scaling};
use super::kkt::Kkt;
use super::{ConicProgram, ConicSettings, ConicSolution, Residuals, SolveStatus};
use crate::error::{Error, Result};

const STEP: f64 = 0.99;
const REFINE_STEPS: usize = 1;
/// Iteration after which a stalled primal residual counts as infeasibility.
const STALL_CHECK: usize = 50;
const STALL_WINDOW: usize = 25;

struct Standard {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    dims: Dims,
}

impl Standard {
    fn from_program(prog: &ConicProgram) -> Self {
        let d = prog.dim();
        let mut a_rows: Vec<(DVector<f64>, f64)> = prog
            .a_eq
            .row_iter()
            .zip(prog.b_eq.iter())
            .map(|(r, b)| (r.transpose(), *b))
            .collect();
        let mut lin: Vec<(DVector<f64>, f64)> = Vec::new();
        let unit = |i: usize, v: f64| {
            let mut e = DVector::zeros(d);
            e[i] = v;
            e
        };
        for i in 0..d {
            let (l, u) = (prog.lb[i], prog.ub[i]);
            if l == u {
                a_rows.push((unit(i, 1.0), l));
                continue;
            }
            if l.is_finite() {
                lin.push((unit(i, -1.0), -l));
            }
            if u.is_finite() {
                lin.push((unit(i, 1.0), u));
            }
        }
        for c in prog.cones.iter().filter(|c| c.f.nrows() == 0) {
            lin.push((-&c.c, c.d0));
        }
        let socs: Vec<_> = prog.cones.iter().filter(|c| c.f.nrows() > 0).collect();
        let dims = Dims {
            ml: lin.len(),
            soc: socs.iter().map(|c| c.f.nrows() + 1).collect(),
        };
        let m = dims.m();
        let mut g = DMatrix::zeros(m, d);
        let mut h = DVector::zeros(m);
        for (row, (gr, hr)) in lin.iter().enumerate() {
            g.row_mut(row).copy_from(&gr.transpose());
            h[row] = *hr;
        }
        for ((off, len), c) in dims.blocks().zip(&socs) {
            g.row_mut(off).copy_from(&(-c.c.transpose()));
            h[off] = c.d0;
            g.view_mut((off + 1, 0), (len - 1, d)).copy_from(&(-&c.f));
            h.rows_mut(off + 1, len - 1).copy_from(&c.g);
        }
        let a = DMatrix::from_fn(a_rows.len(), d, |i, j| a_rows[i].0[j]);
        let b = DVector::from_iterator(a_rows.len(), a_rows.iter().map(|r| r.1));
        Self {
            p: prog.p.clone(),
            q: prog.q.clone(),
            a,
            b,
            g,
            h,
            dims,
        }
    }
}

struct Iterate {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
}

/// Solve `prog`. Returns an error only for malformed programs; numerical
/// trouble and the iteration cap give `SolveStatus::MaxIter` with the best
/// iterate seen.
pub fn solve(prog: &ConicProgram, settings: &ConicSettings) -> Result<ConicSolution> {
    prog.validate()?;
    if !(settings.tol_feas > 0.0 && settings.tol_gap > 0.0) {
        return Err(Error::InvalidInput("solver tolerances must be positive".into()));
    }
    let sf = Standard::from_program(prog);
    if sf.dims.m() == 0 {
        return solve_equality_qp(prog, &sf, settings);
    }
    Ok(interior_point(prog, &sf, settings))
}

fn solve_equality_qp(
    prog: &ConicProgram,
    sf: &Standard,
    settings: &ConicSettings,
) -> Result<ConicSolution> {
    let kkt = Kkt::factor(&sf.p, &sf.a)?;
    let (x, y) = kkt.solve(&(-&sf.q), &sf.b);
    let rx = &sf.p * &x + &sf.q + sf.a.transpose() * &y;
    let residuals = Residuals {
        primal: (&sf.a * &x - &sf.b).norm(),
        dual: rx.norm() / sf.q.norm().max(1.0),
        gap: 0.0,
    };
    let ok = residuals.primal <= settings.tol_feas && residuals.dual <= settings.tol_feas;
    Ok(ConicSolution {
        objective: prog.objective(&x),
        z: x,
        status: if ok {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIter
        },
        residuals,
        iterations: 1,
    })
}

fn shift_into_cone(dims: &Dims, v: DVector<f64>) -> DVector<f64> {
    let alpha = dims.interior_shift(&v);
    if alpha < 0.0 {
        v
    } else {
        v + dims.unit() * (1.0 + alpha)
    }
}

fn initial_point(sf: &Standard) -> Result<Iterate> {
    // W = I: minimizes ½xᵀPx + qᵀx + ½‖Gx − h‖² subject to Ax = b
    let h0 = &sf.p + sf.g.transpose() * &sf.g;
    let kkt = Kkt::factor(&h0, &sf.a)?;
    let (x, y) = kkt.solve(&(sf.g.transpose() * &sf.h - &sf.q), &sf.b);
    let zhat = &sf.g * &x - &sf.h;
    let s = shift_into_cone(&sf.dims, -&zhat);
    let z = shift_into_cone(&sf.dims, zhat);
    Ok(Iterate { x, y, z, s })
}

fn interior_point(prog: &ConicProgram, sf: &Standard, settings: &ConicSettings) -> ConicSolution {
    let dims = &sf.dims;
    let q_scale = sf.q.norm().max(1.0);
    let degree = dims.degree() as f64;
    let e = dims.unit();

    let mut best: Option<(f64, DVector<f64>, Residuals, usize)> = None;
    let finish = |status, x: DVector<f64>, residuals, iterations| ConicSolution {
        objective: prog.objective(&x),
        z: x,
        status,
        residuals,
        iterations,
    };

    let mut it = match initial_point(sf) {
        Ok(it) => it,
        Err(err) => {
            log::warn!("conic solver could not initialize: {err}");
            let x = DVector::zeros(prog.dim());
            return finish(SolveStatus::MaxIter, x, Residuals::default(), 0);
        }
    };
    let mut pres_hist = Vec::with_capacity(settings.max_iter + 1);
    let mut scaling = match Scaling::new(dims, &it.s, &it.z) {
        Ok(w) => w,
        Err(err) => {
            log::warn!("conic solver could not initialize: {err}");
            return finish(SolveStatus::MaxIter, it.x, Residuals::default(), 0);
        }
    };

    for iter in 0..=settings.max_iter {
        let aty = sf.a.transpose() * &it.y;
        let gtz = sf.g.transpose() * &it.z;
        let rx = &sf.p * &it.x + &sf.q + &aty + &gtz;
        let ry = &sf.a * &it.x - &sf.b;
        let rz = &sf.g * &it.x + &it.s - &sf.h;
        let gap = it.s.dot(&it.z);
        let pcost = prog.objective(&it.x);
        let res = Residuals {
            primal: (ry.norm_squared() + rz.norm_squared()).sqrt(),
            dual: rx.norm() / q_scale,
            gap,
        };
        let gap_tol = settings.tol_gap * pcost.abs().max(1.0);
        let violation = prog.max_violation(&it.x);
        let merit = (res.primal.max(violation) / settings.tol_feas)
            .max(res.dual / settings.tol_feas)
            .max(gap / gap_tol);
        if !merit.is_finite() {
            break;
        }
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, it.x.clone(), res, iter));
        }
        if merit <= 1.0 {
            return finish(SolveStatus::Optimal, it.x, res, iter);
        }

        // Infeasibility: a dual ray (y, z) with Aᵀy + Gᵀz ≈ 0 and bᵀy + hᵀz < 0,
        // or a primal residual that stopped shrinking while the dual grows.
        let ray = -(sf.h.dot(&it.z) + sf.b.dot(&it.y));
        pres_hist.push(res.primal);
        let certificate = ray > 0.0 && (&aty + &gtz).norm() <= settings.tol_feas * ray;
        let stalled = iter >= STALL_CHECK
            && ray > 0.0
            && res.primal > 0.5 * pres_hist[iter - STALL_WINDOW];
        if res.primal > settings.tol_feas && (certificate || stalled) {
            return finish(SolveStatus::Infeasible, it.x, res, iter);
        }
        if iter == settings.max_iter {
            break;
        }

        let advanced = newton_step(sf, &scaling, &it, &rx, &ry, &rz, gap / degree, &e)
            .and_then(|step| {
                let alpha = (STEP * dims.max_step(&step.lam, &step.ds_scaled))
                    .min(STEP * dims.max_step(&step.lam, &step.dz_scaled))
                    .min(1.0);
                let next =
                    scaling.updated(dims, &step.lam, &step.ds_scaled, &step.dz_scaled, alpha)?;
                Ok((step, alpha, next))
            });
        let (step, alpha, next) = match advanced {
            Ok(v) => v,
            Err(err) => {
                log::debug!("interior point stopped at iteration {iter}: {err}");
                break;
            }
        };
        it.x += &step.dx * alpha;
        it.y += &step.dy * alpha;
        it.z += &step.dz * alpha;
        it.s += &step.ds * alpha;
        scaling = next;
    }

    let (_, x, res, iters) = best.expect("at least one iterate evaluated");
    finish(SolveStatus::MaxIter, x, res, iters)
}

struct Step {
    dx: DVector<f64>,
    dy: DVector<f64>,
    dz: DVector<f64>,
    ds: DVector<f64>,
    lam: DVector<f64>,
    /// W⁻¹ds and W dz.
    ds_scaled: DVector<f64>,
    dz_scaled: DVector<f64>,
}

#[allow(clippy::too_many_arguments)]
fn newton_step(
    sf: &Standard,
    w: &Scaling,
    it: &Iterate,
    rx: &DVector<f64>,
    ry: &DVector<f64>,
    rz: &DVector<f64>,
    mu: f64,
    e: &DVector<f64>,
) -> Result<Step> {
    let dims = &sf.dims;
    let lam = w.apply(dims, &it.z, false);
    // M = W⁻¹G, reduced matrix P + MᵀM
    let mut m = sf.g.clone();
    for mut col in m.column_iter_mut() {
        let scaled = w.apply(dims, &col.clone_owned(), true);
        col.copy_from(&scaled);
    }
    let kkt = Kkt::factor(&(&sf.p + m.transpose() * &m), &sf.a)?;

    // Solves P dx + Aᵀdy + Gᵀdz = bx, A dx = by, G dx + ds = bz,
    // λ∘(W⁻¹ds + W dz) = bs, returning (dx, dy, W dz, W⁻¹ds).
    let reduced = |bx: &DVector<f64>, by: &DVector<f64>, bz: &DVector<f64>, t: &DVector<f64>| {
        let wt = w.apply(dims, t, false);
        let u = w.apply(dims, &(bz - &wt), true);
        let (dx, dy) = kkt.solve(&(bx + m.transpose() * &u), by);
        let wdz = &m * &dx - &u;
        let sds = t - &wdz;
        (dx, dy, wdz, sds)
    };
    // Refinement on the unreduced equations: the reduced matrix gets badly
    // conditioned near the boundary and its errors land in the dual residual.
    let newton = |bx: &DVector<f64>, by: &DVector<f64>, bz: &DVector<f64>, bs: &DVector<f64>| {
        let t = dims.inv_product(&lam, bs);
        let (mut dx, mut dy, mut wdz, mut sds) = reduced(bx, by, bz, &t);
        let zero = DVector::zeros(t.len());
        for _ in 0..REFINE_STEPS {
            let dz = w.apply(dims, &wdz, true);
            let ds = w.apply(dims, &sds, false);
            let r1 = bx - (&sf.p * &dx + sf.a.transpose() * &dy + sf.g.transpose() * &dz);
            let r2 = by - &sf.a * &dx;
            let r3 = bz - (&sf.g * &dx + &ds);
            let (cx, cy, cz, cs) = reduced(&r1, &r2, &r3, &zero);
            dx += cx;
            dy += cy;
            wdz += cz;
            sds += cs;
        }
        (dx, dy, wdz, sds)
    };

    let (bx, by, bz) = (-rx, -ry, -rz);
    let lam_sq = dims.product(&lam, &lam);
    let (_, _, wdz_a, sds_a) = newton(&bx, &by, &bz, &(-&lam_sq));
    let alpha_aff = dims
        .max_step(&lam, &sds_a)
        .min(dims.max_step(&lam, &wdz_a))
        .min(1.0);
    let sigma = (1.0 - alpha_aff).clamp(0.0, 1.0).powi(3);

    let corr = dims.product(&sds_a, &wdz_a);
    let bs = -lam_sq - corr + e * (sigma * mu);
    let (dx, dy, dz_scaled, ds_scaled) = newton(&bx, &by, &bz, &bs);
    let dz = w.apply(dims, &dz_scaled, true);
    let ds = w.apply(dims, &ds_scaled, false);
    let finite = [&dx, &dy, &dz, &ds]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()));
    if !finite {
        return Err(Error::Solver("non-finite Newton direction".into()));
    }
    Ok(Step {
        dx,
        dy,
        dz,
        ds,
        lam,
        ds_scaled,
        dz_scaled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::SocConstraint;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn unconstrained_stationary_point() {
        let prog = ConicProgram::new(DMatrix::from_element(1, 1, 1.0), v(&[-1.0]));
        let sol = solve(&prog, &ConicSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.objective, -0.5, epsilon = 1e-9);
    }

    #[test]
    fn active_upper_bound() {
        // (z − 3)² = z² − 6z + 9
        let prog = ConicProgram::new(DMatrix::from_element(1, 1, 2.0), v(&[-6.0]))
            .with_bounds(v(&[0.0]), v(&[1.0]));
        let sol = solve(&prog, &ConicSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-7);
        assert!(prog.max_violation(&sol.z) <= 1e-8);
    }

    #[test]
    fn disc_constraint_against_grid() {
        // min z₂ s.t. ‖(z₁, z₂ − 1)‖ ≤ 1, −1 ≤ z₁ ≤ 1
        let prog = ConicProgram::new(DMatrix::zeros(2, 2), v(&[0.0, 1.0]))
            .with_bounds(v(&[-1.0, f64::NEG_INFINITY]), v(&[1.0, f64::INFINITY]))
            .with_cone(SocConstraint {
                f: DMatrix::identity(2, 2),
                g: v(&[0.0, -1.0]),
                c: v(&[0.0, 0.0]),
                d0: 1.0,
            });
        let sol = solve(&prog, &ConicSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(prog.max_violation(&sol.z) <= 1e-8);

        let mut grid_best = f64::INFINITY;
        let mut arg = (0.0, 0.0);
        let steps = 2000;
        for i in 0..=steps {
            for j in 0..=steps {
                let z1 = -1.0 + 2.0 * i as f64 / steps as f64;
                let z2 = 2.0 * j as f64 / steps as f64;
                if z1 * z1 + (z2 - 1.0) * (z2 - 1.0) <= 1.0 && z2 < grid_best {
                    grid_best = z2;
                    arg = (z1, z2);
                }
            }
        }
        assert!((sol.objective - grid_best).abs() <= 1e-3);
        assert_abs_diff_eq!(sol.z[1], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.z[0], arg.0, epsilon = 1e-3);
    }

    #[test]
    fn fixed_variables_become_equalities() {
        let prog = ConicProgram::new(DMatrix::identity(2, 2), v(&[0.0, 0.0]))
            .with_bounds(v(&[0.5, -1.0]), v(&[0.5, 1.0]))
            .with_cone(SocConstraint::linear(v(&[0.0, 1.0]), -0.25));
        let sol = solve(&prog, &ConicSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.z[1], 0.25, epsilon = 1e-7);
    }

    #[test]
    fn detects_infeasible_program() {
        // z ≥ 1 and z ≤ 0 written as linear cones
        let prog = ConicProgram::new(DMatrix::identity(1, 1), v(&[0.0]))
            .with_cone(SocConstraint::linear(v(&[1.0]), -1.0))
            .with_cone(SocConstraint::linear(v(&[-1.0]), 0.0));
        let sol = solve(&prog, &ConicSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);

        // disc of radius 1 around (3, 0) intersected with z₁ ≤ 1
        let prog = ConicProgram::new(DMatrix::zeros(2, 2), v(&[1.0, 1.0]))
            .with_bounds(v(&[f64::NEG_INFINITY; 2]), v(&[1.0, f64::INFINITY]))
            .with_cone(SocConstraint {
                f: DMatrix::identity(2, 2),
                g: v(&[-3.0, 0.0]),
                c: v(&[0.0, 0.0]),
                d0: 1.0,
            });
        let sol = solve(&prog, &ConicSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn iteration_cap_reports_max_iter() {
        let prog = ConicProgram::new(DMatrix::identity(2, 2), v(&[1.0, -1.0]))
            .with_bounds(v(&[0.0, 0.0]), v(&[1.0, 1.0]));
        let settings = ConicSettings {
            max_iter: 1,
            ..Default::default()
        };
        let sol = solve(&prog, &settings).unwrap();
        assert_eq!(sol.status, SolveStatus::MaxIter);
        assert!(sol.z.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn rejects_malformed_programs() {
        let mut prog = ConicProgram::new(DMatrix::identity(2, 2), v(&[0.0, 0.0]));
        prog.p[(0, 0)] = -1.0;
        assert!(solve(&prog, &ConicSettings::default()).is_err());
        let prog = ConicProgram::new(DMatrix::identity(2, 2), v(&[0.0, 0.0]))
            .with_bounds(v(&[1.0, 0.0]), v(&[0.0, 1.0]));
        assert!(solve(&prog, &ConicSettings::default()).is_err());
        let prog = ConicProgram::new(DMatrix::identity(3, 3), v(&[0.0, 0.0]));
        assert!(solve(&prog, &ConicSettings::default()).is_err());
    }
}
