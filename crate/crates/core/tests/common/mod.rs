//! Shared generators and reference solvers for the integration tests.
#![allow(dead_code)]

use lingp_mpc::conic::{ConicProgram, SocConstraint};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Constructed {
    pub program: ConicProgram,
    pub optimum: DVector<f64>,
    pub value: f64,
}

pub struct ProgramShape {
    pub max_dim: usize,
    pub max_cones: usize,
    pub equalities: bool,
    /// Keep P positive definite.
    pub strongly_convex: bool,
    /// Require strictly feasible points near the optimum.
    pub interior: bool,
}

/// Random program with a known optimum: pick x*, active constraints and
/// multipliers, then set q so that the KKT conditions hold at x*.
pub fn constructed_program(rng: &mut ChaCha8Rng, shape: &ProgramShape) -> Constructed {
    loop {
        let c = build_program(rng, shape);
        if !shape.interior || has_interior_near(&c.program, &c.optimum, rng) {
            return c;
        }
    }
}

fn has_interior_near(prog: &ConicProgram, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> bool {
    (0..2000).any(|_| {
        let cand = DVector::from_fn(x.len(), |i, _| x[i] + rng.random_range(-1e-2..1e-2));
        strictly_feasible(prog, &cand)
    })
}

pub fn strictly_feasible(prog: &ConicProgram, x: &DVector<f64>) -> bool {
    (0..x.len()).all(|i| prog.lb[i] < x[i] && x[i] < prog.ub[i])
        && prog.cones.iter().all(|c| c.margin(x) > 0.0)
}

fn build_program(rng: &mut ChaCha8Rng, shape: &ProgramShape) -> Constructed {
    let d = rng.random_range(1..=shape.max_dim);
    let rank = if shape.strongly_convex { d } else { rng.random_range(1..=d) };
    let m = DMatrix::from_fn(rank, d, |_, _| rng.random_range(-1.0..1.0));
    let mut p = m.transpose() * &m / d as f64;
    if shape.strongly_convex {
        p += DMatrix::identity(d, d) * 0.1;
    }
    let x = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let mut grad = DVector::zeros(d);

    let mut lb = DVector::zeros(d);
    let mut ub = DVector::zeros(d);
    for i in 0..d {
        let nu = rng.random_range(0.1..1.0);
        match rng.random_range(0..4) {
            0 => {
                lb[i] = x[i];
                ub[i] = x[i] + rng.random_range(0.5..1.5);
                grad[i] += nu;
            }
            1 => {
                lb[i] = x[i] - rng.random_range(0.5..1.5);
                ub[i] = x[i];
                grad[i] -= nu;
            }
            _ => {
                lb[i] = x[i] - rng.random_range(0.3..1.0);
                ub[i] = x[i] + rng.random_range(0.3..1.0);
            }
        }
    }
    let mut program = ConicProgram::new(p.clone(), DVector::zeros(d)).with_bounds(lb, ub);

    if shape.equalities && d > 1 {
        let n_eq = rng.random_range(0..=(d - 1).min(2));
        let a = DMatrix::from_fn(n_eq, d, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n_eq, |_, _| rng.random_range(-1.0..1.0));
        grad += a.transpose() * y;
        let b = &a * &x;
        program = program.with_equalities(a, b);
    }

    for _ in 0..rng.random_range(0..=shape.max_cones) {
        let rows = rng.random_range(0..=2);
        let active = rng.random_bool(0.5);
        let f = DMatrix::from_fn(rows, d, |_, _| rng.random_range(-1.0..1.0));
        let g = DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0));
        let c = DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5));
        let v = &f * &x + &g;
        let slack = if active { 0.0 } else { rng.random_range(0.2..1.0) };
        let d0 = v.norm() - c.dot(&x) + slack;
        if active {
            let zeta0 = rng.random_range(0.1..1.0);
            grad += &c * zeta0;
            if rows > 0 {
                let zeta1 = -&v * (zeta0 / v.norm());
                grad += f.transpose() * zeta1;
            }
        }
        program = program.with_cone(SocConstraint { f, g, c, d0 });
    }

    program.q = &grad - &p * &x;
    let value = program.objective(&x);
    Constructed {
        program,
        optimum: x,
        value,
    }
}

/// Best objective on successively refined grids over the bound box.
///
/// Points within a few grid spacings of feasibility are kept, a tolerance
/// that vanishes as the grid is refined and lets thin or single-point
/// feasible sets be found. Each level zooms onto the bounding box of the kept
/// points whose value is within a Lipschitz margin of the best strictly
/// feasible value (all kept points if there is none), which keeps the
/// optimum's nearest grid point in view. Only for dimension ≤ 2 and no
/// equality constraints.
pub fn grid_oracle(prog: &ConicProgram) -> f64 {
    let d = prog.dim();
    assert!(d <= 2 && prog.a_eq.nrows() == 0);
    let eval = FlatProgram::new(prog);
    let per_dim = [0, 20001, 1001][d];
    let mut lo: Vec<f64> = prog.lb.iter().copied().collect();
    let mut hi: Vec<f64> = prog.ub.iter().copied().collect();
    let radius = lo.iter().chain(&hi).fold(0.0f64, |m, v| m.max(v.abs()));
    let lipschitz = prog.q.norm() + prog.p.norm() * radius * (d as f64).sqrt();
    let mut best = f64::INFINITY;
    let mut z = [0.0; 2];
    for _level in 0..60 {
        let spacing: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / (per_dim - 1) as f64).collect();
        let h = spacing.iter().map(|h| h * h).sum::<f64>().sqrt();
        let tol = 10.0 * h;
        let total = (per_dim as u64).pow(d as u32);
        let point = |idx: u64, z: &mut [f64; 2]| {
            let mut rem = idx;
            for k in 0..d {
                z[k] = lo[k] + (rem % per_dim as u64) as f64 * spacing[k];
                rem /= per_dim as u64;
            }
        };
        // (objective, strictly feasible, index)
        let mut points = Vec::new();
        for idx in 0..total {
            point(idx, &mut z);
            let v = eval.violation(&z[..d]);
            if v <= tol {
                points.push((eval.objective(&z[..d]), v < 0.0, idx));
            }
        }
        if points.is_empty() {
            break;
        }
        let strict = points
            .iter()
            .filter(|p| p.1)
            .map(|p| p.0)
            .fold(f64::INFINITY, f64::min);
        best = if strict.is_finite() {
            strict
        } else {
            points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min)
        };
        if h < 1e-9 {
            break;
        }
        let margin = strict + 2.0 * lipschitz * h;
        let (mut a, mut b) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for (f, _, idx) in &points {
            if *f <= margin {
                point(*idx, &mut z);
                for k in 0..d {
                    a[k] = a[k].min(z[k]);
                    b[k] = b[k].max(z[k]);
                }
            }
        }
        for k in 0..d {
            lo[k] = (a[k] - 2.0 * spacing[k]).max(prog.lb[k]);
            hi[k] = (b[k] + 2.0 * spacing[k]).min(prog.ub[k]);
        }
    }
    best
}

/// Allocation-free evaluation of objective and signed constraint violation.
struct FlatProgram<'a> {
    prog: &'a ConicProgram,
    d: usize,
}

impl<'a> FlatProgram<'a> {
    fn new(prog: &'a ConicProgram) -> Self {
        Self { prog, d: prog.dim() }
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let mut f = 0.0;
        for i in 0..self.d {
            let mut pz = 0.0;
            for j in 0..self.d {
                pz += self.prog.p[(i, j)] * z[j];
            }
            f += 0.5 * z[i] * pz + self.prog.q[i] * z[i];
        }
        f
    }

    /// Largest constraint violation; negative when strictly feasible.
    fn violation(&self, z: &[f64]) -> f64 {
        let mut v = f64::NEG_INFINITY;
        for i in 0..self.d {
            v = v.max(self.prog.lb[i] - z[i]).max(z[i] - self.prog.ub[i]);
        }
        for c in &self.prog.cones {
            let mut lin = c.d0;
            for j in 0..self.d {
                lin += c.c[j] * z[j];
            }
            let mut sq = 0.0;
            for r in 0..c.f.nrows() {
                let mut row = c.g[r];
                for j in 0..self.d {
                    row += c.f[(r, j)] * z[j];
                }
                sq += row * row;
            }
            v = v.max(sq.sqrt() - lin);
        }
        v
    }
}

/// Best objective found by Gaussian perturbations of `start`, keeping only
/// feasible points, with shrinking step sizes.
pub fn random_search(prog: &ConicProgram, start: &DVector<f64>, rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let mut x = start.clone();
    let mut best = prog.objective(&x);
    let mut step = 0.3;
    while step > 1e-6 {
        for _ in 0..400 {
            let cand = DVector::from_fn(x.len(), |i, _| {
                let n: f64 = StandardNormal.sample(rng);
                x[i] + step * n
            });
            if prog.max_violation(&cand) <= 0.0 {
                let f = prog.objective(&cand);
                if f < best {
                    best = f;
                    x = cand;
                }
            }
        }
        step *= 0.5;
    }
    best
}

/// Check a solver trace against the trust-region rules. Returns one message
/// per broken law.
pub fn trace_violations(
    report: &lingp_mpc::scp::ScpReport,
    config: &lingp_mpc::scp::ScpConfig,
) -> Vec<String> {
    let mut bad = Vec::new();
    let recs = &report.iterations;
    let mut start = 0;
    while start < recs.len() {
        let pass = recs[start].pass;
        let end = recs[start..]
            .iter()
            .position(|r| r.pass != pass)
            .map_or(recs.len(), |p| start + p);
        let run = &recs[start..end];
        if config.reset_rho && (run[0].rho - config.rho0).abs() > 0.0 {
            bad.push(format!("pass {pass} starts at rho {}", run[0].rho));
        }
        for (j, r) in run.iter().enumerate() {
            let last = j + 1 == run.len();
            match r.ratio {
                None => {
                    if r.delta_predicted.abs() > config.stop_tolerance(r.phi) {
                        bad.push(format!("pass {pass} iter {j}: stopped with |pred| > eps"));
                    }
                    if r.accepted || !last {
                        bad.push(format!("pass {pass} iter {j}: stop record not final"));
                    }
                }
                Some(ratio) => {
                    if r.delta_predicted.abs() <= config.stop_tolerance(r.phi) {
                        bad.push(format!("pass {pass} iter {j}: missed the stop test"));
                    }
                    if r.accepted != (ratio >= config.r0) {
                        bad.push(format!("pass {pass} iter {j}: acceptance disagrees with r={ratio}"));
                    }
                    if r.accepted && !(r.delta_actual >= config.r0 * r.delta_predicted && r.delta_predicted > 0.0) {
                        bad.push(format!("pass {pass} iter {j}: accepted without sufficient decrease"));
                    }
                    let expect = if ratio < config.r1 {
                        config.beta_fail
                    } else if ratio < config.r2 {
                        1.0
                    } else {
                        config.beta_succ
                    };
                    let next_rho = if last { report.rho } else { run[j + 1].rho };
                    // the final radius is only reported for the last pass
                    if !last || end == recs.len() {
                        let factor = next_rho / r.rho;
                        if (factor - expect).abs() > 1e-12 * expect {
                            bad.push(format!("pass {pass} iter {j}: rho factor {factor}, expected {expect}"));
                        }
                    }
                    if !last {
                        let next_phi = run[j + 1].phi;
                        let expect_phi = if r.accepted { r.phi - r.delta_actual } else { r.phi };
                        if (next_phi - expect_phi).abs() > 1e-9 * (1.0 + r.phi.abs()) {
                            bad.push(format!("pass {pass} iter {j}: phi bookkeeping"));
                        }
                        if next_phi > r.phi + 1e-12 * (1.0 + r.phi.abs()) {
                            bad.push(format!("pass {pass} iter {j}: accepted phi increased"));
                        }
                    } else {
                        let floor = r.rho * expect < config.rho_min;
                        if !floor && run.len() < config.j_max {
                            bad.push(format!("pass {pass}: ended early without a stop test"));
                        }
                    }
                }
            }
        }
        if run.len() > config.j_max {
            bad.push(format!("pass {pass}: {} iterations", run.len()));
        }
        start = end;
    }
    bad
}
