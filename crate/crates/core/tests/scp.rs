mod common;

use lingp_mpc::argp::{rollout_mean, ArSpec, ArState};
use lingp_mpc::bench::{generate_training_data, plant_ar_spec};
use lingp_mpc::gp::GpModel;
use lingp_mpc::kernel::KernelHyper;
use lingp_mpc::lingp::lingp_build_batch;
use lingp_mpc::par::Execution;
use lingp_mpc::scp::{
    build_subproblem, scp_solve, MpcProblem, Nominal, ScpConfig, Termination, TrackingMpcSpec,
};
use nalgebra::{DMatrix, DVector};

fn linear_plant_model() -> GpModel {
    let (ny, nu) = (25, 21);
    let mut x = DMatrix::zeros(2, ny * nu);
    let mut y = DVector::zeros(ny * nu);
    for i in 0..ny {
        for j in 0..nu {
            let col = i * nu + j;
            let yp = -1.5 + 3.0 * i as f64 / (ny - 1) as f64;
            let u = -1.3 + 2.6 * j as f64 / (nu - 1) as f64;
            x[(0, col)] = yp;
            x[(1, col)] = u;
            y[col] = 0.8 * yp + 0.2 * u;
        }
    }
    GpModel::new(x, y, KernelHyper::new(4.0, vec![4.0, 4.0], 1e-8).unwrap()).unwrap()
}

/// Unconstrained minimizer of Q Σ (y_k − r)² + R Σ (u_k − u_{k−1})² for the
/// linear plant, by least squares.
fn lq_oracle(h: usize, y0: f64, prev: f64, r: f64, q: f64, rr: f64) -> Vec<f64> {
    // y_{k+1} = 0.8^{k+1} y0 + Σ_{i≤k} 0.2·0.8^{k−i} u_i
    let mut a = DMatrix::zeros(2 * h, h);
    let mut b = DVector::zeros(2 * h);
    let (sq, sr) = (q.sqrt(), rr.sqrt());
    for k in 0..h {
        for i in 0..=k {
            a[(k, i)] = sq * 0.2 * 0.8f64.powi((k - i) as i32);
        }
        b[k] = sq * (r - 0.8f64.powi(k as i32 + 1) * y0);
        a[(h + k, k)] = sr;
        if k == 0 {
            b[h] = sr * prev;
        } else {
            a[(h + k, k - 1)] = -sr;
        }
    }
    let ata = a.transpose() * &a;
    let atb = a.transpose() * b;
    ata.cholesky().unwrap().solve(&atb).iter().copied().collect()
}

#[test]
fn linear_plant_matches_lq_oracle() {
    let model = linear_plant_model();
    let ar = plant_ar_spec();
    for &(y0, prev, r) in &[(-0.3, -0.3, -0.1), (0.2, 0.2, 0.3), (0.1, 0.0, 0.0), (-0.4, -0.5, -0.45)] {
        let spec = TrackingMpcSpec {
            horizon: 6,
            kappa: 0.0,
            rate_min: -2.0,
            rate_max: 2.0,
            terminal_halfwidth: 10.0,
            output_min: -5.0,
            output_max: 5.0,
            reference: r,
            ..Default::default()
        };
        let expect = lq_oracle(6, y0, prev, r, spec.weight_output, spec.weight_input_rate);
        assert!(expect.iter().all(|u| u.abs() < 0.9), "oracle not interior: {expect:?}");
        let init = ArState::new(&ar, vec![y0], Vec::new()).unwrap();
        let problem = MpcProblem {
            model: &model,
            spec: &spec,
            arspec: &ar,
            init: &init,
            previous_input: &[prev],
        };
        let config = ScpConfig::default();
        let report = scp_solve(&problem, &vec![vec![0.0]; 6], &config).unwrap();
        assert!(report.converged);
        assert!(report.iterations.len() <= 3, "{} iterations", report.iterations.len());
        for (got, want) in report.inputs.iter().zip(&expect) {
            assert!((got[0] - want).abs() <= 1e-3, "{got:?} vs {want}");
        }
        assert!(common::trace_violations(&report, &config).is_empty());
    }
}

fn plant_model(n: usize, seed: u64) -> GpModel {
    let (x, y) = generate_training_data(n, seed);
    GpModel::new(x, y, KernelHyper::new(1.0, vec![1.2, 0.8], 6e-4).unwrap()).unwrap()
}

#[test]
fn large_initial_radius_forces_a_rejection() {
    let model = plant_model(150, 3);
    let ar = plant_ar_spec();
    let spec = TrackingMpcSpec {
        reference: -0.5,
        ..Default::default()
    };
    let config = ScpConfig {
        rho0: 10.0,
        ..Default::default()
    };
    let init = ArState::new(&ar, vec![0.6], Vec::new()).unwrap();
    let problem = MpcProblem {
        model: &model,
        spec: &spec,
        arspec: &ar,
        init: &init,
        previous_input: &[0.4],
    };
    let report = scp_solve(&problem, &vec![vec![0.4]; spec.horizon], &config).unwrap();
    let first = &report.iterations[0];
    let r = first.ratio.expect("first iterate should not stop");
    assert!(r < config.r0, "ratio {r}");
    assert!(!first.accepted);
    let second = &report.iterations[1];
    assert_eq!(second.phi, first.phi);
    assert_eq!(second.rho, 10.0 * config.beta_fail);
    assert!(common::trace_violations(&report, &config).is_empty());
}

#[test]
fn loose_stop_test_returns_the_projected_start() {
    let model = plant_model(100, 1);
    let ar = plant_ar_spec();
    let spec = TrackingMpcSpec::default();
    let config = ScpConfig {
        epsilon: 1e12,
        ..Default::default()
    };
    let init = ArState::new(&ar, vec![0.1], Vec::new()).unwrap();
    let problem = MpcProblem {
        model: &model,
        spec: &spec,
        arspec: &ar,
        init: &init,
        previous_input: &[0.0],
    };
    let start: Vec<Vec<f64>> = (0..12).map(|k| vec![if k % 2 == 0 { 3.0 } else { -3.0 }]).collect();
    let report = scp_solve(&problem, &start, &config).unwrap();
    assert_eq!(report.iterations.len(), 1);
    assert_eq!(report.termination, Termination::Converged);
    assert_eq!(report.inputs[0], vec![0.5]);
    assert_eq!(report.inputs[1], vec![0.0]);
    assert_eq!(report.inputs[2], vec![0.5]);
}

#[test]
fn traces_obey_trust_region_rules() {
    let model = plant_model(200, 7);
    let ar = plant_ar_spec();
    let config = ScpConfig::default();
    let mut checked = 0;
    for (i, &(y0, prev, r)) in [
        (0.0, 0.0, -0.5),
        (-0.5, -0.3, -0.2),
        (0.8, 0.9, -0.5),
        (-1.0, -1.0, 0.5),
        (0.3, -0.5, -1.15),
    ]
    .iter()
    .enumerate()
    {
        let spec = TrackingMpcSpec {
            reference: r,
            ..Default::default()
        };
        let init = ArState::new(&ar, vec![y0], Vec::new()).unwrap();
        let problem = MpcProblem {
            model: &model,
            spec: &spec,
            arspec: &ar,
            init: &init,
            previous_input: &[prev],
        };
        let u0: Vec<Vec<f64>> = (0..12).map(|k| vec![0.3 * ((k + i) as f64).sin()]).collect();
        let report = scp_solve(&problem, &u0, &config).unwrap();
        let bad = common::trace_violations(&report, &config);
        assert!(bad.is_empty(), "instance {i}: {bad:?}");
        checked += report.iterations.len();
    }
    assert!(checked > 5);
}

#[test]
fn subproblem_dimensions_do_not_depend_on_data_size() {
    let ar = ArSpec::new(1, 0, 1).unwrap();
    let spec = TrackingMpcSpec::default();
    let inputs = vec![vec![0.2]; spec.horizon];
    let shapes: Vec<_> = [100, 1500]
        .iter()
        .map(|&n| {
            let model = plant_model(n, 5);
            let init = ArState::new(&ar, vec![0.1], Vec::new()).unwrap();
            let rollout = rollout_mean(&model, &ar, &init, &inputs).unwrap();
            let points: Vec<_> = (0..spec.horizon)
                .map(|k| (rollout.states[k].regressor(&inputs[k]), vec![k > 0, true]))
                .collect();
            let lingps = lingp_build_batch(&model, &points, Execution::default()).unwrap();
            let nominal = Nominal {
                rollout: &rollout,
                inputs: &inputs,
                previous_input: &[0.0],
            };
            let sub = build_subproblem(&spec, &ar, &lingps, &nominal, 0.5, 1e3).unwrap();
            let p = &sub.program;
            let cones: Vec<(usize, usize)> =
                p.cones.iter().map(|c| (c.f.nrows(), c.f.ncols())).collect();
            (p.dim(), p.a_eq.shape(), cones)
        })
        .collect();
    assert_eq!(shapes[0], shapes[1]);
}

mod properties {
    use super::*;
    use lingp_mpc::scp::project_inputs;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn shared_model() -> &'static GpModel {
        static MODEL: OnceLock<GpModel> = OnceLock::new();
        MODEL.get_or_init(|| plant_model(120, 11))
    }

    fn in_set(spec: &TrackingMpcSpec, prev: f64, plan: &[Vec<f64>]) -> bool {
        let mut p = prev;
        plan.iter().all(|u| {
            let ok = u[0] >= spec.input_min
                && u[0] <= spec.input_max
                && u[0] - p >= spec.rate_min
                && u[0] - p <= spec.rate_max;
            p = u[0];
            ok
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn projection_lands_in_the_input_set(
            prev in -1.0f64..1.0,
            raw in prop::collection::vec(-3.0f64..3.0, 1..15),
        ) {
            let spec = TrackingMpcSpec::default();
            let plan: Vec<Vec<f64>> = raw.iter().map(|&u| vec![u]).collect();
            let out = project_inputs(&spec, &[prev], &plan);
            prop_assert!(in_set(&spec, prev, &out));
            prop_assert_eq!(project_inputs(&spec, &[prev], &out), out.clone());
            if in_set(&spec, prev, &plan) {
                prop_assert_eq!(out, plan);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn solver_traces_are_lawful(
            y0 in -1.0f64..1.0,
            prev in -1.0f64..1.0,
            r in -0.9f64..0.9,
            start in prop::collection::vec(-1.0f64..1.0, 6),
            rho0 in 0.05f64..4.0,
        ) {
            let ar = plant_ar_spec();
            let spec = TrackingMpcSpec { horizon: 6, reference: r, ..Default::default() };
            let config = ScpConfig { rho0, ..Default::default() };
            let init = ArState::new(&ar, vec![y0], Vec::new()).unwrap();
            let problem = MpcProblem {
                model: shared_model(),
                spec: &spec,
                arspec: &ar,
                init: &init,
                previous_input: &[prev],
            };
            let plan: Vec<Vec<f64>> = start.iter().map(|&u| vec![u]).collect();
            let report = scp_solve(&problem, &plan, &config).unwrap();
            let bad = common::trace_violations(&report, &config);
            prop_assert!(bad.is_empty(), "{:?}", bad);
            prop_assert!(in_set(&spec, prev, &report.inputs));
            // never worse than where the final penalty pass started
            let last_pass = report.iterations.last().unwrap().pass;
            let pass_start = report.iterations.iter().find(|r| r.pass == last_pass).unwrap().phi;
            prop_assert!(report.phi <= pass_start + 1e-9 * (1.0 + pass_start.abs()));
        }
    }
}
