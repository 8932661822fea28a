#![allow(dead_code)]

use ccto_core::miqp::qp::QpSettings;
use ccto_core::miqp::{solve_qp_relaxation, MiqpProblem, RelaxStatus};
use ccto_core::model::{
    ChanceSpec, ControlBounds, LinearChanceConstraint, OutputVariance, SdlcsModel, TrajectoryProblem, PROBLEM_SCHEMA,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small random trajectory problem: a double integrator pushed by `nc`
/// complementarity forces with a diagonally dominant `F`.
pub fn random_problem(seed: u64) -> TrajectoryProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = rng.random_range(2..=4);
    let nc = rng.random_range(1..=2);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let dt = 0.1;
    let a = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, dt]);
    let c = DMatrix::from_fn(2, nc, |i, _| if i == 1 { u(-1.0, 1.0) * dt } else { 0.0 });
    let d = DMatrix::from_fn(nc, 2, |_, _| u(-1.0, 1.0));
    let e = DMatrix::from_fn(nc, 1, |_, _| u(-0.5, 0.5));
    let mut f = DMatrix::from_fn(nc, nc, |_, _| u(-0.3, 0.3));
    for i in 0..nc {
        f[(i, i)] = u(0.5, 1.5);
    }
    let h = DVector::from_fn(nc, |_, _| u(-0.3, 0.3));
    let w = DMatrix::from_diagonal(&DVector::from_element(2, 1e-6));
    let model = SdlcsModel {
        a,
        b,
        c,
        d,
        e,
        f,
        g: DVector::zeros(2),
        h,
        w,
        v: DMatrix::zeros(nc, nc),
        sigma_c: DMatrix::zeros(2, nc),
        sigma_f: DMatrix::zeros(nc, nc),
        sigma_h: DVector::zeros(nc),
    };
    let target = u(-0.2, 0.2);
    let chance = ChanceSpec {
        delta: 0.2,
        epsilon: 0.05,
        big_m: 20.0,
        path: vec![LinearChanceConstraint::upper("x1<=1", vec![1.0, 0.0], 1.0, (0..horizon).collect())],
        terminal: LinearChanceConstraint::two_sided(
            "x1_end",
            vec![1.0, 0.0],
            target - 0.3,
            target + 0.3,
            vec![horizon],
        )
        .to_vec(),
        output_variance: OutputVariance::Full,
    };
    TrajectoryProblem {
        schema: PROBLEM_SCHEMA.into(),
        name: format!("random{seed}"),
        horizon,
        lambda_upper: 5.0,
        x_start: vec![u(-0.3, 0.3), u(-0.3, 0.3)],
        sigma_start: DMatrix::zeros(2, 2),
        q: DMatrix::identity(2, 2) * 0.1,
        r: DMatrix::identity(1, 1),
        control_bounds: ControlBounds::symmetric(1, 5.0),
        model,
        chance,
    }
}

/// Best objective over every binary assignment, `None` when none is feasible.
pub fn enumerate(prob: &MiqpProblem) -> Option<f64> {
    let pairs = prob.binary_pairs.len();
    let mut best: Option<f64> = None;
    for mask in 0..1usize << pairs {
        let fixed: Vec<Option<bool>> = (0..pairs).map(|p| Some(mask >> p & 1 == 1)).collect();
        let r = solve_qp_relaxation(prob, &fixed, &QpSettings::default()).expect("leaf QP solves");
        if r.status == RelaxStatus::Optimal {
            best = Some(best.map_or(r.objective, |b: f64| b.min(r.objective)));
        }
    }
    best
}

/// Worst violation of the rows and bounds of `prob` at `v`.
pub fn max_violation(prob: &MiqpProblem, v: &[f64]) -> f64 {
    let eq = prob.a_eq.mul_vec(v);
    let ineq = prob.a_in.mul_vec(v);
    let mut worst = 0.0f64;
    for (r, b) in eq.iter().zip(&prob.b_eq) {
        worst = worst.max((r - b).abs());
    }
    for (r, b) in ineq.iter().zip(&prob.b_in) {
        worst = worst.max(r - b);
    }
    for ((x, lo), hi) in v.iter().zip(&prob.lb).zip(&prob.ub) {
        worst = worst.max(lo - x).max(x - hi);
    }
    worst
}

/// Every complementary basis whose solution is nonnegative.
pub fn lcp_solutions(f: &DMatrix<f64>, q: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = q.len();
    let mut out = Vec::new();
    for mask in 0..1usize << n {
        let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let mut lam = DVector::zeros(n);
        if !idx.is_empty() {
            let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| f[(idx[r], idx[c])]);
            let rhs = DVector::from_fn(idx.len(), |r, _| -q[idx[r]]);
            let Some(s) = sub.lu().solve(&rhs) else { continue };
            for (r, &i) in idx.iter().enumerate() {
                lam[i] = s[r];
            }
        }
        let y = f * &lam + q;
        if lam.iter().all(|&v| v >= -1e-12) && y.iter().all(|&v| v >= -1e-12) {
            out.push(lam);
        }
    }
    out
}
