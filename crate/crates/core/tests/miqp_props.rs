mod common;

use std::time::Instant;

use ccto_core::miqp::export::{read_problem, read_solution, write_problem, write_solution};
use ccto_core::miqp::qp::{solve_qp, QpProblem, QpSettings, QpStatus};
use ccto_core::miqp::sparse::CsrMatrix;
use ccto_core::miqp::{prepare, solve_plan, BnbOptions, MiqpError};
use common::{enumerate, max_violation, random_problem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn branch_and_bound_matches_enumeration() {
    let mut feasible = 0;
    for seed in 0..50 {
        let p = random_problem(seed);
        let (_, _, miqp, _) = prepare(&p).unwrap();
        let start = Instant::now();
        let got = solve_plan(&p, &BnbOptions::default());
        let took = start.elapsed().as_secs_f64();
        assert!(took < 1.0, "seed {seed} took {took:.2} s");
        match (enumerate(&miqp), got) {
            (Some(best), Ok(run)) => {
                feasible += 1;
                let obj = run.plan.objective;
                assert!((obj - best).abs() <= 1e-6 * best.abs().max(1.0), "seed {seed}: {obj} vs {best}");
            }
            (None, Err(MiqpError::Infeasible)) => {}
            (e, g) => panic!("seed {seed}: enumeration {e:?}, branch and bound {:?}", g.map(|r| r.plan.objective)),
        }
    }
    // the generator should not be trivially infeasible
    assert!(feasible >= 25, "{feasible}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solutions_replay_and_respect_modes(seed in 1000u64..1_000_000) {
        let p = random_problem(seed);
        let opts = BnbOptions { trace: true, ..Default::default() };
        let Ok(run) = solve_plan(&p, &opts) else { return Ok(()) };
        let v = run.plan.to_vector(&run.miqp);
        prop_assert!(max_violation(&run.miqp, &v) <= 1e-6);

        // raw relaxation values; scaled so large objectives get the same relative slack
        for &(parent, child) in &run.trace {
            prop_assert!(child >= parent - 1e-9 * parent.abs().max(1.0), "parent {} child {}", parent, child);
        }

        let m = &p.model;
        for k in 0..p.horizon {
            let x = DVector::from_column_slice(&run.plan.x_mean[k]);
            let u = DVector::from_column_slice(&run.plan.u[k]);
            let lam = DVector::from_column_slice(&run.plan.lambda[k]);
            let y = &m.d * &x + &m.e * &u + &m.f * &lam + &m.h;
            for i in 0..m.nc() {
                if lam[i] > 1e-6 {
                    prop_assert_eq!(run.plan.z[k][i], 1);
                }
                if y[i] > p.chance.epsilon + 1e-6 {
                    prop_assert_eq!(run.plan.z[k][i], 0);
                }
            }
        }
    }

    #[test]
    fn export_round_trips(seed in 0u64..1_000_000) {
        let p = random_problem(seed);
        let (_, _, miqp, _) = prepare(&p).unwrap();
        let text = write_problem(&miqp);
        let back = read_problem(&text).unwrap();
        prop_assert_eq!(&back, &miqp);
        prop_assert_eq!(write_problem(&back), text);

        let x: Vec<f64> = (0..miqp.n_vars()).map(|j| (j as f64 * 0.37 + seed as f64).sin()).collect();
        let (obj, back) = read_solution(&write_solution(1.25, &x), miqp.n_vars()).unwrap();
        prop_assert_eq!(obj, 1.25);
        prop_assert_eq!(back, x);
    }

    #[test]
    fn qp_matches_active_set_enumeration(
        seed in 0u64..1_000_000,
        n in 2usize..5,
        m_in in 1usize..5,
    ) {
        let (qp, dense) = random_qp(seed, n, m_in);
        let r = solve_qp(&qp, &QpSettings::default()).unwrap();
        prop_assert_eq!(r.status, QpStatus::Solved);
        prop_assert!(r.kkt_residual <= 1e-8);
        let (xs, best) = dense.solve();
        prop_assert!((r.objective - best).abs() <= 1e-7 * (1.0 + best.abs()), "{} vs {}", r.objective, best);
        for (a, b) in r.x.iter().zip(&xs) {
            prop_assert!((a - b).abs() <= 1e-5, "{:?} vs {:?}", r.x, xs);
        }
    }
}

/// Dense copy of a strictly convex QP with one equality row.
struct DenseQp {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    a_in: DMatrix<f64>,
    b_in: DVector<f64>,
}

impl DenseQp {
    /// Tries every active set of inequality rows and keeps the best KKT point.
    fn solve(&self) -> (Vec<f64>, f64) {
        let n = self.q.len();
        let m_in = self.b_in.len();
        let mut best: Option<(Vec<f64>, f64)> = None;
        for mask in 0..1usize << m_in {
            let active: Vec<usize> = (0..m_in).filter(|i| mask >> i & 1 == 1).collect();
            let rows = 1 + active.len();
            if rows > n {
                continue;
            }
            let mut g = DMatrix::zeros(rows, n);
            let mut rhs = DVector::zeros(rows);
            g.row_mut(0).copy_from(&self.a_eq.row(0));
            rhs[0] = self.b_eq[0];
            for (r, &i) in active.iter().enumerate() {
                g.row_mut(r + 1).copy_from(&self.a_in.row(i));
                rhs[r + 1] = self.b_in[i];
            }
            let mut kkt = DMatrix::zeros(n + rows, n + rows);
            kkt.view_mut((0, 0), (n, n)).copy_from(&self.p);
            kkt.view_mut((0, n), (n, rows)).copy_from(&g.transpose());
            kkt.view_mut((n, 0), (rows, n)).copy_from(&g);
            let mut b = DVector::zeros(n + rows);
            b.rows_mut(0, n).copy_from(&(-&self.q));
            b.rows_mut(n, rows).copy_from(&rhs);
            let Some(sol) = kkt.lu().solve(&b) else { continue };
            let x = sol.rows(0, n).into_owned();
            let feasible = (&self.a_in * &x - &self.b_in).iter().all(|&v| v <= 1e-9)
                && (&self.a_eq * &x - &self.b_eq).amax() <= 1e-9;
            let dual_ok = (0..active.len()).all(|r| sol[n + 1 + r] >= -1e-9);
            if feasible && dual_ok {
                let obj = 0.5 * x.dot(&(&self.p * &x)) + self.q.dot(&x);
                if best.as_ref().is_none_or(|(_, b)| obj < *b) {
                    best = Some((x.as_slice().to_vec(), obj));
                }
            }
        }
        best.expect("feasible by construction")
    }
}

fn random_qp(seed: u64, n: usize, m_in: usize) -> (QpProblem, DenseQp) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut r = |s: f64| rng.random_range(-s..s);
    let l = DMatrix::from_fn(n, n, |_, _| r(1.0));
    let p = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let q = DVector::from_fn(n, |_, _| r(2.0));
    let a_eq = DMatrix::from_fn(1, n, |_, _| r(1.0));
    let a_in = DMatrix::from_fn(m_in, n, |_, _| r(1.0));
    // a point strictly inside keeps the instance feasible
    let x0 = DVector::from_fn(n, |_, _| r(1.0));
    let b_eq = &a_eq * &x0;
    let b_in = &a_in * &x0 + DVector::from_fn(m_in, |_, _| r(0.5).abs() + 0.01);

    let trip = |m: &DMatrix<f64>, upper: bool| -> Vec<(usize, usize, f64)> {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if !upper || j >= i {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        t
    };
    let qp = QpProblem {
        p_upper: CsrMatrix::from_triplets(n, n, &trip(&p, true)),
        q: q.as_slice().to_vec(),
        constant: 0.0,
        a_eq: CsrMatrix::from_triplets(1, n, &trip(&a_eq, false)),
        b_eq: b_eq.as_slice().to_vec(),
        a_in: CsrMatrix::from_triplets(m_in, n, &trip(&a_in, false)),
        b_in: b_in.as_slice().to_vec(),
        lb: vec![f64::NEG_INFINITY; n],
        ub: vec![f64::INFINITY; n],
    };
    (qp, DenseQp { p, q, a_eq, b_eq, a_in, b_in })
}
