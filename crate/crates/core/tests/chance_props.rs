mod common;

use ccto_core::chance::{allocate_budget, propagate_covariance, tighten_linear};
use ccto_core::normal::{inv_norm_cdf, norm_cdf};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn covariance(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
        let l = DMatrix::from_row_slice(n, n, &v);
        &l * l.transpose() + DMatrix::identity(n, n) * 1e-3
    })
}

fn row_and_cov() -> impl Strategy<Value = (Vec<f64>, DMatrix<f64>)> {
    (1usize..=3).prop_flat_map(|n| {
        (
            prop::collection::vec(-2.0f64..2.0, n).prop_filter("nonzero", |a| a.iter().any(|v| v.abs() > 0.05)),
            covariance(n),
        )
    })
}

proptest! {
    // a 3-sigma floor on a sampled probability fails now and then by chance,
    // so the cases are fixed
    #![proptest_config(ProptestConfig { cases: 20, rng_seed: RngSeed::Fixed(11), ..ProptestConfig::default() })]

    #[test]
    fn tightened_mean_meets_the_probability(
        (a, sigma) in row_and_cov(),
        b in -1.0f64..1.0,
        pick in 0usize..2,
        seed in 0u64..1000,
    ) {
        let delta = [0.01, 0.05][pick];
        let n = a.len();
        let bound = tighten_linear(&a, b, &sigma, delta).unwrap();
        let av = DVector::from_column_slice(&a);
        let mean = &av * (bound / av.norm_squared());
        let l = sigma.clone().cholesky().unwrap().l();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let samples = 100_000;
        let mut ok = 0usize;
        for _ in 0..samples {
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let x = &mean + &l * z;
            if av.dot(&x) <= b {
                ok += 1;
            }
        }
        let floor = 1.0 - delta - 3.0 * (delta / samples as f64).sqrt();
        prop_assert!(ok as f64 / samples as f64 >= floor, "{} < {}", ok as f64 / samples as f64, floor);
    }
}

proptest! {
    #[test]
    fn smaller_delta_tightens_more(
        (a, sigma) in row_and_cov(),
        b in -1.0f64..1.0,
        d1 in 1e-6f64..0.49,
        d2 in 1e-6f64..0.49,
    ) {
        prop_assume!((d1 - d2).abs() > 1e-9);
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(tighten_linear(&a, b, &sigma, lo).unwrap() < tighten_linear(&a, b, &sigma, hi).unwrap());
    }

    #[test]
    fn zeta_exceeds_eta(seed in 0u64..1_000_000, delta in 1e-6f64..0.5) {
        let mut p = common::random_problem(seed);
        p.chance.delta = delta;
        let b = allocate_budget(&p.chance, p.horizon, p.model.nc(), p.chance.state_rows_per_step()).unwrap();
        prop_assert!(b.zeta > b.eta);
    }

    #[test]
    fn propagated_covariances_stay_psd(seed in 0u64..1_000_000, noise in 1e-6f64..1e-1, sc in 0.0f64..0.1) {
        let mut p = common::random_problem(seed);
        let nx = p.model.nx();
        p.model.w = DMatrix::identity(nx, nx) * noise;
        p.model.sigma_c.fill(sc);
        p.model.sigma_f.fill(sc);
        for s in &propagate_covariance(&p).sigma_x {
            prop_assert!(s.clone().symmetric_eigen().eigenvalues.min() >= -1e-10);
        }
    }

    #[test]
    fn quantile_inverts_cdf(x in -6.0f64..6.0) {
        let back = inv_norm_cdf(norm_cdf(x)).unwrap();
        // one ulp of p above the median maps to ulp(p)/φ(x) in x
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        prop_assert!((back - x).abs() <= 1e-9 + 2.0 * f64::EPSILON * norm_cdf(x) / pdf);
    }
}
