//! Risk allocation and Gaussian chance-constraint machinery.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ChanceSpec, LinearChanceConstraint, OutputVariance, TrajectoryProblem};
use crate::normal::{norm_cdf, upper_quantile, OutOfDomain};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChanceError {
    #[error("risk allocation too loose: {name} = {value} must be below 0.5")]
    BudgetTooLoose { name: &'static str, value: f64 },
    #[error("counts must be positive (N = {n}, n_c = {nc}, L = {l})")]
    EmptyCount { n: usize, nc: usize, l: usize },
    #[error("negative variance a'Σa = {0:e}")]
    NegativeVariance(f64),
    #[error("violation probability {0} outside (0, 0.5)")]
    BadProbability(f64),
    #[error(transparent)]
    Domain(#[from] OutOfDomain),
}

/// Boole split of the joint budget into per-row allocations and the
/// corresponding Gaussian multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskBudget {
    pub delta: f64,
    pub delta_complementarity: f64,
    pub delta_state: f64,
    pub horizon: usize,
    pub nc: usize,
    pub state_rows: usize,
    /// Per complementarity row and step.
    pub theta: f64,
    /// Per state constraint and step.
    pub delta_state_row: f64,
    /// `Φ^{-1}(1 - Δ/(2NL))`.
    pub alpha: f64,
    /// `Φ^{-1}(1 - Δ/(4N n_c))`, used on both sides of the contact band.
    pub zeta: f64,
    /// `Φ^{-1}(1 - Δ/(2N n_c))`, used for the separation bound.
    pub eta: f64,
}

pub fn allocate_budget(
    spec: &ChanceSpec,
    horizon: usize,
    nc: usize,
    state_rows: usize,
) -> Result<RiskBudget, ChanceError> {
    if horizon == 0 || nc == 0 || state_rows == 0 {
        return Err(ChanceError::EmptyCount { n: horizon, nc, l: state_rows });
    }
    let delta = spec.delta;
    let half = delta / 2.0;
    let theta = half / (horizon * nc) as f64;
    let delta_state_row = half / (horizon * state_rows) as f64;
    if !(theta < 0.5) {
        return Err(ChanceError::BudgetTooLoose { name: "theta", value: theta });
    }
    if !(delta_state_row < 0.5) {
        return Err(ChanceError::BudgetTooLoose { name: "delta_state", value: delta_state_row });
    }
    let budget = RiskBudget {
        delta,
        delta_complementarity: half,
        delta_state: half,
        horizon,
        nc,
        state_rows,
        theta,
        delta_state_row,
        alpha: upper_quantile(delta_state_row)?,
        zeta: upper_quantile(theta / 2.0)?,
        eta: upper_quantile(theta)?,
    };
    assert!(budget.zeta > budget.eta && budget.eta > 0.0);
    Ok(budget)
}

impl RiskBudget {
    /// Allocation for one constraint row.
    pub fn row_delta(&self, c: &LinearChanceConstraint) -> f64 {
        self.delta_state_row * c.risk_share
    }

    pub fn row_alpha(&self, c: &LinearChanceConstraint) -> Result<f64, ChanceError> {
        Ok(upper_quantile(self.row_delta(c))?)
    }
}

/// Deterministic bound on the mean so that `Pr(a'x <= b) >= 1 - delta` for
/// `x ~ N(mean, Σ)`.
pub fn tighten_linear(a: &[f64], b: f64, sigma: &DMatrix<f64>, delta: f64) -> Result<f64, ChanceError> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(ChanceError::BadProbability(delta));
    }
    let v = quad_form(a, sigma);
    if v < -1e-12 {
        return Err(ChanceError::NegativeVariance(v));
    }
    let sd = v.max(0.0).sqrt();
    if sd == 0.0 {
        return Ok(b);
    }
    Ok(b - sd * upper_quantile(delta)?)
}

pub(crate) fn quad_form(a: &[f64], m: &DMatrix<f64>) -> f64 {
    let av = DVector::from_column_slice(a);
    (av.transpose() * m * &av)[(0, 0)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CccReport {
    /// Smallest violation level admitting the contact band.
    pub contact_threshold: f64,
    /// Smallest violation level admitting separation at the given mean.
    pub separation_threshold: f64,
    pub contact_feasible: bool,
    pub separation_feasible: bool,
}

impl CccReport {
    pub fn any_feasible(&self) -> bool {
        self.contact_feasible || self.separation_feasible
    }
}

/// Feasibility of both complementarity modes at level `theta` for a row with
/// relaxation `epsilon`, mean `y_mean` and standard deviation `sigma_y`.
pub fn ccc_feasibility(epsilon: f64, y_mean: f64, sigma_y: f64, theta: f64) -> CccReport {
    if sigma_y <= 0.0 {
        return CccReport {
            contact_threshold: 0.0,
            separation_threshold: 0.0,
            contact_feasible: true,
            separation_feasible: true,
        };
    }
    let contact_threshold = 2.0 * norm_cdf(-epsilon / (2.0 * sigma_y));
    let separation_threshold = norm_cdf(-(y_mean - epsilon) / sigma_y);
    CccReport {
        contact_threshold,
        separation_threshold,
        contact_feasible: theta > contact_threshold,
        separation_feasible: theta > separation_threshold,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceTrajectory {
    /// State covariances for steps `0..=N`.
    #[serde(with = "matrix_list")]
    pub sigma_x: Vec<DMatrix<f64>>,
    /// Variances of `y[k+1]` for `k` in `0..N`.
    pub sigma_y_diag: Vec<Vec<f64>>,
    /// `sqrt(Σ_y,ii)` per step and row.
    pub psi: Vec<Vec<f64>>,
}

mod matrix_list {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Vec<Vec<f64>>> =
            ms.iter().map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect()).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let v: Vec<Vec<Vec<f64>>> = Vec::deserialize(d)?;
        v.iter().map(|rows| crate::model::rows::from_rows(rows).map_err(D::Error::custom)).collect()
    }
}

impl CovarianceTrajectory {
    /// `sqrt(a' Σ_x[k] a)`.
    pub fn kappa(&self, a: &[f64], step: usize) -> f64 {
        quad_form(a, &self.sigma_x[step]).max(0.0).sqrt()
    }

    pub fn horizon(&self) -> usize {
        self.psi.len()
    }
}

/// Propagate state and complementarity covariances along the horizon with
/// the contact force fixed at its worst case `lambda_upper`.
pub fn propagate_covariance(problem: &TrajectoryProblem) -> CovarianceTrajectory {
    let m = &problem.model;
    let (nx, nc) = (m.nx(), m.nc());
    let lam2 = problem.lambda_upper * problem.lambda_upper;

    let c_var = DVector::from_fn(nx, |i, _| m.sigma_c.row(i).iter().map(|s| s * s).sum::<f64>() * lam2);
    let f_var = DVector::from_fn(nc, |i, _| m.sigma_f.row(i).iter().map(|s| s * s).sum::<f64>() * lam2);
    let sigma_c_lambda = DMatrix::from_diagonal(&c_var);

    let mut sigma_x = Vec::with_capacity(problem.horizon + 1);
    let mut sigma_y_diag = Vec::with_capacity(problem.horizon);
    let mut psi = Vec::with_capacity(problem.horizon);
    let mut cur = problem.sigma_start.clone();
    for _ in 0..problem.horizon {
        let dsd = match problem.chance.output_variance {
            OutputVariance::Full => (&m.d * &cur * m.d.transpose()).diagonal(),
            OutputVariance::ParameterOnly => DVector::zeros(nc),
        };
        let yv: Vec<f64> = (0..nc).map(|i| (dsd[i] + f_var[i] + m.v[(i, i)]).max(0.0)).collect();
        psi.push(yv.iter().map(|v| v.sqrt()).collect());
        sigma_y_diag.push(yv);
        let mut next = &m.a * &cur * m.a.transpose() + &sigma_c_lambda + &m.w;
        // keep exact symmetry
        next = (&next + next.transpose()) * 0.5;
        sigma_x.push(std::mem::replace(&mut cur, next));
    }
    sigma_x.push(cur);
    CovarianceTrajectory { sigma_x, sigma_y_diag, psi }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{build_cartpole, build_sliding_box};
    use crate::normal::norm_cdf;

    fn spec(delta: f64) -> ChanceSpec {
        ChanceSpec {
            delta,
            epsilon: 0.002,
            big_m: 100.0,
            path: vec![],
            terminal: vec![],
            output_variance: Default::default(),
        }
    }

    /// Bisection on Φ, independent of the Halley iteration.
    fn bisect_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0, 40.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if norm_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn budget_examples() {
        let b = allocate_budget(&spec(0.1), 20, 2, 4).unwrap();
        assert!((b.theta - 0.00125).abs() < 1e-18);
        assert!((b.delta_state_row - 0.000625).abs() < 1e-18);
        let b = allocate_budget(&spec(0.5), 20, 2, 1).unwrap();
        assert!((b.eta - bisect_quantile(1.0 - 0.00625)).abs() < 1e-9);
        assert!((b.eta - 2.4977).abs() < 1e-4);
        assert!(b.zeta > b.eta);
        assert!((b.alpha - bisect_quantile(1.0 - 0.5 / 40.0)).abs() < 1e-9);
    }

    #[test]
    fn budget_rejects_zero_counts() {
        assert!(matches!(allocate_budget(&spec(0.1), 0, 2, 1), Err(ChanceError::EmptyCount { .. })));
    }

    #[test]
    fn tighten_examples() {
        let zero = DMatrix::zeros(2, 2);
        assert_eq!(tighten_linear(&[1.0, 0.0], 0.05, &zero, 0.01).unwrap(), 0.05);
        let s = DMatrix::from_diagonal(&DVector::from_row_slice(&[1e-4, 0.0]));
        let t = tighten_linear(&[1.0, 0.0], 0.05, &s, 0.025).unwrap();
        assert!((t - (0.05 - 0.01 * bisect_quantile(0.975))).abs() < 1e-12);
        assert!((t - 0.030400).abs() < 1e-6);
        let s = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 4e-6]));
        let t = tighten_linear(&[0.0, 1.0], 0.15, &s, 0.5 - 1e-9).unwrap();
        assert!((t - 0.15).abs() < 1e-9);
    }

    #[test]
    fn tighten_errors() {
        let bad = DMatrix::from_diagonal(&DVector::from_row_slice(&[-1.0, 0.0]));
        assert!(matches!(tighten_linear(&[1.0, 0.0], 0.0, &bad, 0.1), Err(ChanceError::NegativeVariance(_))));
        assert!(matches!(tighten_linear(&[1.0], 0.0, &DMatrix::zeros(1, 1), 0.5), Err(ChanceError::BadProbability(_))));
    }

    #[test]
    fn tighten_monotone_in_delta() {
        let s = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.3]));
        let mut prev = f64::NEG_INFINITY;
        for d in [1e-6, 1e-4, 1e-2, 0.1, 0.3, 0.49] {
            let t = tighten_linear(&[1.0], 1.0, &s, d).unwrap();
            assert!(t > prev);
            prev = t;
        }
    }

    #[test]
    fn mode_threshold_examples() {
        // epsilon / (2 sigma) = Φ^{-1}(3/4) puts the contact threshold at 1/2.
        let q34 = bisect_quantile(0.75);
        let r = ccc_feasibility(1.0, 0.0, 1.0 / (2.0 * q34), 0.4);
        assert!((r.contact_threshold - 0.5).abs() < 1e-12);
        assert!(!r.contact_feasible);
        let r = ccc_feasibility(0.002, 0.0, 0.0, 1e-12);
        assert!(r.contact_feasible && r.separation_feasible);
        let r = ccc_feasibility(0.002, 0.0, 2e-4, 1e-3);
        assert!((r.contact_threshold / 5.733_031_437_583_878e-7 - 1.0).abs() < 1e-9);
        assert!(r.contact_feasible);
    }

    #[test]
    fn covariance_examples() {
        let p = build_sliding_box();
        let cov = propagate_covariance(&p);
        assert!((cov.sigma_x[1][(0, 0)] - 1.6e-7).abs() < 1e-20);
        assert_eq!(cov.sigma_x[0], p.sigma_start);
        assert_eq!(cov.sigma_x.len(), 21);
        assert_eq!(cov.psi.len(), 20);

        let quiet = build_cartpole().noise_free();
        let cov = propagate_covariance(&quiet);
        assert!(cov.psi.iter().flatten().all(|&v| v == 0.0));
        assert!(cov.sigma_x.iter().all(|m| m.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn one_step_additive() {
        let mut p = build_cartpole().noise_free();
        p.model.a = DMatrix::identity(4, 4);
        p.model.w = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0]));
        let cov = propagate_covariance(&p);
        assert_eq!(cov.sigma_x[1], p.model.w);
    }

    #[test]
    fn covariances_stay_psd() {
        for p in [build_cartpole(), build_sliding_box(), crate::benchmarks::build_dual_manipulators()] {
            let cov = propagate_covariance(&p);
            for s in &cov.sigma_x {
                assert!(s.clone().symmetric_eigen().eigenvalues.min() >= -1e-10);
            }
        }
    }
}
