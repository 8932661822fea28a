use serde::{Deserialize, Serialize};

use super::bnb::{
    solve_miqp, solve_miqp_seeded, solve_qp_relaxation, BnbOptions, MiqpSolution, RelaxStatus, SolverStats,
};
use super::encode::{encode, EncodeAudit, MiqpProblem};
use super::MiqpError;
use crate::chance::{allocate_budget, propagate_covariance, CovarianceTrajectory, RiskBudget};
use crate::lcp::{solve_lcp, LcpInstance, DEFAULT_TOL};
use crate::model::{ConfigError, TrajectoryProblem};

pub const PLAN_SCHEMA: &str = "ccto-plan/1";

/// Optimized nominal trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSolution {
    pub schema: String,
    pub problem: String,
    pub delta: f64,
    pub objective: f64,
    /// `x̄_0..x̄_N`.
    pub x_mean: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    /// `lambda[k]` is `λ_{k+1}`.
    pub lambda: Vec<Vec<f64>>,
    /// 1 where contact is selected (`z_{k,i,0} = 1`), 0 for separation.
    pub z: Vec<Vec<u8>>,
    pub solver_stats: SolverStats,
}

impl PlanSolution {
    pub fn decode(prob: &MiqpProblem, sol: &MiqpSolution) -> Self {
        let vm = prob.var_map;
        let n = vm.horizon;
        let x_mean = (0..=n).map(|k| (0..vm.nx).map(|i| sol.x[vm.x(k, i)]).collect()).collect();
        let u = (0..n).map(|k| (0..vm.nu).map(|j| sol.x[vm.u(k, j)]).collect()).collect();
        let lambda = (0..n).map(|k| (0..vm.nc).map(|i| sol.x[vm.lambda(k, i)]).collect()).collect();
        let z = (0..n).map(|k| (0..vm.nc).map(|i| u8::from(sol.modes[vm.pair(k, i)])).collect()).collect();
        Self {
            schema: PLAN_SCHEMA.to_string(),
            problem: String::new(),
            delta: f64::NAN,
            objective: sol.objective,
            x_mean,
            u,
            lambda,
            z,
            solver_stats: sol.stats.clone(),
        }
    }

    /// Decision vector in the column order of `vm`.
    pub fn to_vector(&self, prob: &MiqpProblem) -> Vec<f64> {
        let vm = prob.var_map;
        let mut v = vec![0.0; vm.n_vars()];
        for k in 0..=vm.horizon {
            for i in 0..vm.nx {
                v[vm.x(k, i)] = self.x_mean[k][i];
            }
        }
        for k in 0..vm.horizon {
            for j in 0..vm.nu {
                v[vm.u(k, j)] = self.u[k][j];
            }
            for i in 0..vm.nc {
                v[vm.lambda(k, i)] = self.lambda[k][i];
                let c = f64::from(self.z[k][i]);
                v[vm.z(k, i, 0)] = c;
                v[vm.z(k, i, 1)] = 1.0 - c;
            }
        }
        v
    }

    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        toml::to_string(self)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let plan: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if plan.schema != PLAN_SCHEMA {
            return Err(ConfigError::Schema { found: plan.schema, expected: PLAN_SCHEMA });
        }
        Ok(plan)
    }
}

/// Everything produced on the way to a plan.
#[derive(Debug, Clone)]
pub struct PlannedRun {
    pub plan: PlanSolution,
    pub budget: RiskBudget,
    pub covariance: CovarianceTrajectory,
    pub audit: EncodeAudit,
    pub miqp: MiqpProblem,
    pub trace: Vec<(f64, f64)>,
}

/// Budget, covariance and encoding for `problem`.
pub fn prepare(
    problem: &TrajectoryProblem,
) -> Result<(RiskBudget, CovarianceTrajectory, MiqpProblem, EncodeAudit), MiqpError> {
    problem.validate().map_err(|e| MiqpError::Model(e.to_string()))?;
    let budget =
        allocate_budget(&problem.chance, problem.horizon, problem.model.nc(), problem.chance.state_rows_per_step())?;
    let cov = propagate_covariance(problem);
    let (miqp, audit) = encode(problem, &budget, &cov)?;
    Ok((budget, cov, miqp, audit))
}

/// Allocate, propagate, encode and solve.
pub fn solve_plan(problem: &TrajectoryProblem, opts: &BnbOptions) -> Result<PlannedRun, MiqpError> {
    let (budget, covariance, miqp, audit) = prepare(problem)?;
    let seeds = mode_seeds(problem, &miqp, opts);
    let label = |mut plan: PlanSolution| {
        plan.problem = problem.name.clone();
        plan.delta = problem.chance.delta;
        plan
    };
    match solve_miqp_seeded(&miqp, opts, &seeds) {
        Ok(sol) => {
            let plan = label(PlanSolution::decode(&miqp, &sol));
            Ok(PlannedRun { plan, budget, covariance, audit, miqp, trace: sol.trace })
        }
        Err(MiqpError::NodeLimitReached { limit, incumbent }) => Err(MiqpError::PlanNodeLimit {
            limit,
            incumbent: incumbent.map(|s| Box::new(label(PlanSolution::decode(&miqp, &s)))),
        }),
        Err(e) => Err(e),
    }
}

/// Convenience wrapper returning only the plan.
pub fn branch_and_bound(prob: &MiqpProblem, opts: &BnbOptions) -> Result<PlanSolution, MiqpError> {
    solve_miqp(prob, opts).map(|s| PlanSolution::decode(prob, &s))
}

/// Mode guesses from nominal rollouts: zero control, and the controls of the
/// root relaxation. A row is put in contact when its gap stays below `ε`.
fn mode_seeds(problem: &TrajectoryProblem, miqp: &MiqpProblem, opts: &BnbOptions) -> Vec<Vec<bool>> {
    let vm = miqp.var_map;
    let mut controls = vec![vec![0.0; vm.nu * vm.horizon]];
    let free = vec![None; miqp.binary_pairs.len()];
    if let Ok(r) = solve_qp_relaxation(miqp, &free, &opts.qp) {
        if r.status == RelaxStatus::Optimal {
            controls.push(
                (0..vm.horizon).flat_map(|k| (0..vm.nu).map(move |j| (k, j))).map(|(k, j)| r.x[vm.u(k, j)]).collect(),
            );
        }
    }
    controls.iter().filter_map(|u| rollout_modes(problem, u)).collect()
}

fn rollout_modes(problem: &TrajectoryProblem, u: &[f64]) -> Option<Vec<bool>> {
    let m = &problem.model;
    let (nu, eps) = (m.nu(), problem.chance.epsilon);
    let mut x = problem.x_start_vec();
    let mut modes = Vec::with_capacity(problem.horizon * m.nc());
    for k in 0..problem.horizon {
        let uk = nalgebra::DVector::from_column_slice(&u[k * nu..(k + 1) * nu]);
        let q = &m.d * &x + &m.e * &uk + &m.h;
        let sol = solve_lcp(&LcpInstance::new(m.f.clone(), q).ok()?, DEFAULT_TOL).ok()?;
        modes.extend(sol.y.iter().map(|&y| y < eps));
        x = &m.a * &x + &m.b * &uk + &m.c * &sol.lambda + &m.g;
    }
    Some(modes)
}
