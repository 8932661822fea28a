//! Open-loop rollouts of a plan under sampled noise and parameters.
//!
//! Trial `t` draws from `ChaCha8Rng::seed_from_u64(seed)` switched to stream
//! `t`, so results do not depend on how trials are spread over threads. Each
//! trial first draws its perturbed `C`, `F` and `h` (entry by entry, row-major),
//! then per step the process noise `w_k` followed by the output noise `v_k`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lcp::{solve_lcp, LcpInstance, DEFAULT_TOL};
use crate::miqp::PlanSolution;
use crate::model::{ConfigError, SdlcsModel, TrajectoryProblem};

pub const REPORT_SCHEMA: &str = "ccto-report/1";

/// Coverage of the pointwise percentile band in a report.
pub const BAND_LEVEL: f64 = 0.99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonteCarloError {
    #[error("plan does not match the problem: {0}")]
    Dimension(String),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("thread pool: {0}")]
    Threads(String),
}

/// Per-trial parameter sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDraw {
    pub c: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl ParameterDraw {
    pub fn nominal(m: &SdlcsModel) -> Self {
        Self { c: m.c.clone(), f: m.f.clone(), h: m.h.clone() }
    }

    pub fn sample(m: &SdlcsModel, rng: &mut ChaCha8Rng) -> Self {
        let mut d = Self::nominal(m);
        perturb(&mut d.c, &m.sigma_c, rng);
        perturb(&mut d.f, &m.sigma_f, rng);
        for i in 0..d.h.len() {
            let n: f64 = StandardNormal.sample(rng);
            d.h[i] += m.sigma_h[i] * n;
        }
        d
    }
}

fn perturb(target: &mut DMatrix<f64>, sigma: &DMatrix<f64>, rng: &mut ChaCha8Rng) {
    for i in 0..target.nrows() {
        for j in 0..target.ncols() {
            let n: f64 = StandardNormal.sample(rng);
            target[(i, j)] += sigma[(i, j)] * n;
        }
    }
}

/// `L` with `L Lᵀ = S` for a symmetric PSD `S`.
fn sqrt_factor(s: &DMatrix<f64>) -> DMatrix<f64> {
    if s.nrows() == 0 || s.iter().all(|&v| v == 0.0) {
        return DMatrix::zeros(s.nrows(), s.ncols());
    }
    let off_diagonal = (0..s.nrows()).any(|i| (0..s.ncols()).any(|j| i != j && s[(i, j)] != 0.0));
    if !off_diagonal {
        return DMatrix::from_diagonal(&s.diagonal().map(|v| v.max(0.0).sqrt()));
    }
    let eig = s.clone().symmetric_eigen();
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

fn gaussian(l: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = DVector::from_fn(l.ncols(), |_, _| StandardNormal.sample(rng));
    l * n
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    /// Realized `x_0..x_N`.
    pub states: Vec<Vec<f64>>,
    /// `lambdas[k]` is the realized `λ_{k+1}`.
    pub lambdas: Vec<Vec<f64>>,
    pub violated: bool,
    pub first_violation: Option<(usize, String)>,
    /// Labels of every constraint violated at least once.
    pub violated_labels: Vec<String>,
    pub lcp_failures: usize,
}

fn check_plan(problem: &TrajectoryProblem, plan: &PlanSolution) -> Result<(), MonteCarloError> {
    let m = &problem.model;
    let n = problem.horizon;
    if plan.horizon() != n || plan.u.iter().any(|u| u.len() != m.nu()) {
        return Err(MonteCarloError::Dimension(format!(
            "plan has {} control steps of width {:?}, problem needs {} of width {}",
            plan.horizon(),
            plan.u.first().map(Vec::len),
            n,
            m.nu()
        )));
    }
    if plan.lambda.iter().any(|l| l.len() != m.nc()) {
        return Err(MonteCarloError::Dimension(format!("plan forces do not have {} components", m.nc())));
    }
    if plan.x_mean.len() != n + 1 || plan.x_mean.iter().any(|x| x.len() != m.nx()) {
        return Err(MonteCarloError::Dimension(format!("plan states are not {}x{}", n + 1, m.nx())));
    }
    Ok(())
}

/// One rollout. The LCP at step `k` uses the realized `x_k`; a failed solve
/// marks the trial violated and applies zero force for that step.
pub fn rollout(
    problem: &TrajectoryProblem,
    plan: &PlanSolution,
    draw: &ParameterDraw,
    rng: &mut ChaCha8Rng,
) -> Result<TrialOutcome, MonteCarloError> {
    check_plan(problem, plan)?;
    Ok(rollout_with(problem, plan, draw, &sqrt_factor(&problem.model.w), &sqrt_factor(&problem.model.v), rng))
}

fn rollout_with(
    problem: &TrajectoryProblem,
    plan: &PlanSolution,
    draw: &ParameterDraw,
    lw: &DMatrix<f64>,
    lv: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> TrialOutcome {
    let m = &problem.model;
    let mut x = problem.x_start_vec();
    if problem.sigma_start.iter().any(|&v| v != 0.0) {
        x += gaussian(&sqrt_factor(&problem.sigma_start), rng);
    }
    let mut states = vec![x.as_slice().to_vec()];
    let mut lambdas = Vec::with_capacity(problem.horizon);
    let mut lcp_failures = 0;
    for k in 0..problem.horizon {
        let u = DVector::from_column_slice(&plan.u[k]);
        let w = gaussian(lw, rng);
        let v = gaussian(lv, rng);
        let q = &m.d * &x + &m.e * &u + &draw.h + v;
        let lambda = match LcpInstance::new(draw.f.clone(), q).and_then(|inst| solve_lcp(&inst, DEFAULT_TOL)) {
            Ok(sol) => sol.lambda,
            Err(_) => {
                lcp_failures += 1;
                DVector::zeros(m.nc())
            }
        };
        x = &m.a * &x + &m.b * &u + &draw.c * &lambda + &m.g + w;
        lambdas.push(lambda.as_slice().to_vec());
        states.push(x.as_slice().to_vec());
    }

    let mut first_violation: Option<(usize, String)> = None;
    let mut violated_labels = Vec::new();
    for c in problem.chance.constraints() {
        let mut hit = false;
        for &k in &c.steps {
            if c.is_violated(&states[k]) {
                hit = true;
                if first_violation.as_ref().is_none_or(|(s, _)| k < *s) {
                    first_violation = Some((k, c.label.clone()));
                }
            }
        }
        if hit {
            violated_labels.push(c.label.clone());
        }
    }
    TrialOutcome {
        violated: first_violation.is_some() || lcp_failures > 0,
        states,
        lambdas,
        first_violation,
        violated_labels,
        lcp_failures,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub schema: String,
    pub problem: String,
    pub specified_delta: f64,
    pub objective: f64,
    pub trials: usize,
    pub violations: usize,
    pub obtained_delta: f64,
    /// Half-width of the normal-approximation 95% binomial interval.
    pub ci95: f64,
    pub per_constraint: BTreeMap<String, usize>,
    pub lcp_failures: usize,
    pub seed: u64,
    /// Pointwise mean and empirical percentiles of the realized states,
    /// indexed `[k][i]`.
    pub mean: Vec<Vec<f64>>,
    pub band_lower: Vec<Vec<f64>>,
    pub band_upper: Vec<Vec<f64>>,
    pub band_level: f64,
}

impl MonteCarloReport {
    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        toml::to_string(self)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let r: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if r.schema != REPORT_SCHEMA {
            return Err(ConfigError::Schema { found: r.schema, expected: REPORT_SCHEMA });
        }
        Ok(r)
    }
}

/// Worker count: `CCTO_THREADS` when set and positive, otherwise rayon's default.
pub fn thread_count() -> usize {
    std::env::var("CCTO_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Runs every trial and returns the outcomes in trial order.
pub fn run_trials(
    problem: &TrajectoryProblem,
    plan: &PlanSolution,
    trials: usize,
    seed: u64,
) -> Result<Vec<TrialOutcome>, MonteCarloError> {
    if trials == 0 {
        return Err(MonteCarloError::NoTrials);
    }
    check_plan(problem, plan)?;
    let lw = sqrt_factor(&problem.model.w);
    let lv = sqrt_factor(&problem.model.v);
    let one = |t: usize| {
        let mut rng = trial_rng(seed, t);
        let draw = ParameterDraw::sample(&problem.model, &mut rng);
        rollout_with(problem, plan, &draw, &lw, &lv, &mut rng)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| MonteCarloError::Threads(e.to_string()))?;
    Ok(pool.install(|| (0..trials).into_par_iter().map(one).collect()))
}

pub fn summarize(
    problem: &TrajectoryProblem,
    plan: &PlanSolution,
    outcomes: &[TrialOutcome],
    seed: u64,
) -> MonteCarloReport {
    let trials = outcomes.len();
    let violations = outcomes.iter().filter(|o| o.violated).count();
    let p = violations as f64 / trials as f64;
    let mut per_constraint: BTreeMap<String, usize> =
        problem.chance.constraints().map(|c| (c.label.clone(), 0)).collect();
    for o in outcomes {
        for l in &o.violated_labels {
            *per_constraint.entry(l.clone()).or_default() += 1;
        }
    }
    let (mean, band_lower, band_upper) = bands(outcomes, problem.horizon + 1, problem.model.nx());
    MonteCarloReport {
        schema: REPORT_SCHEMA.into(),
        problem: problem.name.clone(),
        specified_delta: problem.chance.delta,
        objective: plan.objective,
        trials,
        violations,
        obtained_delta: p,
        ci95: 1.96 * (p * (1.0 - p) / trials as f64).sqrt(),
        per_constraint,
        lcp_failures: outcomes.iter().map(|o| o.lcp_failures).sum(),
        seed,
        mean,
        band_lower,
        band_upper,
        band_level: BAND_LEVEL,
    }
}

type Series = Vec<Vec<f64>>;

fn bands(outcomes: &[TrialOutcome], steps: usize, nx: usize) -> (Series, Series, Series) {
    let tail = (1.0 - BAND_LEVEL) / 2.0;
    let mut mean = vec![vec![0.0; nx]; steps];
    let mut lo = vec![vec![0.0; nx]; steps];
    let mut hi = vec![vec![0.0; nx]; steps];
    let mut col = Vec::with_capacity(outcomes.len());
    for k in 0..steps {
        for i in 0..nx {
            col.clear();
            col.extend(outcomes.iter().map(|o| o.states[k][i]));
            col.sort_by(f64::total_cmp);
            mean[k][i] = col.iter().sum::<f64>() / col.len() as f64;
            lo[k][i] = percentile(&col, tail);
            hi[k][i] = percentile(&col, 1.0 - tail);
        }
    }
    (mean, lo, hi)
}

/// Linear interpolation between order statistics of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

pub fn estimate_violation(
    problem: &TrajectoryProblem,
    plan: &PlanSolution,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloReport, MonteCarloError> {
    let outcomes = run_trials(problem, plan, trials, seed)?;
    Ok(summarize(problem, plan, &outcomes, seed))
}

/// Columnar dump, one row per trial and step.
pub fn trajectory_table(outcomes: &[TrialOutcome]) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let (nx, nc) =
        outcomes.first().map(|o| (o.states[0].len(), o.lambdas.first().map_or(0, Vec::len))).unwrap_or((0, 0));
    s.push_str("# ccto-trajectories 1\ntrial k");
    for i in 0..nx {
        let _ = write!(s, " x{}", i + 1);
    }
    for i in 0..nc {
        let _ = write!(s, " lambda{}", i + 1);
    }
    s.push_str(" violated lcp_failures\n");
    for (t, o) in outcomes.iter().enumerate() {
        for (k, x) in o.states.iter().enumerate() {
            let _ = write!(s, "{t} {k}");
            for v in x {
                let _ = write!(s, " {v:e}");
            }
            // λ_k is the force that produced x_k; none at k = 0
            for i in 0..nc {
                let v = if k == 0 { f64::NAN } else { o.lambdas[k - 1][i] };
                let _ = write!(s, " {v:e}");
            }
            let _ = writeln!(s, " {} {}", u8::from(o.violated), o.lcp_failures);
        }
    }
    s
}
