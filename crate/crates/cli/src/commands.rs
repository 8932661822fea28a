use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ccto_core::chance::RiskBudget;
use ccto_core::miqp::{solve_plan, BnbOptions, EncodeAudit, MiqpError, PlanSolution};
use ccto_core::montecarlo::{run_trials, summarize, trajectory_table, MonteCarloError, MonteCarloReport};

use crate::config::{ConfigError, RunConfig};

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_LIMIT: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::new(EXIT_CONFIG, e.0)
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", dir.display())))
}

pub fn solve(cfg: &RunConfig) -> Result<(), Failure> {
    let problem = cfg.build_problem()?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let stem = RunConfig::stem(&problem.name, cfg.delta);
    write(&dir.join(format!("{stem}.config.toml")), &cfg.to_toml())?;

    let mut opts = BnbOptions::default();
    if let Some(n) = cfg.node_limit {
        opts.node_limit = n;
    }
    let start = Instant::now();
    let run = solve_plan(&problem, &opts);
    let elapsed = start.elapsed().as_secs_f64();
    let run = match run {
        Ok(run) => run,
        Err(MiqpError::PlanNodeLimit { limit, incumbent }) => {
            let msg = format!("node limit {limit} reached");
            return Err(match incumbent {
                Some(plan) => {
                    let path = dir.join(format!("{stem}.plan.toml"));
                    write(&path, &plan_toml(&plan)?)?;
                    Failure::new(
                        EXIT_LIMIT,
                        format!(
                            "{msg}; best plan so far (objective {:.6}) written to {}",
                            plan.objective,
                            path.display()
                        ),
                    )
                }
                None => Failure::new(EXIT_LIMIT, format!("{msg} without a feasible plan")),
            });
        }
        Err(
            e @ (MiqpError::InfeasibleByLemma1 { .. } | MiqpError::EmptyTightenedWindow { .. } | MiqpError::Infeasible),
        ) => {
            let kind = match e {
                MiqpError::InfeasibleByLemma1 { .. } => "InfeasibleByLemma1",
                MiqpError::EmptyTightenedWindow { .. } => "EmptyTightenedWindow",
                _ => "Infeasible",
            };
            return Err(Failure::new(EXIT_INFEASIBLE, format!("{kind}: {e}")));
        }
        Err(MiqpError::Model(m)) => return Err(Failure::new(EXIT_CONFIG, m)),
        Err(e) => return Err(Failure::new(EXIT_OTHER, e.to_string())),
    };

    let plan_path = dir.join(format!("{stem}.plan.toml"));
    write(&plan_path, &plan_toml(&run.plan)?)?;
    write(&dir.join(format!("{stem}.audit.txt")), &audit_text(&problem.name, &run.budget, &run.audit))?;
    write(&dir.join(format!("{stem}.solve.log")), &solve_log(&run.plan, &run.budget, &run.audit))?;
    println!(
        "{}: delta {} objective {:.6} ({} nodes, {:.1} s) -> {}",
        problem.name,
        cfg.delta,
        run.plan.objective,
        run.plan.solver_stats.nodes,
        elapsed,
        plan_path.display()
    );
    Ok(())
}

fn plan_toml(plan: &PlanSolution) -> Result<String, Failure> {
    plan.to_toml().map_err(|e| Failure::new(EXIT_OTHER, e.to_string()))
}

fn audit_text(system: &str, budget: &RiskBudget, audit: &EncodeAudit) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# ccto-audit 1");
    let _ = writeln!(s, "system {system}");
    let _ = writeln!(s, "delta {:e}", budget.delta);
    let _ = writeln!(s, "theta {:e}", budget.theta);
    let _ = writeln!(s, "delta_state_row {:e}", budget.delta_state_row);
    let _ = writeln!(s, "alpha {:e}", budget.alpha);
    let _ = writeln!(s, "forced_modes {}", audit.forced_modes());
    let _ = writeln!(s, "\n# step row psi contact_threshold separation_threshold contact separation");
    for m in &audit.modes {
        let _ = writeln!(
            s,
            "{} {} {:e} {:e} {:e} {} {}",
            m.step,
            m.row,
            m.psi,
            m.contact_threshold,
            m.separation_threshold,
            yes_no(m.contact_feasible),
            yes_no(m.separation_feasible)
        );
    }
    let _ = writeln!(s, "\n# label step b kappa b_tightened");
    for r in &audit.state_rows {
        let _ = writeln!(s, "{} {} {:e} {:e} {:e}", r.label, r.step, r.b, r.kappa, r.b_tightened);
    }
    s
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "feasible"
    } else {
        "infeasible"
    }
}

fn solve_log(plan: &PlanSolution, budget: &RiskBudget, audit: &EncodeAudit) -> String {
    let st = &plan.solver_stats;
    let mut s = String::new();
    let _ = writeln!(s, "problem {} delta {}", plan.problem, plan.delta);
    let _ = writeln!(
        s,
        "budget: complementarity {:e} (theta {:e} per row), state {:e} ({:e} per row)",
        budget.delta_complementarity, budget.theta, budget.delta_state, budget.delta_state_row
    );
    let _ = writeln!(s, "modes fixed by the risk audit: {} of {}", audit.forced_modes(), audit.modes.len());
    let _ = writeln!(s, "nodes {} root bound {:.9} best bound {:.9}", st.nodes, st.root_bound, st.best_bound);
    let _ = writeln!(s, "objective {:.9}", plan.objective);
    let _ = writeln!(
        s,
        "qp iterations {} failures {} regularization {:e} max kkt residual {:e}",
        st.qp_iterations, st.qp_failures, st.regularization, st.max_kkt_residual
    );
    s
}

pub fn simulate(cfg: &RunConfig, plan_path: &Path, dump: bool) -> Result<(), Failure> {
    let text = std::fs::read_to_string(plan_path)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("plan {}: {e}", plan_path.display())))?;
    let plan = PlanSolution::from_toml(&text)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("plan {}: {e}", plan_path.display())))?;
    // the plan's own budget is the specified one
    let mut cfg = cfg.clone();
    if plan.delta > 0.0 && plan.delta <= 0.5 {
        cfg.delta = plan.delta;
    }
    let problem = cfg.build_problem()?;
    if !plan.problem.is_empty() && plan.problem != problem.name {
        return Err(Failure::new(EXIT_CONFIG, format!("plan was made for {:?}, not {:?}", plan.problem, problem.name)));
    }
    let outcomes = run_trials(&problem, &plan, cfg.trials, cfg.seed).map_err(|e| match e {
        MonteCarloError::Dimension(_) | MonteCarloError::NoTrials => Failure::new(EXIT_CONFIG, e.to_string()),
        MonteCarloError::Threads(_) => Failure::new(EXIT_OTHER, e.to_string()),
    })?;
    let report = summarize(&problem, &plan, &outcomes, cfg.seed);

    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let stem = RunConfig::stem(&problem.name, cfg.delta);
    write(&dir.join(format!("{stem}.sim.config.toml")), &cfg.to_toml())?;
    let text = report.to_toml().map_err(|e| Failure::new(EXIT_OTHER, e.to_string()))?;
    write(&dir.join(format!("{stem}.report.toml")), &text)?;
    if dump {
        write(&dir.join(format!("{stem}.trajectories.txt")), &trajectory_table(&outcomes))?;
    }
    println!(
        "{}: specified delta {} obtained delta {:.3} ± {:.3} ({} of {} trials violated, {} LCP failures)",
        problem.name,
        report.specified_delta,
        report.obtained_delta,
        report.ci95,
        report.violations,
        report.trials,
        report.lcp_failures
    );
    Ok(())
}

pub fn report(dir: &Path) -> Result<(), Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<_> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".report.toml")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::new(EXIT_CONFIG, format!("no reports in {}", dir.display())));
    }
    let mut groups: BTreeMap<String, Vec<MonteCarloReport>> = BTreeMap::new();
    for p in &paths {
        let text = std::fs::read_to_string(p).map_err(|e| Failure::new(EXIT_OTHER, format!("{}: {e}", p.display())))?;
        let r = MonteCarloReport::from_toml(&text)
            .map_err(|e| Failure::new(EXIT_CONFIG, format!("{}: {e}", p.display())))?;
        let series = dir.join(format!("{}.series.txt", RunConfig::stem(&r.problem, r.specified_delta)));
        write(&series, &series_text(&r))?;
        groups.entry(r.problem.clone()).or_default().push(r);
    }
    let table = summary_table(&mut groups);
    write(&dir.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// One table per system, rows ordered by decreasing specified delta.
pub fn summary_table(groups: &mut BTreeMap<String, Vec<MonteCarloReport>>) -> String {
    let mut s = String::new();
    for (system, reports) in groups.iter_mut() {
        reports.sort_by(|a, b| b.specified_delta.total_cmp(&a.specified_delta));
        let _ = writeln!(s, "# {system}");
        let _ =
            writeln!(s, "{:>12} {:>12} {:>10} {:>14} {:>8}", "specified", "obtained", "ci95", "objective", "trials");
        for r in reports.iter() {
            let _ = writeln!(
                s,
                "{:>12} {:>12.4} {:>10.4} {:>14.6} {:>8}",
                r.specified_delta, r.obtained_delta, r.ci95, r.objective, r.trials
            );
        }
        s.push('\n');
    }
    s
}

fn series_text(r: &MonteCarloReport) -> String {
    let nx = r.mean.first().map_or(0, Vec::len);
    let mut s = format!(
        "# ccto-series 1\n# {} delta {}: mean and pointwise {}% empirical percentile band over {} trials\nk",
        r.problem,
        r.specified_delta,
        r.band_level * 100.0,
        r.trials
    );
    for i in 1..=nx {
        let _ = write!(s, " mean_x{i} lower_x{i} upper_x{i}");
    }
    s.push('\n');
    for k in 0..r.mean.len() {
        let _ = write!(s, "{k}");
        for i in 0..nx {
            let _ = write!(s, " {:e} {:e} {:e}", r.mean[k][i], r.band_lower[k][i], r.band_upper[k][i]);
        }
        s.push('\n');
    }
    s
}
