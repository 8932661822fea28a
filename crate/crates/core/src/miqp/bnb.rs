//! Branch-and-bound over the mode pairs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::encode::MiqpProblem;
use super::presolve::tighten_big_m;
use super::qp::{solve_qp, QpProblem, QpSettings, QpStatus};
use super::sparse::CsrMatrix;
use super::MiqpError;

const INTEGRAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnbOptions {
    /// Relative optimality gap.
    pub gap_tol: f64,
    pub node_limit: usize,
    pub qp: QpSettings,
    /// Record `(parent bound, child relaxation objective)` for every solved child.
    pub trace: bool,
    /// Rounds of big-M tightening before the search; 0 disables it.
    pub tighten_rounds: usize,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self { gap_tol: 1e-6, node_limit: 1_000_000, qp: QpSettings::default(), trace: false, tighten_rounds: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaxStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relaxation {
    pub status: RelaxStatus,
    /// Full decision vector, fixed columns included.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub regularization: f64,
}

impl Relaxation {
    fn infeasible() -> Self {
        Self {
            status: RelaxStatus::Infeasible,
            x: vec![],
            objective: f64::INFINITY,
            iterations: 0,
            kkt_residual: f64::NAN,
            regularization: 0.0,
        }
    }
}

/// Solve the continuous relaxation with the pairs in `fixed` pinned
/// (`Some(true)` selects contact, `z_{k,i,0} = 1`). Fixed columns and columns
/// with equal bounds are substituted out before the QP is formed.
pub fn solve_qp_relaxation(
    prob: &MiqpProblem,
    fixed: &[Option<bool>],
    settings: &QpSettings,
) -> Result<Relaxation, MiqpError> {
    if fixed.len() != prob.binary_pairs.len() {
        return Err(MiqpError::Model(format!(
            "{} pair assignments for {} pairs",
            fixed.len(),
            prob.binary_pairs.len()
        )));
    }
    let nv = prob.n_vars();
    let mut val: Vec<Option<f64>> =
        (0..nv).map(|j| if prob.lb[j] == prob.ub[j] { Some(prob.lb[j]) } else { None }).collect();
    for (&(a, b), fx) in prob.binary_pairs.iter().zip(fixed) {
        if let Some(contact) = *fx {
            let (va, vb) = if contact { (1.0, 0.0) } else { (0.0, 1.0) };
            for (c, v) in [(a, va), (b, vb)] {
                if v < prob.lb[c] || v > prob.ub[c] {
                    return Ok(Relaxation::infeasible());
                }
                val[c] = Some(v);
            }
        }
    }
    let mut col_of = vec![usize::MAX; nv];
    let mut free = Vec::new();
    for j in 0..nv {
        if val[j].is_none() {
            col_of[j] = free.len();
            free.push(j);
        }
    }
    let vf: Vec<f64> = val.iter().map(|v| v.unwrap_or(0.0)).collect();
    let nf = free.len();

    let mut hv = vec![0.0; nv];
    let mut p_trip = Vec::new();
    for i in 0..nv {
        for (j, h) in prob.h.row(i) {
            hv[i] += h * vf[j];
            if i != j {
                hv[j] += h * vf[i];
            }
            if col_of[i] != usize::MAX && col_of[j] != usize::MAX {
                p_trip.push((col_of[i], col_of[j], h));
            }
        }
    }
    let constant = prob.constant
        + 0.5 * vf.iter().zip(&hv).map(|(a, b)| a * b).sum::<f64>()
        + prob.f.iter().zip(&vf).map(|(a, b)| a * b).sum::<f64>();
    let q: Vec<f64> = free.iter().map(|&j| prob.f[j] + hv[j]).collect();

    let restrict = |a: &CsrMatrix, b: &[f64], equality: bool| -> Option<(CsrMatrix, Vec<f64>)> {
        let mut trip = Vec::new();
        let mut rhs = Vec::new();
        for r in 0..a.nrows {
            let mut shift = 0.0;
            let mut scale: f64 = b[r].abs();
            let start = trip.len();
            for (j, v) in a.row(r) {
                if col_of[j] == usize::MAX {
                    shift += v * vf[j];
                    scale = scale.max((v * vf[j]).abs());
                } else {
                    trip.push((rhs.len(), col_of[j], v));
                }
            }
            let rr = b[r] - shift;
            if trip.len() == start {
                let tol = 1e-9 * (1.0 + scale);
                let ok = if equality { rr.abs() <= tol } else { rr >= -tol };
                if !ok {
                    return None;
                }
                continue;
            }
            rhs.push(rr);
        }
        Some((CsrMatrix::from_triplets(rhs.len(), nf, &trip), rhs))
    };
    let Some((a_eq, b_eq)) = restrict(&prob.a_eq, &prob.b_eq, true) else {
        return Ok(Relaxation::infeasible());
    };
    let Some((a_in, b_in)) = restrict(&prob.a_in, &prob.b_in, false) else {
        return Ok(Relaxation::infeasible());
    };
    let qp = QpProblem {
        p_upper: CsrMatrix::from_triplets(nf, nf, &p_trip),
        q,
        constant,
        a_eq,
        b_eq,
        a_in,
        b_in,
        lb: free.iter().map(|&j| prob.lb[j]).collect(),
        ub: free.iter().map(|&j| prob.ub[j]).collect(),
    };
    let res = solve_qp(&qp, settings)?;
    match res.status {
        QpStatus::PrimalInfeasible => Ok(Relaxation { iterations: res.iterations, ..Relaxation::infeasible() }),
        QpStatus::DualInfeasible => Err(MiqpError::Model("relaxation is unbounded below".into())),
        QpStatus::Solved | QpStatus::SolvedReducedAccuracy => {
            let mut x = vf;
            for (k, &j) in free.iter().enumerate() {
                x[j] = res.x[k];
            }
            Ok(Relaxation {
                status: RelaxStatus::Optimal,
                objective: res.objective,
                x,
                iterations: res.iterations,
                kkt_residual: res.kkt_residual,
                regularization: res.regularization,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverStats {
    pub nodes: usize,
    /// Root relaxation objective.
    pub root_bound: f64,
    /// Lower bound on the optimum at termination.
    pub best_bound: f64,
    /// Not serialized, so plan files are reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
    pub qp_iterations: usize,
    pub qp_failures: usize,
    /// Diagonal perturbation used by the QP engine.
    pub regularization: f64,
    pub max_kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiqpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// `true` for pairs in contact (`z_{k,i,0} = 1`).
    pub modes: Vec<bool>,
    pub stats: SolverStats,
    pub trace: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
struct Node {
    fixed: Vec<Option<bool>>,
    bound: f64,
    depth: usize,
    seq: u64,
    relax: Option<Relaxation>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Max-heap order: deeper first, then smaller bound, then older.
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.depth
            .cmp(&other.depth)
            .then_with(|| other.bound.total_cmp(&self.bound))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

type Incumbent = Option<(f64, Vec<f64>, Vec<bool>)>;

/// Solve with every pair fixed and keep the result if it improves `incumbent`.
fn try_leaf(
    prob: &MiqpProblem,
    fixed: &[Option<bool>],
    opts: &BnbOptions,
    stats: &mut SolverStats,
    incumbent: &mut Incumbent,
) -> Result<(), MiqpError> {
    let r = match solve_qp_relaxation(prob, fixed, &opts.qp) {
        Ok(r) => r,
        Err(MiqpError::Qp(_)) => {
            stats.qp_failures += 1;
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    stats.qp_iterations += r.iterations;
    if r.status == RelaxStatus::Optimal && incumbent.as_ref().is_none_or(|(v, _, _)| r.objective < *v) {
        let modes = fixed.iter().map(|f| f.unwrap_or(false)).collect();
        *incumbent = Some((r.objective, r.x, modes));
    }
    Ok(())
}

fn pair_value(prob: &MiqpProblem, x: &[f64], p: usize) -> f64 {
    x[prob.binary_pairs[p].0]
}

/// Depth-first branch-and-bound with best-bound tie-breaking. Branches on the
/// most fractional pair; at an integral node the rounded assignment is
/// re-solved with every pair fixed.
pub fn solve_miqp(prob: &MiqpProblem, opts: &BnbOptions) -> Result<MiqpSolution, MiqpError> {
    solve_miqp_seeded(prob, opts, &[])
}

/// Like [`solve_miqp`], with candidate mode assignments evaluated before the
/// search. Seeds only supply incumbents, so the result does not depend on them
/// beyond ties within the gap.
pub fn solve_miqp_seeded(
    prob: &MiqpProblem,
    opts: &BnbOptions,
    seeds: &[Vec<bool>],
) -> Result<MiqpSolution, MiqpError> {
    if !(opts.gap_tol >= 0.0) {
        return Err(MiqpError::Model(format!("gap tolerance {} must be nonnegative", opts.gap_tol)));
    }
    let start = Instant::now();
    let tightened;
    let prob = if opts.tighten_rounds > 0 {
        let mut p = prob.clone();
        tighten_big_m(&mut p, &opts.qp, opts.tighten_rounds)?;
        tightened = p;
        &tightened
    } else {
        prob
    };
    let np = prob.binary_pairs.len();
    let initial: Vec<Option<bool>> = prob
        .binary_pairs
        .iter()
        .map(|&(a, _)| if prob.lb[a] == prob.ub[a] { Some(prob.lb[a] == 1.0) } else { None })
        .collect();

    let mut stats = SolverStats { regularization: opts.qp.static_reg, root_bound: f64::NAN, ..Default::default() };
    let mut trace = Vec::new();
    let mut incumbent: Incumbent = None;
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for seed in seeds.iter().filter(|s| s.len() == np) {
        let fixed: Vec<Option<bool>> = initial.iter().zip(seed).map(|(f, &c)| Some(f.unwrap_or(c))).collect();
        try_leaf(prob, &fixed, opts, &mut stats, &mut incumbent)?;
    }
    let mut limit_hit = false;
    let prune_level = |inc: &Incumbent| -> f64 {
        match inc {
            Some((v, _, _)) => v - (opts.gap_tol * v.abs()).max(1e-10),
            None => f64::INFINITY,
        }
    };

    // Children are solved when created, so siblings carry their own bounds.
    let mut evaluate = |fixed: Vec<Option<bool>>, parent: f64, depth: usize, stats: &mut SolverStats| {
        stats.nodes += 1;
        seq += 1;
        let relax = match solve_qp_relaxation(prob, &fixed, &opts.qp) {
            Ok(r) => r,
            Err(MiqpError::Qp(_)) => {
                stats.qp_failures += 1;
                return Ok(Some(Node { fixed, bound: parent, depth, seq, relax: None }));
            }
            Err(e) => return Err(e),
        };
        stats.qp_iterations += relax.iterations;
        if opts.trace && depth > 0 {
            trace.push((parent, relax.objective));
        }
        if relax.status == RelaxStatus::Infeasible {
            return Ok(None);
        }
        stats.max_kkt_residual = stats.max_kkt_residual.max(relax.kkt_residual);
        let bound = relax.objective.max(parent);
        Ok(Some(Node { fixed, bound, depth, seq, relax: Some(relax) }))
    };

    if let Some(root) = evaluate(initial, f64::NEG_INFINITY, 0, &mut stats)? {
        if let Some(r) = &root.relax {
            stats.root_bound = r.objective;
            let rounded: Vec<Option<bool>> =
                (0..np).map(|p| root.fixed[p].or(Some(pair_value(prob, &r.x, p) > 0.5))).collect();
            try_leaf(prob, &rounded, opts, &mut stats, &mut incumbent)?;
        }
        heap.push(root);
    }

    while let Some(node) = heap.pop() {
        if node.bound >= prune_level(&incumbent) {
            continue;
        }
        let Some(relax) = node.relax else {
            // Without a relaxation, split on the first free pair.
            if let Some(p) = node.fixed.iter().position(|f| f.is_none()) {
                for choice in [true, false] {
                    if stats.nodes >= opts.node_limit {
                        limit_hit = true;
                        break;
                    }
                    let mut fixed = node.fixed.clone();
                    fixed[p] = Some(choice);
                    if let Some(child) = evaluate(fixed, node.bound, node.depth + 1, &mut stats)? {
                        heap.push(child);
                    }
                }
            }
            if limit_hit {
                break;
            }
            continue;
        };
        let mut branch: Option<(usize, f64)> = None;
        for p in 0..np {
            if node.fixed[p].is_some() {
                continue;
            }
            let v = pair_value(prob, &relax.x, p);
            let frac = v.min(1.0 - v);
            if frac > INTEGRAL_TOL && branch.is_none_or(|(_, best)| frac > best) {
                branch = Some((p, frac));
            }
        }
        let Some((p, _)) = branch else {
            let rounded: Vec<Option<bool>> =
                (0..np).map(|p| node.fixed[p].or(Some(pair_value(prob, &relax.x, p) > 0.5))).collect();
            if node.fixed.iter().all(Option::is_some) {
                if incumbent.as_ref().is_none_or(|(v, _, _)| relax.objective < *v) {
                    let modes = rounded.iter().map(|f| f.unwrap_or(false)).collect();
                    incumbent = Some((relax.objective, relax.x, modes));
                }
            } else {
                try_leaf(prob, &rounded, opts, &mut stats, &mut incumbent)?;
            }
            continue;
        };
        let up_first = pair_value(prob, &relax.x, p) >= 0.5;
        for choice in [up_first, !up_first] {
            if stats.nodes >= opts.node_limit {
                limit_hit = true;
                break;
            }
            let mut fixed = node.fixed.clone();
            fixed[p] = Some(choice);
            if let Some(child) = evaluate(fixed, node.bound, node.depth + 1, &mut stats)? {
                if child.bound < prune_level(&incumbent) {
                    heap.push(child);
                }
            }
        }
        if limit_hit {
            // keep the parent's bound in the open set
            heap.push(Node { fixed: node.fixed, bound: node.bound, depth: node.depth, seq: 0, relax: None });
            break;
        }
    }
    stats.wall_time_s = start.elapsed().as_secs_f64();
    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    match incumbent {
        Some((objective, x, modes)) => {
            stats.best_bound = open_bound.min(objective);
            let sol = MiqpSolution { x, objective, modes, stats, trace };
            if limit_hit {
                Err(MiqpError::NodeLimitReached { limit: opts.node_limit, incumbent: Some(Box::new(sol)) })
            } else {
                Ok(sol)
            }
        }
        None if limit_hit => Err(MiqpError::NodeLimitReached { limit: opts.node_limit, incumbent: None }),
        None => Err(MiqpError::Infeasible),
    }
}
