//! Big-M coefficient tightening.
//!
//! For every pair the force gate `λ ≤ M z0` and the separation side of the
//! gap row `ȳ ≤ … + M z1` only need `M` as large as the largest `λ` (or `ȳ`)
//! attainable in the continuous relaxation. Each such bound is one LP.

use super::bnb::{solve_qp_relaxation, RelaxStatus};
use super::encode::MiqpProblem;
use super::qp::QpSettings;
use super::sparse::CsrMatrix;
use super::MiqpError;

/// Shrinks big-M coefficients to LP-implied bounds. Returns how many
/// coefficients changed. Integer-feasible points are unaffected.
///
/// Bounds at step `k` are the largest over every mode assignment of the pairs
/// at `k` (up to `2^probe_limit` assignments), which is valid because each
/// integer point picks one of them.
pub fn tighten_big_m(prob: &mut MiqpProblem, settings: &QpSettings, rounds: usize) -> Result<usize, MiqpError> {
    let vm = prob.var_map;
    let base: Vec<Option<bool>> = prob
        .binary_pairs
        .iter()
        .map(|&(a, _)| if prob.lb[a] == prob.ub[a] { Some(prob.lb[a] == 1.0) } else { None })
        .collect();
    let pair_cols: Vec<bool> = {
        let mut v = vec![false; prob.n_vars()];
        for &(a, b) in &prob.binary_pairs {
            v[a] = true;
            v[b] = true;
        }
        v
    };
    let mut changed = 0;
    for _ in 0..rounds {
        let mut round = 0;
        for k in 0..vm.horizon {
            let mut targets = Vec::new();
            for i in 0..vm.nc {
                let (z0, z1) = (vm.z(k, i, 0), vm.z(k, i, 1));
                if let Some(r) = row_named(&prob.in_names, &format!("force_gate[{k}][{i}]")) {
                    targets.push((r, z0));
                }
                if let Some(r) = row_named(&prob.in_names, &format!("gap_upper[{k}][{i}]")) {
                    targets.push((r, z1));
                }
            }
            let free: Vec<usize> = (0..vm.nc).map(|i| vm.pair(k, i)).filter(|&p| base[p].is_none()).collect();
            let combos: Vec<Vec<Option<bool>>> = if free.len() <= PROBE_LIMIT {
                (0..1usize << free.len())
                    .map(|mask| {
                        let mut f = base.clone();
                        for (b, &p) in free.iter().enumerate() {
                            f[p] = Some(mask >> b & 1 == 1);
                        }
                        f
                    })
                    .collect()
            } else {
                vec![base.clone()]
            };
            for &(r, z) in &targets {
                round += shrink(prob, &combos, &pair_cols, settings, r, z)? as usize;
            }
        }
        changed += round;
        if round == 0 {
            break;
        }
    }
    Ok(changed)
}

const PROBE_LIMIT: usize = 5;

fn row_named(names: &[String], name: &str) -> Option<usize> {
    names.iter().position(|n| n == name)
}

/// Row `r` reads `c·v − M z ≤ b`; replaces `M` by `max c·v − b` over the
/// relaxations in `combos` when that is smaller.
fn shrink(
    prob: &mut MiqpProblem,
    combos: &[Vec<Option<bool>>],
    pair_cols: &[bool],
    settings: &QpSettings,
    r: usize,
    z: usize,
) -> Result<bool, MiqpError> {
    let Some(slot) = entry(&prob.a_in, r, z) else { return Ok(false) };
    let big_m = -prob.a_in.values[slot];
    if big_m <= 0.0 {
        return Ok(false);
    }
    let mut lp = prob.clone();
    lp.h = CsrMatrix::zeros(prob.n_vars(), prob.n_vars());
    lp.f = vec![0.0; prob.n_vars()];
    lp.constant = 0.0;
    for (j, v) in prob.a_in.row(r) {
        if !pair_cols[j] {
            lp.f[j] = -v;
        }
    }
    let mut top = f64::NEG_INFINITY;
    for fixed in combos {
        let rel = match solve_qp_relaxation(&lp, fixed, settings) {
            Ok(rel) => rel,
            // unbounded or numerically troublesome: keep M
            Err(MiqpError::Model(_)) | Err(MiqpError::Qp(_)) => return Ok(false),
            Err(e) => return Err(e),
        };
        if rel.status == RelaxStatus::Optimal {
            top = top.max(-rel.objective - prob.b_in[r]);
        }
    }
    if top == f64::NEG_INFINITY {
        return Ok(false);
    }
    let bound = top.max(0.0) + 1e-7 * (1.0 + top.abs());
    if bound < 0.99 * big_m {
        prob.a_in.values[slot] = -bound;
        return Ok(true);
    }
    Ok(false)
}

fn entry(a: &CsrMatrix, r: usize, col: usize) -> Option<usize> {
    (a.indptr[r]..a.indptr[r + 1]).find(|&s| a.indices[s] == col)
}
