//! Big-M mixed-integer encoding of the chance-constrained trajectory problem.

use serde::{Deserialize, Serialize};

use super::sparse::CsrMatrix;
use super::MiqpError;
use crate::chance::{ccc_feasibility, CovarianceTrajectory, RiskBudget};
use crate::model::TrajectoryProblem;

/// Column layout of the decision vector.
///
/// `x̄_0..x̄_N` come first, then `u_0..u_{N-1}`, then `λ_1..λ_N` (stored by the
/// step `k` of the transition that produces them), then the mode binaries
/// `z_{k,i,0}, z_{k,i,1}` interleaved per pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarMap {
    pub nx: usize,
    pub nu: usize,
    pub nc: usize,
    pub horizon: usize,
}

impl VarMap {
    pub fn x(&self, k: usize, i: usize) -> usize {
        debug_assert!(k <= self.horizon && i < self.nx);
        k * self.nx + i
    }

    pub fn u(&self, k: usize, j: usize) -> usize {
        debug_assert!(k < self.horizon && j < self.nu);
        (self.horizon + 1) * self.nx + k * self.nu + j
    }

    /// Column of `λ_{k+1, i}`.
    pub fn lambda(&self, k: usize, i: usize) -> usize {
        debug_assert!(k < self.horizon && i < self.nc);
        (self.horizon + 1) * self.nx + self.horizon * self.nu + k * self.nc + i
    }

    pub fn z(&self, k: usize, i: usize, mode: usize) -> usize {
        debug_assert!(k < self.horizon && i < self.nc && mode < 2);
        self.z_offset() + 2 * (k * self.nc + i) + mode
    }

    fn z_offset(&self) -> usize {
        (self.horizon + 1) * self.nx + self.horizon * (self.nu + self.nc)
    }

    pub fn n_vars(&self) -> usize {
        self.z_offset() + 2 * self.horizon * self.nc
    }

    pub fn n_pairs(&self) -> usize {
        self.horizon * self.nc
    }

    /// Pair index of `(k, i)`.
    pub fn pair(&self, k: usize, i: usize) -> usize {
        k * self.nc + i
    }

    pub fn name(&self, col: usize) -> String {
        let xs = (self.horizon + 1) * self.nx;
        let us = xs + self.horizon * self.nu;
        let ls = us + self.horizon * self.nc;
        if col < xs {
            format!("xbar[{}][{}]", col / self.nx, col % self.nx)
        } else if col < us {
            let c = col - xs;
            format!("u[{}][{}]", c / self.nu, c % self.nu)
        } else if col < ls {
            let c = col - us;
            format!("lambda[{}][{}]", c / self.nc + 1, c % self.nc)
        } else {
            let c = col - ls;
            let pair = c / 2;
            format!("z[{}][{}][{}]", pair / self.nc, pair % self.nc, c % 2)
        }
    }

    /// Inverse of [`VarMap::name`].
    pub fn column(&self, name: &str) -> Option<usize> {
        let (head, rest) = name.split_once('[')?;
        let idx: Vec<usize> = rest.trim_end_matches(']').split("][").map(|s| s.parse().ok()).collect::<Option<_>>()?;
        let col = match (head, idx.as_slice()) {
            ("xbar", &[k, i]) if k <= self.horizon && i < self.nx => self.x(k, i),
            ("u", &[k, j]) if k < self.horizon && j < self.nu => self.u(k, j),
            ("lambda", &[k1, i]) if k1 >= 1 && k1 <= self.horizon && i < self.nc => self.lambda(k1 - 1, i),
            ("z", &[k, i, m]) if k < self.horizon && i < self.nc && m < 2 => self.z(k, i, m),
            _ => return None,
        };
        Some(col)
    }
}

/// Standard-form MIQP: minimize `½ v'Hv + f'v + constant` subject to
/// `A_eq v = b_eq`, `A_in v <= b_in`, `lb <= v <= ub`, every pair in
/// `binary_pairs` binary and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MiqpProblem {
    /// Upper triangle of H.
    pub h: CsrMatrix,
    pub f: Vec<f64>,
    pub constant: f64,
    pub a_eq: CsrMatrix,
    pub b_eq: Vec<f64>,
    pub a_in: CsrMatrix,
    pub b_in: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub binary_pairs: Vec<(usize, usize)>,
    pub var_map: VarMap,
    pub eq_names: Vec<String>,
    pub in_names: Vec<String>,
}

impl MiqpProblem {
    pub fn n_vars(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        let mut s = self.constant;
        for i in 0..self.h.nrows {
            for (j, h) in self.h.row(i) {
                s += if i == j { 0.5 * h * v[i] * v[i] } else { h * v[i] * v[j] };
            }
        }
        s + self.f.iter().zip(v).map(|(f, v)| f * v).sum::<f64>()
    }

    /// Largest violation of any row, bound or pair constraint by `v`.
    pub fn max_violation(&self, v: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (r, b) in self.a_eq.mul_vec(v).iter().zip(&self.b_eq) {
            worst = worst.max((r - b).abs());
        }
        for (r, b) in self.a_in.mul_vec(v).iter().zip(&self.b_in) {
            worst = worst.max(r - b);
        }
        for j in 0..v.len() {
            worst = worst.max(self.lb[j] - v[j]).max(v[j] - self.ub[j]);
        }
        for &(a, b) in &self.binary_pairs {
            worst = worst.max((v[a] + v[b] - 1.0).abs());
            for z in [v[a], v[b]] {
                worst = worst.max(z.min(1.0 - z).max(0.0));
            }
        }
        worst
    }
}

/// Mode availability of one complementarity row at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAudit {
    pub step: usize,
    pub row: usize,
    pub psi: f64,
    pub contact_threshold: f64,
    pub separation_threshold: f64,
    pub contact_feasible: bool,
    pub separation_feasible: bool,
}

/// Tightened right-hand side of one state row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRowAudit {
    pub label: String,
    pub step: usize,
    pub b: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub b_tightened: f64,
}

/// Pre-solve record of the chance-constraint reformulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeAudit {
    pub theta: f64,
    pub modes: Vec<ModeAudit>,
    pub state_rows: Vec<StateRowAudit>,
}

impl EncodeAudit {
    pub fn forced_modes(&self) -> usize {
        self.modes.iter().filter(|m| m.contact_feasible != m.separation_feasible).count()
    }
}

/// Check both modes of every `(k, i)` before any solve. Separation is judged
/// at the largest admissible mean `ȳ = M`.
pub fn audit(
    problem: &TrajectoryProblem,
    budget: &RiskBudget,
    cov: &CovarianceTrajectory,
) -> Result<EncodeAudit, MiqpError> {
    let spec = &problem.chance;
    let mut modes = Vec::new();
    for k in 0..problem.horizon {
        for i in 0..problem.model.nc() {
            let psi = cov.psi[k][i];
            let rep = ccc_feasibility(spec.epsilon, spec.big_m, psi, budget.theta);
            modes.push(ModeAudit {
                step: k,
                row: i,
                psi,
                contact_threshold: rep.contact_threshold,
                separation_threshold: rep.separation_threshold,
                contact_feasible: rep.contact_feasible,
                separation_feasible: rep.separation_feasible,
            });
        }
    }
    if let Some(m) = modes.iter().find(|m| !m.contact_feasible && !m.separation_feasible) {
        return Err(MiqpError::InfeasibleByLemma1 {
            step: m.step,
            row: m.row,
            theta: budget.theta,
            contact_threshold: m.contact_threshold,
            separation_threshold: m.separation_threshold,
        });
    }
    let mut state_rows = Vec::new();
    for c in spec.constraints() {
        let alpha = budget.row_alpha(c)?;
        for &k in &c.steps {
            let kappa = cov.kappa(&c.a, k);
            state_rows.push(StateRowAudit {
                label: c.label.clone(),
                step: k,
                b: c.b,
                kappa,
                alpha,
                b_tightened: c.b - alpha * kappa,
            });
        }
    }
    // Opposite normals at the same step bound a window; it must stay nonempty.
    for (ia, ra) in state_rows.iter().enumerate() {
        let ca = find_constraint(problem, &ra.label);
        for rb in state_rows.iter().skip(ia + 1) {
            if ra.step != rb.step {
                continue;
            }
            let cb = find_constraint(problem, &rb.label);
            let opposite = ca.iter().zip(cb).all(|(x, y)| x + y == 0.0);
            if opposite && ra.b_tightened + rb.b_tightened < 0.0 {
                return Err(MiqpError::EmptyTightenedWindow {
                    upper: ra.label.clone(),
                    lower: rb.label.clone(),
                    step: ra.step,
                    width: ra.b_tightened + rb.b_tightened,
                });
            }
        }
    }
    Ok(EncodeAudit { theta: budget.theta, modes, state_rows })
}

fn find_constraint<'a>(problem: &'a TrajectoryProblem, label: &str) -> &'a [f64] {
    &problem.chance.constraints().find(|c| c.label == label).expect("label from the same problem").a
}

struct Rows {
    trip: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
    names: Vec<String>,
}

impl Rows {
    fn new() -> Self {
        Self { trip: vec![], rhs: vec![], names: vec![] }
    }

    fn push(&mut self, name: String, coeffs: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        let r = self.rhs.len();
        self.trip.extend(coeffs.into_iter().filter(|&(_, v)| v != 0.0).map(|(c, v)| (r, c, v)));
        self.rhs.push(rhs);
        self.names.push(name);
    }

    fn matrix(&self, ncols: usize) -> CsrMatrix {
        CsrMatrix::from_triplets(self.rhs.len(), ncols, &self.trip)
    }
}

/// Build the MIQP. Modes ruled out by the chance analysis are fixed through
/// the bounds of their binaries.
pub fn encode(
    problem: &TrajectoryProblem,
    budget: &RiskBudget,
    cov: &CovarianceTrajectory,
) -> Result<(MiqpProblem, EncodeAudit), MiqpError> {
    problem.validate().map_err(|e| MiqpError::Model(e.to_string()))?;
    if cov.horizon() != problem.horizon || budget.horizon != problem.horizon {
        return Err(MiqpError::Model("covariance or budget built for a different horizon".into()));
    }
    let audit = audit(problem, budget, cov)?;
    let m = &problem.model;
    let (nx, nu, nc, n) = (m.nx(), m.nu(), m.nc(), problem.horizon);
    let vm = VarMap { nx, nu, nc, horizon: n };
    let nv = vm.n_vars();
    let spec = &problem.chance;
    let (eps, big_m) = (spec.epsilon, spec.big_m);

    let mut h = Vec::new();
    for k in 0..=n {
        for i in 0..nx {
            for j in i..nx {
                h.push((vm.x(k, i), vm.x(k, j), 2.0 * problem.q[(i, j)]));
            }
        }
    }
    for k in 0..n {
        for i in 0..nu {
            for j in i..nu {
                h.push((vm.u(k, i), vm.u(k, j), 2.0 * problem.r[(i, j)]));
            }
        }
    }

    let mut lb = vec![f64::NEG_INFINITY; nv];
    let mut ub = vec![f64::INFINITY; nv];
    for i in 0..nx {
        lb[vm.x(0, i)] = problem.x_start[i];
        ub[vm.x(0, i)] = problem.x_start[i];
    }
    for k in 0..n {
        for j in 0..nu {
            lb[vm.u(k, j)] = problem.control_bounds.lower[j];
            ub[vm.u(k, j)] = problem.control_bounds.upper[j];
        }
        for i in 0..nc {
            lb[vm.lambda(k, i)] = 0.0;
            ub[vm.lambda(k, i)] = problem.lambda_upper;
            let a = &audit.modes[vm.pair(k, i)];
            let (z0, z1) = (vm.z(k, i, 0), vm.z(k, i, 1));
            lb[z0] = 0.0;
            ub[z0] = 1.0;
            lb[z1] = 0.0;
            ub[z1] = 1.0;
            if !a.contact_feasible {
                ub[z0] = 0.0;
                lb[z1] = 1.0;
            } else if !a.separation_feasible {
                lb[z0] = 1.0;
                ub[z1] = 0.0;
            }
        }
    }

    let mut eq = Rows::new();
    for k in 0..n {
        for r in 0..nx {
            let mut co = vec![(vm.x(k + 1, r), 1.0)];
            co.extend((0..nx).map(|j| (vm.x(k, j), -m.a[(r, j)])));
            co.extend((0..nu).map(|j| (vm.u(k, j), -m.b[(r, j)])));
            co.extend((0..nc).map(|j| (vm.lambda(k, j), -m.c[(r, j)])));
            eq.push(format!("dynamics[{k}][{r}]"), co, m.g[r]);
        }
    }
    let mut pairs = Vec::with_capacity(vm.n_pairs());
    for k in 0..n {
        for i in 0..nc {
            let (z0, z1) = (vm.z(k, i, 0), vm.z(k, i, 1));
            eq.push(format!("mode_sum[{k}][{i}]"), [(z0, 1.0), (z1, 1.0)], 1.0);
            pairs.push((z0, z1));
        }
    }

    let mut ineq = Rows::new();
    for k in 0..n {
        for i in 0..nc {
            let (z0, z1, lam) = (vm.z(k, i, 0), vm.z(k, i, 1), vm.lambda(k, i));
            let psi = cov.psi[k][i];
            ineq.push(format!("force_gate[{k}][{i}]"), [(lam, 1.0), (z0, -big_m)], 0.0);
            // ȳ = D x̄_k + E u_k + F̄ λ_{k+1} + h
            let y: Vec<(usize, f64)> = (0..nx)
                .map(|j| (vm.x(k, j), m.d[(i, j)]))
                .chain((0..nu).map(|j| (vm.u(k, j), m.e[(i, j)])))
                .chain((0..nc).map(|j| (vm.lambda(k, j), m.f[(i, j)])))
                .collect();
            let lower_z0 = budget.zeta * psi;
            let lower_z1 = eps + budget.eta * psi;
            let mut co: Vec<(usize, f64)> = y.iter().map(|&(c, v)| (c, -v)).collect();
            co.push((z0, lower_z0));
            co.push((z1, lower_z1));
            ineq.push(format!("gap_lower[{k}][{i}]"), co, m.h[i]);
            let mut co = y;
            co.push((z0, -(eps - budget.zeta * psi)));
            co.push((z1, -big_m));
            ineq.push(format!("gap_upper[{k}][{i}]"), co, -m.h[i]);
        }
    }
    for row in &audit.state_rows {
        let c = problem.chance.constraints().find(|c| c.label == row.label).expect("audited label");
        let k = row.step;
        ineq.push(
            format!("state[{}][{k}]", row.label),
            c.a.iter().enumerate().map(|(j, &a)| (vm.x(k, j), a)),
            row.b_tightened,
        );
    }

    let miqp = MiqpProblem {
        h: CsrMatrix::from_triplets(nv, nv, &h),
        f: vec![0.0; nv],
        constant: 0.0,
        a_eq: eq.matrix(nv),
        b_eq: eq.rhs,
        a_in: ineq.matrix(nv),
        b_in: ineq.rhs,
        lb,
        ub,
        binary_pairs: pairs,
        var_map: vm,
        eq_names: eq.names,
        in_names: ineq.names,
    };
    Ok((miqp, audit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::build_cartpole;
    use crate::chance::{allocate_budget, propagate_covariance};

    #[test]
    fn var_map_names_round_trip() {
        let vm = VarMap { nx: 4, nu: 1, nc: 2, horizon: 3 };
        let mut seen = std::collections::HashSet::new();
        for col in 0..vm.n_vars() {
            let name = vm.name(col);
            assert!(seen.insert(name.clone()));
            assert_eq!(vm.column(&name), Some(col), "{name}");
        }
        assert_eq!(vm.name(vm.lambda(0, 1)), "lambda[1][1]");
        assert_eq!(vm.column("z[3][0][0]"), None);
    }

    #[test]
    fn cartpole_has_eighty_binaries() {
        let p = build_cartpole();
        let b = allocate_budget(&p.chance, p.horizon, p.model.nc(), p.chance.state_rows_per_step()).unwrap();
        let cov = propagate_covariance(&p);
        let (miqp, audit) = encode(&p, &b, &cov).unwrap();
        assert_eq!(miqp.binary_pairs.len() * 2, 80);
        assert_eq!(audit.modes.len(), 40);
        let mut cols: Vec<usize> = miqp.binary_pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        cols.sort();
        cols.dedup();
        assert_eq!(cols.len(), 80);
    }

    #[test]
    fn zero_noise_rows_reduce_to_relaxed_complementarity() {
        let p = build_cartpole().noise_free();
        let b = allocate_budget(&p.chance, p.horizon, 2, 2).unwrap();
        let cov = propagate_covariance(&p);
        let (miqp, _) = encode(&p, &b, &cov).unwrap();
        let vm = miqp.var_map;
        let eps = p.chance.epsilon;
        let row = |name: &str| miqp.in_names.iter().position(|n| n == name).unwrap();
        let coeff = |r: usize, c: usize| miqp.a_in.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v);
        let lo = row("gap_lower[3][1]");
        assert_eq!(coeff(lo, vm.z(3, 1, 0)), 0.0);
        assert_eq!(coeff(lo, vm.z(3, 1, 1)), eps);
        let hi = row("gap_upper[3][1]");
        assert_eq!(coeff(hi, vm.z(3, 1, 0)), -eps);
        assert_eq!(coeff(hi, vm.z(3, 1, 1)), -p.chance.big_m);
        // Zero covariance leaves state rows untightened.
        let st = row("state[x1<=0.05][4]");
        assert_eq!(miqp.b_in[st], 0.05);
    }
}
