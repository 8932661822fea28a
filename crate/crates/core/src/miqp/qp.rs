//! Convex QP by a homogeneous self-dual embedding interior-point method.
//!
//! Problem form:
//!
//! ```text
//! minimize    ½ x'Px + q'x + constant
//! subject to  A_eq x = b_eq,  A_in x <= b_in,  lb <= x <= ub
//! ```
//!
//! Internally every constraint is written as `A x + s = b` with `s` in the zero
//! cone (equalities) or the nonnegative orthant. Data are Ruiz equilibrated.
//! Rows touching a single variable (variable bounds, most of them) are
//! condensed into the primal diagonal before factorization.

use thiserror::Error;

use super::kkt::Kkt;
use super::sparse::{dot, inf_norm, CsrMatrix};

#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Upper triangle of P.
    pub p_upper: CsrMatrix,
    pub q: Vec<f64>,
    pub constant: f64,
    pub a_eq: CsrMatrix,
    pub b_eq: Vec<f64>,
    pub a_in: CsrMatrix,
    pub b_in: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        0.5 * upper_quad(&self.p_upper, x) + dot(&self.q, x) + self.constant
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol_feas: f64,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub tol_infeas: f64,
    /// Fallback acceptance when progress stalls.
    pub tol_reduced: f64,
    pub max_iter: usize,
    pub static_reg: f64,
    pub equilibrate: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-9,
            tol_gap_abs: 1e-9,
            tol_gap_rel: 1e-9,
            tol_infeas: 1e-8,
            tol_reduced: 1e-6,
            max_iter: 200,
            static_reg: 1e-9,
            equilibrate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    /// Stalled short of the full tolerances but within `tol_reduced`.
    SolvedReducedAccuracy,
    PrimalInfeasible,
    DualInfeasible,
}

#[derive(Debug, Clone)]
pub struct QpResult {
    pub status: QpStatus,
    pub x: Vec<f64>,
    pub y_eq: Vec<f64>,
    pub z_in: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// max of the relative primal residual, dual residual and gap.
    pub kkt_residual: f64,
    /// Diagonal perturbation added to the KKT system.
    pub regularization: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("QP solver failed after {iterations} iterations (primal {primal:.3e}, dual {dual:.3e}, gap {gap:.3e})")]
    NumericalFailure { iterations: usize, primal: f64, dual: f64, gap: f64 },
    #[error("QP dimension mismatch: {0}")]
    Dimension(String),
}

/// Conic data `A x + s = b`, first `m_eq` rows in the zero cone.
#[derive(Debug, Clone)]
struct Conic {
    p: CsrMatrix,
    q: Vec<f64>,
    a: CsrMatrix,
    b: Vec<f64>,
    m_eq: usize,
}

fn upper_quad(p_upper: &CsrMatrix, x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p_upper.nrows {
        for (j, v) in p_upper.row(i) {
            s += if i == j { v * x[i] * x[i] } else { 2.0 * v * x[i] * x[j] };
        }
    }
    s
}

fn upper_mul(p_upper: &CsrMatrix, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for i in 0..p_upper.nrows {
        for (j, v) in p_upper.row(i) {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
    }
    y
}

fn check_dims(p: &QpProblem) -> Result<(), QpError> {
    let n = p.n();
    let bad = |what: &str| Err(QpError::Dimension(what.to_string()));
    if p.p_upper.nrows != n || p.p_upper.ncols != n {
        return bad("P");
    }
    if p.a_eq.ncols != n || p.a_eq.nrows != p.b_eq.len() {
        return bad("A_eq");
    }
    if p.a_in.ncols != n || p.a_in.nrows != p.b_in.len() {
        return bad("A_in");
    }
    if p.lb.len() != n || p.ub.len() != n {
        return bad("bounds");
    }
    if p.p_upper.triplets().iter().any(|&(i, j, _)| j < i) {
        return bad("P must be upper triangular");
    }
    Ok(())
}

fn to_conic(p: &QpProblem) -> Result<Conic, QpError> {
    let n = p.n();
    let mut eq_rows = p.a_eq.triplets();
    let mut b_eq = p.b_eq.clone();
    let mut in_rows = p.a_in.triplets();
    let mut b_in = p.b_in.clone();
    for j in 0..n {
        let (l, u) = (p.lb[j], p.ub[j]);
        if l > u {
            // An empty box: express as two contradictory rows.
            in_rows.push((b_in.len(), j, -1.0));
            b_in.push(-l);
            in_rows.push((b_in.len(), j, 1.0));
            b_in.push(u);
        } else if l == u {
            eq_rows.push((b_eq.len(), j, 1.0));
            b_eq.push(l);
        } else {
            if l.is_finite() {
                in_rows.push((b_in.len(), j, -1.0));
                b_in.push(-l);
            }
            if u.is_finite() {
                in_rows.push((b_in.len(), j, 1.0));
                b_in.push(u);
            }
        }
    }
    let m_eq = b_eq.len();
    let mut all = eq_rows;
    all.extend(in_rows.into_iter().map(|(r, c, v)| (r + m_eq, c, v)));
    let mut b = b_eq;
    b.extend(b_in);
    if b.iter().any(|v| !v.is_finite()) || p.q.iter().any(|v| !v.is_finite()) {
        return Err(QpError::Dimension("non-finite right-hand side or cost".into()));
    }
    let a = CsrMatrix::from_triplets(b.len(), n, &all);
    Ok(Conic { p: p.p_upper.clone(), q: p.q.clone(), a, b, m_eq })
}

/// Ruiz scaling: returns (D, E) with scaled data `D P D`, `D q`, `E A D`, `E b`.
fn equilibrate(c: &Conic, iters: usize) -> (Vec<f64>, Vec<f64>) {
    let n = c.q.len();
    let m = c.b.len();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let clamp = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..iters {
        let mut col = vec![0.0_f64; n];
        let mut row = vec![0.0_f64; m];
        for i in 0..n {
            for (j, v) in c.p.row(i) {
                let s = (v * d[i] * d[j]).abs();
                col[i] = col[i].max(s);
                col[j] = col[j].max(s);
            }
        }
        for (r, rv) in row.iter_mut().enumerate() {
            for (j, v) in c.a.row(r) {
                let s = (v * e[r] * d[j]).abs();
                col[j] = col[j].max(s);
                *rv = rv.max(s);
            }
        }
        let mut done = true;
        for j in 0..n {
            let s = clamp(col[j]);
            if (1.0 - s).abs() > 1e-3 {
                done = false;
            }
            d[j] /= s.sqrt();
        }
        for r in 0..m {
            let s = clamp(row[r]);
            if (1.0 - s).abs() > 1e-3 {
                done = false;
            }
            e[r] /= s.sqrt();
        }
        if done {
            break;
        }
    }
    (d, e)
}

fn scale(c: &Conic, d: &[f64], e: &[f64]) -> Conic {
    let p = CsrMatrix::from_triplets(
        c.p.nrows,
        c.p.ncols,
        &c.p.triplets().into_iter().map(|(i, j, v)| (i, j, v * d[i] * d[j])).collect::<Vec<_>>(),
    );
    let a = CsrMatrix::from_triplets(
        c.a.nrows,
        c.a.ncols,
        &c.a.triplets().into_iter().map(|(i, j, v)| (i, j, v * e[i] * d[j])).collect::<Vec<_>>(),
    );
    Conic {
        p,
        q: c.q.iter().zip(d).map(|(q, d)| q * d).collect(),
        a,
        b: c.b.iter().zip(e).map(|(b, e)| b * e).collect(),
        m_eq: c.m_eq,
    }
}

/// KKT solves with condensed singleton rows and iterative refinement.
struct Newton<'a> {
    c: &'a Conic,
    kkt: Kkt,
    singles: Vec<(usize, usize, f64)>,
    others: Vec<usize>,
    h: Vec<f64>,
    reg: f64,
}

impl<'a> Newton<'a> {
    fn new(c: &'a Conic, reg: f64) -> Self {
        let mut singles = vec![];
        let mut others = vec![];
        for r in 0..c.a.nrows {
            if r >= c.m_eq && c.a.row_nnz(r) == 1 {
                let (j, v) = c.a.row(r).next().unwrap();
                singles.push((r, j, v));
            } else {
                others.push(r);
            }
        }
        let mut trip = vec![];
        for (k, &r) in others.iter().enumerate() {
            for (j, v) in c.a.row(r) {
                trip.push((k, j, v));
            }
        }
        let a_o = CsrMatrix::from_triplets(others.len(), c.q.len(), &trip);
        let kkt = Kkt::new(&c.p, &a_o);
        Self { c, kkt, singles, others, h: vec![0.0; c.b.len()], reg }
    }

    fn factor(&mut self, h: &[f64]) {
        self.h.copy_from_slice(h);
        let n = self.c.q.len();
        let mut diag = vec![self.reg; n + self.others.len()];
        for &(r, j, v) in &self.singles {
            diag[j] += v * v / (h[r] + self.reg);
        }
        for (k, &r) in self.others.iter().enumerate() {
            diag[n + k] = -(h[r] + self.reg);
        }
        self.kkt.factor(&diag);
    }

    fn solve_once(&self, rx: &[f64], rz: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.c.q.len();
        let mut rhs = Vec::with_capacity(n + self.others.len());
        rhs.extend_from_slice(rx);
        for &(r, j, v) in &self.singles {
            rhs[j] += v * rz[r] / (self.h[r] + self.reg);
        }
        rhs.extend(self.others.iter().map(|&r| rz[r]));
        self.kkt.solve(&mut rhs);
        let mut z = vec![0.0; rz.len()];
        for (k, &r) in self.others.iter().enumerate() {
            z[r] = rhs[n + k];
        }
        rhs.truncate(n);
        for &(r, j, v) in &self.singles {
            z[r] = (v * rhs[j] - rz[r]) / (self.h[r] + self.reg);
        }
        (rhs, z)
    }

    /// Residual of `[[P, A'], [A, -H]] [x; z] = [rx; rz]`.
    fn residual(&self, x: &[f64], z: &[f64], rx: &[f64], rz: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut ex = upper_mul(&self.c.p, x);
        self.c.a.add_mul_t(z, &mut ex);
        for (e, r) in ex.iter_mut().zip(rx) {
            *e = r - *e;
        }
        let ax = self.c.a.mul_vec(x);
        let ez = (0..rz.len()).map(|i| rz[i] - (ax[i] - self.h[i] * z[i])).collect();
        (ex, ez)
    }

    fn solve(&self, rx: &[f64], rz: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut x, mut z) = self.solve_once(rx, rz);
        let tol = 1e-14 * (1.0 + inf_norm(rx).max(inf_norm(rz)));
        let (mut ex, mut ez) = self.residual(&x, &z, rx, rz);
        let mut err = inf_norm(&ex).max(inf_norm(&ez));
        for _ in 0..6 {
            if err <= tol {
                break;
            }
            let (dx, dz) = self.solve_once(&ex, &ez);
            let xn: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            let zn: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + b).collect();
            let (exn, ezn) = self.residual(&xn, &zn, rx, rz);
            let errn = inf_norm(&exn).max(inf_norm(&ezn));
            if errn >= err {
                break;
            }
            x = xn;
            z = zn;
            ex = exn;
            ez = ezn;
            err = errn;
        }
        (x, z)
    }
}

struct Metrics {
    primal: f64,
    dual: f64,
    gap: f64,
    pobj: f64,
}

pub fn solve_qp(problem: &QpProblem, settings: &QpSettings) -> Result<QpResult, QpError> {
    check_dims(problem)?;
    let orig = to_conic(problem)?;
    let n = orig.q.len();
    let m = orig.b.len();
    let m_eq = orig.m_eq;
    let (d, e) = if settings.equilibrate { equilibrate(&orig, 25) } else { (vec![1.0; n], vec![1.0; m]) };
    let c = scale(&orig, &d, &e);
    let mut newton = Newton::new(&c, settings.static_reg);

    // Initial point from [[P, A'], [A, -I]] [x; v] = [-q; b].
    let mut h0 = vec![1.0; m];
    h0[..m_eq].iter_mut().for_each(|h| *h = 0.0);
    newton.factor(&h0);
    let neg_q: Vec<f64> = c.q.iter().map(|v| -v).collect();
    let (mut x, v) = newton.solve(&neg_q, &c.b);
    let mut s = vec![0.0; m];
    let mut z = v.clone();
    for i in m_eq..m {
        s[i] = -v[i];
    }
    shift_into_cone(&mut s[m_eq..]);
    shift_into_cone(&mut z[m_eq..]);
    let mut tau = 1.0;
    let mut kappa = 1.0;
    let n_cone = (m - m_eq) as f64 + 1.0;

    let b_norm = inf_norm(&orig.b);
    let q_norm = inf_norm(&orig.q);
    let mut stalls = 0;
    let mut last = None;
    for iter in 0..settings.max_iter {
        // Normalized, unscaled iterate.
        let xu: Vec<f64> = x.iter().zip(&d).map(|(x, d)| x * d / tau).collect();
        let su: Vec<f64> = s.iter().zip(&e).map(|(s, e)| s / (e * tau)).collect();
        let zu: Vec<f64> = z.iter().zip(&e).map(|(z, e)| z * e / tau).collect();
        let met = metrics(&orig, &xu, &su, &zu, b_norm, q_norm);
        let gap_tol = settings.tol_gap_abs + settings.tol_gap_rel * met.pobj.abs().max(1.0);
        if met.primal <= settings.tol_feas && met.dual <= settings.tol_feas && met.gap <= gap_tol {
            return Ok(finish(problem, QpStatus::Solved, &xu, &zu, m_eq, iter, &met, settings));
        }
        // Infeasibility certificates from the unnormalized iterate.
        let xc: Vec<f64> = x.iter().zip(&d).map(|(x, d)| x * d).collect();
        let zc: Vec<f64> = z.iter().zip(&e).map(|(z, e)| z * e).collect();
        let bz = dot(&orig.b, &zc);
        if bz < -settings.tol_infeas && inf_norm(&orig.a.mul_t_vec(&zc)) < -settings.tol_infeas * bz {
            return Ok(QpResult {
                status: QpStatus::PrimalInfeasible,
                x: xu,
                y_eq: zc[..problem.b_eq.len()].to_vec(),
                z_in: zc[m_eq..m_eq + problem.b_in.len()].to_vec(),
                objective: f64::INFINITY,
                iterations: iter,
                kkt_residual: f64::NAN,
                regularization: settings.static_reg,
            });
        }
        let qx = dot(&orig.q, &xc);
        if qx < -settings.tol_infeas {
            let sc: Vec<f64> = s.iter().zip(&e).map(|(s, e)| s / e).collect();
            let axs: Vec<f64> = orig.a.mul_vec(&xc).iter().zip(&sc).map(|(a, s)| a + s).collect();
            let px = inf_norm(&upper_mul(&orig.p, &xc));
            if px < -settings.tol_infeas * qx && inf_norm(&axs) < -settings.tol_infeas * qx {
                return Ok(QpResult {
                    status: QpStatus::DualInfeasible,
                    x: xc,
                    y_eq: vec![],
                    z_in: vec![],
                    objective: f64::NEG_INFINITY,
                    iterations: iter,
                    kkt_residual: f64::NAN,
                    regularization: settings.static_reg,
                });
            }
        }

        // Residuals of the embedding.
        let px = upper_mul(&c.p, &x);
        let xpx = dot(&x, &px);
        let mut rx = px.clone();
        c.a.add_mul_t(&z, &mut rx);
        for (r, q) in rx.iter_mut().zip(&c.q) {
            *r += q * tau;
        }
        let ax = c.a.mul_vec(&x);
        let rz: Vec<f64> = (0..m).map(|i| ax[i] + s[i] - c.b[i] * tau).collect();
        let rtau = kappa + dot(&c.q, &x) + dot(&c.b, &z) + xpx / tau;
        let mu = (dot(&s[m_eq..], &z[m_eq..]) + tau * kappa) / n_cone;

        let mut h = vec![0.0; m];
        for i in m_eq..m {
            h[i] = s[i] / z[i];
        }
        newton.factor(&h);
        let (x1, z1) = newton.solve(&neg_q, &c.b);
        let xi: Vec<f64> = x.iter().map(|v| v / tau).collect();
        let pxi: Vec<f64> = px.iter().map(|v| v / tau).collect();
        let cvec: Vec<f64> = c.q.iter().zip(&pxi).map(|(q, p)| q + 2.0 * p).collect();
        let denom = dot(&cvec, &x1) + dot(&c.b, &z1) - dot(&xi, &pxi) - kappa / tau;

        let step = |dx_r: &[f64], dz_r: &[f64], dtau_r: f64, ds: &[f64], dkappa: f64| {
            let rhs_x: Vec<f64> = dx_r.iter().map(|v| -v).collect();
            let rhs_z: Vec<f64> = (0..m).map(|i| -dz_r[i] + if i >= m_eq { ds[i] / z[i] } else { 0.0 }).collect();
            let (x2, z2) = newton.solve(&rhs_x, &rhs_z);
            let dtau = (-dtau_r + dkappa / tau - dot(&cvec, &x2) - dot(&c.b, &z2)) / denom;
            let dxv: Vec<f64> = x2.iter().zip(&x1).map(|(a, b)| a + dtau * b).collect();
            let dzv: Vec<f64> = z2.iter().zip(&z1).map(|(a, b)| a + dtau * b).collect();
            let mut dsv = vec![0.0; m];
            for i in m_eq..m {
                dsv[i] = -(ds[i] + s[i] * dzv[i]) / z[i];
            }
            let dk = -(dkappa + kappa * dtau) / tau;
            (dxv, dzv, dsv, dtau, dk)
        };

        // Predictor.
        let ds_aff: Vec<f64> = (0..m).map(|i| if i >= m_eq { s[i] * z[i] } else { 0.0 }).collect();
        let (_, dz_a, ds_a, dtau_a, dk_a) = step(&rx, &rz, rtau, &ds_aff, tau * kappa);
        let alpha_aff = max_step(&s[m_eq..], &ds_a[m_eq..], &z[m_eq..], &dz_a[m_eq..], tau, dtau_a, kappa, dk_a);
        let sigma = (1.0 - alpha_aff).powi(3);

        // Corrector.
        let f = 1.0 - sigma;
        let rxc: Vec<f64> = rx.iter().map(|v| v * f).collect();
        let rzc: Vec<f64> = rz.iter().map(|v| v * f).collect();
        let ds_c: Vec<f64> =
            (0..m).map(|i| if i >= m_eq { s[i] * z[i] - sigma * mu + ds_a[i] * dz_a[i] } else { 0.0 }).collect();
        let dk_c = tau * kappa - sigma * mu + dtau_a * dk_a;
        let (dx, dz, ds, dtau, dk) = step(&rxc, &rzc, rtau * f, &ds_c, dk_c);
        let alpha = (0.99 * max_step(&s[m_eq..], &ds[m_eq..], &z[m_eq..], &dz[m_eq..], tau, dtau, kappa, dk)).min(1.0);

        if !alpha.is_finite() || !dtau.is_finite() {
            stalls = usize::MAX / 2;
        } else {
            for i in 0..n {
                x[i] += alpha * dx[i];
            }
            for i in 0..m {
                z[i] += alpha * dz[i];
                s[i] += alpha * ds[i];
            }
            tau += alpha * dtau;
            kappa += alpha * dk;
        }
        if alpha < 1e-8 {
            stalls += 1;
        } else {
            stalls = 0;
        }
        last = Some((xu, zu, met, iter));
        if stalls >= 3 {
            break;
        }
    }
    let (xu, zu, met, iter) = last.expect("at least one iteration");
    let worst = met.primal.max(met.dual).max(met.gap / met.pobj.abs().max(1.0));
    if worst <= settings.tol_reduced {
        return Ok(finish(problem, QpStatus::SolvedReducedAccuracy, &xu, &zu, m_eq, iter, &met, settings));
    }
    Err(QpError::NumericalFailure { iterations: iter + 1, primal: met.primal, dual: met.dual, gap: met.gap })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &QpProblem,
    status: QpStatus,
    xu: &[f64],
    zu: &[f64],
    m_eq: usize,
    iter: usize,
    met: &Metrics,
    settings: &QpSettings,
) -> QpResult {
    let scale = met.pobj.abs().max(1.0);
    QpResult {
        status,
        x: xu.to_vec(),
        y_eq: zu[..problem.b_eq.len()].to_vec(),
        z_in: zu[m_eq..m_eq + problem.b_in.len()].to_vec(),
        objective: problem.objective(xu),
        iterations: iter,
        kkt_residual: met.primal.max(met.dual).max(met.gap / scale),
        regularization: settings.static_reg,
    }
}

fn metrics(c: &Conic, x: &[f64], s: &[f64], z: &[f64], b_norm: f64, q_norm: f64) -> Metrics {
    let ax = c.a.mul_vec(x);
    let rp: Vec<f64> = (0..c.b.len()).map(|i| ax[i] + s[i] - c.b[i]).collect();
    let px = upper_mul(&c.p, x);
    let atz = c.a.mul_t_vec(z);
    let rd: Vec<f64> = (0..x.len()).map(|j| px[j] + c.q[j] + atz[j]).collect();
    let xpx = dot(x, &px);
    let pobj = 0.5 * xpx + dot(&c.q, x);
    let dobj = -0.5 * xpx - dot(&c.b, z);
    let primal = inf_norm(&rp) / (1.0 + b_norm.max(inf_norm(&ax)).max(inf_norm(s)));
    let dual = inf_norm(&rd) / (1.0 + q_norm.max(inf_norm(&px)).max(inf_norm(&atz)));
    Metrics { primal, dual, gap: (pobj - dobj).abs(), pobj }
}

fn shift_into_cone(v: &mut [f64]) {
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 1e-8 {
        let shift = 1.0 - min.min(0.0);
        v.iter_mut().for_each(|x| *x += shift);
    }
}

#[allow(clippy::too_many_arguments)]
fn max_step(s: &[f64], ds: &[f64], z: &[f64], dz: &[f64], tau: f64, dtau: f64, kappa: f64, dk: f64) -> f64 {
    let mut a: f64 = 1.0;
    let mut limit = |v: f64, dv: f64| {
        if dv < 0.0 {
            a = a.min(-v / dv);
        }
    };
    for (v, dv) in s.iter().zip(ds) {
        limit(*v, *dv);
    }
    for (v, dv) in z.iter().zip(dz) {
        limit(*v, *dv);
    }
    limit(tau, dtau);
    limit(kappa, dk);
    a.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty(n: usize) -> QpProblem {
        QpProblem {
            p_upper: CsrMatrix::zeros(n, n),
            q: vec![0.0; n],
            constant: 0.0,
            a_eq: CsrMatrix::zeros(0, n),
            b_eq: vec![],
            a_in: CsrMatrix::zeros(0, n),
            b_in: vec![],
            lb: vec![f64::NEG_INFINITY; n],
            ub: vec![f64::INFINITY; n],
        }
    }

    #[test]
    fn unconstrained_scalar() {
        let mut p = empty(1);
        p.p_upper = CsrMatrix::from_triplets(1, 1, &[(0, 0, 0.02)]);
        let r = solve_qp(&p, &QpSettings::default()).unwrap();
        assert_eq!(r.status, QpStatus::Solved);
        assert!(r.x[0].abs() < 1e-8);
        assert!(r.objective.abs() < 1e-12);
    }

    #[test]
    fn equality_only() {
        let mut p = empty(1);
        p.p_upper = CsrMatrix::from_triplets(1, 1, &[(0, 0, 2.0)]);
        p.a_eq = CsrMatrix::from_triplets(1, 1, &[(0, 0, 1.0)]);
        p.b_eq = vec![3.0];
        let r = solve_qp(&p, &QpSettings::default()).unwrap();
        assert!((r.objective - 9.0).abs() < 1e-7, "{}", r.objective);
        assert!(r.kkt_residual <= 1e-8);
    }

    #[test]
    fn box_constrained_lp() {
        // min -x - 2y s.t. x + y <= 1, 0 <= x, y <= 0.75
        let mut p = empty(2);
        p.q = vec![-1.0, -2.0];
        p.a_in = CsrMatrix::from_triplets(1, 2, &[(0, 0, 1.0), (0, 1, 1.0)]);
        p.b_in = vec![1.0];
        p.lb = vec![0.0, 0.0];
        p.ub = vec![f64::INFINITY, 0.75];
        let r = solve_qp(&p, &QpSettings::default()).unwrap();
        assert_eq!(r.status, QpStatus::Solved);
        assert!((r.x[0] - 0.25).abs() < 1e-7 && (r.x[1] - 0.75).abs() < 1e-7, "{:?}", r.x);
        assert!((r.objective + 1.75).abs() < 1e-8);
    }

    #[test]
    fn detects_primal_infeasibility() {
        let mut p = empty(1);
        p.a_in = CsrMatrix::from_triplets(2, 1, &[(0, 0, 1.0), (1, 0, -1.0)]);
        p.b_in = vec![1.0, -2.0];
        let r = solve_qp(&p, &QpSettings::default()).unwrap();
        assert_eq!(r.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn detects_unboundedness() {
        let mut p = empty(1);
        p.q = vec![-1.0];
        p.lb = vec![0.0];
        let r = solve_qp(&p, &QpSettings::default()).unwrap();
        assert_eq!(r.status, QpStatus::DualInfeasible);
    }

    #[test]
    fn strictly_convex_with_active_constraints() {
        // min (x-2)^2 + (y-1)^2 s.t. x + y = 2, x <= 1.2
        let mut p = empty(2);
        p.p_upper = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 2.0)]);
        p.q = vec![-4.0, -2.0];
        p.constant = 5.0;
        p.a_eq = CsrMatrix::from_triplets(1, 2, &[(0, 0, 1.0), (0, 1, 1.0)]);
        p.b_eq = vec![2.0];
        p.ub = vec![1.2, f64::INFINITY];
        let r = solve_qp(&p, &QpSettings::default()).unwrap();
        assert!((r.x[0] - 1.2).abs() < 1e-7 && (r.x[1] - 0.8).abs() < 1e-7, "{:?}", r.x);
        assert!((r.objective - (0.64 + 0.04)).abs() < 1e-8);
        assert!(r.kkt_residual <= 1e-8);
    }
}
