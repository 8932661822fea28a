//! The three benchmark systems: a cartpole between soft walls, a
//! quasi-static sliding box with Coulomb friction, and a box handled by two
//! point manipulators. All are discretized with explicit Euler at
//! `dt = 0.033`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::{
    ChanceSpec, ControlBounds, LinearChanceConstraint, OutputVariance, SdlcsModel, TrajectoryProblem, PROBLEM_SCHEMA,
};

pub const DT: f64 = 0.033;
pub const GRAVITY: f64 = 9.81;
/// Control bound used when none is configured.
pub const DEFAULT_CONTROL_BOUND: f64 = 20.0;
pub const DEFAULT_DELTA: f64 = 0.1;

/// Continuous-time dynamics `xdot = A x + B u + C lambda + g` together with
/// complementarity rows that are already per-step.
///
/// Rows listed in `algebraic_rows` are not derivatives: they define the state
/// directly (`x_i = A_i x + B_i u + C_i lambda + g_i`) and are copied into the
/// discrete model without the identity or the `dt` factor.
#[derive(Debug, Clone)]
pub struct ContinuousTerms {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub g: DVector<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub h: DVector<f64>,
    pub algebraic_rows: Vec<usize>,
}

/// Explicit Euler discretization. Noise terms start at zero.
pub fn discretize_explicit_euler(ct: &ContinuousTerms, dt: f64) -> SdlcsModel {
    let nx = ct.a.nrows();
    let nc = ct.f.nrows();
    let mut a = DMatrix::identity(nx, nx) + &ct.a * dt;
    let mut b = &ct.b * dt;
    let mut c = &ct.c * dt;
    let mut g = &ct.g * dt;
    for &row in &ct.algebraic_rows {
        a.set_row(row, &ct.a.row(row));
        b.set_row(row, &ct.b.row(row));
        c.set_row(row, &ct.c.row(row));
        g[row] = ct.g[row];
    }
    SdlcsModel {
        a,
        b,
        c,
        d: ct.d.clone(),
        e: ct.e.clone(),
        f: ct.f.clone(),
        g,
        h: ct.h.clone(),
        w: DMatrix::zeros(nx, nx),
        v: DMatrix::zeros(nc, nc),
        sigma_c: DMatrix::zeros(nx, nc),
        sigma_f: DMatrix::zeros(nc, nc),
        sigma_h: DVector::zeros(nc),
    }
}

/// Adjustments applied while building a benchmark.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub delta: Option<f64>,
    pub horizon: Option<usize>,
    pub big_m: Option<f64>,
    pub epsilon: Option<f64>,
    pub control_bound: Option<f64>,
    pub lambda_upper: Option<f64>,
    /// Multiplies every standard deviation (covariances by its square).
    pub noise_scale: Option<f64>,
    pub output_variance: Option<OutputVariance>,
}

impl Overrides {
    /// Applies the overrides to an already built problem. The horizon cannot
    /// be changed this way since constraint steps depend on it.
    pub fn apply(&self, p: &mut TrajectoryProblem) -> Result<(), String> {
        if self.horizon.is_some_and(|n| n != p.horizon) {
            return Err("horizon can only be overridden for built-in systems".into());
        }
        if let Some(d) = self.delta {
            p.chance.delta = d;
        }
        if let Some(e) = self.epsilon {
            p.chance.epsilon = e;
        }
        if let Some(m) = self.big_m {
            p.chance.big_m = m;
        }
        if let Some(b) = self.control_bound {
            p.control_bounds = ControlBounds::symmetric(p.model.nu(), b);
        }
        if let Some(l) = self.lambda_upper {
            p.lambda_upper = l;
        }
        if let Some(s) = self.noise_scale {
            scale_noise(&mut p.model, s);
        }
        if let Some(v) = self.output_variance {
            p.chance.output_variance = v;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Benchmark {
    Cartpole,
    SlidingBox,
    DualManipulators,
}

impl Benchmark {
    pub const ALL: [Benchmark; 3] = [Benchmark::Cartpole, Benchmark::SlidingBox, Benchmark::DualManipulators];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Cartpole => "cartpole",
            Benchmark::SlidingBox => "sliding_box",
            Benchmark::DualManipulators => "dual_manipulators",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn build(self, o: &Overrides) -> TrajectoryProblem {
        match self {
            Benchmark::Cartpole => cartpole(o),
            Benchmark::SlidingBox => sliding_box(o),
            Benchmark::DualManipulators => dual_manipulators(o),
        }
    }
}

pub fn build_cartpole() -> TrajectoryProblem {
    cartpole(&Overrides::default())
}

pub fn build_sliding_box() -> TrajectoryProblem {
    sliding_box(&Overrides::default())
}

pub fn build_dual_manipulators() -> TrajectoryProblem {
    dual_manipulators(&Overrides::default())
}

fn scale_noise(model: &mut SdlcsModel, s: f64) {
    model.w *= s * s;
    model.v *= s * s;
    model.sigma_c *= s;
    model.sigma_f *= s;
    model.sigma_h *= s;
}

fn finish(
    name: &str,
    horizon: usize,
    lambda_upper: f64,
    x_start: Vec<f64>,
    r: DMatrix<f64>,
    control_bounds: ControlBounds,
    mut model: SdlcsModel,
    mut chance: ChanceSpec,
    o: &Overrides,
) -> TrajectoryProblem {
    if let Some(v) = o.output_variance {
        chance.output_variance = v;
    }
    if let Some(s) = o.noise_scale {
        scale_noise(&mut model, s);
    }
    let nx = model.nx();
    TrajectoryProblem {
        schema: PROBLEM_SCHEMA.into(),
        name: name.into(),
        horizon,
        lambda_upper: o.lambda_upper.unwrap_or(lambda_upper),
        x_start,
        sigma_start: DMatrix::zeros(nx, nx),
        q: DMatrix::zeros(nx, nx),
        r,
        control_bounds,
        model,
        chance,
    }
}

fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

pub mod cartpole_params {
    pub const POLE_MASS: f64 = 0.1;
    pub const CART_MASS: f64 = 1.0;
    pub const POLE_LENGTH: f64 = 0.5;
    pub const WALL_DISTANCE: f64 = 0.15;
    pub const STIFFNESS_1: f64 = 10.0;
    pub const STIFFNESS_2: f64 = 10.0;
    pub const STATE_NOISE_STD: f64 = 2e-4;
    pub const COMPLIANCE_STD: f64 = 1e-5;
    pub const HORIZON: usize = 20;
    pub const BIG_M: f64 = 100.0;
    pub const EPSILON: f64 = 0.002;
    pub const CONTROL_WEIGHT: f64 = 0.01;
    /// Contact-force bound; also the worst-case force in variance propagation.
    pub const LAMBDA_UPPER: f64 = 10.0;
}

/// Cartpole between two soft walls. State `(cart position, pole angle,
/// cart velocity, pole rate)`, one force input, one contact force per wall.
pub fn cartpole(o: &Overrides) -> TrajectoryProblem {
    use cartpole_params::*;
    let (mp, mc, l, d) = (POLE_MASS, CART_MASS, POLE_LENGTH, WALL_DISTANCE);
    let n = o.horizon.unwrap_or(HORIZON);

    let a_c = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0,
            0.0,
            1.0,
            0.0,
            0.0,
            0.0,
            0.0,
            1.0,
            0.0,
            GRAVITY * mp / mc,
            0.0,
            0.0,
            0.0,
            GRAVITY * (mc + mp) / (l * mc),
            0.0,
            0.0,
        ],
    );
    let b_c = DMatrix::from_row_slice(4, 1, &[0.0, 0.0, 1.0 / mc, 1.0 / (l * mc)]);
    let c_c = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0 / (l * mp), -1.0 / (l * mp)]);
    let ct = ContinuousTerms {
        a: a_c,
        b: b_c,
        c: c_c,
        g: DVector::zeros(4),
        d: DMatrix::from_row_slice(2, 4, &[-1.0, l, 0.0, 0.0, 1.0, -l, 0.0, 0.0]),
        e: DMatrix::zeros(2, 1),
        f: DMatrix::from_row_slice(2, 2, &[1.0 / STIFFNESS_1, 0.0, 0.0, 1.0 / STIFFNESS_2]),
        h: DVector::from_row_slice(&[d, d]),
        algebraic_rows: vec![],
    };
    let mut model = discretize_explicit_euler(&ct, DT);
    let var = STATE_NOISE_STD * STATE_NOISE_STD;
    model.w[(0, 0)] = var;
    model.w[(1, 1)] = var;
    model.sigma_f[(0, 0)] = COMPLIANCE_STD;
    model.sigma_f[(1, 1)] = COMPLIANCE_STD;

    let path_steps: Vec<usize> = (0..n).collect();
    let mut terminal = Vec::new();
    terminal.extend(LinearChanceConstraint::two_sided("x1_terminal", unit(4, 0), -0.02, 0.02, vec![n]));
    terminal.extend(LinearChanceConstraint::two_sided("x2_terminal", unit(4, 1), -0.04, 0.04, vec![n]));
    let chance = ChanceSpec {
        delta: o.delta.unwrap_or(DEFAULT_DELTA),
        epsilon: o.epsilon.unwrap_or(EPSILON),
        big_m: o.big_m.unwrap_or(BIG_M),
        path: vec![
            LinearChanceConstraint::upper("x1<=0.05", unit(4, 0), 0.05, path_steps.clone()),
            LinearChanceConstraint::upper("x2<=0.15", unit(4, 1), 0.15, path_steps),
        ],
        terminal,
        output_variance: OutputVariance::Full,
    };
    let bound = o.control_bound.unwrap_or(DEFAULT_CONTROL_BOUND);
    finish(
        "cartpole",
        n,
        LAMBDA_UPPER,
        vec![-0.15, 0.0, 0.0, 0.0],
        DMatrix::from_element(1, 1, CONTROL_WEIGHT),
        ControlBounds::symmetric(1, bound),
        model,
        chance,
        o,
    )
}

pub mod sliding_box_params {
    pub const DAMPING: f64 = 4.0;
    pub const MASS: f64 = 1.0;
    pub const FRICTION: f64 = 0.1;
    pub const STATE_NOISE_STD: f64 = 4e-4;
    pub const FRICTION_STD: f64 = 1e-5;
    pub const HORIZON: usize = 20;
    pub const BIG_M: f64 = 100.0;
    pub const EPSILON: f64 = 0.01;
    pub const CONTROL_WEIGHT: f64 = 0.01;
}

/// Quasi-static box on a frictional floor. State `(position, velocity)`;
/// contact variables `(slack, positive friction, negative friction)`.
pub fn sliding_box(o: &Overrides) -> TrajectoryProblem {
    use sliding_box_params::*;
    let n = o.horizon.unwrap_or(HORIZON);
    let alpha = DAMPING;
    let mu_mg = FRICTION * MASS * GRAVITY;

    // Velocity row: alpha * v = u + lambda_plus - lambda_minus.
    let ct = ContinuousTerms {
        a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0 / alpha]),
        c: DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 0.0, 1.0 / alpha, -1.0 / alpha]),
        g: DVector::zeros(2),
        d: DMatrix::zeros(3, 2),
        e: DMatrix::from_row_slice(3, 1, &[0.0, 1.0, -1.0]),
        f: DMatrix::from_row_slice(3, 3, &[0.0, -1.0, -1.0, 1.0, 1.0, -1.0, 1.0, -1.0, 1.0]),
        h: DVector::from_row_slice(&[mu_mg, 0.0, 0.0]),
        algebraic_rows: vec![1],
    };
    let mut model = discretize_explicit_euler(&ct, DT);
    model.w[(0, 0)] = STATE_NOISE_STD * STATE_NOISE_STD;
    // mu enters only through the offset of the friction-cone row.
    model.sigma_h[0] = MASS * GRAVITY * FRICTION_STD;

    let mut terminal = Vec::new();
    terminal.extend(LinearChanceConstraint::two_sided("x1_terminal", unit(2, 0), 0.89, 0.91, vec![n]));
    terminal.extend(LinearChanceConstraint::two_sided("x2_terminal", unit(2, 1), -0.1, 0.1, vec![n]));
    let chance = ChanceSpec {
        delta: o.delta.unwrap_or(DEFAULT_DELTA),
        epsilon: o.epsilon.unwrap_or(EPSILON),
        big_m: o.big_m.unwrap_or(BIG_M),
        path: vec![LinearChanceConstraint::upper("x1>=0.885", vec![-1.0, 0.0], -0.885, (0..n).collect())],
        terminal,
        output_variance: OutputVariance::Full,
    };
    let big_m = chance.big_m;
    let bounds = match o.control_bound {
        Some(b) => ControlBounds::symmetric(1, b),
        None => ControlBounds::unbounded(1),
    };
    finish(
        "sliding_box",
        n,
        big_m,
        vec![1.0, -1.0],
        DMatrix::from_element(1, 1, CONTROL_WEIGHT),
        bounds,
        model,
        chance,
        o,
    )
}

pub mod dual_manipulator_params {
    /// Damping of the quasi-static box; not given for this system, so the
    /// sliding-box value is reused.
    pub const DAMPING: f64 = 4.0;
    pub const MASS: f64 = 1.0;
    pub const FRICTION: f64 = 0.1;
    pub const STIFFNESS: f64 = 100.0;
    pub const STATE_NOISE_STD: f64 = 2e-4;
    pub const PARAMETER_STD: f64 = 1e-4;
    pub const HORIZON: usize = 20;
    pub const BIG_M: f64 = 50.0;
    pub const EPSILON: f64 = 0.0042;
    /// Contact-force bound; also the worst-case force in variance propagation.
    pub const LAMBDA_UPPER: f64 = 3.0;
}

/// Box pushed by two point manipulators. State `(box position, box
/// velocity, left arm position, left arm velocity, right arm position, right
/// arm velocity)`; contact variables `(left contact, right contact, slack,
/// positive friction, negative friction)`.
pub fn dual_manipulators(o: &Overrides) -> TrajectoryProblem {
    use dual_manipulator_params::*;
    let n = o.horizon.unwrap_or(HORIZON);
    let alpha = DAMPING;
    let inv_k = 1.0 / STIFFNESS;
    let mu_mg = FRICTION * MASS * GRAVITY;

    let mut a_c = DMatrix::zeros(6, 6);
    a_c[(0, 1)] = 1.0;
    a_c[(2, 3)] = 1.0;
    a_c[(4, 5)] = 1.0;
    let mut b_c = DMatrix::zeros(6, 2);
    b_c[(3, 0)] = 1.0;
    b_c[(5, 1)] = 1.0;
    let mut c_c = DMatrix::zeros(6, 5);
    for (j, s) in [(0, 1.0), (1, -1.0), (3, 1.0), (4, -1.0)] {
        c_c[(1, j)] = s / alpha;
    }
    let ct = ContinuousTerms {
        a: a_c,
        b: b_c,
        c: c_c,
        g: DVector::zeros(6),
        d: DMatrix::from_row_slice(
            5,
            6,
            &[
                1.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            ],
        ),
        e: DMatrix::zeros(5, 2),
        f: DMatrix::from_row_slice(
            5,
            5,
            &[
                inv_k, 0.0, 0.0, 0.0, 0.0, 0.0, inv_k, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, -1.0, 1.0, -1.0, 1.0, 1.0,
                -1.0, -1.0, 1.0, 1.0, -1.0, 1.0,
            ],
        ),
        h: DVector::from_row_slice(&[0.0, 0.0, mu_mg, 0.0, 0.0]),
        algebraic_rows: vec![1],
    };
    let mut model = discretize_explicit_euler(&ct, DT);
    model.w[(0, 0)] = STATE_NOISE_STD * STATE_NOISE_STD;
    model.sigma_f[(0, 0)] = PARAMETER_STD;
    model.sigma_f[(1, 1)] = PARAMETER_STD;
    model.sigma_h[2] = MASS * GRAVITY * PARAMETER_STD;

    let terminal = LinearChanceConstraint::two_sided("x1_terminal", unit(6, 0), -0.01, 0.01, vec![n]).to_vec();
    let chance = ChanceSpec {
        delta: o.delta.unwrap_or(DEFAULT_DELTA),
        epsilon: o.epsilon.unwrap_or(EPSILON),
        big_m: o.big_m.unwrap_or(BIG_M),
        path: vec![LinearChanceConstraint::upper(
            "x1>=-0.17",
            {
                let mut a = vec![0.0; 6];
                a[0] = -1.0;
                a
            },
            0.17,
            (0..n).collect(),
        )],
        terminal,
        output_variance: OutputVariance::Full,
    };
    let bound = o.control_bound.unwrap_or(DEFAULT_CONTROL_BOUND);
    finish(
        "dual_manipulators",
        n,
        LAMBDA_UPPER,
        vec![0.1, -1.1, 0.0, 0.0, 0.1, 0.0],
        DMatrix::identity(2, 2),
        ControlBounds::symmetric(2, bound),
        model,
        chance,
        o,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lcp::{is_p_matrix, solve_lcp, LcpInstance, DEFAULT_TOL};

    #[test]
    fn zero_dynamics_discretize_to_identity() {
        let ct = ContinuousTerms {
            a: DMatrix::zeros(3, 3),
            b: DMatrix::zeros(3, 1),
            c: DMatrix::zeros(3, 1),
            g: DVector::zeros(3),
            d: DMatrix::zeros(1, 3),
            e: DMatrix::zeros(1, 1),
            f: DMatrix::identity(1, 1),
            h: DVector::zeros(1),
            algebraic_rows: vec![],
        };
        assert_eq!(discretize_explicit_euler(&ct, DT).a, DMatrix::identity(3, 3));
    }

    #[test]
    fn cartpole_discrete_entries() {
        let p = build_cartpole();
        let m = &p.model;
        assert!((m.a[(2, 1)] - 0.033 * 0.981).abs() < 1e-15);
        assert_eq!((m.a[(2, 1)] * 1e4).round() / 1e4, 0.0324);
        assert_eq!(m.b[(2, 0)], 0.033);
        assert_eq!(m.d.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.5, 0.0, 0.0]);
        assert_eq!(m.f[(0, 0)], 0.1);
        assert_eq!(m.h[0], 0.15);
        assert_eq!(m.nc(), 2);
        assert_eq!(p.r[(0, 0)], 0.01);
        assert_eq!(p.x_start, vec![-0.15, 0.0, 0.0, 0.0]);
        assert_eq!(p.horizon, 20);
        assert_eq!(p.chance.big_m, 100.0);
        assert_eq!(p.chance.epsilon, 0.002);
        assert_eq!(p.chance.state_rows_per_step(), 2);
        p.validate().unwrap();
    }

    #[test]
    fn sliding_box_entries() {
        let p = build_sliding_box();
        let m = &p.model;
        assert!((m.h[0] - 0.981).abs() < 1e-12);
        assert_eq!(m.nc(), 3);
        assert_eq!(p.chance.epsilon, 0.01);
        assert_eq!(p.x_start, vec![1.0, -1.0]);
        assert_eq!(m.a, DMatrix::from_row_slice(2, 2, &[1.0, DT, 0.0, 0.0]));
        assert_eq!(m.c[(1, 1)], 0.25);
        assert_eq!(m.w[(0, 0)], 4e-4 * 4e-4);
        p.validate().unwrap();
    }

    #[test]
    fn dual_manipulator_entries() {
        let p = build_dual_manipulators();
        assert_eq!(p.model.f[(0, 0)], 0.01);
        assert_eq!(p.chance.big_m, 50.0);
        assert_eq!(p.model.nc(), 5);
        assert_eq!(p.r, DMatrix::identity(2, 2));
        p.validate().unwrap();
    }

    #[test]
    fn p_matrix_status_of_benchmark_f() {
        assert!(is_p_matrix(&build_cartpole().model.f).unwrap());
        assert!(!is_p_matrix(&build_sliding_box().model.f).unwrap());
        assert!(!is_p_matrix(&build_dual_manipulators().model.f).unwrap());
    }

    #[test]
    fn nominal_first_step_is_finite() {
        for bm in Benchmark::ALL {
            let p = bm.build(&Overrides::default());
            let m = &p.model;
            let x = p.x_start_vec();
            let u = DVector::zeros(m.nu());
            let q = &m.d * &x + &m.e * &u + &m.h;
            let sol = solve_lcp(&LcpInstance::new(m.f.clone(), q).unwrap(), DEFAULT_TOL).unwrap();
            let next = &m.a * &x + &m.b * &u + &m.c * &sol.lambda + &m.g;
            assert!(next.iter().all(|v| v.is_finite()), "{}", bm.name());
        }
    }

    #[test]
    fn builders_round_trip_through_toml() {
        for bm in Benchmark::ALL {
            let p = bm.build(&Overrides::default());
            let text = p.to_toml().unwrap();
            let back = TrajectoryProblem::from_toml(&text).unwrap();
            assert_eq!(back, p, "{}", bm.name());
            assert_eq!(back.to_toml().unwrap(), text);
        }
    }

    #[test]
    fn overrides_apply() {
        let o = Overrides { horizon: Some(5), noise_scale: Some(0.0), epsilon: Some(0.5), ..Default::default() };
        let p = cartpole(&o);
        assert_eq!(p.horizon, 5);
        assert_eq!(p.chance.path[0].steps, vec![0, 1, 2, 3, 4]);
        assert_eq!(p.chance.terminal[0].steps, vec![5]);
        assert!(p.model.w.iter().all(|&v| v == 0.0));
        assert_eq!(p.chance.epsilon, 0.5);
    }
}
