//! Stochastic discrete-time linear complementarity systems and the
//! trajectory problems posed on them.
//!
//! ```text
//! x[k+1] = A x[k] + B u[k] + C lambda[k+1] + g + w[k]
//! 0 <= lambda[k+1]  ⟂  D x[k] + E u[k] + F lambda[k+1] + h + v[k] >= 0
//! ```
//!
//! `C`, `F` and `h` are random with elementwise independent Gaussian entries
//! (standard deviations `sigma_c`, `sigma_f`, `sigma_h`); `w ~ N(0, W)` and
//! `v ~ N(0, V)` are drawn afresh every step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
    #[error("invalid value: {0}")]
    Invalid(String),
}

/// Matrices stored row by row in configuration files.
pub(crate) mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

pub(crate) mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        Ok(DVector::from_vec(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdlcsModel {
    #[serde(with = "rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "rows")]
    pub b: DMatrix<f64>,
    #[serde(with = "rows")]
    pub c: DMatrix<f64>,
    #[serde(with = "rows")]
    pub d: DMatrix<f64>,
    #[serde(with = "rows")]
    pub e: DMatrix<f64>,
    #[serde(with = "rows")]
    pub f: DMatrix<f64>,
    #[serde(with = "vector")]
    pub g: DVector<f64>,
    #[serde(with = "vector")]
    pub h: DVector<f64>,
    /// State-noise covariance.
    #[serde(with = "rows")]
    pub w: DMatrix<f64>,
    /// Complementarity-noise covariance.
    #[serde(with = "rows")]
    pub v: DMatrix<f64>,
    #[serde(with = "rows")]
    pub sigma_c: DMatrix<f64>,
    #[serde(with = "rows")]
    pub sigma_f: DMatrix<f64>,
    #[serde(with = "vector")]
    pub sigma_h: DVector<f64>,
}

impl SdlcsModel {
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    pub fn nc(&self) -> usize {
        self.f.nrows()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (nx, nu, nc) = (self.nx(), self.nu(), self.nc());
        let checks: [(&str, (usize, usize), (usize, usize)); 11] = [
            ("A", self.a.shape(), (nx, nx)),
            ("B", self.b.shape(), (nx, nu)),
            ("C", self.c.shape(), (nx, nc)),
            ("D", self.d.shape(), (nc, nx)),
            ("E", self.e.shape(), (nc, nu)),
            ("F", self.f.shape(), (nc, nc)),
            ("W", self.w.shape(), (nx, nx)),
            ("V", self.v.shape(), (nc, nc)),
            ("sigma_c", self.sigma_c.shape(), (nx, nc)),
            ("sigma_f", self.sigma_f.shape(), (nc, nc)),
            ("g", (self.g.len(), 1), (nx, 1)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(ModelError::Dimension(format!(
                    "{name} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )));
            }
        }
        for (name, len) in [("h", self.h.len()), ("sigma_h", self.sigma_h.len())] {
            if len != nc {
                return Err(ModelError::Dimension(format!("{name} has length {len}, expected {nc}")));
            }
        }
        let all =
            [&self.a, &self.b, &self.c, &self.d, &self.e, &self.f, &self.w, &self.v, &self.sigma_c, &self.sigma_f];
        if all.iter().any(|m| m.iter().any(|x| !x.is_finite()))
            || self.g.iter().chain(self.h.iter()).chain(self.sigma_h.iter()).any(|x| !x.is_finite())
        {
            return Err(ModelError::Invalid("non-finite model entry".into()));
        }
        for (name, m) in [("W", &self.w), ("V", &self.v)] {
            check_psd(name, m)?;
        }
        if self.sigma_c.iter().chain(self.sigma_f.iter()).chain(self.sigma_h.iter()).any(|&s| s < 0.0) {
            return Err(ModelError::Invalid("negative parameter standard deviation".into()));
        }
        Ok(())
    }

    /// Copy with every noise and parameter deviation removed.
    pub fn noise_free(&self) -> Self {
        let mut m = self.clone();
        m.w.fill(0.0);
        m.v.fill(0.0);
        m.sigma_c.fill(0.0);
        m.sigma_f.fill(0.0);
        m.sigma_h.fill(0.0);
        m
    }
}

pub(crate) fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<(), ModelError> {
    if !m.is_square() {
        return Err(ModelError::Dimension(format!("{name} must be square")));
    }
    let scale = m.amax().max(1e-300);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(ModelError::Invalid(format!("{name} is not symmetric")));
    }
    if m.nrows() > 0 {
        let eig = m.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        if min < -1e-12 * scale {
            return Err(ModelError::Invalid(format!("{name} is not positive semidefinite (eigenvalue {min:e})")));
        }
    }
    Ok(())
}

/// One-sided linear state constraint `a' x[k] <= b` for every `k` in `steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearChanceConstraint {
    pub label: String,
    pub a: Vec<f64>,
    pub b: f64,
    pub steps: Vec<usize>,
    /// Fraction of the per-constraint risk allocation this row receives.
    /// Halves of a two-sided constraint carry 0.5 each.
    #[serde(default = "one")]
    pub risk_share: f64,
}

fn one() -> f64 {
    1.0
}

impl LinearChanceConstraint {
    pub fn upper(label: impl Into<String>, a: Vec<f64>, b: f64, steps: Vec<usize>) -> Self {
        Self { label: label.into(), a, b, steps, risk_share: 1.0 }
    }

    /// `lo <= a' x <= hi`, split into two one-sided rows with half the risk each.
    pub fn two_sided(label: &str, a: Vec<f64>, lo: f64, hi: f64, steps: Vec<usize>) -> [Self; 2] {
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        [
            Self { label: format!("{label}:upper"), a, b: hi, steps: steps.clone(), risk_share: 0.5 },
            Self { label: format!("{label}:lower"), a: neg, b: -lo, steps, risk_share: 0.5 },
        ]
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, x)| a * x).sum()
    }

    pub fn is_violated(&self, x: &[f64]) -> bool {
        self.value(x) > self.b
    }
}

/// Which terms make up the variance of a complementarity output `y`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputVariance {
    /// `D Σx Dᵀ + Σ_Fλ + V`.
    #[default]
    Full,
    /// Drops the propagated state term `D Σx Dᵀ`.
    ParameterOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChanceSpec {
    /// Total violation budget for the joint chance constraint.
    pub delta: f64,
    /// Relaxation of the complementarity constraints.
    pub epsilon: f64,
    pub big_m: f64,
    #[serde(default)]
    pub path: Vec<LinearChanceConstraint>,
    #[serde(default)]
    pub terminal: Vec<LinearChanceConstraint>,
    #[serde(default)]
    pub output_variance: OutputVariance,
}

impl ChanceSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return Err(ModelError::Invalid(format!("delta {} out of (0, 0.5]", self.delta)));
        }
        if !(self.epsilon > 0.0) {
            return Err(ModelError::Invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.big_m > 0.0) {
            return Err(ModelError::Invalid(format!("big-M must be positive, got {}", self.big_m)));
        }
        for c in self.constraints() {
            if c.a.iter().all(|&v| v == 0.0) {
                return Err(ModelError::Invalid(format!("constraint {} has a zero normal", c.label)));
            }
            if !(c.risk_share > 0.0 && c.risk_share <= 1.0) {
                return Err(ModelError::Invalid(format!("constraint {} risk share out of (0, 1]", c.label)));
            }
        }
        Ok(())
    }

    pub fn constraints(&self) -> impl Iterator<Item = &LinearChanceConstraint> {
        self.path.iter().chain(self.terminal.iter())
    }

    /// Number of state constraints per step used by the Boole split.
    pub fn state_rows_per_step(&self) -> usize {
        self.path.len().max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlBounds {
    pub fn symmetric(nu: usize, bound: f64) -> Self {
        Self { lower: vec![-bound; nu], upper: vec![bound; nu] }
    }

    pub fn unbounded(nu: usize) -> Self {
        Self::symmetric(nu, f64::INFINITY)
    }
}

pub const PROBLEM_SCHEMA: &str = "ccto-problem/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryProblem {
    pub schema: String,
    pub name: String,
    pub horizon: usize,
    /// Upper bound on every contact force, also used as the worst-case force
    /// in covariance propagation.
    pub lambda_upper: f64,
    pub x_start: Vec<f64>,
    #[serde(with = "rows")]
    pub sigma_start: DMatrix<f64>,
    #[serde(with = "rows")]
    pub q: DMatrix<f64>,
    #[serde(with = "rows")]
    pub r: DMatrix<f64>,
    pub control_bounds: ControlBounds,
    pub model: SdlcsModel,
    pub chance: ChanceSpec,
}

impl TrajectoryProblem {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.model.validate()?;
        self.chance.validate()?;
        let (nx, nu) = (self.model.nx(), self.model.nu());
        if self.horizon < 1 {
            return Err(ModelError::Invalid("horizon must be at least 1".into()));
        }
        if !(self.lambda_upper > 0.0) {
            return Err(ModelError::Invalid("lambda_upper must be positive".into()));
        }
        if self.x_start.len() != nx {
            return Err(ModelError::Dimension(format!("x_start has length {}, expected {nx}", self.x_start.len())));
        }
        if self.sigma_start.shape() != (nx, nx) || self.q.shape() != (nx, nx) || self.r.shape() != (nu, nu) {
            return Err(ModelError::Dimension("sigma_start, Q or R has the wrong shape".into()));
        }
        check_psd("sigma_start", &self.sigma_start)?;
        check_psd("Q", &self.q)?;
        if nu > 0 {
            let r_sym = (&self.r - self.r.transpose()).amax() <= 1e-12 * self.r.amax().max(1e-300);
            if !r_sym || self.r.clone().symmetric_eigen().eigenvalues.min() <= 0.0 {
                return Err(ModelError::Invalid("R must be symmetric positive definite".into()));
            }
        }
        let cb = &self.control_bounds;
        if cb.lower.len() != nu || cb.upper.len() != nu {
            return Err(ModelError::Dimension("control bounds do not match the input dimension".into()));
        }
        if cb.lower.iter().zip(&cb.upper).any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
            return Err(ModelError::Invalid("control lower bound exceeds upper bound".into()));
        }
        for c in self.chance.constraints() {
            if c.a.len() != nx {
                return Err(ModelError::Dimension(format!(
                    "constraint {} has {} coefficients, expected {nx}",
                    c.label,
                    c.a.len()
                )));
            }
            if let Some(&k) = c.steps.iter().find(|&&k| k > self.horizon) {
                return Err(ModelError::Invalid(format!(
                    "constraint {} refers to step {k} beyond the horizon",
                    c.label
                )));
            }
        }
        Ok(())
    }

    pub fn x_start_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x_start)
    }

    /// Same problem with every source of randomness removed.
    pub fn noise_free(&self) -> Self {
        let mut p = self.clone();
        p.model = self.model.noise_free();
        p.sigma_start.fill(0.0);
        p
    }

    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        toml::to_string(self)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let p: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if p.schema != PROBLEM_SCHEMA {
            return Err(ConfigError::Schema { found: p.schema, expected: PROBLEM_SCHEMA });
        }
        p.validate().map_err(ConfigError::Model)?;
        Ok(p)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported schema {found:?}, expected {expected:?}")]
    Schema { found: String, expected: &'static str },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrajectoryProblem {
        let model = SdlcsModel {
            a: DMatrix::identity(1, 1),
            b: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, 1.0),
            d: DMatrix::from_element(1, 1, 1.0),
            e: DMatrix::zeros(1, 1),
            f: DMatrix::from_element(1, 1, 1.0),
            g: DVector::zeros(1),
            h: DVector::zeros(1),
            w: DMatrix::zeros(1, 1),
            v: DMatrix::zeros(1, 1),
            sigma_c: DMatrix::zeros(1, 1),
            sigma_f: DMatrix::zeros(1, 1),
            sigma_h: DVector::zeros(1),
        };
        TrajectoryProblem {
            schema: PROBLEM_SCHEMA.into(),
            name: "tiny".into(),
            horizon: 2,
            lambda_upper: 10.0,
            x_start: vec![0.0],
            sigma_start: DMatrix::zeros(1, 1),
            q: DMatrix::zeros(1, 1),
            r: DMatrix::identity(1, 1),
            control_bounds: ControlBounds::unbounded(1),
            model,
            chance: ChanceSpec {
                delta: 0.1,
                epsilon: 0.01,
                big_m: 10.0,
                path: vec![],
                terminal: vec![],
                output_variance: OutputVariance::Full,
            },
        }
    }

    #[test]
    fn validation_catches_bad_shapes_and_values() {
        let p = tiny();
        p.validate().unwrap();
        let mut bad = p.clone();
        bad.model.b = DMatrix::zeros(2, 1);
        assert!(matches!(bad.validate(), Err(ModelError::Dimension(_))));
        let mut bad = p.clone();
        bad.model.w = DMatrix::from_element(1, 1, -1.0);
        assert!(matches!(bad.validate(), Err(ModelError::Invalid(_))));
        let mut bad = p.clone();
        bad.chance.delta = 0.6;
        assert!(bad.validate().is_err());
        let mut bad = p;
        bad.r = DMatrix::zeros(1, 1);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unbounded_controls_survive_toml() {
        let p = tiny();
        let text = p.to_toml().unwrap();
        assert_eq!(TrajectoryProblem::from_toml(&text).unwrap(), p);
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let text = tiny().to_toml().unwrap().replace(PROBLEM_SCHEMA, "other/9");
        assert!(matches!(TrajectoryProblem::from_toml(&text), Err(ConfigError::Schema { .. })));
    }

    #[test]
    fn two_sided_split() {
        let [up, lo] = LinearChanceConstraint::two_sided("x", vec![1.0, 0.0], -0.02, 0.02, vec![5]);
        assert_eq!(up.b, 0.02);
        assert_eq!(lo.a, vec![-1.0, 0.0]);
        assert_eq!(lo.b, 0.02);
        assert_eq!(up.risk_share + lo.risk_share, 1.0);
        assert!(up.is_violated(&[0.03, 0.0]));
        assert!(lo.is_violated(&[-0.03, 0.0]));
    }
}
