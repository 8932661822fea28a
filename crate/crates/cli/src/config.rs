use std::path::{Path, PathBuf};

use ccto_core::benchmarks::{Benchmark, Overrides};
use ccto_core::model::{OutputVariance, TrajectoryProblem};
use serde::{Deserialize, Serialize};

pub const RUN_SCHEMA: &str = "ccto-run/1";

/// Everything a command needs besides input files. Written next to the
/// artifacts as the effective configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    /// A built-in benchmark name or `custom`.
    pub system: String,
    /// Problem file for `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_file: Option<PathBuf>,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_limit: Option<usize>,
    #[serde(default)]
    pub overrides: Overrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: RUN_SCHEMA.into(),
            system: "cartpole".into(),
            problem_file: None,
            delta: 0.1,
            trials: 1000,
            seed: 0,
            output_dir: PathBuf::from("out"),
            node_limit: None,
            overrides: Overrides::default(),
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text).map_err(|e| err(format!("{origin}: {e}")))?;
        if c.schema != RUN_SCHEMA {
            return Err(err(format!("{origin}: schema {:?}, expected {RUN_SCHEMA:?}", c.schema)));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_toml(&text, &path.display().to_string())?;
        // problem files are resolved relative to the config that names them
        if let (Some(p), Some(dir)) = (&c.problem_file, path.parent()) {
            if p.is_relative() {
                c.problem_file = Some(dir.join(p));
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return Err(err(format!("delta {} out of (0, 0.5]", self.delta)));
        }
        if self.trials == 0 {
            return Err(err("trials must be at least 1"));
        }
        if self.overrides.delta.is_some() {
            return Err(err("overrides.delta: set the top-level delta instead"));
        }
        if self.node_limit == Some(0) {
            return Err(err("node_limit must be at least 1"));
        }
        match (self.system.as_str(), &self.problem_file) {
            ("custom", None) => Err(err("system = \"custom\" needs problem_file")),
            ("custom", Some(_)) => Ok(()),
            (name, _) if Benchmark::from_name(name).is_some() => Ok(()),
            (name, _) => Err(err(format!(
                "unknown system {name:?}; expected one of cartpole, sliding_box, dual_manipulators, custom"
            ))),
        }
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) =
            assignment.split_once('=').ok_or_else(|| err(format!("--set {assignment:?}: expected key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        let num = || value.parse::<f64>().map_err(|_| err(format!("--set {key}: {value:?} is not a number")));
        let count = || value.parse::<usize>().map_err(|_| err(format!("--set {key}: {value:?} is not a count")));
        let o = &mut self.overrides;
        match key {
            "N" | "horizon" => o.horizon = Some(count()?),
            "M" | "big_m" => o.big_m = Some(num()?),
            "epsilon" => o.epsilon = Some(num()?),
            "control_bound" => o.control_bound = Some(num()?),
            "lambda_upper" => o.lambda_upper = Some(num()?),
            "noise_scale" => o.noise_scale = Some(num()?),
            "output_variance" => {
                o.output_variance = Some(match value {
                    "full" => OutputVariance::Full,
                    "parameter_only" => OutputVariance::ParameterOnly,
                    _ => return Err(err(format!("--set output_variance: {value:?} is not full or parameter_only"))),
                })
            }
            "node_limit" => self.node_limit = Some(count()?),
            _ => return Err(err(format!("--set: unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<TrajectoryProblem, ConfigError> {
        self.validate()?;
        let o = Overrides { delta: Some(self.delta), ..self.overrides.clone() };
        let p = match Benchmark::from_name(&self.system) {
            Some(b) => b.build(&o),
            None => {
                let path = self.problem_file.as_ref().expect("validated");
                let text = std::fs::read_to_string(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
                let mut p = TrajectoryProblem::from_toml(&text).map_err(|e| err(format!("{}: {e}", path.display())))?;
                o.apply(&mut p).map_err(err)?;
                p
            }
        };
        p.validate().map_err(|e| err(e.to_string()))?;
        Ok(p)
    }

    /// File-name stem shared by every artifact of one run.
    pub fn stem(system: &str, delta: f64) -> String {
        format!("{system}_delta{delta}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = RunConfig { delta: 0.02, seed: 7, ..Default::default() };
        c.set("M=80").unwrap();
        c.set("output_variance=parameter_only").unwrap();
        c.set("node_limit=500").unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml(), "t").unwrap(), c);
    }

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml(), "t").unwrap(), c);
    }

    #[test]
    fn parse_errors_name_the_field() {
        let text = RunConfig::default().to_toml().replace("trials = 1000", "trials = \"many\"");
        let e = RunConfig::from_toml(&text, "cfg.toml").unwrap_err().0;
        assert!(e.contains("trials") && e.contains("line"), "{e}");
        let text = format!("{}\nbogus = 1\n", RunConfig::default().to_toml());
        assert!(RunConfig::from_toml(&text, "cfg.toml").unwrap_err().0.contains("bogus"));
    }

    #[test]
    fn validation() {
        let c = RunConfig { delta: 0.6, ..Default::default() };
        assert!(c.validate().unwrap_err().0.contains("delta 0.6 out of (0, 0.5]"));
        let c = RunConfig { trials: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = RunConfig { system: "custom".into(), ..Default::default() };
        assert!(c.validate().is_err());
        let c = RunConfig { system: "pendulum".into(), ..Default::default() };
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        assert!(c.set("colour=red").is_err());
        assert!(c.set("M").is_err());
        assert!(c.set("epsilon=small").is_err());
    }

    #[test]
    fn overrides_reach_the_problem() {
        let mut c = RunConfig { system: "sliding_box".into(), delta: 0.3, ..Default::default() };
        c.set("N=10").unwrap();
        c.set("epsilon=0.02").unwrap();
        let p = c.build_problem().unwrap();
        assert_eq!(p.horizon, 10);
        assert_eq!(p.chance.epsilon, 0.02);
        assert_eq!(p.chance.delta, 0.3);
    }
}
