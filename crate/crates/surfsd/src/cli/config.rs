//! Run configuration: a TOML file with nested sections. Unknown keys are
//! rejected and validation errors name the offending key.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::Tau2Choice;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file '{path}': {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for '{key}': {reason}")]
    Invalid { key: String, reason: String },
    #[error("invalid expression in '{key}': {reason}")]
    Expression { key: String, reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Explicit surface; optional when the problem is a named built-in
    /// that brings its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<SurfaceConfig>,
    pub mesh: MeshConfig,
    pub problem: ProblemConfig,
    pub stabilization: StabConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    /// "sphere", "spheroid" or "plane".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    #[serde(default = "default_box_min")]
    pub box_min: [f64; 3],
    #[serde(default = "default_box_max")]
    pub box_max: [f64; 3],
    /// Subdivisions per axis for single runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Refinement levels for studies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<usize>>,
}

fn default_box_min() -> [f64; 3] {
    [0.0, 0.0, 0.0]
}

fn default_box_max() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Built-in problem name ("spheroid-smooth", "spheroid-layer",
    /// "plane-patch"). Inline fields below override its pieces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Fabricated solution; the right-hand side is manufactured from it
    /// unless `f` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<[String; 3]>,
    /// Reference range for overshoot reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_range: Option<[f64; 2]>,
    /// Zero-mean constraint: on/off; absent means automatic (on when the
    /// reaction coefficient vanishes identically).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_constraint: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabConfig {
    pub epsilon: f64,
    pub c_tau: f64,
    pub gamma: f64,
    #[serde(default = "default_tau2")]
    pub tau2: Tau2Value,
}

fn default_tau2() -> Tau2Value {
    Tau2Value::Keyword("inv-tau1".into())
}

/// Either a positive number or the keyword "inv-tau1".
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Tau2Value {
    Fixed(f64),
    Keyword(String),
}

impl Tau2Value {
    pub fn to_choice(&self) -> Result<Tau2Choice, ConfigError> {
        match self {
            Tau2Value::Fixed(v) => Ok(Tau2Choice::Fixed(*v)),
            Tau2Value::Keyword(s) if s == "inv-tau1" => Ok(Tau2Choice::InverseTau1),
            Tau2Value::Keyword(s) => Err(ConfigError::Invalid {
                key: "stabilization.tau2".into(),
                reason: format!("expected a number or \"inv-tau1\", got \"{s}\""),
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Relative tolerance of the condition-number estimate.
    pub estimate_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200_000,
            estimate_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    /// Seed for randomized pieces (surface offsets); recorded in the
    /// manifest so runs reproduce bit-identically.
    pub seed: u64,
    /// Number of random surface-center offsets in the condition study.
    pub offsets: usize,
    /// Mesh size at which the offset sweep runs (defaults to the first
    /// level).
    pub offset_n: Option<usize>,
    /// Normal-stabilization exponents for the condition study.
    pub gammas: Option<Vec<f64>>,
    /// Parameter sets for the layer study; defaults to the reference,
    /// weak and strong stabilization triple.
    pub layer_runs: Option<Vec<LayerRunConfig>>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            offsets: 0,
            offset_n: None,
            gammas: None,
            layer_runs: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRunConfig {
    pub label: String,
    pub c_tau: f64,
    pub tau2: Tau2Value,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

impl std::str::FromStr for RunConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        Self::parse_str(text)
    }
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, reason: String| ConfigError::Invalid {
            key: key.into(),
            reason,
        };
        if let Some(s) = &self.surface {
            match s.kind.as_str() {
                "sphere" => {
                    if s.radius.is_none() {
                        return Err(invalid("surface.radius", "required for kind = \"sphere\"".into()));
                    }
                }
                "spheroid" => {
                    if s.r_max.is_none() || s.r_min.is_none() {
                        return Err(invalid(
                            "surface.r_max",
                            "r_max and r_min required for kind = \"spheroid\"".into(),
                        ));
                    }
                }
                "plane" => {
                    if s.point.is_none() || s.normal.is_none() {
                        return Err(invalid(
                            "surface.point",
                            "point and normal required for kind = \"plane\"".into(),
                        ));
                    }
                }
                other => {
                    return Err(invalid(
                        "surface.kind",
                        format!("unknown kind \"{other}\" (sphere | spheroid | plane)"),
                    ))
                }
            }
        }
        for k in 0..3 {
            let extent = self.mesh.box_max[k] - self.mesh.box_min[k];
            if extent.is_nan() || extent <= 0.0 {
                return Err(invalid("mesh.box_max", "box must have positive extent".into()));
            }
        }
        if self.mesh.n.is_none() && self.mesh.levels.is_none() {
            return Err(invalid("mesh.n", "set mesh.n or mesh.levels".into()));
        }
        if let Some(n) = self.mesh.n {
            if n < 2 {
                return Err(invalid("mesh.n", format!("need n >= 2, got {n}")));
            }
        }
        if let Some(levels) = &self.mesh.levels {
            if levels.iter().any(|&n| n < 2) {
                return Err(invalid("mesh.levels", "every level needs n >= 2".into()));
            }
            if levels.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid(
                    "mesh.levels",
                    "levels must be strictly increasing".into(),
                ));
            }
        }
        if self.problem.name.is_none()
            && self.problem.u.is_none()
            && self.problem.f.is_none()
        {
            return Err(invalid(
                "problem",
                "set problem.name, or an inline problem.u / problem.f".into(),
            ));
        }
        if self.stabilization.epsilon < 0.0 {
            return Err(invalid("stabilization.epsilon", "must be >= 0".into()));
        }
        if self.stabilization.c_tau < 0.0 {
            return Err(invalid("stabilization.c_tau", "must be >= 0".into()));
        }
        if !(0.0..2.0).contains(&self.stabilization.gamma) {
            return Err(invalid(
                "stabilization.gamma",
                format!("must lie in [0, 2), got {}", self.stabilization.gamma),
            ));
        }
        self.stabilization.tau2.to_choice()?;
        if let Some(r) = self.problem.reference_range {
            if r[1] < r[0] {
                return Err(invalid(
                    "problem.reference_range",
                    "upper bound below lower bound".into(),
                ));
            }
        }
        let tol = self.solver.tol;
        if tol.is_nan() || tol <= 0.0 || tol >= 1.0 {
            return Err(invalid("solver.tol", "must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [mesh]
        n = 8
        [problem]
        name = "spheroid-smooth"
        [stabilization]
        epsilon = 1e-3
        c_tau = 0.5
        gamma = 0.0
    "#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::parse_str(MINIMAL).unwrap();
        assert_eq!(cfg.solver.tol, 1e-10);
        assert_eq!(cfg.study.seed, 42);
        assert_eq!(cfg.output.dir, "out");
        assert_eq!(cfg.stabilization.tau2, Tau2Value::Keyword("inv-tau1".into()));
    }

    #[test]
    fn unknown_keys_are_rejected_with_key_name() {
        let err = RunConfig::parse_str(&format!("{MINIMAL}\n[solver]\ntolerance = 1.0"))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tolerance"), "message was: {msg}");
    }

    #[test]
    fn invalid_values_name_the_key() {
        let bad = MINIMAL.replace("gamma = 0.0", "gamma = 2.5");
        let err = RunConfig::parse_str(&bad).unwrap_err();
        assert!(err.to_string().contains("stabilization.gamma"));

        let bad = MINIMAL.replace("n = 8", "levels = [8, 8]");
        let err = RunConfig::parse_str(&bad).unwrap_err();
        assert!(err.to_string().contains("mesh.levels"));
    }

    #[test]
    fn tau2_accepts_number_or_keyword() {
        let cfg = RunConfig::parse_str(&format!("{MINIMAL}\n")).unwrap();
        assert_eq!(cfg.stabilization.tau2.to_choice().unwrap(), Tau2Choice::InverseTau1);
        let with_num = MINIMAL.replace("gamma = 0.0", "gamma = 0.0\ntau2 = 12.5");
        let cfg = RunConfig::parse_str(&with_num).unwrap();
        assert_eq!(
            cfg.stabilization.tau2.to_choice().unwrap(),
            Tau2Choice::Fixed(12.5)
        );
        let bad = MINIMAL.replace("gamma = 0.0", "gamma = 0.0\ntau2 = \"bogus\"");
        assert!(RunConfig::parse_str(&bad).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::parse_str(MINIMAL).unwrap();
        let text = cfg.to_toml();
        let again = RunConfig::parse_str(&text).unwrap();
        assert_eq!(text, again.to_toml());
    }
}
