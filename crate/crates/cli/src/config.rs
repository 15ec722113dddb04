//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; unknown or
//! repeated keys are errors. Lists are comma separated.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

/// Frozen plateau threshold for the default counterexample ensemble.
pub const PLATEAU_THRESHOLD: f64 = 0.46893;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntegratorMode {
    MonteCarlo,
    Product,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub out: PathBuf,

    pub integrator: IntegratorMode,
    pub mc_samples: usize,
    pub tolerance: f64,

    pub analytic_families: bool,
    pub epsilon: f64,
    pub random_states: usize,
    pub visibility: f64,
    pub states_file: Option<PathBuf>,
    pub settings: usize,

    pub omega: f64,
    pub degrees: Vec<usize>,
    pub nodes: usize,
    pub kink_radius: f64,
    pub dynamics_states: usize,
    pub control_states: usize,
    pub control_nodes: usize,
    pub rank_tol: f64,
    pub control_tol: f64,
    pub plateau_factor: f64,
    pub plateau_threshold: f64,
    pub chain_degree: usize,
    pub chain_nodes: usize,
    pub chain_tol: f64,

    pub qudit_dims: Vec<u32>,
    pub hv_dims: Vec<u64>,
    pub n_max: u32,
    pub kernel: u64,

    pub l_max: usize,
    pub trials: usize,
    pub covariance_tol: f64,
    pub corrupt_d: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: "default".into(),
            seed: 2024,
            out: PathBuf::from("out"),
            integrator: IntegratorMode::MonteCarlo,
            mc_samples: 1_000_000,
            tolerance: 5e-3,
            analytic_families: true,
            epsilon: 0.1,
            random_states: 100,
            visibility: 0.2,
            states_file: None,
            settings: 20,
            omega: 1.0,
            degrees: vec![2, 4, 6, 8],
            nodes: 6000,
            kink_radius: 1e-3,
            dynamics_states: 32,
            control_states: 8,
            control_nodes: 2000,
            rank_tol: 1e-10,
            control_tol: 1e-6,
            plateau_factor: 0.5,
            plateau_threshold: PLATEAU_THRESHOLD,
            chain_degree: 4,
            chain_nodes: 2000,
            chain_tol: 1e-6,
            qudit_dims: vec![2, 3],
            hv_dims: vec![2, 20],
            n_max: 8,
            kernel: 0,
            l_max: 5,
            trials: 100,
            covariance_tol: 1e-8,
            corrupt_d: false,
        }
    }
}

/// Offsets of the independent random streams derived from `seed`.
pub mod stream {
    pub const ENSEMBLE: u64 = 0;
    pub const GRID: u64 = 1;
    pub const CONTROL_STATES: u64 = 2;
    pub const SETTINGS: u64 = 3;
    pub const INTEGRATOR: u64 = 4;
    pub const COVARIANCE: u64 = 5;
    pub const CONTROL_NODES: u64 = 6;
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("{key}: expected a boolean, got '{value}'"))),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses `text`; relative file paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), i + 1).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key '{key}'", i + 1)));
            }
            cfg.set(key, value, base)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok((Self::parse(&text, base)?, text))
    }

    fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<(), CliError> {
        match key {
            "experiment" => self.experiment = v.to_string(),
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "integrator" => {
                self.integrator = match v {
                    "monte_carlo" => IntegratorMode::MonteCarlo,
                    "product" => IntegratorMode::Product,
                    _ => return Err(CliError::Config(format!("integrator: unknown mode '{v}'"))),
                }
            }
            "mc_samples" => self.mc_samples = parse(key, v)?,
            "tolerance" => self.tolerance = parse(key, v)?,
            "analytic_families" => self.analytic_families = parse_bool(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "random_states" => self.random_states = parse(key, v)?,
            "visibility" => self.visibility = parse(key, v)?,
            "states_file" => {
                let p = base.join(v);
                if !p.is_file() {
                    return Err(CliError::Config(format!("states_file: {} does not exist", p.display())));
                }
                self.states_file = Some(p);
            }
            "settings" => self.settings = parse(key, v)?,
            "omega" => self.omega = parse(key, v)?,
            "degrees" => self.degrees = parse_list(key, v)?,
            "nodes" => self.nodes = parse(key, v)?,
            "kink_radius" => self.kink_radius = parse(key, v)?,
            "dynamics_states" => self.dynamics_states = parse(key, v)?,
            "control_states" => self.control_states = parse(key, v)?,
            "control_nodes" => self.control_nodes = parse(key, v)?,
            "rank_tol" => self.rank_tol = parse(key, v)?,
            "control_tol" => self.control_tol = parse(key, v)?,
            "plateau_factor" => self.plateau_factor = parse(key, v)?,
            "plateau_threshold" => self.plateau_threshold = parse(key, v)?,
            "chain_degree" => self.chain_degree = parse(key, v)?,
            "chain_nodes" => self.chain_nodes = parse(key, v)?,
            "chain_tol" => self.chain_tol = parse(key, v)?,
            "qudit_dims" => self.qudit_dims = parse_list(key, v)?,
            "hv_dims" => self.hv_dims = parse_list(key, v)?,
            "n_max" => self.n_max = parse(key, v)?,
            "kernel" => self.kernel = parse(key, v)?,
            "l_max" => self.l_max = parse(key, v)?,
            "trials" => self.trials = parse(key, v)?,
            "covariance_tol" => self.covariance_tol = parse(key, v)?,
            "corrupt_d" => self.corrupt_d = parse_bool(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(msg.to_string()));
        if !(0.0..=1.0).contains(&self.visibility) {
            return bad("visibility must lie in [0, 1]");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        if self.degrees.is_empty() || self.degrees.contains(&0) {
            return bad("degrees must be a nonempty list of positive integers");
        }
        if !(self.kink_radius > 0.0 && self.kink_radius < 0.5) {
            return bad("kink_radius must lie in (0, 0.5)");
        }
        if !self.omega.is_finite() {
            return bad("omega must be finite");
        }
        Ok(())
    }

    pub fn sub_seed(&self, stream: u64) -> u64 {
        self.seed.wrapping_add(stream)
    }

    /// Every effective setting as text, sorted by key.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let integrator = match self.integrator {
            IntegratorMode::MonteCarlo => "monte_carlo",
            IntegratorMode::Product => "product",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("experiment", self.experiment.clone()),
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("integrator", integrator.into()),
            ("mc_samples", self.mc_samples.to_string()),
            ("tolerance", self.tolerance.to_string()),
            ("analytic_families", self.analytic_families.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("random_states", self.random_states.to_string()),
            ("visibility", self.visibility.to_string()),
            (
                "states_file",
                self.states_file.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("settings", self.settings.to_string()),
            ("omega", self.omega.to_string()),
            ("degrees", join(&self.degrees)),
            ("nodes", self.nodes.to_string()),
            ("kink_radius", self.kink_radius.to_string()),
            ("dynamics_states", self.dynamics_states.to_string()),
            ("control_states", self.control_states.to_string()),
            ("control_nodes", self.control_nodes.to_string()),
            ("rank_tol", self.rank_tol.to_string()),
            ("control_tol", self.control_tol.to_string()),
            ("plateau_factor", self.plateau_factor.to_string()),
            ("plateau_threshold", self.plateau_threshold.to_string()),
            ("chain_degree", self.chain_degree.to_string()),
            ("chain_nodes", self.chain_nodes.to_string()),
            ("chain_tol", self.chain_tol.to_string()),
            ("qudit_dims", join(&self.qudit_dims)),
            ("hv_dims", join(&self.hv_dims)),
            ("n_max", self.n_max.to_string()),
            ("kernel", self.kernel.to_string()),
            ("l_max", self.l_max.to_string()),
            ("trials", self.trials.to_string()),
            ("covariance_tol", self.covariance_tol.to_string()),
            ("corrupt_d", self.corrupt_d.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_echoes() {
        let text = "# comment\nseed = 5\ndegrees = 2, 4\nintegrator = product # trailing\n\ncorrupt_d = yes\n";
        let cfg = ExperimentConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.degrees, vec![2, 4]);
        assert_eq!(cfg.integrator, IntegratorMode::Product);
        assert!(cfg.corrupt_d);
        let echo = cfg.echo();
        assert_eq!(echo["degrees"], "2,4");
        assert_eq!(echo["integrator"], "product");
        // echo round-trips
        let rendered: String = echo
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        assert_eq!(ExperimentConfig::parse(&rendered, Path::new(".")).unwrap(), cfg);
    }

    #[test]
    fn rejects_malformed_input() {
        for text in [
            "seed 5",
            "seed = five",
            "seed = 1\nseed = 2",
            "colour = red",
            "visibility = 1.5",
            "degrees = ",
            "integrator = simpson",
            "states_file = /definitely/missing",
        ] {
            assert!(
                matches!(ExperimentConfig::parse(text, Path::new(".")), Err(CliError::Config(_))),
                "{text}"
            );
        }
    }
}
