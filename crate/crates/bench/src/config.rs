use std::path::{Path, PathBuf};

use amafqi::{AmafqiParams, ControlSpace, FqiParams, ForestParams};
use serde::{Deserialize, Serialize};

use crate::BenchError;

/// Which learners an experiment runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Methods {
    #[serde(rename = "amafqi")]
    Amafqi,
    #[serde(rename = "amafqi-l")]
    AmafqiLight,
    #[serde(rename = "fqi")]
    Fqi,
    #[serde(rename = "all")]
    All,
}

impl Methods {
    pub fn fqi(self) -> bool {
        matches!(self, Methods::Fqi | Methods::All)
    }

    pub fn amafqi(self) -> bool {
        matches!(self, Methods::Amafqi | Methods::All)
    }

    pub fn amafqi_light(self) -> bool {
        matches!(self, Methods::AmafqiLight | Methods::All)
    }
}

/// Flat experiment description, read from a JSON object. Missing keys take
/// the desk-scale defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of agents.
    pub m: usize,
    /// Number of states.
    #[serde(rename = "X", alias = "x")]
    pub n_states: usize,
    /// Batch size.
    #[serde(rename = "L", alias = "l")]
    pub batch_len: usize,
    /// Controls available to each agent.
    pub local_controls: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub gamma: f64,
    /// Trees per ensemble.
    #[serde(rename = "e", alias = "trees")]
    pub trees: usize,
    pub n_min: usize,
    /// Evaluation horizon.
    pub tau: usize,
    pub trials: usize,
    pub instances: usize,
    pub seed: u64,
    pub mode: Methods,
    pub light_agent_index: usize,
    pub max_iterations: usize,
    pub output_dir: PathBuf,
    /// Write one JSON model bundle per instance and learner.
    pub save_models: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            m: 3,
            n_states: 4,
            batch_len: 500,
            local_controls: 2,
            beta: 0.5,
            epsilon: 1e-3,
            gamma: 1e-3,
            trees: 5,
            n_min: 10,
            tau: 100,
            trials: 20,
            instances: 10,
            seed: 0,
            mode: Methods::All,
            light_agent_index: 0,
            max_iterations: amafqi::fqi::DEFAULT_MAX_ITERATIONS,
            output_dir: PathBuf::from("results"),
            save_models: true,
        }
    }
}

impl ExperimentConfig {
    /// Five agents, five states, 2000 samples.
    pub fn reference_scale() -> Self {
        ExperimentConfig {
            m: 5,
            n_states: 5,
            batch_len: 2000,
            ..ExperimentConfig::default()
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, BenchError> {
        let config: ExperimentConfig = serde_json::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let positive = [
            ("m", self.m),
            ("X", self.n_states),
            ("L", self.batch_len),
            ("local_controls", self.local_controls),
            ("e", self.trees),
            ("n_min", self.n_min),
            ("trials", self.trials),
            ("instances", self.instances),
            ("max_iterations", self.max_iterations),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(BenchError::Config(format!("{name} must be positive")));
            }
        }
        if self.light_agent_index >= self.m {
            return Err(BenchError::Config(format!(
                "light_agent_index {} must be below m = {}",
                self.light_agent_index, self.m
            )));
        }
        ControlSpace::new(self.m, self.local_controls)?;
        self.amafqi_params().validate()?;
        self.fqi_params().validate()?;
        Ok(())
    }

    pub fn forest(&self) -> ForestParams {
        ForestParams {
            trees: self.trees,
            n_min: self.n_min,
        }
    }

    pub fn amafqi_params(&self) -> AmafqiParams {
        AmafqiParams {
            beta: self.beta,
            epsilon: self.epsilon,
            gamma: self.gamma,
            forest: self.forest(),
            max_iterations: self.max_iterations,
        }
    }

    /// FQI stops on the same epsilon as AMAFQI.
    pub fn fqi_params(&self) -> FqiParams {
        FqiParams {
            beta: self.beta,
            epsilon: self.epsilon,
            forest: self.forest(),
            max_iterations: self.max_iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = ExperimentConfig::from_json_str("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn reads_flat_keys_and_aliases() {
        let c = ExperimentConfig::from_json_str(
            r#"{"m": 5, "X": 5, "L": 2000, "e": 7, "mode": "amafqi-l", "light_agent_index": 4}"#,
        )
        .unwrap();
        assert_eq!((c.m, c.n_states, c.batch_len, c.trees), (5, 5, 2000, 7));
        assert_eq!(c.mode, Methods::AmafqiLight);
        let c = ExperimentConfig::from_json_str(r#"{"x": 3, "l": 10, "trees": 2}"#).unwrap();
        assert_eq!((c.n_states, c.batch_len, c.trees), (3, 10, 2));
    }

    #[test]
    fn rejects_invalid_values() {
        for bad in [
            r#"{"beta": 1.0}"#,
            r#"{"epsilon": 0}"#,
            r#"{"gamma": 1e-4}"#,
            r#"{"m": 0}"#,
            r#"{"trials": 0}"#,
            r#"{"light_agent_index": 3}"#,
            r#"{"mode": "sarsa"}"#,
            r#"{"unknown": 1}"#,
            r#"{"m": "three"}"#,
        ] {
            assert!(ExperimentConfig::from_json_str(bad).is_err(), "{bad}");
        }
    }
}
