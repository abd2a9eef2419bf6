use std::path::Path;

use amafqi::{AmafqiModel, GeneralizedPolicy, PolicyTable};
use serde::{Deserialize, Serialize};

use crate::experiment::Method;
use crate::BenchError;

/// A trained learner as written to disk: the total policy used by `act`,
/// plus, for AMAFQI variants, the batch policy table and the fitted model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelBundle {
    pub method: Method,
    pub n_states: usize,
    pub policy: GeneralizedPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PolicyTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<AmafqiModel>,
}

impl ModelBundle {
    pub fn new(
        method: Method,
        n_states: usize,
        policy: GeneralizedPolicy,
        table: Option<PolicyTable>,
        model: Option<AmafqiModel>,
    ) -> Self {
        ModelBundle {
            method,
            n_states,
            policy,
            table,
            model,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, BenchError> {
        let bundle: ModelBundle = serde_json::from_str(s)?;
        bundle.policy.validate()?;
        if bundle.policy.n_states() != bundle.n_states {
            return Err(BenchError::Config(format!(
                "bundle declares {} states but its policy covers {}",
                bundle.n_states,
                bundle.policy.n_states()
            )));
        }
        Ok(bundle)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> Result<String, BenchError> {
        Ok(serde_json::to_string(self)?)
    }

    /// Local controls of every agent at state `x`.
    pub fn act(&self, x: usize) -> Result<Vec<usize>, BenchError> {
        Ok(self.policy.act_components(x)?)
    }
}
