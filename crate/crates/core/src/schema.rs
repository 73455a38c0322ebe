//! Instance file schema (JSON or TOML).
//!
//! ```json
//! {
//!   "n_states": 2, "n_actions": 2, "gamma": 0.9,
//!   "rho": [0.5, 0.5],
//!   "reward": [[0.5, -0.175], [-0.775, 1.0]],
//!   "kernel": [[[0.7, 0.3], [0.4, 0.6]], [[0.8, 0.2], [0.1, 0.9]]],
//!   "policy": [[0.15, 0.85], [0.507, 0.493]],
//!   "threshold": 0.0
//! }
//! ```
//!
//! `threshold` defaults to 0. A nonzero threshold `R` re-centers the test at
//! load time through the reward shift `r̃ = r − (1−γ)R`, so downstream code
//! always tests against zero.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{MdpError, MdpInstance, TransitionKernel};

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path} as JSON ({json}) or TOML ({toml})")]
    Parse {
        path: String,
        json: String,
        toml: String,
    },
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// On-disk instance description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub rho: Vec<f64>,
    /// Reward `r(s,a)`, indexed `[s][a]`.
    pub reward: Vec<Vec<f64>>,
    /// Transition kernel `p(s'|s,a)`, indexed `[s][a][s']`.
    pub kernel: Vec<Vec<Vec<f64>>>,
    /// Target policy `π(a|s)`, indexed `[s][a]`.
    pub policy: Vec<Vec<f64>>,
    /// Test threshold `R`; the instance is loaded with rewards shifted so
    /// that the test compares against zero.
    #[serde(default)]
    pub threshold: f64,
}

impl InstanceFile {
    /// Validates and converts into an [`MdpInstance`], applying the
    /// threshold shift.
    pub fn into_instance(self) -> Result<MdpInstance, MdpError> {
        let kernel = TransitionKernel::from_rows(self.kernel)?;
        let reward: Vec<f64> = self.reward.into_iter().flatten().collect();
        let policy: Vec<f64> = self.policy.into_iter().flatten().collect();
        let instance = MdpInstance::new(
            self.n_states,
            self.n_actions,
            kernel,
            reward,
            self.rho,
            self.gamma,
            policy,
        )?;
        if self.threshold != 0.0 {
            instance.with_threshold(self.threshold)
        } else {
            Ok(instance)
        }
    }

    /// Snapshot of an in-memory instance (threshold 0, since any shift was
    /// already folded into the rewards).
    pub fn from_instance(instance: &MdpInstance) -> Self {
        let n = instance.n_states();
        let n_actions = instance.n_actions();
        let kernel = (0..n)
            .map(|s| {
                (0..n_actions)
                    .map(|a| instance.kernel().row(s, a).to_vec())
                    .collect()
            })
            .collect();
        let reward = (0..n)
            .map(|s| (0..n_actions).map(|a| instance.reward(s, a)).collect())
            .collect();
        let policy = (0..n)
            .map(|s| (0..n_actions).map(|a| instance.policy_prob(s, a)).collect())
            .collect();
        Self {
            n_states: n,
            n_actions,
            gamma: instance.gamma(),
            rho: instance.rho().to_vec(),
            reward,
            kernel,
            policy,
            threshold: 0.0,
        }
    }
}

/// Loads an instance from a JSON or TOML file. The format is picked by
/// extension; unknown extensions try JSON first, then TOML.
pub fn load_instance(path: impl AsRef<Path>) -> Result<MdpInstance, SchemaError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let parsed: InstanceFile = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| SchemaError::Parse {
            path: path.display().to_string(),
            json: e.to_string(),
            toml: "not attempted".into(),
        })?,
        Some("toml") => toml::from_str(&text).map_err(|e| SchemaError::Parse {
            path: path.display().to_string(),
            json: "not attempted".into(),
            toml: e.to_string(),
        })?,
        _ => match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(json_err) => toml::from_str(&text).map_err(|toml_err| SchemaError::Parse {
                path: path.display().to_string(),
                json: json_err.to_string(),
                toml: toml_err.to_string(),
            })?,
        },
    };
    Ok(parsed.into_instance()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::mdp::value_bundle;
    use approx::assert_abs_diff_eq;

    #[test]
    fn json_round_trip_preserves_values() {
        let (instance, _) = instances::two_state();
        let file = InstanceFile::from_instance(&instance);
        let text = serde_json::to_string_pretty(&file).unwrap();
        let parsed: InstanceFile = serde_json::from_str(&text).unwrap();
        let back = parsed.into_instance().unwrap();
        let v0 = value_bundle(instance.kernel(), &instance).unwrap().v_rho;
        let v1 = value_bundle(back.kernel(), &back).unwrap().v_rho;
        assert_abs_diff_eq!(v0, v1, epsilon = 1e-12);
    }

    #[test]
    fn toml_parsing_works() {
        let (instance, _) = instances::nonconvex_example();
        let file = InstanceFile::from_instance(&instance);
        let text = toml::to_string(&file).unwrap();
        let parsed: InstanceFile = toml::from_str(&text).unwrap();
        let back = parsed.into_instance().unwrap();
        assert_eq!(back.n_states(), 3);
        assert_eq!(back.n_actions(), 1);
    }

    #[test]
    fn threshold_is_applied_at_load() {
        let (instance, _) = instances::two_state();
        let mut file = InstanceFile::from_instance(&instance);
        file.threshold = 0.1;
        let shifted = file.into_instance().unwrap();
        let v0 = value_bundle(instance.kernel(), &instance).unwrap().v_rho;
        let v1 = value_bundle(shifted.kernel(), &shifted).unwrap().v_rho;
        assert_abs_diff_eq!(v1, v0 - 0.1, epsilon = 1e-9);
    }

    #[test]
    fn bad_rows_are_rejected() {
        let file = InstanceFile {
            n_states: 2,
            n_actions: 1,
            gamma: 0.9,
            rho: vec![0.5, 0.5],
            reward: vec![vec![0.1], vec![-0.1]],
            kernel: vec![vec![vec![0.6, 0.6]], vec![vec![0.5, 0.5]]],
            policy: vec![vec![1.0], vec![1.0]],
            threshold: 0.0,
        };
        assert!(file.into_instance().is_err());
    }
}
