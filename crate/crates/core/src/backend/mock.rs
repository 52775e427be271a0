//! Deterministic mock policies.
//!
//! Oracle and adversarial policies need the scenario labels, which a real model
//! never sees. They are handed over through [`MockBackend::with_labels`].

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{request_fingerprint, Backend, BackendError, RawCompletion, SamplingParams};
use crate::dataset::{Dataset, Level, Scenario};
use crate::prompts::{AlignmentMode, AlignmentTarget, PromptBundle};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "arg", rename_all = "snake_case")]
pub enum MockPolicy {
    /// Picks the first choice labeled with the prompted level.
    Oracle,
    /// Picks the first choice labeled with the opposite of the prompted level.
    Adversarial,
    FixedIndex(usize),
    SeededRandom(u64),
    /// Request fingerprint to response text.
    Scripted(BTreeMap<String, String>),
}

impl MockPolicy {
    pub fn name(&self) -> String {
        match self {
            MockPolicy::Oracle => "oracle".into(),
            MockPolicy::Adversarial => "adversarial".into(),
            MockPolicy::FixedIndex(k) => format!("fixed={k}"),
            MockPolicy::SeededRandom(s) => format!("random={s}"),
            MockPolicy::Scripted(_) => "scripted".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    policy: MockPolicy,
    scenarios: Arc<HashMap<String, Scenario>>,
}

fn answer(reasoning: &str, index: usize) -> String {
    format!("{{\"Reasoning\": \"{reasoning}\", \"Answer\": {index}}}")
}

impl MockBackend {
    pub fn new(policy: MockPolicy) -> Self {
        MockBackend {
            policy,
            scenarios: Arc::new(HashMap::new()),
        }
    }

    /// Reveals scenario labels and choice counts to the mock.
    pub fn with_labels(mut self, dataset: &Dataset) -> Self {
        self.scenarios = Arc::new(
            dataset
                .scenarios
                .iter()
                .map(|s| (s.id.clone(), s.clone()))
                .collect(),
        );
        self
    }

    pub fn policy(&self) -> &MockPolicy {
        &self.policy
    }

    fn scenario(&self, bundle: &PromptBundle) -> Result<&Scenario, BackendError> {
        self.scenarios.get(&bundle.scenario_id).ok_or_else(|| {
            BackendError::Mock(format!(
                "policy {} needs labels for scenario `{}`",
                self.policy.name(),
                bundle.scenario_id
            ))
        })
    }

    /// The level the prompt steers toward; unaligned prompts count as high on
    /// the scenario's primary attribute.
    fn prompted_target(bundle: &PromptBundle, scenario: &Scenario) -> AlignmentTarget {
        match bundle.mode {
            AlignmentMode::Aligned { target } => target,
            AlignmentMode::Unaligned => {
                AlignmentTarget::new(scenario.primary_attribute, Level::High)
            }
        }
    }

    fn first_labeled(scenario: &Scenario, target: AlignmentTarget) -> Result<usize, BackendError> {
        scenario
            .choices
            .iter()
            .position(|c| c.label(target.attribute) == Some(target.level))
            .ok_or_else(|| {
                BackendError::Mock(format!(
                    "scenario `{}` has no choice labeled {target}",
                    scenario.id
                ))
            })
    }

    fn respond(&self, bundle: &PromptBundle, fingerprint: &str) -> Result<String, BackendError> {
        match &self.policy {
            MockPolicy::FixedIndex(k) => Ok(answer("fixed", *k)),
            MockPolicy::Oracle => {
                let s = self.scenario(bundle)?;
                Ok(answer(
                    "oracle",
                    Self::first_labeled(s, Self::prompted_target(bundle, s))?,
                ))
            }
            MockPolicy::Adversarial => {
                let s = self.scenario(bundle)?;
                let target = Self::prompted_target(bundle, s).opposite();
                Ok(answer("adversarial", Self::first_labeled(s, target)?))
            }
            MockPolicy::SeededRandom(seed) => {
                let n = self.scenario(bundle)?.choices.len();
                let mut hasher = Sha256::new();
                hasher.update(seed.to_le_bytes());
                hasher.update(fingerprint.as_bytes());
                let digest = hasher.finalize();
                let mut rng = ChaCha8Rng::from_seed(digest.into());
                Ok(answer("seeded", rng.random_range(0..n)))
            }
            MockPolicy::Scripted(map) => map.get(fingerprint).cloned().ok_or_else(|| {
                BackendError::Mock(format!(
                    "no scripted response for fingerprint {fingerprint}"
                ))
            }),
        }
    }
}

impl Backend for MockBackend {
    fn backend_id(&self) -> String {
        format!("mock:{}", self.policy.name())
    }

    fn complete(
        &self,
        bundle: &PromptBundle,
        params: &SamplingParams,
        sample_index: u32,
    ) -> Result<RawCompletion, BackendError> {
        let fingerprint = request_fingerprint(bundle, params, sample_index);
        Ok(RawCompletion {
            text: self.respond(bundle, &fingerprint)?,
            backend_id: self.backend_id(),
            latency_ms: 0,
            request_fingerprint: fingerprint,
        })
    }
}
