//! Experiment configuration: the single structured file that makes a run
//! reproducible, plus named preset inheritance and validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::AugmentationPolicy;
use crate::backdoor::PoisonConfig;
use crate::data::{DatasetSource, PartitionSpec};
use crate::defense::DefenseConfig;
use crate::engine::{BatchMode, RoundConfig};
use crate::error::{Error, Result};
use crate::inference::EvolutionConfig;
use crate::model::Activation;

/// Classifier shape: hidden layer sizes plus the hidden activation. Input
/// and output widths come from the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

fn default_activation() -> Activation {
    Activation::Tanh
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: default_hidden(),
            activation: default_activation(),
        }
    }
}

/// Round schedule: FedAvg knobs plus the experiment length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundsConfig {
    pub total_rounds: usize,
    pub clients_per_round: usize,
    #[serde(default = "default_steps")]
    pub local_steps: usize,
    #[serde(default = "default_lr")]
    pub local_lr: f64,
    #[serde(default = "default_batch")]
    pub batch: BatchMode,
}

fn default_steps() -> usize {
    1
}

fn default_lr() -> f64 {
    0.1
}

fn default_batch() -> BatchMode {
    BatchMode::Full
}

impl RoundsConfig {
    pub fn round_config(&self) -> RoundConfig {
        RoundConfig {
            clients_per_round: self.clients_per_round,
            local_steps: self.local_steps,
            local_lr: self.local_lr,
            batch_mode: self.batch,
        }
    }
}

/// Trigger description; region and value fall back to layout defaults at
/// preparation time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriggerConfig {
    #[serde(default)]
    pub region: Option<Vec<usize>>,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub target_label: usize,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig {
            region: None,
            value: None,
            target_label: 0,
        }
    }
}

/// When and by whom the backdoor is injected.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InjectionConfig {
    pub round: usize,
    /// Defaults to the designated (first) attacker client.
    #[serde(default)]
    pub client: Option<usize>,
}

/// The attacker block: controlled clients, schedule, and attack parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Explicit attacker-controlled client ids; the first listed runs the
    /// inference.
    #[serde(default)]
    pub client_ids: Option<Vec<usize>>,
    /// Alternative to explicit ids: the fraction of clients under attacker
    /// control, drawn deterministically from the master seed.
    #[serde(default)]
    pub alignment_fraction: Option<f64>,
    /// Whether the preliminary phase (inference + aligned training) runs.
    #[serde(default = "default_true")]
    pub preliminary: bool,
    #[serde(default = "default_inference_round")]
    pub inference_round: usize,
    #[serde(default)]
    pub injection: Option<InjectionConfig>,
    /// Guarantee the injecting client participates in its round.
    #[serde(default = "default_true")]
    pub force_selection: bool,
    #[serde(default)]
    pub trigger: TriggerConfig,
    #[serde(default)]
    pub poison: PoisonConfig,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub augmentation: AugmentationPolicy,
    /// Auxiliary dataset size; defaults to each client's local size.
    #[serde(default)]
    pub aux_size: Option<usize>,
    /// Fraction of the training population the attacker holds as a public
    /// complement pool (the paper-style public-dataset assumption).
    #[serde(default)]
    pub public_fraction: Option<f64>,
    /// Local steps aligned clients run; attackers control their own
    /// training effort. None mirrors the benign schedule.
    #[serde(default)]
    pub aligned_local_steps: Option<usize>,
}

fn default_true() -> bool {
    true
}

fn default_inference_round() -> usize {
    1
}

/// The full scenario description; the reproducibility contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub partition: PartitionSpec,
    #[serde(default)]
    pub model: ModelConfig,
    pub rounds: RoundsConfig,
    #[serde(default = "default_defense")]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub attack: Option<AttackConfig>,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_defense() -> DefenseConfig {
    DefenseConfig::None
}

/// One constraint violation, addressed by config field path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn check(violations: &mut Vec<Violation>, path: &str, result: Result<()>) {
    if let Err(e) = result {
        violations.push(Violation {
            path: path.to_string(),
            message: e.to_string(),
        });
    }
}

impl ExperimentConfig {
    /// Collect every statically checkable constraint violation. Dataset-
    /// dependent constraints (trigger bounds against the feature dim of an
    /// IDX file, for instance) are re-checked at preparation time.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let n = self.partition.n_clients;
        check(&mut v, "partition", self.partition.validate());
        check(&mut v, "defense", self.defense.validate());
        if self.rounds.total_rounds == 0 {
            v.push(Violation {
                path: "rounds.total_rounds".into(),
                message: "must be >= 1".into(),
            });
        }
        check(&mut v, "rounds", self.rounds.round_config().validate(n.max(1)));
        if self.model.hidden.iter().any(|&h| h == 0) {
            v.push(Violation {
                path: "model.hidden".into(),
                message: "hidden layer sizes must be positive".into(),
            });
        }
        let known_classes = match &self.dataset {
            DatasetSource::Synthetic { classes, .. } => {
                if *classes < 2 {
                    v.push(Violation {
                        path: "dataset.classes".into(),
                        message: "need at least 2 classes".into(),
                    });
                }
                Some(*classes)
            }
            DatasetSource::Idx { .. } => None,
        };
        if let Some(attack) = &self.attack {
            self.validate_attack(attack, n, known_classes, &mut v);
        }
        v
    }

    fn validate_attack(
        &self,
        attack: &AttackConfig,
        n: usize,
        known_classes: Option<usize>,
        v: &mut Vec<Violation>,
    ) {
        match (&attack.client_ids, attack.alignment_fraction) {
            (None, None) => v.push(Violation {
                path: "attack".into(),
                message: "needs client_ids or alignment_fraction".into(),
            }),
            (Some(ids), _) => {
                if ids.is_empty() {
                    v.push(Violation {
                        path: "attack.client_ids".into(),
                        message: "must not be empty".into(),
                    });
                }
                for &id in ids {
                    if id >= n {
                        v.push(Violation {
                            path: "attack.client_ids".into(),
                            message: format!("client {id} does not exist (N = {n})"),
                        });
                    }
                }
            }
            (None, Some(f)) => {
                if !(f > 0.0 && f <= 1.0) {
                    v.push(Violation {
                        path: "attack.alignment_fraction".into(),
                        message: format!("{f} outside (0, 1]"),
                    });
                }
            }
        }
        if attack.preliminary {
            if attack.inference_round == 0 {
                v.push(Violation {
                    path: "attack.inference_round".into(),
                    message: "inference needs one completed round to observe (>= 1)".into(),
                });
            }
            if attack.inference_round >= self.rounds.total_rounds {
                v.push(Violation {
                    path: "attack.inference_round".into(),
                    message: format!(
                        "round {} outside the {}-round schedule",
                        attack.inference_round, self.rounds.total_rounds
                    ),
                });
            }
        }
        if let Some(inj) = &attack.injection {
            if inj.round >= self.rounds.total_rounds {
                v.push(Violation {
                    path: "attack.injection.round".into(),
                    message: format!(
                        "round {} outside the {}-round schedule",
                        inj.round, self.rounds.total_rounds
                    ),
                });
            }
            if let (Some(client), Some(ids)) = (inj.client, &attack.client_ids) {
                if !ids.contains(&client) {
                    v.push(Violation {
                        path: "attack.injection.client".into(),
                        message: format!("client {client} is not attacker-controlled"),
                    });
                }
            }
        }
        if let Some(c) = known_classes {
            if attack.trigger.target_label >= c {
                v.push(Violation {
                    path: "attack.trigger.target_label".into(),
                    message: format!("label {} outside {c} classes", attack.trigger.target_label),
                });
            }
            if let Some(m) = attack.aux_size {
                if m < c {
                    v.push(Violation {
                        path: "attack.aux_size".into(),
                        message: format!("size {m} below class count {c}"),
                    });
                }
            }
        }
        if let Some(f) = attack.public_fraction {
            if !(f > 0.0 && f <= 1.0) {
                v.push(Violation {
                    path: "attack.public_fraction".into(),
                    message: format!("{f} outside (0, 1]"),
                });
            }
        }
        check(v, "attack.poison", attack.poison.validate());
        check(v, "attack.evolution", attack.evolution.validate());
        check(v, "attack.augmentation", attack.augmentation.validate());
    }
}

// ---------------------------------------------------------------------------
// Presets and inheritance
// ---------------------------------------------------------------------------

/// The in-repo presets: the four data settings (balanced/imbalanced whole
/// population x alpha in {1, 0.1}) at desk scale, plus the paper-scale
/// MNIST layout.
pub const PRESET_NAMES: [&str; 5] = [
    "setting1",
    "setting2",
    "setting3",
    "setting4",
    "mnist_paper",
];

pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "setting1" => Some(include_str!("../../../presets/setting1.json")),
        "setting2" => Some(include_str!("../../../presets/setting2.json")),
        "setting3" => Some(include_str!("../../../presets/setting3.json")),
        "setting4" => Some(include_str!("../../../presets/setting4.json")),
        "mnist_paper" => Some(include_str!("../../../presets/mnist_paper.json")),
        _ => None,
    }
}

/// Deep-merge JSON values: objects merge key-wise with `overlay` winning;
/// everything else is replaced by `overlay`.
pub fn merge_json(base: Value, overlay: Value) -> Value {
    match (base, overlay) {
        (Value::Object(mut b), Value::Object(o)) => {
            for (k, ov) in o {
                let merged = match b.remove(&k) {
                    Some(bv) => merge_json(bv, ov),
                    None => ov,
                };
                b.insert(k, merged);
            }
            Value::Object(b)
        }
        (_, overlay) => overlay,
    }
}

/// Resolve a raw config value: if it names a `preset`, merge it on top of
/// that preset's content (single-level inheritance).
pub fn resolve_config_value(mut raw: Value) -> Result<Value> {
    let preset_name = raw
        .as_object_mut()
        .and_then(|o| o.remove("preset"))
        .and_then(|v| v.as_str().map(str::to_string));
    match preset_name {
        None => Ok(raw),
        Some(name) => {
            let base_text = preset(&name)
                .ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))?;
            let base: Value = serde_json::from_str(base_text)?;
            Ok(merge_json(base, raw))
        }
    }
}

/// Parse a resolved JSON value into a typed config.
pub fn config_from_value(value: Value) -> Result<ExperimentConfig> {
    Ok(serde_json::from_value(value)?)
}
