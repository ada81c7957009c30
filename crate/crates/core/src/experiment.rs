//! Experiment orchestration: turn a config into a prepared environment,
//! drive the training loop, and persist results (CSV series plus a JSON
//! manifest) deterministically.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backdoor::{AttackPlan, Injection, TriggerSpec, TwoPhaseAttack};
use crate::config::ExperimentConfig;
use crate::data::{dirichlet_partition, global_downsample, load_or_synthesize, LabelDistribution};
use crate::engine::{run_rounds, FlEnvironment, NoAdversary, TrainingRun};
use crate::error::{Error, Result};
use crate::inference::InferenceResult;
use crate::metrics::MetricSeries;
use crate::model::NetworkArch;
use crate::rng;

/// A config resolved against its dataset: environment, true distributions,
/// and the concrete attack plan.
pub struct PreparedExperiment {
    pub config: ExperimentConfig,
    pub env: FlEnvironment,
    pub p_global: LabelDistribution,
    pub client_distributions: Vec<LabelDistribution>,
    pub attack_plan: Option<AttackPlan>,
}

/// Resolve data, partition, architecture, and the attack schedule.
pub fn prepare(config: &ExperimentConfig) -> Result<PreparedExperiment> {
    let violations = config.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations.len()));
    }
    let seed = config.seed;
    let pair = load_or_synthesize(&config.dataset, rng::derive_seed(seed, "dataset", &[]))?;
    let mut train = pair.train;
    if let Some(keep) = config.partition.imbalance {
        train = global_downsample(&train, keep, rng::derive_seed(seed, "imbalance", &[]))?;
    }
    let clients = dirichlet_partition(
        &train,
        &config.partition,
        rng::derive_seed(seed, "partition", &[]),
    )?;
    let p_global = train.label_distribution();
    let client_distributions: Vec<LabelDistribution> =
        clients.iter().map(|c| c.label_distribution()).collect();

    let mut layer_sizes = Vec::with_capacity(config.model.hidden.len() + 2);
    layer_sizes.push(train.feature_dim());
    layer_sizes.extend_from_slice(&config.model.hidden);
    layer_sizes.push(train.n_classes);
    let arch = NetworkArch::new(layer_sizes, config.model.activation)?;

    let attack_plan = match &config.attack {
        None => None,
        Some(attack) => {
            let n = config.partition.n_clients;
            let attacker_ids: Vec<usize> = match &attack.client_ids {
                Some(ids) => {
                    let mut ids = ids.clone();
                    ids.sort_unstable();
                    ids.dedup();
                    ids
                }
                None => {
                    let fraction = attack.alignment_fraction.unwrap_or(0.0);
                    let count = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
                    rng::stream(seed, "attack/clients", &[]).sample_indices(n, count)
                }
            };
            let trigger = TriggerSpec {
                region: attack.trigger.region.clone().unwrap_or_else(|| {
                    TriggerSpec::default_region(train.layout, train.feature_dim())
                }),
                value: attack.trigger.value.unwrap_or_else(|| train.max_feature_value()),
                target_label: attack.trigger.target_label,
            };
            trigger.validate(train.feature_dim(), train.n_classes)?;
            let injection = attack.injection.as_ref().map(|inj| Injection {
                round: inj.round,
                client: inj.client.unwrap_or(attacker_ids[0]),
            });
            if let Some(inj) = &injection {
                if !attacker_ids.contains(&inj.client) {
                    return Err(Error::Config(format!(
                        "injection client {} is not attacker-controlled",
                        inj.client
                    )));
                }
            }
            let public_pool = match attack.public_fraction {
                None => None,
                Some(fraction) => {
                    let count = ((train.len() as f64 * fraction).floor() as usize).max(1);
                    let picks = rng::stream(seed, "attack/public", &[])
                        .sample_indices(train.len(), count);
                    let samples = picks.iter().map(|&i| train.samples[i].clone()).collect();
                    Some(crate::data::ClientDataset::new(
                        samples,
                        usize::MAX,
                        train.n_classes,
                        train.layout,
                    )?)
                }
            };
            Some(AttackPlan {
                attacker_ids,
                preliminary: attack.preliminary,
                inference_round: attack.inference_round,
                injection,
                force_selection: attack.force_selection,
                trigger,
                poison: attack.poison.clone(),
                evolution: attack.evolution.clone(),
                policy: attack.augmentation.clone(),
                aux_size: attack.aux_size,
                public_pool,
                aligned_local_steps: attack.aligned_local_steps,
            })
        }
    };

    let env = FlEnvironment {
        arch,
        clients,
        test_set: pair.test,
        round_cfg: config.rounds.round_config(),
        defense: config.defense.clone(),
        master_seed: seed,
        eval_trigger: attack_plan.as_ref().map(|p| p.trigger.clone()),
    };
    Ok(PreparedExperiment {
        config: config.clone(),
        env,
        p_global,
        client_distributions,
        attack_plan,
    })
}

/// Summary of the inference attack against the ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceSummary {
    pub round: usize,
    pub p_hat: Vec<f64>,
    pub objective: f64,
    pub nfe_used: usize,
    pub unavailable_classes: Vec<usize>,
    /// l2 distance between the inferred and the true whole-population
    /// distribution.
    pub inferred_to_true: f64,
    /// Mean l2 distance between client distributions and the truth.
    pub mean_original_to_true: f64,
    pub best_per_generation: Vec<f64>,
}

/// Everything a finished experiment produces.
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub run: TrainingRun,
    pub series: Vec<MetricSeries>,
    pub p_global: LabelDistribution,
    pub client_distributions: Vec<LabelDistribution>,
    pub client_sizes: Vec<usize>,
    pub inference: Option<InferenceSummary>,
    pub notes: Vec<String>,
}

/// Run the full scenario described by the config.
pub fn run_training(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let prepared = prepare(config)?;
    let total_rounds = prepared.config.rounds.total_rounds;
    let run = match prepared.attack_plan.clone() {
        None => run_rounds(&prepared.env, total_rounds, &mut NoAdversary)?,
        Some(plan) => {
            let mut adversary = TwoPhaseAttack::new(plan, prepared.config.seed);
            run_rounds(&prepared.env, total_rounds, &mut adversary)?
        }
    };

    let mut main_accuracy = MetricSeries::new("main_accuracy");
    let mut update_norm = MetricSeries::new("update_norm");
    let mut backdoor = MetricSeries::new("backdoor_success");
    for log in &run.logs {
        main_accuracy.push(log.round, log.metrics.main_accuracy)?;
        update_norm.push(log.round, log.metrics.update_norm)?;
        if let Some(b) = log.metrics.backdoor_success {
            backdoor.push(log.round, b)?;
        }
    }
    let mut series = vec![main_accuracy, update_norm];
    if !backdoor.points.is_empty() {
        series.push(backdoor);
    }

    let inference = run.adversary.inference.as_ref().map(|(round, result)| {
        summarize_inference(*round, result, &prepared.p_global, &prepared.client_distributions)
    });
    let notes = run.adversary.notes.clone();
    Ok(ExperimentOutcome {
        config: prepared.config,
        client_sizes: prepared.env.clients.iter().map(|c| c.len()).collect(),
        run,
        series,
        p_global: prepared.p_global,
        client_distributions: prepared.client_distributions,
        inference,
        notes,
    })
}

fn summarize_inference(
    round: usize,
    result: &InferenceResult,
    p_global: &LabelDistribution,
    client_distributions: &[LabelDistribution],
) -> InferenceSummary {
    let mean_original = client_distributions
        .iter()
        .map(|p| p.l2_distance(p_global))
        .sum::<f64>()
        / client_distributions.len() as f64;
    InferenceSummary {
        round,
        p_hat: result.p_hat.probs.clone(),
        objective: result.objective,
        nfe_used: result.nfe_used,
        unavailable_classes: result.unavailable_classes.clone(),
        inferred_to_true: result.p_hat.l2_distance(p_global),
        mean_original_to_true: mean_original,
        best_per_generation: result.best_per_generation.clone(),
    }
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct ClientSummary<'a> {
    id: usize,
    n_samples: usize,
    distribution: &'a [f64],
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    seed: u64,
    metrics: BTreeMap<String, String>,
    p_global: &'a [f64],
    clients: Vec<ClientSummary<'a>>,
    inference: Option<&'a InferenceSummary>,
    notes: &'a [String],
}

/// Atomic write: a temp file in the target directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().ok_or_else(|| Error::Usage("output path has no parent".into()))?;
    let tmp = dir.join(format!(
        ".tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Persist one CSV file per metric series plus `manifest.json`. Outputs are
/// byte-identical across runs with the same config and seed.
pub fn write_outputs(outcome: &ExperimentOutcome, out_dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut index = BTreeMap::new();
    for series in &outcome.series {
        let filename = format!("{}.csv", series.name);
        write_atomic(&out_dir.join(&filename), &series.to_csv())?;
        index.insert(series.name.clone(), filename.clone());
        files.push(filename);
    }
    let manifest = Manifest {
        config: &outcome.config,
        seed: outcome.config.seed,
        metrics: index,
        p_global: &outcome.p_global.probs,
        clients: outcome
            .client_distributions
            .iter()
            .enumerate()
            .map(|(id, dist)| ClientSummary {
                id,
                n_samples: outcome.client_sizes[id],
                distribution: &dist.probs,
            })
            .collect(),
        inference: outcome.inference.as_ref(),
        notes: &outcome.notes,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_atomic(&out_dir.join("manifest.json"), &text)?;
    files.push("manifest.json".to_string());
    Ok(files)
}
