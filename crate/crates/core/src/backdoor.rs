//! Trigger application, dataset poisoning, backdoor local training, and
//! gamma-scaled update submission, plus the two-phase attack controller
//! that drives inference, alignment, and injection through the engine's
//! adversary hook.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationPolicy;
use crate::auxiliary::{build_auxiliary, AuxSpec};
use crate::data::{ClientDataset, FeatureLayout, LabelDistribution, Sample};
use crate::engine::{
    local_train, minibatch_epochs, Adversary, AdversaryReport, ClientUpdate, FlEnvironment,
    RoundLog, UpdateOrigin,
};
use crate::error::{Error, Result};
use crate::inference::{
    augment_until_aligned, infer_distribution, EvolutionConfig, InferenceResult,
    SimulationObjective,
};
use crate::model::ParamVector;
use crate::rng;

/// A fixed feature-region overwrite that flips the sample's effective label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    /// Feature indices the trigger overwrites.
    pub region: Vec<usize>,
    /// Value written into the region.
    pub value: f64,
    pub target_label: usize,
}

impl TriggerSpec {
    /// Default trigger region: the top-left 4x4 pixel block for images, the
    /// first four features for plain vectors.
    pub fn default_region(layout: FeatureLayout, feature_dim: usize) -> Vec<usize> {
        match layout {
            FeatureLayout::Image { width, .. } => {
                let mut region = Vec::with_capacity(16);
                for r in 0..4 {
                    for c in 0..4 {
                        let ix = r * width + c;
                        if ix < feature_dim {
                            region.push(ix);
                        }
                    }
                }
                region
            }
            FeatureLayout::Vector => (0..4.min(feature_dim)).collect(),
        }
    }

    pub fn validate(&self, feature_dim: usize, n_classes: usize) -> Result<()> {
        if self.region.is_empty() {
            return Err(Error::Config("trigger region is empty".into()));
        }
        if let Some(&bad) = self.region.iter().find(|&&i| i >= feature_dim) {
            return Err(Error::Config(format!(
                "trigger index {bad} outside feature dim {feature_dim}"
            )));
        }
        if self.target_label >= n_classes {
            return Err(Error::Config(format!(
                "target label {} outside {} classes",
                self.target_label, n_classes
            )));
        }
        if !self.value.is_finite() {
            return Err(Error::Config("trigger value must be finite".into()));
        }
        Ok(())
    }
}

/// Overwrite the trigger region and swap the label to the target.
pub fn apply_trigger(sample: &Sample, trigger: &TriggerSpec) -> Sample {
    let mut out = sample.clone();
    for &i in &trigger.region {
        out.features[i] = trigger.value;
    }
    out.label = trigger.target_label;
    out
}

/// How the update scale factor is chosen at injection time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// The participants-per-round approximation gamma = K.
    K,
    /// The exact replacement ratio n / n_a over the round's participants
    /// (unknowable to a real attacker; the white-box oracle mode).
    TrueRatio,
    Fixed(f64),
}

impl Default for GammaMode {
    fn default() -> Self {
        GammaMode::K
    }
}

/// Backdoor training knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_ppb")]
    pub poisoned_per_batch: usize,
    #[serde(default = "default_epochs")]
    pub poison_epochs: usize,
    #[serde(default = "default_lr")]
    pub poison_lr: f64,
    #[serde(default)]
    pub gamma: GammaMode,
}

fn default_batch() -> usize {
    128
}

fn default_ppb() -> usize {
    40
}

fn default_epochs() -> usize {
    10
}

fn default_lr() -> f64 {
    0.05
}

impl Default for PoisonConfig {
    fn default() -> Self {
        PoisonConfig {
            batch_size: default_batch(),
            poisoned_per_batch: default_ppb(),
            poison_epochs: default_epochs(),
            poison_lr: default_lr(),
            gamma: GammaMode::default(),
        }
    }
}

impl PoisonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("poison batch_size must be >= 1".into()));
        }
        if self.poisoned_per_batch > self.batch_size {
            return Err(Error::Config(format!(
                "poisoned_per_batch {} exceeds batch size {}",
                self.poisoned_per_batch, self.batch_size
            )));
        }
        if self.poison_epochs == 0 {
            return Err(Error::Config("poison_epochs must be >= 1".into()));
        }
        if !(self.poison_lr > 0.0) {
            return Err(Error::Config("poison_lr must be > 0".into()));
        }
        if let GammaMode::Fixed(g) = self.gamma {
            if !(g >= 1.0) {
                return Err(Error::Config(format!("gamma {g} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// Split the local data into a clean part and a triggered part sized so each
/// training batch carries `poisoned_per_batch` of `batch_size` poisoned
/// samples. Together they cover the local set once (each original appears
/// exactly once, in clean or triggered form).
pub fn poison_partition(
    local: &ClientDataset,
    cfg: &PoisonConfig,
    trigger: &TriggerSpec,
    seed: u64,
) -> Result<(ClientDataset, ClientDataset)> {
    cfg.validate()?;
    trigger.validate(local.feature_dim(), local.n_classes)?;
    if local.len() < cfg.batch_size.min(local.len()).max(1) || local.is_empty() {
        return Err(Error::Config("local dataset too small to poison".into()));
    }
    let n = local.len();
    let n_poison = (n * cfg.poisoned_per_batch) / cfg.batch_size;
    let mut rng = rng::stream(seed, "poison/select", &[]);
    let picks = rng.sample_indices(n, n_poison);
    let mut is_poison = vec![false; n];
    for &i in &picks {
        is_poison[i] = true;
    }
    let mut clean = Vec::with_capacity(n - n_poison);
    let mut poison = Vec::with_capacity(n_poison);
    for (i, s) in local.samples.iter().enumerate() {
        if is_poison[i] {
            poison.push(apply_trigger(s, trigger));
        } else {
            clean.push(s.clone());
        }
    }
    Ok((
        ClientDataset::new(clean, local.owner_id, local.n_classes, local.layout)?,
        ClientDataset::new(poison, local.owner_id, local.n_classes, local.layout)?,
    ))
}

/// Backdoor local training: `poison_epochs` of minibatch SGD at `poison_lr`
/// on mixed clean/poison batches. Returns the unscaled delta.
pub fn backdoor_train(
    arch: &crate::model::NetworkArch,
    global: &ParamVector,
    local: &ClientDataset,
    cfg: &PoisonConfig,
    trigger: &TriggerSpec,
    seed: u64,
) -> Result<ClientUpdate> {
    let (clean, poison) = poison_partition(local, cfg, trigger, seed)?;
    let mut train_rng = rng::stream(seed, "poison/train", &[]);
    let trained = minibatch_epochs(
        arch,
        global,
        &clean.samples,
        &poison.samples,
        cfg.poisoned_per_batch,
        cfg.batch_size,
        cfg.poison_epochs,
        cfg.poison_lr,
        &mut train_rng,
    )?;
    Ok(ClientUpdate {
        delta: trained.sub(global),
        n_samples: local.len(),
        client_id: local.owner_id,
        origin: UpdateOrigin::AttackerBackdoor,
    })
}

/// Scale the update's delta by gamma; the reported sample count is
/// unchanged.
pub fn scale_update(update: &ClientUpdate, gamma: f64) -> ClientUpdate {
    ClientUpdate {
        delta: update.delta.scaled(gamma),
        n_samples: update.n_samples,
        client_id: update.client_id,
        origin: update.origin,
    }
}

// ---------------------------------------------------------------------------
// Two-phase attack controller
// ---------------------------------------------------------------------------

/// Injection appointment: (round, client).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub round: usize,
    pub client: usize,
}

/// Fully resolved attack schedule, built from the experiment config.
#[derive(Debug, Clone)]
pub struct AttackPlan {
    /// Sorted attacker-controlled client ids; the first runs the inference.
    pub attacker_ids: Vec<usize>,
    /// Whether the preliminary phase (inference + aligned training) runs.
    pub preliminary: bool,
    pub inference_round: usize,
    pub injection: Option<Injection>,
    pub force_selection: bool,
    pub trigger: TriggerSpec,
    pub poison: PoisonConfig,
    pub evolution: EvolutionConfig,
    pub policy: AugmentationPolicy,
    /// Auxiliary dataset size; None keeps each client's own local size.
    pub aux_size: Option<usize>,
    /// Attacker-held public sample pool complementing local data.
    pub public_pool: Option<ClientDataset>,
    /// Local steps aligned clients run (attackers set their own training
    /// effort); None mirrors the benign round config.
    pub aligned_local_steps: Option<usize>,
}

/// The two-phase adversary: benign behavior until the preliminary phase,
/// distribution inference at the appointed round, aligned training on the
/// crafted auxiliary datasets afterwards, and one gamma-scaled backdoor
/// injection.
pub struct TwoPhaseAttack {
    plan: AttackPlan,
    master_seed: u64,
    /// Auxiliary datasets per controlled client, built once after inference.
    aux: BTreeMap<usize, ClientDataset>,
    inference: Option<(usize, InferenceResult)>,
    notes: Vec<String>,
}

impl TwoPhaseAttack {
    pub fn new(plan: AttackPlan, master_seed: u64) -> Self {
        TwoPhaseAttack {
            plan,
            master_seed,
            aux: BTreeMap::new(),
            inference: None,
            notes: Vec::new(),
        }
    }

    pub fn inference_result(&self) -> Option<&(usize, InferenceResult)> {
        self.inference.as_ref()
    }

    fn designated(&self) -> usize {
        self.plan.attacker_ids[0]
    }

    /// A client's local data complemented with the attacker's public pool.
    fn with_public(&self, local: &ClientDataset) -> Result<ClientDataset> {
        match &self.plan.public_pool {
            None => Ok(local.clone()),
            Some(pool) => {
                let mut samples = local.samples.clone();
                samples.extend(pool.samples.iter().cloned());
                ClientDataset::new(samples, local.owner_id, local.n_classes, local.layout)
            }
        }
    }

    fn run_inference(
        &mut self,
        round: usize,
        logs: &[RoundLog],
        current_global: &ParamVector,
        env: &FlEnvironment,
    ) -> Result<()> {
        let prev = &logs[round - 1];
        // The update the participant observed: the difference between the
        // last two synchronizations.
        let observed = current_global.sub(&prev.global_before);
        let sync_point = &prev.global_before;
        let attacker_data = self.with_public(&env.clients[self.designated()])?;

        let aligned = augment_until_aligned(
            &attacker_data,
            &env.arch,
            sync_point,
            &self.plan.policy,
            rng::derive_seed(self.master_seed, "attack/augment", &[round as u64]),
        )?;
        if !aligned.missing_classes.is_empty() {
            self.notes.push(format!(
                "inference: classes {:?} absent from attacker data; gradients zero-substituted",
                aligned.missing_classes
            ));
        }
        let objective = SimulationObjective::new(
            &env.arch,
            sync_point,
            &observed,
            &aligned.dataset,
            env.round_cfg.local_steps,
            env.round_cfg.local_lr,
        )?;
        let prior = env.clients[self.designated()].label_distribution();
        let mut result = infer_distribution(
            &self.plan.evolution,
            env.arch.n_classes(),
            |p| objective.value(p),
            Some(&prior),
            rng::derive_seed(self.master_seed, "attack/evolution", &[round as u64]),
        )?;
        result.unavailable_classes = objective.unavailable_classes().to_vec();
        // DIAGNOSTIC ONLY: oracle alignment target
        if std::env::var("FEDSIM_ORACLE_PHAT").is_ok() {
            let mut totals = vec![0.0; env.arch.n_classes()];
            let mut n = 0.0;
            for c in &env.clients {
                for s in &c.samples { totals[s.label] += 1.0; n += 1.0; }
            }
            result.p_hat = crate::data::LabelDistribution::new(
                totals.iter().map(|t| t / n).collect()).unwrap();
        }
        self.inference = Some((round, result));
        Ok(())
    }

    /// Per attacker client: shape the (public-pool-complemented) local data
    /// toward the inferred distribution. Deficient classes are augmented up
    /// to the policy's growth cap, excessive ones are downsampled; targets
    /// the augmentation cannot support are capped with their mass
    /// redistributed, so no class is ever synthesized from thin air.
    fn build_aux_datasets(&mut self, env: &FlEnvironment) -> Result<()> {
        let p_hat = self.inference.as_ref().unwrap().1.p_hat.clone();
        for &id in &self.plan.attacker_ids {
            let source = self.with_public(&env.clients[id])?;
            if source.len() < source.n_classes {
                self.notes.push(format!(
                    "client {id}: only {} samples; skipping alignment",
                    source.len()
                ));
                continue;
            }
            let size = self.plan.aux_size.unwrap_or(env.clients[id].len());
            let real = source.class_counts();
            let supportable: Vec<usize> = real
                .iter()
                .map(|&r| ((r as f64) * self.plan.policy.max_growth).floor() as usize)
                .collect();
            let (counts, capped) = feasible_counts(size, &p_hat, &supportable);
            let total: usize = counts.iter().sum();
            if total < source.n_classes {
                self.notes.push(format!(
                    "client {id}: alignment infeasible; training on original data"
                ));
                continue;
            }
            if !capped.is_empty() {
                self.notes.push(format!(
                    "client {id}: classes {capped:?} capped at augmentation capacity; partial alignment"
                ));
            }
            let spec = AuxSpec {
                total_size: total,
                target: LabelDistribution::new(
                    counts.iter().map(|&c| c as f64 / total as f64).collect(),
                )?,
                policy: self.plan.policy.clone(),
                seed: rng::derive_seed(self.master_seed, "attack/aux", &[id as u64]),
            };
            let aux = build_auxiliary(&source, &spec)?;
            self.aux.insert(id, aux);
        }
        Ok(())
    }
}

/// Integer class counts for the auxiliary dataset: the target apportionment,
/// capped at what augmentation can support, leftover redistributed to
/// classes with remaining capacity. Returns the counts and the capped
/// classes.
fn feasible_counts(
    total: usize,
    target: &LabelDistribution,
    available: &[usize],
) -> (Vec<usize>, Vec<usize>) {
    let desired = crate::auxiliary::apportion_counts(total, target);
    let mut counts: Vec<usize> = desired
        .iter()
        .zip(available)
        .map(|(&d, &a)| d.min(a))
        .collect();
    let capped: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] < desired[c]).collect();
    let mut leftover = total - counts.iter().sum::<usize>();
    while leftover > 0 {
        let best = (0..counts.len())
            .filter(|&c| available[c] > counts[c])
            .max_by_key(|&c| available[c] - counts[c]);
        match best {
            Some(c) => {
                counts[c] += 1;
                leftover -= 1;
            }
            None => break, // capacity exhausted; the aux set ends up smaller
        }
    }
    (counts, capped)
}

impl Adversary for TwoPhaseAttack {
    fn controlled(&self) -> &[usize] {
        &self.plan.attacker_ids
    }

    fn forced_clients(&self, round: usize) -> Vec<usize> {
        match (self.plan.force_selection, &self.plan.injection) {
            (true, Some(inj)) if inj.round == round => vec![inj.client],
            _ => Vec::new(),
        }
    }

    fn round_start(
        &mut self,
        round: usize,
        logs: &[RoundLog],
        current_global: &ParamVector,
        env: &FlEnvironment,
    ) -> Result<()> {
        if self.plan.preliminary && round == self.plan.inference_round && self.inference.is_none()
        {
            if round == 0 {
                return Err(Error::Config(
                    "inference needs one completed round to observe".into(),
                ));
            }
            self.run_inference(round, logs, current_global, env)?;
            self.build_aux_datasets(env)?;
        }
        Ok(())
    }

    fn train(
        &mut self,
        round: usize,
        client: usize,
        global: &ParamVector,
        env: &FlEnvironment,
        selected: &[usize],
    ) -> Result<ClientUpdate> {
        if let Some(inj) = self.plan.injection {
            if inj.round == round && inj.client == client {
                let update = backdoor_train(
                    &env.arch,
                    global,
                    &env.clients[client],
                    &self.plan.poison,
                    &self.plan.trigger,
                    rng::derive_seed(self.master_seed, "attack/backdoor", &[round as u64, client as u64]),
                )?;
                let gamma = match self.plan.poison.gamma {
                    GammaMode::Fixed(g) => g,
                    GammaMode::K => env.round_cfg.clients_per_round as f64,
                    GammaMode::TrueRatio => {
                        let n: usize = selected.iter().map(|&id| env.clients[id].len()).sum();
                        n as f64 / env.clients[client].len() as f64
                    }
                };
                self.notes.push(format!(
                    "injection at round {round} by client {client} with gamma {gamma:.4}"
                ));
                return Ok(scale_update(&update, gamma));
            }
        }
        // Aligned training once the auxiliary dataset exists; the switch
        // happens the round after inference completes.
        if let Some(aux) = self.aux.get(&client) {
            if round > self.plan.inference_round {
                let mut train_rng =
                    rng::stream(self.master_seed, "local", &[round as u64, client as u64]);
                let mut cfg = env.round_cfg.clone();
                if let Some(steps) = self.plan.aligned_local_steps {
                    cfg.local_steps = steps;
                }
                // DIAGNOSTIC ONLY: raw-data arm
                let source = if std::env::var("FEDSIM_RAW_ALIGNED").is_ok() {
                    &env.clients[client]
                } else {
                    aux
                };
                let mut up = local_train(&env.arch, source, global, &cfg, &mut train_rng)?;
                up.client_id = client;
                up.origin = UpdateOrigin::AttackerAligned;
                return Ok(up);
            }
        }
        // Before any attacker activity: fully benign behavior on the
        // original local data (same RNG stream as the benign path, so the
        // prefix of the run is bitwise identical to a no-attack run).
        let mut train_rng = rng::stream(self.master_seed, "local", &[round as u64, client as u64]);
        local_train(&env.arch, &env.clients[client], global, &env.round_cfg, &mut train_rng)
    }

    fn report(&mut self) -> AdversaryReport {
        AdversaryReport {
            inference: self.inference.take(),
            notes: std::mem::take(&mut self.notes),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_or_synthesize, DatasetSource};
    use crate::engine::{aggregate, BatchMode, RoundConfig};
    use crate::model::{init_params, Activation, NetworkArch};
    use crate::rng::SplitMix64;

    fn blobs(seed: u64) -> crate::data::DatasetPair {
        load_or_synthesize(
            &DatasetSource::Synthetic {
                classes: 3,
                features: 8,
                train_per_class: 80,
                test_per_class: 40,
                center_scale: 1.2,
                noise_std: 1.0,
                background_features: 0,
            },
            seed,
        )
        .unwrap()
    }

    fn arch() -> NetworkArch {
        NetworkArch::new(vec![8, 16, 3], Activation::Tanh).unwrap()
    }

    fn trigger(dim: usize) -> TriggerSpec {
        TriggerSpec {
            region: TriggerSpec::default_region(FeatureLayout::Vector, dim),
            value: 4.0,
            target_label: 0,
        }
    }

    #[test]
    fn trigger_application_is_idempotent_and_local() {
        let s = Sample {
            features: vec![0.1; 8],
            label: 2,
            augmented: false,
        };
        let t = trigger(8);
        let once = apply_trigger(&s, &t);
        let twice = apply_trigger(&once, &t);
        assert_eq!(once, twice);
        assert_eq!(once.label, 0);
        for i in 0..4 {
            assert_eq!(once.features[i], 4.0);
        }
        for i in 4..8 {
            assert_eq!(once.features[i], s.features[i]);
        }
    }

    #[test]
    fn default_image_region_is_two_percent_of_mnist() {
        let region =
            TriggerSpec::default_region(FeatureLayout::Image { height: 28, width: 28 }, 784);
        assert_eq!(region.len(), 16); // 16 / 784 is the 2% trigger ratio
        assert!(region.contains(&0) && region.contains(&(3 * 28 + 3)));
    }

    #[test]
    fn poison_partition_counts_and_labels() {
        let pair = blobs(1);
        let cfg = PoisonConfig::default(); // 40 of 128
        let t = trigger(8);
        let (clean, poison) = poison_partition(&pair.train, &cfg, &t, 3).unwrap();
        let n = pair.train.len();
        assert_eq!(poison.len(), n * 40 / 128);
        assert_eq!(clean.len() + poison.len(), n);
        assert!(poison.samples.iter().all(|s| s.label == 0));
        assert!(poison.samples.iter().all(|s| s.features[..4] == [4.0; 4]));

        let none = PoisonConfig {
            poisoned_per_batch: 0,
            ..PoisonConfig::default()
        };
        let (_, empty) = poison_partition(&pair.train, &none, &t, 3).unwrap();
        assert!(empty.is_empty());

        let bad = PoisonConfig {
            poisoned_per_batch: 200,
            batch_size: 128,
            ..PoisonConfig::default()
        };
        assert!(poison_partition(&pair.train, &bad, &t, 3).is_err());
    }

    #[test]
    fn zero_poison_training_equals_benign_minibatch() {
        let pair = blobs(2);
        let arch = arch();
        let global = init_params(&arch, &mut SplitMix64::new(4));
        let cfg = PoisonConfig {
            poisoned_per_batch: 0,
            batch_size: 32,
            poison_epochs: 2,
            poison_lr: 0.1,
            gamma: GammaMode::Fixed(1.0),
        };
        let seed = 42;
        let up = backdoor_train(&arch, &global, &pair.train, &cfg, &trigger(8), seed).unwrap();
        // Benign path with the same stream: identical minibatch walk.
        let round_cfg = RoundConfig {
            clients_per_round: 1,
            local_steps: 2,
            local_lr: 0.1,
            batch_mode: BatchMode::Minibatch(32),
        };
        let mut benign_rng = rng::stream(seed, "poison/train", &[]);
        let benign =
            local_train(&arch, &pair.train, &global, &round_cfg, &mut benign_rng).unwrap();
        assert_eq!(up.delta.values, benign.delta.values);
    }

    #[test]
    fn backdoor_training_succeeds_locally_without_wrecking_main_task() {
        let pair = blobs(5);
        let arch = arch();
        // Pre-train a decent model so degradation is measurable.
        let mut global = init_params(&arch, &mut SplitMix64::new(6));
        let batch = crate::model::Batch::from_dataset(&pair.train);
        for _ in 0..60 {
            let g = crate::model::gradient(&arch, &global, &batch).unwrap();
            global = crate::model::sgd_step(&global, &g, 0.5).unwrap();
        }
        let t = trigger(8);
        let pre_main = crate::metrics::main_accuracy(&arch, &global, &pair.test).unwrap();
        let up =
            backdoor_train(&arch, &global, &pair.train, &PoisonConfig::default(), &t, 9).unwrap();
        let mut local_model = global.clone();
        local_model.add_scaled(&up.delta, 1.0);
        let success = crate::metrics::backdoor_success(&arch, &local_model, &pair.test, &t).unwrap();
        let post_main = crate::metrics::main_accuracy(&arch, &local_model, &pair.test).unwrap();
        assert!(success > 0.9, "local backdoor success {success}");
        assert!(
            pre_main - post_main < 0.10,
            "main task degraded {pre_main} -> {post_main}"
        );
    }

    #[test]
    fn gamma_one_scaling_is_identity() {
        let up = ClientUpdate {
            delta: ParamVector { values: vec![0.5, -1.5] },
            n_samples: 7,
            client_id: 3,
            origin: UpdateOrigin::AttackerBackdoor,
        };
        let scaled = scale_update(&up, 1.0);
        assert_eq!(scaled.delta.values, up.delta.values);
        assert_eq!(scaled.n_samples, 7);
        let ten = scale_update(&up, 10.0);
        assert_eq!(ten.delta.values, vec![5.0, -15.0]);
    }

    // Algebraic oracle: with every benign delta zero and gamma = n / n_a the
    // aggregation reduces to w + delta_a, i.e. the attacker's local model
    // replaces the global one.
    #[test]
    fn replacement_identity_holds_to_1e12() {
        let pair = blobs(7);
        let arch = arch();
        let global = init_params(&arch, &mut SplitMix64::new(8));
        let up = backdoor_train(
            &arch,
            &global,
            &pair.train,
            &PoisonConfig::default(),
            &trigger(8),
            10,
        )
        .unwrap();
        let n_a = up.n_samples;
        let benign_sizes = [200usize, 350, 75];
        let n: usize = n_a + benign_sizes.iter().sum::<usize>();
        let gamma = n as f64 / n_a as f64;
        let mut updates = vec![scale_update(&up, gamma)];
        for (i, &sz) in benign_sizes.iter().enumerate() {
            updates.push(ClientUpdate {
                delta: ParamVector { values: vec![0.0; global.len()] },
                n_samples: sz,
                client_id: 10 + i,
                origin: UpdateOrigin::Benign,
            });
        }
        let aggregated = aggregate(&global, &updates).unwrap();
        let mut attacker_model = global.clone();
        attacker_model.add_scaled(&up.delta, 1.0);
        let max_diff = aggregated
            .values
            .iter()
            .zip(&attacker_model.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-12, "max diff {max_diff}");
    }
}
