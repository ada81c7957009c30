//! FedAvg orchestration: client selection, local training, weighted
//! aggregation, plus the centralized-learning twin used as the divergence
//! oracle. Attack behavior is injected through the [`Adversary`] hook so the
//! engine itself stays attack-agnostic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, Sample};
use crate::defense::{self, DefenseConfig, GradientHistory};
use crate::error::{Error, Result};
use crate::inference::InferenceResult;
use crate::model::{
    gradient, init_params, per_class_gradient, sgd_step, Batch, NetworkArch, ParamVector,
};
use crate::rng::{self, SplitMix64};

/// Full-batch gradient descent or minibatch SGD with the given batch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    Full,
    Minibatch(usize),
}

/// Per-round training configuration shared by every client.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundConfig {
    pub clients_per_round: usize,
    /// Local steps; in minibatch mode each step is one pass over the local
    /// data (an internal epoch).
    pub local_steps: usize,
    pub local_lr: f64,
    pub batch_mode: BatchMode,
}

impl RoundConfig {
    pub fn validate(&self, n_clients: usize) -> Result<()> {
        if self.clients_per_round == 0 || self.clients_per_round > n_clients {
            return Err(Error::Config(format!(
                "clients_per_round {} must be in 1..={n_clients}",
                self.clients_per_round
            )));
        }
        if self.local_steps == 0 {
            return Err(Error::Config("local_steps must be >= 1".into()));
        }
        if !(self.local_lr > 0.0) {
            return Err(Error::Config("local_lr must be > 0".into()));
        }
        if let BatchMode::Minibatch(b) = self.batch_mode {
            if b == 0 {
                return Err(Error::Config("minibatch size must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Who produced an update; local DP noise applies to benign updates only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrigin {
    Benign,
    AttackerAligned,
    AttackerBackdoor,
}

/// The (delta, sample count, client id) triple submitted each round.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub delta: ParamVector,
    pub n_samples: usize,
    pub client_id: usize,
    pub origin: UpdateOrigin,
}

/// Per-round evaluation results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub main_accuracy: f64,
    pub backdoor_success: Option<f64>,
    /// Norm of the aggregated global update this round.
    pub update_norm: f64,
}

/// Everything recorded about one aggregation round.
#[derive(Debug, Clone)]
pub struct RoundLog {
    pub round: usize,
    pub selected: Vec<usize>,
    pub global_before: ParamVector,
    pub global_after: ParamVector,
    pub metrics: RoundMetrics,
    /// Clients whose updates received DP clipping + noise this round.
    pub dp_applied: Vec<usize>,
    /// FoolsGold weights aligned with `selected`, when that defense is on.
    pub foolsgold_weights: Option<Vec<f64>>,
}

/// Uniform without-replacement selection of `k` of `n` clients, sorted.
pub fn select_clients(rng: &mut SplitMix64, n: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot select {k} of {n} clients")));
    }
    Ok(rng.sample_indices(n, k))
}

/// Shared minibatch SGD: every epoch shuffles the clean pool, walks it in
/// chunks of `batch_size - poison_per_batch`, and fills each batch with
/// `poison_per_batch` samples cycled from the (re)shuffled poison pool.
/// With an empty poison pool this is plain minibatch SGD.
pub(crate) fn minibatch_epochs(
    arch: &NetworkArch,
    start: &ParamVector,
    clean: &[Sample],
    poison: &[Sample],
    poison_per_batch: usize,
    batch_size: usize,
    epochs: usize,
    lr: f64,
    rng: &mut SplitMix64,
) -> Result<ParamVector> {
    let ppb = if poison.is_empty() { 0 } else { poison_per_batch };
    if ppb >= batch_size && !poison.is_empty() {
        return Err(Error::Config(format!(
            "poisoned_per_batch {ppb} must be below batch size {batch_size}"
        )));
    }
    let clean_per_batch = batch_size - ppb;
    let mut params = start.clone();
    let mut poison_order: Vec<usize> = (0..poison.len()).collect();
    let mut poison_pos = poison.len(); // force shuffle on first use
    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..clean.len()).collect();
        rng.shuffle(&mut order);
        for chunk in order.chunks(clean_per_batch) {
            let mut refs: Vec<&Sample> = Vec::with_capacity(chunk.len() + ppb);
            for _ in 0..ppb {
                if poison_pos >= poison_order.len() {
                    rng.shuffle(&mut poison_order);
                    poison_pos = 0;
                }
                refs.push(&poison[poison_order[poison_pos]]);
                poison_pos += 1;
            }
            refs.extend(chunk.iter().map(|&i| &clean[i]));
            let g = gradient(arch, &params, &Batch::from_refs(&refs))?;
            params = sgd_step(&params, &g, lr)?;
            if !params.is_finite() {
                return Err(Error::Numeric("non-finite loss during training".into()));
            }
        }
    }
    Ok(params)
}

fn train_params(
    arch: &NetworkArch,
    dataset: &ClientDataset,
    start: &ParamVector,
    cfg: &RoundConfig,
    rng: &mut SplitMix64,
) -> Result<ParamVector> {
    match cfg.batch_mode {
        BatchMode::Full => {
            let batch = Batch::from_dataset(dataset);
            let mut params = start.clone();
            for _ in 0..cfg.local_steps {
                let g = gradient(arch, &params, &batch)?;
                params = sgd_step(&params, &g, cfg.local_lr)?;
                if !params.is_finite() {
                    return Err(Error::Numeric("non-finite loss during training".into()));
                }
            }
            Ok(params)
        }
        BatchMode::Minibatch(b) => minibatch_epochs(
            arch,
            start,
            &dataset.samples,
            &[],
            0,
            b,
            cfg.local_steps,
            cfg.local_lr,
            rng,
        ),
    }
}

/// Local training from the synchronized global model; the returned delta is
/// final-minus-initial parameters.
pub fn local_train(
    arch: &NetworkArch,
    client: &ClientDataset,
    global: &ParamVector,
    cfg: &RoundConfig,
    rng: &mut SplitMix64,
) -> Result<ClientUpdate> {
    if client.is_empty() {
        return Err(Error::Config(format!("client {} has no data", client.owner_id)));
    }
    let trained = train_params(arch, client, global, cfg, rng)?;
    Ok(ClientUpdate {
        delta: trained.sub(global),
        n_samples: client.len(),
        client_id: client.owner_id,
        origin: UpdateOrigin::Benign,
    })
}

/// FedAvg aggregation: `w + sum_k (n_k / n) * delta_k`, summed in client-id
/// order so the result is independent of the updates' list order.
pub fn aggregate(global: &ParamVector, updates: &[ClientUpdate]) -> Result<ParamVector> {
    aggregate_weighted(global, updates, None)
}

/// Aggregation with per-update weight multipliers (FoolsGold re-weighting).
/// Effective weight of update k is `multiplier_k * n_k`, renormalized.
pub fn aggregate_weighted(
    global: &ParamVector,
    updates: &[ClientUpdate],
    multipliers: Option<&[f64]>,
) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::Config("aggregate needs at least one update".into()));
    }
    if let Some(m) = multipliers {
        if m.len() != updates.len() {
            return Err(Error::Shape("one multiplier per update required".into()));
        }
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].client_id);
    let mut total_weight = 0.0;
    for (i, u) in updates.iter().enumerate() {
        if u.delta.len() != global.len() {
            return Err(Error::Shape(format!(
                "update from client {} has length {}, global has {}",
                u.client_id,
                u.delta.len(),
                global.len()
            )));
        }
        if u.n_samples == 0 {
            return Err(Error::Config(format!("client {} reports zero samples", u.client_id)));
        }
        if !u.delta.is_finite() {
            return Err(Error::Numeric(format!(
                "update from client {} contains non-finite entries",
                u.client_id
            )));
        }
        total_weight += u.n_samples as f64 * multipliers.map_or(1.0, |m| m[i]);
    }
    let mut out = global.clone();
    if total_weight <= 0.0 {
        // Every update fully down-weighted: the global model stands.
        return Ok(out);
    }
    for &i in &order {
        let u = &updates[i];
        let w = u.n_samples as f64 * multipliers.map_or(1.0, |m| m[i]) / total_weight;
        out.add_scaled(&u.delta, w);
    }
    Ok(out)
}

/// Centralized GD on the whole population, synchronized at `start`.
pub fn centralized_train(
    arch: &NetworkArch,
    dataset: &ClientDataset,
    start: &ParamVector,
    steps: usize,
    eta: f64,
) -> Result<ParamVector> {
    Ok(full_batch_trace(arch, dataset, start, steps, eta)?
        .pop()
        .unwrap())
}

/// Full-batch GD trajectory: `steps + 1` parameter vectors, `[0]` = start.
pub fn full_batch_trace(
    arch: &NetworkArch,
    dataset: &ClientDataset,
    start: &ParamVector,
    steps: usize,
    eta: f64,
) -> Result<Vec<ParamVector>> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let batch = Batch::from_dataset(dataset);
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(start.clone());
    for _ in 0..steps {
        let current = trace.last().unwrap();
        let g = gradient(arch, current, &batch)?;
        let next = sgd_step(current, &g, eta)?;
        if !next.is_finite() {
            return Err(Error::Numeric("non-finite loss during training".into()));
        }
        trace.push(next);
    }
    Ok(trace)
}

/// Centralized trajectory plus the per-step per-class gradients evaluated at
/// each pre-step point (None where a class has no samples). Feeds the
/// divergence bound harness without recomputation.
pub struct RecordedTrace {
    pub params: Vec<ParamVector>,
    /// `per_class[tau][c]` is the class-`c` gradient at `params[tau]`,
    /// recorded for tau = 0..steps-1.
    pub per_class: Vec<Vec<Option<ParamVector>>>,
}

pub fn centralized_train_recorded(
    arch: &NetworkArch,
    dataset: &ClientDataset,
    start: &ParamVector,
    steps: usize,
    eta: f64,
) -> Result<RecordedTrace> {
    let params = full_batch_trace(arch, dataset, start, steps, eta)?;
    let counts = dataset.class_counts();
    let mut per_class = Vec::with_capacity(steps);
    for tau in 0..steps {
        let mut grads = Vec::with_capacity(dataset.n_classes);
        for c in 0..dataset.n_classes {
            if counts[c] == 0 {
                grads.push(None);
            } else {
                grads.push(Some(per_class_gradient(arch, &params[tau], dataset, c)?));
            }
        }
        per_class.push(grads);
    }
    Ok(RecordedTrace { params, per_class })
}

// ---------------------------------------------------------------------------
// Round loop
// ---------------------------------------------------------------------------

/// Immutable state the round loop and adversary hooks operate over.
pub struct FlEnvironment {
    pub arch: NetworkArch,
    pub clients: Vec<ClientDataset>,
    pub test_set: ClientDataset,
    pub round_cfg: RoundConfig,
    pub defense: DefenseConfig,
    pub master_seed: u64,
    /// Trigger used for per-round backdoor evaluation (when an attack is
    /// configured).
    pub eval_trigger: Option<crate::backdoor::TriggerSpec>,
}

/// What an adversary reports back after a run.
#[derive(Debug, Default)]
pub struct AdversaryReport {
    pub inference: Option<(usize, InferenceResult)>,
    pub notes: Vec<String>,
}

/// Per-round hook interface: observe the global model, optionally replace
/// the update of a controlled client.
pub trait Adversary {
    /// Client ids under the adversary's control.
    fn controlled(&self) -> &[usize] {
        &[]
    }

    /// Clients that must participate in the given round.
    fn forced_clients(&self, _round: usize) -> Vec<usize> {
        Vec::new()
    }

    /// Called after synchronization, before any local training.
    fn round_start(
        &mut self,
        _round: usize,
        _logs: &[RoundLog],
        _current_global: &ParamVector,
        _env: &FlEnvironment,
    ) -> Result<()> {
        Ok(())
    }

    /// Produce the update of a controlled, selected client. `selected` is
    /// the round's full participant set (the white-box gamma mode needs it).
    fn train(
        &mut self,
        _round: usize,
        _client: usize,
        _global: &ParamVector,
        _env: &FlEnvironment,
        _selected: &[usize],
    ) -> Result<ClientUpdate> {
        Err(Error::Usage("adversary controls no clients".into()))
    }

    /// Consume the adversary's report at the end of the run.
    fn report(&mut self) -> AdversaryReport {
        AdversaryReport::default()
    }
}

pub use crate::experiment::run_training;

/// The benign baseline: controls nothing.
pub struct NoAdversary;

impl Adversary for NoAdversary {}

/// A full training run: per-round logs plus whatever the adversary reported.
pub struct TrainingRun {
    pub logs: Vec<RoundLog>,
    pub adversary: AdversaryReport,
    pub init_params: ParamVector,
}

/// Run `total_rounds` FedAvg rounds under the environment's defense with the
/// given adversary. All randomness derives from labeled streams of the
/// master seed, so rounds before any attacker activity are identical to a
/// benign run with the same seed.
pub fn run_rounds(
    env: &FlEnvironment,
    total_rounds: usize,
    adversary: &mut dyn Adversary,
) -> Result<TrainingRun> {
    env.round_cfg.validate(env.clients.len())?;
    let n = env.clients.len();
    let k = env.round_cfg.clients_per_round;
    let mut global = init_params(&env.arch, &mut rng::stream(env.master_seed, "init", &[]));
    let init_snapshot = global.clone();
    let mut logs: Vec<RoundLog> = Vec::with_capacity(total_rounds);
    let mut history = GradientHistory::new(match &env.defense {
        DefenseConfig::FoolsGold { history_depth, .. } => *history_depth,
        _ => None,
    });
    let controlled: Vec<usize> = adversary.controlled().to_vec();

    for round in 0..total_rounds {
        let mut selected =
            select_clients(&mut rng::stream(env.master_seed, "select", &[round as u64]), n, k)?;
        for forced in adversary.forced_clients(round) {
            if forced >= n {
                return Err(Error::Config(format!("forced client {forced} does not exist")));
            }
            if !selected.contains(&forced) {
                // Deterministic victim: drop the largest selected id.
                selected.pop();
                selected.push(forced);
                selected.sort_unstable();
            }
        }

        adversary
            .round_start(round, &logs, &global, env)
            .map_err(|e| e.in_round(round))?;

        let benign_ids: Vec<usize> = selected
            .iter()
            .copied()
            .filter(|id| !controlled.contains(id))
            .collect();
        let mut updates: Vec<ClientUpdate> = benign_ids
            .par_iter()
            .map(|&id| {
                let mut client_rng =
                    rng::stream(env.master_seed, "local", &[round as u64, id as u64]);
                local_train(&env.arch, &env.clients[id], &global, &env.round_cfg, &mut client_rng)
            })
            .collect::<Result<_>>()
            .map_err(|e| e.in_round(round))?;
        let attacker_ids: Vec<usize> = selected
            .iter()
            .copied()
            .filter(|id| controlled.contains(id))
            .collect();
        for id in attacker_ids {
            updates.push(
                adversary
                    .train(round, id, &global, env, &selected)
                    .map_err(|e| e.in_round(round))?,
            );
        }

        // Defense stage.
        let mut dp_applied = Vec::new();
        let mut fg_weights = None;
        match &env.defense {
            DefenseConfig::None => {}
            DefenseConfig::LocalDp { epsilon, delta, clip } => {
                let sigma = defense::dp_sigma(*epsilon, *delta);
                if let Some(bound) = defense::resolve_clip_bound(clip, &updates) {
                    for u in updates.iter_mut() {
                        if u.origin == UpdateOrigin::Benign {
                            let mut noise_rng = rng::stream(
                                env.master_seed,
                                "dp",
                                &[round as u64, u.client_id as u64],
                            );
                            defense::dp_perturb(u, bound, sigma, &mut noise_rng);
                            dp_applied.push(u.client_id);
                        }
                    }
                    dp_applied.sort_unstable();
                }
            }
            DefenseConfig::FoolsGold { variant, .. } => {
                for u in &updates {
                    history.record(u.client_id, &u.delta);
                }
                let mut order: Vec<usize> = (0..updates.len()).collect();
                order.sort_by_key(|&i| updates[i].client_id);
                let participant_ids: Vec<usize> =
                    order.iter().map(|&i| updates[i].client_id).collect();
                let weights = defense::foolsgold_weights(&history, &participant_ids, *variant);
                // Align weights back to the updates' order.
                let mut aligned = vec![0.0; updates.len()];
                for (w_ix, &u_ix) in order.iter().enumerate() {
                    aligned[u_ix] = weights[w_ix];
                }
                fg_weights = Some((participant_ids, weights));
                let new_global = aggregate_weighted(&global, &updates, Some(&aligned))?;
                let log = finish_round(env, round, selected, &global, new_global, dp_applied, fg_weights)?;
                logs.push(log);
                global = logs.last().unwrap().global_after.clone();
                continue;
            }
        }

        let new_global = aggregate(&global, &updates).map_err(|e| e.in_round(round))?;
        let log = finish_round(env, round, selected, &global, new_global, dp_applied, fg_weights)?;
        logs.push(log);
        global = logs.last().unwrap().global_after.clone();
    }

    Ok(TrainingRun {
        logs,
        adversary: adversary.report(),
        init_params: init_snapshot,
    })
}

fn finish_round(
    env: &FlEnvironment,
    round: usize,
    selected: Vec<usize>,
    before: &ParamVector,
    after: ParamVector,
    dp_applied: Vec<usize>,
    fg: Option<(Vec<usize>, Vec<f64>)>,
) -> Result<RoundLog> {
    let main_accuracy = crate::metrics::main_accuracy(&env.arch, &after, &env.test_set)?;
    let backdoor_success = match &env.eval_trigger {
        Some(trigger) => Some(crate::metrics::backdoor_success(
            &env.arch,
            &after,
            &env.test_set,
            trigger,
        )?),
        None => None,
    };
    let update_norm = after.sub(before).norm();
    Ok(RoundLog {
        round,
        selected,
        global_before: before.clone(),
        global_after: after,
        metrics: RoundMetrics {
            main_accuracy,
            backdoor_success,
            update_norm,
        },
        dp_applied,
        foolsgold_weights: fg.map(|(_, w)| w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_or_synthesize, DatasetSource};
    use crate::model::Activation;

    fn blob_dataset(seed: u64) -> ClientDataset {
        load_or_synthesize(
            &DatasetSource::Synthetic {
                classes: 3,
                features: 4,
                train_per_class: 30,
                test_per_class: 5,
                center_scale: 1.0,
                noise_std: 1.0,
                background_features: 0,
            },
            seed,
        )
        .unwrap()
        .train
    }

    fn arch() -> NetworkArch {
        NetworkArch::new(vec![4, 8, 3], Activation::Tanh).unwrap()
    }

    fn cfg(k: usize, t: usize, mode: BatchMode) -> RoundConfig {
        RoundConfig {
            clients_per_round: k,
            local_steps: t,
            local_lr: 0.1,
            batch_mode: mode,
        }
    }

    #[test]
    fn select_all_when_k_equals_n() {
        let mut rng = SplitMix64::new(1);
        assert_eq!(select_clients(&mut rng, 6, 6).unwrap(), vec![0, 1, 2, 3, 4, 5]);
        assert!(select_clients(&mut rng, 3, 4).is_err());
    }

    #[test]
    fn selection_is_seed_deterministic() {
        let a = select_clients(&mut SplitMix64::new(9), 20, 5).unwrap();
        let b = select_clients(&mut SplitMix64::new(9), 20, 5).unwrap();
        assert_eq!(a, b);
    }

    // Monte-Carlo frequency oracle: over R rounds each client appears with
    // frequency K/N within a 3-sigma binomial band.
    #[test]
    fn selection_frequency_is_uniform() {
        let (n, k, rounds) = (5usize, 2usize, 10_000usize);
        let mut counts = vec![0usize; n];
        for r in 0..rounds {
            let mut rng = crate::rng::stream(77, "select", &[r as u64]);
            for id in select_clients(&mut rng, n, k).unwrap() {
                counts[id] += 1;
            }
        }
        let p = k as f64 / n as f64;
        let expected = rounds as f64 * p;
        let band = 3.0 * (rounds as f64 * p * (1.0 - p)).sqrt();
        for (id, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() < band,
                "client {id}: {c} outside {expected} +- {band}"
            );
        }
    }

    #[test]
    fn zero_learning_rate_gives_zero_delta() {
        let ds = blob_dataset(3);
        let arch = arch();
        let global = init_params(&arch, &mut SplitMix64::new(5));
        let mut c = cfg(1, 4, BatchMode::Full);
        c.local_lr = f64::MIN_POSITIVE; // effectively zero but passes validation
        let up = local_train(&arch, &ds, &global, &c, &mut SplitMix64::new(0)).unwrap();
        assert!(up.delta.norm() < 1e-250);
    }

    #[test]
    fn one_step_full_batch_is_scaled_gradient() {
        let ds = blob_dataset(4);
        let arch = arch();
        let global = init_params(&arch, &mut SplitMix64::new(6));
        let c = cfg(1, 1, BatchMode::Full);
        let up = local_train(&arch, &ds, &global, &c, &mut SplitMix64::new(0)).unwrap();
        let g = gradient(&arch, &global, &Batch::from_dataset(&ds)).unwrap();
        for (d, gi) in up.delta.values.iter().zip(&g.values) {
            assert!((d + 0.1 * gi).abs() < 1e-15, "{d} vs {}", -0.1 * gi);
        }
    }

    // Loop-unroll oracle: t = 3 local steps equal three manual sgd_step
    // compositions.
    #[test]
    fn local_train_matches_unrolled_loop() {
        let ds = blob_dataset(5);
        let arch = arch();
        let global = init_params(&arch, &mut SplitMix64::new(7));
        let c = cfg(1, 3, BatchMode::Full);
        let up = local_train(&arch, &ds, &global, &c, &mut SplitMix64::new(0)).unwrap();
        let batch = Batch::from_dataset(&ds);
        let mut manual = global.clone();
        for _ in 0..3 {
            let g = gradient(&arch, &manual, &batch).unwrap();
            manual = sgd_step(&manual, &g, 0.1).unwrap();
        }
        assert_eq!(up.delta.values, manual.sub(&global).values);
    }

    fn mk_update(id: usize, n: usize, delta: Vec<f64>) -> ClientUpdate {
        ClientUpdate {
            delta: ParamVector { values: delta },
            n_samples: n,
            client_id: id,
            origin: UpdateOrigin::Benign,
        }
    }

    #[test]
    fn aggregate_arithmetic() {
        let global = ParamVector { values: vec![1.0, 2.0] };
        // all-zero deltas leave the global unchanged
        let ups = vec![mk_update(0, 3, vec![0.0, 0.0]), mk_update(1, 5, vec![0.0, 0.0])];
        assert_eq!(aggregate(&global, &ups).unwrap().values, vec![1.0, 2.0]);
        // n = (1, 3), deltas d and -d: w + (d - 3d)/4 = w - d/2
        let d = vec![2.0, -4.0];
        let ups = vec![
            mk_update(0, 1, d.clone()),
            mk_update(1, 3, d.iter().map(|x| -x).collect()),
        ];
        let out = aggregate(&global, &ups).unwrap();
        assert!((out.values[0] - (1.0 - 1.0)).abs() < 1e-15);
        assert!((out.values[1] - (2.0 + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn aggregate_is_order_independent() {
        let global = ParamVector { values: vec![0.5, -0.5, 1.5] };
        let ups = vec![
            mk_update(2, 7, vec![0.1, 0.2, 0.3]),
            mk_update(0, 3, vec![-0.4, 0.5, 0.6]),
            mk_update(1, 11, vec![0.7, -0.8, 0.9]),
        ];
        let a = aggregate(&global, &ups).unwrap();
        let mut rev = ups.clone();
        rev.reverse();
        let b = aggregate(&global, &rev).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn aggregate_is_affine_equivariant() {
        let global = ParamVector { values: vec![0.0, 0.0] };
        let ups = vec![mk_update(0, 2, vec![0.3, 0.4]), mk_update(1, 5, vec![-0.1, 0.9])];
        let base = aggregate(&global, &ups).unwrap();
        let shift = [10.0, -3.0];
        let shifted: Vec<ClientUpdate> = ups
            .iter()
            .map(|u| {
                let mut v = u.clone();
                for (x, s) in v.delta.values.iter_mut().zip(&shift) {
                    *x += s;
                }
                v
            })
            .collect();
        let out = aggregate(&global, &shifted).unwrap();
        for i in 0..2 {
            assert!((out.values[i] - (base.values[i] + shift[i])).abs() < 1e-12);
        }
    }

    // Exactness oracle: one FedAvg round with K = N, t = 1, full batch
    // equals one centralized GD step on the union.
    #[test]
    fn fedavg_equals_centralized_at_t1() {
        let ds = blob_dataset(8);
        let arch = arch();
        let spec = crate::data::PartitionSpec {
            n_clients: 4,
            alpha: 0.5,
            imbalance: None,
        };
        let clients = crate::data::dirichlet_partition(&ds, &spec, 3).unwrap();
        let global = init_params(&arch, &mut SplitMix64::new(10));
        let c = cfg(4, 1, BatchMode::Full);
        let updates: Vec<ClientUpdate> = clients
            .iter()
            .map(|cl| local_train(&arch, cl, &global, &c, &mut SplitMix64::new(0)).unwrap())
            .collect();
        let fl = aggregate(&global, &updates).unwrap();
        let cen = centralized_train(&arch, &ds, &global, 1, 0.1).unwrap();
        let max_diff = fl
            .values
            .iter()
            .zip(&cen.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-9, "max diff {max_diff}");
    }

    #[test]
    fn centralized_train_basics() {
        let ds = blob_dataset(9);
        let arch = arch();
        let start = init_params(&arch, &mut SplitMix64::new(11));
        // t = 1 equals a single sgd_step on the full-population gradient
        let one = centralized_train(&arch, &ds, &start, 1, 0.1).unwrap();
        let g = gradient(&arch, &start, &Batch::from_dataset(&ds)).unwrap();
        let manual = sgd_step(&start, &g, 0.1).unwrap();
        assert_eq!(one.values, manual.values);
        // trajectory begins exactly at the synchronization point
        let trace = full_batch_trace(&arch, &ds, &start, 3, 0.1).unwrap();
        assert_eq!(trace[0].values, start.values);
        assert_eq!(trace.len(), 4);
        // duplicate-implementation oracle: an independently written GD loop
        let mut p = start.clone();
        for _ in 0..3 {
            let g = gradient(&arch, &p, &Batch::from_dataset(&ds)).unwrap();
            for (pi, gi) in p.values.iter_mut().zip(&g.values) {
                *pi -= 0.1 * gi;
            }
        }
        let end = trace.last().unwrap();
        for (a, b) in end.values.iter().zip(&p.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn minibatch_with_no_poison_matches_benign_path() {
        let ds = blob_dataset(12);
        let arch = arch();
        let global = init_params(&arch, &mut SplitMix64::new(13));
        let c = cfg(1, 2, BatchMode::Minibatch(16));
        let up = local_train(&arch, &ds, &global, &c, &mut SplitMix64::new(99)).unwrap();
        let direct = minibatch_epochs(
            &arch,
            &global,
            &ds.samples,
            &[],
            0,
            16,
            2,
            0.1,
            &mut SplitMix64::new(99),
        )
        .unwrap();
        assert_eq!(up.delta.values, direct.sub(&global).values);
    }
}
