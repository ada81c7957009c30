//! Evaluation quantities: main-task accuracy, backdoor success rate and its
//! post-injection window statistics, and the intra-aggregation weight
//! divergence bound check against the centralized twin.

use serde::{Deserialize, Serialize};

use crate::backdoor::{apply_trigger, TriggerSpec};
use crate::data::{ClientDataset, Sample};
use crate::engine::{aggregate, centralized_train_recorded, full_batch_trace, ClientUpdate, UpdateOrigin};
use crate::error::{Error, Result};
use crate::model::{forward, per_class_gradient, Batch, NetworkArch, ParamVector};

/// A named (round, value) series with strictly increasing rounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub points: Vec<(usize, f64)>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>) -> Self {
        MetricSeries {
            name: name.into(),
            points: Vec::new(),
        }
    }

    pub fn push(&mut self, round: usize, value: f64) -> Result<()> {
        if let Some(&(last, _)) = self.points.last() {
            if round <= last {
                return Err(Error::Usage(format!(
                    "series {}: round {round} not after {last}",
                    self.name
                )));
            }
        }
        self.points.push((round, value));
        Ok(())
    }

    pub fn value_at(&self, round: usize) -> Option<f64> {
        self.points
            .iter()
            .find(|(r, _)| *r == round)
            .map(|(_, v)| *v)
    }

    /// CSV rendering with the `round,value` header. Floats use the shortest
    /// round-trip representation, so output bytes are deterministic.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,value\n");
        for (round, value) in &self.points {
            out.push_str(&format!("{round},{value}\n"));
        }
        out
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of argmax-correct predictions on the test set.
pub fn main_accuracy(
    arch: &NetworkArch,
    params: &ParamVector,
    test_set: &ClientDataset,
) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    let probs = forward(arch, params, &Batch::from_dataset(test_set))?;
    let correct = probs
        .iter()
        .zip(&test_set.samples)
        .filter(|(row, s)| argmax(row) == s.label)
        .count();
    Ok(correct as f64 / test_set.len() as f64)
}

/// Fraction of triggered test samples classified as the target label.
/// Samples originally carrying the target label are excluded so the metric
/// measures the trigger, not the class.
pub fn backdoor_success(
    arch: &NetworkArch,
    params: &ParamVector,
    test_set: &ClientDataset,
    trigger: &TriggerSpec,
) -> Result<f64> {
    let triggered: Vec<Sample> = test_set
        .samples
        .iter()
        .filter(|s| s.label != trigger.target_label)
        .map(|s| apply_trigger(s, trigger))
        .collect();
    if triggered.is_empty() {
        return Err(Error::UndefinedMetric(
            "every test sample carries the target label".into(),
        ));
    }
    let probs = forward(arch, params, &Batch::from_samples(&triggered))?;
    let hits = probs
        .iter()
        .filter(|row| argmax(row) == trigger.target_label)
        .count();
    Ok(hits as f64 / triggered.len() as f64)
}

/// Mean and (population) standard deviation of a series over the `window`
/// rounds starting at the injection round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub mean: f64,
    pub std: f64,
}

pub fn success_window_stats(
    series: &MetricSeries,
    injection_round: usize,
    window: usize,
) -> Result<WindowStats> {
    let mut values = Vec::with_capacity(window);
    for round in injection_round..injection_round + window {
        match series.value_at(round) {
            Some(v) => values.push(v),
            None => {
                return Err(Error::Usage(format!(
                    "series {} does not cover round {round}; refusing a truncated window",
                    series.name
                )))
            }
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(WindowStats {
        mean,
        std: var.sqrt(),
    })
}

/// One side-by-side comparison of a measured divergence and its bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub setting: String,
    /// Per-class terms skipped because the class had no samples in the
    /// referenced expectation.
    pub skipped_terms: usize,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + 1e-12
    }
}

/// The bound check for one synchronization point: the global-vs-centralized
/// report plus one client-vs-centralized report per client.
#[derive(Debug, Clone)]
pub struct BoundCheck {
    pub global: BoundReport,
    pub per_client: Vec<BoundReport>,
}

/// Measure the intra-aggregation weight divergences by direct training from
/// the common synchronization point `start`, and evaluate their bounds by
/// accumulating the per-step per-class gradient terms.
///
/// The client-vs-centralized bound follows the proof's decomposition: the
/// distribution-distance term is evaluated on the centralized trajectory
/// (the proposition statement's w_k there is a typo; only the proof's form
/// is a theorem).
pub fn divergence_bound_check(
    arch: &NetworkArch,
    start: &ParamVector,
    clients: &[ClientDataset],
    steps: usize,
    eta: f64,
) -> Result<BoundCheck> {
    if clients.is_empty() {
        return Err(Error::Config("bound check needs at least one client".into()));
    }
    let n_classes = clients[0].n_classes;
    let layout = clients[0].layout;
    // The whole population is the union of the clients' data.
    let mut union_samples = Vec::new();
    for c in clients {
        union_samples.extend(c.samples.iter().cloned());
    }
    let population = ClientDataset::new(union_samples, usize::MAX, n_classes, layout)?;
    let n_total = population.len() as f64;
    let p_global = population.label_distribution();

    // Centralized trajectory with recorded per-class gradients.
    let cen = centralized_train_recorded(arch, &population, start, steps, eta)?;
    let w_cen_final = cen.params.last().unwrap();

    // Client trajectories.
    let traces: Vec<Vec<ParamVector>> = clients
        .iter()
        .map(|c| full_batch_trace(arch, c, start, steps, eta))
        .collect::<Result<_>>()?;

    let dims = start.len();
    let mut skipped_global = 0usize;
    let mut rhs_global = 0.0;
    let mut per_client_rhs = vec![0.0; clients.len()];
    let mut per_client_skipped = vec![0usize; clients.len()];

    for tau in 0..steps {
        let mut inner_global = ParamVector { values: vec![0.0; dims] };
        for (k, client) in clients.iter().enumerate() {
            let w_k = &traces[k][tau];
            let p_k = client.label_distribution();
            let weight_k = client.len() as f64 / n_total;
            let mut dist_term = ParamVector { values: vec![0.0; dims] };
            let mut grad_term = ParamVector { values: vec![0.0; dims] };
            for c in 0..n_classes {
                let g_pop = match &cen.per_class[tau][c] {
                    Some(g) => g,
                    None => {
                        // Class absent from the whole population: both
                        // proportions are zero, the term is skipped.
                        skipped_global += 1;
                        per_client_skipped[k] += 1;
                        continue;
                    }
                };
                // Distribution-distance term at the centralized trajectory.
                let coeff = p_global.probs[c] - p_k.probs[c];
                if coeff != 0.0 {
                    dist_term.add_scaled(g_pop, coeff);
                }
                if p_k.probs[c] > 0.0 {
                    let g_local = per_class_gradient(arch, w_k, client, c)?;
                    let mut diff = g_local;
                    diff.add_scaled(g_pop, -1.0);
                    grad_term.add_scaled(&diff, p_k.probs[c]);
                    inner_global.add_scaled(&diff, weight_k * p_k.probs[c]);
                }
            }
            per_client_rhs[k] += eta * (dist_term.norm() + grad_term.norm());
        }
        rhs_global += eta * inner_global.norm();
    }

    // Measured divergences.
    let updates: Vec<ClientUpdate> = clients
        .iter()
        .zip(&traces)
        .map(|(c, trace)| ClientUpdate {
            delta: trace.last().unwrap().sub(start),
            n_samples: c.len(),
            client_id: c.owner_id,
            origin: UpdateOrigin::Benign,
        })
        .collect();
    let w_fl = aggregate(start, &updates)?;
    let global = BoundReport {
        lhs: w_fl.sub(w_cen_final).norm(),
        rhs: rhs_global,
        setting: format!("global vs centralized, t={steps}, N={}", clients.len()),
        skipped_terms: skipped_global,
    };
    let per_client = clients
        .iter()
        .enumerate()
        .map(|(k, c)| BoundReport {
            lhs: traces[k].last().unwrap().sub(w_cen_final).norm(),
            rhs: per_client_rhs[k],
            setting: format!("client {} vs centralized, t={steps}", c.owner_id),
            skipped_terms: per_client_skipped[k],
        })
        .collect();
    Ok(BoundCheck { global, per_client })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{dirichlet_partition, load_or_synthesize, DatasetSource, FeatureLayout, PartitionSpec};
    use crate::model::{init_params, Activation};
    use crate::rng::SplitMix64;

    fn blobs(seed: u64) -> crate::data::DatasetPair {
        load_or_synthesize(
            &DatasetSource::Synthetic {
                classes: 3,
                features: 4,
                train_per_class: 30,
                test_per_class: 10,
                center_scale: 1.5,
                noise_std: 1.0,
                background_features: 0,
            },
            seed,
        )
        .unwrap()
    }

    fn arch() -> NetworkArch {
        NetworkArch::new(vec![4, 8, 3], Activation::Tanh).unwrap()
    }

    fn vec_trigger() -> TriggerSpec {
        TriggerSpec {
            region: vec![0, 1],
            value: 5.0,
            target_label: 1,
        }
    }

    #[test]
    fn accuracy_of_perfect_and_constant_predictors() {
        let pair = blobs(1);
        let arch = arch();
        // Train to near-perfection on this easy instance.
        let mut params = init_params(&arch, &mut SplitMix64::new(2));
        let batch = Batch::from_dataset(&pair.train);
        for _ in 0..300 {
            let g = crate::model::gradient(&arch, &params, &batch).unwrap();
            params = crate::model::sgd_step(&params, &g, 0.5).unwrap();
        }
        let acc = main_accuracy(&arch, &params, &pair.train).unwrap();
        assert!((acc - 1.0).abs() < 1e-9, "training accuracy {acc}");

        // A constant predictor scores the majority-class share; on the
        // balanced test set that is 1/C.
        let mut constant = ParamVector::zeros(&arch);
        let off = constant.len() - 3;
        constant.values[off] = 100.0; // output bias for class 0
        let acc = main_accuracy(&arch, &constant, &pair.test).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-12);
    }

    // Manual count oracle on ten samples.
    #[test]
    fn accuracy_matches_hand_confusion_count() {
        let arch = NetworkArch::new(vec![1, 2], Activation::Tanh).unwrap();
        // Logit for class 1 equals 3x: positive x -> class 1.
        let params = ParamVector::from_values(&arch, vec![0.0, 3.0, 0.0, 0.0]).unwrap();
        let samples: Vec<Sample> = (0..10)
            .map(|i| Sample {
                features: vec![i as f64 - 4.5], // 5 negative, 5 positive
                label: if i < 3 { 0 } else { 1 },
                augmented: false,
            })
            .collect();
        let ds = ClientDataset::new(samples, 0, 2, FeatureLayout::Vector).unwrap();
        // Predictions: class 0 for i<5, class 1 for i>=5.
        // Correct: i in {0,1,2} (label 0, predicted 0) and i in {5..9}.
        let acc = main_accuracy(&arch, &params, &ds).unwrap();
        assert!((acc - 0.8).abs() < 1e-12);
    }

    #[test]
    fn backdoor_success_on_biased_and_undefined_inputs() {
        let pair = blobs(3);
        let arch = arch();
        let trigger = vec_trigger();
        // A model that always answers the target label.
        let mut biased = ParamVector::zeros(&arch);
        let off = biased.len() - 3;
        biased.values[off + 1] = 100.0;
        let s = backdoor_success(&arch, &biased, &pair.test, &trigger).unwrap();
        assert_eq!(s, 1.0);
        // Target-label-only test set: the metric is undefined.
        let only_target: Vec<Sample> = pair
            .test
            .samples
            .iter()
            .filter(|s| s.label == trigger.target_label)
            .cloned()
            .collect();
        let ds = ClientDataset::new(only_target, 0, 3, FeatureLayout::Vector).unwrap();
        assert!(matches!(
            backdoor_success(&arch, &biased, &ds, &trigger),
            Err(Error::UndefinedMetric(_))
        ));
    }

    // Chance-level oracle: an untriggered-clean model at random init scores
    // near 1/C on the triggered set.
    #[test]
    fn clean_random_models_score_near_chance() {
        let pair = blobs(4);
        let arch = arch();
        let trigger = vec_trigger();
        let mut total = 0.0;
        let seeds = 30;
        for seed in 0..seeds {
            let params = init_params(&arch, &mut SplitMix64::new(seed));
            total += backdoor_success(&arch, &params, &pair.test, &trigger).unwrap();
        }
        let mean = total / seeds as f64;
        assert!((mean - 1.0 / 3.0).abs() < 0.15, "chance-level mean {mean}");
    }

    #[test]
    fn window_stats_examples() {
        let mut series = MetricSeries::new("backdoor");
        for (i, v) in (0..12).map(|i| (i, if i < 6 { 0.7 } else { 0.7 })) {
            series.push(i, v).unwrap();
        }
        let stats = success_window_stats(&series, 1, 10).unwrap();
        assert!((stats.mean - 0.7).abs() < 1e-12);
        assert!(stats.std < 1e-12);

        let mut decay = MetricSeries::new("decay");
        for i in 0..10 {
            decay.push(i, 100.0 - 10.0 * i as f64).unwrap();
        }
        let stats = success_window_stats(&decay, 0, 10).unwrap();
        assert!((stats.mean - 55.0).abs() < 1e-12);

        // Truncated window is an error, never silently shortened.
        assert!(success_window_stats(&decay, 5, 10).is_err());
    }

    #[test]
    fn series_rounds_must_increase() {
        let mut s = MetricSeries::new("x");
        s.push(3, 1.0).unwrap();
        assert!(s.push(3, 2.0).is_err());
        assert!(s.push(2, 2.0).is_err());
        s.push(7, 2.0).unwrap();
        assert_eq!(s.value_at(7), Some(2.0));
        assert_eq!(s.to_csv(), "round,value\n3,1\n7,2\n");
    }

    #[test]
    fn identical_client_data_gives_zero_client_divergence() {
        let pair = blobs(6);
        let arch = arch();
        let start = init_params(&arch, &mut SplitMix64::new(7));
        // Every client holds the whole population: w_k == w_cen throughout.
        let clients = vec![pair.train.clone(), pair.train.clone()];
        let check = divergence_bound_check(&arch, &start, &clients, 1, 0.1).unwrap();
        for report in &check.per_client {
            assert!(report.lhs < 1e-12);
            assert!(report.rhs >= 0.0);
            assert!(report.holds());
        }
        assert!(check.global.holds());
    }

    #[test]
    fn zero_steps_gives_zero_on_both_sides() {
        let pair = blobs(8);
        let arch = arch();
        let start = init_params(&arch, &mut SplitMix64::new(9));
        let spec = PartitionSpec { n_clients: 3, alpha: 0.5, imbalance: None };
        let clients = dirichlet_partition(&pair.train, &spec, 1).unwrap();
        let check = divergence_bound_check(&arch, &start, &clients, 0, 0.1).unwrap();
        assert_eq!(check.global.lhs, 0.0);
        assert_eq!(check.global.rhs, 0.0);
        for r in &check.per_client {
            assert_eq!(r.lhs, 0.0);
            assert_eq!(r.rhs, 0.0);
        }
    }

    // At t = 1 the global bound is met with equality (the aggregation IS
    // the single accumulated step).
    #[test]
    fn global_bound_is_tight_at_one_step() {
        let pair = blobs(10);
        let arch = arch();
        let start = init_params(&arch, &mut SplitMix64::new(11));
        let spec = PartitionSpec { n_clients: 4, alpha: 0.4, imbalance: None };
        let clients = dirichlet_partition(&pair.train, &spec, 2).unwrap();
        let check = divergence_bound_check(&arch, &start, &clients, 1, 0.1).unwrap();
        assert!(check.global.holds());
        assert!(
            (check.global.lhs - check.global.rhs).abs() < 1e-9,
            "lhs {} rhs {}",
            check.global.lhs,
            check.global.rhs
        );
    }

    #[test]
    fn bounds_hold_on_random_small_instances() {
        let mut rng = SplitMix64::new(12);
        for trial in 0..10u64 {
            let pair = blobs(100 + trial);
            let arch = arch();
            let start = init_params(&arch, &mut SplitMix64::new(200 + trial));
            let n_clients = 2 + (rng.next_below(4));
            let spec = PartitionSpec {
                n_clients,
                alpha: 0.3,
                imbalance: None,
            };
            let clients = dirichlet_partition(&pair.train, &spec, trial).unwrap();
            let steps = 1 + rng.next_below(3);
            let check = divergence_bound_check(&arch, &start, &clients, steps, 0.1).unwrap();
            assert!(
                check.global.holds(),
                "trial {trial}: global {} > {}",
                check.global.lhs,
                check.global.rhs
            );
            for r in &check.per_client {
                assert!(r.holds(), "trial {trial}: {} lhs {} > rhs {}", r.setting, r.lhs, r.rhs);
            }
        }
    }
}
