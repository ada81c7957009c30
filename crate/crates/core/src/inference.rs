//! Whole-population label-distribution inference from the observed global
//! model update.
//!
//! The attacker treats the aggregated update as (approximately) a
//! centralized-training update, decomposes it through the cross-entropy's
//! per-class linearity, and searches the probability simplex with an
//! elitist evolution algorithm for the mixture that reproduces the observed
//! update when simulated on its own (augmentation-grown) data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_sample, AugmentationPolicy};
use crate::data::{ClientDataset, LabelDistribution};
use crate::engine::RoundLog;
use crate::error::{Error, Result};
use crate::model::{per_class_gradient, NetworkArch, ParamVector};
use crate::rng;

/// Evolution-search parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionConfig {
    #[serde(default = "default_population")]
    pub population_size: usize,
    /// Maximum number of objective evaluations.
    #[serde(default = "default_nfe")]
    pub nfe_budget: usize,
    #[serde(default = "default_crossover")]
    pub crossover_rate: f64,
    #[serde(default = "default_mutation")]
    pub mutation_rate: f64,
    #[serde(default = "default_mutation_scale")]
    pub mutation_scale: f64,
}

fn default_population() -> usize {
    40
}

/// Default evaluation budget.
pub const DEFAULT_NFE_BUDGET: usize = 400;

fn default_nfe() -> usize {
    DEFAULT_NFE_BUDGET
}

fn default_crossover() -> f64 {
    0.9
}

fn default_mutation() -> f64 {
    0.3
}

fn default_mutation_scale() -> f64 {
    0.15
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            population_size: default_population(),
            nfe_budget: default_nfe(),
            crossover_rate: default_crossover(),
            mutation_rate: default_mutation(),
            mutation_scale: default_mutation_scale(),
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config("population_size must be >= 2".into()));
        }
        if self.nfe_budget < self.population_size {
            return Err(Error::Config(
                "nfe_budget must cover at least the initial population".into(),
            ));
        }
        for (name, rate) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} {rate} outside [0, 1]")));
            }
        }
        if self.mutation_scale < 0.0 {
            return Err(Error::Config("mutation_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// Outcome of the simplex search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceResult {
    pub p_hat: LabelDistribution,
    /// Final residual objective value.
    pub objective: f64,
    pub nfe_used: usize,
    /// Best objective after each generation (non-increasing).
    pub best_per_generation: Vec<f64>,
    /// Classes whose per-class gradient had to be zero-substituted because
    /// the attacker holds no samples of them.
    pub unavailable_classes: Vec<usize>,
}

/// The global update as a participant sees it: the difference between two
/// consecutive synchronizations.
pub fn observe_global_update(log_prev: &RoundLog, log_curr: &RoundLog) -> Result<ParamVector> {
    if log_curr.round != log_prev.round + 1 {
        return Err(Error::Usage(format!(
            "rounds {} and {} are not consecutive",
            log_prev.round, log_curr.round
        )));
    }
    if log_curr.global_before.len() != log_prev.global_before.len() {
        return Err(Error::Shape("round logs carry different model shapes".into()));
    }
    Ok(log_curr.global_before.sub(&log_prev.global_before))
}

/// Result of the gradient-aligned augmentation step.
#[derive(Debug, Clone)]
pub struct AlignmentOutcome {
    pub dataset: ClientDataset,
    /// Classes with no local samples at all; their gradient estimates are
    /// unavailable and flagged downstream.
    pub missing_classes: Vec<usize>,
    /// Augmented samples added per class.
    pub added_per_class: Vec<usize>,
}

/// Grow the local dataset class by class until the newest augmentation
/// batch's gradient direction agrees with the running per-class estimate
/// (cosine, floored at zero, >= theta) or the growth cap is reached.
/// Originals are never removed.
pub fn augment_until_aligned(
    local: &ClientDataset,
    arch: &NetworkArch,
    params: &ParamVector,
    policy: &AugmentationPolicy,
    seed: u64,
) -> Result<AlignmentOutcome> {
    policy.validate()?;
    let mut samples = local.samples.clone();
    let mut missing = Vec::new();
    let mut added_per_class = vec![0usize; local.n_classes];
    for class in 0..local.n_classes {
        let originals: Vec<crate::data::Sample> = local
            .samples
            .iter()
            .filter(|s| s.label == class)
            .cloned()
            .collect();
        if originals.is_empty() {
            missing.push(class);
            continue;
        }
        let mut class_rng = rng::stream(seed, "align/class", &[class as u64]);
        let cap = ((originals.len() as f64) * policy.max_growth).floor() as usize;
        let mut class_samples = originals.clone();
        loop {
            let room = cap.saturating_sub(class_samples.len());
            if room == 0 {
                break;
            }
            let batch_size = originals.len().min(room).max(1);
            let batch: Vec<crate::data::Sample> = (0..batch_size)
                .map(|_| {
                    let src = &originals[class_rng.next_below(originals.len())];
                    augment_sample(src, policy, local.layout, &mut class_rng)
                })
                .collect();
            class_samples.extend(batch.iter().cloned());
            // Cosine between the new batch's gradient contribution and the
            // running per-class estimate, floored at zero.
            let batch_ds =
                ClientDataset::new(batch, local.owner_id, local.n_classes, local.layout)?;
            let run_ds = ClientDataset::new(
                class_samples.clone(),
                local.owner_id,
                local.n_classes,
                local.layout,
            )?;
            let g_new = per_class_gradient(arch, params, &batch_ds, class)?;
            let g_run = per_class_gradient(arch, params, &run_ds, class)?;
            let similarity = cosine(&g_new.values, &g_run.values).max(0.0);
            added_per_class[class] = class_samples.len() - originals.len();
            if similarity >= policy.theta {
                break;
            }
        }
        samples.extend(class_samples.into_iter().skip(originals.len()));
    }
    Ok(AlignmentOutcome {
        dataset: ClientDataset::new(samples, local.owner_id, local.n_classes, local.layout)?,
        missing_classes: missing,
        added_per_class,
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Simulates `t` local steps whose gradient at each step is the candidate
/// mixture of the attacker's per-class gradients, and scores a candidate by
/// the distance between the simulated and the observed update.
///
/// With `t = 1` the per-class basis does not depend on the candidate, so it
/// is computed once at construction.
pub struct SimulationObjective<'a> {
    arch: &'a NetworkArch,
    sync: &'a ParamVector,
    observed_delta: &'a ParamVector,
    dataset: &'a ClientDataset,
    steps: usize,
    eta: f64,
    /// Per-class gradients at the sync point (zero vector where the class is
    /// locally absent); reused directly when steps == 1.
    basis_at_sync: Vec<ParamVector>,
    unavailable: Vec<usize>,
}

impl<'a> SimulationObjective<'a> {
    pub fn new(
        arch: &'a NetworkArch,
        sync: &'a ParamVector,
        observed_delta: &'a ParamVector,
        dataset: &'a ClientDataset,
        steps: usize,
        eta: f64,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("simulation needs at least one step".into()));
        }
        if observed_delta.len() != sync.len() {
            return Err(Error::Shape("observed update does not match model shape".into()));
        }
        let (basis_at_sync, unavailable) = class_basis(arch, sync, dataset)?;
        Ok(SimulationObjective {
            arch,
            sync,
            observed_delta,
            dataset,
            steps,
            eta,
            basis_at_sync,
            unavailable,
        })
    }

    /// Classes whose gradients were zero-substituted.
    pub fn unavailable_classes(&self) -> &[usize] {
        &self.unavailable
    }

    /// The residual `|| observed - simulated ||` for a candidate mixture.
    pub fn value(&self, p: &[f64]) -> f64 {
        debug_assert_eq!(p.len(), self.dataset.n_classes);
        let mut simulated = ParamVector {
            values: vec![0.0; self.sync.len()],
        };
        if self.steps == 1 {
            for (c, g) in self.basis_at_sync.iter().enumerate() {
                simulated.add_scaled(g, -self.eta * p[c]);
            }
        } else {
            let mut current = self.sync.clone();
            for tau in 0..self.steps {
                let basis = if tau == 0 {
                    self.basis_at_sync.clone()
                } else {
                    class_basis(self.arch, &current, self.dataset)
                        .expect("per-class basis on validated dataset")
                        .0
                };
                let mut step = ParamVector {
                    values: vec![0.0; self.sync.len()],
                };
                for (c, g) in basis.iter().enumerate() {
                    step.add_scaled(g, -self.eta * p[c]);
                }
                current.add_scaled(&step, 1.0);
                simulated.add_scaled(&step, 1.0);
            }
        }
        self.observed_delta.sub(&simulated).norm()
    }
}

fn class_basis(
    arch: &NetworkArch,
    params: &ParamVector,
    dataset: &ClientDataset,
) -> Result<(Vec<ParamVector>, Vec<usize>)> {
    let counts = dataset.class_counts();
    let mut basis = Vec::with_capacity(dataset.n_classes);
    let mut unavailable = Vec::new();
    for c in 0..dataset.n_classes {
        if counts[c] == 0 {
            unavailable.push(c);
            basis.push(ParamVector {
                values: vec![0.0; params.len()],
            });
        } else {
            basis.push(per_class_gradient(arch, params, dataset, c)?);
        }
    }
    Ok((basis, unavailable))
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_to_simplex(v: &mut [f64]) {
    let n = v.len();
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    let mut found = false;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
            found = true;
        }
    }
    if !found {
        // Degenerate input (all entries equal and tiny); fall back to uniform.
        for x in v.iter_mut() {
            *x = 1.0 / n as f64;
        }
        return;
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Elitist evolution search over the simplex. The best objective value per
/// generation is non-increasing and every candidate ever evaluated lies on
/// the simplex (projection after crossover/mutation).
///
/// `informed_prior`, when given, becomes one seeded individual of the
/// initial population (the attacker's own label distribution is a cheap
/// informed start).
pub fn infer_distribution<F>(
    cfg: &EvolutionConfig,
    n_classes: usize,
    objective: F,
    informed_prior: Option<&LabelDistribution>,
    seed: u64,
) -> Result<InferenceResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if n_classes < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    let s = cfg.population_size;
    let mut init_rng = rng::stream(seed, "evolution/init", &[]);
    let mut population: Vec<Vec<f64>> = Vec::with_capacity(s);
    if let Some(prior) = informed_prior {
        if prior.len() != n_classes {
            return Err(Error::Shape("informed prior has wrong class count".into()));
        }
        population.push(prior.probs.clone());
    }
    while population.len() < s {
        population.push(init_rng.dirichlet(1.0, n_classes));
    }

    let evaluate = |pop: &[Vec<f64>]| -> Vec<f64> {
        pop.par_iter().map(|p| objective(p)).collect()
    };

    let mut fitness = evaluate(&population);
    let mut nfe_used = s;
    let mut best_history = vec![best_of(&fitness)];

    let mut generation = 0u64;
    while nfe_used + s <= cfg.nfe_budget {
        generation += 1;
        // Children: per-individual RNG streams split from the generation
        // seed keep parallel and serial runs identical.
        let children: Vec<Vec<f64>> = (0..s)
            .map(|i| {
                let mut child_rng =
                    rng::stream(seed, "evolution/child", &[generation, i as u64]);
                let a = child_rng.next_below(s);
                let mut b = child_rng.next_below(s);
                if b == a {
                    b = (b + 1) % s;
                }
                let mut child = population[a].clone();
                if child_rng.next_f64() < cfg.crossover_rate {
                    for (c, gene) in child.iter_mut().enumerate() {
                        if child_rng.next_f64() < 0.5 {
                            *gene = population[b][c];
                        }
                    }
                }
                for gene in child.iter_mut() {
                    if child_rng.next_f64() < cfg.mutation_rate {
                        *gene += child_rng.gauss() * cfg.mutation_scale;
                    }
                    if *gene < 0.0 {
                        *gene = 0.0;
                    }
                }
                project_to_simplex(&mut child);
                child
            })
            .collect();
        let child_fitness = evaluate(&children);
        nfe_used += s;

        // mu + lambda elitist selection: keep the S best of parents and
        // children, stable on (objective, tie-order).
        let mut combined: Vec<(Vec<f64>, f64)> = population
            .into_iter()
            .zip(fitness)
            .chain(children.into_iter().zip(child_fitness))
            .collect();
        combined.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        combined.truncate(s);
        population = combined.iter().map(|(p, _)| p.clone()).collect();
        fitness = combined.iter().map(|(_, f)| *f).collect();
        best_history.push(best_of(&fitness));
    }

    let best_ix = fitness
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let mut best = population[best_ix].clone();
    // The projection keeps candidates on the simplex to ~1e-16; renormalize
    // the final answer so downstream validation at 1e-9 always holds.
    let total: f64 = best.iter().sum();
    if total > 0.0 {
        for x in &mut best {
            *x /= total;
        }
    }
    Ok(InferenceResult {
        p_hat: LabelDistribution::new(best)?,
        objective: fitness[best_ix],
        nfe_used,
        best_per_generation: best_history,
        unavailable_classes: Vec::new(),
    })
}

fn best_of(fitness: &[f64]) -> f64 {
    fitness.iter().cloned().fold(f64::INFINITY, f64::min)
}
