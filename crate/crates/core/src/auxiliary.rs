//! Auxiliary dataset construction: per-class augmentation and downsampling
//! until the label distribution matches a target.

use crate::augment::{augment_sample, AugmentationPolicy};
use crate::data::{ClientDataset, LabelDistribution, Sample};
use crate::error::{Error, Result};
use crate::rng;

/// What to build: a dataset of `total_size` samples whose label distribution
/// matches `target` up to rounding.
#[derive(Debug, Clone)]
pub struct AuxSpec {
    pub total_size: usize,
    pub target: LabelDistribution,
    pub policy: AugmentationPolicy,
    pub seed: u64,
}

impl AuxSpec {
    pub fn validate(&self) -> Result<()> {
        if self.total_size < self.target.len() {
            return Err(Error::Config(format!(
                "auxiliary size {} below class count {}",
                self.total_size,
                self.target.len()
            )));
        }
        self.policy.validate()
    }
}

/// Largest-remainder apportionment of `total` into integer class counts
/// proportional to `target`; conserves the total exactly. Ties break on the
/// lower class index.
pub fn apportion_counts(total: usize, target: &LabelDistribution) -> Vec<usize> {
    let raw: Vec<f64> = target.probs.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..total.saturating_sub(assigned) {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

/// Build the auxiliary dataset: classes above their target count are
/// uniformly downsampled (never fabricating samples), classes below are
/// grown with label-preserving augmentation (never deleting originals).
/// The output is shuffled by the seed.
pub fn build_auxiliary(local: &ClientDataset, spec: &AuxSpec) -> Result<ClientDataset> {
    spec.validate()?;
    if spec.target.len() != local.n_classes {
        return Err(Error::Shape(format!(
            "target has {} classes, dataset has {}",
            spec.target.len(),
            local.n_classes
        )));
    }
    let wanted = apportion_counts(spec.total_size, &spec.target);
    let mut samples: Vec<Sample> = Vec::with_capacity(spec.total_size);
    for (class, &target_count) in wanted.iter().enumerate() {
        if target_count == 0 {
            continue;
        }
        let members = local.class_indices(class);
        if members.is_empty() {
            return Err(Error::AuxClassUnavailable(class));
        }
        let mut class_rng = rng::stream(spec.seed, "aux/class", &[class as u64]);
        if members.len() >= target_count {
            let picks = class_rng.sample_indices(members.len(), target_count);
            samples.extend(picks.into_iter().map(|i| local.samples[members[i]].clone()));
        } else {
            samples.extend(members.iter().map(|&i| local.samples[i].clone()));
            for _ in 0..target_count - members.len() {
                let src = &local.samples[members[class_rng.next_below(members.len())]];
                samples.push(augment_sample(src, &spec.policy, local.layout, &mut class_rng));
            }
        }
    }
    let mut shuffle_rng = rng::stream(spec.seed, "aux/shuffle", &[]);
    shuffle_rng.shuffle(&mut samples);
    ClientDataset::new(samples, local.owner_id, local.n_classes, local.layout)
}
