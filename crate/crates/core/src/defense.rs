//! Server-side robust aggregation (FoolsGold) and client-side local
//! differential privacy (norm clipping + Gaussian noise), pluggable in place
//! of plain FedAvg.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::engine::ClientUpdate;
use crate::model::ParamVector;
use crate::rng::SplitMix64;

/// FoolsGold flavor: the full pardoning + logit re-scaling, or the bare
/// max-cosine rule. Both satisfy the invariants the tests rely on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FoolsGoldVariant {
    #[default]
    Full,
    MaxCosine,
}

/// How the DP clip bound is chosen each round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipBound {
    /// Median of the round's unclipped benign update norms.
    Median,
    /// A fixed norm bound.
    Fixed(f64),
}

/// Which defense the server/clients run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefenseConfig {
    None,
    FoolsGold {
        #[serde(default)]
        variant: FoolsGoldVariant,
        /// Rounds of per-client history kept; None keeps everything.
        #[serde(default)]
        history_depth: Option<usize>,
    },
    LocalDp {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_clip")]
        clip: ClipBound,
    },
}

fn default_epsilon() -> f64 {
    50.0
}

fn default_delta() -> f64 {
    1e-5
}

fn default_clip() -> ClipBound {
    ClipBound::Median
}

impl DefenseConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if let DefenseConfig::LocalDp { epsilon, delta, clip } = self {
            if !(*epsilon > 0.0) {
                return Err(crate::Error::Config("dp epsilon must be > 0".into()));
            }
            if !(*delta > 0.0 && *delta < 1.0) {
                return Err(crate::Error::Config("dp delta must be in (0, 1)".into()));
            }
            if let ClipBound::Fixed(b) = clip {
                if !(*b > 0.0) {
                    return Err(crate::Error::Config("clip bound must be > 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// Cumulative per-client update history, optionally depth-limited.
pub struct GradientHistory {
    depth: Option<usize>,
    cumulative: BTreeMap<usize, Vec<f64>>,
    recent: BTreeMap<usize, VecDeque<Vec<f64>>>,
}

impl GradientHistory {
    pub fn new(depth: Option<usize>) -> Self {
        GradientHistory {
            depth,
            cumulative: BTreeMap::new(),
            recent: BTreeMap::new(),
        }
    }

    /// Fold one round's delta into the client's record.
    pub fn record(&mut self, client_id: usize, delta: &ParamVector) {
        match self.depth {
            None => {
                let entry = self
                    .cumulative
                    .entry(client_id)
                    .or_insert_with(|| vec![0.0; delta.len()]);
                for (a, b) in entry.iter_mut().zip(&delta.values) {
                    *a += b;
                }
            }
            Some(d) => {
                let q = self.recent.entry(client_id).or_default();
                q.push_back(delta.values.clone());
                while q.len() > d {
                    q.pop_front();
                }
            }
        }
    }

    /// The aggregate history vector for a client, if any.
    pub fn vector(&self, client_id: usize) -> Option<Vec<f64>> {
        match self.depth {
            None => self.cumulative.get(&client_id).cloned(),
            Some(_) => self.recent.get(&client_id).map(|q| {
                let mut sum = vec![0.0; q.front().map_or(0, |v| v.len())];
                for v in q {
                    for (a, b) in sum.iter_mut().zip(v) {
                        *a += b;
                    }
                }
                sum
            }),
        }
    }

    pub fn known_clients(&self) -> usize {
        match self.depth {
            None => self.cumulative.len(),
            Some(_) => self.recent.len(),
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0 // zero-norm history contributes no similarity
    } else {
        dot / (na * nb)
    }
}

/// Per-participant aggregation weights in [0, 1]: clients whose cumulative
/// update histories are mutually too similar get down-weighted.
///
/// The `Full` variant follows the original scheme: pairwise max cosine,
/// pardoning by the ratio of per-client maxima, then a logit re-scaling
/// clamped to [0, 1]. `MaxCosine` keeps only `1 - max_similarity`.
pub fn foolsgold_weights(
    history: &GradientHistory,
    participants: &[usize],
    variant: FoolsGoldVariant,
) -> Vec<f64> {
    let m = participants.len();
    if m == 1 {
        return vec![1.0];
    }
    let vectors: Vec<Vec<f64>> = participants
        .iter()
        .map(|&id| history.vector(id).unwrap_or_default())
        .collect();
    let mut cs = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            if i != j && !vectors[i].is_empty() && vectors[i].len() == vectors[j].len() {
                cs[i][j] = cosine(&vectors[i], &vectors[j]);
            }
        }
    }
    let maxima: Vec<f64> = (0..m)
        .map(|i| (0..m).filter(|&j| j != i).map(|j| cs[i][j]).fold(f64::MIN, f64::max))
        .collect();

    match variant {
        FoolsGoldVariant::MaxCosine => maxima
            .iter()
            .map(|&v| (1.0 - v).clamp(0.0, 1.0))
            .collect(),
        FoolsGoldVariant::Full => {
            // Pardoning: dampen similarity against clients that are overall
            // less suspicious than oneself.
            let mut pardoned = cs.clone();
            for i in 0..m {
                for j in 0..m {
                    if i != j && maxima[j] > maxima[i] && maxima[j] > 0.0 {
                        pardoned[i][j] *= maxima[i] / maxima[j];
                    }
                }
            }
            let mut wv: Vec<f64> = (0..m)
                .map(|i| {
                    let v = (0..m)
                        .filter(|&j| j != i)
                        .map(|j| pardoned[i][j])
                        .fold(f64::MIN, f64::max);
                    (1.0 - v).clamp(0.0, 1.0)
                })
                .collect();
            let top = wv.iter().cloned().fold(0.0, f64::max);
            if top > 0.0 {
                for w in &mut wv {
                    *w /= top;
                }
            }
            // Logit re-scaling, clamped back into [0, 1].
            for w in &mut wv {
                if *w >= 1.0 {
                    *w = 1.0;
                } else if *w <= 0.0 {
                    *w = 0.0;
                } else {
                    *w = ((*w / (1.0 - *w)).ln() + 0.5).clamp(0.0, 1.0);
                }
            }
            wv
        }
    }
}

/// The Gaussian-mechanism noise multiplier sqrt(2 ln(1.25/delta)) / epsilon.
pub fn dp_sigma(epsilon: f64, delta: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).max(0.0).sqrt() / epsilon
}

/// The round's clip bound: the median of benign unclipped norms (even count
/// averages the middle two), or the configured fixed value. None when no
/// benign update is present this round.
pub fn resolve_clip_bound(clip: &ClipBound, updates: &[ClientUpdate]) -> Option<f64> {
    match clip {
        ClipBound::Fixed(b) => Some(*b),
        ClipBound::Median => {
            let mut norms: Vec<f64> = updates
                .iter()
                .filter(|u| u.origin == crate::engine::UpdateOrigin::Benign)
                .map(|u| u.delta.norm())
                .collect();
            if norms.is_empty() {
                return None;
            }
            norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mid = norms.len() / 2;
            Some(if norms.len() % 2 == 1 {
                norms[mid]
            } else {
                0.5 * (norms[mid - 1] + norms[mid])
            })
        }
    }
}

/// Clip the update to `bound` (multiplicative norm rescale) and add i.i.d.
/// Gaussian noise with standard deviation `sigma * bound` per coordinate.
pub fn dp_perturb(update: &mut ClientUpdate, bound: f64, sigma: f64, rng: &mut SplitMix64) {
    let norm = update.delta.norm();
    if norm > bound && norm > 0.0 {
        let scale = bound / norm;
        for v in &mut update.delta.values {
            *v *= scale;
        }
    }
    if sigma > 0.0 {
        let std = sigma * bound;
        for v in &mut update.delta.values {
            *v += rng.gauss() * std;
        }
    }
}
