//! Datasets, global imbalance, and the Dirichlet client partition.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// How the flat feature vector should be interpreted by augmentation and
/// trigger placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayout {
    /// Plain feature vector.
    Vector,
    /// Row-major grayscale image.
    Image { height: usize, width: usize },
}

impl FeatureLayout {
    pub fn dim(&self) -> Option<usize> {
        match self {
            FeatureLayout::Vector => None,
            FeatureLayout::Image { height, width } => Some(height * width),
        }
    }
}

/// One labeled sample. `augmented` marks synthesized samples so metrics can
/// report the augmentation fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    #[serde(default)]
    pub augmented: bool,
}

/// A labeled sample collection owned by one (possibly synthetic) client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub samples: Vec<Sample>,
    pub owner_id: usize,
    pub n_classes: usize,
    pub layout: FeatureLayout,
}

impl ClientDataset {
    pub fn new(
        samples: Vec<Sample>,
        owner_id: usize,
        n_classes: usize,
        layout: FeatureLayout,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config("datasets need at least 2 classes".into()));
        }
        if let Some(bad) = samples.iter().find(|s| s.label >= n_classes) {
            return Err(Error::Shape(format!(
                "label {} out of range for {} classes",
                bad.label, n_classes
            )));
        }
        if let Some(expected) = layout.dim() {
            if let Some(bad) = samples.iter().find(|s| s.features.len() != expected) {
                return Err(Error::Shape(format!(
                    "image layout expects {} features, sample has {}",
                    expected,
                    bad.features.len()
                )));
            }
        }
        Ok(ClientDataset {
            samples,
            owner_id,
            n_classes,
            layout,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.first().map(|s| s.features.len()).unwrap_or(0)
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Indices of samples with the given label.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Empirical label distribution.
    pub fn label_distribution(&self) -> LabelDistribution {
        let counts = self.class_counts();
        let n = self.len() as f64;
        LabelDistribution {
            probs: counts.iter().map(|&c| c as f64 / n).collect(),
        }
    }

    /// Maximum feature value over all samples (used for trigger defaults).
    pub fn max_feature_value(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|s| s.features.iter().cloned())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Fraction of samples carrying the `augmented` tag.
    pub fn augmented_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.augmented).count() as f64 / self.len() as f64
    }

    fn subset(&self, indices: &[usize], owner_id: usize) -> ClientDataset {
        ClientDataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            owner_id,
            n_classes: self.n_classes,
            layout: self.layout,
        }
    }
}

/// Length-C probability simplex point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::Config("distribution entries must be finite and >= 0".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("distribution sums to {sum}, not 1")));
        }
        Ok(LabelDistribution { probs })
    }

    pub fn uniform(c: usize) -> Self {
        LabelDistribution {
            probs: vec![1.0 / c as f64; c],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Euclidean distance to another distribution of the same length.
    pub fn l2_distance(&self, other: &LabelDistribution) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Free-function form of [`ClientDataset::label_distribution`].
pub fn label_distribution(dataset: &ClientDataset) -> LabelDistribution {
    dataset.label_distribution()
}

/// Free-function form of [`LabelDistribution::l2_distance`].
pub fn l2_distance(p: &LabelDistribution, q: &LabelDistribution) -> f64 {
    p.l2_distance(q)
}

/// Dirichlet partition parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub n_clients: usize,
    pub alpha: f64,
    /// Optional per-class keep-fraction range inducing global imbalance.
    #[serde(default)]
    pub imbalance: Option<(f64, f64)>,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::Config("partition needs at least one client".into()));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config("Dirichlet alpha must be > 0".into()));
        }
        if let Some((lo, hi)) = self.imbalance {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return Err(Error::Config(format!(
                    "keep-fraction range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"
                )));
            }
        }
        Ok(())
    }
}

/// Where training data comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Seeded Gaussian blobs: one isotropic cluster per class.
    Synthetic {
        classes: usize,
        features: usize,
        train_per_class: usize,
        test_per_class: usize,
        #[serde(default = "default_center_scale")]
        center_scale: f64,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
        /// Leading feature dims where every class center is zero: pure-noise
        /// background (the blob analogue of an image's empty corner), which
        /// keeps a trigger region class-neutral.
        #[serde(default)]
        background_features: usize,
    },
    /// IDX-format image/label file pairs (MNIST layout).
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Optional cap on the number of training samples loaded.
        #[serde(default)]
        limit: Option<usize>,
    },
}

fn default_center_scale() -> f64 {
    1.0
}

fn default_noise_std() -> f64 {
    1.0
}

/// A train/test pair drawn from the same source.
#[derive(Debug, Clone)]
pub struct DatasetPair {
    pub train: ClientDataset,
    pub test: ClientDataset,
}

/// Load an IDX pair from disk or synthesize a blob dataset, deterministically
/// from `seed`.
pub fn load_or_synthesize(source: &DatasetSource, seed: u64) -> Result<DatasetPair> {
    match source {
        DatasetSource::Synthetic {
            classes,
            features,
            train_per_class,
            test_per_class,
            center_scale,
            noise_std,
            background_features,
        } => {
            if *classes < 2 || *features == 0 || *train_per_class == 0 {
                return Err(Error::Config("synthetic spec needs C >= 2, features >= 1, train_per_class >= 1".into()));
            }
            if *background_features > *features {
                return Err(Error::Config("background_features exceeds feature count".into()));
            }
            let mut center_rng = crate::rng::stream(seed, "synthetic/centers", &[]);
            let centers: Vec<Vec<f64>> = (0..*classes)
                .map(|_| {
                    (0..*features)
                        .map(|i| {
                            let c = center_rng.gauss() * center_scale;
                            if i < *background_features {
                                0.0
                            } else {
                                c
                            }
                        })
                        .collect()
                })
                .collect();
            let train = blob_samples(
                &centers,
                *train_per_class,
                *noise_std,
                &mut crate::rng::stream(seed, "synthetic/train", &[]),
            );
            let test = blob_samples(
                &centers,
                *test_per_class,
                *noise_std,
                &mut crate::rng::stream(seed, "synthetic/test", &[]),
            );
            Ok(DatasetPair {
                train: ClientDataset::new(train, 0, *classes, FeatureLayout::Vector)?,
                test: ClientDataset::new(test, 0, *classes, FeatureLayout::Vector)?,
            })
        }
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            limit,
        } => {
            let train = load_idx_pair(train_images, train_labels, *limit)?;
            let test = load_idx_pair(test_images, test_labels, None)?;
            Ok(DatasetPair { train, test })
        }
    }
}

fn blob_samples(
    centers: &[Vec<f64>],
    per_class: usize,
    noise_std: f64,
    rng: &mut SplitMix64,
) -> Vec<Sample> {
    let mut samples = Vec::with_capacity(centers.len() * per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let features = center.iter().map(|&c| c + rng.gauss() * noise_std).collect();
            samples.push(Sample {
                features,
                label,
                augmented: false,
            });
        }
    }
    samples
}

// ---------------------------------------------------------------------------
// IDX format
// ---------------------------------------------------------------------------

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

struct IdxReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> IdxReader<R> {
    fn new(inner: R) -> Self {
        IdxReader { inner, offset: 0 }
    }

    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let start = self.offset;
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(Error::IdxParse {
                        offset: start + filled as u64,
                        message: format!("unexpected EOF while reading {what}"),
                    })
                }
                Ok(n) => {
                    filled += n;
                    self.offset += n as u64;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    fn read_u32_be(&mut self, what: &str) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.read_exact(&mut buf, what)?;
        Ok(u32::from_be_bytes(buf))
    }
}

/// Parse an IDX image tensor (magic 0x00000803) into per-sample pixel rows
/// scaled to [0, 1]. Returns the rows and the (height, width) pair.
pub fn parse_idx_images<R: Read>(reader: R) -> Result<(Vec<Vec<f64>>, (usize, usize))> {
    let mut r = IdxReader::new(reader);
    let magic = r.read_u32_be("image magic")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::IdxParse {
            offset: 0,
            message: format!("bad image magic 0x{magic:08X}, expected 0x{IDX_IMAGE_MAGIC:08X}"),
        });
    }
    let count = r.read_u32_be("image count")? as usize;
    let height = r.read_u32_be("image height")? as usize;
    let width = r.read_u32_be("image width")? as usize;
    let mut rows = Vec::with_capacity(count);
    let mut buf = vec![0u8; height * width];
    for i in 0..count {
        r.read_exact(&mut buf, &format!("image {i}"))?;
        rows.push(buf.iter().map(|&b| b as f64 / 255.0).collect());
    }
    Ok((rows, (height, width)))
}

/// Parse an IDX label vector (magic 0x00000801).
pub fn parse_idx_labels<R: Read>(reader: R) -> Result<Vec<usize>> {
    let mut r = IdxReader::new(reader);
    let magic = r.read_u32_be("label magic")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::IdxParse {
            offset: 0,
            message: format!("bad label magic 0x{magic:08X}, expected 0x{IDX_LABEL_MAGIC:08X}"),
        });
    }
    let count = r.read_u32_be("label count")? as usize;
    let mut buf = vec![0u8; count];
    r.read_exact(&mut buf, "labels")?;
    Ok(buf.iter().map(|&b| b as usize).collect())
}

fn load_idx_pair(images: &Path, labels: &Path, limit: Option<usize>) -> Result<ClientDataset> {
    let (rows, (h, w)) = parse_idx_images(std::fs::File::open(images)?)?;
    let labels = parse_idx_labels(std::fs::File::open(labels)?)?;
    if rows.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} images but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let n_classes = labels.iter().max().map(|&m| m + 1).unwrap_or(0).max(2);
    let take = limit.unwrap_or(rows.len()).min(rows.len());
    let samples = rows
        .into_iter()
        .zip(labels)
        .take(take)
        .map(|(features, label)| Sample {
            features,
            label,
            augmented: false,
        })
        .collect();
    ClientDataset::new(samples, 0, n_classes, FeatureLayout::Image { height: h, width: w })
}

// ---------------------------------------------------------------------------
// Imbalance and partitioning
// ---------------------------------------------------------------------------

/// Induce global imbalance: per class, keep a uniformly drawn fraction from
/// `keep` (rounded down), selected without replacement.
pub fn global_downsample(
    dataset: &ClientDataset,
    keep: (f64, f64),
    seed: u64,
) -> Result<ClientDataset> {
    let (lo, hi) = keep;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::Config(format!(
            "keep range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"
        )));
    }
    let mut rng = crate::rng::stream(seed, "downsample", &[]);
    let mut kept: Vec<usize> = Vec::new();
    for class in 0..dataset.n_classes {
        let members = dataset.class_indices(class);
        if members.is_empty() {
            continue;
        }
        let fraction = rng.range_f64(lo, hi.min(1.0 + f64::EPSILON));
        let count = ((members.len() as f64) * fraction.min(1.0)).floor() as usize;
        if count == 0 {
            return Err(Error::Config(format!(
                "downsampling empties class {class} (fraction {fraction:.3})"
            )));
        }
        let picks = rng.sample_indices(members.len(), count);
        kept.extend(picks.into_iter().map(|i| members[i]));
    }
    kept.sort_unstable();
    Ok(dataset.subset(&kept, dataset.owner_id))
}

/// Partition sample indices across clients: per class, a Dirichlet(alpha)
/// draw over clients sets the proportions and the class's samples are dealt
/// out in seeded-shuffled order. Clients left with zero samples overall
/// trigger a re-draw (cap 100).
pub fn dirichlet_partition_indices(
    labels: &[usize],
    n_classes: usize,
    spec: &PartitionSpec,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let n = labels.len();
    if spec.n_clients > n {
        return Err(Error::Config(format!(
            "cannot split {} samples across {} clients",
            n, spec.n_clients
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    const RETRY_CAP: usize = 100;
    for attempt in 0..RETRY_CAP {
        let mut rng = crate::rng::stream(seed, "partition", &[attempt as u64]);
        let mut clients: Vec<Vec<usize>> = vec![Vec::new(); spec.n_clients];
        for members in by_class.iter() {
            if members.is_empty() {
                continue;
            }
            let mut order = members.clone();
            rng.shuffle(&mut order);
            let props = rng.dirichlet(spec.alpha, spec.n_clients);
            // Cumulative-rounding boundaries conserve the class count exactly.
            let m = order.len();
            let mut cum = 0.0;
            let mut start = 0usize;
            for (k, &p) in props.iter().enumerate() {
                cum += p;
                let end = if k + 1 == spec.n_clients {
                    m
                } else {
                    ((cum * m as f64).round() as usize).min(m)
                };
                clients[k].extend_from_slice(&order[start..end.max(start)]);
                start = end.max(start);
            }
        }
        if clients.iter().all(|c| !c.is_empty()) {
            for c in &mut clients {
                c.sort_unstable();
            }
            return Ok(clients);
        }
    }
    Err(Error::Config(format!(
        "a client received zero samples in {RETRY_CAP} consecutive partition draws"
    )))
}

/// Partition a dataset into per-client datasets (disjoint, union = input).
pub fn dirichlet_partition(
    dataset: &ClientDataset,
    spec: &PartitionSpec,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    let labels: Vec<usize> = dataset.samples.iter().map(|s| s.label).collect();
    let index_sets = dirichlet_partition_indices(&labels, dataset.n_classes, spec, seed)?;
    Ok(index_sets
        .into_iter()
        .enumerate()
        .map(|(k, indices)| dataset.subset(&indices, k))
        .collect())
}
