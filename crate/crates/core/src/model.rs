//! Minimal dense classifier with exact analytic gradients.
//!
//! The network is a feedforward MLP with softmax output and cross-entropy
//! loss, in double precision throughout. Besides the usual forward / loss /
//! gradient operations it exposes the per-class gradient decomposition: the
//! full-batch loss gradient equals the label-proportion-weighted sum of the
//! per-class gradients, which is what both the distribution inference and the
//! divergence bound harness are built on.

use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, Sample};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Probabilities are clamped to this floor inside `log` so the loss stays
/// finite; the clamp only engages far below every test tolerance.
const PROB_FLOOR: f64 = 1e-12;

/// Hidden-layer nonlinearity. The output layer is always softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed in terms of the activation value `a`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

/// Layer sizes from input to output, plus the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
}

impl NetworkArch {
    /// `layer_sizes` runs input dim, hidden dims..., C output classes.
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(
                "network needs at least an input and an output layer".into(),
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if *layer_sizes.last().unwrap() < 2 {
            return Err(Error::Config("output layer needs at least 2 classes".into()));
        }
        Ok(NetworkArch {
            layer_sizes,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Total parameter count: per layer, out*in weights plus out biases.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    /// Offset of layer `l`'s weight block in the flat parameter vector.
    fn layer_offset(&self, l: usize) -> usize {
        self.layer_sizes
            .windows(2)
            .take(l)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }
}

/// Flat parameter (or update) vector tied to an architecture shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(arch: &NetworkArch) -> Self {
        ParamVector {
            values: vec![0.0; arch.param_count()],
        }
    }

    pub fn from_values(arch: &NetworkArch, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                values.len()
            )));
        }
        Ok(ParamVector { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// self += scale * other
    pub fn add_scaled(&mut self, other: &ParamVector, scale: f64) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, scale: f64) -> ParamVector {
        ParamVector {
            values: self.values.iter().map(|v| v * scale).collect(),
        }
    }

    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.len(), other.len());
        ParamVector {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    fn check_shape(&self, arch: &NetworkArch) -> Result<()> {
        if self.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector of length {} does not match architecture ({} params)",
                self.len(),
                arch.param_count()
            )));
        }
        Ok(())
    }
}

/// Seeded initialization: weights uniform in [-r, r] with r = 1/sqrt(fan_in),
/// biases zero.
pub fn init_params(arch: &NetworkArch, rng: &mut SplitMix64) -> ParamVector {
    let mut values = Vec::with_capacity(arch.param_count());
    for w in arch.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let r = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            values.push(rng.range_f64(-r, r));
        }
        for _ in 0..fan_out {
            values.push(0.0);
        }
    }
    ParamVector { values }
}

/// A borrowed view of samples as a feature matrix plus labels.
pub struct Batch<'a> {
    pub rows: Vec<&'a [f64]>,
    pub labels: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn from_samples(samples: &'a [Sample]) -> Self {
        Batch {
            rows: samples.iter().map(|s| s.features.as_slice()).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
        }
    }

    pub fn from_dataset(dataset: &'a ClientDataset) -> Self {
        Self::from_samples(&dataset.samples)
    }

    pub fn from_refs(samples: &[&'a Sample]) -> Self {
        Batch {
            rows: samples.iter().map(|s| s.features.as_slice()).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn validate(&self, arch: &NetworkArch) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Config("batch must be nonempty".into()));
        }
        let d = arch.input_dim();
        if let Some(bad) = self.rows.iter().find(|r| r.len() != d) {
            return Err(Error::Shape(format!(
                "sample has {} features, architecture expects {}",
                bad.len(),
                d
            )));
        }
        let c = arch.n_classes();
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= c) {
            return Err(Error::Shape(format!("label {bad} out of range for {c} classes")));
        }
        Ok(())
    }
}

/// Per-sample forward pass; returns the activations of every layer
/// (index 0 = input), with softmax applied to the last.
fn forward_sample(arch: &NetworkArch, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(arch.n_layers() + 1);
    acts.push(x.to_vec());
    for l in 0..arch.n_layers() {
        let (n_in, n_out) = (arch.layer_sizes[l], arch.layer_sizes[l + 1]);
        let off = arch.layer_offset(l);
        let weights = &params[off..off + n_out * n_in];
        let biases = &params[off + n_out * n_in..off + n_out * n_in + n_out];
        let input = &acts[l];
        let mut z = vec![0.0; n_out];
        for (i, zi) in z.iter_mut().enumerate() {
            let row = &weights[i * n_in..(i + 1) * n_in];
            let mut acc = biases[i];
            for (w, xin) in row.iter().zip(input.iter()) {
                acc += w * xin;
            }
            *zi = acc;
        }
        let last = l + 1 == arch.n_layers();
        if last {
            softmax_in_place(&mut z);
        } else {
            for zi in &mut z {
                *zi = arch.activation.apply(*zi);
            }
        }
        acts.push(z);
    }
    acts
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for zi in z.iter_mut() {
        *zi = (*zi - max).exp();
        sum += *zi;
    }
    for zi in z.iter_mut() {
        *zi /= sum;
    }
}

/// Class-probability matrix, one row per sample. Rows are probability
/// vectors: nonnegative, summing to 1.
pub fn forward(arch: &NetworkArch, params: &ParamVector, batch: &Batch) -> Result<Vec<Vec<f64>>> {
    params.check_shape(arch)?;
    batch.validate(arch)?;
    Ok(batch
        .rows
        .iter()
        .map(|x| forward_sample(arch, &params.values, x).pop().unwrap())
        .collect())
}

/// Mean cross-entropy over the batch.
pub fn loss(arch: &NetworkArch, params: &ParamVector, batch: &Batch) -> Result<f64> {
    let probs = forward(arch, params, batch)?;
    let total: f64 = probs
        .iter()
        .zip(&batch.labels)
        .map(|(p, &y)| -(p[y].clamp(PROB_FLOOR, 1.0)).ln())
        .sum();
    Ok(total / batch.len() as f64)
}

/// Analytic gradient of the mean cross-entropy w.r.t. all parameters.
pub fn gradient(arch: &NetworkArch, params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    params.check_shape(arch)?;
    batch.validate(arch)?;
    let mut grad = vec![0.0; params.len()];
    let p = &params.values;
    for (x, &y) in batch.rows.iter().zip(&batch.labels) {
        let acts = forward_sample(arch, p, x);
        // delta at the softmax output: p - onehot(y)
        let mut delta: Vec<f64> = acts[arch.n_layers()].clone();
        delta[y] -= 1.0;
        for l in (0..arch.n_layers()).rev() {
            let (n_in, n_out) = (arch.layer_sizes[l], arch.layer_sizes[l + 1]);
            let off = arch.layer_offset(l);
            let input = &acts[l];
            for i in 0..n_out {
                let di = delta[i];
                let wrow = &mut grad[off + i * n_in..off + (i + 1) * n_in];
                for (g, xin) in wrow.iter_mut().zip(input.iter()) {
                    *g += di * xin;
                }
                grad[off + n_out * n_in + i] += di;
            }
            if l > 0 {
                let weights = &p[off..off + n_out * n_in];
                let mut next = vec![0.0; n_in];
                for (i, &di) in delta.iter().enumerate() {
                    let row = &weights[i * n_in..(i + 1) * n_in];
                    for (nj, w) in next.iter_mut().zip(row.iter()) {
                        *nj += di * w;
                    }
                }
                for (nj, a) in next.iter_mut().zip(input.iter()) {
                    *nj *= arch.activation.derivative(*a);
                }
                delta = next;
            }
        }
    }
    let inv_n = 1.0 / batch.len() as f64;
    for g in &mut grad {
        *g *= inv_n;
    }
    Ok(ParamVector { values: grad })
}

/// Gradient of the mean cross-entropy restricted to class-`c` samples.
///
/// Weighted by the class proportions these recompose the full gradient:
/// `gradient(D) = sum_c p(c) * per_class_gradient(D, c)`.
pub fn per_class_gradient(
    arch: &NetworkArch,
    params: &ParamVector,
    dataset: &ClientDataset,
    class: usize,
) -> Result<ParamVector> {
    let members: Vec<&Sample> = dataset
        .samples
        .iter()
        .filter(|s| s.label == class)
        .collect();
    if members.is_empty() {
        return Err(Error::EmptyClass {
            class,
            context: format!("client {}", dataset.owner_id),
        });
    }
    gradient(arch, params, &Batch::from_refs(&members))
}

/// One gradient-descent step: `params - eta * grad`.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, eta: f64) -> Result<ParamVector> {
    if params.len() != grad.len() {
        return Err(Error::Shape(format!(
            "params ({}) and gradient ({}) lengths differ",
            params.len(),
            grad.len()
        )));
    }
    if eta < 0.0 {
        return Err(Error::Config("learning rate must be nonnegative".into()));
    }
    if !grad.is_finite() {
        return Err(Error::Numeric("gradient contains non-finite entries".into()));
    }
    let mut out = params.clone();
    out.add_scaled(grad, -eta);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ClientDataset, FeatureLayout};

    fn tiny_arch() -> NetworkArch {
        NetworkArch::new(vec![2, 2, 2], Activation::Tanh).unwrap()
    }

    fn sample(features: Vec<f64>, label: usize) -> Sample {
        Sample {
            features,
            label,
            augmented: false,
        }
    }

    fn dataset(samples: Vec<Sample>, n_classes: usize) -> ClientDataset {
        ClientDataset::new(samples, 0, n_classes, FeatureLayout::Vector).unwrap()
    }

    fn random_batch(rng: &mut SplitMix64, n: usize, d: usize, c: usize) -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let features = (0..d).map(|_| rng.range_f64(-1.0, 1.0)).collect();
                sample(features, rng.next_below(c))
            })
            .collect()
    }

    fn random_params(arch: &NetworkArch, rng: &mut SplitMix64) -> ParamVector {
        let values = (0..arch.param_count())
            .map(|_| rng.range_f64(-0.5, 0.5))
            .collect();
        ParamVector::from_values(arch, values).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_rows() {
        let arch = NetworkArch::new(vec![3, 4, 5], Activation::Tanh).unwrap();
        let params = ParamVector::zeros(&arch);
        let samples = vec![sample(vec![1.0, -2.0, 0.5], 0), sample(vec![0.0, 0.0, 9.0], 3)];
        let probs = forward(&arch, &params, &Batch::from_samples(&samples)).unwrap();
        for row in probs {
            for p in row {
                assert!((p - 0.2).abs() < 1e-15);
            }
        }
    }

    // Frozen from an independent matrix-multiply + softmax done by hand:
    // W1=[[0.1,0.2],[0.3,0.4]], b1=[0.01,0.02], tanh,
    // W2=[[0.5,-0.5],[-0.25,0.75]], b2=[0.0,0.1], x=(1,-2).
    #[test]
    fn hand_computed_2_2_2_network() {
        let arch = tiny_arch();
        let values = vec![
            0.1, 0.2, 0.3, 0.4, // W1 row-major
            0.01, 0.02, // b1
            0.5, -0.5, -0.25, 0.75, // W2
            0.0, 0.1, // b2
        ];
        let params = ParamVector::from_values(&arch, values).unwrap();
        let samples = vec![sample(vec![1.0, -2.0], 1)];
        let probs = forward(&arch, &params, &Batch::from_samples(&samples)).unwrap();
        assert!((probs[0][0] - 0.5612418095220039).abs() < 1e-12);
        assert!((probs[0][1] - 0.43875819047799614).abs() < 1e-12);
        let l = loss(&arch, &params, &Batch::from_samples(&samples)).unwrap();
        assert!((l - 0.8238068366201853).abs() < 1e-12);
    }

    #[test]
    fn permuting_samples_permutes_rows() {
        let arch = tiny_arch();
        let mut rng = SplitMix64::new(5);
        let params = random_params(&arch, &mut rng);
        let samples = random_batch(&mut rng, 6, 2, 2);
        let probs = forward(&arch, &params, &Batch::from_samples(&samples)).unwrap();
        let mut rev: Vec<Sample> = samples.clone();
        rev.reverse();
        let probs_rev = forward(&arch, &params, &Batch::from_samples(&rev)).unwrap();
        for i in 0..samples.len() {
            assert_eq!(probs[i], probs_rev[samples.len() - 1 - i]);
        }
    }

    #[test]
    fn confident_correct_prediction_has_zero_loss() {
        // Single linear layer with huge correct logit.
        let arch = NetworkArch::new(vec![2, 2], Activation::Tanh).unwrap();
        let params =
            ParamVector::from_values(&arch, vec![50.0, 0.0, 0.0, 50.0, 0.0, 0.0]).unwrap();
        let samples = vec![sample(vec![1.0, 0.0], 0), sample(vec![0.0, 1.0], 1)];
        let l = loss(&arch, &params, &Batch::from_samples(&samples)).unwrap();
        assert!(l < 1e-9, "loss {l}");
    }

    #[test]
    fn uniform_prediction_loss_is_ln_c() {
        let arch = NetworkArch::new(vec![3, 5], Activation::Tanh).unwrap();
        let params = ParamVector::zeros(&arch);
        let samples = vec![sample(vec![0.3, -1.0, 2.0], 4), sample(vec![1.0, 1.0, 1.0], 0)];
        let l = loss(&arch, &params, &Batch::from_samples(&samples)).unwrap();
        assert!((l - (5.0f64).ln()).abs() < 1e-12);
    }

    // Independent scalar oracle: recompute the loss with a separate
    // (naive, definition-level) implementation.
    #[test]
    fn loss_matches_independent_oracle() {
        let arch = NetworkArch::new(vec![3, 4, 3], Activation::Sigmoid).unwrap();
        let mut rng = SplitMix64::new(21);
        let params = random_params(&arch, &mut rng);
        let samples = random_batch(&mut rng, 9, 3, 3);
        let batch = Batch::from_samples(&samples);
        let l = loss(&arch, &params, &batch).unwrap();

        let mut expected = 0.0;
        for s in &samples {
            // forward by definition
            let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
            let p = &params.values;
            let mut h = vec![0.0; 4];
            for i in 0..4 {
                let mut acc = p[12 + i];
                for j in 0..3 {
                    acc += p[i * 3 + j] * s.features[j];
                }
                h[i] = sig(acc);
            }
            let off = 16;
            let mut z = vec![0.0; 3];
            for i in 0..3 {
                let mut acc = p[off + 12 + i];
                for j in 0..4 {
                    acc += p[off + i * 4 + j] * h[j];
                }
                z[i] = acc;
            }
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            expected += -(z[s.label].exp() / denom).ln();
        }
        expected /= samples.len() as f64;
        assert!((l - expected).abs() < 1e-12, "{l} vs {expected}");
    }

    // Central-difference oracle with step 1e-6. Pass if the coordinate agrees
    // to 1e-5 relative or 1e-8 absolute (near-zero coordinates are dominated
    // by cancellation noise in the difference quotient).
    fn finite_difference_check(arch: &NetworkArch, seed: u64) {
        let mut rng = SplitMix64::new(seed);
        let params = random_params(arch, &mut rng);
        let samples = random_batch(&mut rng, 7, arch.input_dim(), arch.n_classes());
        let batch = Batch::from_samples(&samples);
        let analytic = gradient(arch, &params, &batch).unwrap();
        let h = 1e-6;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.values[i] += h;
            let mut minus = params.clone();
            minus.values[i] -= h;
            let fd = (loss(arch, &plus, &batch).unwrap() - loss(arch, &minus, &batch).unwrap())
                / (2.0 * h);
            let a = analytic.values[i];
            let denom = a.abs().max(fd.abs());
            let ok = (a - fd).abs() < 1e-8 || (a - fd).abs() / denom < 1e-5;
            assert!(ok, "coord {i}: analytic {a} vs fd {fd}");
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let arch = NetworkArch::new(vec![3, 5, 4], Activation::Tanh).unwrap();
        for seed in 0..3 {
            finite_difference_check(&arch, 100 + seed);
        }
        let arch = NetworkArch::new(vec![2, 3, 3, 2], Activation::Sigmoid).unwrap();
        finite_difference_check(&arch, 7);
    }

    #[test]
    fn gradient_vanishes_at_fitted_minimum() {
        // Non-separable instance so the optimum is finite: the same input
        // appears under both labels.
        let arch = NetworkArch::new(vec![2, 2], Activation::Tanh).unwrap();
        let samples = vec![
            sample(vec![1.0, 0.0], 0),
            sample(vec![1.0, 0.0], 1),
            sample(vec![0.0, 1.0], 0),
            sample(vec![0.0, 1.0], 1),
            sample(vec![0.0, 1.0], 1),
        ];
        let batch = Batch::from_samples(&samples);
        let mut params = ParamVector::zeros(&arch);
        for _ in 0..20_000 {
            let g = gradient(&arch, &params, &batch).unwrap();
            params = sgd_step(&params, &g, 0.5).unwrap();
        }
        let g = gradient(&arch, &params, &batch).unwrap();
        assert!(g.norm() < 1e-6, "gradient norm {}", g.norm());
    }

    #[test]
    fn duplicating_batch_preserves_gradient() {
        let arch = tiny_arch();
        let mut rng = SplitMix64::new(31);
        let params = random_params(&arch, &mut rng);
        let samples = random_batch(&mut rng, 5, 2, 2);
        let g1 = gradient(&arch, &params, &Batch::from_samples(&samples)).unwrap();
        let mut doubled = samples.clone();
        doubled.extend(samples.clone());
        let g2 = gradient(&arch, &params, &Batch::from_samples(&doubled)).unwrap();
        for (a, b) in g1.values.iter().zip(&g2.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_dataset_equals_full_gradient() {
        let arch = tiny_arch();
        let mut rng = SplitMix64::new(77);
        let params = random_params(&arch, &mut rng);
        let mut samples = random_batch(&mut rng, 6, 2, 2);
        for s in &mut samples {
            s.label = 1;
        }
        let ds = dataset(samples.clone(), 2);
        let per = per_class_gradient(&arch, &params, &ds, 1).unwrap();
        let full = gradient(&arch, &params, &Batch::from_samples(&samples)).unwrap();
        assert_eq!(per.values, full.values);
    }

    #[test]
    fn per_class_gradients_recompose_full_gradient() {
        // The module's core invariant (1e-10 in double precision).
        let mut rng = SplitMix64::new(4242);
        for trial in 0..10 {
            let arch = NetworkArch::new(vec![3, 4, 3], Activation::Tanh).unwrap();
            let params = random_params(&arch, &mut rng);
            let samples = random_batch(&mut rng, 12 + trial, 3, 3);
            let ds = dataset(samples.clone(), 3);
            let p = ds.label_distribution();
            let full = gradient(&arch, &params, &Batch::from_samples(&samples)).unwrap();
            let mut recomposed = ParamVector::zeros(&arch);
            for c in 0..3 {
                if p.probs[c] > 0.0 {
                    let g = per_class_gradient(&arch, &params, &ds, c).unwrap();
                    recomposed.add_scaled(&g, p.probs[c]);
                }
            }
            let max_dev = full
                .values
                .iter()
                .zip(&recomposed.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_dev < 1e-10, "trial {trial}: deviation {max_dev}");
        }
    }

    #[test]
    fn disjoint_subsets_combine_as_weighted_mean() {
        let arch = tiny_arch();
        let mut rng = SplitMix64::new(55);
        let params = random_params(&arch, &mut rng);
        let mut samples = random_batch(&mut rng, 7, 2, 2);
        for s in &mut samples {
            s.label = 0;
        }
        let (a, b) = samples.split_at(3);
        let ga = gradient(&arch, &params, &Batch::from_samples(a)).unwrap();
        let gb = gradient(&arch, &params, &Batch::from_samples(b)).unwrap();
        let ds = dataset(samples.clone(), 2);
        let g = per_class_gradient(&arch, &params, &ds, 0).unwrap();
        let (na, nb) = (3.0, 4.0);
        for i in 0..g.len() {
            let expected = (na * ga.values[i] + nb * gb.values[i]) / (na + nb);
            assert!((g.values[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_class_is_an_error() {
        let arch = tiny_arch();
        let params = ParamVector::zeros(&arch);
        let ds = dataset(vec![sample(vec![1.0, 2.0], 0)], 2);
        let err = per_class_gradient(&arch, &params, &ds, 1).unwrap_err();
        assert!(matches!(err, Error::EmptyClass { class: 1, .. }));
    }

    #[test]
    fn sgd_step_arithmetic() {
        let arch = NetworkArch::new(vec![1, 2], Activation::Tanh).unwrap();
        let params = ParamVector::from_values(&arch, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let grad = ParamVector::from_values(&arch, vec![10.0, -10.0, 0.0, 0.0]).unwrap();
        let out = sgd_step(&params, &grad, 0.1).unwrap();
        assert_eq!(out.values, vec![0.0, 2.0, 0.0, 0.0]);
        // zero gradient leaves params untouched
        let zero = ParamVector::zeros(&arch);
        assert_eq!(sgd_step(&params, &zero, 0.1).unwrap().values, params.values);
    }

    #[test]
    fn sgd_step_rejects_non_finite_gradient() {
        let arch = NetworkArch::new(vec![1, 2], Activation::Tanh).unwrap();
        let params = ParamVector::zeros(&arch);
        let mut grad = ParamVector::zeros(&arch);
        grad.values[1] = f64::NAN;
        assert!(matches!(
            sgd_step(&params, &grad, 0.1),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn operations_are_pure() {
        let arch = tiny_arch();
        let mut rng = SplitMix64::new(8);
        let params = random_params(&arch, &mut rng);
        let samples = random_batch(&mut rng, 4, 2, 2);
        let batch = Batch::from_samples(&samples);
        let p1 = forward(&arch, &params, &batch).unwrap();
        let p2 = forward(&arch, &params, &batch).unwrap();
        assert_eq!(p1, p2);
        let g1 = gradient(&arch, &params, &batch).unwrap();
        let g2 = gradient(&arch, &params, &batch).unwrap();
        assert_eq!(g1.values, g2.values);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = SplitMix64::new(17);
        for _ in 0..20 {
            let arch = NetworkArch::new(vec![4, 6, 5], Activation::Relu).unwrap();
            let params = random_params(&arch, &mut rng);
            let samples = random_batch(&mut rng, 8, 4, 5);
            let probs = forward(&arch, &params, &Batch::from_samples(&samples)).unwrap();
            for row in probs {
                assert!(row.iter().all(|&p| p >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_a_configuration_error() {
        let arch = tiny_arch();
        let params = ParamVector::zeros(&arch);
        let bad = vec![sample(vec![1.0, 2.0, 3.0], 0)];
        assert!(forward(&arch, &params, &Batch::from_samples(&bad)).is_err());
        let other = NetworkArch::new(vec![4, 4], Activation::Tanh).unwrap();
        let wrong_params = ParamVector::zeros(&other);
        let good = vec![sample(vec![1.0, 2.0], 0)];
        assert!(forward(&arch, &wrong_params, &Batch::from_samples(&good)).is_err());
    }
}
