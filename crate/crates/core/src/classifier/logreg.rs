//! Multinomial logistic regression trained by full-batch gradient descent.
//! Single-threaded and fully deterministic given the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::softmax_in_place;
use crate::Scalar;

use super::features::FeatureVector;

#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub features: Vec<FeatureVector>,
    /// Class index per example, into `class_labels`.
    pub labels: Vec<usize>,
    pub class_labels: Vec<String>,
}

impl LabeledDataset {
    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature rows vs {} labels",
                self.features.len(),
                self.labels.len()
            )));
        }
        if self.features.is_empty() {
            return Err(Error::InvalidDataset("empty dataset".into()));
        }
        let dim = self.features[0].len();
        if self.features.iter().any(|f| f.len() != dim) {
            return Err(Error::InvalidDataset("ragged feature rows".into()));
        }
        {
            let mut seen = std::collections::HashSet::new();
            if !self.class_labels.iter().all(|l| seen.insert(l)) {
                return Err(Error::InvalidDataset("duplicate class labels".into()));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_labels.len()) {
            return Err(Error::InvalidDataset(format!(
                "label index {bad} out of range for {} classes",
                self.class_labels.len()
            )));
        }
        Ok(())
    }

    fn distinct_label_count(&self) -> usize {
        let mut present = vec![false; self.class_labels.len()];
        for &l in &self.labels {
            present[l] = true;
        }
        present.iter().filter(|&&p| p).count()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassifierModel {
    /// Row per class, column per feature.
    pub weights: Vec<Vec<Scalar>>,
    pub bias: Vec<Scalar>,
    pub class_labels: Vec<String>,
    /// Per-feature normalization, from the training split only.
    pub feature_mean: Vec<Scalar>,
    pub feature_std: Vec<Scalar>,
    pub final_loss: Scalar,
    pub epochs_run: usize,
}

impl ClassifierModel {
    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }

    fn normalize(&self, x: &[Scalar]) -> Vec<Scalar> {
        x.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_std)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }

    pub fn scores(&self, x: &[Scalar]) -> Vec<Scalar> {
        let z = self.normalize(x);
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, &b)| b + w.iter().zip(&z).map(|(&wi, &zi)| wi * zi).sum::<Scalar>())
            .collect()
    }

    /// Predicted class index; ties break toward the lowest index.
    pub fn predict(&self, x: &[Scalar]) -> usize {
        let s = self.scores(x);
        let mut best = 0usize;
        for (i, &v) in s.iter().enumerate().skip(1) {
            if v > s[best] {
                best = i;
            }
        }
        best
    }
}

/// Cross-entropy loss and its analytic gradient at the given parameters over
/// pre-normalized inputs. Exposed so the gradient can be checked against
/// finite differences.
pub fn loss_and_gradient(
    weights: &[Vec<Scalar>],
    bias: &[Scalar],
    xs: &[FeatureVector],
    ys: &[usize],
    l2: Scalar,
) -> (Scalar, Vec<Vec<Scalar>>, Vec<Scalar>) {
    let c = weights.len();
    let d = weights[0].len();
    let n = xs.len() as Scalar;
    let mut loss = 0.0;
    let mut gw = vec![vec![0.0; d]; c];
    let mut gb = vec![0.0; c];
    let mut p = vec![0.0; c];
    for (x, &y) in xs.iter().zip(ys) {
        for k in 0..c {
            p[k] = bias[k]
                + weights[k]
                    .iter()
                    .zip(x)
                    .map(|(&w, &v)| w * v)
                    .sum::<Scalar>();
        }
        softmax_in_place(&mut p);
        loss -= p[y].max(1e-300).ln();
        for k in 0..c {
            let err = p[k] - if k == y { 1.0 } else { 0.0 };
            gb[k] += err / n;
            for (g, &v) in gw[k].iter_mut().zip(x) {
                *g += err * v / n;
            }
        }
    }
    loss /= n;
    // L2 on weights only, not bias.
    for k in 0..c {
        for (g, &w) in gw[k].iter_mut().zip(&weights[k]) {
            loss += 0.5 * l2 * w * w;
            *g += l2 * w;
        }
    }
    (loss, gw, gb)
}

pub fn train_classifier(
    dataset: &LabeledDataset,
    epochs: usize,
    learning_rate: Scalar,
    l2: Scalar,
    rng_seed: u64,
) -> Result<ClassifierModel> {
    dataset.validate()?;
    if dataset.distinct_label_count() < 2 {
        return Err(Error::InvalidDataset(
            "training needs at least 2 classes present".into(),
        ));
    }
    if learning_rate <= 0.0 || l2 < 0.0 || epochs == 0 {
        return Err(Error::InvalidParameter(
            "learning_rate > 0, l2 >= 0, epochs >= 1 required".into(),
        ));
    }
    let d = dataset.features[0].len();
    let c = dataset.class_labels.len();

    // Normalization statistics from the training split.
    let n = dataset.features.len() as Scalar;
    let mut mean = vec![0.0; d];
    for x in &dataset.features {
        for (m, &v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for x in &dataset.features {
        for ((s, &v), &m) in std.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in std.iter_mut() {
        *s = s.sqrt();
        // Constant features carry no signal; unit scale avoids division by 0.
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let xs: Vec<FeatureVector> = dataset
        .features
        .iter()
        .map(|x| {
            x.iter()
                .zip(&mean)
                .zip(&std)
                .map(|((&v, &m), &s)| (v - m) / s)
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut weights: Vec<Vec<Scalar>> = (0..c)
        .map(|_| (0..d).map(|_| (rng.gen::<Scalar>() - 0.5) * 0.02).collect())
        .collect();
    let mut bias = vec![0.0; c];

    let mut lr = learning_rate;
    let (mut loss, mut gw, mut gb) =
        loss_and_gradient(&weights, &bias, &xs, &dataset.labels, l2);
    let mut epochs_run = 0usize;
    for _ in 0..epochs {
        let saved_w = weights.clone();
        let saved_b = bias.clone();
        for k in 0..c {
            for (w, &g) in weights[k].iter_mut().zip(&gw[k]) {
                *w -= lr * g;
            }
            bias[k] -= lr * gb[k];
        }
        let (new_loss, new_gw, new_gb) =
            loss_and_gradient(&weights, &bias, &xs, &dataset.labels, l2);
        if new_loss > loss {
            // Overshot: revert and halve the step. Loss stays non-increasing.
            weights = saved_w;
            bias = saved_b;
            lr *= 0.5;
            if lr < 1e-12 {
                break;
            }
        } else {
            loss = new_loss;
            gw = new_gw;
            gb = new_gb;
        }
        epochs_run += 1;
    }

    Ok(ClassifierModel {
        weights,
        bias,
        class_labels: dataset.class_labels.clone(),
        feature_mean: mean,
        feature_std: std,
        final_loss: loss,
        epochs_run,
    })
}
