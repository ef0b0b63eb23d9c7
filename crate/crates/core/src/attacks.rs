//! Membership-inference attacks: the loss-threshold attack and the
//! shadow-model attack, plus balanced attack-accuracy reporting.

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::nn::{self, LossSpec, MlpSpec, ModelParams};
use crate::numerics::RngStream;
use crate::optimizer::{self, TrainingConfig};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// One labeled example of the membership binary-classification problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MembershipExample {
    /// Softmax outputs in class order.
    pub confidences: Vec<f64>,
    /// Descending-sorted copy of the confidences.
    pub sorted_confidences: Vec<f64>,
    pub loss: f64,
    pub true_class: usize,
    pub is_member: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Threshold,
    Shadow,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack_kind: AttackKind,
    pub attack_accuracy: f64,
    pub true_positive_rate: f64,
    pub false_positive_rate: f64,
    /// Chosen loss threshold (threshold attack only).
    pub threshold: Option<f64>,
    /// Number of shadow models (shadow attack only).
    pub shadow_count: Option<usize>,
    pub member_count: usize,
    pub nonmember_count: usize,
}

/// Fraction of correct binary predictions.
pub fn attack_accuracy(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptySequence);
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

fn membership_example(
    params: &ModelParams,
    spec: &MlpSpec,
    loss: &LossSpec,
    x: &[f64],
    label: usize,
    is_member: bool,
) -> Result<MembershipExample> {
    let logits = nn::forward(params, spec, x, None)?;
    let confidences = nn::softmax(&logits);
    let mut sorted = confidences.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite confidences"));
    let raw = crate::numerics::log_sum_exp(&logits)? - logits[label];
    let value = match loss.truncation_bound {
        Some(c) => raw.min(c),
        None => raw,
    };
    Ok(MembershipExample {
        confidences,
        sorted_confidences: sorted,
        loss: value,
        true_class: label,
        is_member,
    })
}

fn row_key(row: &[f64], label: usize) -> (Vec<u64>, usize) {
    (row.iter().map(|v| v.to_bits()).collect(), label)
}

/// Builds a balanced membership evaluation set by sampling `size` rows
/// from each pool without replacement and running the model in
/// evaluation mode. The pools must be disjoint.
pub fn build_membership_set(
    params: &ModelParams,
    spec: &MlpSpec,
    loss: &LossSpec,
    members: &TabularDataset,
    nonmembers: &TabularDataset,
    size: usize,
    rng: &mut RngStream,
) -> Result<Vec<MembershipExample>> {
    if size == 0 {
        return Err(Error::InvalidArgument("sample size must be >= 1".into()));
    }
    if size > members.n_rows() || size > nonmembers.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "sample size {size} exceeds pool sizes ({}, {})",
            members.n_rows(),
            nonmembers.n_rows()
        )));
    }
    let member_idx = sample_without_replacement(members.n_rows(), size, rng);
    let nonmember_idx = sample_without_replacement(nonmembers.n_rows(), size, rng);

    let member_keys: HashSet<_> = member_idx
        .iter()
        .map(|&i| row_key(members.row(i), members.labels[i]))
        .collect();
    for &i in &nonmember_idx {
        if member_keys.contains(&row_key(nonmembers.row(i), nonmembers.labels[i])) {
            return Err(Error::InvalidArgument(
                "member and nonmember pools overlap".into(),
            ));
        }
    }

    let mut out = Vec::with_capacity(2 * size);
    for &i in &member_idx {
        out.push(membership_example(
            params,
            spec,
            loss,
            members.row(i),
            members.labels[i],
            true,
        )?);
    }
    for &i in &nonmember_idx {
        out.push(membership_example(
            params,
            spec,
            loss,
            nonmembers.row(i),
            nonmembers.labels[i],
            false,
        )?);
    }
    Ok(out)
}

fn sample_without_replacement(n: usize, size: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    order.truncate(size);
    order
}

fn rates(predictions: &[bool], labels: &[bool]) -> (f64, f64) {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut p = 0usize;
    let mut n = 0usize;
    for (&pred, &label) in predictions.iter().zip(labels) {
        if label {
            p += 1;
            if pred {
                tp += 1;
            }
        } else {
            n += 1;
            if pred {
                fp += 1;
            }
        }
    }
    let tpr = if p > 0 { tp as f64 / p as f64 } else { 0.0 };
    let fpr = if n > 0 { fp as f64 / n as f64 } else { 0.0 };
    (tpr, fpr)
}

/// Loss-threshold attack: predicts member iff loss < t, with t chosen by
/// exhaustive sweep over all midpoints between consecutive sorted loss
/// values plus the two degenerate all/none thresholds. Reports the
/// maximizing (adversary-optimal) accuracy.
pub fn threshold_attack(examples: &[MembershipExample]) -> Result<AttackReport> {
    if examples.is_empty() {
        return Err(Error::EmptySequence);
    }
    let labels: Vec<bool> = examples.iter().map(|e| e.is_member).collect();
    let mut losses: Vec<f64> = examples.iter().map(|e| e.loss).collect();
    losses.sort_by(|a, b| a.partial_cmp(b).expect("finite losses"));
    losses.dedup();

    let mut candidates = vec![f64::NEG_INFINITY, f64::INFINITY];
    for pair in losses.windows(2) {
        candidates.push(0.5 * (pair[0] + pair[1]));
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite candidates"));

    let mut best_threshold = f64::NEG_INFINITY;
    let mut best_accuracy = -1.0;
    let mut best_rates = (0.0, 0.0);
    for &t in &candidates {
        let predictions: Vec<bool> = examples.iter().map(|e| e.loss < t).collect();
        let accuracy = attack_accuracy(&predictions, &labels)?;
        if accuracy > best_accuracy {
            best_accuracy = accuracy;
            best_threshold = t;
            best_rates = rates(&predictions, &labels);
        }
    }

    let member_count = labels.iter().filter(|&&l| l).count();
    Ok(AttackReport {
        attack_kind: AttackKind::Threshold,
        attack_accuracy: best_accuracy,
        true_positive_rate: best_rates.0,
        false_positive_rate: best_rates.1,
        threshold: Some(best_threshold),
        shadow_count: None,
        member_count,
        nonmember_count: labels.len() - member_count,
    })
}

/// Attack feature vector: descending-sorted confidences followed by loss.
fn attack_features(example: &MembershipExample) -> Vec<f64> {
    let mut f = example.sorted_confidences.clone();
    f.push(example.loss);
    f
}

struct LogisticPredictor {
    spec: MlpSpec,
    params: ModelParams,
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl LogisticPredictor {
    /// Full-batch gradient descent on a zero-hidden-layer network over
    /// z-scored features; deterministic from the zero initialization.
    fn fit(features: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        let d = features[0].len();
        let n = features.len() as f64;
        let mut means = vec![0.0; d];
        let mut stds = vec![0.0; d];
        for f in features {
            for (m, v) in means.iter_mut().zip(f) {
                *m += v / n;
            }
        }
        for f in features {
            for ((s, m), v) in stds.iter_mut().zip(&means).zip(f) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut stds {
            *s = s.sqrt();
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        let scaled: Vec<Vec<f64>> = features
            .iter()
            .map(|f| {
                f.iter()
                    .zip(&means)
                    .zip(&stds)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = scaled.iter().map(|f| f.as_slice()).collect();

        let spec = MlpSpec::new(vec![d, 2], 0.0)?;
        let mut params = ModelParams::zeros(&spec);
        let loss = LossSpec::default();
        for _ in 0..300 {
            let (_, grads) =
                nn::loss_and_per_example_gradients(&params, &spec, &refs, labels, &loss, None)?;
            let mut mean_grad = vec![0.0; spec.param_count()];
            for g in &grads {
                for (m, gi) in mean_grad.iter_mut().zip(g) {
                    *m += gi / n;
                }
            }
            params = optimizer::sgd_step(&params, &mean_grad, 0.5, None);
        }
        Ok(Self {
            spec,
            params,
            means,
            stds,
        })
    }

    fn predict(&self, features: &[f64]) -> Result<bool> {
        let scaled: Vec<f64> = features
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        let logits = nn::forward(&self.params, &self.spec, &scaled, None)?;
        Ok(nn::argmax_lowest(&logits) == 1)
    }
}

/// Shadow-model attack: trains `k_shadow` models on random halves of the
/// holdout split using the target's own training protocol, labels each
/// shadow's in-half as member and out-half as nonmember, fits a logistic
/// predictor over (sorted confidences, loss), and evaluates it on the
/// target's balanced membership set.
pub fn shadow_attack(
    protocol: &TrainingConfig,
    holdout: &TabularDataset,
    target_examples: &[MembershipExample],
    k_shadow: usize,
    rng: &RngStream,
) -> Result<AttackReport> {
    if k_shadow < 1 {
        return Err(Error::InvalidArgument("k_shadow must be >= 1".into()));
    }
    if holdout.n_rows() < 2 {
        return Err(Error::InvalidArgument(
            "holdout split too small for in/out halves".into(),
        ));
    }
    if target_examples.is_empty() {
        return Err(Error::EmptySequence);
    }
    let spec = protocol.mlp_spec()?;
    let loss = protocol.loss_spec();

    let mut pooled_features = Vec::new();
    let mut pooled_labels = Vec::new();
    for shadow in 0..k_shadow {
        let mut shadow_rng = rng.fork(100 + shadow as u64);
        let half = holdout.n_rows() / 2;
        let order = sample_without_replacement(holdout.n_rows(), holdout.n_rows(), &mut shadow_rng);
        let in_half = holdout.subset(&order[..half]);
        let out_half = holdout.subset(&order[half..]);

        let trained = optimizer::train(protocol, &in_half, &out_half, &shadow_rng.fork(1))?;
        for (split, is_member) in [(&in_half, true), (&out_half, false)] {
            for i in 0..split.n_rows() {
                let example = membership_example(
                    &trained.params,
                    &spec,
                    &loss,
                    split.row(i),
                    split.labels[i],
                    is_member,
                )?;
                pooled_features.push(attack_features(&example));
                pooled_labels.push(usize::from(is_member));
            }
        }
    }

    let predictor = LogisticPredictor::fit(&pooled_features, &pooled_labels)?;
    let mut predictions = Vec::with_capacity(target_examples.len());
    let labels: Vec<bool> = target_examples.iter().map(|e| e.is_member).collect();
    for example in target_examples {
        predictions.push(predictor.predict(&attack_features(example))?);
    }
    let accuracy = attack_accuracy(&predictions, &labels)?;
    let (tpr, fpr) = rates(&predictions, &labels);
    let member_count = labels.iter().filter(|&&l| l).count();
    Ok(AttackReport {
        attack_kind: AttackKind::Shadow,
        attack_accuracy: accuracy,
        true_positive_rate: tpr,
        false_positive_rate: fpr,
        threshold: None,
        shadow_count: Some(k_shadow),
        member_count,
        nonmember_count: labels.len() - member_count,
    })
}
