//! A minimal fully-connected network with manual backpropagation,
//! per-example gradients, optional inverted dropout, and an optionally
//! truncated softmax cross-entropy loss.

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, RngStream};
use serde::{Deserialize, Serialize};

/// Architecture of the MLP: layer widths (input, hidden..., output) and a
/// shared hidden-layer dropout rate (0 disables dropout).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub dropout_rate: f64,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, dropout_rate: f64) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(
                "layer widths must be >= 1 with at least input and output".into(),
            ));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {dropout_rate}"
            )));
        }
        Ok(Self {
            widths,
            dropout_rate,
        })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

}

/// Flat parameter vector with its layer shape metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub widths: Vec<usize>,
}

impl ModelParams {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
            widths: spec.widths.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Cross-entropy loss, optionally truncated at C: beyond C the loss is
/// constant and the gradient exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossSpec {
    pub truncation_bound: Option<f64>,
}

impl LossSpec {
    pub fn truncated(bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::NonpositiveParameter {
                name: "truncation_bound",
                value: bound,
            });
        }
        Ok(Self {
            truncation_bound: Some(bound),
        })
    }
}

/// Per-hidden-layer binary keep masks.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub layers: Vec<Vec<f64>>,
}

/// Initialize weights from N(0, 2/(fan_in + fan_out)), biases to zero.
pub fn init(spec: &MlpSpec, rng: &mut RngStream) -> ModelParams {
    let mut params = ModelParams::zeros(spec);
    let mut offset = 0;
    for w in spec.widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let variance = 2.0 / (fan_in + fan_out) as f64;
        for i in 0..fan_in * fan_out {
            params.values[offset + i] = rng.normal(0.0, variance);
        }
        // Biases stay zero.
        offset += (fan_in + 1) * fan_out;
    }
    params
}

/// Each hidden unit kept independently with probability 1 - rate.
pub fn dropout_mask(spec: &MlpSpec, rng: &mut RngStream) -> DropoutMask {
    let layers = spec.widths[1..spec.widths.len() - 1]
        .iter()
        .map(|&width| {
            (0..width)
                .map(|_| {
                    if rng.bernoulli(1.0 - spec.dropout_rate) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    DropoutMask { layers }
}

struct ForwardTrace {
    /// Post-activation (and post-mask) values per layer, starting at the
    /// input.
    activations: Vec<Vec<f64>>,
    /// Pre-activation values per hidden layer.
    pre_activations: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn forward_trace(
    params: &ModelParams,
    spec: &MlpSpec,
    x: &[f64],
    mask: Option<&DropoutMask>,
) -> Result<ForwardTrace> {
    if x.len() != spec.input_width() {
        return Err(Error::DimensionMismatch {
            expected: spec.input_width(),
            got: x.len(),
        });
    }
    let scale = 1.0 / (1.0 - spec.dropout_rate);
    let layers = spec.layer_count();
    let mut activations: Vec<Vec<f64>> = vec![x.to_vec()];
    let mut pre_activations = Vec::with_capacity(layers - 1);
    let mut offset = 0;
    let mut logits = Vec::new();

    for l in 0..layers {
        let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
        let weights = &params.values[offset..offset + fan_in * fan_out];
        let biases = &params.values[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
        let input = &activations[l];
        let mut z = vec![0.0; fan_out];
        for o in 0..fan_out {
            let row = &weights[o * fan_in..(o + 1) * fan_in];
            let mut acc = biases[o];
            for (wi, xi) in row.iter().zip(input) {
                acc += wi * xi;
            }
            z[o] = acc;
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Other("non-finite activation in forward pass".into()));
        }
        if l < layers - 1 {
            let mut h: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            if let Some(m) = mask {
                for (hv, mv) in h.iter_mut().zip(&m.layers[l]) {
                    *hv *= mv * scale;
                }
            }
            pre_activations.push(z);
            activations.push(h);
        } else {
            logits = z;
        }
        offset += (fan_in + 1) * fan_out;
    }

    Ok(ForwardTrace {
        activations,
        pre_activations,
        logits,
    })
}

/// Class logits for one input.
pub fn forward(
    params: &ModelParams,
    spec: &MlpSpec,
    x: &[f64],
    mask: Option<&DropoutMask>,
) -> Result<Vec<f64>> {
    Ok(forward_trace(params, spec, x, mask)?.logits)
}

/// Softmax probabilities of the logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits).expect("nonempty logits");
    logits.iter().map(|&l| (l - lse).exp()).collect()
}

/// Cross-entropy of one example, before truncation.
fn raw_loss(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits).expect("nonempty logits") - logits[label]
}

/// Per-example losses and per-example parameter gradients for a batch.
///
/// With a truncation bound C, values and gradients are those of
/// min(loss, C): zero gradient wherever the raw loss exceeds C.
pub fn loss_and_per_example_gradients(
    params: &ModelParams,
    spec: &MlpSpec,
    features: &[&[f64]],
    labels: &[usize],
    loss: &LossSpec,
    dropout_rng: Option<&mut RngStream>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if features.is_empty() {
        return Err(Error::EmptySequence);
    }
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    let mut losses = Vec::with_capacity(features.len());
    let mut gradients = Vec::with_capacity(features.len());
    let mut rng = dropout_rng;

    for (x, &y) in features.iter().zip(labels) {
        let mask = if spec.dropout_rate > 0.0 {
            match rng.as_deref_mut() {
                Some(r) => Some(dropout_mask(spec, r)),
                None => None,
            }
        } else {
            None
        };
        let trace = forward_trace(params, spec, x, mask.as_ref())?;
        let value = raw_loss(&trace.logits, y);
        let truncated = loss
            .truncation_bound
            .map(|c| value > c)
            .unwrap_or(false);
        losses.push(match loss.truncation_bound {
            Some(c) => value.min(c),
            None => value,
        });
        if truncated {
            gradients.push(vec![0.0; params.values.len()]);
            continue;
        }
        gradients.push(backward(params, spec, &trace, y, mask.as_ref()));
    }
    Ok((losses, gradients))
}

fn backward(
    params: &ModelParams,
    spec: &MlpSpec,
    trace: &ForwardTrace,
    label: usize,
    mask: Option<&DropoutMask>,
) -> Vec<f64> {
    let layers = spec.layer_count();
    let scale = 1.0 / (1.0 - spec.dropout_rate);
    let mut grad = vec![0.0; params.values.len()];

    // dL/dlogits = softmax - onehot.
    let mut delta = softmax(&trace.logits);
    delta[label] -= 1.0;

    let layer_offsets: Vec<usize> = {
        let mut offs = Vec::with_capacity(layers);
        let mut acc = 0;
        for w in spec.widths.windows(2) {
            offs.push(acc);
            acc += (w[0] + 1) * w[1];
        }
        offs
    };

    for l in (0..layers).rev() {
        let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
        let offset = layer_offsets[l];
        let input = &trace.activations[l];
        for o in 0..fan_out {
            let d = delta[o];
            let row = &mut grad[offset + o * fan_in..offset + (o + 1) * fan_in];
            for (g, xi) in row.iter_mut().zip(input) {
                *g = d * xi;
            }
        }
        for o in 0..fan_out {
            grad[offset + fan_in * fan_out + o] = delta[o];
        }
        if l == 0 {
            break;
        }
        // Propagate to the previous hidden layer.
        let weights = &params.values[offset..offset + fan_in * fan_out];
        let mut upstream = vec![0.0; fan_in];
        for o in 0..fan_out {
            let d = delta[o];
            for (i, u) in upstream.iter_mut().enumerate() {
                *u += weights[o * fan_in + i] * d;
            }
        }
        if let Some(m) = mask {
            for (u, mv) in upstream.iter_mut().zip(&m.layers[l - 1]) {
                *u *= mv * scale;
            }
        }
        let pre = &trace.pre_activations[l - 1];
        for (u, &z) in upstream.iter_mut().zip(pre) {
            if z <= 0.0 {
                *u = 0.0;
            }
        }
        delta = upstream;
    }
    grad
}

/// Split-level evaluation metrics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mean_loss: f64,
    pub accuracy: f64,
    pub max_loss: f64,
}

/// Evaluates mean loss, argmax accuracy (ties broken toward the lowest
/// class index), and the maximum per-example loss. Dropout is disabled.
pub fn evaluate(
    params: &ModelParams,
    spec: &MlpSpec,
    features: &[&[f64]],
    labels: &[usize],
    loss: &LossSpec,
) -> Result<EvalMetrics> {
    if features.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut total = 0.0;
    let mut max_loss = f64::NEG_INFINITY;
    let mut correct = 0usize;
    for (x, &y) in features.iter().zip(labels) {
        let logits = forward(params, spec, x, None)?;
        let mut value = raw_loss(&logits, y);
        if let Some(c) = loss.truncation_bound {
            value = value.min(c);
        }
        total += value;
        max_loss = max_loss.max(value);
        let pred = argmax_lowest(&logits);
        if pred == y {
            correct += 1;
        }
    }
    let n = features.len() as f64;
    Ok(EvalMetrics {
        mean_loss: total / n,
        accuracy: correct as f64 / n,
        max_loss,
    })
}

/// Verification helper: compares analytic per-example gradients against
/// central finite differences (step 1e-5) on a randomly initialized
/// network with random inputs, returning the maximum relative error.
pub fn gradient_check(widths: &[usize], cases: usize, seed: u64) -> Result<f64> {
    let spec = MlpSpec::new(widths.to_vec(), 0.0)?;
    let params = init(&spec, &mut RngStream::new(seed, 0));
    let mut rng = RngStream::new(seed, 1);
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let x: Vec<f64> = (0..spec.input_width())
            .map(|_| 2.0 * rng.uniform() - 1.0)
            .collect();
        let y = (rng.next_u64() % spec.output_width() as u64) as usize;
        let (_, grads) =
            loss_and_per_example_gradients(&params, &spec, &[&x], &[y], &LossSpec::default(), None)?;

        let mut p = params.clone();
        let scale_and_errors = {
            let mut fd = vec![0.0; p.values.len()];
            for i in 0..p.values.len() {
                let orig = p.values[i];
                p.values[i] = orig + step;
                let up = raw_loss(&forward(&p, &spec, &x, None)?, y);
                p.values[i] = orig - step;
                let down = raw_loss(&forward(&p, &spec, &x, None)?, y);
                p.values[i] = orig;
                fd[i] = (up - down) / (2.0 * step);
            }
            let scale = fd.iter().map(|g| g.abs()).fold(1e-8, f64::max);
            grads[0]
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).abs() / scale)
                .fold(0.0f64, f64::max)
        };
        worst = worst.max(scale_and_errors);
    }
    Ok(worst)
}

/// Index of the maximum entry; the lowest index wins ties.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(widths: &[usize]) -> MlpSpec {
        MlpSpec::new(widths.to_vec(), 0.0).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let s = spec(&[2, 1]);
        let a = init(&s, &mut RngStream::new(9, 0));
        let b = init(&s, &mut RngStream::new(9, 0));
        assert_eq!(a, b);
        assert_eq!(a.values.len(), 3);
        assert_eq!(a.values[2], 0.0);
    }

    #[test]
    fn init_variance_matches_fan_scaling() {
        let s = spec(&[100, 100]);
        let p = init(&s, &mut RngStream::new(11, 0));
        let weights = &p.values[..10_000];
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        let var =
            weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (weights.len() - 1) as f64;
        let want = 2.0 / 200.0;
        assert!((var - want).abs() / want < 0.05, "var {var}, want {want}");
    }

    #[test]
    fn forward_identity_layer() {
        let s = spec(&[3, 3]);
        let mut p = ModelParams::zeros(&s);
        for i in 0..3 {
            p.values[i * 3 + i] = 1.0;
        }
        let x = [0.3, -1.2, 2.0];
        let logits = forward(&p, &s, &x, None).unwrap();
        assert_eq!(logits, x.to_vec());
    }

    #[test]
    fn forward_dimension_mismatch() {
        let s = spec(&[3, 2]);
        let p = ModelParams::zeros(&s);
        assert!(matches!(
            forward(&p, &s, &[1.0, 2.0], None),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dropout_all_ones_mask_doubles_activations() {
        let s = MlpSpec::new(vec![2, 4, 2], 0.5).unwrap();
        let p = init(&s, &mut RngStream::new(5, 0));
        let mask = DropoutMask {
            layers: vec![vec![1.0; 4]],
        };
        let x = [1.0, -0.5];
        let with_mask = forward(&p, &s, &x, Some(&mask)).unwrap();
        let s0 = MlpSpec::new(vec![2, 4, 2], 0.0).unwrap();
        let without = forward(&p, &s0, &x, None).unwrap();
        // Doubling the hidden activations doubles the final affine output
        // up to the output bias, which is zero at init.
        let hidden_contrib: Vec<f64> = without.iter().map(|v| 2.0 * v).collect();
        for (a, b) in with_mask.iter().zip(&hidden_contrib) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_mask_statistics() {
        let s = MlpSpec::new(vec![1, 10_000, 2], 0.5).unwrap();
        let mask = dropout_mask(&s, &mut RngStream::new(2, 3));
        let kept: f64 = mask.layers[0].iter().sum::<f64>() / 10_000.0;
        assert!((kept - 0.5).abs() < 0.015, "kept fraction {kept}");

        let again = dropout_mask(&s, &mut RngStream::new(2, 3));
        assert_eq!(mask, again);

        let s0 = MlpSpec::new(vec![1, 16, 2], 0.0).unwrap();
        let m0 = dropout_mask(&s0, &mut RngStream::new(2, 3));
        assert!(m0.layers[0].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn uniform_logits_loss_is_log_k() {
        let s = spec(&[4, 3]);
        let p = ModelParams::zeros(&s);
        let x = [0.1, 0.2, 0.3, 0.4];
        let (losses, _) = loss_and_per_example_gradients(
            &p,
            &s,
            &[&x],
            &[1],
            &LossSpec::default(),
            None,
        )
        .unwrap();
        assert!((losses[0] - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_loss_vanishes() {
        let s = spec(&[1, 2]);
        let mut p = ModelParams::zeros(&s);
        p.values[0] = 30.0; // class 0 logit = 30 * x
        let (losses, _) = loss_and_per_example_gradients(
            &p,
            &s,
            &[&[1.0]],
            &[0],
            &LossSpec::default(),
            None,
        )
        .unwrap();
        assert!(losses[0] < 1e-12);
    }

    #[test]
    fn truncated_loss_capped_with_zero_gradient() {
        let s = spec(&[1, 2]);
        let mut p = ModelParams::zeros(&s);
        p.values[0] = 30.0;
        let loss = LossSpec::truncated(0.5).unwrap();
        // Label 1 while class 0 dominates: raw loss ~ 30, well over C.
        let (losses, grads) =
            loss_and_per_example_gradients(&p, &s, &[&[1.0]], &[1], &loss, None).unwrap();
        assert_eq!(losses[0], 0.5);
        assert!(grads[0].iter().all(|&g| g == 0.0));
    }

    /// Central finite differences, the independent gradient oracle.
    fn finite_difference_gradient(
        params: &ModelParams,
        spec: &MlpSpec,
        x: &[f64],
        y: usize,
        step: f64,
    ) -> Vec<f64> {
        let mut grad = vec![0.0; params.values.len()];
        let mut p = params.clone();
        for i in 0..p.values.len() {
            let orig = p.values[i];
            p.values[i] = orig + step;
            let up = raw_loss(&forward(&p, spec, x, None).unwrap(), y);
            p.values[i] = orig - step;
            let down = raw_loss(&forward(&p, spec, x, None).unwrap(), y);
            p.values[i] = orig;
            grad[i] = (up - down) / (2.0 * step);
        }
        grad
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let s = spec(&[4, 8, 3]);
        let p = init(&s, &mut RngStream::new(21, 0));
        let mut rng = RngStream::new(21, 1);
        for case in 0..16 {
            let x: Vec<f64> = (0..4).map(|_| 2.0 * rng.uniform() - 1.0).collect();
            let y = (rng.next_u64() % 3) as usize;
            let (_, grads) = loss_and_per_example_gradients(
                &p,
                &s,
                &[&x],
                &[y],
                &LossSpec::default(),
                None,
            )
            .unwrap();
            let fd = finite_difference_gradient(&p, &s, &x, y, 1e-5);
            let scale = fd.iter().map(|g| g.abs()).fold(1e-8, f64::max);
            for (a, b) in grads[0].iter().zip(&fd) {
                assert!(
                    (a - b).abs() / scale < 1e-5,
                    "case {case}: analytic {a} vs fd {b}"
                );
            }
        }
    }

    #[test]
    fn per_example_gradients_independent_of_batch() {
        let s = spec(&[3, 5, 2]);
        let p = init(&s, &mut RngStream::new(8, 0));
        let a = vec![0.1, 0.2, 0.3];
        let b = vec![-0.5, 0.0, 1.0];
        let loss = LossSpec::default();
        let (_, solo) =
            loss_and_per_example_gradients(&p, &s, &[&a], &[0], &loss, None).unwrap();
        let (_, joint) =
            loss_and_per_example_gradients(&p, &s, &[&b, &a], &[1, 0], &loss, None).unwrap();
        assert_eq!(solo[0], joint[1]);
    }

    #[test]
    fn evaluate_perfectly_separable() {
        let s = spec(&[1, 2]);
        let mut p = ModelParams::zeros(&s);
        p.values[0] = 5.0; // class 0 logit
        p.values[1] = -5.0; // class 1 logit
        let xs: Vec<Vec<f64>> = vec![vec![1.0], vec![-1.0], vec![2.0]];
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let m = evaluate(&p, &s, &refs, &[0, 1, 0], &LossSpec::default()).unwrap();
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn evaluate_constant_model_ties_to_lowest_class() {
        let s = spec(&[1, 2]);
        let p = ModelParams::zeros(&s);
        let xs: Vec<Vec<f64>> = vec![vec![0.5], vec![-0.5], vec![1.5], vec![2.5]];
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        // Balanced labels; constant logits always predict class 0.
        let m = evaluate(&p, &s, &refs, &[0, 1, 0, 1], &LossSpec::default()).unwrap();
        assert_eq!(m.accuracy, 0.5);
    }

    #[test]
    fn evaluate_respects_truncation_bound() {
        let s = spec(&[1, 2]);
        let mut p = ModelParams::zeros(&s);
        p.values[0] = 30.0;
        let loss = LossSpec::truncated(1.0).unwrap();
        let xs = [vec![1.0]];
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let m = evaluate(&p, &s, &refs, &[1], &loss).unwrap();
        assert!(m.max_loss <= 1.0);
    }
}
