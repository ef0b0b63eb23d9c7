//! Training mechanics: Poisson subsampling, per-example gradient clipping,
//! the noisy SGLD update with optional Gaussian prior, the plain SGD
//! baseline, and per-step ledger recording.

use crate::accountant::{default_order_grid, FormulaMode, RenyiLedger, StepRecord};
use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::nn::{self, LossSpec, MlpSpec, ModelParams};
use crate::numerics::RngStream;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sgd,
    Sgld,
}

/// Full recipe for one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub algorithm: Algorithm,
    /// Adds dropout (rate 0.5) after each hidden layer.
    pub dropout: bool,
    pub epochs: usize,
    pub batch_size: usize,
    /// Poisson sampling ratio; derived as batch_size/n when absent.
    #[serde(default)]
    pub sampling_ratio: Option<f64>,
    /// Initial step size alpha_0.
    pub alpha0: f64,
    /// Halve the step size every this many epochs; 0 disables decay.
    #[serde(default)]
    pub halving_period_epochs: usize,
    /// Gradient norm bound L.
    pub clip_bound: f64,
    /// Gaussian prior variance (SGLD only); the update gains a w/sigma^2
    /// term. Does not enter the ledger: the prior term translates both
    /// neighboring output distributions identically.
    #[serde(default)]
    pub prior_variance: Option<f64>,
    /// Truncation bound C for the loss, when set.
    #[serde(default)]
    pub loss_bound: Option<f64>,
    pub seed: u64,
    /// Layer widths including input and output.
    pub architecture: Vec<usize>,
    /// Test hook: forces the injected noise to zero so SGLD and SGD
    /// trajectories can be compared bitwise.
    #[serde(default)]
    pub force_zero_noise: bool,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.clip_bound > 0.0) {
            return Err(Error::NonpositiveParameter {
                name: "clip_bound",
                value: self.clip_bound,
            });
        }
        if !(self.alpha0 > 0.0) {
            return Err(Error::NonpositiveParameter {
                name: "alpha0",
                value: self.alpha0,
            });
        }
        if let Some(v) = self.prior_variance {
            if !(v > 0.0) {
                return Err(Error::NonpositiveParameter {
                    name: "prior_variance",
                    value: v,
                });
            }
        }
        if let Some(c) = self.loss_bound {
            if !(c > 0.0) {
                return Err(Error::NonpositiveParameter {
                    name: "loss_bound",
                    value: c,
                });
            }
        }
        if let Some(tau) = self.sampling_ratio {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "sampling_ratio must be in (0, 1], got {tau}"
                )));
            }
        }
        MlpSpec::new(self.architecture.clone(), if self.dropout { 0.5 } else { 0.0 })?;
        Ok(())
    }

    pub fn mlp_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(self.architecture.clone(), if self.dropout { 0.5 } else { 0.0 })
    }

    pub fn loss_spec(&self) -> LossSpec {
        match self.loss_bound {
            Some(c) => LossSpec::truncated(c).expect("validated bound"),
            None => LossSpec::default(),
        }
    }

    /// Step size at a given epoch under the halving schedule.
    pub fn alpha_at_epoch(&self, epoch: usize) -> f64 {
        if self.halving_period_epochs == 0 {
            self.alpha0
        } else {
            self.alpha0 * 0.5f64.powi((epoch / self.halving_period_epochs) as i32)
        }
    }

    /// Stable digest of the serialized config, stored in checkpoints.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Each index included independently with probability tau.
pub fn poisson_subsample(n: usize, tau: f64, rng: &mut RngStream) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!(
            "sampling ratio must be in [0, 1], got {tau}"
        )));
    }
    Ok((0..n).filter(|_| rng.bernoulli(tau)).collect())
}

/// Scales the gradient onto the L2 ball of radius `clip_bound`.
pub fn clip_per_example_gradient(gradient: &[f64], clip_bound: f64) -> Result<Vec<f64>> {
    if !(clip_bound > 0.0) {
        return Err(Error::NonpositiveParameter {
            name: "clip_bound",
            value: clip_bound,
        });
    }
    let norm_sq: f64 = gradient.iter().map(|g| g * g).sum();
    if !norm_sq.is_finite() {
        return Err(Error::DivergentGradient { step: 0 });
    }
    let norm = norm_sq.sqrt();
    if norm <= clip_bound {
        Ok(gradient.to_vec())
    } else {
        let scale = clip_bound / norm;
        Ok(gradient.iter().map(|g| g * scale).collect())
    }
}

fn apply_update(
    w: &ModelParams,
    mean_clipped_gradient: &[f64],
    alpha: f64,
    prior_variance: Option<f64>,
    noise: Option<&mut RngStream>,
) -> ModelParams {
    let mut out = w.clone();
    let prior_inv = prior_variance.map(|v| 1.0 / v).unwrap_or(0.0);
    match noise {
        Some(rng) => {
            let noise_std = (2.0 * alpha).sqrt();
            for (wi, g) in out.values.iter_mut().zip(mean_clipped_gradient) {
                *wi = *wi - alpha * (g + *wi * prior_inv) + noise_std * rng.standard_normal();
            }
        }
        None => {
            for (wi, g) in out.values.iter_mut().zip(mean_clipped_gradient) {
                *wi = *wi - alpha * (g + *wi * prior_inv);
            }
        }
    }
    out
}

/// One SGLD update: w' = w - alpha*(g + w/prior_variance) + eta with
/// eta ~ N(0, 2*alpha*I).
pub fn sgld_step(
    w: &ModelParams,
    mean_clipped_gradient: &[f64],
    alpha: f64,
    prior_variance: Option<f64>,
    rng: &mut RngStream,
) -> ModelParams {
    apply_update(w, mean_clipped_gradient, alpha, prior_variance, Some(rng))
}

/// The SGLD update with eta forced to zero.
pub fn sgd_step(
    w: &ModelParams,
    mean_clipped_gradient: &[f64],
    alpha: f64,
    prior_variance: Option<f64>,
) -> ModelParams {
    apply_update(w, mean_clipped_gradient, alpha, prior_variance, None)
}

/// One row of the per-epoch metrics history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub alpha: f64,
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["epoch", "split", "loss", "accuracy", "alpha"])?;
    for row in rows {
        writer.write_record([
            row.epoch.to_string(),
            row.split.clone(),
            format!("{:?}", row.loss),
            format!("{:?}", row.accuracy),
            format!("{:?}", row.alpha),
        ])?;
    }
    writer.flush().map_err(Error::Io)?;
    Ok(())
}

/// Trained parameters plus the run's privacy ledger and metrics history.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub ledger: RenyiLedger,
    pub history: Vec<MetricsRow>,
    pub spec: MlpSpec,
}

/// Runs the full training loop. One epoch is ceil(1/tau) Poisson-subsampled
/// steps; each step averages clipped per-example gradients with the fixed
/// divisor beta = 1/(tau*n). Deterministic given (config, rng).
pub fn train(
    config: &TrainingConfig,
    train_set: &TabularDataset,
    validation_set: &TabularDataset,
    rng: &RngStream,
) -> Result<TrainOutput> {
    config.validate()?;
    let n = train_set.n_rows();
    if n == 0 {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let spec = config.mlp_spec()?;
    if spec.input_width() != train_set.n_cols {
        return Err(Error::DimensionMismatch {
            expected: spec.input_width(),
            got: train_set.n_cols,
        });
    }
    let loss = config.loss_spec();
    let tau = config
        .sampling_ratio
        .unwrap_or(config.batch_size as f64 / n as f64)
        .min(1.0);
    let beta = 1.0 / (tau * n as f64);
    let steps_per_epoch = (1.0 / tau).ceil() as usize;

    let mut init_rng = rng.fork(1);
    let mut sample_rng = rng.fork(2);
    let mut noise_rng = rng.fork(3);
    let mut dropout_rng = rng.fork(4);

    let mut params = nn::init(&spec, &mut init_rng);
    let mut ledger = RenyiLedger::new(n, default_order_grid(), FormulaMode::Theorem1)?;
    let mut history = Vec::new();

    let train_rows = train_set.feature_refs();
    let val_rows = validation_set.feature_refs();

    let mut step_index = 0usize;
    for epoch in 0..config.epochs {
        let alpha = config.alpha_at_epoch(epoch);
        for _ in 0..steps_per_epoch {
            let batch = poisson_subsample(n, tau, &mut sample_rng)?;
            let mut mean_grad = vec![0.0; spec.param_count()];
            if !batch.is_empty() {
                let features: Vec<&[f64]> = batch.iter().map(|&i| train_rows[i]).collect();
                let labels: Vec<usize> = batch.iter().map(|&i| train_set.labels[i]).collect();
                let rng_arg = if config.dropout {
                    Some(&mut dropout_rng)
                } else {
                    None
                };
                let (losses, grads) =
                    nn::loss_and_per_example_gradients(&params, &spec, &features, &labels, &loss, rng_arg)?;
                if losses.iter().any(|l| !l.is_finite()) {
                    return Err(Error::NonFiniteLoss { step: step_index });
                }
                for grad in &grads {
                    let clipped = clip_per_example_gradient(grad, config.clip_bound)
                        .map_err(|_| Error::DivergentGradient { step: step_index })?;
                    debug_assert!(
                        clipped.iter().map(|g| g * g).sum::<f64>().sqrt()
                            <= config.clip_bound * (1.0 + 1e-12)
                    );
                    for (m, g) in mean_grad.iter_mut().zip(&clipped) {
                        *m += g * beta;
                    }
                }
            }
            params = match config.algorithm {
                Algorithm::Sgld if !config.force_zero_noise => {
                    sgld_step(&params, &mean_grad, alpha, config.prior_variance, &mut noise_rng)
                }
                Algorithm::Sgld => sgd_step(&params, &mean_grad, alpha, config.prior_variance),
                Algorithm::Sgd => sgd_step(&params, &mean_grad, alpha, config.prior_variance),
            };
            if !params.is_finite() {
                return Err(Error::NonFiniteLoss { step: step_index });
            }
            if config.algorithm == Algorithm::Sgld {
                ledger.append_step(StepRecord::new(
                    step_index,
                    alpha,
                    tau,
                    config.clip_bound,
                    n,
                )?)?;
            }
            step_index += 1;
        }

        let train_eval = nn::evaluate(&params, &spec, &train_rows, &train_set.labels, &loss)?;
        history.push(MetricsRow {
            epoch,
            split: "train".into(),
            loss: train_eval.mean_loss,
            accuracy: train_eval.accuracy,
            alpha,
        });
        if !val_rows.is_empty() {
            let val_eval =
                nn::evaluate(&params, &spec, &val_rows, &validation_set.labels, &loss)?;
            history.push(MetricsRow {
                epoch,
                split: "validation".into(),
                loss: val_eval.mean_loss,
                accuracy: val_eval.accuracy,
                alpha,
            });
        }
    }

    Ok(TrainOutput {
        params,
        ledger,
        history,
        spec,
    })
}

/// Checkpoint container: architecture, flat parameters, config digest, seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub architecture: Vec<usize>,
    pub parameters: Vec<f64>,
    pub config_digest: String,
    pub seed: u64,
}

pub fn save_checkpoint(params: &ModelParams, config: &TrainingConfig, path: &Path) -> Result<()> {
    let checkpoint = Checkpoint {
        architecture: config.architecture.clone(),
        parameters: params.values.clone(),
        config_digest: config.digest(),
        seed: config.seed,
    };
    std::fs::write(path, serde_json::to_string_pretty(&checkpoint)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accountant::theorem1_total;
    use crate::data::synthetic;

    fn base_config() -> TrainingConfig {
        TrainingConfig {
            algorithm: Algorithm::Sgld,
            dropout: false,
            epochs: 2,
            batch_size: 8,
            sampling_ratio: None,
            alpha0: 0.01,
            halving_period_epochs: 0,
            clip_bound: 1.0,
            prior_variance: None,
            loss_bound: None,
            seed: 11,
            architecture: vec![3, 6, 2],
            force_zero_noise: false,
        }
    }

    #[test]
    fn poisson_subsample_degenerate_ratios() {
        let mut rng = RngStream::new(1, 0);
        assert!(poisson_subsample(100, 0.0, &mut rng).unwrap().is_empty());
        assert_eq!(
            poisson_subsample(100, 1.0, &mut rng).unwrap(),
            (0..100).collect::<Vec<_>>()
        );
        assert!(poisson_subsample(10, 1.5, &mut rng).is_err());
    }

    #[test]
    fn poisson_subsample_mean_batch_size() {
        let mut rng = RngStream::new(2, 0);
        let (n, tau, draws) = (10_000usize, 0.1, 1_000usize);
        let mut total = 0usize;
        for _ in 0..draws {
            total += poisson_subsample(n, tau, &mut rng).unwrap().len();
        }
        let mean = total as f64 / draws as f64;
        let se = (n as f64 * tau * (1.0 - tau) / draws as f64).sqrt();
        assert!(
            (mean - n as f64 * tau).abs() <= 3.0 * se,
            "mean {mean} outside 3 SE of {}",
            n as f64 * tau
        );
    }

    #[test]
    fn clipping_examples() {
        let g = vec![0.3, 0.4];
        assert_eq!(clip_per_example_gradient(&g, 1.0).unwrap(), g);
        let clipped = clip_per_example_gradient(&[3.0, 4.0], 1.0).unwrap();
        assert!((clipped[0] - 0.6).abs() < 1e-15);
        assert!((clipped[1] - 0.8).abs() < 1e-15);
        assert_eq!(clip_per_example_gradient(&[0.0, 0.0], 1.0).unwrap(), vec![0.0, 0.0]);
        assert!(clip_per_example_gradient(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn sgld_step_zero_alpha_is_identity() {
        let spec = MlpSpec::new(vec![2, 2], 0.0).unwrap();
        let mut rng = RngStream::new(3, 0);
        let w = nn::init(&spec, &mut rng);
        let grad = vec![1.0; w.values.len()];
        let w2 = sgld_step(&w, &grad, 0.0, None, &mut rng);
        assert_eq!(w.values, w2.values);
    }

    #[test]
    fn sgld_noise_variance_matches_two_alpha() {
        let spec = MlpSpec::new(vec![1, 1], 0.0).unwrap();
        let w = ModelParams::zeros(&spec);
        let alpha = 0.03;
        let mut rng = RngStream::new(5, 0);
        let draws = 100_000usize;
        let grad = vec![0.0; w.values.len()];
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let w2 = sgld_step(&w, &grad, alpha, None, &mut rng);
            let d = w2.values[0];
            sum += d;
            sum_sq += d * d;
        }
        let mean = sum / draws as f64;
        let var = sum_sq / draws as f64 - mean * mean;
        // Sample variance of N(0, v) has standard error v*sqrt(2/(n-1)).
        let target = 2.0 * alpha;
        let se = target * (2.0 / (draws as f64 - 1.0)).sqrt();
        assert!(
            (var - target).abs() <= 3.0 * se,
            "variance {var} outside 3 SE of {target}"
        );
    }

    #[test]
    fn prior_decay_with_zero_noise() {
        let spec = MlpSpec::new(vec![2, 2], 0.0).unwrap();
        let mut rng = RngStream::new(7, 0);
        let w = nn::init(&spec, &mut rng);
        let grad = vec![0.0; w.values.len()];
        let alpha = 0.25;
        let w2 = sgd_step(&w, &grad, alpha, Some(1.0));
        for (a, b) in w.values.iter().zip(&w2.values) {
            assert!((b - (1.0 - alpha) * a).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_converges_on_quadratic() {
        // Minimize (w-3)^2/2 from w = 0 with alpha = 0.5.
        let spec = MlpSpec::new(vec![1, 1], 0.0).unwrap();
        let mut w = ModelParams::zeros(&spec);
        for _ in 0..50 {
            let g = vec![w.values[0] - 3.0, 0.0];
            w = sgd_step(&w, &g, 0.5, None);
        }
        assert!((w.values[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn zero_epochs_returns_init_and_empty_ledger() {
        let ds = synthetic(32, 3, 2.0, 1).unwrap();
        let mut config = base_config();
        config.epochs = 0;
        let rng = RngStream::new(config.seed, 0);
        let out = train(&config, &ds, &ds, &rng).unwrap();
        assert!(out.ledger.steps.is_empty());
        assert!(out.history.is_empty());
        let mut init_rng = rng.fork(1);
        let expected = nn::init(&out.spec, &mut init_rng);
        assert_eq!(out.params.values, expected.values);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = synthetic(48, 3, 2.0, 2).unwrap();
        let config = base_config();
        let a = train(&config, &ds, &ds, &RngStream::new(config.seed, 0)).unwrap();
        let b = train(&config, &ds, &ds, &RngStream::new(config.seed, 0)).unwrap();
        assert_eq!(a.params.values, b.params.values);
        assert_eq!(
            serde_json::to_string(&a.history).unwrap(),
            serde_json::to_string(&b.history).unwrap()
        );
        assert_eq!(a.ledger.totals, b.ledger.totals);
    }

    #[test]
    fn ledger_length_and_identity_with_theorem_total() {
        let ds = synthetic(40, 3, 2.0, 3).unwrap();
        let mut config = base_config();
        config.epochs = 3;
        config.batch_size = 8;
        let out = train(&config, &ds, &ds, &RngStream::new(config.seed, 0)).unwrap();
        let tau: f64 = 8.0 / 40.0;
        let steps_per_epoch = (1.0 / tau).ceil() as usize;
        assert_eq!(out.ledger.steps.len(), config.epochs * steps_per_epoch);

        let alphas = out.ledger.alpha_schedule();
        for (i, order) in out.ledger.order_grid.iter().enumerate() {
            let expected =
                theorem1_total(*order, config.clip_bound, ds.n_rows(), &alphas).unwrap();
            let got = out.ledger.totals[i];
            assert!(
                (got - expected).abs() <= 1e-12 * expected.abs().max(1.0),
                "ledger total mismatch at order {}",
                order.value()
            );
        }
    }

    #[test]
    fn sgld_with_zero_noise_matches_sgd_bitwise() {
        let ds = synthetic(40, 3, 2.0, 4).unwrap();
        let mut sgld_cfg = base_config();
        sgld_cfg.force_zero_noise = true;
        let mut sgd_cfg = sgld_cfg.clone();
        sgd_cfg.algorithm = Algorithm::Sgd;
        let a = train(&sgld_cfg, &ds, &ds, &RngStream::new(9, 0)).unwrap();
        let b = train(&sgd_cfg, &ds, &ds, &RngStream::new(9, 0)).unwrap();
        assert_eq!(a.params.values, b.params.values);
    }

    #[test]
    fn alpha_halving_schedule() {
        let mut config = base_config();
        config.alpha0 = 1e-3;
        config.halving_period_epochs = 5;
        assert_eq!(config.alpha_at_epoch(0), 1e-3);
        assert_eq!(config.alpha_at_epoch(4), 1e-3);
        assert_eq!(config.alpha_at_epoch(5), 5e-4);
        assert_eq!(config.alpha_at_epoch(14), 2.5e-4);
    }

    #[test]
    fn sgd_overfits_train_split() {
        // Direction check: with a long enough plain-SGD run the final
        // train accuracy exceeds validation accuracy.
        let ds = synthetic(240, 4, 1.0, 6).unwrap();
        let train_ds = ds.subset(&(0..80).collect::<Vec<_>>());
        let val_ds = ds.subset(&(80..160).collect::<Vec<_>>());
        let config = TrainingConfig {
            algorithm: Algorithm::Sgd,
            dropout: false,
            epochs: 60,
            batch_size: 16,
            sampling_ratio: None,
            alpha0: 0.3,
            halving_period_epochs: 25,
            clip_bound: 4.0,
            prior_variance: None,
            loss_bound: None,
            seed: 21,
            architecture: vec![4, 16, 8, 2],
            force_zero_noise: false,
        };
        let out = train(&config, &train_ds, &val_ds, &RngStream::new(config.seed, 0)).unwrap();
        let last_train = out
            .history
            .iter()
            .rev()
            .find(|r| r.split == "train")
            .unwrap();
        let last_val = out
            .history
            .iter()
            .rev()
            .find(|r| r.split == "validation")
            .unwrap();
        assert!(
            last_train.accuracy > last_val.accuracy,
            "train {} <= validation {}",
            last_train.accuracy,
            last_val.accuracy
        );
    }

    #[test]
    fn checkpoint_round_trip_and_metrics_csv() {
        let ds = synthetic(32, 3, 2.0, 8).unwrap();
        let config = base_config();
        let out = train(&config, &ds, &ds, &RngStream::new(config.seed, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let ckpt_path = dir.path().join("model.json");
        save_checkpoint(&out.params, &config, &ckpt_path).unwrap();
        let back = load_checkpoint(&ckpt_path).unwrap();
        assert_eq!(back.parameters, out.params.values);
        assert_eq!(back.architecture, config.architecture);
        assert_eq!(back.config_digest, config.digest());
        assert_eq!(back.seed, config.seed);

        let csv_path = dir.path().join("metrics.csv");
        write_metrics_csv(&out.history, &csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,split,loss,accuracy,alpha");
        assert_eq!(lines.count(), out.history.len());
    }
}
