//! Experiment orchestration behind the command-line interface: dataset
//! resolution, per-strategy training presets, attack evaluation,
//! comparison tables, and the verification suites.

use crate::accountant::{
    subsampled_gaussian_renyi, validity_check, FormulaMode, RenyiLedger, RenyiOrder, StepRecord,
};
use crate::attacks::{self, AttackKind, AttackReport};
use crate::data::{self, Schema, SplitSpec, Splits};
use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::{QuadratureSpec, RngStream};
use crate::optimizer::{self, Algorithm, TrainingConfig};
use crate::oracle::{self, CheckResult, Density1D, SuiteReport};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Environment variable naming the directory that holds real dataset
/// CSV files and their schema sidecars.
pub const DATA_DIR_ENV: &str = "SGLD_LAB_DATA_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Sgd,
    Dropout,
    Sgld,
}

impl Strategy {
    pub fn id(self) -> &'static str {
        match self {
            Strategy::Sgd => "sgd",
            Strategy::Dropout => "dropout",
            Strategy::Sgld => "sgld",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Strategy::Sgd),
            "dropout" => Ok(Strategy::Dropout),
            "sgld" => Ok(Strategy::Sgld),
            other => Err(Error::InvalidArgument(format!(
                "unknown strategy '{other}' (expected sgd, dropout, or sgld)"
            ))),
        }
    }
}

/// One full comparison experiment: which dataset, strategies, seeds, and
/// attacks to run, and where to write the outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: String,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_attacks")]
    pub attacks: Vec<AttackKind>,
    pub output_dir: PathBuf,
    #[serde(default = "default_shadow_count")]
    pub shadow_count: usize,
    /// Per-pool membership sample size; defaults to the largest balanced
    /// size the splits allow, capped at 300.
    #[serde(default)]
    pub attack_sample_size: Option<usize>,
}

fn default_attacks() -> Vec<AttackKind> {
    vec![AttackKind::Threshold]
}

fn default_shadow_count() -> usize {
    8
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::InvalidArgument(
                "experiment needs at least one strategy".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument(
                "experiment needs at least one seed".into(),
            ));
        }
        if self.attacks.is_empty() {
            return Err(Error::InvalidArgument(
                "experiment needs at least one attack kind".into(),
            ));
        }
        if self.shadow_count < 1 {
            return Err(Error::InvalidArgument("shadow_count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A resolved dataset with its three splits.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub id: String,
    pub splits: Splits,
    pub note: Option<String>,
}

pub fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

fn split_sizes(id: &str) -> (usize, usize, usize) {
    match id {
        "german-credit" | "german-credit-surrogate" => (400, 300, 300),
        "uci-adult" => (4000, 3000, 3000),
        _ => (300, 300, 300),
    }
}

fn encode_and_split(
    table: &data::RawTable,
    schema: &Schema,
    sizes: (usize, usize, usize),
    split_seed: u64,
) -> Result<Splits> {
    let (train, holdout, test) = sizes;
    if train + holdout + test > table.n_rows {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} rows, need {}",
            table.n_rows,
            train + holdout + test
        )));
    }
    // The encoder (one-hot categories, z-score statistics) is fitted on
    // the train split only.
    let order = data::split_permutation(table.n_rows, split_seed);
    let dataset = data::encode(table, &order[..train], schema)?;
    data::split(
        &dataset,
        &SplitSpec {
            train,
            holdout,
            test,
            seed: split_seed,
        },
    )
}

fn load_real_dataset(id: &str, split_seed: u64) -> Result<DatasetBundle> {
    let dir = data_dir().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "dataset '{id}' needs {DATA_DIR_ENV} to point at a directory containing \
             {id}.csv and {id}.schema.json; for a built-in stand-in use \
             'german-credit-surrogate' or 'synthetic'"
        ))
    })?;
    let csv_path = dir.join(format!("{id}.csv"));
    let schema_path = dir.join(format!("{id}.schema.json"));
    if !csv_path.exists() || !schema_path.exists() {
        return Err(Error::InvalidArgument(format!(
            "missing {} or {} under {DATA_DIR_ENV}; for a built-in stand-in use \
             'german-credit-surrogate' or 'synthetic'",
            csv_path.display(),
            schema_path.display()
        )));
    }
    let schema = Schema::from_json_file(&schema_path)?;
    let table = data::load_csv(&csv_path, &schema)?;
    let splits = encode_and_split(&table, &schema, split_sizes(id), split_seed)?;
    Ok(DatasetBundle {
        id: id.to_string(),
        splits,
        note: None,
    })
}

/// Resolves a dataset identifier into encoded train/holdout/test splits.
/// `german-credit` and `uci-adult` load CSV files from the data
/// directory; `german-credit-surrogate` and `synthetic` are built in.
pub fn resolve_dataset(id: &str, split_seed: u64) -> Result<DatasetBundle> {
    match id {
        "german-credit" | "uci-adult" => load_real_dataset(id, split_seed),
        "german-credit-surrogate" => {
            let (table, schema) = data::credit_surrogate_table(977);
            let splits = encode_and_split(&table, &schema, split_sizes(id), split_seed)?;
            Ok(DatasetBundle {
                id: id.to_string(),
                splits,
                note: Some(
                    "built-in credit-shaped surrogate data; not the real German Credit records"
                        .to_string(),
                ),
            })
        }
        "synthetic" => {
            let dataset = data::synthetic(900, 8, 1.2, 977)?;
            let (train, holdout, test) = split_sizes(id);
            let splits = data::split(
                &dataset,
                &SplitSpec {
                    train,
                    holdout,
                    test,
                    seed: split_seed,
                },
            )?;
            Ok(DatasetBundle {
                id: id.to_string(),
                splits,
                note: Some("two-Gaussian-blob synthetic classification task".to_string()),
            })
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown dataset '{other}' (expected german-credit, german-credit-surrogate, \
             uci-adult, or synthetic)"
        ))),
    }
}

/// Per-dataset, per-strategy training recipe.
pub fn preset_config(dataset: &str, strategy: Strategy, seed: u64, input_width: usize) -> TrainingConfig {
    let (algorithm, dropout) = match strategy {
        Strategy::Sgd => (Algorithm::Sgd, false),
        Strategy::Dropout => (Algorithm::Sgd, true),
        Strategy::Sgld => (Algorithm::Sgld, false),
    };
    let mut config = match dataset {
        "uci-adult" => TrainingConfig {
            algorithm,
            dropout,
            epochs: 100,
            batch_size: 64,
            sampling_ratio: None,
            alpha0: 0.1,
            halving_period_epochs: 20,
            clip_bound: 10.0,
            prior_variance: None,
            loss_bound: None,
            seed,
            architecture: vec![input_width, 32, 16, 2],
            force_zero_noise: false,
        },
        "synthetic" => TrainingConfig {
            algorithm,
            dropout,
            epochs: 30,
            batch_size: 32,
            sampling_ratio: None,
            alpha0: 0.3,
            halving_period_epochs: 10,
            clip_bound: 10.0,
            prior_variance: None,
            loss_bound: None,
            seed,
            architecture: vec![input_width, 16, 2],
            force_zero_noise: false,
        },
        // german-credit and its surrogate.
        _ => TrainingConfig {
            algorithm,
            dropout,
            epochs: 60,
            batch_size: 32,
            sampling_ratio: None,
            alpha0: 0.3,
            halving_period_epochs: 20,
            clip_bound: 10.0,
            prior_variance: None,
            loss_bound: None,
            seed,
            architecture: vec![input_width, 32, 16, 2],
            force_zero_noise: false,
        },
    };
    if strategy == Strategy::Sgld {
        // The privacy analysis needs a tight gradient bound; the noisy
        // dynamics need a smaller step and benefit from a prior.
        config.clip_bound = 1.0;
        config.prior_variance = Some(1.0);
        config.alpha0 = 0.02;
        config.halving_period_epochs = 20;
    }
    config
}

/// Outcome of one (strategy, seed) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub seed: u64,
    pub status: String,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub accuracy_gap: Option<f64>,
    /// Attack accuracy keyed by attack kind id.
    pub attack_accuracy: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub completed_runs: usize,
    pub mean_test_accuracy: Option<f64>,
    pub mean_accuracy_gap: Option<f64>,
    pub mean_attack_accuracy: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub dataset_note: Option<String>,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<StrategySummary>,
    pub failed: bool,
}

fn attack_kind_id(kind: AttackKind) -> &'static str {
    match kind {
        AttackKind::Threshold => "threshold",
        AttackKind::Shadow => "shadow",
    }
}

fn run_one(
    spec: &ExperimentSpec,
    strategy: Strategy,
    seed: u64,
) -> Result<(RunRecord, Vec<AttackReport>)> {
    let bundle = resolve_dataset(&spec.dataset, seed)?;
    let splits = &bundle.splits;
    let config = preset_config(&spec.dataset, strategy, seed, splits.train.n_cols);
    let trained = optimizer::train(
        &config,
        &splits.train,
        &splits.test,
        &RngStream::new(seed, 0),
    )?;
    let loss = config.loss_spec();
    let train_refs = splits.train.feature_refs();
    let test_refs = splits.test.feature_refs();
    let train_eval = nn::evaluate(
        &trained.params,
        &trained.spec,
        &train_refs,
        &splits.train.labels,
        &loss,
    )?;
    let test_eval = nn::evaluate(
        &trained.params,
        &trained.spec,
        &test_refs,
        &splits.test.labels,
        &loss,
    )?;

    let sample_size = spec
        .attack_sample_size
        .unwrap_or_else(|| splits.train.n_rows().min(splits.test.n_rows()).min(300));
    let examples = attacks::build_membership_set(
        &trained.params,
        &trained.spec,
        &loss,
        &splits.train,
        &splits.test,
        sample_size,
        &mut RngStream::new(seed, 10),
    )?;

    let mut attack_accuracy = BTreeMap::new();
    let mut reports = Vec::new();
    for &kind in &spec.attacks {
        let report = match kind {
            AttackKind::Threshold => attacks::threshold_attack(&examples)?,
            AttackKind::Shadow => attacks::shadow_attack(
                &config,
                &splits.holdout,
                &examples,
                spec.shadow_count,
                &RngStream::new(seed, 20),
            )?,
        };
        attack_accuracy.insert(attack_kind_id(kind).to_string(), report.attack_accuracy);
        reports.push(report);
    }

    Ok((
        RunRecord {
            strategy,
            seed,
            status: "ok".to_string(),
            train_accuracy: Some(train_eval.accuracy),
            test_accuracy: Some(test_eval.accuracy),
            accuracy_gap: Some(train_eval.accuracy - test_eval.accuracy),
            attack_accuracy,
        },
        reports,
    ))
}

/// Runs every (strategy, seed) pair and aggregates per-strategy means.
/// Individual run failures are recorded in the table rather than
/// aborting the whole experiment; `failed` is set when any run failed.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let dataset_note = resolve_dataset(&spec.dataset, spec.seeds[0])?.note;

    let mut runs = Vec::new();
    let mut failed = false;
    for &strategy in &spec.strategies {
        for &seed in &spec.seeds {
            match run_one(spec, strategy, seed) {
                Ok((record, _)) => runs.push(record),
                Err(e) => {
                    failed = true;
                    runs.push(RunRecord {
                        strategy,
                        seed,
                        status: format!("failed: {e}"),
                        train_accuracy: None,
                        test_accuracy: None,
                        accuracy_gap: None,
                        attack_accuracy: BTreeMap::new(),
                    });
                }
            }
        }
    }

    let mut summary = Vec::new();
    for &strategy in &spec.strategies {
        let ok_runs: Vec<&RunRecord> = runs
            .iter()
            .filter(|r| r.strategy == strategy && r.status == "ok")
            .collect();
        let count = ok_runs.len();
        let mean = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Option<f64> {
            if count == 0 {
                return None;
            }
            let total: f64 = ok_runs.iter().filter_map(|r| f(r)).sum();
            Some(total / count as f64)
        };
        let mut mean_attack = BTreeMap::new();
        for &kind in &spec.attacks {
            let id = attack_kind_id(kind);
            if count > 0 {
                let total: f64 = ok_runs
                    .iter()
                    .filter_map(|r| r.attack_accuracy.get(id))
                    .sum();
                mean_attack.insert(id.to_string(), total / count as f64);
            }
        }
        summary.push(StrategySummary {
            strategy,
            completed_runs: count,
            mean_test_accuracy: mean(&|r| r.test_accuracy),
            mean_accuracy_gap: mean(&|r| r.accuracy_gap),
            mean_attack_accuracy: mean_attack,
        });
    }

    Ok(ExperimentReport {
        spec: spec.clone(),
        dataset_note,
        runs,
        summary,
        failed,
    })
}

/// Six significant digits, for human-facing tables.
pub fn sig6(value: f64) -> String {
    if value == 0.0 {
        return "0.00000".to_string();
    }
    format!("{value:.5e}")
}

fn sig6_opt(value: Option<f64>) -> String {
    value.map(sig6).unwrap_or_else(|| "failed".to_string())
}

/// Writes `table.csv` (per-strategy means, 6 significant digits) and
/// `report.json` (full precision) into the output directory.
pub fn write_experiment_outputs(report: &ExperimentReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let json_path = dir.join("report.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(report)?)?;

    let csv_path = dir.join("table.csv");
    let mut writer = csv::Writer::from_path(&csv_path)?;
    let mut header = vec!["strategy".to_string()];
    for &kind in &report.spec.attacks {
        header.push(format!("attack_{}", attack_kind_id(kind)));
    }
    header.push("model".to_string());
    header.push("gap".to_string());
    writer.write_record(&header)?;
    for s in &report.summary {
        let mut row = vec![s.strategy.id().to_string()];
        for &kind in &report.spec.attacks {
            row.push(sig6_opt(
                s.mean_attack_accuracy.get(attack_kind_id(kind)).copied(),
            ));
        }
        row.push(sig6_opt(s.mean_test_accuracy));
        row.push(sig6_opt(s.mean_accuracy_gap));
        writer.write_record(&row)?;
    }
    writer.flush().map_err(Error::Io)?;
    Ok((csv_path, json_path))
}

/// Builds a ledger from a constant-or-explicit step-size schedule.
pub fn build_ledger(
    order_grid: Vec<RenyiOrder>,
    alphas: &[f64],
    tau: f64,
    clip_bound: f64,
    dataset_size: usize,
    mode: FormulaMode,
) -> Result<RenyiLedger> {
    let mut ledger = RenyiLedger::new(dataset_size, order_grid, mode)?;
    for (i, &alpha) in alphas.iter().enumerate() {
        ledger.append_step(StepRecord::new(i, alpha, tau, clip_bound, dataset_size)?)?;
    }
    Ok(ledger)
}

/// Inequality-chain verification on the shipped grid: quadrature oracle
/// <= binomial-sum formula, formula <= simplified bound where the
/// validity regime holds, and the order-2 closed form.
pub fn accountant_suite() -> Result<SuiteReport> {
    let spec = QuadratureSpec::default();
    let mut checks = Vec::new();
    for &tau in &[0.001, 0.01, 0.1] {
        for &sigma_sq in &[0.6, 1.0, 2.0, 4.0] {
            let p = Density1D::two_component(0.0, 1.0, sigma_sq, tau)?;
            let q = Density1D::gaussian(0.0, sigma_sq)?;
            for lambda in 2u32..=32 {
                let formula = subsampled_gaussian_renyi(lambda, tau, sigma_sq)?;
                let quad = oracle::renyi_quadrature(lambda as f64, &p, &q, &spec)?;
                checks.push(CheckResult::le(
                    format!("oracle<=formula tau={tau} s2={sigma_sq} l={lambda}"),
                    quad.value,
                    formula,
                    quad.error + 1e-9 * formula.abs().max(1e-12),
                ));
                let order = RenyiOrder::new(lambda as f64)?;
                let validity = validity_check(order, tau, sigma_sq);
                if validity.valid {
                    let simplified = 2.0 * lambda as f64 * tau * tau / sigma_sq;
                    checks.push(CheckResult::le(
                        format!("formula<=simplified tau={tau} s2={sigma_sq} l={lambda}"),
                        formula,
                        simplified,
                        1e-12 * simplified,
                    ));
                }
            }
            // Order-2 closed form: log(1 + tau^2 (e^{1/sigma^2} - 1)).
            let closed = (tau * tau * ((1.0 / sigma_sq).exp() - 1.0)).ln_1p();
            let formula2 = subsampled_gaussian_renyi(2, tau, sigma_sq)?;
            checks.push(CheckResult::close(
                format!("order-2 closed form tau={tau} s2={sigma_sq}"),
                formula2,
                closed,
                1e-12 * closed.abs().max(1e-300),
            ));
        }
    }
    Ok(SuiteReport::new("accountant", checks))
}

/// Finite-difference gradient verification on the two reference
/// architectures.
pub fn gradients_suite() -> Result<SuiteReport> {
    let mut checks = Vec::new();
    for (widths, seed) in [(vec![4usize, 8, 3], 101u64), (vec![24, 32, 16, 2], 103)] {
        let err = nn::gradient_check(&widths, 8, seed)?;
        checks.push(CheckResult::le(
            format!("finite-difference max relative error {widths:?}"),
            err,
            1e-5,
            0.0,
        ));
    }
    Ok(SuiteReport::new("gradients", checks))
}

/// Monte-Carlo check that the per-coordinate update variance of
/// zero-gradient SGLD steps is 2*alpha.
pub fn noise_suite() -> Result<SuiteReport> {
    let spec = nn::MlpSpec::new(vec![1, 1], 0.0)?;
    let w = nn::ModelParams::zeros(&spec);
    let alpha = 0.05;
    let grad = vec![0.0; w.values.len()];
    let mut rng = RngStream::new(0x401_5e, 0);
    let draws = 100_000usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..draws {
        let stepped = optimizer::sgld_step(&w, &grad, alpha, None, &mut rng);
        let d = stepped.values[0];
        sum += d;
        sum_sq += d * d;
    }
    let mean = sum / draws as f64;
    let var = sum_sq / draws as f64 - mean * mean;
    let target = 2.0 * alpha;
    // Standard error of the sample variance of a Gaussian.
    let se = target * (2.0 / (draws as f64 - 1.0)).sqrt();
    let checks = vec![CheckResult::close(
        format!("update variance over {draws} zero-gradient steps vs 2*alpha"),
        var,
        target,
        3.0 * se,
    )];
    Ok(SuiteReport::new("noise", checks))
}

/// Runs the named verification suite ("all" runs every suite).
pub fn verify(suite: &str) -> Result<Vec<SuiteReport>> {
    match suite {
        "accountant" => Ok(vec![accountant_suite()?]),
        "gradients" => Ok(vec![gradients_suite()?]),
        "noise" => Ok(vec![noise_suite()?]),
        "invariances" => Ok(vec![oracle::invariance_suite()?]),
        "all" => Ok(vec![
            accountant_suite()?,
            gradients_suite()?,
            noise_suite()?,
            oracle::invariance_suite()?,
        ]),
        other => Err(Error::InvalidArgument(format!(
            "unknown suite '{other}' (expected accountant, gradients, noise, invariances, or all)"
        ))),
    }
}
