//! Command-line interface: privacy accounting, generalization bounds,
//! training, membership attacks, verification suites, and full
//! comparison experiments.

use clap::{Args, Parser, Subcommand};
use sgld_lab::accountant::{default_order_grid, FormulaMode, RenyiOrder};
use sgld_lab::attacks::{self, AttackKind};
use sgld_lab::bounds::{self, BoundInputs};
use sgld_lab::nn::{self, MlpSpec};
use sgld_lab::numerics::RngStream;
use sgld_lab::optimizer::{self, TrainingConfig};
use sgld_lab::runner::{self, ExperimentSpec, Strategy};
use sgld_lab::{Error, Result};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "sgld-lab",
    about = "Privacy accounting, generalization bounds, and leakage audits for SGLD training",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compose a per-step privacy ledger and print totals per order.
    Account(AccountArgs),
    /// Evaluate a generalization bound with a route-agreement self-check.
    Bound(BoundArgs),
    /// Train a model and write checkpoint, metrics, and ledger artifacts.
    Train(TrainArgs),
    /// Run a membership-inference attack against a checkpoint.
    Attack(AttackArgs),
    /// Run a verification suite; nonzero exit on any failed check.
    Verify(VerifyArgs),
    /// Run a full strategy-comparison experiment.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct AccountArgs {
    /// Renyi orders; defaults to 1/2 and the integers 2..=64.
    #[arg(long = "lambda", value_name = "ORDER")]
    lambdas: Vec<f64>,
    /// Constant step size (repeat for an explicit per-step schedule).
    #[arg(long = "alpha", value_name = "ALPHA", required = true)]
    alphas: Vec<f64>,
    /// Number of steps when a single constant --alpha is given.
    #[arg(long, default_value_t = 1)]
    steps: usize,
    /// Dataset size n.
    #[arg(long, required = true)]
    n: usize,
    /// Mini-batch size b (sampling ratio tau = b/n).
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Gradient norm bound L.
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    /// Use the full binomial-sum formula (integer orders only).
    #[arg(long = "full-formula")]
    full_formula: bool,
}

#[derive(Args)]
struct BoundArgs {
    /// Bound route: "stability" or "info".
    #[arg(long, required = true)]
    route: String,
    /// Gradient norm bound L.
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    /// Uniform loss bound C (stability route).
    #[arg(long = "loss-bound")]
    loss_bound: Option<f64>,
    /// Subgaussian parameter sigma of the loss (info route).
    #[arg(long)]
    subgaussian: Option<f64>,
    /// Dataset size n.
    #[arg(long, required = true)]
    n: usize,
    /// Constant step size (repeat for an explicit per-step schedule).
    #[arg(long = "alpha", value_name = "ALPHA", required = true)]
    alphas: Vec<f64>,
    /// Number of steps when a single constant --alpha is given.
    #[arg(long, default_value_t = 1)]
    steps: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config JSON file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset identifier (german-credit, german-credit-surrogate,
    /// uci-adult, synthetic).
    #[arg(long, default_value = "synthetic")]
    dataset: String,
    /// Strategy preset used when no config file is given.
    #[arg(long, default_value = "sgd")]
    strategy: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    alpha0: Option<f64>,
    /// Output directory for checkpoint.json, metrics.csv, ledger.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    /// Attack kind: "threshold" or "shadow".
    #[arg(long, required = true)]
    kind: String,
    /// Checkpoint written by the train command.
    #[arg(long, required = true)]
    checkpoint: PathBuf,
    /// Training config JSON of the target run (shadow protocol source).
    #[arg(long, required = true)]
    config: PathBuf,
    /// Dataset identifier; the split seed must match the training run.
    #[arg(long, required = true)]
    dataset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-pool membership sample size.
    #[arg(long)]
    size: Option<usize>,
    /// Shadow model count.
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Output JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite: accountant, gradients, noise, invariances, or all.
    #[arg(default_value = "all")]
    suite: String,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment spec JSON file; flags below override its values.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// Strategies to compare (repeatable).
    #[arg(long = "strategy")]
    strategies: Vec<String>,
    /// Seeds (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Attack kinds (repeatable): threshold, shadow.
    #[arg(long = "attack")]
    attacks: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn expand_schedule(alphas: &[f64], steps: usize) -> Result<Vec<f64>> {
    match alphas {
        [] => Err(Error::InvalidArgument("no step sizes given".into())),
        [alpha] => Ok(vec![*alpha; steps]),
        many => Ok(many.to_vec()),
    }
}

fn order_grid(lambdas: &[f64]) -> Result<Vec<RenyiOrder>> {
    if lambdas.is_empty() {
        Ok(default_order_grid())
    } else {
        lambdas.iter().map(|&l| RenyiOrder::new(l)).collect()
    }
}

fn cmd_account(args: &AccountArgs) -> Result<()> {
    let grid = order_grid(&args.lambdas)?;
    let mode = if args.full_formula {
        for order in &grid {
            if order.as_full_formula_integer().is_none() {
                return Err(Error::InvalidArgument(format!(
                    "--full-formula evaluates the binomial sum, which is defined for \
                     integer orders in [2, 256]; order {} is not",
                    order.value()
                )));
            }
        }
        FormulaMode::FullBinomial
    } else {
        FormulaMode::Theorem1
    };
    let alphas = expand_schedule(&args.alphas, args.steps)?;
    if args.n == 0 {
        return Err(Error::InvalidArgument("--n must be >= 1".into()));
    }
    let tau = (args.batch as f64 / args.n as f64).min(1.0);
    let ledger = runner::build_ledger(grid, &alphas, tau, args.clip, args.n, mode)?;
    println!("{}", ledger.to_json()?);
    eprintln!("order    total           valid-all-steps");
    for (i, order) in ledger.order_grid.iter().enumerate() {
        // validity is indexed [step][order].
        let valid = ledger.validity.iter().all(|flags| flags[i]);
        eprintln!(
            "{:<8} {:<15} {}",
            order.value(),
            runner::sig6(ledger.totals[i]),
            valid
        );
    }
    Ok(())
}

fn cmd_bound(args: &BoundArgs) -> Result<()> {
    let alphas = expand_schedule(&args.alphas, args.steps)?;
    let (loss_bound, subgaussian) = match args.route.as_str() {
        "stability" => (
            args.loss_bound.ok_or_else(|| {
                Error::InvalidArgument("the stability route needs --loss-bound C".into())
            })?,
            args.subgaussian.unwrap_or(1.0),
        ),
        "info" => (
            args.loss_bound.unwrap_or(1.0),
            args.subgaussian.ok_or_else(|| {
                Error::InvalidArgument("the info route needs --subgaussian sigma".into())
            })?,
        ),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown route '{other}' (expected stability or info)"
            )))
        }
    };
    let inputs = BoundInputs {
        clip_bound: args.clip,
        loss_bound,
        subgaussian_param: subgaussian,
        dataset_size: args.n,
        alpha_schedule: alphas,
    };
    // Both routes carry an internal direct-vs-composed self-check and
    // fail on disagreement.
    let value = match args.route.as_str() {
        "stability" => bounds::stability_gen_bound(&inputs)?,
        _ => bounds::info_gen_bound(&inputs)?,
    };
    println!(
        "{}",
        serde_json::json!({
            "route": args.route,
            "bound": value,
            "inputs": inputs,
        })
    );
    eprintln!("{} bound: {}", args.route, runner::sig6(value));
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let bundle = runner::resolve_dataset(&args.dataset, args.seed.unwrap_or(0))?;
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<TrainingConfig>(&text)?
        }
        None => runner::preset_config(
            &args.dataset,
            Strategy::parse(&args.strategy)?,
            args.seed.unwrap_or(0),
            bundle.splits.train.n_cols,
        ),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(alpha0) = args.alpha0 {
        config.alpha0 = alpha0;
    }

    let out = optimizer::train(
        &config,
        &bundle.splits.train,
        &bundle.splits.test,
        &RngStream::new(config.seed, 0),
    )?;
    std::fs::create_dir_all(&args.out)?;
    optimizer::save_checkpoint(&out.params, &config, &args.out.join("checkpoint.json"))?;
    optimizer::write_metrics_csv(&out.history, &args.out.join("metrics.csv"))?;
    std::fs::write(args.out.join("ledger.json"), out.ledger.to_json()?)?;
    std::fs::write(
        args.out.join("config.json"),
        serde_json::to_string_pretty(&config)?,
    )?;
    if let Some(note) = &bundle.note {
        eprintln!("note: {note}");
    }
    eprintln!(
        "trained {} on {} ({} steps); artifacts in {}",
        config.digest(),
        bundle.id,
        out.ledger.steps.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_attack(args: &AttackArgs) -> Result<()> {
    let checkpoint = optimizer::load_checkpoint(&args.checkpoint)?;
    let config: TrainingConfig =
        serde_json::from_str(&std::fs::read_to_string(&args.config)?)?;
    let bundle = runner::resolve_dataset(&args.dataset, args.seed)?;
    let spec = MlpSpec::new(checkpoint.architecture.clone(), 0.0)?;
    let params = nn::ModelParams {
        values: checkpoint.parameters.clone(),
        widths: checkpoint.architecture.clone(),
    };
    let loss = config.loss_spec();
    let size = args.size.unwrap_or_else(|| {
        bundle
            .splits
            .train
            .n_rows()
            .min(bundle.splits.test.n_rows())
            .min(300)
    });
    let examples = attacks::build_membership_set(
        &params,
        &spec,
        &loss,
        &bundle.splits.train,
        &bundle.splits.test,
        size,
        &mut RngStream::new(args.seed, 10),
    )?;
    let report = match args.kind.as_str() {
        "threshold" => attacks::threshold_attack(&examples)?,
        "shadow" => attacks::shadow_attack(
            &config,
            &bundle.splits.holdout,
            &examples,
            args.k,
            &RngStream::new(args.seed, 20),
        )?,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown attack kind '{other}' (expected threshold or shadow)"
            )))
        }
    };
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => {
            // A directory target gets a kind-named report file, matching
            // the artifact layout of `train`.
            let file = if path.is_dir() {
                path.join(format!("attack_{}.json", args.kind))
            } else {
                path.clone()
            };
            std::fs::write(file, &json)?;
        }
        None => println!("{json}"),
    }
    eprintln!(
        "{} attack accuracy: {}",
        args.kind,
        runner::sig6(report.attack_accuracy)
    );
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<bool> {
    let reports = runner::verify(&args.suite)?;
    let mut all_pass = true;
    for report in &reports {
        for check in &report.checks {
            if !check.pass {
                eprintln!(
                    "FAIL [{}] {}: lhs {} rhs {} tol {}",
                    report.suite, check.name, check.lhs, check.rhs, check.tolerance
                );
            }
        }
        eprintln!(
            "suite {}: {} ({} checks)",
            report.suite,
            if report.pass { "pass" } else { "FAIL" },
            report.checks.len()
        );
        all_pass &= report.pass;
    }
    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(all_pass)
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<bool> {
    let mut spec = match &args.spec {
        Some(path) => ExperimentSpec::from_json_file(path)?,
        None => ExperimentSpec {
            dataset: "synthetic".into(),
            strategies: vec![Strategy::Sgd, Strategy::Sgld],
            seeds: vec![0, 1, 2],
            attacks: vec![AttackKind::Threshold],
            output_dir: PathBuf::from("out"),
            shadow_count: 8,
            attack_sample_size: None,
        },
    };
    if let Some(dataset) = &args.dataset {
        spec.dataset = dataset.clone();
    }
    if !args.strategies.is_empty() {
        spec.strategies = args
            .strategies
            .iter()
            .map(|s| Strategy::parse(s))
            .collect::<Result<_>>()?;
    }
    if !args.seeds.is_empty() {
        spec.seeds = args.seeds.clone();
    }
    if !args.attacks.is_empty() {
        spec.attacks = args
            .attacks
            .iter()
            .map(|a| match a.as_str() {
                "threshold" => Ok(AttackKind::Threshold),
                "shadow" => Ok(AttackKind::Shadow),
                other => Err(Error::InvalidArgument(format!(
                    "unknown attack kind '{other}'"
                ))),
            })
            .collect::<Result<_>>()?;
    }
    if let Some(out) = &args.out {
        spec.output_dir = out.clone();
    }

    let report = runner::run_experiment(&spec)?;
    let (csv_path, json_path) = runner::write_experiment_outputs(&report, &spec.output_dir)?;
    if let Some(note) = &report.dataset_note {
        eprintln!("note: {note}");
    }
    eprintln!("{}", std::fs::read_to_string(&csv_path)?);
    eprintln!(
        "wrote {} and {}",
        csv_path.display(),
        json_path.display()
    );
    Ok(!report.failed)
}

fn main() {
    let cli = Cli::parse();
    let outcome: Result<bool> = match &cli.command {
        Command::Account(args) => cmd_account(args).map(|_| true),
        Command::Bound(args) => cmd_bound(args).map(|_| true),
        Command::Train(args) => cmd_train(args).map(|_| true),
        Command::Attack(args) => cmd_attack(args).map(|_| true),
        Command::Verify(args) => cmd_verify(args),
        Command::Experiment(args) => cmd_experiment(args),
    };
    match outcome {
        Ok(true) => std::process::exit(runner::EXIT_OK),
        Ok(false) => std::process::exit(runner::EXIT_VERIFY),
        Err(Error::InvalidArgument(message)) => {
            eprintln!("error: {message}");
            std::process::exit(runner::EXIT_USAGE);
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(runner::EXIT_RUNTIME);
        }
    }
}
