use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gann::model::{write_partial_effects_csv, LossKind, PartialEffect};
use gann::{
    fit, generate_scenario, parse_formula, Activation, Dataset, FamilyKind, FitConfig, FittedModel, GannError,
    Initializer, PredictType, Result, ScenarioSpec,
};

mod svg;

#[derive(Parser, Debug)]
#[command(
    name = "gann",
    version,
    about = "Generalized additive models with neural network smooth terms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to a CSV file and write it to disk.
    Train(TrainArgs),
    /// Predict from a saved model.
    Predict(PredictArgs),
    /// Print the summary of a saved model.
    Summary(SummaryArgs),
    /// Export each term's estimated curve on an even grid.
    PartialEffects(PartialEffectsArgs),
    /// Generate the simulated three-covariate scenario.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training data (CSV with header).
    #[arg(long, short = 'd')]
    data: PathBuf,
    /// Model formula, e.g. "y ~ s(x1) + x2".
    #[arg(long, short = 'f')]
    formula: String,
    /// Where to write the model file.
    #[arg(long, short = 'o', default_value = "model.json")]
    output: PathBuf,
    /// Optional CSV log of per-term training losses.
    #[arg(long)]
    history_out: Option<PathBuf>,
    #[command(flatten)]
    fit: FitFlags,
}

fn defaults() -> FitConfig {
    FitConfig::default()
}

/// Every fitting option; defaults come from `FitConfig::default()`.
#[derive(Args, Debug)]
struct FitFlags {
    /// Hidden layer widths, comma separated ("256,128").
    #[arg(long, value_delimiter = ',', default_values_t = defaults().num_units)]
    num_units: Vec<usize>,
    /// gaussian or binomial.
    #[arg(long, default_value_t = defaults().family)]
    family: FamilyKind,
    #[arg(long, default_value_t = defaults().learning_rate)]
    learning_rate: f64,
    /// relu or linear.
    #[arg(long, default_value_t = defaults().activation)]
    activation: Activation,
    /// Only mse is supported.
    #[arg(long, default_value_t = defaults().loss)]
    loss: LossKind,
    #[arg(long, default_value_t = defaults().kernel_initializer)]
    kernel_initializer: Initializer,
    #[arg(long, default_value_t = defaults().bias_initializer)]
    bias_initializer: Initializer,
    /// Only l2 is supported (strength from --l2-penalty).
    #[arg(long)]
    kernel_regularizer: Option<String>,
    #[arg(long)]
    bias_regularizer: Option<String>,
    #[arg(long)]
    activity_regularizer: Option<String>,
    #[arg(long, default_value_t = defaults().l2_penalty)]
    l2_penalty: f64,
    /// Column holding sample weights.
    #[arg(long)]
    w_train: Option<String>,
    /// Convergence threshold of the backfitting loop.
    #[arg(long, default_value_t = defaults().bf_threshold)]
    bf_threshold: f64,
    /// Convergence threshold of the local scoring loop.
    #[arg(long, default_value_t = defaults().ls_threshold)]
    ls_threshold: f64,
    #[arg(long, default_value_t = defaults().max_iter_backfitting)]
    max_iter_backfitting: usize,
    #[arg(long, default_value_t = defaults().max_iter_ls)]
    max_iter_ls: usize,
    #[arg(long, default_value_t = defaults().batch_size)]
    batch_size: usize,
    /// Training epochs per term per backfitting sweep.
    #[arg(long, default_value_t = defaults().epochs_per_sweep)]
    epochs_per_sweep: usize,
    /// Random seed; drawn at random (and stored in the model) when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// 0 = warnings only, 1 = progress.
    #[arg(long, default_value_t = defaults().verbose)]
    verbose: u8,
    /// Clamp applied to binomial fitted probabilities.
    #[arg(long, default_value_t = defaults().mu_clamp)]
    mu_clamp: f64,
    #[arg(long, default_value_t = defaults().beta1)]
    beta1: f64,
    #[arg(long, default_value_t = defaults().beta2)]
    beta2: f64,
    #[arg(long, default_value_t = defaults().epsilon)]
    epsilon: f64,
}

impl FitFlags {
    fn to_config(&self) -> Result<FitConfig> {
        let config = FitConfig {
            num_units: self.num_units.clone(),
            family: self.family,
            learning_rate: self.learning_rate,
            activation: self.activation,
            loss: self.loss,
            kernel_initializer: self.kernel_initializer,
            bias_initializer: self.bias_initializer,
            kernel_regularizer: self.kernel_regularizer.clone(),
            bias_regularizer: self.bias_regularizer.clone(),
            activity_regularizer: self.activity_regularizer.clone(),
            l2_penalty: self.l2_penalty,
            w_train: self.w_train.clone(),
            bf_threshold: self.bf_threshold,
            ls_threshold: self.ls_threshold,
            max_iter_backfitting: self.max_iter_backfitting,
            max_iter_ls: self.max_iter_ls,
            batch_size: self.batch_size,
            epochs_per_sweep: self.epochs_per_sweep,
            seed: self.seed,
            verbose: self.verbose,
            mu_clamp: self.mu_clamp,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long, short = 'm')]
    model: PathBuf,
    /// New data (CSV with header).
    #[arg(long, short = 'd')]
    data: PathBuf,
    /// link, response or terms.
    #[arg(long = "type", default_value = "link")]
    kind: String,
    /// Terms to output with --type terms, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    terms: Vec<String>,
    /// Output CSV (default: standard output).
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SummaryArgs {
    #[arg(long, short = 'm')]
    model: PathBuf,
}

#[derive(Args, Debug)]
struct PartialEffectsArgs {
    #[arg(long, short = 'm')]
    model: PathBuf,
    /// Terms to export, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    terms: Vec<String>,
    #[arg(long, default_value_t = 200)]
    grid_size: usize,
    /// CSV whose covariate ranges define the grids (default: training ranges).
    #[arg(long)]
    range_data: Option<PathBuf>,
    /// Output CSV (default: standard output).
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
    /// Also write one `<term>.svg` chart per term into this directory.
    #[arg(long)]
    svg_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Output directory for train.csv, test.csv, true_terms_train.csv and true_terms_test.csv.
    #[arg(long, short = 'o', default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = ScenarioSpec::default().n)]
    n: usize,
    #[arg(long, default_value_t = ScenarioSpec::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = ScenarioSpec::default().train_fraction)]
    train_fraction: f64,
    #[arg(long, default_value_t = ScenarioSpec::default().alpha0)]
    alpha0: f64,
    #[arg(long, default_value_t = ScenarioSpec::default().noise_mean)]
    noise_mean: f64,
    #[arg(long, default_value_t = ScenarioSpec::default().noise_sd)]
    noise_sd: f64,
}

fn write_output(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut file = io::BufWriter::new(fs::File::create(p)?);
            write(&mut file)?;
            file.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
        }
    }
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let formula = parse_formula(&args.formula)?;
    let config = args.fit.to_config()?;
    let mut required: Vec<&str> = vec![formula.response()];
    required.extend(formula.term_names());
    if let Some(w) = &config.w_train {
        required.push(w);
    }
    let (data, _) = Dataset::read_csv_path(&args.data, Some(&required))?;
    let model = fit(&data, &formula, &config)?;
    model.save(&args.output)?;
    if let Some(path) = &args.history_out {
        model.history.write_csv(fs::File::create(path)?)?;
    }
    print!("{}", model.print_block());
    log::info!("model written to {}", args.output.display());
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<()> {
    let model = FittedModel::load(&args.model)?;
    let kind: PredictType = args.kind.parse()?;
    let (data, _) = Dataset::read_csv_path(&args.data, Some(&model.covariate_names()))?;
    let terms: Vec<&str> = args.terms.iter().map(String::as_str).collect();
    let selected = (!terms.is_empty()).then_some(terms.as_slice());
    let table = model.predict(Some(&data), kind, selected)?.into_dataset("prediction")?;
    write_output(args.output.as_deref(), |w| table.write_csv(w))
}

fn partial_effects(args: &PartialEffectsArgs) -> Result<()> {
    let model = FittedModel::load(&args.model)?;
    let terms: Vec<&str> = args.terms.iter().map(String::as_str).collect();
    let range = match &args.range_data {
        Some(path) => {
            let wanted: Vec<&str> = if terms.is_empty() {
                model.covariate_names()
            } else {
                terms.clone()
            };
            for t in &wanted {
                model.term(t)?;
            }
            Some(Dataset::read_csv_path(path, Some(&wanted))?.0)
        }
        None => None,
    };
    let effects: Vec<PartialEffect> = model.partial_effects(&terms, args.grid_size, range.as_ref())?;
    write_output(args.output.as_deref(), |w| write_partial_effects_csv(&effects, w))?;
    if let Some(dir) = &args.svg_dir {
        fs::create_dir_all(dir)?;
        for e in &effects {
            fs::write(
                dir.join(format!("{}.svg", e.term)),
                svg::line_chart(&e.term, &e.x, &e.f_hat),
            )?;
        }
    }
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let spec = ScenarioSpec {
        n: args.n,
        seed: args.seed,
        train_fraction: args.train_fraction,
        alpha0: args.alpha0,
        noise_mean: args.noise_mean,
        noise_sd: args.noise_sd,
        ..ScenarioSpec::default()
    };
    let scenario = generate_scenario(&spec)?;
    fs::create_dir_all(&args.out_dir)?;
    for (name, table) in [
        ("train.csv", &scenario.train),
        ("test.csv", &scenario.test),
        ("true_terms_train.csv", &scenario.true_terms_train),
        ("true_terms_test.csv", &scenario.true_terms_test),
    ] {
        table.write_csv_path(args.out_dir.join(name))?;
    }
    log::info!(
        "wrote {} training and {} test rows to {}",
        scenario.train.n_rows(),
        scenario.test.n_rows(),
        args.out_dir.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Summary(a) => {
            print!("{}", FittedModel::load(&a.model)?.summarize());
            Ok(())
        }
        Command::PartialEffects(a) => partial_effects(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match &cli.command {
        Command::Train(a) if a.fit.verbose == 0 => "warn",
        _ => "info",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(GannError::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gann: error[{}]: {e}", e.kind());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &GannError) -> u8 {
    if e.is_usage_error() {
        2
    } else {
        1
    }
}
