//! `chanest` command-line front end: dataset generation, training,
//! attacks, distillation and evaluation sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chanest::attacks::{attack_batch, save_adversarial, AttackConfig, AttackKind, DEFAULT_ITERATIONS};
use chanest::chansim::{generate_dataset, ScenarioConfig};
use chanest::distill::{defend_pipeline, DistillConfig, LossVariant};
use chanest::eval::{emit_report, format_table, run_sweep};
use chanest::grid::{load_dataset, meta_path, save_dataset, split_dataset, Dataset};
use chanest::neuralnet::{load_model, save_model, train_fresh, ArchTag, LossHistory, TrainConfig};
use chanest::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "chanest", version, about = "OFDM channel-estimation robustness workbench")]
struct Cli {
    /// Log filter (error, warn, info, debug, trace). `RUST_LOG` overrides it.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset of LS-estimate / true-channel grid pairs.
    Generate(GenerateArgs),
    /// Train one architecture on the training split.
    Train(TrainArgs),
    /// Perturb a dataset split against a trained model.
    Attack(AttackArgs),
    /// Train a teacher, then distill it into a student.
    Distill(DistillArgs),
    /// Evaluate models under every attack and budget.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Scenario configuration JSON; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of samples.
    #[arg(long, default_value_t = 256)]
    samples: usize,
    /// Master seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output dataset file (a `.meta.json` sidecar is written next to it).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct SplitArgs {
    /// Fraction of samples in the training split.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Seed of the train/test permutation; keep it equal across commands.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args, Debug, Clone)]
struct OptimArgs {
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    /// Seed for weight initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl OptimArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch,
            seed: self.seed,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Architecture: undefended, teacher or student.
    #[arg(long, default_value = "undefended")]
    arch: ArchTag,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Subset {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
struct AttackArgs {
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// One of fgsm, bim, pgd, mim, cw.
    #[arg(long)]
    attack: AttackKind,
    /// L∞ budget [default: 1.0]; ignored by cw.
    #[arg(long)]
    eps: Option<f64>,
    /// Attack iterations (cw runs ten times as many).
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    iters: usize,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Which split to perturb.
    #[arg(long, value_enum, default_value_t = Subset::Test)]
    subset: Subset,
    #[command(flatten)]
    split: SplitArgs,
    /// Output dataset (an `.attack.json` sidecar is written next to it).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DistillArgs {
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Teacher checkpoint output.
    #[arg(long)]
    teacher_out: PathBuf,
    /// Student checkpoint output.
    #[arg(long)]
    student_out: PathBuf,
    /// Report JSON; defaults to `distill_report.json` beside the student.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Weight of the imitation term.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// What the student imitates.
    #[arg(long, value_enum, default_value_t = VariantArg::OutputMse)]
    variant: VariantArg,
    /// Layer matched by the feature variants.
    #[arg(long, default_value_t = 0)]
    matched_layer: usize,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    OutputMse,
    ActivationMse,
    RepresentationMse,
}

impl From<VariantArg> for LossVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::OutputMse => LossVariant::OutputMse,
            VariantArg::ActivationMse => LossVariant::ActivationMse,
            VariantArg::RepresentationMse => LossVariant::RepresentationMse,
        }
    }
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Comma-separated model checkpoints.
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<PathBuf>,
    /// Dataset file; the sweep runs on its test split.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated budgets.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1.0,2.0,3.0")]
    eps_list: Vec<f64>,
    /// Comma-separated attacks, or `all` for fgsm,bim,pgd,mim,cw.
    #[arg(long, default_value = "all")]
    attacks: String,
    /// Attack noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    split: SplitArgs,
    /// Output CSV report.
    #[arg(long)]
    out: PathBuf,
    /// Optional SVG chart of malicious MSE against budget.
    #[arg(long)]
    svg: Option<PathBuf>,
}

/// Failure carrying its process exit code.
#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Format(_) => EXIT_IO,
            Error::NonFinite(_) | Error::DivisionByZero(_) => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::io(format!("cannot read {}: no such file", path.display())))
    }
}

fn require_parent(path: &Path) -> CliResult {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(CliError::io(format!(
            "cannot write {}: directory {} does not exist",
            path.display(),
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn load_split(path: &Path, split: &SplitArgs) -> CliResult<(Dataset, Dataset)> {
    let data = load_dataset(path)?;
    Ok(split_dataset(&data, split.train_fraction, split.split_seed)?)
}

fn loss_csv(history: &LossHistory) -> String {
    let mut out = String::from("epoch,train_mse,val_mse\n");
    for r in history {
        let val = r.val_mse.map_or_else(String::new, |v| v.to_string());
        let _ = writeln!(out, "{},{},{}", r.epoch, r.train_mse, val);
    }
    out
}

fn cmd_generate(args: &GenerateArgs) -> CliResult {
    if let Some(cfg) = &args.config {
        require_file(cfg)?;
    }
    require_parent(&args.out)?;
    let cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
            ScenarioConfig::from_json(&text)?
        }
        None => ScenarioConfig::default(),
    };
    if args.samples == 0 {
        return Err(CliError::usage("--samples must be positive"));
    }
    let data = generate_dataset(args.samples, &cfg, args.seed)?;
    save_dataset(&data, &args.out)?;
    let mut counts = BTreeMap::new();
    for s in data.scenarios() {
        *counts.entry(s.profile.name()).or_insert(0usize) += 1;
    }
    let (n_sub, n_sym, n_chan) = data.grid_shape().unwrap_or_default();
    println!("samples: {}", data.len());
    println!("grid: {n_sub} x {n_sym} x {n_chan}");
    for (name, n) in counts {
        println!("{name}: {n}");
    }
    println!("wrote {} and {}", args.out.display(), meta_path(&args.out).display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> CliResult {
    require_file(&args.data)?;
    let loss_path = args
        .loss_csv
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".loss.csv"));
    require_parent(&args.out)?;
    require_parent(&loss_path)?;
    let cfg = args.optim.config();
    cfg.validate()?;
    let (train_set, test_set) = load_split(&args.data, &args.split)?;
    let val = (!test_set.is_empty()).then_some(&test_set);
    log::info!(
        "training {} on {} samples for {} epochs",
        args.arch,
        train_set.len(),
        cfg.epochs
    );
    let (model, history) = train_fresh(args.arch, &train_set, val, &cfg)?;
    save_model(&model, &args.out)?;
    fs::write(&loss_path, loss_csv(&history))
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", loss_path.display())))?;
    println!("arch: {}", model.arch());
    println!("parameters: {}", model.param_count());
    if let Some(last) = history.last() {
        println!("final train mse: {}", last.train_mse);
        if let Some(v) = last.val_mse {
            println!("final test mse: {v}");
        }
    }
    println!("wrote {} and {}", args.out.display(), loss_path.display());
    Ok(())
}

fn cmd_attack(args: &AttackArgs) -> CliResult {
    require_file(&args.model)?;
    require_file(&args.data)?;
    require_parent(&args.out)?;
    let eps = match (args.attack.uses_epsilon(), args.eps) {
        (false, Some(e)) => {
            log::warn!("{} does not use a budget; ignoring --eps {e}", args.attack);
            0.0
        }
        (false, None) => 0.0,
        (true, e) => e.unwrap_or(1.0),
    };
    let cfg = AttackConfig::new(args.attack, eps)
        .with_iterations(args.iters)
        .with_seed(args.seed);
    cfg.validate()?;
    let model = load_model(&args.model)?;
    let data = match args.subset {
        Subset::All => load_dataset(&args.data)?,
        Subset::Train => load_split(&args.data, &args.split)?.0,
        Subset::Test => load_split(&args.data, &args.split)?.1,
    };
    let batch = attack_batch(&model, &data, &cfg)?;
    save_adversarial(&batch, &args.out)?;
    let linf = batch.perturbation_linf().into_iter().fold(0.0, f64::max);
    println!("attack: {}", args.attack);
    println!("samples: {}", batch.len());
    println!("max perturbation (linf): {linf}");
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_distill(args: &DistillArgs) -> CliResult {
    require_file(&args.data)?;
    let report_path = args.report.clone().unwrap_or_else(|| {
        args.student_out
            .parent()
            .unwrap_or(Path::new(""))
            .join("distill_report.json")
    });
    for path in [&args.teacher_out, &args.student_out, &report_path] {
        require_parent(path)?;
    }
    let cfg = DistillConfig {
        alpha: args.alpha,
        loss_variant: args.variant.into(),
        matched_layer: args.matched_layer,
        train: args.optim.config(),
    };
    cfg.train.validate()?;
    let (train_set, test_set) = load_split(&args.data, &args.split)?;
    if test_set.is_empty() {
        return Err(CliError::usage("test split is empty; lower --train-fraction"));
    }
    let (teacher, student, report) = defend_pipeline(&train_set, &test_set, &cfg)?;
    save_model(&teacher, &args.teacher_out)?;
    save_model(&student, &args.student_out)?;
    report.save(&report_path)?;
    for (name, mse) in &report.benign_mse {
        println!("{name} benign mse: {mse}");
    }
    println!(
        "wrote {}, {} and {}",
        args.teacher_out.display(),
        args.student_out.display(),
        report_path.display()
    );
    Ok(())
}

fn parse_attacks(spec: &str) -> CliResult<Vec<AttackKind>> {
    if spec.trim() == "all" {
        return Ok(AttackKind::ALL.to_vec());
    }
    let mut kinds = Vec::new();
    for name in spec.split(',') {
        let kind: AttackKind = name.trim().parse().map_err(|e: Error| CliError::usage(e.to_string()))?;
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    Ok(kinds)
}

fn cmd_sweep(args: &SweepArgs) -> CliResult {
    let attacks = parse_attacks(&args.attacks)?;
    for path in &args.models {
        require_file(path)?;
    }
    require_file(&args.data)?;
    require_parent(&args.out)?;
    if let Some(svg) = &args.svg {
        require_parent(svg)?;
    }
    let mut models = Vec::new();
    for path in &args.models {
        let model = load_model(path)?;
        let mut tag = model.arch().to_string();
        if models.iter().any(|(t, _)| *t == tag) {
            tag = path
                .file_stem()
                .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        }
        if models.iter().any(|(t, _)| *t == tag) {
            return Err(CliError::usage(format!("duplicate model tag {tag}")));
        }
        models.push((tag, model));
    }
    let (_, test_set) = load_split(&args.data, &args.split)?;
    let report = run_sweep(&models, &attacks, &args.eps_list, &test_set, args.seed)?;
    emit_report(&report, &args.out, args.svg.as_deref())?;
    print!("{}", format_table(&report));
    println!("dataset fingerprint: {}", report.dataset_fingerprint);
    println!("wrote {}", args.out.display());
    Ok(())
}

fn init_threads() -> CliResult {
    let Ok(value) = std::env::var("CHANEST_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("CHANEST_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("cannot configure thread pool: {e}")))
}

fn run(cli: &Cli) -> CliResult {
    init_threads()?;
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Distill(a) => cmd_distill(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
