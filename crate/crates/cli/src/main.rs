use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use drseg::metrics::{stratified_report, GroupKey, SegRecord};
use drseg::network::checkpoint::Checkpoint;
use drseg::pipeline::{
    compare, comparison_markdown, evaluate, grad_check_suite, infer, train, EvalOptions, GradCheckOptions, TrainConfig,
    TrainStatus,
};
use drseg::synthdata::{generate_dataset, load_dataset, save_dataset, SynthConfig};

#[derive(Parser, Debug)]
#[command(name = "drseg", version, about = "Dual-resolution residual skin lesion segmentation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML file with optional [synth], [train] (incl. [train.loss], [train.net]) and [eval] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seeds of the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Run everything on one thread.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long, default_value_t = 64)]
        count: usize,
    },
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a checkpoint on a labelled dataset and write the report tables.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory of another `eval` run to compare against.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long)]
        tta: bool,
        /// Model name shown in the report.
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        resamples: usize,
    },
    /// Write a {0,255} mask for each image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tta: bool,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Stratified table from one or more `records.json` files.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        records: Vec<PathBuf>,
        #[arg(long, default_value = "overall")]
        group: String,
        /// Add the count, BF and ASSD columns.
        #[arg(long)]
        extended: bool,
    },
    /// Finite-difference check of the loss gradients on the tiny network.
    Gradcheck {
        #[arg(long, default_value_t = 200)]
        coords: usize,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    synth: SynthConfig,
    train: TrainConfig,
    eval: EvalOptions,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<drseg::Error> for Failure {
    fn from(e: drseg::Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn runtime(context: impl fmt::Display, e: impl fmt::Display) -> Failure {
    Failure::Runtime(format!("{context}: {e}"))
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        None => RunConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))?
        }
    };
    if let Some(seed) = common.seed {
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| runtime(path.display(), e))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(dir.display(), e))
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| runtime(path.display(), e))?;
    for r in rows {
        w.serialize(r).map_err(|e| runtime(path.display(), e))?;
    }
    w.flush().map_err(|e| runtime(path.display(), e))
}

fn read_records(path: &Path) -> CliResult<Vec<SegRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| runtime(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| runtime(path.display(), e))
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint<f32>> {
    Checkpoint::load(path).map_err(|e| runtime(path.display(), e))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    status: &'a TrainStatus,
    best_val_iou: Option<f64>,
    steps_run: usize,
    epochs_run: usize,
    checkpoint_step: u64,
    config: &'a TrainConfig,
}

fn run_synth(cfg: &RunConfig, out: &Path, count: usize) -> CliResult<()> {
    let samples = generate_dataset(&cfg.synth, count)?;
    save_dataset(&samples, out)?;
    log::info!("wrote {count} samples to {}", out.display());
    Ok(())
}

fn run_train(cfg: &RunConfig, out: &Path, data: &Path) -> CliResult<()> {
    cfg.train.validate()?;
    let dataset = load_dataset(data)?;
    let outcome = train::<f32>(&cfg.train, &dataset)?;
    create_dir(out)?;
    outcome.checkpoint.save(out.join("model.ckpt"))?;
    write_csv(&out.join("steps.csv"), &outcome.steps)?;
    write_csv(&out.join("epochs.csv"), &outcome.epochs)?;
    let summary = TrainSummary {
        status: &outcome.status,
        best_val_iou: outcome.best_val_iou,
        steps_run: outcome.steps.len(),
        epochs_run: outcome.epochs.len(),
        checkpoint_step: outcome.checkpoint.step,
        config: &cfg.train,
    };
    let text = toml::to_string(&summary).map_err(|e| runtime("summary", e))?;
    write(&out.join("summary.toml"), text)?;
    match outcome.status {
        TrainStatus::Diverged { step, reason } => Err(drseg::Error::Diverged { step, reason }.into()),
        status => {
            log::info!("training finished: {status:?}");
            Ok(())
        }
    }
}

fn run_eval(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: &Path,
    data: &Path,
    other: Option<&Path>,
    opts: EvalOptions,
    resamples: usize,
) -> CliResult<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let dataset = load_dataset(data)?;
    let eval = evaluate(&ckpt, &dataset, &opts)?;
    create_dir(out)?;
    let records = serde_json::to_string_pretty(&eval.records).map_err(|e| runtime("records", e))?;
    write(&out.join("records.json"), records)?;
    let table = eval.table.to_csv(false)?;
    write(&out.join("report.csv"), &table)?;
    write(&out.join("report_full.csv"), eval.table.to_csv(true)?)?;
    write(&out.join("report.md"), eval.table.to_markdown(false))?;
    print!("{}", eval.table.to_markdown(false));
    if let Some(other) = other {
        let baseline = read_records(&other.join("records.json"))?;
        let rows = compare(&eval.records, &baseline, resamples, 0.95, cfg.train.seed)?;
        write_csv(
            &out.join("comparison.csv"),
            &rows
                .iter()
                .map(|c| {
                    (
                        &c.metric,
                        c.n,
                        c.ci.mean_diff,
                        c.ci.ci_low,
                        c.ci.ci_high,
                        c.ci.p_value,
                        c.ttest.t,
                        c.ttest.p_value,
                    )
                })
                .collect::<Vec<_>>(),
        )?;
        let md = comparison_markdown(&rows);
        write(&out.join("comparison.md"), &md)?;
        print!("\n{md}");
    }
    Ok(())
}

fn run_infer(out: &Path, checkpoint: &Path, images: &[PathBuf], opts: &EvalOptions) -> CliResult<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let outcomes = infer(&ckpt, images, out, opts)?;
    let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
    for o in &outcomes {
        match &o.result {
            Ok(p) => println!("{} -> {}", o.input.display(), p.display()),
            Err(e) => eprintln!("{}: {e}", o.input.display()),
        }
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} images failed", outcomes.len())));
    }
    Ok(())
}

fn run_report(out: &Path, files: &[PathBuf], group: &str, extended: bool) -> CliResult<()> {
    let key: GroupKey = group.parse()?;
    let mut records = Vec::new();
    for f in files {
        records.extend(read_records(f)?);
    }
    let table = stratified_report(&records, key)?;
    create_dir(out)?;
    write(&out.join(format!("report_{}.csv", key.as_str())), table.to_csv(extended)?)?;
    print!("{}", table.to_markdown(extended));
    Ok(())
}

fn run_gradcheck(seed: Option<u64>, coords: usize, step: f64, tol: f64) -> CliResult<()> {
    if coords == 0 || !(step > 0.0) || !(tol > 0.0) {
        return Err(Failure::Usage("coords, step and tol must be positive".into()));
    }
    let defaults = GradCheckOptions::default();
    let opts = GradCheckOptions {
        coords,
        step,
        tolerance: tol,
        seed: seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let mut failed = Vec::new();
    for (name, report) in grad_check_suite(&opts)? {
        println!("{name}: {report}");
        if !report.passed() {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.common.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .map_err(|e| runtime("thread pool", e))?;
    }
    let cfg = load_config(&cli.common)?;
    let out = cli.common.out.as_path();
    match cli.command {
        Command::Synth { count } => run_synth(&cfg, out, count),
        Command::Train { data } => run_train(&cfg, out, &data),
        Command::Eval {
            checkpoint,
            data,
            compare,
            tta,
            model,
            resamples,
        } => {
            let mut opts = cfg.eval.clone();
            opts.tta |= tta;
            if let Some(m) = model {
                opts.model = m;
            }
            run_eval(&cfg, out, &checkpoint, &data, compare.as_deref(), opts, resamples)
        }
        Command::Infer { checkpoint, tta, images } => {
            let mut opts = cfg.eval.clone();
            opts.tta |= tta;
            run_infer(out, &checkpoint, &images, &opts)
        }
        Command::Report {
            records,
            group,
            extended,
        } => run_report(out, &records, &group, extended),
        Command::Gradcheck { coords, step, tol } => run_gradcheck(cli.common.seed, coords, step, tol),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
