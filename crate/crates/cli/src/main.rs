//! `fluctlab` command-line front end.
//!
//! Exit codes: 0 success, 1 a run or I/O failure, 2 bad usage or a shape
//! mismatch between compared runs.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fluctlab::analysis::{analyze_run, AnalysisOptions, FluctuationMode};
use fluctlab::experiment::{
    compare_runs, default_run_path, load_products, run_plan, run_stem, train_to_file,
    write_report_bundle, ExperimentPlan,
};
use fluctlab::report::fluctuation_table;
use fluctlab::shapegen::{self, ShapeKind, DEFAULT_SAMPLES};
use fluctlab::{Error, RunConfig};

#[derive(Parser)]
#[command(
    name = "fluctlab",
    version,
    about = "Train small autoencoders on 2-D shapes and measure per-neuron fluctuations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a shape and write it as CSV.
    Gen(GenArgs),
    /// Train one run and store every captured epoch.
    Train(TrainArgs),
    /// Compute fluctuation statistics for a run.
    Analyze(AnalyzeArgs),
    /// Write tables and figures for a run.
    Report(ReportArgs),
    /// Summarise several runs of the same shape side by side.
    Compare(CompareArgs),
    /// Run a full grid of shapes and learning rates.
    All(AllArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "spiral")]
    shape: ShapeKind,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    count: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    shape: Option<ShapeKind>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    capture_every: Option<u32>,
    /// Run file; defaults to `<outdir>/runs/<shape>_<lr>_<epochs>.nfl`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "FLUCTLAB_OUT", default_value = "fluctlab-out")]
    outdir: PathBuf,
}

#[derive(Args)]
struct AnalysisFlags {
    #[arg(long, default_value_t = fluctlab::analysis::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = fluctlab::analysis::DEFAULT_BINS)]
    bins: usize,
    #[arg(long, value_enum, default_value = "delta")]
    mode: ModeArg,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Delta,
    Raw,
}

impl AnalysisFlags {
    fn options(&self) -> AnalysisOptions {
        AnalysisOptions {
            epsilon: self.epsilon,
            bins: self.bins,
            mode: match self.mode {
                ModeArg::Delta => FluctuationMode::Delta,
                ModeArg::Raw => FluctuationMode::Raw,
            },
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    run: PathBuf,
    #[command(flatten)]
    analysis: AnalysisFlags,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    #[command(flatten)]
    analysis: AnalysisFlags,
    #[arg(long, env = "FLUCTLAB_OUT", default_value = "fluctlab-out")]
    outdir: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    runs: Vec<PathBuf>,
    #[command(flatten)]
    analysis: AnalysisFlags,
    /// Print JSON instead of a text table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AllArgs {
    /// JSON experiment plan; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    shapes: Option<Vec<ShapeKind>>,
    #[arg(long, value_delimiter = ',')]
    lr: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    capture_every: Option<u32>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long, env = "FLUCTLAB_OUT")]
    outdir: Option<PathBuf>,
}

fn created_utc() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> fluctlab::Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_gen(a: GenArgs) -> fluctlab::Result<()> {
    let ds = shapegen::generate(a.shape, a.count, a.seed)?;
    match a.out {
        Some(p) => {
            if let Some(dir) = p.parent() {
                fs::create_dir_all(dir)?;
            }
            let mut f = io::BufWriter::new(fs::File::create(&p)?);
            let n = shapegen::export_csv(&ds, &mut f)?;
            f.flush()?;
            eprintln!("wrote {} points ({n} bytes) to {}", ds.count(), p.display());
        }
        None => {
            let stdout = io::stdout();
            shapegen::export_csv(&ds, stdout.lock())?;
        }
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> fluctlab::Result<()> {
    let mut c: RunConfig = match &a.config {
        Some(p) => load_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = a.shape {
        c.shape = v;
    }
    if let Some(v) = a.lr {
        c.learning_rate = v;
    }
    if let Some(v) = a.epochs {
        c.epochs = v;
    }
    if let Some(v) = a.data_seed {
        c.data_seed = v;
    }
    if let Some(v) = a.init_seed {
        c.init_seed = v;
    }
    if let Some(v) = a.samples {
        c.samples = v;
    }
    if let Some(v) = a.capture_every {
        c.capture_every = v;
    }
    c.validate()?;
    let path = a.out.unwrap_or_else(|| default_run_path(&a.outdir, &c));
    let s = train_to_file(&c, &path, created_utc())?;
    println!(
        "{} initial_loss={:.6e} final_loss={:.6e} snapshots={} -> {}",
        run_stem(&c),
        s.initial_loss,
        s.final_loss,
        s.snapshots,
        path.display()
    );
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> fluctlab::Result<()> {
    let report = analyze_run(&a.run, &a.analysis.options())?;
    let json = report.to_json()?;
    match a.out {
        Some(p) => {
            if let Some(dir) = p.parent() {
                fs::create_dir_all(dir)?;
            }
            fs::write(&p, json)?;
            print!("{}", fluctuation_table(&report).markdown);
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> fluctlab::Result<()> {
    let products = load_products(&a.run, &a.analysis.options())?;
    let art = write_report_bundle(&products, &a.outdir)?;
    print!("{}", fluctuation_table(&products.report).markdown);
    println!("final_mse={:.6e}", products.reconstruction.final_mse);
    for f in [
        &art.report_json,
        &art.neurons_csv,
        &art.table_md,
        &art.table_csv,
    ]
    .into_iter()
    .chain(&art.figures)
    {
        println!("{}", a.outdir.join(f).display());
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> fluctlab::Result<()> {
    let cmp = compare_runs(&a.runs, &a.analysis.options())?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&cmp)?);
    } else {
        print!("{}", cmp.render());
    }
    Ok(())
}

fn cmd_all(a: AllArgs) -> fluctlab::Result<bool> {
    let mut p: ExperimentPlan = match &a.config {
        Some(path) => load_json(path)?,
        None => ExperimentPlan::default(),
    };
    if let Some(v) = a.shapes {
        p.shapes = v;
    }
    if let Some(v) = a.lr {
        p.learning_rates = v;
    }
    if let Some(v) = a.epochs {
        p.epochs = v;
    }
    if let Some(v) = a.data_seed {
        p.data_seed = v;
    }
    if let Some(v) = a.init_seed {
        p.init_seed = v;
    }
    if let Some(v) = a.samples {
        p.samples = v;
    }
    if let Some(v) = a.capture_every {
        p.capture_every = v;
    }
    if let Some(v) = a.epsilon {
        p.epsilon = v;
    }
    if let Some(v) = a.bins {
        p.bins = v;
    }
    if let Some(v) = a.parallelism {
        p.parallelism = v;
    }
    if let Some(v) = a.outdir {
        p.outdir = v;
    }
    p.created_utc = created_utc();
    let index = run_plan(&p)?;
    for e in &index.entries {
        match &e.error {
            None => println!(
                "{:<9} lr={:<8} ok     final_mse={:.6e}",
                e.shape.name(),
                e.learning_rate,
                e.final_mse.unwrap_or(f64::NAN)
            ),
            Some(err) => println!(
                "{:<9} lr={:<8} FAILED {err}",
                e.shape.name(),
                e.learning_rate
            ),
        }
    }
    println!("index: {}", p.outdir.join("index.json").display());
    Ok(index.failed() == 0)
}

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::ShapeMismatch(_) | Error::InvalidArgument(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Analyze(a) => cmd_analyze(a).map(|_| true),
        Command::Report(a) => cmd_report(a).map(|_| true),
        Command::Compare(a) => cmd_compare(a).map(|_| true),
        Command::All(a) => cmd_all(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
