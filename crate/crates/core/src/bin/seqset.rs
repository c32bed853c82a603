use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seqset::data::{self, RunConfig, SynthSpec};
use seqset::eval::evaluate_corpus;
use seqset::pipeline::{self, sidecar};
use seqset::table::serialize_table;
use seqset::Error;

#[derive(Parser)]
#[command(name = "seqset", version, about = "Text-to-table generation with set-decoded body rows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a source/target file pair.
    Train(TrainArgs),
    /// Decode one table per source line.
    Generate(GenerateArgs),
    /// Score predicted tables against gold tables.
    Evaluate(EvaluateArgs),
    /// Write a synthetic source/target pair.
    Datagen(DatagenArgs),
    /// Write copies of a dataset with body rows shuffled, one per seed.
    ReorderStudy(ReorderArgs),
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "null-scale")]
    null_scale: Option<f64>,
    #[arg(long = "rows-m")]
    rows_m: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> seqset::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.steps {
            cfg.train.max_steps = v;
        }
        if let Some(v) = self.lambda {
            cfg.train.lambda = v;
        }
        if let Some(v) = self.null_scale {
            cfg.train.null_scale = v;
        }
        if let Some(v) = self.rows_m {
            cfg.model.max_rows = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Output checkpoint; `.vocab`, `.config` and `.log` files are written next to it.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write per-line decoder step counts to this file.
    #[arg(long)]
    steps_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Also write the scores as `key = value` lines.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DatagenArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = 2000)]
    instances: usize,
    #[arg(long, default_value_t = 2)]
    rows_min: usize,
    #[arg(long, default_value_t = 6)]
    rows_max: usize,
    #[arg(long, default_value_t = 24)]
    name_pool: usize,
    #[arg(long, default_value_t = 0)]
    distractors: usize,
    /// Keep sentences in table-row order.
    #[arg(long)]
    no_shuffle: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Row slots of the model the data is meant for.
    #[arg(long = "rows-m")]
    rows_m: Option<usize>,
}

#[derive(Args)]
struct ReorderArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Output prefix; writes `<out>-<seed>.src` and `<out>-<seed>.tbl`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3])]
    seeds: Vec<u64>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::Io { .. } => 4,
        Error::Format(_) | Error::Data(_) | Error::UnknownToken(_) => 5,
        Error::Dimension(_) => 6,
        Error::Diverged { .. } | Error::NonFinite { .. } | Error::NonFiniteGrad { .. } => 7,
        Error::Shape { .. } | Error::Index(_) => 8,
    }
}

fn write(path: &Path, text: &str) -> seqset::Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train(a: &TrainArgs) -> seqset::Result<()> {
    let cfg = a.overrides.resolve()?;
    let d = data::read_dataset(&a.source, &a.target)?;
    let log_path = sidecar(&a.checkpoint, "log");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let (run, report) = pipeline::train_run(&cfg, &d, Some(&mut log))?;
    pipeline::save_run(&run, &a.checkpoint)?;
    let last = report.log.last().map_or(f64::NAN, |m| m.total);
    for (step, loss) in &report.validations {
        eprintln!("validation loss at step {step}: {loss:.4}");
    }
    eprintln!("trained {} steps, final loss {last:.4}", report.log.len());
    if let Some(step) = report.best_step {
        eprintln!("kept parameters from step {step}");
    }
    Ok(())
}

fn generate(a: &GenerateArgs) -> seqset::Result<()> {
    let run = pipeline::load_run(&a.checkpoint)?;
    let sources = data::read_lines(&a.source)?;
    let results = pipeline::decode_corpus(&run.model, &run.vocab, &sources, &run.decode_options())?;
    let mut out = String::new();
    let mut steps = String::from("sequential_steps\theader_steps\tbody_steps\trows\n");
    for r in &results {
        out.push_str(&serialize_table(&r.table)?);
        out.push('\n');
        steps.push_str(&format!("{}\t{}\t{}\t{}\n", r.sequential_steps, r.header_steps, r.body_steps, r.emitted_rows));
    }
    write(&a.out, &out)?;
    if let Some(p) = &a.steps_out {
        write(p, &steps)?;
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> seqset::Result<()> {
    let preds = data::read_lines(&a.pred)?;
    let golds = data::read_tables(&a.target)?;
    let report = evaluate_corpus(&preds, &golds)?;
    println!("{report}");
    if let Some(p) = &a.out {
        write(p, &report.to_key_values())?;
    }
    Ok(())
}

fn datagen(a: &DatagenArgs) -> seqset::Result<()> {
    let spec = SynthSpec {
        n_instances: a.instances,
        rows_min: a.rows_min,
        rows_max: a.rows_max,
        name_pool: a.name_pool,
        shuffle_sentences: !a.no_shuffle,
        distractor_sentences: a.distractors,
        seed: a.seed,
        ..SynthSpec::default()
    };
    spec.validate(a.rows_m)?;
    data::write_dataset(&data::datagen(&spec)?, &a.source, &a.target)
}

fn reorder(a: &ReorderArgs) -> seqset::Result<()> {
    let d = data::read_dataset(&a.source, &a.target)?;
    for (seed, copy) in a.seeds.iter().zip(data::reorder_study(&d, &a.seeds)) {
        let prefix = a.out.display();
        let src = PathBuf::from(format!("{prefix}-{seed}.src"));
        let tbl = PathBuf::from(format!("{prefix}-{seed}.tbl"));
        data::write_dataset(&copy, &src, &tbl)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Generate(a) => generate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Datagen(a) => datagen(a),
        Command::ReorderStudy(a) => reorder(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
