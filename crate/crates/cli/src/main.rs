//! `jwae`: synthesize data, train, and evaluate joint Wasserstein autoencoders.

mod config;

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jwae::data::{load_dataset, save_dataset, synth_generate, Dataset, Split};
use jwae::eval::{
    cross_dataset_eval, cross_modal_eval, latent_diagnostics, load_localization, phrase_localization_eval,
    projection_table, retrieval_table, Direction, ModalityMoments,
};
use jwae::nets::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use jwae::objectives::{Objective, Regularizer};
use jwae::trainer::{fit_with, TrainLog};

use config::{RunConfig, DEFAULT_DIAGNOSE_CAP};

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Input(String),
    Output(String),
    Run(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 3,
            Failure::Input(_) => 4,
            Failure::Output(_) => 5,
            Failure::Run(_) => 6,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "invalid config: {m}"),
            Failure::Input(m) => write!(f, "cannot read input: {m}"),
            Failure::Output(m) => write!(f, "cannot write output: {m}"),
            Failure::Run(m) => write!(f, "run failed: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "jwae", version, about = "Joint Wasserstein autoencoders for image/text retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(clap::Args, Debug, Clone)]
struct Opts {
    /// TOML run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated recall cutoffs.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, global = true, value_parser = parse_direction)]
    direction: Option<Direction>,
    #[arg(long, global = true)]
    supervision_fraction: Option<f64>,
    #[arg(long, global = true, value_parser = parse_objective)]
    loss: Option<Objective>,
    /// Dataset manifest, overriding `dataset` in the config.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_split)]
    split: Option<Split>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic source dataset and its shifted target.
    Synth,
    /// Train a model; writes the best and last checkpoints and the epoch log.
    Train,
    /// Retrieval recall on one split of the dataset.
    Eval,
    /// Test-split retrieval on the shifted `target` dataset.
    CrossEval,
    /// Phrase localization recall.
    Localize,
    /// Latent moments, discriminator balance and the 2-D projection.
    Diagnose,
    /// Top-K neighbours of one query item.
    Retrieve {
        /// Query item id.
        #[arg(long)]
        item: usize,
    },
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse().map_err(|e: jwae::eval::EvalError| e.to_string())
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    s.parse().map_err(|e: jwae::objectives::ObjectiveError| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split `{s}` (expected train, val or test)")),
    }
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Config file merged with the command-line overrides.
fn resolve(opts: &Opts) -> Result<RunConfig, Failure> {
    let mut cfg = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if opts.seed.is_some() {
        cfg.seed = opts.seed;
    }
    if opts.loss.is_some() {
        cfg.loss = opts.loss;
    }
    if let Some(p) = &opts.dataset {
        cfg.dataset = Some(p.clone());
    }
    if let Some(p) = &opts.checkpoint {
        cfg.checkpoint = Some(p.clone());
    }
    if let Some(k) = &opts.k {
        cfg.ks = Some(k.clone());
    }
    if opts.split.is_some() {
        cfg.split = opts.split;
    }
    if let Some(f) = opts.supervision_fraction {
        cfg.train
            .get_or_insert_with(Default::default)
            .insert("supervision_fraction".into(), toml::Value::Float(f));
    }
    if let Some(ks) = &cfg.ks {
        if ks.is_empty() || ks.contains(&0) {
            return Err(Failure::Config(format!("K values must be positive, got {ks:?}")));
        }
    }
    Ok(cfg)
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, Failure> {
    let p = path
        .as_deref()
        .ok_or_else(|| Failure::Config(format!("no {what} given (set `{what}` in the config)")))?;
    if !p.exists() {
        return Err(Failure::Config(format!("{what} {} does not exist", p.display())));
    }
    Ok(p)
}

fn dataset_at(path: &Path) -> Result<Dataset, Failure> {
    load_dataset(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Output(format!("{}: {e}", path.display())))
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| Failure::Output(format!("{}: {e}", out.display())))?;
    write_file(&out.join("config.toml"), &cfg.to_toml()?)
}

fn is_variational(cfg: &RunConfig) -> Result<bool, Failure> {
    Ok(cfg.train_config()?.weights.regularizer == Regularizer::Kl)
}

/// Dataset, model and checkpoint for the evaluation commands.
fn trained_model(cfg: &RunConfig) -> Result<(Dataset, ModelConfig, ModelParams), Failure> {
    let dataset = dataset_at(require(&cfg.dataset, "dataset")?)?;
    let ckpt = require(&cfg.checkpoint, "checkpoint")?;
    let model = cfg.model_config(&dataset, is_variational(cfg)?)?;
    let params = load_checkpoint(ckpt, &model).map_err(|e| Failure::Input(format!("{}: {e}", ckpt.display())))?;
    Ok((dataset, model, params))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut cfg = resolve(&cli.opts)?;
    let out = cli.opts.out.as_path();
    match &cli.command {
        Command::Synth => synth(&mut cfg, out),
        Command::Train => train(&mut cfg, out),
        Command::Eval => eval(&cfg, out),
        Command::CrossEval => cross_eval(&cfg, out),
        Command::Localize => localize(&cfg, out),
        Command::Diagnose => diagnose(&cfg, out),
        Command::Retrieve { item } => retrieve(&cfg, out, *item, cli.opts.direction.unwrap_or(Direction::ImageToText)),
    }
}

fn synth(cfg: &mut RunConfig, out: &Path) -> Result<(), Failure> {
    let synth = cfg.synth_config()?;
    cfg.synth = Some(synth.clone());
    let (source, target) = synth_generate(&synth).map_err(|e| Failure::Run(e.to_string()))?;
    prepare_out(out, cfg)?;
    for (name, ds) in [("source", &source), ("target", &target)] {
        let manifest = save_dataset(ds, &out.join(name)).map_err(|e| Failure::Output(e.to_string()))?;
        println!("{name}\t{}", manifest.display());
    }
    Ok(())
}

fn train(cfg: &mut RunConfig, out: &Path) -> Result<(), Failure> {
    let path = require(&cfg.dataset, "dataset")?.to_path_buf();
    let train_cfg = cfg.train_config()?;
    let dataset = dataset_at(&path)?;
    let model = cfg.model_config(&dataset, train_cfg.weights.regularizer == Regularizer::Kl)?;
    cfg.loss = Some(cfg.loss.unwrap_or(config::DEFAULT_LOSS));
    cfg.set_train(&train_cfg)?;
    cfg.model = Some(model.clone());
    let best_path = out.join("checkpoint.jwck");
    cfg.checkpoint = Some(best_path.clone());
    prepare_out(out, cfg)?;

    let log_path = out.join("train_log.tsv");
    let log_file = File::create(&log_path).map_err(|e| Failure::Output(format!("{}: {e}", log_path.display())))?;
    let mut log = BufWriter::new(log_file);
    let log_err = |e: std::io::Error| Failure::Output(format!("{}: {e}", log_path.display()));
    writeln!(log, "{}", TrainLog::header()).map_err(log_err)?;
    let mut io_error = None;
    let result = fit_with(&dataset, &model, &train_cfg, |record| {
        if let Err(e) = writeln!(log, "{}", record.tsv_line()).and_then(|_| log.flush()) {
            io_error.get_or_insert(e);
        }
        Ok(())
    });
    if let Some(e) = io_error {
        return Err(log_err(e));
    }
    let result = result.map_err(|e| Failure::Run(e.to_string()))?;
    log.flush().map_err(log_err)?;

    let save = |params: &ModelParams, path: &Path| {
        save_checkpoint(params, path).map_err(|e| Failure::Output(format!("{}: {e}", path.display())))
    };
    save(&result.best, &best_path)?;
    save(&result.last, &out.join("last.jwck"))?;
    match result.best_epoch {
        Some(e) => println!("best epoch {e} of {}", train_cfg.epochs),
        None => println!("no epochs run"),
    }
    println!("checkpoint\t{}", best_path.display());
    Ok(())
}

fn eval(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let (dataset, model, params) = trained_model(cfg)?;
    let split = cfg.split.unwrap_or(Split::Test);
    let (i2t, t2i) =
        cross_modal_eval(&params, &model, &dataset, split, &cfg.ks()).map_err(|e| Failure::Run(e.to_string()))?;
    let table = retrieval_table(&[&i2t, &t2i]);
    prepare_out(out, cfg)?;
    write_file(&out.join("eval.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

fn cross_eval(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let (_, model, params) = trained_model(cfg)?;
    let target = dataset_at(require(&cfg.target, "target")?)?;
    let (i2t, t2i) =
        cross_dataset_eval(&params, &model, &target, &cfg.ks()).map_err(|e| Failure::Run(e.to_string()))?;
    let table = retrieval_table(&[&i2t, &t2i]);
    prepare_out(out, cfg)?;
    write_file(&out.join("cross_eval.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

fn localize(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let (_, model, params) = trained_model(cfg)?;
    let path = require(&cfg.localization, "localization")?;
    let instance = load_localization(path).map_err(|e| Failure::Input(e.to_string()))?;
    let ks = cfg.ks();
    let recalls =
        phrase_localization_eval(&params, &model, &instance, &ks).map_err(|e| Failure::Run(e.to_string()))?;
    let mut table = String::from("k\trecall\n");
    for (k, r) in ks.iter().zip(&recalls) {
        writeln!(table, "{k}\t{r:.6}").expect("write to string");
    }
    prepare_out(out, cfg)?;
    write_file(&out.join("localize.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

fn moments_rows(out: &mut String, name: &str, m: &ModalityMoments) {
    for (i, (mean, var)) in m.mean.iter().zip(&m.variance).enumerate() {
        writeln!(out, "{name}\t{i}\t{mean:.6}\t{var:.6}").expect("write to string");
    }
}

fn diagnose(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let (dataset, model, params) = trained_model(cfg)?;
    let split = cfg.split.unwrap_or(Split::Test);
    let cap = cfg.diagnose_cap.unwrap_or(DEFAULT_DIAGNOSE_CAP);
    let diag = latent_diagnostics(&params, &model, &dataset, split, cap, cfg.seed())
        .map_err(|e| Failure::Run(e.to_string()))?;
    let mut summary = String::new();
    writeln!(summary, "prior_accuracy\t{:.6}", diag.prior_accuracy).expect("write to string");
    writeln!(summary, "encoded_accuracy\t{:.6}", diag.encoded_accuracy).expect("write to string");
    writeln!(summary, "balanced_accuracy\t{:.6}", diag.disc_balanced_accuracy).expect("write to string");
    let mut moments = String::from("modality\tdim\tmean\tvariance\n");
    moments_rows(&mut moments, "image", &diag.image);
    moments_rows(&mut moments, "text", &diag.text);
    moments_rows(&mut moments, "pooled", &diag.pooled);
    prepare_out(out, cfg)?;
    write_file(&out.join("diagnostics.tsv"), &summary)?;
    write_file(&out.join("moments.tsv"), &moments)?;
    write_file(&out.join("projection.tsv"), &projection_table(&diag.projection))?;
    print!("{summary}");
    Ok(())
}

fn retrieve(cfg: &RunConfig, out: &Path, item: usize, direction: Direction) -> Result<(), Failure> {
    let (dataset, model, params) = trained_model(cfg)?;
    let split = cfg.split.unwrap_or(Split::Test);
    let k = cfg.ks().into_iter().max().expect("nonempty K list");
    let (i2t, t2i) =
        cross_modal_eval(&params, &model, &dataset, split, &[k]).map_err(|e| Failure::Run(e.to_string()))?;
    let report = match direction {
        Direction::ImageToText => i2t,
        Direction::TextToImage => t2i,
    };
    let row = report.query_items.iter().position(|&q| q == item).ok_or_else(|| {
        Failure::Run(format!("{direction} query item {item} is not a paired item of the {} split", split_name(split)))
    })?;
    let paired = |g: usize| match direction {
        Direction::ImageToText => dataset.pairs.contains(&(item, g)),
        Direction::TextToImage => dataset.pairs.contains(&(g, item)),
    };
    let mut table = String::from("rank\titem\tmatch\n");
    for (rank, &pos) in report.rankings[row].iter().enumerate() {
        let g = report.gallery_items[pos];
        writeln!(table, "{}\t{g}\t{}", rank + 1, u8::from(paired(g))).expect("write to string");
    }
    prepare_out(out, cfg)?;
    write_file(&out.join("retrieve.tsv"), &table)?;
    print!("{table}");
    Ok(())
}
