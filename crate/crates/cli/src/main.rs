use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use drgnn::config::parse_extended;
use drgnn::data::{
    filter_min_count, load_exposure_pair, read_interactions, shift_kl, split_popularity, split_temporal,
    synthetic_interactions, write_interactions,
};
use drgnn::dro::generalization_bound;
use drgnn::eval::evaluate;
use drgnn::pipeline::{best_alpha, save_sweep_csv, sweep_alpha};
use drgnn::trainer::write_log_csv;
use drgnn::{
    BoundInputs, Dataset, EmbeddingTable, ErrorClass, IdMap, InteractionGraph, LayerCombine, Optimizer,
    RunConfig, SyntheticConfig, Trainer, Variant,
};

#[derive(Parser)]
#[command(name = "drgnn", version, about = "Robust graph collaborative filtering")]
struct Cli {
    /// Log at debug level (RUST_LOG takes precedence).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split an interaction log into train/valid/test files.
    Split(SplitArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on held-out interactions.
    Evaluate(EvaluateArgs),
    /// Train and test once per alpha value.
    SweepAlpha(SweepArgs),
    /// Item-frequency KL divergence of test from train.
    ShiftKl(ShiftArgs),
    /// Evaluate the per-node generalization bound.
    Bound(BoundArgs),
    /// Write embeddings of a checkpoint with their raw ids.
    DumpEmbeddings(DumpArgs),
    /// Generate a synthetic interaction log.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Popularity,
    Temporal,
    Exposure,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Interaction log; for exposure mode, the biased rating log.
    #[arg(long)]
    input: PathBuf,
    /// Randomly exposed rating log (exposure mode).
    #[arg(long)]
    exposed: Option<PathBuf>,
    /// Test interactions sampled per item (popularity mode).
    #[arg(long, default_value_t = 3)]
    quota: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drop users and items with fewer interactions before splitting.
    #[arg(long, default_value_t = 0)]
    min_count: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// File prefix; defaults to the input file stem.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Drgnn,
    Lightgcn,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Drgnn => Variant::DrGnn,
            VariantArg::Lightgcn => Variant::LightGcn,
        }
    }
}

fn extended(text: &str) -> Result<f64, String> {
    parse_extended(text).ok_or_else(|| format!("{text:?} is not a number or \"inf\""))
}

/// Flags layered on top of `--config`.
#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    min_count: Option<usize>,
    /// Lagrange multiplier of the KL ball; `inf` disables reweighting.
    #[arg(long, value_parser = extended)]
    alpha: Option<f64>,
    #[arg(long)]
    refresh_period: Option<usize>,
    #[arg(long, value_enum)]
    gea: Option<Switch>,
    /// Weight kept on observed neighbors; setting it turns edge addition on
    /// unless `--gea off` is also given.
    #[arg(long)]
    gea_gamma: Option<f64>,
    #[arg(long)]
    gea_candidates: Option<usize>,
    #[arg(long)]
    gea_added: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long, value_parser = ["mean", "last"])]
    combine: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        set(&mut cfg.data.train, self.train.clone().map(Some));
        set(&mut cfg.data.valid, self.valid.clone().map(Some));
        set(&mut cfg.data.test, self.test.clone().map(Some));
        set(&mut cfg.data.min_count, self.min_count);
        set(&mut cfg.dro.alpha, self.alpha);
        set(&mut cfg.dro.refresh_period, self.refresh_period);
        if self.gea_gamma.is_some() {
            cfg.gea.enabled = true;
        }
        set(&mut cfg.gea.gamma, self.gea_gamma);
        set(&mut cfg.gea.enabled, self.gea.map(|s| matches!(s, Switch::On)));
        set(&mut cfg.gea.candidate_size, self.gea_candidates);
        set(&mut cfg.gea.added_per_node, self.gea_added);
        set(&mut cfg.model.dim, self.dim);
        set(&mut cfg.model.layers, self.layers);
        set(
            &mut cfg.model.combine,
            self.combine.as_deref().map(|c| if c == "last" { LayerCombine::Last } else { LayerCombine::Mean }),
        );
        set(&mut cfg.train.learning_rate, self.lr);
        set(&mut cfg.train.l2_lambda, self.l2);
        set(&mut cfg.train.epochs, self.epochs);
        set(&mut cfg.train.batch_size, self.batch_size);
        set(&mut cfg.train.seed, self.seed);
        set(&mut cfg.train.patience, self.patience);
        match self.optimizer {
            Some(OptimizerKind::Sgd) => cfg.train.optimizer = Optimizer::Sgd,
            Some(OptimizerKind::Adam) if !matches!(cfg.train.optimizer, Optimizer::Adam { .. }) => {
                cfg.train.optimizer = Optimizer::default()
            }
            _ => {}
        }
        set(&mut cfg.eval.k, self.k);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, value_enum, default_value = "drgnn")]
    variant: VariantArg,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    /// Continue from the checkpoint in `--out` instead of starting fresh.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Training interactions, masked out of rankings; defaults to the path
    /// recorded in the checkpoint's run.json.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Held-out interactions; defaults to the recorded test file.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Include per-user metrics.
    #[arg(long)]
    per_user: bool,
    /// Metrics JSON; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Comma-separated alpha values; `inf` allowed.
    #[arg(long, value_delimiter = ',', value_parser = extended, required = true)]
    alphas: Vec<f64>,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ShiftArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, value_parser = extended)]
    alpha: f64,
    #[arg(long)]
    degree: f64,
    #[arg(long)]
    rho: f64,
    /// Size of the hypothesis space.
    #[arg(long)]
    hypotheses: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    /// Propagated embeddings used for scoring.
    Final,
    /// Trainable layer-0 embeddings.
    Base,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "final")]
    which: Which,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    users: usize,
    #[arg(long, default_value_t = 1000)]
    items: usize,
    #[arg(long, default_value_t = 10)]
    topics: usize,
    #[arg(long, default_value_t = 1.2)]
    zipf: f64,
    #[arg(long, default_value_t = 20)]
    per_user: usize,
    #[arg(long, default_value_t = 0.5)]
    preference_share: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<drgnn::Error>() {
            return match err.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numeric => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::SweepAlpha(a) => cmd_sweep_alpha(a),
        Command::ShiftKl(a) => cmd_shift_kl(a),
        Command::Bound(a) => cmd_bound(a),
        Command::DumpEmbeddings(a) => cmd_dump(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

/// `run.json` next to `target`, or inside it when it is a directory.
fn run_json_for(target: &Path) -> PathBuf {
    if target.is_dir() {
        target.join("run.json")
    } else {
        target.parent().unwrap_or(Path::new(".")).join("run.json")
    }
}

fn cmd_split(a: SplitArgs) -> anyhow::Result<()> {
    let mut bundle = match a.mode {
        Mode::Exposure => {
            let Some(exposed) = &a.exposed else {
                bail!(drgnn::Error::InvalidArgument("exposure mode needs --exposed".into()));
            };
            load_exposure_pair(&a.input, exposed)?
        }
        Mode::Popularity | Mode::Temporal => {
            let rows = filter_min_count(&read_interactions(&a.input)?, a.min_count);
            match a.mode {
                Mode::Popularity => split_popularity(&rows, a.quota, a.seed)?,
                _ => split_temporal(&rows)?,
            }
        }
    };
    bundle.meta.min_count = a.min_count;
    let name = match &a.name {
        Some(n) => n.clone(),
        None => a.input.file_stem().map_or("split".into(), |s| s.to_string_lossy().into_owned()),
    };
    bundle.write(&a.out_dir, &name)?;
    let mode = match a.mode {
        Mode::Popularity => "popularity",
        Mode::Temporal => "temporal",
        Mode::Exposure => "exposure",
    };
    write_json(
        &a.out_dir.join("run.json"),
        &json!({
            "command": "split",
            "mode": mode,
            "input": a.input,
            "exposed": a.exposed,
            "quota": a.quota,
            "seed": a.seed,
            "min_count": a.min_count,
            "name": name,
            "meta": bundle.meta,
        }),
    )?;
    println!(
        "train {} valid {} test {} shift_kl {:.6}",
        bundle.meta.train, bundle.meta.valid, bundle.meta.test, bundle.meta.shift_kl
    );
    Ok(())
}

fn load_dataset(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let Some(train) = &cfg.data.train else {
        bail!(drgnn::Error::Config("no training file: pass --train or set data.train".into()));
    };
    Ok(Dataset::load(train, cfg.data.valid.as_deref(), cfg.data.test.as_deref(), cfg.data.min_count)?)
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let variant = Variant::from(a.variant);
    let (cfg, dataset, mut trainer) = if a.resume {
        let recorded: RunConfig = RunConfig::load(&a.out.join("run.json"))?;
        let mut cfg = recorded.clone();
        set(&mut cfg.train.epochs, a.cfg.epochs);
        let dataset = load_dataset(&cfg)?;
        let mut trainer = Trainer::resume(&a.out, dataset.train_graph()?)?;
        trainer.set_epochs(cfg.train.epochs);
        log::info!("resuming at epoch {} of {}", trainer.epoch(), cfg.train.epochs);
        (cfg, dataset, trainer)
    } else {
        let cfg = a.cfg.resolve()?;
        let dataset = load_dataset(&cfg)?;
        let trainer = Trainer::new(dataset.train_graph()?, &cfg, variant)?;
        (cfg, dataset, trainer)
    };
    log::info!(
        "{} users, {} items, {} training interactions",
        dataset.num_users(),
        dataset.num_items(),
        dataset.train.len()
    );
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    cfg.save(&a.out.join("run.json"))?;
    dataset.ids.write(&a.out.join("ids.tsv"))?;

    let valid_lists = dataset.valid_lists();
    let summary = trainer.fit(Some(&valid_lists), |_| {})?;
    trainer.save_checkpoint(&a.out)?;

    let log_path = a.out.join("log.csv");
    let mut history = Vec::new();
    if a.resume && log_path.exists() {
        history = read_log(&log_path)?;
    }
    history.extend(summary.history.iter().cloned());
    write_log_csv(&log_path, &history)?;

    let fin = trainer.final_embeddings()?;
    let k = cfg.eval.k;
    let score = |lists: &[Vec<usize>]| -> anyhow::Result<serde_json::Value> {
        if lists.iter().all(Vec::is_empty) {
            return Ok(serde_json::Value::Null);
        }
        Ok(serde_json::to_value(evaluate(&fin, trainer.graph(), lists, k, false)?)?)
    };
    let metrics = json!({
        "variant": trainer.variant(),
        "epochs_run": summary.epochs_run,
        "stopped_early": summary.stopped_early,
        "best_epoch": summary.best_epoch,
        "valid": score(&valid_lists)?,
        "test": score(&dataset.test_lists())?,
    });
    write_json(&a.out.join("metrics.json"), &metrics)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

fn read_log(path: &Path) -> anyhow::Result<Vec<drgnn::EpochRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                bail!(drgnn::Error::Data(format!("{}: bad log line {line:?}", path.display())));
            }
            Ok(drgnn::EpochRecord {
                epoch: f[0].parse()?,
                loss: f[1].parse()?,
                val_ndcg: if f[2].is_empty() { None } else { Some(f[2].parse()?) },
            })
        })
        .collect()
}

/// The recorded run configuration of a checkpoint, if it has one.
fn recorded_config(dir: &Path) -> anyhow::Result<Option<RunConfig>> {
    let path = dir.join("run.json");
    if path.exists() {
        Ok(Some(RunConfig::load(&path)?))
    } else {
        Ok(None)
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let recorded = recorded_config(&a.checkpoint)?;
    let pick = |flag: &Option<PathBuf>, field: fn(&RunConfig) -> Option<PathBuf>, what: &str| {
        flag.clone()
            .or_else(|| recorded.as_ref().and_then(field))
            .ok_or_else(|| drgnn::Error::Config(format!("no {what} file: pass --{what}")))
    };
    let train_path = pick(&a.train, |c| c.data.train.clone(), "train")?;
    let test_path = pick(&a.test, |c| c.data.test.clone(), "test")?;
    let k = a.k.or(recorded.as_ref().map(|c| c.eval.k)).unwrap_or(20);
    let min_count = recorded.as_ref().map_or(0, |c| c.data.min_count);

    let ids = IdMap::read(&a.checkpoint.join("ids.tsv"))?;
    let final_emb = EmbeddingTable::load(&a.checkpoint.join("final.txt"))?;
    let (train, _) = ids.encode(&filter_min_count(&read_interactions(&train_path)?, min_count));
    let (test, skipped) = ids.encode(&read_interactions(&test_path)?);
    if skipped > 0 {
        log::warn!("{skipped} test interactions use ids unknown to the checkpoint");
    }
    let dataset = Dataset {
        ids,
        train,
        valid: Vec::new(),
        test,
    };
    let graph: InteractionGraph = dataset.train_graph()?;
    let report = evaluate(&final_emb, &graph, &dataset.test_lists(), k, a.per_user)?;
    let value = serde_json::to_value(&report)?;
    match &a.out {
        Some(path) => {
            write_json(path, &value)?;
            write_json(
                &run_json_for(path),
                &json!({
                    "command": "evaluate",
                    "checkpoint": a.checkpoint,
                    "train": train_path,
                    "test": test_path,
                    "k": k,
                    "per_user": a.per_user,
                }),
            )?;
        }
        None => println!("{}", serde_json::to_string_pretty(&value)?),
    }
    Ok(())
}

fn cmd_sweep_alpha(a: SweepArgs) -> anyhow::Result<()> {
    let cfg = a.cfg.resolve()?;
    let dataset = load_dataset(&cfg)?;
    for &alpha in &a.alphas {
        if !(alpha > 0.0) {
            bail!(drgnn::Error::InvalidAlpha(alpha));
        }
    }
    let rows = sweep_alpha(&dataset, &cfg, &a.alphas)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_sweep_csv(&a.out, &rows)?;
    cfg.save(&run_json_for(&a.out))?;
    for r in &rows {
        match &r.error {
            Some(e) => println!("alpha {} failed: {e}", r.alpha),
            None => println!("alpha {} ndcg {:.6} kl_of_pstar {:.6}", r.alpha, r.ndcg, r.kl_of_pstar),
        }
    }
    if let Some(best) = best_alpha(&rows) {
        println!("best alpha {best}");
    }
    Ok(())
}

fn cmd_shift_kl(a: ShiftArgs) -> anyhow::Result<()> {
    let train = read_interactions(&a.train)?;
    let test = read_interactions(&a.test)?;
    let kl = shift_kl(&train, &test)?;
    println!("{kl}");
    if let Some(path) = &a.json {
        write_json(
            path,
            &json!({ "train": a.train, "test": a.test, "shift_kl": kl }),
        )?;
    }
    Ok(())
}

fn cmd_bound(a: BoundArgs) -> anyhow::Result<()> {
    let b = generalization_bound(&BoundInputs {
        alpha: a.alpha,
        degree: a.degree,
        rho: a.rho,
        hypothesis_count: a.hypotheses,
    })?;
    println!("{b}");
    Ok(())
}

fn cmd_dump(a: DumpArgs) -> anyhow::Result<()> {
    let ids = IdMap::read(&a.checkpoint.join("ids.tsv"))?;
    let file = match a.which {
        Which::Final => "final.txt",
        Which::Base => "embeddings.txt",
    };
    let table = EmbeddingTable::load(&a.checkpoint.join(file))?;
    let (u, i) = (ids.num_users(), ids.num_items());
    if table.rows() != u + i {
        bail!(drgnn::Error::Shape(format!(
            "{file} has {} rows but the id map has {u} users and {i} items",
            table.rows()
        )));
    }
    let mut out = String::new();
    for node in 0..u + i {
        let (role, raw) = if node < u { ("user", ids.user_name(node)) } else { ("item", ids.item_name(node - u)) };
        out.push_str(role);
        out.push('\t');
        out.push_str(raw);
        for v in table.row(node) {
            out.push('\t');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    std::fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let cfg = SyntheticConfig {
        num_users: a.users,
        num_items: a.items,
        num_topics: a.topics,
        zipf_exponent: a.zipf,
        interactions_per_user: a.per_user,
        preference_share: a.preference_share,
        seed: a.seed,
    };
    let rows = synthetic_interactions(&cfg)?;
    write_interactions(&a.out, &rows)?;
    write_json(&run_json_for(&a.out), &json!({ "command": "synth", "config": cfg }))?;
    println!("{} interactions", rows.len());
    Ok(())
}
