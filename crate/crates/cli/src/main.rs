//! `vatgi`: train, parse, evaluate, generate and gradient-check.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use vatgi_core::corpus::{generate_synthetic, load_corpus, save_corpus, SynthConfig};
use vatgi_core::decode::{
    aggregate, baseline_tree, bracket_counts, parse_tree_file, scf1_counts, write_tree_file, Averaging, BaselineKind,
    TreeRecord,
};
use vatgi_core::training::{verification_suite, Checkpoint, Trainer};
use vatgi_core::{ExampleBundle, Mode, RunConfig};

/// Differences at or above this fail `vatgi gradcheck`.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "vatgi", version, about = "Grammar induction from text, speech and images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a parser and write checkpoint, metrics log and resolved config.
    Train(TrainArgs),
    /// Decode trees with a checkpoint or a baseline.
    Parse(ParseArgs),
    /// Score predicted trees against gold trees.
    Eval(EvalArgs),
    /// Generate a synthetic corpus.
    Gen(GenArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML file with RunConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config field, e.g. `--set learning_rate=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Corpus with gold trees for per-epoch sentence F1.
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long, required_unless_present = "baseline")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    /// Tree file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write every chart score as JSON lines.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Ignore the checkpoint and emit baseline trees.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Corpus mode for baseline runs; checkpoints carry their own.
    #[arg(long)]
    textless: bool,
    /// Seed for the random baseline.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Left,
    Right,
    Random,
}

impl From<Baseline> for BaselineKind {
    fn from(b: Baseline) -> Self {
        match b {
            Baseline::Left => BaselineKind::Left,
            Baseline::Right => BaselineKind::Right,
            Baseline::Random => BaselineKind::Random,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    F1,
    Scf1,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, value_enum, default_value = "f1")]
    metric: Metric,
    /// tIoU threshold for clip alignment.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args)]
struct GenArgs {
    /// TOML file with generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus file; features go to `<out>.feats`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    textless: bool,
    /// Also write the gold trees in tree-file format.
    #[arg(long)]
    gold: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Parse(a) => parse(a),
        Command::Eval(a) => eval(a),
        Command::Gen(a) => gen(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn read_toml_table(path: &Path) -> Result<toml::Table> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse::<toml::Table>().with_context(|| format!("parsing {}", path.display()))
}

/// A bare override value is read as TOML, falling back to a string.
fn override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut table = match &args.config {
        Some(p) => read_toml_table(p)?,
        None => toml::Table::new(),
    };
    for o in &args.overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!("override {o:?} is not KEY=VALUE");
        };
        table.insert(k.trim().to_string(), override_value(v.trim()));
    }
    let config: RunConfig = table.try_into().context("invalid config")?;
    Ok(config)
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut config = resolve_config(&a.config)?;
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    let corpus = load_corpus(&a.corpus, config.mode).with_context(|| format!("loading {}", a.corpus.display()))?;
    let heldout = match &a.heldout {
        Some(p) => load_corpus(p, config.mode).with_context(|| format!("loading {}", p.display()))?,
        None => Vec::new(),
    };
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.toml"), toml::to_string(&config)?)?;
    let mut trainer = Trainer::new(config, &corpus)?;
    let mut log = BufWriter::new(File::create(a.out.join("metrics.jsonl"))?);
    let mut io_err = None;
    trainer.fit(&corpus, &heldout, |m, _| {
        let line = serde_json::to_string(m)?;
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            io_err = Some(e);
        }
        eprintln!("epoch {} total {:.4} (rec {:.4}, cl {:.4}, rep {:.4})", m.epoch, m.total, m.l_rec, m.l_cl, m.l_rep);
        Ok(())
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    trainer.checkpoint().save(&a.out.join("checkpoint.json"))?;
    Ok(ExitCode::SUCCESS)
}

fn tree_record(b: &ExampleBundle, tree: vatgi_core::BinaryTree, mode: Mode) -> TreeRecord {
    let labels = match (&b.tokens, mode) {
        (Some(t), Mode::Full) => t.clone(),
        _ => (0..b.leaf_count()).map(|i| i.to_string()).collect(),
    };
    let rec = TreeRecord::new(b.id.clone(), tree, labels);
    match mode {
        Mode::Full => rec,
        Mode::Textless => rec.with_clips(b.speech.clips.clone()),
    }
}

fn parse(a: ParseArgs) -> Result<ExitCode> {
    let mut records = Vec::new();
    if let Some(kind) = a.baseline {
        let mode = if a.textless { Mode::Textless } else { Mode::Full };
        let corpus = load_corpus(&a.corpus, mode)?;
        for (k, b) in corpus.iter().enumerate() {
            let tree = baseline_tree(b.leaf_count(), kind.into(), a.seed.wrapping_add(k as u64))?;
            records.push(tree_record(b, tree, mode));
        }
        if a.scores.is_some() {
            bail!("--scores needs a checkpoint, not a baseline");
        }
    } else {
        let path = a.checkpoint.as_ref().expect("clap requires a checkpoint without --baseline");
        let trainer = Trainer::from_checkpoint(Checkpoint::load(path)?)?;
        let mode = trainer.config.mode;
        let corpus = load_corpus(&a.corpus, mode)?;
        let parser = trainer.parser();
        let mut scores = match &a.scores {
            Some(p) => Some(BufWriter::new(File::create(p)?)),
            None => None,
        };
        for b in &corpus {
            let tree = match scores.as_mut() {
                Some(out) => {
                    let analysis = parser.analyse(b)?;
                    writeln!(out, "{}", serde_json::to_string(&analysis)?)?;
                    analysis.tree
                }
                None => parser.parse(b)?,
            };
            records.push(tree_record(b, tree, mode));
        }
        if let Some(mut out) = scores {
            out.flush()?;
        }
    }
    let mut out = BufWriter::new(File::create(&a.out)?);
    write_tree_file(&mut out, &records)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn read_trees(path: &Path) -> Result<Vec<TreeRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_tree_file(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

/// Pairs gold records with predictions by id, or lists every unpaired id.
fn pair_by_id<'a>(pred: &'a [TreeRecord], gold: &'a [TreeRecord]) -> Result<Vec<(&'a TreeRecord, &'a TreeRecord)>> {
    let by_id: BTreeMap<&str, &TreeRecord> = pred.iter().map(|r| (r.id.as_str(), r)).collect();
    let gold_ids: BTreeMap<&str, ()> = gold.iter().map(|r| (r.id.as_str(), ())).collect();
    let missing: Vec<&str> = gold_ids.keys().filter(|id| !by_id.contains_key(*id)).copied().collect();
    let extra: Vec<&str> = by_id.keys().filter(|id| !gold_ids.contains_key(*id)).copied().collect();
    if by_id.len() != pred.len() || gold_ids.len() != gold.len() {
        bail!("duplicate ids in the prediction or gold file");
    }
    if !missing.is_empty() || !extra.is_empty() {
        bail!(
            "ids do not pair up; missing predictions: [{}]; predictions without gold: [{}]",
            missing.join(", "),
            extra.join(", ")
        );
    }
    Ok(gold.iter().map(|g| (by_id[g.id.as_str()], g)).collect())
}

#[derive(Serialize)]
#[serde(untagged)]
enum Report {
    F1 { corpus_f1: f64, sent_f1: f64 },
    Scf1 { corpus_scf1: f64, sent_scf1: f64 },
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let (pred, gold) = (read_trees(&a.pred)?, read_trees(&a.gold)?);
    let pairs = pair_by_id(&pred, &gold)?;
    let report = match a.metric {
        Metric::F1 => {
            let p: Vec<_> = pairs.iter().map(|(p, _)| p.tree.clone()).collect();
            let g: Vec<_> = pairs.iter().map(|(_, g)| g.tree.clone()).collect();
            let counts = bracket_counts(&p, &g)?;
            Report::F1 {
                corpus_f1: aggregate(&counts, Averaging::Corpus),
                sent_f1: aggregate(&counts, Averaging::Sentence),
            }
        }
        Metric::Scf1 => {
            let mut counts = Vec::with_capacity(pairs.len());
            for (p, g) in &pairs {
                let (Some(pc), Some(gc)) = (&p.clips, &g.clips) else {
                    bail!("example {}: scf1 needs clip intervals on every leaf", g.id);
                };
                counts.push(
                    scf1_counts(&p.tree, pc, &g.tree, gc, a.threshold).with_context(|| format!("example {}", g.id))?,
                );
            }
            Report::Scf1 {
                corpus_scf1: aggregate(&counts, Averaging::Corpus),
                sent_scf1: aggregate(&counts, Averaging::Sentence),
            }
        }
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn gen(a: GenArgs) -> Result<ExitCode> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_toml_table(p)?.try_into().context("invalid generator config")?,
        None => SynthConfig::default(),
    };
    if let Some(c) = a.count {
        cfg.sentences = c;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.textless |= a.textless;
    let corpus = generate_synthetic(&cfg)?;
    save_corpus(&a.out, &corpus.bundles)?;
    if let Some(path) = &a.gold {
        let mode = if cfg.textless { Mode::Textless } else { Mode::Full };
        let mut records = Vec::with_capacity(corpus.bundles.len());
        for (b, tree) in corpus.bundles.iter().zip(corpus.gold_trees()?) {
            let mut rec = tree_record(b, tree, mode);
            if let (Mode::Textless, Some(c)) = (mode, &b.gold_clips) {
                rec = rec.with_clips(c.clone());
            }
            records.push(rec);
        }
        let mut out = BufWriter::new(File::create(path)?);
        write_tree_file(&mut out, &records)?;
        out.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let mut ok = true;
    for r in verification_suite(a.seed)? {
        ok &= r.report.max_relative_error < GRADCHECK_TOLERANCE;
        println!("{}", serde_json::to_string(&r)?);
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
