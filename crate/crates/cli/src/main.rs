//! `tekg`: mine temporal rules, fit gap densities, train and evaluate.

mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use tekg::dataset::{write_quads, Splits};
use tekg::density::DensityTable;
use tekg::graph::TekgGraph;
use tekg::learner::{sha256_hex, Model, Scoring};
use tekg::metrics::{evaluate_dataset, evaluate_fallback, forecast_resplit};
use tekg::miner::{read_rules, write_paths, RulePattern};
use tekg::pipeline::{background_graph, densities_text, fit_densities, mine_rules, rules_text, train_graph, train_model};
use tekg::predictor::{write_predictions, Predictor, Query};
use tekg::synth::{generate_planted_tkg, PlantSpec};
use tekg::time::TimePoint;

use config::RunConfig;
use manifest::Manifest;

#[derive(Parser, Debug)]
#[command(name = "tekg", version, about = "Interval time prediction on temporal knowledge graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Predict durations instead of end times
    #[arg(long, global = true)]
    duration: bool,
    /// Only read facts that start before each query
    #[arg(long, global = true)]
    forecast: bool,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override, e.g. `--set train.epochs=5`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Event,
    Rule,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Normalize dataset files and write symbol tables
    Convert,
    /// Sample temporal walks and extract rule patterns
    Mine,
    /// Fit gap densities for mined patterns
    Fit,
    /// Train the attention controller
    Train,
    /// Predict intervals for the test split
    Predict,
    /// Predict and score the test split
    Eval,
    /// Generate a synthetic dataset with planted rules
    Synth,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Convert => "convert",
            Command::Mine => "mine",
            Command::Fit => "fit",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Eval => "eval",
            Command::Synth => "synth",
        }
    }
}

/// A failure with its exit code.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Dependency(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Dependency(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Dependency(e) => e,
        }
    }
}

impl From<tekg::Error> for Failure {
    fn from(e: tekg::Error) -> Self {
        match e {
            tekg::Error::Config(_) => Failure::Usage(e.into()),
            _ => Failure::Data(e.into()),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

struct Ctx {
    cmd: Command,
    cfg: RunConfig,
    forecast: bool,
    manifest: Manifest,
}

impl Ctx {
    fn out(&self) -> &Path {
        &self.cfg.out
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    /// Reads an upstream artifact or names the stage that produces it.
    fn require(&mut self, name: &str, stage: &str) -> Outcome<Vec<u8>> {
        let p = self.path(name);
        if !p.is_file() {
            return Err(Failure::Dependency(anyhow!(
                "missing {}; run `tekg {stage}` first",
                p.display()
            )));
        }
        let bytes = std::fs::read(&p).with_context(|| format!("cannot read {}", p.display())).map_err(data)?;
        self.manifest.input(name, &bytes);
        Ok(bytes)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Outcome<()> {
        let p = self.path(name);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).map_err(data)?;
        }
        std::fs::write(&p, bytes).with_context(|| format!("cannot write {}", p.display())).map_err(data)?;
        self.manifest.output(name, bytes);
        Ok(())
    }

    fn splits(&self) -> Outcome<Splits> {
        let d = self
            .cfg
            .data
            .as_ref()
            .ok_or_else(|| usage(anyhow!("the configuration has no [data] section")))?;
        let mut s = Splits::load(&d.train, d.valid.as_deref(), d.test.as_deref(), d.schema, d.granularity)?;
        if let Some(r) = self.cfg.eval.resplit {
            let all: Vec<_> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
            let [train, valid, test] = forecast_resplit(&all, TimePoint(r.valid_start), TimePoint(r.test_start))?;
            s.train = train;
            s.valid = valid;
            s.test = test;
        }
        Ok(s)
    }

    fn patterns(&mut self, splits: &Splits) -> Outcome<(Vec<u8>, Vec<RulePattern>)> {
        let bytes = self.require("rules.tsv", "mine")?;
        let text = String::from_utf8(bytes.clone()).map_err(data)?;
        let rules = read_rules(&text, &splits.vocab)?;
        Ok((bytes, rules.into_iter().map(|r| r.pattern).collect()))
    }

    fn densities(&mut self) -> Outcome<(Vec<u8>, DensityTable)> {
        let bytes = self.require("densities.tsv", "fit")?;
        let text = String::from_utf8(bytes.clone()).map_err(data)?;
        Ok((bytes.clone(), DensityTable::read_tsv(&text)?))
    }

    fn model(&mut self) -> Outcome<Model> {
        let bytes = self.require("model.json", "train")?;
        let text = String::from_utf8(bytes).map_err(data)?;
        Ok(Model::from_json(&text)?)
    }
}

fn convert(ctx: &mut Ctx) -> Outcome<()> {
    let s = ctx.splits()?;
    for (name, quads) in [("data/train.txt", &s.train), ("data/valid.txt", &s.valid), ("data/test.txt", &s.test)] {
        let mut buf = Vec::new();
        write_quads(&mut buf, quads.iter().copied(), &s.vocab, s.schema, s.granularity)?;
        ctx.write(name, &buf)?;
    }
    let mut ent = Vec::new();
    s.vocab.entities.write_tsv(&mut ent)?;
    ctx.write("data/entities.tsv", &ent)?;
    let mut pred = Vec::new();
    s.vocab.predicates.write_tsv(&mut pred)?;
    ctx.write("data/predicates.tsv", &pred)?;
    let g = train_graph(&s)?;
    let mut dump = Vec::new();
    g.write_dump(&mut dump)?;
    ctx.write("tekg.tsv", &dump)?;
    println!("{} train, {} valid, {} test facts; {} events", s.train.len(), s.valid.len(), s.test.len(), g.len());
    Ok(())
}

fn mine(ctx: &mut Ctx) -> Outcome<()> {
    let s = ctx.splits()?;
    let g = train_graph(&s)?;
    let out = mine_rules(&g, &ctx.cfg.miner, ctx.cfg.seed)?;
    let rules = rules_text(&out.patterns, &g)?;
    ctx.write("rules.tsv", &rules)?;
    let mut paths = Vec::new();
    write_paths(&mut paths, &out.paths)?;
    ctx.write("paths.tsv", &paths)?;
    println!("{} walks, {} patterns", out.paths.len(), out.patterns.len());
    Ok(())
}

fn fit(ctx: &mut Ctx) -> Outcome<()> {
    let s = ctx.splits()?;
    let g = train_graph(&s)?;
    let (_, patterns) = ctx.patterns(&s)?;
    let table = fit_densities(&g, &patterns, &ctx.cfg.pipeline());
    ctx.write("densities.tsv", &densities_text(&table)?)?;
    println!("{} density rows", table.rows().len());
    Ok(())
}

fn train(ctx: &mut Ctx) -> Outcome<()> {
    let s = ctx.splits()?;
    let g = train_graph(&s)?;
    let (rules, patterns) = ctx.patterns(&s)?;
    let (dens, table) = ctx.densities()?;
    let t = train_model(&g, &s, &patterns, &table, sha256_hex(&rules), sha256_hex(&dens), &ctx.cfg.pipeline())?;
    let json = t.model.to_json()? + "\n";
    ctx.write("model.json", json.as_bytes())?;
    for h in &t.outcome.history {
        let v = h.valid_loss.map_or_else(|| "NA".to_owned(), |v| format!("{v:.6}"));
        println!("epoch {}\ttrain {:.6}\tvalid {v}", h.epoch, h.train_loss);
    }
    Ok(())
}

struct Loaded {
    splits: Splits,
    graph: TekgGraph,
    patterns: Vec<RulePattern>,
    densities: DensityTable,
    model: Model,
}

fn load_for_prediction(ctx: &mut Ctx) -> Outcome<Loaded> {
    let model = ctx.model()?;
    let splits = ctx.splits()?;
    let (rules, patterns) = ctx.patterns(&splits)?;
    let (dens, densities) = ctx.densities()?;
    model
        .check_inputs(&rules, &dens)
        .map_err(|e| Failure::Dependency(anyhow!(e).context("model inputs changed; rerun `tekg train`")))?;
    let graph = background_graph(&splits)?;
    Ok(Loaded {
        splits,
        graph,
        patterns,
        densities,
        model,
    })
}

fn predict(ctx: &mut Ctx) -> Outcome<()> {
    let l = load_for_prediction(ctx)?;
    let p = Predictor::new(&l.model, &l.graph, &l.patterns, &l.densities);
    let queries: Vec<Query> = l.splits.test.iter().map(|q| Query::from_quad(q, ctx.forecast)).collect();
    let preds = p.predict_all(&queries, None)?;
    let mut buf = Vec::new();
    write_predictions(&mut buf, &l.graph, &l.patterns, &l.splits.test, &preds)?;
    ctx.write("predictions.tsv", &buf)?;
    println!("{} predictions, {} fallback", preds.len(), preds.iter().filter(|p| p.fallback).count());
    Ok(())
}

fn eval(ctx: &mut Ctx) -> Outcome<()> {
    let l = load_for_prediction(ctx)?;
    let p = Predictor::new(&l.model, &l.graph, &l.patterns, &l.densities);
    let ev = evaluate_dataset(&p, &l.splits.test, ctx.forecast)?;
    let mut buf = Vec::new();
    write_predictions(&mut buf, &l.graph, &l.patterns, &ev.queries, &ev.predictions)?;
    ctx.write("predictions.tsv", &buf)?;
    let mut report = Vec::new();
    ev.report.write_tsv(&mut report)?;
    ctx.write("report.tsv", &report)?;
    println!("{}", ev.report);
    let base = evaluate_fallback(&l.model.fallback, l.model.schema, &l.splits.vocab, &l.splits.test)?;
    if let Some(a) = base.overall.aeiou_mean() {
        println!("fallback aeIOU:    {a:.6}");
    }
    if ev.report.overall.count == 0 {
        return Err(data(anyhow!("no test query has a known time")));
    }
    Ok(())
}

fn synth(ctx: &mut Ctx) -> Outcome<()> {
    let spec = ctx.cfg.synth.clone().unwrap_or_else(|| {
        PlantSpec::planted(tekg::density::Density::Gaussian { mu: 10.0, sigma: 1.0 }, 500, 0.5, ctx.cfg.seed)
    });
    let d = generate_planted_tkg(&spec)?;
    let s = &d.splits;
    for (name, quads) in [("data/train.txt", &s.train), ("data/valid.txt", &s.valid), ("data/test.txt", &s.test)] {
        let mut buf = Vec::new();
        write_quads(&mut buf, quads.iter().copied(), &s.vocab, s.schema, s.granularity)?;
        ctx.write(name, &buf)?;
    }
    let mut truth = Vec::new();
    tekg::synth::write_truth(&mut truth, &d)?;
    ctx.write("data/truth.tsv", &truth)?;
    let cfg = format!(
        "[data]\ntrain = \"data/train.txt\"\ntest = \"data/test.txt\"\nschema = \"{}\"\ngranularity = \"year\"\n",
        s.schema
    );
    ctx.write("config.toml", cfg.as_bytes())?;
    println!("{} train facts, {} held-out queries in {}", s.train.len(), s.test.len(), ctx.out().display());
    Ok(())
}

fn run(cli: &Cli) -> Outcome<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides).map_err(usage)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(m) = cli.mode {
        cfg.train.scoring = match m {
            Mode::Event => Scoring::Event,
            Mode::Rule => Scoring::Rule,
        };
    }
    cfg.train.duration |= cli.duration;
    cfg.eval.forecast |= cli.forecast;
    if cli.command != Command::Synth {
        cfg.validate().map_err(usage)?;
    }
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(usage)?;
    }
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("cannot create {}", cfg.out.display()))
        .map_err(data)?;
    let manifest = Manifest::begin(cli.command.name(), &cfg).map_err(data)?;
    let forecast = cfg.eval.forecast;
    let mut ctx = Ctx {
        cmd: cli.command,
        cfg,
        forecast,
        manifest,
    };
    match ctx.cmd {
        Command::Convert => convert(&mut ctx)?,
        Command::Mine => mine(&mut ctx)?,
        Command::Fit => fit(&mut ctx)?,
        Command::Train => train(&mut ctx)?,
        Command::Predict => predict(&mut ctx)?,
        Command::Eval => eval(&mut ctx)?,
        Command::Synth => synth(&mut ctx)?,
    }
    ctx.manifest.finish(&ctx.cfg.out).map_err(data)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
