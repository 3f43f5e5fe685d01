use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use infergap_core::analysis::AggregationRule;
use infergap_core::config::{CompareMetric, DecodeMethod, RunConfig, StratifyBy};
use infergap_core::corpus::{load_canonical_records, load_dataset, DatasetFormat};
use infergap_core::negatives::Strategy;
use infergap_core::pipeline::{self, Context, Stage};

/// Log verbosity, e.g. `INFERGAP_LOG=info`.
const LOG_ENV: &str = "INFERGAP_LOG";

#[derive(Parser)]
#[command(name = "infergap", version, about = "Contrastive training and evaluation workbench for dialogue inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and write it as canonical JSONL.
    Ingest(IngestArgs),
    /// Train the toy backend and write checkpoints and logs.
    Train(TrainArgs),
    /// Decode answers with a checkpoint.
    Generate(GenerateArgs),
    /// Build negative samples for every example.
    Perturb(PerturbArgs),
    /// Score hypotheses against references.
    Score(ScoreArgs),
    /// Agreement and win/tie/lose statistics for pairwise judgments.
    Agree(AgreeArgs),
    /// Compare two generation files by judgments or automatic scores.
    Compare(CompareArgs),
    /// Check analytic loss gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Train one run per point of a grid over lambda_b, lambda_s, m and strategy.
    Sweep(SweepArgs),
    /// Run pipeline stages end to end from a config.
    Run(RunArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (JSON); flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum FormatArg {
    CanonicalJsonl,
    CiceroJson,
}

impl From<FormatArg> for DatasetFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::CanonicalJsonl => DatasetFormat::CanonicalJsonl,
            FormatArg::CiceroJson => DatasetFormat::CiceroJson,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum StrategyArg {
    Counterfactual,
    NonOptimal,
    ReplaceZs,
    ReplaceMcq,
    InBatch,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Counterfactual => Strategy::Counterfactual,
            StrategyArg::NonOptimal => Strategy::NonOptimal,
            StrategyArg::ReplaceZs => Strategy::ReplaceZs,
            StrategyArg::ReplaceMcq => Strategy::ReplaceMcq,
            StrategyArg::InBatch => Strategy::InBatch,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum StratifyArg {
    Difficulty,
    Question,
}

impl From<StratifyArg> for StratifyBy {
    fn from(s: StratifyArg) -> Self {
        match s {
            StratifyArg::Difficulty => StratifyBy::Difficulty,
            StratifyArg::Question => StratifyBy::Question,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum RuleArg {
    Majority,
    PerJudgment,
}

impl From<RuleArg> for AggregationRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Majority => AggregationRule::Majority,
            RuleArg::PerJudgment => AggregationRule::PerJudgment,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum MetricArg {
    #[value(name = "bleu_1")]
    Bleu1,
    #[value(name = "bleu_2")]
    Bleu2,
    #[value(name = "bleu_3")]
    Bleu3,
    #[value(name = "bleu_4")]
    Bleu4,
    Meteor,
    RougeL,
}

impl From<MetricArg> for CompareMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Bleu1 => CompareMetric::Bleu1,
            MetricArg::Bleu2 => CompareMetric::Bleu2,
            MetricArg::Bleu3 => CompareMetric::Bleu3,
            MetricArg::Bleu4 => CompareMetric::Bleu4,
            MetricArg::Meteor => CompareMetric::Meteor,
            MetricArg::RougeL => CompareMetric::RougeL,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum DecodeArg {
    Greedy,
    TopK,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum StageArg {
    Ingest,
    Train,
    Generate,
    Perturb,
    Score,
    Compare,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Ingest => Stage::Ingest,
            StageArg::Train => Stage::Train,
            StageArg::Generate => Stage::Generate,
            StageArg::Perturb => Stage::Perturb,
            StageArg::Score => Stage::Score,
            StageArg::Compare => Stage::Compare,
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "canonical_jsonl")]
    format: FormatArg,
    /// Canonical JSONL output.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Ingestion summary (JSON).
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

/// Training overrides shared by `train` and `sweep`.
#[derive(Args)]
struct TrainOverrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    effective_batch: Option<usize>,
    #[arg(long)]
    micro_batch: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    tau_b: Option<f64>,
    #[arg(long)]
    tau_s: Option<f64>,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.epochs {
            t.max_epochs = v;
        }
        if let Some(v) = self.lr0 {
            t.lr0 = v;
        }
        if let Some(v) = self.effective_batch {
            t.effective_batch = v;
        }
        if let Some(v) = self.micro_batch {
            t.micro_batch = v;
        }
        if let Some(v) = self.dim {
            t.dim = v;
        }
        if let Some(v) = self.tau_b {
            t.loss.tau_b = v;
        }
        if let Some(v) = self.tau_s {
            t.loss.tau_s = v;
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_name = "FILE")]
    train: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    valid: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[command(flatten)]
    overrides: TrainOverrides,
    #[arg(long)]
    lambda_b: Option<f64>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "canonical_jsonl")]
    format: FormatArg,
    /// Canonical JSONL with a `generated` field per record.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_enum)]
    decode: Option<DecodeArg>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Scorer or generator; an untrained backend is used when omitted.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "canonical_jsonl")]
    format: FormatArg,
    /// One negative set per line.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Plain text (one hypothesis per line) or canonical JSONL with `generated`.
    #[arg(long, value_name = "FILE")]
    hyp: PathBuf,
    /// Plain text or canonical JSONL; defaults to the answers in --hyp.
    #[arg(long = "ref", value_name = "FILE")]
    reference: Option<PathBuf>,
    #[arg(long, value_enum)]
    stratify_by: Option<StratifyArg>,
    #[arg(long)]
    per_example: bool,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct AgreeArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// JSONL with item_id, rater_id and choice per line.
    #[arg(long, value_name = "FILE")]
    judgments: PathBuf,
    #[arg(long, value_enum, default_value = "majority")]
    rule: RuleArg,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Generations of the system of interest (option 1).
    #[arg(long, value_name = "FILE")]
    system_1: PathBuf,
    /// Generations of the reference system (option 2).
    #[arg(long, value_name = "FILE")]
    system_2: PathBuf,
    /// Human judgments; automatic per-item scores are used when omitted.
    #[arg(long, value_name = "FILE")]
    judgments: Option<PathBuf>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long, value_enum)]
    stratify_by: Option<StratifyArg>,
    #[arg(long, value_enum, default_value = "majority")]
    rule: RuleArg,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_name = "FILE")]
    train: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    valid: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[command(flatten)]
    overrides: TrainOverrides,
    #[arg(long, value_delimiter = ',')]
    lambda_b: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    lambda_s: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    m: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    strategy: Vec<StrategyArg>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_enum, value_delimiter = ',')]
    stages: Vec<StageArg>,
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn data_paths(cfg: &RunConfig, train: &Option<PathBuf>, valid: &Option<PathBuf>) -> Result<(PathBuf, PathBuf)> {
    let pick = |flag: &Option<PathBuf>, conf: &Option<PathBuf>, name: &str| {
        flag.clone()
            .or_else(|| conf.clone())
            .with_context(|| format!("--{name} is required (or set paths.{name} in the config)"))
    };
    Ok((pick(train, &cfg.paths.train, "train")?, pick(valid, &cfg.paths.valid, "valid")?))
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = a.config.load()?;
    a.overrides.apply(&mut cfg);
    if let Some(v) = a.lambda_b {
        cfg.train.loss.lambda_b = v;
    }
    if let Some(v) = a.lambda_s {
        cfg.train.loss.lambda_s = v;
    }
    if let Some(v) = a.strategy {
        cfg.train.negatives.strategy = v.into();
    }
    if let Some(v) = a.m {
        cfg.train.negatives.m = v;
    }
    if let Some(f) = a.format {
        cfg.paths.format = f.into();
    }
    let (train, valid) = data_paths(&cfg, &a.train, &a.valid)?;
    let out_dir = a.out_dir.unwrap_or_else(|| cfg.paths.out_dir.clone());
    let ctx = Context::new(cfg)?;
    let summary = pipeline::train_files(&ctx, &train, &valid, ctx.config.paths.format, &out_dir)?;
    print_json(&summary.best)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_generate(a: GenerateArgs) -> Result<ExitCode> {
    let mut cfg = a.config.load()?;
    if let Some(d) = a.decode {
        cfg.decode.method = match d {
            DecodeArg::Greedy => DecodeMethod::Greedy,
            DecodeArg::TopK => DecodeMethod::TopK,
        };
    }
    if let Some(k) = a.k {
        cfg.decode.k = k;
    }
    if let Some(n) = a.max_len {
        cfg.decode.max_len = n;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let ctx = Context::new(cfg)?;
    let n = pipeline::generate_file(&ctx, &a.checkpoint, &a.input, a.format.into(), &a.out)?;
    println!("generated {n} answers into {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_perturb(a: PerturbArgs) -> Result<ExitCode> {
    let mut cfg = a.config.load()?;
    let n = &mut cfg.train.negatives;
    if let Some(s) = a.strategy {
        n.strategy = s.into();
    }
    if let Some(m) = a.m {
        n.m = m;
    }
    if let Some(t) = a.threshold {
        n.threshold = t;
    }
    if let Some(k) = a.k {
        n.k = k;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let ctx = Context::new(cfg)?;
    let negatives = ctx.config.train.negatives;
    let sets = pipeline::perturb_file(
        &ctx,
        a.checkpoint.as_deref(),
        &a.input,
        a.format.into(),
        &negatives,
        ctx.seed(),
        &a.out,
    )?;
    let produced: usize = sets.iter().map(|s| s.negatives.len()).sum();
    let dropped: usize = sets.iter().map(|s| s.dropped.len()).sum();
    println!(
        "{} negatives for {} examples ({} dropped slots) into {}",
        produced,
        sets.len(),
        dropped,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_score(a: ScoreArgs) -> Result<ExitCode> {
    let cfg = a.config.load()?;
    let stratify = a.stratify_by.map(Into::into).or(cfg.report.stratify_by);
    let per_example = a.per_example || cfg.report.per_example;
    let ctx = Context::new(cfg)?;
    let pairs = pipeline::load_pairs(&a.hyp, a.reference.as_deref())?;
    let report = pipeline::score_pairs(&pairs, stratify, per_example)?;
    ctx.write_report(&a.out, &report)?;
    println!(
        "bleu_2 {:.5} meteor {:.5} rouge_l {:.5} over {} pairs",
        report.bleu[&2], report.meteor, report.rouge_l, report.count
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_agree(a: AgreeArgs) -> Result<ExitCode> {
    let ctx = Context::new(a.config.load()?)?;
    let judgments = pipeline::load_judgments(&a.judgments)?;
    let report = pipeline::agree(&judgments, a.rule.into())?;
    ctx.write_report(&a.out, &report)?;
    print_json(&report.summary)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(a: CompareArgs) -> Result<ExitCode> {
    let cfg = a.config.load()?;
    let metric = a.metric.map(Into::into).unwrap_or(cfg.report.compare_metric);
    let stratify = a.stratify_by.map(Into::into).or(cfg.report.stratify_by);
    let ctx = Context::new(cfg)?;
    let s1 = load_canonical_records(&a.system_1)?;
    let s2 = load_canonical_records(&a.system_2)?;
    let judgments = a.judgments.as_deref().map(pipeline::load_judgments).transpose()?;
    let report = pipeline::compare(&s1, &s2, judgments.as_deref(), metric, stratify, a.rule.into())?;
    ctx.write_report(&a.out, &report)?;
    print_json(&report.overall)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let ctx = Context::new(a.config.load()?)?;
    let report = pipeline::gradcheck(&ctx, a.seed, a.tol)?;
    if let Some(out) = &a.out {
        ctx.write_report(out, &report)?;
    }
    println!(
        "{} checked {}/{} parameters, max relative error {:.3e}, {} failures",
        if report.passed { "PASS" } else { "FAIL" },
        report.checked,
        report.num_params,
        report.max_rel_error,
        report.failures
    );
    for w in report.worst.iter().filter(|w| !w.passed) {
        println!("  {} analytic {:.6e} numeric {:.6e}", w.label, w.analytic, w.numeric);
    }
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_sweep(a: SweepArgs) -> Result<ExitCode> {
    let mut cfg = a.config.load()?;
    a.overrides.apply(&mut cfg);
    if !a.lambda_b.is_empty() {
        cfg.sweep.lambda_b = a.lambda_b;
    }
    if !a.lambda_s.is_empty() {
        cfg.sweep.lambda_s = a.lambda_s;
    }
    if !a.m.is_empty() {
        cfg.sweep.m = a.m;
    }
    if !a.strategy.is_empty() {
        cfg.sweep.strategy = a.strategy.into_iter().map(Into::into).collect();
    }
    if let Some(f) = a.format {
        cfg.paths.format = f.into();
    }
    let (train, valid) = data_paths(&cfg, &a.train, &a.valid)?;
    let out_dir = a.out_dir.unwrap_or_else(|| cfg.paths.out_dir.clone());
    let ctx = Context::new(cfg)?;
    let train_set = load_dataset(&train, ctx.config.paths.format)?;
    let valid_set = load_dataset(&valid, ctx.config.paths.format)?;
    let runs = pipeline::sweep(&ctx, &train_set, &valid_set, &out_dir)?;
    for r in &runs {
        let bleu2 = r.score.as_ref().map_or(f64::NAN, |s| s.bleu[&2]);
        println!(
            "{:<40} ppl {:>9.4} margin {:+.4} bleu_2 {:.4}",
            r.name, r.best.validation_perplexity, r.validation_margin, bleu2
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let mut cfg = a.config.load()?;
    if let Some(d) = a.out_dir {
        cfg.paths.out_dir = d;
    }
    let ctx = Context::new(cfg)?;
    let stages: Vec<Stage> = if a.stages.is_empty() {
        Stage::ALL.to_vec()
    } else {
        a.stages.into_iter().map(Into::into).collect()
    };
    let summary = pipeline::run_pipeline(&ctx, &stages)?;
    print_json(&summary.manifest)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_ingest(a: IngestArgs) -> Result<ExitCode> {
    let ctx = Context::new(a.config.load()?)?;
    let report = pipeline::ingest(&ctx, &a.input, a.format.into(), &a.out)?;
    if let Some(p) = &a.report {
        ctx.write_report(p, &report)?;
    }
    print_json(&report)?;
    Ok(ExitCode::SUCCESS)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Train(_) => "train",
        Command::Generate(_) => "generate",
        Command::Perturb(_) => "perturb",
        Command::Score(_) => "score",
        Command::Agree(_) => "agree",
        Command::Compare(_) => "compare",
        Command::Gradcheck(_) => "gradcheck",
        Command::Sweep(_) => "sweep",
        Command::Run(_) => "run",
    }
}

fn dispatch(c: Command) -> Result<ExitCode> {
    match c {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Score(a) => cmd_score(a),
        Command::Agree(a) => cmd_agree(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Run(a) => cmd_run(a),
    }
}

fn error_report(command: &str, err: &anyhow::Error) -> serde_json::Value {
    serde_json::json!({
        "error": {
            "command": command,
            "message": err.to_string(),
            "causes": err.chain().skip(1).map(ToString::to_string).collect::<Vec<_>>(),
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let name = command_name(&cli.command);
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_report(name, &e));
            ExitCode::FAILURE
        }
    }
}
