//! Command-line orchestration.
//!
//! Every subcommand reads explicit input files, writes explicit output files
//! and drops a stage record (input and output SHA-256 digests, parameters,
//! seed) into `<run-dir>/stages/`. `report` bundles those records into
//! `<run-dir>/manifest.json`. Nothing written depends on wall-clock time.
//!
//! Exit codes: 0 on success, 1 on usage, configuration or validation errors,
//! 2 when some instances could not be annotated.

pub mod config;
pub mod manifest;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::aggregate::{apply_strategy, provenance, RatingSet, Strategy};
use crate::agreement::{bootstrap_significance, compare_labels, DEFAULT_RESAMPLES};
use crate::annotator::{
    read_transcript, AnnotationFailure, AnnotationRun, Annotator, ConditionEdit, HttpChatClient,
    LlmClient, PromptKind, PromptTemplate, ProviderConfig, RatingAnnotation, ReplayClient,
    ReplyCache, TranscriptRecord,
};
use crate::condition_audit::{imbalance_report, phrasing_consistency_check, DEFAULT_TOP_K};
use crate::corpus::{load_dataset, split_dataset, write_dataset, Dataset, Format, SplitSpec};
use crate::overlap::detect_overlaps;
use crate::snpro::{
    self, evaluate, load_checkpoint, read_embeddings, save_checkpoint, PairSet, Variant,
};
use crate::{Error, Result};

pub use config::PipelineConfig;
pub use manifest::{collect_manifest, RunManifest, StageRecord, MANIFEST_FILE, STAGES_DIR};

use manifest::{write_json, StageBuilder};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "cstscrub",
    version,
    about = "Cleansing, re-annotation and evaluation of C-STS datasets"
)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replay recorded LLM replies from this JSONL transcript instead of
    /// calling the network.
    #[arg(long, global = true)]
    transcript: Option<PathBuf>,
    /// Seed for every random choice; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving stage records; overrides `paths.run_dir`.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Reply cache directory; overrides `paths.cache`.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Condition category histogram and phrasing checks.
    Audit(AuditArgs),
    /// Exact train/test overlap counts.
    Overlap(OverlapArgs),
    /// Seeded two-way split (e.g. validation into ReVal/ReTest).
    Split(SplitArgs),
    /// Rewrite conditions with an LLM.
    ModifyConditions(ModifyArgs),
    /// Rate every instance with an LLM.
    Reannotate(ReannotateArgs),
    /// Fuse human and LLM ratings by mean-and-round.
    Aggregate(AggregateArgs),
    /// Repeated rating of a sample and its self-agreement.
    Consistency(ConsistencyArgs),
    /// Agreement between the labels of two datasets.
    Agreement(AgreementArgs),
    /// Train the projection head.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled dataset.
    Evaluate(EvaluateArgs),
    /// Write a seeded sample of rows for manual review.
    ReviewSample(ReviewArgs),
    /// Bundle every stage record into the run manifest.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print tables instead of JSON.
    #[arg(long)]
    text: bool,
}

#[derive(Debug, Args)]
struct OverlapArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    text: bool,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    fraction: f64,
    #[arg(long)]
    out_first: PathBuf,
    #[arg(long)]
    out_second: PathBuf,
}

#[derive(Debug, Args)]
struct ModifyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    provider: String,
    /// Dataset with the improved conditions.
    #[arg(long)]
    out: PathBuf,
    /// Per-instance edits with justifications (JSONL).
    #[arg(long)]
    edits: Option<PathBuf>,
    /// Instances that could not be processed (JSONL).
    #[arg(long)]
    failures: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReannotateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    provider: String,
    /// Rating annotations (JSONL).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    failures: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    /// Dataset whose labels are the human ratings.
    #[arg(long = "in")]
    input: PathBuf,
    /// Rating annotation files written by `reannotate`.
    #[arg(long = "ratings")]
    ratings: Vec<PathBuf>,
    /// Sources joined by `+`, e.g. `human+gpt+claude`; defaults to the config.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Per-instance source ratings and result (JSONL).
    #[arg(long)]
    provenance: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConsistencyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    provider: String,
    #[arg(long, default_value_t = 100)]
    sample: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AgreementArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    text: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Embedding file covering both datasets; defaults to `paths.embeddings`.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Checkpoint (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss and validation Spearman (JSON).
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    out_dim: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Second checkpoint compared against with a paired bootstrap.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    resamples: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReviewArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    revised: PathBuf,
    #[arg(long)]
    edits: Option<PathBuf>,
    #[arg(long = "ratings")]
    ratings: Vec<PathBuf>,
    #[arg(long, default_value_t = 300)]
    n: usize,
    /// Review sheet (CSV).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Defaults to `<run-dir>/manifest.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    match s {
        "nonlinear" => Ok(Variant::Nonlinear),
        "linear" => Ok(Variant::Linear),
        _ => Err(format!(
            "unknown variant {s:?} (expected nonlinear or linear)"
        )),
    }
}

struct Context {
    config: PipelineConfig,
    seed: u64,
    run_dir: PathBuf,
    cache_dir: Option<PathBuf>,
    transcript: Option<PathBuf>,
}

/// Result of a stage that completed but left some instances unannotated.
struct Partial;

type StageResult = Result<Option<Partial>>;

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    match run(cli) {
        Ok(None) => EXIT_OK,
        Ok(Some(Partial)) => EXIT_PARTIAL,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}

fn run(cli: Cli) -> StageResult {
    let config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(t) = &cli.transcript {
        if !t.is_file() {
            return Err(Error::Config(format!(
                "transcript {} is not a file",
                t.display()
            )));
        }
    }
    let run_dir = cli
        .run_dir
        .clone()
        .or_else(|| config.paths.run_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let ctx = Context {
        seed: cli.seed.unwrap_or(config.seed),
        cache_dir: cli.cache.clone().or_else(|| config.paths.cache.clone()),
        transcript: cli.transcript.clone(),
        run_dir,
        config,
    };
    match cli.command {
        Command::Audit(a) => audit(&ctx, a),
        Command::Overlap(a) => overlap(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::ModifyConditions(a) => modify_conditions(&ctx, a),
        Command::Reannotate(a) => reannotate(&ctx, a),
        Command::Aggregate(a) => aggregate(&ctx, a),
        Command::Consistency(a) => consistency(&ctx, a),
        Command::Agreement(a) => agreement(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Evaluate(a) => evaluate_cmd(&ctx, a),
        Command::ReviewSample(a) => review_sample(&ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path, Format::from_path(path))
}

fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    write_dataset(dataset, path, Format::from_path(path))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            line: idx + 1,
            field: "<record>".into(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes the JSON report to `out` or prints it.
fn emit(out: Option<&Path>, value: &impl Serialize, text: Option<String>) -> Result<()> {
    match out {
        Some(p) => {
            ensure_parent(p)?;
            write_json(p, value)
        }
        None => {
            match text {
                Some(t) => print!("{t}"),
                None => println!("{}", serde_json::to_string_pretty(value)?),
            }
            Ok(())
        }
    }
}

fn stage(ctx: &Context, name: &str) -> StageBuilder {
    StageBuilder::new(&ctx.run_dir, name, ctx.seed)
}

#[derive(Serialize)]
struct AuditReport {
    histogram: crate::condition_audit::CategoryHistogram,
    phrasing_flags: Vec<crate::condition_audit::PhrasingFlag>,
}

fn audit(ctx: &Context, a: AuditArgs) -> StageResult {
    let d = load(&a.input)?;
    let report = AuditReport {
        histogram: imbalance_report(&d, a.top_k)?,
        phrasing_flags: phrasing_consistency_check(&d),
    };
    let text = a.text.then(|| report.histogram.render_text());
    emit(a.out.as_deref(), &report, text)?;
    if let Some(out) = &a.out {
        let mut s = stage(ctx, "audit");
        s.param("top_k", a.top_k).input(&a.input)?.output(out)?;
        s.finish()?;
    }
    Ok(None)
}

fn overlap(ctx: &Context, a: OverlapArgs) -> StageResult {
    let report = detect_overlaps(&load(&a.train)?, &load(&a.test)?);
    let text = a.text.then(|| report.render_text());
    emit(a.out.as_deref(), &report, text)?;
    if let Some(out) = &a.out {
        let mut s = stage(ctx, "overlap");
        s.input(&a.train)?.input(&a.test)?.output(out)?;
        s.finish()?;
    }
    Ok(None)
}

fn split(ctx: &Context, a: SplitArgs) -> StageResult {
    let d = load(&a.input)?;
    let (first, second) = split_dataset(
        &d,
        SplitSpec {
            fraction: a.fraction,
            seed: ctx.seed,
        },
    )?;
    save(&first, &a.out_first)?;
    save(&second, &a.out_second)?;
    let mut s = stage(ctx, "split");
    s.param("fraction", a.fraction)
        .input(&a.input)?
        .output(&a.out_first)?
        .output(&a.out_second)?;
    s.summary(serde_json::json!({"first": first.len(), "second": second.len()}));
    s.finish()?;
    Ok(None)
}

fn annotator(ctx: &Context) -> Result<Annotator> {
    let template = |kind, path: &Option<PathBuf>| match path {
        Some(p) => PromptTemplate::load(kind, p),
        None => Ok(PromptTemplate::builtin(kind)),
    };
    let mut ann = Annotator::new(
        template(PromptKind::Condition, &ctx.config.paths.condition_prompt)?,
        template(PromptKind::Rating, &ctx.config.paths.rating_prompt)?,
    );
    ann.concurrency = ctx.config.concurrency;
    ann.max_failure_fraction = ctx.config.max_failure_fraction;
    Ok(ann)
}

/// Replay client when a transcript is given, HTTP client otherwise.
fn client(ctx: &Context, provider: &str) -> Result<Box<dyn LlmClient>> {
    let declared = ctx.config.provider(provider);
    match &ctx.transcript {
        Some(path) => {
            let records: Vec<TranscriptRecord> = read_transcript(path)?;
            let (model, temperature) =
                declared.map_or((provider, 0.0), |p| (p.model.as_str(), p.temperature));
            Ok(Box::new(ReplayClient::new(
                provider,
                model,
                temperature,
                &records,
            )))
        }
        None => {
            let cfg: ProviderConfig = declared.cloned().ok_or_else(|| {
                Error::Config(format!(
                    "provider {provider:?} is not declared in the configuration"
                ))
            })?;
            Ok(Box::new(HttpChatClient::from_env(cfg)?))
        }
    }
}

fn open_cache(ctx: &Context) -> Result<Option<ReplyCache>> {
    ctx.cache_dir.as_deref().map(ReplyCache::open).transpose()
}

fn annotation_inputs(ctx: &Context, s: &mut StageBuilder, input: &Path) -> Result<()> {
    s.input(input)?;
    if let Some(t) = &ctx.transcript {
        s.input(t)?;
    }
    Ok(())
}

fn report_failures<T>(run: &AnnotationRun<T>, path: Option<&Path>) -> Result<Option<Partial>> {
    if let Some(p) = path {
        write_jsonl::<AnnotationFailure>(p, &run.failures)?;
    }
    log::info!(
        "{} annotated, {} failed, {} network calls, {} cache hits",
        run.results.len(),
        run.failures.len(),
        run.network_calls,
        run.cache_hits
    );
    for f in &run.failures {
        eprintln!("instance {}: {}", f.id, f.error);
    }
    if run.failed {
        eprintln!(
            "error: too many annotation failures ({} instances)",
            run.failures.len()
        );
    }
    Ok((!run.failures.is_empty()).then_some(Partial))
}

fn modify_conditions(ctx: &Context, a: ModifyArgs) -> StageResult {
    let d = load(&a.input)?;
    let ann = annotator(ctx)?;
    let client = client(ctx, &a.provider)?;
    let cache = open_cache(ctx)?;
    let run = ann.annotate_conditions(&d, client.as_ref(), cache.as_ref());
    let status = report_failures(&run, a.failures.as_deref())?;
    if run.failed {
        return Ok(status);
    }
    let revised = crate::annotator::apply_condition_edits(&d, &run.results);
    save(&revised, &a.out)?;
    let mut s = stage(ctx, "modify-conditions");
    s.param("provider", &a.provider).param(
        "template_sha256",
        ann.template(PromptKind::Condition).sha256(),
    );
    annotation_inputs(ctx, &mut s, &a.input)?;
    s.output(&a.out)?;
    if let Some(p) = &a.edits {
        write_jsonl::<ConditionEdit>(p, &run.results)?;
        s.output(p)?;
    }
    let changed = run.results.iter().filter(|e| e.changed).count();
    s.summary(serde_json::json!({
        "instances": d.len(),
        "changed": changed,
        "failures": run.failures.len(),
    }));
    s.finish()?;
    Ok(status)
}

fn reannotate(ctx: &Context, a: ReannotateArgs) -> StageResult {
    let d = load(&a.input)?;
    let ann = annotator(ctx)?;
    let client = client(ctx, &a.provider)?;
    let cache = open_cache(ctx)?;
    let run = ann.annotate_ratings(&d, client.as_ref(), cache.as_ref());
    let status = report_failures(&run, a.failures.as_deref())?;
    if run.failed {
        return Ok(status);
    }
    write_jsonl::<RatingAnnotation>(&a.out, &run.results)?;
    let mut s = stage(ctx, "reannotate");
    s.param("provider", &a.provider)
        .param("template_sha256", ann.template(PromptKind::Rating).sha256());
    annotation_inputs(ctx, &mut s, &a.input)?;
    s.output(&a.out)?;
    s.summary(serde_json::json!({"instances": d.len(), "failures": run.failures.len()}));
    s.finish()?;
    Ok(status)
}

fn aggregate(ctx: &Context, a: AggregateArgs) -> StageResult {
    let strategy: Strategy = a
        .strategy
        .as_deref()
        .or(ctx.config.strategy.as_deref())
        .ok_or_else(|| Error::Config("no aggregation strategy given".into()))?
        .parse()?;
    let d = load(&a.input)?;
    let mut sets: BTreeMap<&str, RatingSet> = d
        .instances
        .iter()
        .map(|i| {
            (
                i.id.as_str(),
                RatingSet {
                    id: i.id.clone(),
                    human: i.label,
                    providers: BTreeMap::new(),
                },
            )
        })
        .collect();
    for path in &a.ratings {
        for ann in read_jsonl::<RatingAnnotation>(path)? {
            let set = sets.get_mut(ann.id.as_str()).ok_or_else(|| {
                Error::Validation(format!("{}: unknown instance {}", path.display(), ann.id))
            })?;
            if set
                .providers
                .insert(ann.source.clone(), ann.rating)
                .is_some()
            {
                return Err(Error::Validation(format!(
                    "instance {} rated twice by {}",
                    ann.id, ann.source
                )));
            }
        }
    }
    let ratings: Vec<RatingSet> = d
        .instances
        .iter()
        .map(|i| sets[i.id.as_str()].clone())
        .collect();
    let fused = apply_strategy(&d, &ratings, &strategy)?;
    save(&fused, &a.out)?;
    let mut s = stage(ctx, "aggregate");
    s.param("strategy", strategy.to_string()).input(&a.input)?;
    for p in &a.ratings {
        s.input(p)?;
    }
    s.output(&a.out)?;
    if let Some(p) = &a.provenance {
        write_jsonl(p, &provenance(&ratings, &strategy)?)?;
        s.output(p)?;
    }
    s.finish()?;
    Ok(None)
}

fn consistency(ctx: &Context, a: ConsistencyArgs) -> StageResult {
    let d = load(&a.input)?;
    let ann = annotator(ctx)?;
    let client = client(ctx, &a.provider)?;
    let result = ann.consistency_run(&d, client.as_ref(), a.sample, a.reps, ctx.seed)?;
    emit(a.out.as_deref(), &result, None)?;
    if let Some(out) = &a.out {
        let mut s = stage(ctx, "consistency");
        s.param("provider", &a.provider)
            .param("sample", a.sample)
            .param("reps", a.reps);
        annotation_inputs(ctx, &mut s, &a.input)?;
        s.output(out)?;
        s.finish()?;
    }
    Ok(None)
}

/// Labels of `b` aligned to the instance order of `a`.
fn aligned_labels(a: &Dataset, b: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "datasets differ in size ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let label = |d: &Dataset, id: &str| -> Result<u8> {
        d.get(id)
            .ok_or_else(|| Error::Validation(format!("instance {id} missing from {}", d.name)))?
            .label
            .ok_or_else(|| Error::Validation(format!("instance {id} in {} has no label", d.name)))
    };
    let mut la = Vec::with_capacity(a.len());
    let mut lb = Vec::with_capacity(a.len());
    for inst in &a.instances {
        la.push(label(a, &inst.id)?);
        lb.push(label(b, &inst.id)?);
    }
    Ok((la, lb))
}

fn agreement(ctx: &Context, a: AgreementArgs) -> StageResult {
    let (da, db) = (load(&a.a)?, load(&a.b)?);
    let (la, lb) = aligned_labels(&da, &db)?;
    let report = compare_labels(&la, &lb)?;
    let text = a.text.then(|| {
        let mut t = format!("n = {}\nSpearman = {:.4}\n", report.n, report.spearman);
        if let Some(k) = report.kappa {
            t.push_str(&format!("Cohen's kappa = {k:.4}\n"));
        }
        if let Some(al) = report.alpha {
            t.push_str(&format!("Krippendorff's alpha (ordinal) = {al:.4}\n"));
        }
        if let Some(c) = &report.confusion {
            t.push_str(&c.render_text(&da.name, &db.name));
        }
        t
    });
    emit(a.out.as_deref(), &report, text)?;
    if let Some(out) = &a.out {
        let mut s = stage(ctx, "agreement");
        s.input(&a.a)?.input(&a.b)?.output(out)?;
        s.finish()?;
    }
    Ok(None)
}

fn embeddings_path(ctx: &Context, flag: &Option<PathBuf>) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| ctx.config.paths.embeddings.clone())
        .ok_or_else(|| {
            Error::Config("no embedding file given (--embeddings or paths.embeddings)".into())
        })
}

fn train(ctx: &Context, a: TrainArgs) -> StageResult {
    let emb_path = embeddings_path(ctx, &a.embeddings)?;
    let emb = read_embeddings(&emb_path)?;
    let train_set = PairSet::join(&emb, &load(&a.train)?)?;
    let val_set = PairSet::join(&emb, &load(&a.val)?)?;
    let mut cfg = ctx.config.train.clone();
    cfg.seed = ctx.seed;
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    macro_rules! override_field {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { cfg.$f = v; } )* };
    }
    override_field!(
        epochs,
        batch_size,
        learning_rate,
        dropout,
        hidden,
        out_dim,
        patience
    );
    cfg.validate()?;
    let outcome = snpro::train(&train_set, &val_set, &cfg)?;
    ensure_parent(&a.out)?;
    save_checkpoint(&a.out, &outcome.model, Some(&cfg))?;
    let mut s = stage(ctx, "train");
    s.param("config", &cfg)
        .input(&a.train)?
        .input(&a.val)?
        .input(&emb_path)?
        .output(&a.out)?;
    if let Some(h) = &a.history {
        ensure_parent(h)?;
        write_json(h, &outcome.history)?;
        s.output(h)?;
    }
    s.summary(serde_json::json!({
        "epochs_run": outcome.history.len(),
        "best_epoch": outcome.best_epoch,
        "best_val_spearman": outcome.best_val_spearman,
    }));
    s.finish()?;
    Ok(None)
}

#[derive(Serialize)]
struct EvaluationReport {
    n: usize,
    spearman: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_spearman: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    significance: Option<crate::agreement::Significance>,
}

fn evaluate_cmd(ctx: &Context, a: EvaluateArgs) -> StageResult {
    let emb_path = embeddings_path(ctx, &a.embeddings)?;
    let emb = read_embeddings(&emb_path)?;
    let test = PairSet::join(&emb, &load(&a.test)?)?;
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let mut report = EvaluationReport {
        n: test.len(),
        spearman: evaluate(&model, &test)?,
        baseline_spearman: None,
        significance: None,
    };
    if let Some(b) = &a.baseline {
        let (base, _) = load_checkpoint(b)?;
        report.baseline_spearman = Some(evaluate(&base, &test)?);
        report.significance = Some(bootstrap_significance(
            &test.labels,
            &base.predict_pairs(&test)?,
            &model.predict_pairs(&test)?,
            a.resamples,
            ctx.seed,
        )?);
    }
    emit(a.out.as_deref(), &report, None)?;
    if let Some(out) = &a.out {
        let mut s = stage(ctx, "evaluate");
        s.input(&a.checkpoint)?.input(&a.test)?.input(&emb_path)?;
        if let Some(b) = &a.baseline {
            s.input(b)?.param("resamples", a.resamples);
        }
        s.output(out)?;
        s.finish()?;
    }
    Ok(None)
}

fn review_sample(ctx: &Context, a: ReviewArgs) -> StageResult {
    let original = load(&a.original)?;
    let revised = load(&a.revised)?;
    let edits: Vec<ConditionEdit> = match &a.edits {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let mut annotations: Vec<RatingAnnotation> = Vec::new();
    for p in &a.ratings {
        annotations.extend(read_jsonl::<RatingAnnotation>(p)?);
    }
    let rows = crate::annotator::review_rows(&original, &revised, &edits, &annotations)?;
    ensure_parent(&a.out)?;
    crate::annotator::sample_for_review(&rows, a.n, ctx.seed, &a.out)?;
    let mut s = stage(ctx, "review-sample");
    s.param("n", a.n).input(&a.original)?.input(&a.revised)?;
    if let Some(p) = &a.edits {
        s.input(p)?;
    }
    for p in &a.ratings {
        s.input(p)?;
    }
    s.output(&a.out)?;
    s.finish()?;
    Ok(None)
}

fn report(ctx: &Context, a: ReportArgs) -> StageResult {
    let manifest = collect_manifest(&ctx.run_dir)?;
    let out = a.out.unwrap_or_else(|| ctx.run_dir.join(MANIFEST_FILE));
    ensure_parent(&out)?;
    write_json(&out, &manifest)?;
    log::info!("manifest lists {} stage record(s)", manifest.stages.len());
    Ok(None)
}
