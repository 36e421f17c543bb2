//! `finadapt`: pack, build instructions, augment, emit configs, evaluate, report.

mod record;

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use finadapt::augment::{
    dedup_key, run_augmentation, AugmentConfig, AugmentError, NerAnswerFormat, NerSeed, Seeds,
    SentimentLabel, SentimentSeed,
};
use finadapt::baselines::{evaluate_lexicon, evaluate_naive_bayes, BaselineError, SentimentLexicon};
use finadapt::corpus::{build_mixture, write_blocks, BlockFormat, MixtureManifest};
use finadapt::evalharness::{
    load_task, render_table, run_eval, write_predictions, EvalError, EvalReport, EvalRun,
    GenerationSettings,
};
use finadapt::instruct::{
    downsample, read_dataset, rewrite_instructions, stats, write_dataset, write_rendered,
    InstructionSample, TaskFilter, TaskKind, DEFAULT_EXCLUDED_TASKS,
};
use finadapt::modelio::{BackendError, BackendSpec, ClientConfig, HttpConfig, ModelClient};
use finadapt::tokenization::Tokenizer;
use finadapt::trainconfig::{emit_config, LossTarget, Stage, TrainConfigFile};

use record::{record_path, RunTracker};

#[derive(Parser)]
#[command(name = "finadapt", version, about = "Financial LLM domain-adaptation pipeline")]
struct Cli {
    /// Validate inputs without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Where to write the run record.
    #[arg(long, global = true, value_name = "PATH")]
    run_record: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pack document sources into fixed-length token blocks.
    Pack(PackArgs),
    /// Build, down-sample, inspect or render instruction datasets.
    #[command(subcommand)]
    Instructions(InstructionsCmd),
    /// Generate synthetic instruction samples with a completion model.
    Augment(AugmentArgs),
    /// Write the training configuration of one fine-tuning stage.
    EmitTrainConfig(EmitArgs),
    /// Evaluate a model on a task file.
    Eval(EvalArgs),
    /// Run a classical sentiment baseline.
    #[command(subcommand)]
    Baseline(BaselineCmd),
    /// Combine evaluation reports into one table.
    Report(ReportArgs),
}

#[derive(Args)]
struct PackArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to binary for `.bin` outputs, JSON lines otherwise.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Mixture report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    Bin,
}

#[derive(Subcommand)]
enum InstructionsCmd {
    /// Load, filter excluded tasks, down-sample and optionally rewrite instructions.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Task names to drop; defaults to the stock-movement subsets.
        #[arg(long, value_delimiter = ',')]
        exclude: Option<Vec<String>>,
        /// JSON object mapping task name to its new instruction text.
        #[arg(long)]
        instructions: Option<PathBuf>,
        /// Rendered `{id, task, text}` records for training.
        #[arg(long)]
        rendered: Option<PathBuf>,
    },
    /// Keep one sample per (task, input, answer).
    Downsample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-task sample counts.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Render samples through the instruction template.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct BackendArgs {
    /// `mock:<fixtures.json>` or an http(s) base URL of a completion API.
    #[arg(long, env = "FINADAPT_BACKEND")]
    backend: String,
    #[arg(long, env = "FINADAPT_API_KEY", hide_env_values = true)]
    api_key: Option<String>,
    #[arg(long, env = "FINADAPT_MODEL")]
    model: Option<String>,
    #[arg(long, env = "FINADAPT_TIMEOUT_SECS", default_value_t = 60)]
    timeout_secs: u64,
    #[arg(long, env = "FINADAPT_MAX_RETRIES", default_value_t = 3)]
    max_retries: usize,
    #[arg(long, env = "FINADAPT_CONCURRENCY", default_value_t = 4)]
    concurrency: usize,
    /// Tokenizer used by the mock backend to honor max token limits.
    #[arg(long)]
    mock_tokenizer: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    task: TaskKind,
    /// Number of new samples to generate.
    #[arg(long)]
    target: usize,
    /// Existing dataset; its inputs are never duplicated.
    #[arg(long)]
    dataset: PathBuf,
    /// Seed file. Sentiment: `{sentence, label}` lines (default: the dataset's
    /// own samples of the task). NER: `{sentence}` lines or plain text.
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Output dataset: the existing samples followed by the new ones.
    #[arg(long)]
    out: PathBuf,
    /// Write only the new samples.
    #[arg(long)]
    new_only: bool,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    budget_multiple: usize,
    #[arg(long, default_value_t = 0.8)]
    temperature: f64,
    #[arg(long, default_value_t = 128)]
    max_new_tokens: usize,
    #[arg(long, value_enum, default_value = "entity-list")]
    ner_format: NerFormatArg,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum NerFormatArg {
    EntityList,
    Bio,
}

#[derive(Args)]
struct EmitArgs {
    #[arg(long)]
    stage: Stage,
    #[arg(long)]
    out: PathBuf,
    /// Packed blocks (stage 1) or rendered instructions (stage 2).
    #[arg(long)]
    train_data: PathBuf,
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Compute the loss on answer tokens only.
    #[arg(long)]
    answer_only_loss: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    task: PathBuf,
    /// Task header file; without it the first line of the task file is the header.
    #[arg(long)]
    header: Option<PathBuf>,
    /// Report JSON; defaults to `<task>.report.json` beside the task file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Row name in report tables.
    #[arg(long)]
    model_name: Option<String>,
    #[arg(long, default_value_t = 64)]
    max_new_tokens: usize,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Subcommand)]
enum BaselineCmd {
    /// Dictionary scorer.
    Lexicon {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multinomial Naive Bayes.
    Nb {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        smoothing: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation report JSON files.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Backend(String),
    Partial(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Backend(_) => 3,
            Failure::Partial(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Backend(m) | Failure::Partial(m) => m,
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

impl From<BackendError> for Failure {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(_) => Failure::Input(e.to_string()),
            _ => Failure::Backend(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Backend(b) => b.into(),
            other => input_err(other),
        }
    }
}

impl From<AugmentError> for Failure {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::Backend(b) => b.into(),
            other => input_err(other),
        }
    }
}

impl From<BaselineError> for Failure {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Eval(ev) => ev.into(),
            other => input_err(other),
        }
    }
}

type Outcome = Result<(), Failure>;

struct Ctx {
    dry_run: bool,
    run: RunTracker,
}

impl Ctx {
    /// Creates `path` (and its parent directory) unless this is a dry run.
    fn create(&mut self, path: &Path) -> Result<Option<BufWriter<File>>, Failure> {
        self.run.output(path);
        if self.dry_run {
            return Ok(None);
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| input_err(format!("{}: {e}", parent.display())))?;
        }
        let f = File::create(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
        Ok(Some(BufWriter::new(f)))
    }

    fn write_json<T: serde::Serialize>(&mut self, path: &Path, value: &T) -> Outcome {
        if let Some(mut w) = self.create(path)? {
            serde_json::to_writer_pretty(&mut w, value).map_err(input_err)?;
            w.write_all(b"\n").map_err(input_err)?;
            w.flush().map_err(input_err)?;
        }
        Ok(())
    }

    fn write_with(
        &mut self,
        path: &Path,
        f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    ) -> Outcome {
        if let Some(mut w) = self.create(path)? {
            f(&mut w).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
            w.flush().map_err(input_err)?;
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };

    let mut ctx = Ctx {
        dry_run: cli.dry_run,
        run: RunTracker::new(subcommand_name(&cli.command)),
    };
    let result = dispatch(cli.command, &mut ctx);
    let (code, status) = match &result {
        Ok(()) => (0u8, "ok".to_string()),
        Err(f) => {
            eprintln!("error: {}", f.message());
            (f.code(), f.message().to_string())
        }
    };
    if !ctx.dry_run {
        let path = record_path(cli.run_record.as_deref(), &ctx.run.outputs);
        let record = ctx.run.finish(&args, code as i32, &status);
        let written = serde_json::to_string_pretty(&record)
            .map_err(io::Error::from)
            .and_then(|s| fs::write(&path, s + "\n"));
        if let Err(e) = written {
            eprintln!("warning: cannot write run record {}: {e}", path.display());
        }
    }
    ExitCode::from(code)
}

fn subcommand_name(c: &Command) -> String {
    match c {
        Command::Pack(_) => "pack".into(),
        Command::Instructions(i) => format!(
            "instructions {}",
            match i {
                InstructionsCmd::Build { .. } => "build",
                InstructionsCmd::Downsample { .. } => "downsample",
                InstructionsCmd::Stats { .. } => "stats",
                InstructionsCmd::Render { .. } => "render",
            }
        ),
        Command::Augment(_) => "augment".into(),
        Command::EmitTrainConfig(_) => "emit-train-config".into(),
        Command::Eval(_) => "eval".into(),
        Command::Baseline(BaselineCmd::Lexicon { .. }) => "baseline lexicon".into(),
        Command::Baseline(BaselineCmd::Nb { .. }) => "baseline nb".into(),
        Command::Report(_) => "report".into(),
    }
}

fn dispatch(command: Command, ctx: &mut Ctx) -> Outcome {
    match command {
        Command::Pack(a) => pack(a, ctx),
        Command::Instructions(c) => instructions(c, ctx),
        Command::Augment(a) => augment(a, ctx),
        Command::EmitTrainConfig(a) => emit_train_config(a, ctx),
        Command::Eval(a) => eval(a, ctx),
        Command::Baseline(c) => baseline(c, ctx),
        Command::Report(a) => report(a, ctx),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Backend(e.to_string()))
}

fn load_tokenizer(path: &Path, ctx: &mut Ctx) -> Result<Tokenizer, Failure> {
    ctx.run.input(path);
    Tokenizer::from_file(path).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn pack(a: PackArgs, ctx: &mut Ctx) -> Outcome {
    ctx.run.input(&a.manifest);
    let manifest = MixtureManifest::from_file(&a.manifest).map_err(input_err)?;
    ctx.run.seed = Some(manifest.shuffle_seed);
    let tok = load_tokenizer(&a.tokenizer, ctx)?;
    let (blocks, report) = build_mixture(&manifest, &tok).map_err(input_err)?;
    let format = match a.format {
        Some(FormatArg::Bin) => BlockFormat::Binary,
        Some(FormatArg::Jsonl) => BlockFormat::JsonLines,
        None if a.out.extension().is_some_and(|e| e == "bin") => BlockFormat::Binary,
        None => BlockFormat::JsonLines,
    };
    ctx.write_with(&a.out, |w| {
        write_blocks(&blocks, format, w).map_err(io::Error::other)
    })?;
    if let Some(r) = &a.report {
        ctx.write_json(r, &report)?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn read_samples(path: &Path, filter: &TaskFilter, ctx: &mut Ctx) -> Result<Vec<InstructionSample>, Failure> {
    ctx.run.input(path);
    let (samples, report) = read_dataset(path, filter).map_err(input_err)?;
    for (task, n) in &report.excluded {
        log::info!("excluded {n} samples of {task}");
    }
    Ok(samples)
}

fn write_samples(path: &Path, samples: &[InstructionSample], ctx: &mut Ctx) -> Outcome {
    ctx.write_with(path, |w| write_dataset(samples, w))
}

fn instructions(c: InstructionsCmd, ctx: &mut Ctx) -> Outcome {
    match c {
        InstructionsCmd::Build {
            input,
            out,
            exclude,
            instructions,
            rendered,
        } => {
            let filter = match &exclude {
                Some(list) => TaskFilter::new(list.iter().map(String::as_str)),
                None => TaskFilter::default(),
            };
            let excluded: Vec<&str> = match &exclude {
                Some(list) => list.iter().map(String::as_str).collect(),
                None => DEFAULT_EXCLUDED_TASKS.to_vec(),
            };
            let mut samples = downsample(read_samples(&input, &filter, ctx)?);
            if let Some(path) = instructions {
                ctx.run.input(&path);
                let text = fs::read_to_string(&path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
                let raw: HashMap<String, String> = serde_json::from_str(&text).map_err(input_err)?;
                let map = raw
                    .into_iter()
                    .map(|(k, v)| Ok((k.parse::<TaskKind>().map_err(input_err)?, v)))
                    .collect::<Result<HashMap<_, _>, Failure>>()?;
                rewrite_instructions(&mut samples, &map).map_err(input_err)?;
            }
            write_samples(&out, &samples, ctx)?;
            if let Some(r) = rendered {
                for s in &samples {
                    finadapt::instruct::render(s).map_err(input_err)?;
                }
                ctx.write_with(&r, |w| {
                    write_rendered(&samples, w).map_err(io::Error::other)
                })?;
            }
            print!("{}", stats(&samples).to_table(&excluded));
            Ok(())
        }
        InstructionsCmd::Downsample { input, out } => {
            let samples = read_samples(&input, &TaskFilter::new([]), ctx)?;
            let before = samples.len();
            let kept = downsample(samples);
            write_samples(&out, &kept, ctx)?;
            println!("{before} -> {} samples", kept.len());
            Ok(())
        }
        InstructionsCmd::Stats { input, json } => {
            let samples = read_samples(&input, &TaskFilter::new([]), ctx)?;
            let st = stats(&samples);
            if json {
                println!("{}", serde_json::to_string_pretty(&st).map_err(input_err)?);
            } else {
                print!("{}", st.to_table(&[]));
            }
            Ok(())
        }
        InstructionsCmd::Render { input, out } => {
            let samples = read_samples(&input, &TaskFilter::new([]), ctx)?;
            for s in &samples {
                finadapt::instruct::render(s).map_err(input_err)?;
            }
            ctx.write_with(&out, |w| {
                write_rendered(&samples, w).map_err(io::Error::other)
            })
        }
    }
}

fn build_client(b: &BackendArgs, ctx: &mut Ctx) -> Result<ModelClient, Failure> {
    let spec = BackendSpec::parse(&b.backend)?;
    if let BackendSpec::Mock(path) = &spec {
        ctx.run.input(Path::new(path));
    }
    let tokenizer = match &b.mock_tokenizer {
        Some(p) => Some(Arc::new(load_tokenizer(p, ctx)?)),
        None => None,
    };
    let backend = spec.build(
        |endpoint| {
            let mut cfg = HttpConfig::new(endpoint);
            cfg.api_key = b.api_key.clone();
            cfg.model = b.model.clone();
            cfg.timeout = Duration::from_secs(b.timeout_secs);
            cfg
        },
        tokenizer,
    )?;
    Ok(ModelClient::new(
        backend,
        ClientConfig {
            max_retries: b.max_retries,
            concurrency: b.concurrency.max(1),
            ..ClientConfig::default()
        },
    ))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let file = File::open(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(input_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| input_err(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn load_seeds(a: &AugmentArgs, dataset: &[InstructionSample], ctx: &mut Ctx) -> Result<Seeds, Failure> {
    match (a.task, &a.seeds) {
        (TaskKind::Ner, None) => Err(input_err("NER augmentation needs --seeds with unlabeled sentences")),
        (TaskKind::Ner, Some(path)) => {
            ctx.run.input(path);
            let is_jsonl = path
                .extension()
                .is_some_and(|e| e == "jsonl" || e == "json" || e == "ndjson");
            let seeds = if is_jsonl {
                read_jsonl::<NerSeed>(path)?
            } else {
                fs::read_to_string(path)
                    .map_err(|e| input_err(format!("{}: {e}", path.display())))?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| NerSeed {
                        sentence: l.trim().to_string(),
                    })
                    .collect()
            };
            Ok(Seeds::Ner(seeds))
        }
        (_, Some(path)) => {
            ctx.run.input(path);
            Ok(Seeds::Sentiment(read_jsonl::<SentimentSeed>(path)?))
        }
        (task, None) => {
            let seeds = dataset
                .iter()
                .filter(|s| s.task == task)
                .map(|s| {
                    Ok(SentimentSeed {
                        sentence: s.input.clone(),
                        label: s.answer.parse::<SentimentLabel>().map_err(|e| {
                            input_err(format!("sample {}: {e}", s.sample_id))
                        })?,
                    })
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            Ok(Seeds::Sentiment(seeds))
        }
    }
}

fn augment(a: AugmentArgs, ctx: &mut Ctx) -> Outcome {
    ctx.run.seed = Some(a.seed);
    let mut dataset = read_samples(&a.dataset, &TaskFilter::new([]), ctx)?;
    let seeds = load_seeds(&a, &dataset, ctx)?;
    if seeds.is_empty() && a.target > 0 {
        return Err(input_err("no seeds for augmentation"));
    }
    let client = build_client(&a.backend, ctx)?;
    let mut cfg = AugmentConfig::new(a.task, a.target);
    cfg.seed = a.seed;
    cfg.budget_multiple = a.budget_multiple;
    cfg.temperature = a.temperature;
    cfg.max_new_tokens = a.max_new_tokens;
    cfg.ner_format = match a.ner_format {
        NerFormatArg::EntityList => NerAnswerFormat::EntityList,
        NerFormatArg::Bio => NerAnswerFormat::Bio,
    };
    if ctx.dry_run {
        ctx.run.output(&a.out);
        println!("dry run: {} seeds, target {}", seeds.len(), a.target);
        return Ok(());
    }
    let existing: HashSet<String> = dataset
        .iter()
        .filter(|s| s.task == a.task)
        .map(|s| dedup_key(&s.input))
        .collect();
    let outcome = runtime()?.block_on(run_augmentation(&cfg, &seeds, &client, &existing))?;
    let r = &outcome.report;
    println!(
        "{}: requested {}, generated {}, replies {}, rejected parse {} / duplicate {} / validation {}",
        a.task,
        r.requested,
        r.generated,
        r.replies,
        r.rejected_parse,
        r.rejected_duplicate,
        r.rejected_validation
    );
    if let Some(path) = &a.report {
        ctx.write_json(path, &outcome.report)?;
    }
    let written = if a.new_only {
        outcome.samples.clone()
    } else {
        dataset.extend(outcome.samples.iter().cloned());
        dataset
    };
    write_samples(&a.out, &written, ctx)?;
    if r.generated < r.requested {
        return Err(Failure::Partial(format!(
            "generated {} of {} samples before the reply budget ran out",
            r.generated, r.requested
        )));
    }
    Ok(())
}

fn emit_train_config(a: EmitArgs, ctx: &mut Ctx) -> Outcome {
    ctx.run.seed = Some(a.seed);
    let mut config = emit_config(a.stage);
    if a.answer_only_loss {
        config.loss_target = LossTarget::AnswerOnly;
    }
    let file = TrainConfigFile {
        config,
        train_data: a.train_data,
        eval_data: a.eval_data,
        tokenizer: a.tokenizer,
        seed: a.seed,
    };
    if let Some(mut w) = ctx.create(&a.out)? {
        w.write_all((file.to_json() + "\n").as_bytes()).map_err(input_err)?;
        w.flush().map_err(input_err)?;
    }
    println!("{}", file.to_json());
    Ok(())
}

fn write_run(run: &EvalRun, out: &Path, predictions: Option<&Path>, ctx: &mut Ctx) -> Outcome {
    ctx.write_json(out, &run.report)?;
    if let Some(p) = predictions {
        ctx.write_with(p, |w| write_predictions(&run.predictions, w))?;
    }
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!("{} {} = {:.4} over {} samples", r.task, r.metric, r.value, r.count);
    for s in &r.subtasks {
        println!("  {:<24} {:.4} ({})", s.name, s.value, s.count);
    }
}

fn eval(a: EvalArgs, ctx: &mut Ctx) -> Outcome {
    ctx.run.input(&a.task);
    if let Some(h) = &a.header {
        ctx.run.input(h);
    }
    let spec = load_task(&a.task, a.header.as_deref())?;
    let client = build_client(&a.backend, ctx)?;
    let out = a.out.clone().unwrap_or_else(|| a.task.with_extension("report.json"));
    if ctx.dry_run {
        ctx.run.output(&out);
        println!("dry run: {} samples of {}", spec.samples.len(), spec.header.task);
        return Ok(());
    }
    let settings = GenerationSettings {
        max_new_tokens: a.max_new_tokens,
        ..GenerationSettings::default()
    };
    let mut run = runtime()?.block_on(run_eval(&spec, &client, &settings))?;
    run.report.model = a.model_name.clone();
    print_report(&run.report);
    write_run(&run, &out, a.predictions.as_deref(), ctx)
}

fn baseline(c: BaselineCmd, ctx: &mut Ctx) -> Outcome {
    let (run, out) = match c {
        BaselineCmd::Lexicon { lexicon, task, out } => {
            ctx.run.input(&lexicon);
            ctx.run.input(&task);
            let lex = SentimentLexicon::from_csv(&lexicon)?;
            let spec = load_task(&task, None)?;
            (evaluate_lexicon(&lex, &spec)?, out)
        }
        BaselineCmd::Nb {
            train,
            eval,
            smoothing,
            out,
        } => {
            ctx.run.input(&train);
            ctx.run.input(&eval);
            let train = load_task(&train, None)?;
            let eval = load_task(&eval, None)?;
            let (model, run) = evaluate_naive_bayes(&train, &eval, smoothing)?;
            log::info!("vocabulary size {}", model.vocabulary_size());
            (run, out)
        }
    };
    print_report(&run.report);
    println!("accuracy = {:.4}", run.report.extras.get("accuracy").copied().unwrap_or(f64::NAN));
    if let Some(out) = out {
        ctx.write_json(&out, &run.report)?;
    }
    Ok(())
}

fn report(a: ReportArgs, ctx: &mut Ctx) -> Outcome {
    let mut reports = Vec::new();
    for p in &a.reports {
        ctx.run.input(p);
        let text = fs::read_to_string(p).map_err(|e| input_err(format!("{}: {e}", p.display())))?;
        let r: EvalReport =
            serde_json::from_str(&text).map_err(|e| input_err(format!("{}: {e}", p.display())))?;
        reports.push(r);
    }
    let table = render_table(&reports);
    print!("{table}");
    if let Some(out) = &a.out {
        ctx.write_with(out, |w| w.write_all(table.as_bytes()))?;
    }
    Ok(())
}
