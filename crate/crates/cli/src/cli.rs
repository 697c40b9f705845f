use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use surgassist_core::eval::{run_eval, sweep_projectors, write_csv, SWEEP_PROJECTOR_COUNTS};
use surgassist_core::functions::{default_registry, FixtureBundle};
use surgassist_core::mop::{
    gradcheck, train_mop, write_loss_curve, Checkpoint, Mode, MopConfig, Optimizer, SyntheticTask,
    TrainHyper,
};
use surgassist_core::orchestrator::{DispatchTrace, ImageInput, ScriptedBackend};
use surgassist_core::protocol::{generate_fc_dataset, write_jsonl, DatasetCounts, TemplateSet};

use crate::app::{load_bundle, read_cases, App, CaseFile};
use crate::config::{BackendKind, ServiceConfig, BUILTIN_FIXTURE_EXTRA, BUILTIN_FIXTURE_SEED};
use crate::error::CliError;
use crate::server::RunningService;

/// Surgical assistant: function-calling dispatch, evaluation and
/// mixture-of-projectors tooling.
#[derive(Debug, Parser)]
#[command(name = "surgassist", version, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Interactive terminal chat. Reads one query per line from stdin;
    /// `/image REF` attaches an image to the following queries, `/quit` exits.
    Chat(ChatArgs),
    /// Runs an evaluation suite and writes JSON and Markdown reports.
    Eval(EvalArgs),
    /// Generates a function-calling dataset as JSONL.
    GenData(GenDataArgs),
    /// Writes a synthetic fixture bundle directory.
    GenFixtures(GenFixturesArgs),
    /// Mixture-of-projectors training, gradient check and projector sweep.
    #[command(subcommand)]
    Mop(MopCommand),
    /// Starts the HTTP service.
    Serve(ServeArgs),
    /// Prints this command-line reference as Markdown.
    Reference,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    /// Service configuration file (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the model's reasoning for each round.
    #[arg(long)]
    pub show_thinking: bool,
    /// Image attached to every query until changed with `/image`.
    #[arg(long)]
    pub image: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalBackend {
    /// Replays gold replies from dataset records, or the `--script` file.
    Scripted,
    /// Calls the model endpoint given by `--backend-url`.
    Remote,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSONL file of dataset records or evaluation cases.
    #[arg(long)]
    pub cases: PathBuf,
    /// Model backend to evaluate.
    #[arg(long, value_enum, default_value_t = EvalBackend::Scripted)]
    pub backend: EvalBackend,
    /// Script file for the scripted backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Model endpoint for the remote backend.
    #[arg(long)]
    pub backend_url: Option<String>,
    /// Fixture bundle directory; the built-in bundle when omitted.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Number of registered functions (2 to 6).
    #[arg(long, default_value_t = 3)]
    pub functions: usize,
    /// Rejection lexicon file.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Output directory for report.json and report.md.
    #[arg(long, default_value = "eval-report")]
    pub out: PathBuf,
    /// Fail with exit code 1 when SR is below this percentage.
    #[arg(long)]
    pub min_sr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Records whose gold answer calls a function.
    #[arg(long, default_value_t = 2000)]
    pub positive: usize,
    /// Requests for a function the registry does not offer.
    #[arg(long, default_value_t = 200)]
    pub negative: usize,
    /// Conversational records answered without a call.
    #[arg(long = "no-call", default_value_t = 200)]
    pub no_call: usize,
    /// Records built from held-out templates.
    #[arg(long, default_value_t = 200)]
    pub unseen: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixture bundle directory; the built-in bundle when omitted.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Output JSONL file.
    #[arg(long, default_value = "dataset.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenFixturesArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = BUILTIN_FIXTURE_SEED)]
    pub seed: u64,
    /// Random scenes added to the probe scene.
    #[arg(long, default_value_t = BUILTIN_FIXTURE_EXTRA)]
    pub extra: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskKind {
    /// Two linear maps selected by a domain flag column.
    TwoDomain,
    /// One linear map.
    Linear,
}

impl TaskKind {
    fn task(self, seed: u64) -> SyntheticTask {
        match self {
            Self::TwoDomain => SyntheticTask::two_domain(seed),
            Self::Linear => SyntheticTask::single_linear(seed),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum MopCommand {
    /// Trains a mixture of projectors on a synthetic alignment task.
    Train(TrainArgs),
    /// Compares analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Final loss for each projector count on the two-domain task.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = TaskKind::TwoDomain)]
    pub task: TaskKind,
    #[arg(long, default_value_t = 1)]
    pub task_seed: u64,
    #[arg(long, default_value_t = 8)]
    pub projectors: usize,
    #[arg(long, default_value_t = 2)]
    pub top_k: usize,
    /// Router noise standard deviation during training.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Projector and router hidden width.
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use plain gradient descent instead of Adam.
    #[arg(long)]
    pub sgd: bool,
    /// Checkpoint output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Loss curve CSV output file.
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Number of random configurations.
    #[arg(long, default_value_t = 12)]
    pub configs: usize,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 1)]
    pub task_seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Projector counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = SWEEP_PROJECTOR_COUNTS)]
    pub counts: Vec<usize>,
    /// CSV output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service configuration file (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Listen address, overriding the configuration.
    #[arg(long)]
    pub listen: Option<String>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::runtime(format!("{}: {e}", path.display()))
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?))
}

fn load_config(path: Option<&Path>) -> Result<ServiceConfig, CliError> {
    ServiceConfig::load(path).map_err(|e| CliError::config(e.to_string()))
}

/// Runs one parsed command, writing human-readable output to `out`.
pub async fn run(cli: Cli, input: impl BufRead, out: &mut impl Write) -> Result<(), CliError> {
    match cli.command {
        Command::Chat(a) => chat(a, input, out).await,
        Command::Eval(a) => eval(a, out).await,
        Command::GenData(a) => gen_data(a, out),
        Command::GenFixtures(a) => gen_fixtures(a, out),
        Command::Mop(MopCommand::Train(a)) => mop_train(a, out),
        Command::Mop(MopCommand::Gradcheck(a)) => mop_gradcheck(a, out),
        Command::Mop(MopCommand::Sweep(a)) => mop_sweep(a, out),
        Command::Serve(a) => serve(a, out).await,
        Command::Reference => {
            write!(out, "{}", crate::reference::markdown()).map_err(|e| CliError::runtime(e.to_string()))
        }
    }
}

fn w(out: &mut impl Write, text: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(text).and_then(|_| out.write_all(b"\n")).map_err(|e| CliError::runtime(e.to_string()))
}

pub fn describe_trace(trace: &DispatchTrace, show_thinking: bool) -> Vec<String> {
    let mut lines = Vec::new();
    if show_thinking {
        for r in [&trace.first_reply, &trace.second_reply].into_iter().flatten() {
            if !r.thinking.is_empty() {
                lines.push(format!("[thinking] {}", r.thinking));
            }
        }
    }
    if let Some(call) = trace.requested_call() {
        let params = serde_json::to_string(&call.api_params).unwrap_or_default();
        let result = match (&trace.function_result, &trace.error) {
            (Some(r), _) => r.render_text(),
            (None, Some(e)) => format!("not executed ({})", e.code()),
            (None, None) => "not executed".to_string(),
        };
        lines.push(format!("[call] {} {params} -> {result}", call.api_name));
    }
    lines.push(format!("assistant: {}", trace.final_reply));
    let rounds = if trace.rounds == 1 { "1 round" } else { "2 rounds" };
    match &trace.error {
        Some(e) => lines.push(format!("[trace {} | {rounds} | error {}]", trace.trace_id, e.code())),
        None => lines.push(format!("[trace {} | {rounds}]", trace.trace_id)),
    }
    lines
}

async fn chat(a: ChatArgs, input: impl BufRead, out: &mut impl Write) -> Result<(), CliError> {
    let config = load_config(a.config.as_deref())?;
    let app = App::from_config(&config)?;
    let session = app.orchestrator.create_session().map_err(|e| CliError::runtime(e.to_string()))?;
    let mut image = a.image;
    w(out, format_args!("session {session} ({}); /image REF, /quit", app.backend_label))?;
    for line in input.lines() {
        let line = line.map_err(|e| CliError::input(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "/quit" {
            break;
        }
        if let Some(r) = line.strip_prefix("/image") {
            let r = r.trim();
            image = (!r.is_empty()).then(|| r.to_string());
            w(out, format_args!("[image {}]", image.as_deref().unwrap_or("none")))?;
            continue;
        }
        match app.orchestrator.handle_query(&session, line, image.clone().map(ImageInput::Ref)).await {
            Ok(o) => {
                for l in describe_trace(&o.trace, a.show_thinking) {
                    w(out, format_args!("{l}"))?;
                }
            }
            Err(e) => w(out, format_args!("[error] {e}"))?,
        }
    }
    Ok(())
}

async fn eval(a: EvalArgs, out: &mut impl Write) -> Result<(), CliError> {
    let file = read_cases(&a.cases)?;
    let cases = file.cases();
    let mut config = ServiceConfig::default();
    config.fixtures = a.fixtures.clone();
    config.lexicon = a.lexicon.clone();
    config.functions.count = a.functions;
    let bundle = Arc::new(load_bundle(a.fixtures.as_deref())?);
    let (backend, label): (Arc<dyn surgassist_core::orchestrator::LlmBackend>, String) = match a.backend {
        EvalBackend::Scripted => match (&a.script, &file) {
            (Some(p), _) => (Arc::new(ScriptedBackend::load(p).map_err(CliError::input)?), "scripted".into()),
            (None, CaseFile::Records(r)) => (Arc::new(ScriptedBackend::from_records(r)), "scripted".into()),
            (None, CaseFile::Cases(_)) => {
                return Err(CliError::input(
                    "the scripted backend needs dataset records with gold replies, or --script",
                ))
            }
        },
        EvalBackend::Remote => {
            config.backend.kind = BackendKind::Remote;
            config.backend.url = Some(
                a.backend_url
                    .clone()
                    .ok_or_else(|| CliError::input("--backend remote requires --backend-url"))?,
            );
            crate::app::build_backend(&config.backend)?
        }
    };
    let app = App::assemble(&config, bundle, backend, label.clone())?;
    let report = run_eval(&app.orchestrator, &cases, &app.lexicon, &label).await.map_err(|e| match e {
        surgassist_core::eval::EvalError::Orchestrator(_) | surgassist_core::eval::EvalError::Io(_) => {
            CliError::runtime(e.to_string())
        }
        _ => CliError::input(e.to_string()),
    })?;
    std::fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let json_path = a.out.join("report.json");
    let md_path = a.out.join("report.md");
    std::fs::write(&json_path, report.to_json()).map_err(io_err(&json_path))?;
    std::fs::write(&md_path, report.to_markdown()).map_err(io_err(&md_path))?;
    let ag = &report.aggregates;
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.2}"));
    w(
        out,
        format_args!(
            "{} cases: SR {:.2} KeyHit {} Rej {} BLEU@4 {:.2} det mIoU {} seg mIoU {}",
            cases.len(),
            ag.sr,
            opt(ag.keyhit),
            opt(ag.rej),
            ag.bleu4,
            opt(ag.det_miou),
            opt(ag.seg_miou)
        ),
    )?;
    w(out, format_args!("wrote {} and {}", json_path.display(), md_path.display()))?;
    if let Some(min) = a.min_sr {
        if ag.sr < min {
            return Err(CliError::check(format!("SR {:.2} is below {min:.2}", ag.sr)));
        }
    }
    Ok(())
}

fn gen_data(a: GenDataArgs, out: &mut impl Write) -> Result<(), CliError> {
    let bundle = Arc::new(load_bundle(a.fixtures.as_deref())?);
    let specs = default_registry(Arc::clone(&bundle)).specs();
    let counts = DatasetCounts {
        positive: a.positive,
        negative: a.negative,
        no_call: a.no_call,
        unseen: a.unseen,
    };
    let records = generate_fc_dataset(&TemplateSet::builtin(), &bundle, &specs, counts, a.seed)
        .map_err(|e| CliError::input(e.to_string()))?;
    let mut f = create_file(&a.out)?;
    write_jsonl(&records, &mut f).map_err(io_err(&a.out))?;
    f.flush().map_err(io_err(&a.out))?;
    w(out, format_args!("wrote {} records to {}", records.len(), a.out.display()))
}

fn gen_fixtures(a: GenFixturesArgs, out: &mut impl Write) -> Result<(), CliError> {
    let bundle = FixtureBundle::synthetic(a.seed, a.extra);
    bundle
        .write_dir(&a.out)
        .map_err(|e| CliError::runtime(format!("{}: {e}", a.out.display())))?;
    w(out, format_args!("wrote {} scenes to {}", bundle.fixtures().len(), a.out.display()))
}

fn mop_train(a: TrainArgs, out: &mut impl Write) -> Result<(), CliError> {
    let task = a.task.task(a.task_seed);
    let data = task.generate().map_err(|e| CliError::input(e.to_string()))?;
    let cfg = MopConfig {
        n_projectors: a.projectors,
        top_k: a.top_k,
        noise_sigma: a.sigma,
        c_in: task.c_in,
        hidden: a.hidden,
        c_out: task.c_out,
        router_hidden: a.hidden,
        mode: Mode::Training,
    };
    cfg.validate().map_err(|e| CliError::input(e.to_string()))?;
    let hyper = TrainHyper {
        lr: a.lr,
        steps: a.steps,
        batch: a.batch,
        seed: a.seed,
        optimizer: if a.sgd { Optimizer::Sgd } else { Optimizer::Adam },
    };
    let outcome = train_mop(&data, &cfg, &hyper).map_err(|e| CliError::runtime(e.to_string()))?;
    w(
        out,
        format_args!(
            "N={} K={} steps={} final_loss={:.6e}",
            cfg.n_projectors, cfg.top_k, hyper.steps, outcome.final_loss
        ),
    )?;
    if let Some(p) = &a.loss_curve {
        write_loss_curve(&outcome.loss_curve, create_file(p)?).map_err(|e| CliError::runtime(e.to_string()))?;
    }
    if let Some(p) = &a.out {
        let ck = Checkpoint::new(cfg.with_mode(Mode::Inference), outcome.params)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        ck.write_to(create_file(p)?).map_err(|e| CliError::runtime(e.to_string()))?;
        w(out, format_args!("wrote checkpoint {}", p.display()))?;
    }
    Ok(())
}

fn mop_gradcheck(a: GradcheckArgs, out: &mut impl Write) -> Result<(), CliError> {
    let report = gradcheck(a.seed, a.configs).map_err(|e| CliError::runtime(e.to_string()))?;
    for c in &report.cases {
        let k = &c.config;
        w(
            out,
            format_args!(
                "N={} K={} c_in={} hidden={} c_out={} router_hidden={} tokens={} checked={} max_rel_error={:.3e} ({})",
                k.n_projectors, k.top_k, k.c_in, k.hidden, k.c_out, k.router_hidden, c.tokens, c.checked, c.max_rel_error, c.worst_entry
            ),
        )?;
    }
    w(out, format_args!("max relative error {:.3e}", report.max_rel_error))?;
    if report.max_rel_error > a.tolerance {
        return Err(CliError::check(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_error, a.tolerance
        )));
    }
    Ok(())
}

fn mop_sweep(a: SweepArgs, out: &mut impl Write) -> Result<(), CliError> {
    let task = SyntheticTask::two_domain(a.task_seed);
    let hyper = TrainHyper {
        steps: a.steps,
        seed: a.seed,
        ..TrainHyper::default()
    };
    let rows = sweep_projectors(&task, &a.counts, &hyper).map_err(|e| CliError::runtime(e.to_string()))?;
    match &a.out {
        Some(p) => {
            write_csv(&rows, create_file(p)?).map_err(|e| CliError::runtime(e.to_string()))?;
            w(out, format_args!("wrote {} rows to {}", rows.len(), p.display()))
        }
        None => write_csv(&rows, out).map_err(|e| CliError::runtime(e.to_string())),
    }
}

async fn serve(a: ServeArgs, out: &mut impl Write) -> Result<(), CliError> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(l) = a.listen {
        config.listen = l;
    }
    let app = App::from_config(&config)?;
    let service = RunningService::start(app, &config.listen).await?;
    w(out, format_args!("listening on http://{}", service.addr))?;
    out.flush().map_err(|e| CliError::runtime(e.to_string()))?;
    service
        .run_until(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

