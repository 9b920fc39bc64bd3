use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thinkfirst_cli::config::{CliConfig, MllmKind, SegmenterKind};
use thinkfirst_cli::service::{router, AppState};
use thinkfirst_core::backends::{protocol, BackendDescriptor, KeywordMockSegmenter, MllmRequest};
use thinkfirst_core::demo::{write_demo, RULES};
use thinkfirst_core::eval::{render_report, render_table, ReportStyle, Split};
use thinkfirst_core::{
    iou, load_manifest, run_eval, BinaryMask, ControlAnnotation, Error, ErrorKind, EvalOptions, ImageRef,
    MllmBackend, PipelineMode, QueryKind, Result, SegmentationOutcome, TaskMode, UserQueryKind,
};

#[derive(Parser)]
#[command(name = "thinkfirst", version, about = "Reasoning segmentation with a chain-of-thought front end")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML file selecting backends and directories.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mllm: Option<MllmKind>,
    #[arg(long, global = true, value_enum)]
    segmenter: Option<SegmenterKind>,
    #[arg(long, global = true)]
    fixture_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    prompt_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    log_dir: Option<PathBuf>,
    /// Keyword mock rule, `trigger[,trigger...]=rect:x0,y0,x1,y1`. Repeatable.
    #[arg(long = "mock-rule", global = true)]
    mock_rules: Vec<String>,
    /// Command line of the segmentation agent, split on whitespace.
    #[arg(long = "segmenter-cmd", global = true)]
    segmenter_cmd: Option<String>,
    /// Keep the whole model response as the summary when it cannot be parsed.
    #[arg(long, global = true)]
    degraded: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one image from a text query.
    Segment {
        #[arg(long)]
        image: PathBuf,
        /// Defaults to the implicit query template.
        #[arg(long)]
        query: Option<String>,
        #[arg(long, default_value = "standard")]
        task_mode: TaskMode,
        #[arg(long, default_value = "full")]
        mode: PipelineMode,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cot_out: Option<PathBuf>,
    },
    /// Segment the region marked by a visual annotation.
    Refine {
        #[arg(long)]
        image: PathBuf,
        /// `circle:cx,cy,rx,ry`, `star:cx,cy,r` or `box:x0,y0,x1,y1`.
        #[arg(long)]
        annotation: ControlAnnotation,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cot_out: Option<PathBuf>,
    },
    /// Find the boy in the striped shirt.
    Waldo {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        cot_out: Option<PathBuf>,
    },
    /// Score a manifest and print gIoU and cIoU.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "implicit")]
        query_kind: QueryKind,
        /// Repeat to compare modes in one table.
        #[arg(long, default_value = "full")]
        mode: Vec<PipelineMode>,
        #[arg(long)]
        split: Option<Split>,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run baseline, describe and full modes on one image side by side.
    Ablate {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        query: Option<String>,
        #[arg(long, default_value = "standard")]
        task_mode: TaskMode,
        /// Ground-truth mask for an IoU column.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Serve the HTTP session API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Write a small offline dataset with replay fixtures and a config file.
    Demo {
        #[arg(long)]
        out: PathBuf,
    },
    /// Keyword mock speaking the segmentation agent protocol on stdin/stdout.
    #[command(hide = true)]
    MockSegmenter {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage | ErrorKind::InvalidArgument => 2,
        ErrorKind::Protocol => 3,
        ErrorKind::Backend => 4,
    }
}

fn load_config(g: &GlobalArgs) -> Result<CliConfig> {
    let mut c = match &g.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    if let Some(m) = g.mllm {
        c.mllm = m;
    }
    if let Some(s) = g.segmenter {
        c.segmenter = s;
    }
    for (flag, slot) in [
        (&g.fixture_dir, &mut c.fixture_dir),
        (&g.cache_dir, &mut c.cache_dir),
        (&g.prompt_dir, &mut c.prompt_dir),
        (&g.log_dir, &mut c.log_dir),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if !g.mock_rules.is_empty() {
        c.mock_rules = g.mock_rules.clone();
    }
    if let Some(cmd) = &g.segmenter_cmd {
        c.segmenter_command = cmd.split_whitespace().map(String::from).collect();
    }
    if g.degraded {
        c.degraded_on_failure = true;
    }
    Ok(c)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn report_outcome(out: &SegmentationOutcome, mask_path: Option<&Path>, cot_path: Option<&Path>) -> Result<()> {
    if let Some(path) = mask_path {
        write_file(path, &out.mask.to_png()?)?;
    }
    if let Some(path) = cot_path {
        match &out.cot {
            Some(cot) => write_file(path, cot.raw_transcript.as_bytes())?,
            None => log::warn!("{} mode has no transcript; {} not written", out.mode, path.display()),
        }
    }
    let (w, h) = out.mask.dimensions();
    println!("mode: {}", out.mode);
    if let Some(summary) = &out.summary {
        println!("summary: {summary}");
    }
    println!("prompt: {}", out.composed_prompt);
    println!("mask: {} of {}x{} pixels", out.mask.count(), w, h);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli.global)?;
    match cli.command {
        Command::Segment {
            image,
            query,
            task_mode,
            mode,
            out,
            cot_out,
        } => {
            let pipeline = config.build_pipeline()?;
            let query = match query {
                Some(q) => q,
                None => pipeline.templates().user_query(&UserQueryKind::Implicit)?,
            };
            let outcome = pipeline.segment(&ImageRef::from_path(&image)?, &query, &task_mode, mode)?;
            report_outcome(&outcome, out.as_deref(), cot_out.as_deref())
        }
        Command::Refine {
            image,
            annotation,
            out,
            cot_out,
        } => {
            let pipeline = config.build_pipeline()?;
            let outcome = pipeline.segment_with_control(&ImageRef::from_path(&image)?, &annotation)?;
            report_outcome(&outcome, out.as_deref(), cot_out.as_deref())
        }
        Command::Waldo { image, out, cot_out } => {
            let pipeline = config.build_pipeline()?;
            let outcome = pipeline.find_waldo(&ImageRef::from_path(&image)?)?;
            report_outcome(&outcome, out.as_deref(), cot_out.as_deref())
        }
        Command::Eval {
            manifest,
            query_kind,
            mode,
            split,
            parallelism,
            report,
        } => {
            let pipeline = config.build_pipeline()?;
            let mut manifest = load_manifest(&manifest)?;
            if let Some(split) = split {
                manifest = manifest.split(split);
            }
            let mut reports = Vec::new();
            for m in mode {
                let mut opts = EvalOptions::new(query_kind, m);
                opts.parallelism = parallelism.max(1);
                let r = run_eval(&manifest, &pipeline, &opts)?;
                for s in r.per_sample.iter().filter(|s| s.error.is_some()) {
                    eprintln!("{}: {}", s.id, s.error.as_deref().unwrap_or_default());
                }
                reports.push(r);
            }
            print!("{}", render_table(&reports));
            if let Some(path) = report {
                let json = match reports.as_slice() {
                    [one] => render_report(one, ReportStyle::Json),
                    many => serde_json::to_string_pretty(many).expect("reports serialize"),
                };
                write_file(&path, format!("{json}\n").as_bytes())?;
            }
            Ok(())
        }
        Command::Ablate {
            image,
            query,
            task_mode,
            gt,
        } => ablate(&config, &image, query, &task_mode, gt.as_deref()),
        Command::Serve { port, host } => serve(&config, &host, port.unwrap_or(config.port)),
        Command::Demo { out } => demo(&out),
        Command::MockSegmenter { out_dir } => {
            let rules = if config.mock_rules.is_empty() {
                thinkfirst_core::demo::DemoData::rules()
            } else {
                config.rules()?
            };
            let dir = out_dir.unwrap_or_else(|| std::env::temp_dir().join(format!("thinkfirst-mock-{}", std::process::id())));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            protocol::serve(stdin, stdout, &KeywordMockSegmenter::new(rules), &dir)?;
            Ok(())
        }
    }
}

/// Counts calls that reach the wrapped model.
struct CountingMllm {
    inner: Arc<dyn MllmBackend>,
    calls: AtomicUsize,
}

impl MllmBackend for CountingMllm {
    fn complete(&self, request: &MllmRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }

    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }

    fn health(&self) -> Result<()> {
        self.inner.health()
    }
}

fn ablate(config: &CliConfig, image: &Path, query: Option<String>, task_mode: &TaskMode, gt: Option<&Path>) -> Result<()> {
    let counting = Arc::new(CountingMllm {
        inner: config.build_mllm()?,
        calls: AtomicUsize::new(0),
    });
    let pipeline = config.assemble(counting.clone(), config.build_segmenter()?)?;
    let image = ImageRef::from_path(image)?;
    let query = match query {
        Some(q) => q,
        None => pipeline.templates().user_query(&UserQueryKind::Implicit)?,
    };
    let gt = gt.map(BinaryMask::from_path).transpose()?;

    let mut rows = Vec::new();
    for mode in PipelineMode::ALL {
        let before = counting.calls.load(Ordering::SeqCst);
        let result = pipeline.segment(&image, &query, task_mode, mode);
        let calls = counting.calls.load(Ordering::SeqCst) - before;
        rows.push((mode, calls, result));
    }

    let mut stdout = std::io::stdout().lock();
    let mut line = |s: String| writeln!(stdout, "{s}").map_err(|e| Error::io("<stdout>", e));
    line(format!("{:<10}  {:>10}  {:>8}  {:>6}  prompt", "mode", "mllm_calls", "mask_px", "iou"))?;
    let mut first_error = None;
    for (mode, calls, result) in rows {
        match result {
            Ok(out) => {
                let score = match &gt {
                    Some(gt) => format!("{:.1}", iou(&out.mask, gt)? * 100.0),
                    None => "-".into(),
                };
                line(format!(
                    "{:<10}  {:>10}  {:>8}  {:>6}  {}",
                    mode.as_str(),
                    calls,
                    out.mask.count(),
                    score,
                    out.composed_prompt
                ))?;
            }
            Err(e) => {
                line(format!("{:<10}  {:>10}  {:>8}  {:>6}  error: {e}", mode.as_str(), calls, "-", "-"))?;
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn serve(config: &CliConfig, host: &str, port: u16) -> Result<()> {
    let pipeline = config.build_pipeline()?;
    let app = router(AppState::new(pipeline, config.max_image_bytes));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Config(format!("tokio runtime: {e}")))?;
    runtime.block_on(async move {
        let addr = format!("{host}:{port}");
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
        eprintln!("listening on http://{addr}");
        axum::serve(listener, app)
            .await
            .map_err(|e| Error::Config(format!("server stopped: {e}")))
    })
}

fn demo(out: &Path) -> Result<()> {
    let data = write_demo(out)?;
    let rel = |p: &Path| p.strip_prefix(out).unwrap_or(p).display().to_string();
    let rules: Vec<String> = RULES.iter().map(|r| format!("{r:?}")).collect();
    let toml = format!(
        "mllm = \"replay\"\nfixture_dir = {:?}\nsegmenter = \"keyword-mock\"\nmock_rules = [{}]\n",
        rel(&data.fixtures),
        rules.join(", ")
    );
    let config_path = out.join("thinkfirst.toml");
    write_file(&config_path, toml.as_bytes())?;
    println!("config:   {}", config_path.display());
    println!("manifest: {}", data.manifest.display());
    println!("images:   {}, {}, {}", data.flatfish.display(), data.chair.display(), data.waldo.display());
    println!("chair annotation: {}", data.chair_annotation);
    Ok(())
}
