use std::fs::File;
use std::io::{BufReader, BufWriter, IsTerminal, Write};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};
use patchlink_core::classifier::{load_model, save_model, train};
use patchlink_core::eval::{build_training_pairs, run_evaluation, EvalConfig, Method};
use patchlink_core::model::{
    parse_changes_file, parse_links_file, write_changes_file, write_links_file, ChangeRecord, LinkLabel,
};
use patchlink_core::synthetic::planted_corpus;
use patchlink_core::{
    rank_candidates, EmbeddingCache, EmbeddingProvider, FallbackEmbedder, HttpEmbedder, ProjectScope, RankRequest,
    TrainConfig, WindowConfig, WindowMode,
};
use patchlink_gerrit::{GerritClient, GerritConfig};
use patchlink_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "patchlink", version, about = "Find changes linked to a code review")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a forest model from labelled changes.
    Train(TrainArgs),
    /// Compute Recall@K and MRR for each method and window.
    Evaluate(EvaluateArgs),
    /// Download changes from Gerrit into a changes file.
    Fetch(FetchArgs),
    /// Rank candidates for one change in a local changes file.
    Predict(PredictArgs),
    /// Run the local HTTP inference service.
    Serve(ServeArgs),
    /// Write a synthetic corpus with planted links.
    Synth(SynthArgs),
}

#[derive(Args)]
struct EmbedArgs {
    /// Embedding server base URL; the built-in hashing embedder is used when unset.
    #[arg(long, env = "EMBED_URL")]
    embed_url: Option<String>,
    /// Timeout for embedding requests, in seconds.
    #[arg(long, default_value_t = 30)]
    embed_timeout: u64,
}

impl EmbedArgs {
    fn provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match &self.embed_url {
            Some(url) => Box::new(
                HttpEmbedder::connect(url, Duration::from_secs(self.embed_timeout))
                    .with_context(|| format!("connecting to embedding server {url}"))?,
            ),
            None => Box::new(FallbackEmbedder::default()),
        })
    }
}

#[derive(Args)]
struct GerritArgs {
    #[arg(long, env = "GERRIT_URL")]
    gerrit_url: String,
    #[arg(long, env = "GERRIT_USER")]
    gerrit_user: Option<String>,
    #[arg(long, env = "GERRIT_HTTP_PASSWORD", hide_env_values = true)]
    gerrit_password: Option<String>,
}

impl GerritArgs {
    fn config(&self) -> Result<GerritConfig> {
        Ok(GerritConfig::new(&self.gerrit_url)?
            .with_credentials(self.gerrit_user.clone(), self.gerrit_password.clone())?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    changes: PathBuf,
    #[arg(long)]
    links: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 14)]
    window_days: u32,
    #[arg(long, default_value_t = 5)]
    negatives_per_positive: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    n_trees: usize,
    #[arg(long, default_value_t = 16)]
    max_depth: usize,
    /// Stamp the model with this time instead of now (RFC 3339).
    #[arg(long)]
    trained_at: Option<DateTime<Utc>>,
    #[command(flatten)]
    embed: EmbedArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    changes: PathBuf,
    #[arg(long)]
    links: PathBuf,
    /// Required when the learned method is evaluated.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "2,7,14,30")]
    windows: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,6,8,10")]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "learned,combined,text_only,file_only")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "symmetric")]
    window_mode: WindowMode,
    /// Let candidates come from any project.
    #[arg(long)]
    cross_project: bool,
    /// Write one JSON object per (method, window) here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    embed: EmbedArgs,
}

#[derive(Args)]
struct FetchArgs {
    #[command(flatten)]
    gerrit: GerritArgs,
    #[arg(long)]
    project: String,
    /// Start date (YYYY-MM-DD or RFC 3339).
    #[arg(long, value_parser = parse_when)]
    since: DateTime<Utc>,
    #[arg(long, value_parser = parse_when)]
    until: DateTime<Utc>,
    #[arg(long, default_value_t = 500)]
    limit: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    changes: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 14)]
    window_days: u32,
    #[arg(long, default_value = "symmetric")]
    window_mode: WindowMode,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    #[arg(long)]
    cross_project: bool,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    embed: EmbedArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8787)]
    port: u16,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    gerrit: GerritArgs,
    /// Origin allowed to call the API from a browser; repeatable.
    #[arg(long = "allowed-origin")]
    allowed_origins: Vec<String>,
    #[command(flatten)]
    embed: EmbedArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    n_changes: usize,
    #[arg(long, default_value_t = 20)]
    n_links: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    changes: PathBuf,
    #[arg(long)]
    links: PathBuf,
}

fn parse_when(s: &str) -> Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc())
        .map_err(|_| format!("expected YYYY-MM-DD or RFC 3339, got {s:?}"))
}

fn read_changes(path: &Path) -> Result<Vec<ChangeRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_changes_file(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn read_links(path: &Path) -> Result<Vec<LinkLabel>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_links_file(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let changes = read_changes(&args.changes)?;
    let links = read_links(&args.links)?;
    let provider = args.embed.provider()?;
    let cache = EmbeddingCache::new();
    let set = build_training_pairs(
        &changes,
        &links,
        args.window_days,
        args.negatives_per_positive,
        args.seed,
        provider.as_ref(),
        &cache,
    )?;
    tracing::info!(
        positives = set.positives,
        negatives = set.negatives,
        out_of_window = set.skipped_out_of_window,
        "training pairs built"
    );
    let config = TrainConfig {
        n_trees: args.n_trees,
        max_depth: args.max_depth,
        seed: args.seed,
        trained_at: args.trained_at.unwrap_or_else(Utc::now),
        ..TrainConfig::default()
    };
    let model = train(&set.samples, &config)?;
    save_model(&model, &args.out)?;
    println!(
        "trained {} trees on {} pairs ({} positive, {} negative) -> {}",
        model.n_trees,
        set.samples.len(),
        set.positives,
        set.negatives,
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let changes = read_changes(&args.changes)?;
    let links = read_links(&args.links)?;
    let model = match &args.model {
        Some(p) => Some(load_model(p).with_context(|| format!("loading {}", p.display()))?),
        None if args.methods.contains(&Method::Learned) => bail!("--model is required for the learned method"),
        None => None,
    };
    let provider = args.embed.provider()?;
    let config = EvalConfig {
        windows: args.windows,
        ks: args.k,
        methods: args.methods,
        seed: args.seed,
        mode: args.window_mode,
        scope: if args.cross_project { ProjectScope::AnyProject } else { ProjectScope::SameProject },
        ..EvalConfig::default()
    };
    let report = run_evaluation(&changes, &links, model.as_ref(), provider.as_ref(), &EmbeddingCache::new(), &config)?;
    print!("{}", report.render_tables());
    if let Some(out) = &args.out {
        let mut w = create(out)?;
        w.write_all(report.to_jsonl().as_bytes())?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_fetch(args: FetchArgs) -> Result<()> {
    if args.since > args.until {
        bail!("--since must not be after --until");
    }
    let client = GerritClient::new(args.gerrit.config()?)?;
    let rt = tokio::runtime::Runtime::new()?;
    let mut changes = rt.block_on(client.query_changes(&args.project, args.since, args.until, args.limit))?;
    let fetched = changes.len();
    changes.retain(|c| c.created_at >= args.since && c.created_at <= args.until);
    changes.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.change_key.cmp(&b.change_key)));
    changes.dedup_by(|a, b| a.change_key == b.change_key);
    let mut w = create(&args.out)?;
    write_changes_file(&mut w, &changes)?;
    w.flush()?;
    println!("fetched {fetched} changes, wrote {} created in range -> {}", changes.len(), args.out.display());
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let changes = read_changes(&args.changes)?;
    let model = load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let target = changes
        .iter()
        .find(|c| c.change_key == args.target)
        .with_context(|| format!("change {} is not in {}", args.target, args.changes.display()))?
        .clone();
    let provider = args.embed.provider()?;
    let mut request = RankRequest::new(target, changes, WindowConfig::new(args.window_days, args.window_mode)?);
    request.top_k = args.top_k;
    if args.cross_project {
        request.scope = ProjectScope::AnyProject;
    }
    let ranked = rank_candidates(&request, &model, provider.as_ref(), &EmbeddingCache::new())?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&ranked)?);
        return Ok(());
    }
    if ranked.is_empty() {
        println!("no related changes found in window");
    }
    for p in &ranked {
        println!(
            "{:>3}  {:>3}%  {:<12}  {}",
            p.rank,
            patchlink_service::confidence_pct(p.score),
            p.change_key,
            p.subject
        );
    }
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let mut config = ServiceConfig::new(&args.model, args.gerrit.config()?);
    config.listen_address = SocketAddr::from((Ipv4Addr::LOCALHOST, args.port));
    config.embed_url = args.embed.embed_url.clone();
    config.embed_timeout = Duration::from_secs(args.embed.embed_timeout);
    config.allowed_origins = args.allowed_origins;
    let state = AppState::load(&config)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(patchlink_service::serve(&config, state, async {
        let _ = tokio::signal::ctrl_c().await;
    }))?;
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    if args.n_links * 2 > args.n_changes {
        bail!("--n-links can be at most half of --n-changes");
    }
    let corpus = planted_corpus(args.n_changes, args.n_links, args.seed);
    let mut w = create(&args.changes)?;
    write_changes_file(&mut w, &corpus.changes)?;
    w.flush()?;
    let mut w = create(&args.links)?;
    write_links_file(&mut w, &corpus.links)?;
    w.flush()?;
    println!("wrote {} changes and {} links", corpus.changes.len(), corpus.links.len());
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "patchlink=info,warn".into()),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Fetch(a) => cmd_fetch(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
