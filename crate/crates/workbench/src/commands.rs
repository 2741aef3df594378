use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use cdcr_core::baselines::{
    agglomerative_cluster, bcos_cluster, load_external_scores, sweep_threshold, LabeledPair, Linkage, ScoredPair,
    SweepRange,
};
use cdcr_core::engine::{Engine, MemoryLog, QueueConfig, State};
use cdcr_core::evaluation::{
    b3_score, capability_report, cluster_predictor, clusters_from_records, histogram_csv, muc_score,
    read_capability_cases, read_cluster_file, records_from_clusters, similarity_histogram, write_cluster_file,
    Metric, ScoreReport,
};
use cdcr_core::exec::Execution;
use cdcr_core::ingestion::{self, read_document_pairs, read_mentions, stub_embed};
use cdcr_core::model::{AnnotatorId, Gold, MentionId, PairStatus, Split, Verdict};
use cdcr_core::store::{self, open_engine, DEFAULT_SNAPSHOT_EVERY};
use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::config::{BaselineConfig, Config, ServiceConfig};
use crate::http::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "cdcr", version, about = "Cross-document coreference annotation workbench")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Workbench TOML configuration.
    #[arg(long, global = true, env = "CDCR_CONFIG")]
    pub config: Option<PathBuf>,
    /// Store directory; overrides `store_dir`.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// IAA sampling seed; overrides `queue.sampling_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load document pairs, mentions and token embeddings into the store.
    Ingest(IngestArgs),
    /// Generate candidate pairs and print the ranked queue.
    GenPairs(GenPairsArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
    /// Inter-annotator agreement over IAA pairs.
    Kappa(KappaArgs),
    /// Derive consensus gold labels for IAA pairs.
    Consensus,
    /// Score a system cluster file against a gold cluster file.
    Score(ScoreArgs),
    /// Pick the cosine threshold with the best pairwise accuracy.
    SweepThreshold(SweepArgs),
    /// Cluster external pairwise scores agglomeratively.
    ClusterScores(ClusterScoresArgs),
    /// Threshold candidate similarities and close links transitively.
    Bcos(BcosArgs),
    /// Per-category pass rates for a capability case file.
    CapabilityTest(CapabilityArgs),
    /// Similarity histogram split by gold label, as CSV.
    Histogram(HistogramArgs),
    /// Export gold clusters (or difficult pairs).
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Document-pair file, one record per line.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Mention file, one {doc_id, start_char, end_char} per line.
    #[arg(long)]
    pub mentions: Option<PathBuf>,
    /// Token embedding files, one per document pair.
    #[arg(long, num_args = 1..)]
    pub embeddings: Vec<PathBuf>,
    /// Embed pairs lacking embeddings with the deterministic stub encoder.
    #[arg(long)]
    pub stub_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub stub_seed: u64,
    /// Fail when any record is rejected.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct GenPairsArgs {
    #[arg(long)]
    pub sequential: bool,
    /// Write the ranked queue here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub addr: Option<std::net::SocketAddr>,
    /// Extra annotators to register before serving.
    #[arg(long = "annotator")]
    pub annotators: Vec<String>,
}

#[derive(Debug, Args)]
pub struct KappaArgs {
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub system: PathBuf,
    /// muc or b3; both when omitted.
    #[arg(long)]
    pub metric: Option<Metric>,
    /// Keep gold singletons in B³.
    #[arg(long)]
    pub keep_singletons: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Labelled pairs {similarity, coreferent}; otherwise resolved store pairs.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "dev")]
    pub split: Split,
    #[arg(long, default_value_t = 0.30)]
    pub t_min: f64,
    #[arg(long, default_value_t = 0.80)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub step: f64,
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ClusterScoresArgs {
    /// Score file, one {mention_id_a, mention_id_b, score} per line.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub linkage: Option<Linkage>,
    /// Restrict to the store's active mentions in this split.
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct BcosArgs {
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CapabilityArgs {
    #[arg(long)]
    pub cases: PathBuf,
    /// System cluster file.
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    /// Labelled pairs {similarity, coreferent}; otherwise resolved store pairs.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub bin_width: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub split: Option<Split>,
    /// Export difficult pairs instead of clusters.
    #[arg(long)]
    pub difficult: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Resolved configuration: file values with flag overrides applied.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub store_dir: Option<PathBuf>,
    pub queue: Option<QueueConfig>,
    pub snapshot_every: u64,
    pub matching: ingestion::MatchConfig,
    pub service: ServiceConfig,
    pub baselines: BaselineConfig,
}

impl Workspace {
    pub fn resolve(global: &GlobalArgs) -> anyhow::Result<Self> {
        let file = global.config.as_deref().map(Config::load).transpose()?;
        let mut queue = file.as_ref().map(|c| c.queue.clone());
        if let Some(seed) = global.seed {
            match &mut queue {
                Some(q) => q.sampling_seed = seed,
                None => queue = Some(QueueConfig::with_seed(seed)),
            }
        }
        if let Some(q) = &queue {
            q.validate()?;
        }
        Ok(Self {
            store_dir: global.store.clone().or_else(|| file.as_ref().map(|c| c.store_dir.clone())),
            queue,
            snapshot_every: file.as_ref().map_or(DEFAULT_SNAPSHOT_EVERY, |c| c.snapshot_every),
            matching: file.as_ref().map(|c| c.matching).unwrap_or_default(),
            service: file.as_ref().map(|c| c.service.clone()).unwrap_or_default(),
            baselines: file.map(|c| c.baselines).unwrap_or_default(),
        })
    }

    fn store_dir(&self) -> anyhow::Result<&Path> {
        self.store_dir
            .as_deref()
            .ok_or_else(|| anyhow!("no store: pass --store or --config"))
    }

    /// Opens the store for writing, holding its lock.
    pub fn open(&self) -> anyhow::Result<Engine<store::FileLog>> {
        let dir = self.store_dir()?;
        Ok(open_engine(dir, self.queue.clone(), self.snapshot_every)?)
    }

    /// Rebuilds the store state without taking the lock, so read-only
    /// commands work while the service is running.
    pub fn read_state(&self) -> anyhow::Result<State> {
        let dir = self.store_dir()?;
        let events = store::read_events(dir)?;
        if events.is_empty() {
            bail!("store {} is empty", dir.display());
        }
        let log = MemoryLog {
            events: events.iter().map(|(_, e)| e.clone()).collect(),
        };
        Ok(Engine::replay(None, events, log)?.into_parts().0)
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = Workspace::resolve(&cli.global)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, &a, &mut out),
        Command::GenPairs(a) => gen_pairs(&ctx, &a, &mut out),
        Command::Serve(a) => serve(&ctx, &a),
        Command::Kappa(a) => kappa(&ctx, &a, &mut out),
        Command::Consensus => consensus(&ctx, &mut out),
        Command::Score(a) => score(&a, &mut out),
        Command::SweepThreshold(a) => sweep(&ctx, &a, &mut out),
        Command::ClusterScores(a) => cluster_scores(&ctx, &a, &mut out),
        Command::Bcos(a) => bcos(&ctx, &a, &mut out),
        Command::CapabilityTest(a) => capability(&a, &mut out),
        Command::Histogram(a) => histogram(&ctx, &a, &mut out),
        Command::Export(a) => export(&ctx, &a, &mut out),
    }
}

fn open_read(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

/// Runs `f` against the file at `path`, or `out` when no path is given.
fn with_output(path: Option<&Path>, out: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => f(out),
    }
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

pub fn ingest(ctx: &Workspace, args: &IngestArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let mut engine = ctx.open()?;
    let mut rejected = 0;
    if let Some(path) = &args.pairs {
        let parsed = read_document_pairs(open_read(path)?, Utc::now());
        let report = engine.ingest_document_pairs(parsed, &ctx.matching)?;
        for e in &report.errors {
            warn!("{}: {e}", path.display());
        }
        for w in &report.match_warnings {
            warn!("{w}");
        }
        rejected += report.errors.len();
        writeln!(
            out,
            "pairs: {} new, {} unchanged, {} rejected",
            report.new,
            report.unchanged,
            report.errors.len()
        )?;
    }
    if let Some(path) = &args.mentions {
        let report = engine.load_mentions(read_mentions(open_read(path)?))?;
        for e in &report.errors {
            warn!("{}: {e}", path.display());
        }
        rejected += report.errors.len();
        writeln!(
            out,
            "mentions: {} added, {} existing, {} rejected",
            report.added,
            report.existing,
            report.errors.len()
        )?;
    }
    let mut loaded = 0;
    for path in &args.embeddings {
        let table = ingestion::load_embeddings(path).with_context(|| format!("reading {}", path.display()))?;
        loaded += engine.load_embeddings(table)? as usize;
    }
    if let Some(dim) = args.stub_dim {
        let missing: Vec<_> = engine
            .state()
            .corpus()
            .pairs()
            .filter(|p| engine.state().corpus().embeddings(&p.pair_id).is_none())
            .cloned()
            .collect();
        for pair in missing {
            loaded += engine.load_embeddings(stub_embed(&pair, dim, args.stub_seed))? as usize;
        }
    }
    if !args.embeddings.is_empty() || args.stub_dim.is_some() {
        writeln!(out, "embeddings: {loaded} tables loaded")?;
    }
    if args.strict && rejected > 0 {
        bail!("{rejected} records rejected");
    }
    Ok(())
}

/// One audit line of the ranked queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueLine {
    pub pair_key: String,
    pub news_surface: String,
    pub sci_surface: String,
    #[serde(default)]
    pub similarity: Option<f64>,
    pub iaa: bool,
}

pub fn gen_pairs(ctx: &Workspace, args: &GenPairsArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let mut engine = ctx.open()?;
    let report = engine.generate_pairs(exec(args.sequential))?;
    for w in &report.warnings {
        warn!("{w}");
    }
    info!(added = report.added, iaa = report.iaa, "generated candidate pairs");
    let state = engine.state();
    let corpus = state.corpus();
    let surface = |m: &MentionId| corpus.mention(m).map(|m| m.surface.clone()).unwrap_or_default();
    with_output(args.out.as_deref(), out, |w| {
        for p in state.queue() {
            let line = QueueLine {
                pair_key: p.pair_key.to_string(),
                news_surface: surface(&p.news_mention),
                sci_surface: surface(&p.sci_mention),
                similarity: p.similarity,
                iaa: p.iaa,
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        Ok(())
    })
}

pub fn serve(ctx: &Workspace, args: &ServeArgs) -> anyhow::Result<()> {
    let mut engine = ctx.open()?;
    for name in ctx.service.annotators.iter().chain(&args.annotators) {
        engine.register_annotator(&AnnotatorId::from(name.as_str()))?;
    }
    let addr = args.addr.unwrap_or(ctx.service.addr);
    let app = AppState::system_clock(engine);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, http::router(app.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
                info!("shutting down");
            })
            .await?;
        anyhow::Ok(())
    })?;
    Ok(())
}

pub fn kappa(ctx: &Workspace, args: &KappaArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let report = ctx.read_state()?.agreement_report();
    let show = |v: &cdcr_core::agreement::KappaValue| match (v.kappa, &v.band, &v.note) {
        (Some(k), Some(b), _) => format!("{k:.4}  {b}"),
        (Some(k), None, _) => format!("{k:.4}"),
        (None, _, Some(n)) => format!("n/a  ({n})"),
        _ => "n/a".to_string(),
    };
    writeln!(out, "annotator_a\tannotator_b\toverlap\tcohen")?;
    for p in &report.pairwise {
        writeln!(out, "{}\t{}\t{}\t{}", p.a, p.b, p.overlap, show(&p.value))?;
    }
    writeln!(
        out,
        "fleiss ({} raters, {} items): {}",
        report.fleiss.raters,
        report.fleiss.items,
        show(&report.fleiss.value)
    )?;
    writeln!(
        out,
        "fleiss, difficult pairs ({} items): {}",
        report.difficult_fleiss.items,
        show(&report.difficult_fleiss.value)
    )?;
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn consensus(ctx: &Workspace, out: &mut dyn Write) -> anyhow::Result<()> {
    let mut engine = ctx.open()?;
    let keys: Vec<_> = engine
        .state()
        .queue()
        .filter(|p| p.iaa && engine.state().answers(&p.pair_key).is_some_and(|a| a.len() >= 2))
        .map(|p| p.pair_key.clone())
        .collect();
    for key in keys {
        let g = engine.consensus_gold(&key, Utc::now())?;
        writeln!(out, "{}\t{}", serde_json::to_string(&g.gold)?.trim_matches('"'), key)?;
    }
    Ok(())
}

fn read_clusters(path: &Path) -> anyhow::Result<cdcr_core::evaluation::Clusters> {
    let records = read_cluster_file(open_read(path)?).with_context(|| format!("reading {}", path.display()))?;
    clusters_from_records(&records).with_context(|| format!("in {}", path.display()))
}

pub fn score(args: &ScoreArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let gold = read_clusters(&args.gold)?;
    let system = read_clusters(&args.system)?;
    let metrics = match args.metric {
        Some(m) => vec![m],
        None => vec![Metric::Muc, Metric::B3],
    };
    let reports: Vec<ScoreReport> = metrics
        .into_iter()
        .map(|m| match m {
            Metric::Muc => muc_score(&gold, &system),
            Metric::B3 => b3_score(&gold, &system, !args.keep_singletons),
        })
        .collect::<Result<_, _>>()?;
    if args.json {
        for r in &reports {
            writeln!(out, "{}", serde_json::to_string(r)?)?;
        }
        return Ok(());
    }
    writeln!(out, "metric\tprecision\trecall\tf1")?;
    for r in &reports {
        let name = serde_json::to_value(r.metric)?;
        writeln!(
            out,
            "{}\t{:.4}\t{:.4}\t{:.4}",
            name.as_str().unwrap_or("?"),
            r.precision,
            r.recall,
            r.f1
        )?;
        for n in &r.notes {
            writeln!(out, "  note: {n}")?;
        }
    }
    Ok(())
}

fn read_labeled(path: &Path) -> anyhow::Result<Vec<LabeledPair>> {
    let mut pairs = Vec::new();
    for (i, line) in open_read(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(pairs)
}

/// Resolved, labelled candidate pairs of `split` (every split when `None`).
pub fn resolved_pairs(state: &State, split: Option<Split>) -> Vec<LabeledPair> {
    state
        .queue()
        .filter(|p| p.status == PairStatus::Resolved)
        .filter(|p| split.is_none() || state.corpus().pair(&p.pair_id).is_some_and(|d| d.split == split))
        .filter_map(|p| {
            let coreferent = match p.gold? {
                Gold::Coreferent => true,
                Gold::NotCoreferent => false,
                Gold::Unresolved => return None,
            };
            Some(LabeledPair {
                similarity: p.similarity,
                coreferent,
            })
        })
        .collect()
}

pub fn sweep(ctx: &Workspace, args: &SweepArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let pairs = match &args.input {
        Some(p) => read_labeled(p)?,
        None => resolved_pairs(&ctx.read_state()?, Some(args.split)),
    };
    let range = SweepRange {
        t_min: args.t_min,
        t_max: args.t_max,
        step: args.step,
    };
    let result = sweep_threshold(&pairs, range, exec(args.sequential))?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string(&result)?)?;
        return Ok(());
    }
    writeln!(out, "t,accuracy")?;
    for (t, acc) in &result.curve {
        writeln!(out, "{t:.2},{acc:.4}")?;
    }
    writeln!(
        out,
        "best t = {:.2} (accuracy {:.4}, {} pairs)",
        result.best_t,
        result.best_accuracy,
        pairs.len()
    )?;
    Ok(())
}

fn split_mentions(state: &State, split: Split) -> BTreeSet<MentionId> {
    let corpus = state.corpus();
    corpus
        .mentions()
        .filter(|m| m.is_active())
        .filter(|m| corpus.pair_of_doc(&m.doc_id).is_ok_and(|p| p.split == Some(split)))
        .map(|m| m.mention_id.clone())
        .collect()
}

pub fn cluster_scores(ctx: &Workspace, args: &ClusterScoresArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let known = match args.split {
        Some(s) => Some(split_mentions(&ctx.read_state()?, s)),
        None => None,
    };
    let tag = args.scores.display().to_string();
    let loaded = load_external_scores(open_read(&args.scores)?, known.as_ref(), &tag)?;
    for e in &loaded.errors {
        warn!("{tag}: {e}");
    }
    let tau = args.tau.unwrap_or(ctx.baselines.tau);
    let linkage = args.linkage.unwrap_or(ctx.baselines.linkage);
    let clusters = agglomerative_cluster(&loaded.matrix, tau, linkage, exec(args.sequential))?;
    info!(clusters = clusters.len(), mentions = loaded.matrix.len(), "clustered");
    let records = records_from_clusters(&clusters)?;
    with_output(args.out.as_deref(), out, |w| Ok(write_cluster_file(&records, w)?))
}

pub fn bcos(ctx: &Workspace, args: &BcosArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let state = ctx.read_state()?;
    let universe = split_mentions(&state, args.split);
    let pairs: Vec<ScoredPair> = state
        .queue()
        .filter(|p| universe.contains(&p.news_mention) && universe.contains(&p.sci_mention))
        .map(|p| ScoredPair {
            a: p.news_mention.clone(),
            b: p.sci_mention.clone(),
            similarity: p.similarity,
        })
        .collect();
    let t = args.t.unwrap_or(ctx.baselines.bcos_threshold);
    let clusters = bcos_cluster(universe, &pairs, t);
    let records = records_from_clusters(&clusters)?;
    with_output(args.out.as_deref(), out, |w| Ok(write_cluster_file(&records, w)?))
}

pub fn capability(args: &CapabilityArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let cases = read_capability_cases(open_read(&args.cases)?)?;
    let clusters = read_clusters(&args.system)?;
    let report = capability_report(&cases, cluster_predictor(&clusters))?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string(&report)?)?;
        return Ok(());
    }
    writeln!(out, "category\texpected\tpass rate")?;
    for c in &report.cells {
        let name = |v: serde_json::Value| v.as_str().unwrap_or("?").to_string();
        writeln!(
            out,
            "{}\t{}\t{}",
            name(serde_json::to_value(c.category)?),
            name(serde_json::to_value(c.expected)?),
            c.display_rate()
        )?;
    }
    writeln!(out, "total cases: {}", report.total)?;
    Ok(())
}

pub fn histogram(ctx: &Workspace, args: &HistogramArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let labeled = match &args.input {
        Some(p) => read_labeled(p)?,
        None => resolved_pairs(&ctx.read_state()?, args.split),
    };
    let points: Vec<(f64, Verdict)> = labeled
        .iter()
        .filter_map(|p| {
            let v = if p.coreferent { Verdict::Yes } else { Verdict::No };
            p.similarity.map(|s| (s, v))
        })
        .collect();
    let bins = similarity_histogram(&points, args.bin_width.unwrap_or(ctx.baselines.bin_width))?;
    let csv = histogram_csv(&bins);
    with_output(args.out.as_deref(), out, |w| Ok(w.write_all(csv.as_bytes())?))
}

pub fn export(ctx: &Workspace, args: &ExportArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let state = ctx.read_state()?;
    with_output(args.out.as_deref(), out, |w| {
        if args.difficult {
            for r in state.difficult_records() {
                writeln!(w, "{}", serde_json::to_string(&r)?)?;
            }
        } else {
            write_cluster_file(&state.cluster_records(args.split), w)?;
        }
        Ok(())
    })
}
