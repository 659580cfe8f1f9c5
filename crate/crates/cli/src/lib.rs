//! The `millstone` operator tool: ingest corpora, serve the query API, run
//! recall benchmarks, mint tokens and maintain index snapshots.

pub mod bench;
pub mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use millstone_api::auth::{self, SigningKey};
use millstone_api::{http, Api};
use millstone_core::ann::HnswIndex;
use millstone_core::encoder::Encoder;
use millstone_core::engine::Engine;
use millstone_core::etl::{
    incremental_update, read_watermark, run_pipeline, write_watermark, EtlError, PipelineOptions, PipelineReport,
    SourceFormat, SourceSpec, PATENT_CORPORA,
};
use millstone_core::model::CorpusId;
use millstone_core::store::{Store, StoreError, StoreOptions};
use tracing_subscriber::EnvFilter;

use crate::bench::{BenchConfig, Distribution};
use crate::config::{CliConfig, Overrides};

pub const EXIT_OK: u8 = 0;
pub const EXIT_PARTIAL: u8 = 1;
pub const EXIT_FATAL: u8 = 2;

pub const PUBLICATION_CORPUS: &str = "semanticscholar";

#[derive(Debug, Parser)]
#[command(name = "millstone", version, about = "Semantic document search: ingest, serve, benchmark")]
pub struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Store directory [env: MILLSTONE_STORE_ROOT].
    #[arg(long, global = true, value_name = "DIR")]
    pub store_root: Option<String>,
    /// Remote encoder endpoint; the built-in hashing encoder is used when unset [env: MILLSTONE_ENCODER_URL].
    #[arg(long, global = true, value_name = "URL")]
    pub encoder_url: Option<String>,
    /// Remote encoder request timeout in milliseconds.
    #[arg(long, global = true, value_name = "MS")]
    pub encoder_timeout_ms: Option<String>,
    /// Embedding dimension.
    #[arg(long, global = true, value_name = "N")]
    pub encoder_dim: Option<String>,
    /// HNSW links per node.
    #[arg(long, global = true, value_name = "N")]
    pub hnsw_m: Option<String>,
    /// HNSW candidate list size while building.
    #[arg(long, global = true, value_name = "N")]
    pub ef_construction: Option<String>,
    /// HNSW candidate list size while searching.
    #[arg(long, global = true, value_name = "N")]
    pub ef_search: Option<String>,
    /// Log filter, overridden by RUST_LOG.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load publication JSONL or patent XML into the store and indexes.
    Ingest(IngestArgs),
    /// Serve the query API over HTTP until interrupted.
    Serve(ServeArgs),
    /// Recall and latency of the ANN index on a seeded synthetic corpus, as CSV.
    Bench(BenchArgs),
    /// Print a signed bearer token.
    Token(TokenArgs),
    /// Write ANN snapshots for every corpus, optionally checking them.
    Snapshot(SnapshotArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// A file or directory. Without --corpus a directory may hold
    /// `publications/` and `patents/<office>/` subdirectories.
    pub source: PathBuf,
    /// Target corpus, e.g. semanticscholar, epo, uspto or wipo.
    #[arg(long)]
    pub corpus: Option<String>,
    /// publication_jsonl or patent_xml; inferred from the corpus when omitted.
    #[arg(long)]
    pub format: Option<String>,
    /// Only process inputs newer than the stored watermark.
    #[arg(long)]
    pub incremental: bool,
    /// Worker threads; 0 means one per CPU.
    #[arg(long, value_name = "N")]
    pub workers: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address [env: MILLSTONE_ADDR].
    #[arg(long)]
    pub addr: Option<String>,
    /// Token signing key, at least 16 bytes [env: MILLSTONE_SIGNING_KEY].
    #[arg(long)]
    pub signing_key: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistributionArg {
    EmbeddingLike,
    Uniform,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Corpus size.
    #[arg(long, default_value_t = 1_000)]
    pub n: usize,
    /// Number of queries.
    #[arg(long, default_value_t = 50)]
    pub queries: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Comma-separated ef_search values.
    #[arg(long, value_delimiter = ',', default_value = "10,50,100,200")]
    pub ef: Vec<usize>,
    #[arg(long, default_value_t = 768)]
    pub dim: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DistributionArg::EmbeddingLike)]
    pub distribution: DistributionArg,
}

#[derive(Debug, Args)]
pub struct TokenArgs {
    #[arg(long)]
    pub subject: String,
    /// Lifetime in seconds.
    #[arg(long, default_value_t = 3_600)]
    pub ttl: u64,
    /// Token signing key [env: MILLSTONE_SIGNING_KEY].
    #[arg(long)]
    pub signing_key: Option<String>,
}

#[derive(Debug, Args)]
pub struct SnapshotArgs {
    /// Restore each written snapshot and compare probe query results.
    #[arg(long)]
    pub verify: bool,
    /// Probe queries per corpus for --verify.
    #[arg(long, default_value_t = 50)]
    pub probes: usize,
}

/// Command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

fn fatal(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_FATAL,
        message: message.to_string(),
    }
}

fn partial(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_PARTIAL,
        message: message.to_string(),
    }
}

impl Cli {
    fn overrides(&self) -> Overrides {
        let mut o = Overrides {
            store_root: self.store_root.clone(),
            encoder_url: self.encoder_url.clone(),
            encoder_timeout_ms: self.encoder_timeout_ms.clone(),
            encoder_dim: self.encoder_dim.clone(),
            hnsw_m: self.hnsw_m.clone(),
            hnsw_ef_construction: self.ef_construction.clone(),
            hnsw_ef_search: self.ef_search.clone(),
            ..Overrides::default()
        };
        match &self.command {
            Command::Ingest(a) => o.workers = a.workers.clone(),
            Command::Serve(a) => {
                o.addr = a.addr.clone();
                o.signing_key = a.signing_key.clone();
            }
            Command::Token(a) => o.signing_key = a.signing_key.clone(),
            Command::Bench(_) | Command::Snapshot(_) => {}
        }
        o
    }

    pub fn resolve_config(&self) -> Result<CliConfig, Failure> {
        let file = match &self.config {
            Some(p) => config::read_config_file(p).map_err(fatal)?,
            None => BTreeMap::new(),
        };
        CliConfig::resolve(&self.overrides(), &|k| std::env::var(k).ok(), &file).map_err(fatal)
    }
}

fn init_logging(level: &str) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    init_logging(&cli.log_level);
    let result = cli.resolve_config().and_then(|cfg| {
        eprint!("{cfg}");
        match &cli.command {
            Command::Ingest(a) => cmd_ingest(&cfg, a),
            Command::Serve(_) => cmd_serve(&cfg),
            Command::Bench(a) => cmd_bench(&cfg, a),
            Command::Token(a) => cmd_token(&cfg, a),
            Command::Snapshot(a) => cmd_snapshot(&cfg, a),
        }
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn open_engine(cfg: &CliConfig, opts: StoreOptions) -> Result<Engine, Failure> {
    let store = Store::open(&cfg.store_root, opts).map_err(|e| match e {
        StoreError::LockHeld(_) => fatal(format!("{e}; is another ingest running?")),
        other => fatal(format!("cannot open store {}: {other}", cfg.store_root.display())),
    })?;
    let encoder = Encoder::new(cfg.encoder.clone()).map_err(fatal)?;
    Engine::open(store, encoder, cfg.hnsw.clone()).map_err(fatal)
}

fn corpus_id(name: &str) -> Result<CorpusId, Failure> {
    CorpusId::new(name).map_err(fatal)
}

fn has_extension(dir: &Path, ext: &str) -> bool {
    std::fs::read_dir(dir)
        .map(|entries| {
            entries
                .filter_map(Result::ok)
                .any(|e| e.path().extension().is_some_and(|x| x == ext))
        })
        .unwrap_or(false)
}

/// Source specs named by the ingest arguments.
pub fn ingest_specs(args: &IngestArgs) -> Result<Vec<SourceSpec>, Failure> {
    let src = &args.source;
    if !src.exists() {
        return Err(fatal(EtlError::SourceUnreadable {
            path: src.clone(),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        }));
    }
    let format = args
        .format
        .as_deref()
        .map(|f| f.parse::<SourceFormat>().map_err(fatal))
        .transpose()?;
    let specs = if let Some(name) = &args.corpus {
        let corpus = corpus_id(name)?;
        let format = format.unwrap_or(if PATENT_CORPORA.contains(&name.as_str()) {
            SourceFormat::PatentXml
        } else {
            SourceFormat::PublicationJsonl
        });
        vec![SourceSpec::new(corpus, format, src)]
    } else if src.is_file() {
        match format {
            Some(SourceFormat::PatentXml) => return Err(fatal("patent XML needs --corpus (epo, uspto or wipo)")),
            _ if src.extension().is_some_and(|x| x == "xml") => {
                return Err(fatal("patent XML needs --corpus (epo, uspto or wipo)"))
            }
            _ => vec![SourceSpec::new(corpus_id(PUBLICATION_CORPUS)?, SourceFormat::PublicationJsonl, src)],
        }
    } else {
        let mut specs = Vec::new();
        let publications = src.join("publications");
        if publications.is_dir() {
            specs.push(SourceSpec::new(
                corpus_id(PUBLICATION_CORPUS)?,
                SourceFormat::PublicationJsonl,
                publications,
            ));
        }
        for office in PATENT_CORPORA {
            let dir = src.join("patents").join(office);
            if dir.is_dir() {
                specs.push(SourceSpec::new(corpus_id(office)?, SourceFormat::PatentXml, dir));
            }
        }
        if specs.is_empty() && has_extension(src, "jsonl") {
            specs.push(SourceSpec::new(corpus_id(PUBLICATION_CORPUS)?, SourceFormat::PublicationJsonl, src));
        } else if specs.is_empty() && has_extension(src, "xml") {
            return Err(fatal("patent XML needs --corpus (epo, uspto or wipo)"));
        }
        specs
    };
    for s in &specs {
        s.validate().map_err(fatal)?;
    }
    Ok(specs)
}

fn cmd_ingest(cfg: &CliConfig, args: &IngestArgs) -> Result<(), Failure> {
    let specs = ingest_specs(args)?;
    let engine = open_engine(cfg, StoreOptions::default())?;
    let opts = PipelineOptions { workers: cfg.workers };
    let started = std::time::Instant::now();
    let mut total = PipelineReport::default();
    for spec in &specs {
        let report = if args.incremental {
            let mark = read_watermark(&cfg.store_root, &spec.corpus).map_err(fatal)?;
            let (report, next) = incremental_update(spec, &engine, mark.as_ref(), opts).map_err(fatal)?;
            if let Some(next) = next {
                write_watermark(&cfg.store_root, &spec.corpus, &next).map_err(fatal)?;
            }
            report
        } else {
            run_pipeline(spec, &engine, opts).map_err(fatal)?
        };
        println!("# {} <- {}", spec.corpus, spec.location.display());
        println!("{report}");
        total.absorb(report);
    }
    engine.save_snapshots().map_err(fatal)?;
    total.wall_time = started.elapsed();
    println!("# total");
    println!("{total}");
    if total.failures.is_empty() {
        Ok(())
    } else {
        Err(partial(format!("{} documents could not be loaded", total.failures.values().sum::<u64>())))
    }
}

fn signing_key(cfg: &CliConfig) -> Result<SigningKey, Failure> {
    let raw = cfg
        .signing_key
        .as_deref()
        .ok_or_else(|| fatal(format!("no signing key; set {} or pass --signing-key", config::ENV_SIGNING_KEY)))?;
    SigningKey::new(raw).map_err(fatal)
}

fn cmd_serve(cfg: &CliConfig) -> Result<(), Failure> {
    let key = signing_key(cfg)?;
    if !cfg.store_root.is_dir() {
        return Err(fatal(format!("store {} does not exist; run ingest first", cfg.store_root.display())));
    }
    let engine = open_engine(cfg, StoreOptions::read_only())?;
    let api = Arc::new(Api::new(Arc::new(engine), key));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(fatal)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.addr)
            .await
            .map_err(|e| fatal(format!("cannot bind {}: {e}", cfg.addr)))?;
        let local = listener.local_addr().map_err(fatal)?;
        eprintln!("listening on {local}");
        http::serve(listener, api, http::shutdown_signal()).await.map_err(fatal)
    })?;
    eprintln!("server stopped");
    Ok(())
}

fn cmd_bench(cfg: &CliConfig, args: &BenchArgs) -> Result<(), Failure> {
    let bench_cfg = BenchConfig {
        n: args.n,
        queries: args.queries,
        k: args.k,
        ef: args.ef.clone(),
        dim: args.dim,
        seed: args.seed,
        distribution: match args.distribution {
            DistributionArg::EmbeddingLike => Distribution::EmbeddingLike,
            DistributionArg::Uniform => Distribution::Uniform,
        },
        params: cfg.hnsw.clone(),
    };
    if bench_cfg.n == 0 || bench_cfg.k == 0 || bench_cfg.dim == 0 || bench_cfg.ef.is_empty() {
        return Err(fatal("n, k and dim must be positive and at least one ef given"));
    }
    let result = bench::run_bench(&bench_cfg).map_err(fatal)?;
    eprintln!("built {} vectors in {:.1}s", bench_cfg.n, result.build_secs);
    print!("{}", bench::to_csv(&result.rows));
    Ok(())
}

fn cmd_token(cfg: &CliConfig, args: &TokenArgs) -> Result<(), Failure> {
    let key = signing_key(cfg)?;
    println!("{}", auth::issue(&key, &args.subject, args.ttl, auth::now_secs()));
    Ok(())
}

/// Compares live and restored search results for stored probe vectors.
pub fn verify_snapshot(live: &HnswIndex, restored: &HnswIndex, probes: usize) -> Result<usize, String> {
    let ids: Vec<String> = live.ids().take(probes).map(str::to_owned).collect();
    for id in &ids {
        let q = live.vector(id).expect("listed id");
        let a = live.search(q, 10, None).map_err(|e| e.to_string())?;
        let b = restored.search(q, 10, None).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("results differ for probe {id}"));
        }
    }
    Ok(ids.len())
}

fn cmd_snapshot(cfg: &CliConfig, args: &SnapshotArgs) -> Result<(), Failure> {
    let engine = open_engine(cfg, StoreOptions::default())?;
    engine.save_snapshots().map_err(fatal)?;
    let mut out = String::from("corpus\tstored\tindexed\tsnapshot_bytes\tverified_probes\n");
    let mut bad = Vec::new();
    for corpus in engine.corpora() {
        let path = cfg
            .store_root
            .join(corpus.as_str())
            .join(millstone_core::engine::SNAPSHOT_FILE);
        let bytes = std::fs::read(&path).map_err(|e| fatal(format!("{}: {e}", path.display())))?;
        let verified = if args.verify {
            let live = engine.ann_index(&corpus).expect("corpus listed by engine");
            match HnswIndex::restore(&bytes)
                .map_err(|e| e.to_string())
                .and_then(|restored| verify_snapshot(&live, &restored, args.probes))
            {
                Ok(n) => n.to_string(),
                Err(e) => {
                    bad.push(format!("{corpus}: {e}"));
                    "FAILED".into()
                }
            }
        } else {
            "-".into()
        };
        let _ = writeln!(
            out,
            "{corpus}\t{}\t{}\t{}\t{verified}",
            engine.store().len(&corpus),
            engine.indexed_len(&corpus),
            bytes.len()
        );
    }
    print!("{out}");
    if bad.is_empty() {
        Ok(())
    } else {
        Err(partial(bad.join("; ")))
    }
}
