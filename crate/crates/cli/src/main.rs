//! `appds`: generate corpora, publish and serve adapters, run the
//! aggregator, ingest, query and fetch.
//!
//! Machine-readable results go to stdout as JSON; diagnostics go to stderr.
//! Exit status is 0 on success, 1 on a domain error and 2 on a usage error.

use std::error::Error;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use appds::Sha256Digest;
use appds::adapter::{AdapterService, Published, publish};
use appds::aggregator::{
    self, Aggregator, AggregatorClient, AggregatorConfig, CONFIG_ENV, canonicalize,
};
use appds::catalogue::{Level, Predicate, PredicateOp, Query};
use appds::extractor::extract;
use appds::http::serve_until_interrupted;
use appds::mdd::{DAT1_MDD, DST1_MDD, MddSchema, parse_mdd};
use appds::synth::{GenFormat, GenSpec, write_tree};
use clap::error::ErrorKind;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

type Result<T> = std::result::Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "appds", version, about = "Metadata-driven distributed storage")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic synthetic corpus.
    Gen(GenArgs),
    /// Export a storage directory as a content-addressed catalog and object store.
    Publish(PublishArgs),
    /// Serve a published storage read-only over HTTP.
    ServeAdapter(ServeAdapterArgs),
    /// Run the aggregation service over HTTP.
    ServeAggregator(ServeAggregatorArgs),
    /// Pull new files from the configured adapters into the catalogue.
    Ingest(IngestArgs),
    /// Run a query and print the collection manifest.
    Query(QueryArgs),
    /// Download one entry of a collection.
    Fetch(FetchArgs),
    /// Print the metadata of one file.
    Extract(ExtractArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Dat1,
    Dst1,
}

impl From<FormatArg> for GenFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Dat1 => GenFormat::Dat1,
            FormatArg::Dst1 => GenFormat::Dst1,
        }
    }
}

/// `N` or an inclusive range `LO..HI`.
fn parse_event_count(s: &str) -> std::result::Result<(u32, u32), String> {
    let parse = |t: &str| t.trim().parse::<u32>().map_err(|e| format!("{t:?}: {e}"));
    match s.split_once("..") {
        Some((lo, hi)) => {
            let (lo, hi) = (parse(lo)?, parse(hi.trim_start_matches('='))?);
            if lo > hi {
                return Err(format!("empty range {s}"));
            }
            Ok((lo, hi))
        }
        None => parse(s).map(|n| (n, n)),
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    format: FormatArg,
    #[arg(long)]
    files: u32,
    /// Events per file: `N` or `LO..HI`.
    #[arg(long, value_parser = parse_event_count)]
    events: (u32, u32),
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    time_start: Option<u64>,
    #[arg(long)]
    time_step: Option<u64>,
    /// Value written into each file header.
    #[arg(long, default_value_t = 0)]
    source_id: u16,
}

#[derive(Args)]
struct PublishArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    source_id: u16,
    #[arg(long)]
    source_name: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeAdapterArgs {
    #[arg(long)]
    published: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8081")]
    listen: SocketAddr,
}

#[derive(Args)]
struct ConfigArg {
    /// Aggregator configuration file.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<AggregatorConfig> {
        let Some(path) = &self.config else {
            usage_error(
                ErrorKind::MissingRequiredArgument,
                &format!("--config is required (or set {CONFIG_ENV})"),
            );
        };
        Ok(AggregatorConfig::load(path)?)
    }
}

#[derive(Args)]
struct ServeAggregatorArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Ingest every source before accepting requests.
    #[arg(long)]
    ingest: bool,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Only this source.
    #[arg(long)]
    source: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    File,
    Event,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Send the query to a running aggregator instead of opening the catalogue.
    #[arg(long, conflicts_with = "config")]
    aggregator: Option<String>,
    #[arg(long, value_enum, default_value = "file")]
    level: LevelArg,
    /// Earliest timestamp (ns, inclusive).
    #[arg(long)]
    from: Option<u64>,
    /// Latest timestamp (ns, inclusive).
    #[arg(long)]
    to: Option<u64>,
    /// Comma-separated source ids.
    #[arg(long, value_delimiter = ',')]
    sources: Option<Vec<u16>>,
    #[arg(long)]
    limit: Option<u64>,
    /// Attribute the next comparison applies to.
    #[arg(long)]
    attr: Vec<String>,
    #[arg(long, allow_negative_numbers = true)]
    eq: Vec<f64>,
    #[arg(long, allow_negative_numbers = true)]
    lt: Vec<f64>,
    #[arg(long, allow_negative_numbers = true)]
    le: Vec<f64>,
    #[arg(long, allow_negative_numbers = true)]
    gt: Vec<f64>,
    #[arg(long, allow_negative_numbers = true)]
    ge: Vec<f64>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    between: Vec<f64>,
    /// A complete query as JSON; replaces all other query flags.
    #[arg(long, conflicts_with_all = ["level", "from", "to", "sources", "limit", "attr"])]
    json: Option<String>,
    /// Print the canonical query JSON without running it.
    #[arg(long)]
    emit_query: bool,
}

#[derive(Args)]
struct FetchArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, conflicts_with = "config")]
    aggregator: Option<String>,
    #[arg(long)]
    collection: String,
    /// Entry path, `<source_name>/<path>`.
    #[arg(long)]
    path: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    /// MDD file, or `builtin:dat1` / `builtin:dst1`.
    #[arg(long)]
    mdd: String,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    source_id: u16,
    /// Omit per-event metadata.
    #[arg(long)]
    no_events: bool,
}

fn usage_error(kind: ErrorKind, message: &str) -> ! {
    Cli::command().error(kind, message).exit()
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();

    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let result = match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Publish(a) => run_publish(a),
        Command::ServeAdapter(a) => run_serve_adapter(a),
        Command::ServeAggregator(a) => run_serve_aggregator(a),
        Command::Ingest(a) => run_ingest(a),
        Command::Query(a) => {
            let sub = matches
                .subcommand_matches("query")
                .expect("query subcommand");
            run_query(a, sub)
        }
        Command::Fetch(a) => run_fetch(a),
        Command::Extract(a) => run_extract(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run_gen(a: GenArgs) -> Result<()> {
    let mut spec = GenSpec::new(a.format.into(), a.files, 0, a.seed);
    spec.events_per_file = a.events;
    spec.source_id = a.source_id;
    if let Some(t) = a.time_start {
        spec.time_start_ns = t;
    }
    if let Some(t) = a.time_step {
        spec.time_step_ns = t;
    }
    fs::create_dir_all(&a.out)?;
    let files = write_tree(&spec, &a.out)?;
    print_json(&json!({
        "files": files.len(),
        "events": files.iter().map(|f| f.event_count).sum::<u64>(),
        "bytes": files.iter().map(|f| f.bytes.len() as u64).sum::<u64>(),
        "spec": spec,
    }))
}

fn run_publish(a: PublishArgs) -> Result<()> {
    let (_, report) = publish(&a.root, a.source_id, &a.source_name, &a.out)?;
    for s in &report.skipped {
        tracing::warn!(path = %s.path, "skipped: {}", s.reason);
    }
    print_json(&report)
}

fn announce(role: &str, addr: SocketAddr) {
    // one line, so scripts can read the bound address before requests start
    println!(
        "{}",
        json!({ "serving": role, "url": format!("http://{addr}") })
    );
    let _ = std::io::stdout().flush();
}

fn run_serve_adapter(a: ServeAdapterArgs) -> Result<()> {
    let service = AdapterService::new(Published::load(&a.published)?);
    serve_until_interrupted(service.router(), a.listen, |addr| announce("adapter", addr))?;
    Ok(())
}

fn open_aggregator(config: &AggregatorConfig) -> Result<Aggregator> {
    let (agg, recovery) = Aggregator::open(config)?;
    if let Some(tail) = recovery.discarded_tail {
        tracing::warn!("catalogue log tail discarded: {tail}");
    }
    Ok(agg)
}

fn run_serve_aggregator(a: ServeAggregatorArgs) -> Result<()> {
    let config = a.config.load()?;
    let agg = Arc::new(open_aggregator(&config)?);
    if a.ingest {
        for name in agg.source_names() {
            match agg.ingest_source(&name) {
                Ok(r) => {
                    tracing::info!(source = %name, files = r.files, events = r.events, "ingested")
                }
                Err(e) => tracing::error!(source = %name, "ingest failed: {e}"),
            }
        }
    }
    serve_until_interrupted(aggregator::http::router(agg), a.listen, |addr| {
        announce("aggregator", addr)
    })?;
    Ok(())
}

fn run_ingest(a: IngestArgs) -> Result<()> {
    let config = a.config.load()?;
    let agg = open_aggregator(&config)?;
    let reports = match &a.source {
        Some(name) => vec![agg.ingest_source(name)?],
        None => agg.ingest_all()?,
    };
    print_json(&reports)
}

/// Pairs each `--attr` with the one comparison flag that follows it.
fn predicates_from(matches: &ArgMatches) -> Vec<Predicate> {
    let positions = |id: &str| -> Vec<usize> {
        matches
            .indices_of(id)
            .map(|i| i.collect())
            .unwrap_or_default()
    };
    let mut attrs: Vec<(usize, String)> = positions("attr")
        .into_iter()
        .zip(
            matches
                .get_many::<String>("attr")
                .into_iter()
                .flatten()
                .cloned(),
        )
        .collect();
    attrs.sort();

    let mut ops: Vec<(usize, PredicateOp, f64, Option<f64>)> = Vec::new();
    for (id, op) in [
        ("eq", PredicateOp::Eq),
        ("lt", PredicateOp::Lt),
        ("le", PredicateOp::Le),
        ("gt", PredicateOp::Gt),
        ("ge", PredicateOp::Ge),
    ] {
        let values = matches.get_many::<f64>(id).into_iter().flatten();
        for (at, &v) in positions(id).into_iter().zip(values) {
            ops.push((at, op, v, None));
        }
    }
    let between: Vec<f64> = matches
        .get_many::<f64>("between")
        .into_iter()
        .flatten()
        .copied()
        .collect();
    for (pair, at) in between
        .chunks(2)
        .zip(positions("between").into_iter().step_by(2))
    {
        ops.push((at, PredicateOp::Between, pair[0], Some(pair[1])));
    }
    ops.sort_by_key(|o| o.0);

    let mut out = Vec::new();
    let mut ops = ops.into_iter().peekable();
    for (i, (at, attr)) in attrs.iter().enumerate() {
        let next_attr = attrs.get(i + 1).map_or(usize::MAX, |a| a.0);
        if let Some(&(op_at, ..)) = ops.peek()
            && op_at < *at
        {
            usage_error(
                ErrorKind::ArgumentConflict,
                "a comparison flag must follow an --attr",
            );
        }
        let Some((_, op, lo, hi)) = ops.next_if(|o| o.0 < next_attr) else {
            usage_error(
                ErrorKind::MissingRequiredArgument,
                &format!("--attr {attr} needs one of --eq --lt --le --gt --ge --between"),
            );
        };
        if ops.peek().is_some_and(|o| o.0 < next_attr) {
            usage_error(
                ErrorKind::ArgumentConflict,
                &format!("--attr {attr} has more than one comparison; repeat --attr"),
            );
        }
        out.push(Predicate {
            attr: attr.clone(),
            op,
            lo,
            hi,
        });
    }
    if ops.next().is_some() {
        usage_error(
            ErrorKind::ArgumentConflict,
            "a comparison flag must follow an --attr",
        );
    }
    out
}

fn build_query(a: &QueryArgs, matches: &ArgMatches) -> Result<Query> {
    if let Some(text) = &a.json {
        if matches.indices_of("eq").is_some()
            || ["lt", "le", "gt", "ge", "between"]
                .iter()
                .any(|id| matches.indices_of(id).is_some())
        {
            usage_error(
                ErrorKind::ArgumentConflict,
                "--json replaces the predicate flags",
            );
        }
        return serde_json::from_str(text).map_err(|e| format!("--json: {e}").into());
    }
    let mut q = Query::match_all(match a.level {
        LevelArg::File => Level::File,
        LevelArg::Event => Level::Event,
    });
    if a.from.is_some() || a.to.is_some() {
        q = q.with_time_range(a.from.unwrap_or(0), a.to.unwrap_or(u64::MAX));
    }
    if let Some(s) = &a.sources {
        q = q.with_sources(s.iter().copied());
    }
    if let Some(l) = a.limit {
        q = q.with_limit(l);
    }
    for p in predicates_from(matches) {
        q = q.with_predicate(p);
    }
    Ok(q)
}

fn run_query(a: QueryArgs, matches: &ArgMatches) -> Result<()> {
    let q = build_query(&a, matches)?;
    if a.emit_query {
        q.validate().map_err(|e| format!("invalid query: {e}"))?;
        println!("{}", canonicalize(&q));
        return Ok(());
    }
    let manifest = match &a.aggregator {
        Some(url) => {
            let client = AggregatorClient::new(url);
            let accepted = client.submit_query(&q)?;
            client.collection(&accepted.collection_id)?
        }
        None => open_aggregator(&a.config.load()?)?.handle_query(&q)?,
    };
    print_json(&manifest)
}

fn run_fetch(a: FetchArgs) -> Result<()> {
    let bytes: Vec<u8> = match &a.aggregator {
        Some(url) => AggregatorClient::new(url).collection_file(&a.collection, &a.path)?,
        None => open_aggregator(&a.config.load()?)?
            .get_collection_file(&a.collection, &a.path)?
            .to_vec(),
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, &bytes)?;
    print_json(&json!({
        "collection_id": a.collection,
        "path": a.path,
        "out": a.out,
        "size": bytes.len(),
        "sha256": Sha256Digest::of(&bytes),
    }))
}

fn load_schema(spec: &str) -> Result<MddSchema> {
    let text = match spec {
        "builtin:dat1" => DAT1_MDD.to_string(),
        "builtin:dst1" => DST1_MDD.to_string(),
        path => fs::read_to_string(Path::new(path)).map_err(|e| format!("{path}: {e}"))?,
    };
    Ok(parse_mdd(&text).map_err(|e| format!("{spec}: {e}"))?)
}

fn run_extract(a: ExtractArgs) -> Result<()> {
    let schema = load_schema(&a.mdd)?;
    let bytes = fs::read(&a.input).map_err(|e| format!("{}: {e}", a.input.display()))?;
    let name = a.input.to_string_lossy();
    let (file, events) = extract(&bytes, &schema, a.source_id, &name)?;
    if a.no_events {
        print_json(&json!({ "file": file }))
    } else {
        print_json(&json!({ "file": file, "events": events }))
    }
}
