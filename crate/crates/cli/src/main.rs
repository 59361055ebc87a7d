//! `tvws`: tower ingestion, availability queries, the spectrum database
//! server, channel allocation and backhaul planning.
//!
//! Exit status is 0 on success, 1 when the request is valid but the answer
//! is a domain failure (a location outside the regulatory domain, an
//! infeasible plan), and 2 on usage errors.

mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tvws_core::availability::{availability_grid, AvailabilityEngine, AvailabilityError, AvailabilityResult, GridSpec};
use tvws_core::coexist::{allocate, LinkRequest};
use tvws_core::mesh::{emit_report_bytes, plan, Scenario};
use tvws_core::paws::{SystemClock, UseRecord};
use tvws_core::spectrum::{BoundingBox, GeoPoint, PhyRegistry, Propagation, RegulatoryConfig};
use tvws_core::towers::{ingest_csv, rejects_report, TowerDataset};

use config::{FileConfig, CONFIG_ENV, DEFAULT_BIND};

#[derive(Debug, Parser)]
#[command(name = "tvws", version, about = "TV white space spectrum database and backhaul planner")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON settings file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Tower CSV file.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Propagation model (free-space, hata-open, auto).
    #[arg(long, global = true)]
    model: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a tower CSV and summarize it.
    Ingest {
        /// Write the rejects report here instead of stderr.
        #[arg(long)]
        rejects: Option<PathBuf>,
    },
    /// Channel availability at one location.
    Avail {
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        #[arg(long, allow_hyphen_values = true)]
        lon: f64,
        #[arg(long, value_enum, default_value_t = AvailFormat::Json)]
        format: AvailFormat,
    },
    /// Available-channel counts over a lat/lon grid.
    Grid {
        /// Grid points along the longer side of the box.
        #[arg(long, default_value_t = 100, conflicts_with = "resolution")]
        steps: usize,
        /// Grid spacing in degrees.
        #[arg(long)]
        resolution: Option<f64>,
        /// MIN_LAT,MIN_LON,MAX_LAT,MAX_LON; defaults to the boundary's extent.
        #[arg(long, value_delimiter = ',', num_args = 4, allow_hyphen_values = true)]
        bbox: Option<Vec<f64>>,
        /// Also write one CSV row per grid point.
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Run the spectrum database over HTTP.
    Serve {
        #[arg(long)]
        bind: Option<SocketAddr>,
        /// Record log; state is in-memory only without one.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Plan a PoP-rooted backhaul from a scenario file.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        format: ReportFormat,
        /// Write the report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// JSON array of spectrum-use records to avoid.
        #[arg(long)]
        uses: Option<PathBuf>,
    },
    /// Assign channels to a set of links.
    Allocate {
        /// JSON array of link requests.
        #[arg(long)]
        links: PathBuf,
        #[arg(long, default_value_t = tvws_core::coexist::DEFAULT_INTERFERENCE_RADIUS_KM)]
        radius_km: f64,
        /// JSON array of spectrum-use records to avoid.
        #[arg(long)]
        uses: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AvailFormat {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    fn name(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

/// Flags, then the config file, then defaults.
struct Settings {
    file: FileConfig,
    dataset: Option<PathBuf>,
    model: Option<String>,
}

impl Settings {
    fn resolve(common: &Common) -> Result<Self, CliError> {
        let file = match &common.config {
            Some(p) => FileConfig::load(p).map_err(usage)?,
            None => FileConfig::default(),
        };
        Ok(Self {
            dataset: common.dataset.clone().or_else(|| file.dataset.clone()),
            model: common.model.clone().or_else(|| file.propagation.clone()),
            file,
        })
    }

    fn regulatory(&self) -> Result<RegulatoryConfig, CliError> {
        let cfg = self.file.regulatory.clone().unwrap_or_default();
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }

    fn propagation(&self, fallback: &str) -> Result<Propagation, CliError> {
        let params = self.file.path_loss.unwrap_or_default();
        Propagation::by_name(self.model.as_deref().unwrap_or(fallback), params).map_err(usage)
    }

    fn dataset_path(&self) -> Result<&Path, CliError> {
        self.dataset.as_deref().ok_or_else(|| usage("no tower dataset: pass --dataset or set it in the config file"))
    }

    fn dataset(&self) -> Result<TowerDataset, CliError> {
        let ingested = ingest_csv(self.dataset_path()?).map_err(domain)?;
        if !ingested.rejects.is_empty() {
            eprint!("{}", rejects_report(&ingested.rejects));
        }
        Ok(ingested.dataset)
    }

    fn engine(&self, model_fallback: &str) -> Result<AvailabilityEngine, CliError> {
        AvailabilityEngine::new(Arc::new(self.dataset()?), self.regulatory()?, self.propagation(model_fallback)?)
            .map_err(usage)
    }
}

fn write_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(domain)?;
    writeln!(out).map_err(domain)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid {}: {e}", path.display())))
}

fn read_uses(path: Option<&Path>) -> Result<Vec<UseRecord>, CliError> {
    path.map_or(Ok(Vec::new()), read_json)
}

#[derive(Serialize)]
struct IngestSummary {
    towers: usize,
    rejected: usize,
    towers_per_channel: BTreeMap<u8, usize>,
    digest: String,
}

fn cmd_ingest(s: &Settings, rejects: Option<&Path>) -> Result<(), CliError> {
    let ingested = ingest_csv(s.dataset_path()?).map_err(domain)?;
    let report = rejects_report(&ingested.rejects);
    match rejects {
        Some(p) => std::fs::write(p, &report).map_err(domain)?,
        None => eprint!("{report}"),
    }
    let mut per_channel = BTreeMap::new();
    for t in ingested.dataset.records() {
        *per_channel.entry(t.channel_index).or_insert(0) += 1;
    }
    write_json(&IngestSummary {
        towers: ingested.dataset.len(),
        rejected: ingested.rejects.len(),
        towers_per_channel: per_channel,
        digest: ingested.dataset.digest(),
    })
}

fn print_avail_text(r: &AvailabilityResult) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    let mut w = |line: String| writeln!(out, "{line}").map_err(domain);
    w(format!(
        "location {:.6},{:.6}: {} of {} channels available",
        r.location.lat_deg(),
        r.location.lon_deg(),
        r.available_count(),
        r.channels.len()
    ))?;
    for c in &r.channels {
        let status = match (&c.max_eirp_dbm, &c.dominant_interferer) {
            (Some(p), _) => format!("available, max {p} dBm EIRP"),
            (None, Some(i)) => format!("blocked by {} at {:.1} dBm", i.tower_id, i.received_dbm),
            (None, None) => "blocked".to_string(),
        };
        w(format!("  ch {:>2}  {:>5}-{:<5} MHz  {status}", c.channel_index, c.low_mhz, c.high_mhz))?;
    }
    Ok(())
}

fn cmd_avail(s: &Settings, lat: f64, lon: f64, format: AvailFormat) -> Result<(), CliError> {
    let p = GeoPoint::new(lat, lon).map_err(usage)?;
    let engine = s.engine(tvws_core::spectrum::DEFAULT_MODEL)?;
    let r = engine.available_channels(p).map_err(|e| match e {
        AvailabilityError::OutsideBoundary(_) => domain(e),
        other => usage(other),
    })?;
    match format {
        AvailFormat::Json => write_json(&r),
        AvailFormat::Text => print_avail_text(&r),
    }
}

fn cmd_grid(
    s: &Settings,
    steps: usize,
    resolution: Option<f64>,
    bbox: Option<&[f64]>,
    points: Option<&Path>,
) -> Result<(), CliError> {
    let engine = s.engine(tvws_core::spectrum::DEFAULT_MODEL)?;
    let bbox = match bbox {
        Some(&[a, b, c, d]) => BoundingBox::new(a, b, c, d).map_err(usage)?,
        Some(_) => return Err(usage("--bbox takes four numbers")),
        None => extent(engine.config()),
    };
    let spec = match resolution {
        Some(r) => GridSpec::new(bbox, r),
        None => GridSpec::with_steps(bbox, steps),
    }
    .map_err(usage)?;
    let stats = availability_grid(&engine, spec).map_err(domain)?;
    if let Some(path) = points {
        let f = File::create(path).map_err(domain)?;
        stats.write_csv(BufWriter::new(f)).map_err(domain)?;
    }
    write_json(&stats.report())
}

fn extent(cfg: &RegulatoryConfig) -> BoundingBox {
    let v = cfg.regulatory_boundary.vertices();
    let (mut lo_lat, mut lo_lon, mut hi_lat, mut hi_lon) = (90.0f64, 180.0f64, -90.0f64, -180.0f64);
    for p in v {
        lo_lat = lo_lat.min(p.lat_deg());
        hi_lat = hi_lat.max(p.lat_deg());
        lo_lon = lo_lon.min(p.lon_deg());
        hi_lon = hi_lon.max(p.lon_deg());
    }
    BoundingBox::new(lo_lat, lo_lon, hi_lat, hi_lon).expect("a valid boundary has area")
}

fn cmd_serve(s: &Settings, bind: Option<SocketAddr>, log: Option<PathBuf>) -> Result<(), CliError> {
    let engine = Arc::new(s.engine(tvws_core::spectrum::DEFAULT_MODEL)?);
    let addr = bind.or(s.file.bind).unwrap_or_else(|| DEFAULT_BIND.parse().expect("valid default"));
    let log = log.or_else(|| s.file.log_path.clone());
    let svc = Arc::new(tvws_server::open_service(engine, Arc::new(SystemClock), log.as_deref()).map_err(domain)?);
    let rt = tokio::runtime::Runtime::new().map_err(domain)?;
    rt.block_on(async {
        let listener = tvws_server::bind(addr).await.map_err(domain)?;
        eprintln!("listening on http://{}/paws", listener.local_addr().map_err(domain)?);
        tvws_server::serve(listener, svc, tvws_server::ctrl_c()).await.map_err(domain)
    })
}

fn cmd_plan(
    s: &Settings,
    scenario_path: &Path,
    format: ReportFormat,
    output: Option<&Path>,
    uses: Option<&Path>,
) -> Result<(), CliError> {
    let scenario: Scenario = read_json(scenario_path)?;
    let profile = PhyRegistry::default().get(&scenario.profile).map_err(usage)?.clone();
    let engine = s.engine(&scenario.propagation)?;
    let prop = s.propagation(&scenario.propagation)?;
    let report = plan(&scenario, &engine, &read_uses(uses)?, &profile, &prop).map_err(domain)?;
    let bytes = emit_report_bytes(&report, format.name()).map_err(domain)?;
    match output {
        Some(p) => std::fs::write(p, &bytes).map_err(domain)?,
        None => io::stdout().lock().write_all(&bytes).map_err(domain)?,
    }
    let unassigned = report.links.iter().filter(|l| l.unassigned_reason.is_some()).count();
    if !report.unreachable.is_empty() || unassigned > 0 {
        return Err(domain(format!(
            "plan is incomplete: {} node(s) unreachable, {unassigned} link(s) without channels",
            report.unreachable.len()
        )));
    }
    Ok(())
}

fn cmd_allocate(s: &Settings, links: &Path, radius_km: f64, uses: Option<&Path>) -> Result<(), CliError> {
    let requests: Vec<LinkRequest> = read_json(links)?;
    let engine = s.engine(tvws_core::spectrum::DEFAULT_MODEL)?;
    let (_, report) = allocate(&requests, &engine, &read_uses(uses)?, radius_km).map_err(domain)?;
    write_json(&report)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let s = Settings::resolve(&cli.common)?;
    match cli.command {
        Command::Ingest { rejects } => cmd_ingest(&s, rejects.as_deref()),
        Command::Avail { lat, lon, format } => cmd_avail(&s, lat, lon, format),
        Command::Grid { steps, resolution, bbox, points } => {
            cmd_grid(&s, steps, resolution, bbox.as_deref(), points.as_deref())
        }
        Command::Serve { bind, log } => cmd_serve(&s, bind, log),
        Command::Plan { scenario, format, output, uses } => {
            cmd_plan(&s, &scenario, format, output.as_deref(), uses.as_deref())
        }
        Command::Allocate { links, radius_km, uses } => cmd_allocate(&s, &links, radius_km, uses.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // help and version exit 0, everything else 2
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tvws: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
