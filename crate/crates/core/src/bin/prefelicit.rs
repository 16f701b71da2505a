use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use prefelicit::acquisition::{MiConfig, WeightingMode};
use prefelicit::inference::MhConfig;
use prefelicit::model::UserParams;
use prefelicit::service::{self, wal, ServiceConfig};
use prefelicit::session::{GuardMode, SessionConfig, StoppingRule};
use prefelicit::sim;

const EXIT_RUNTIME: u8 = 1;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "prefelicit", version, about = "Active preference elicitation from pairwise comparisons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded session against a simulated user.
    Simulate(SimulateArgs),
    /// Run several simulations with random users and aggregate per step.
    Benchmark(BenchmarkArgs),
    /// Serve the HTTP API, recovering sessions from the log.
    Serve(ServeArgs),
    /// Recompute all sessions in a log and compare with the stored trials.
    Replay(ReplayArgs),
}

#[derive(Args, Clone)]
struct EngineArgs {
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    dims: u64,
    /// Number of interactions per session.
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Mutual-information stopping threshold; 0 disables it.
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Compare the latest MI with `delta` instead of `step * delta`.
    #[arg(long)]
    plain_guard: bool,
    /// Metropolis-Hastings draws per update.
    #[arg(long, default_value_t = MhConfig::default().m_samples as u64, value_parser = clap::value_parser!(u64).range(1..))]
    m_samples: u64,
    /// Outer Monte-Carlo draws of the MI estimator.
    #[arg(long, default_value_t = MiConfig::default().m_outer as u64, value_parser = clap::value_parser!(u64).range(1..))]
    m_outer: u64,
    /// Inner Monte-Carlo draws of the MI estimator.
    #[arg(long, default_value_t = MiConfig::default().m_inner as u64, value_parser = clap::value_parser!(u64).range(1..))]
    m_inner: u64,
    /// Candidate alternatives scored per trial.
    #[arg(long, default_value_t = MiConfig::default().n_candidates as u64, value_parser = clap::value_parser!(u64).range(1..))]
    candidates: u64,
    #[arg(long, default_value = "uniform")]
    weighting: WeightingMode,
    /// Directory receiving CSV and NDJSON outputs.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

impl EngineArgs {
    fn config(&self) -> anyhow::Result<SessionConfig> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            bail!("--delta must be a nonnegative number");
        }
        let cfg = SessionConfig {
            dims: self.dims as usize,
            mh: MhConfig { m_samples: self.m_samples as usize, ..MhConfig::default() },
            mi: MiConfig {
                m_outer: self.m_outer as usize,
                m_inner: self.m_inner as usize,
                n_candidates: self.candidates as usize,
                weighting_mode: self.weighting,
            },
            stop: StoppingRule {
                delta: self.delta,
                max_steps: self.steps as usize,
                guard: if self.plain_guard { GuardMode::Plain } else { GuardMode::ScaledByStep },
            },
            ..SessionConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// True optimum in [0,1]^D, comma separated; random when omitted.
    #[arg(long, value_delimiter = ',')]
    theta: Option<Vec<f64>>,
    /// True sensitivities, comma separated; random when omitted.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
}

#[derive(Args)]
struct ServeArgs {
    /// JSON or TOML service configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    /// Write-ahead log path.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Serve(a) => serve(a),
        Command::Replay(a) => replay(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn simulate(a: SimulateArgs) -> anyhow::Result<ExitCode> {
    let cfg = a.engine.config()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.engine.seed);
    let random = sim::random_truth(cfg.dims, &mut rng);
    let truth = UserParams::new(a.theta.unwrap_or(random.theta), a.lambda.unwrap_or(random.lambda))?;
    let rec = sim::run_simulation(&truth, &cfg, a.engine.seed)?;
    for (i, t) in rec.step_times().iter().enumerate() {
        tracing::info!(step = i + 1, ms = format!("{:.1}", t.as_secs_f64() * 1e3), "interaction");
    }
    let dir = &a.engine.out_dir;
    rec.write_csv(create(dir, "run.csv")?)?;
    let mut nd = create(dir, "run.ndjson")?;
    rec.write_ndjson(&mut nd)?;
    nd.flush()?;

    println!("truth_theta = {:?}", truth.theta);
    println!("theta_est   = {:?}", rec.final_theta);
    println!("rmse        = {}", rec.final_rmse().map_or("n/a".into(), |v| format!("{v:.6}")));
    println!("rsu         = {}", rec.final_rsu.map_or("n/a".into(), |v| format!("{v:.6}")));
    Ok(ExitCode::SUCCESS)
}

fn benchmark(a: BenchmarkArgs) -> anyhow::Result<ExitCode> {
    let cfg = a.engine.config()?;
    let b = sim::benchmark(a.runs as usize, &cfg, a.engine.seed)?;
    let dir = &a.engine.out_dir;
    b.write_csv(create(dir, "benchmark.csv")?)?;
    let mut nd = create(dir, "benchmark.ndjson")?;
    b.write_ndjson(&mut nd)?;
    nd.flush()?;

    let times: Vec<f64> = b.runs.iter().flat_map(|r| r.step_times()).map(|d| d.as_secs_f64()).collect();
    if !times.is_empty() {
        tracing::info!(median_ms = format!("{:.1}", sim::quantile(&times, 0.5) * 1e3), "per-interaction wall time");
    }
    println!("step  rmse_median  mi_median");
    for r in &b.rows {
        println!("{:>4}  {:>11.4}  {:>9}", r.step, r.rmse_median, r.mi_median.map_or("-".into(), |v| format!("{v:.4}")));
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(a: ServeArgs) -> anyhow::Result<ExitCode> {
    let mut cfg = match &a.config {
        Some(p) => ServiceConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ServiceConfig::default(),
    };
    cfg = cfg.with_env()?;
    if let Some(h) = a.host {
        cfg.host = h;
    }
    if let Some(p) = a.port {
        cfg.port = p;
    }
    if let Some(l) = a.log {
        cfg.log_path = l;
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(
        cfg,
        |addr| {
            println!("listening on http://{addr}");
            let _ = std::io::stdout().flush();
        },
        shutdown_signal(),
    ))?;
    tracing::info!("shut down");
    Ok(ExitCode::SUCCESS)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

fn replay(a: ReplayArgs) -> anyhow::Result<ExitCode> {
    if !a.log.exists() {
        bail!("log {} does not exist", a.log.display());
    }
    let (records, torn) = wal::read_log(&a.log)?;
    if let Some(t) = torn.filter(|t| !t.bytes.is_empty()) {
        tracing::warn!(offset = t.offset, "ignoring torn final line");
    }
    let divergences = wal::verify(&records);
    let sessions = records.iter().filter(|r| matches!(r.event, wal::Event::Create { .. })).count();
    for d in &divergences {
        println!("divergence: session {} step {}: {}", d.sid, d.step, d.detail);
    }
    if divergences.is_empty() {
        println!("ok: {sessions} sessions, {} records", records.len());
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_DIVERGENCE))
    }
}
