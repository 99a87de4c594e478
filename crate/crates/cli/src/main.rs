//! `sdnum`: evaluate site utilities, compare policies, fit surrogates and run
//! the rolling-horizon market in-process or over TCP.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration, 4 runtime failure,
//! 5 I/O or transport failure.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use sdnum::config::{site_seed, ExperimentConfig};
use sdnum::error::{Error, Result};
use sdnum::experiment::{compare_policies, evaluate_sites, write_compare_csv, write_evaluate_csv};
use sdnum::fit::{fit_concave_monotone, read_samples_csv, write_fitted_csv};
use sdnum::horizon::{run_controller, LocalBus, RunTrace, SiteBus};
use sdnum::protocol::{serve_site, RemoteBus, RemoteOptions, ServeExit, ServeOptions};

const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_RUNTIME: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(name = "sdnum", version, about = "Stochastic dynamic network utility maximization experiments")]
struct Cli {
    /// Worker threads for replica parallelism (0 uses every core).
    #[arg(long, global = true, env = "SDNUM_WORKERS", default_value_t = 0)]
    workers: usize,

    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate F(y) over the budget grid for every site.
    Evaluate(RunArgs),
    /// Run the rolling-horizon market with every site in this process.
    Run(RunArgs),
    /// Compare baseline and rollout policies at a fixed budget.
    ComparePolicies {
        #[command(flatten)]
        run: RunArgs,
        /// Policies to compare, overriding `compare.policies`.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
    },
    /// Fit a concave non-decreasing surrogate to a samples CSV.
    Fit {
        /// CSV with a header; the last column is the utility.
        samples: PathBuf,
        /// Write the model here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Also write `y.., u, fitted` rows here.
        #[arg(long)]
        fitted: Option<PathBuf>,
    },
    /// Serve one site of a config to a remote coordinator.
    ServeSite {
        config: PathBuf,
        #[arg(long)]
        site: usize,
        #[arg(long, env = "SDNUM_LISTEN", default_value = "127.0.0.1:7070")]
        listen: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Exit abruptly after this many messages (restart testing).
        #[arg(long, hide = true)]
        crash_after: Option<usize>,
    },
    /// Run the rolling-horizon market against remote site agents.
    Coordinate {
        #[command(flatten)]
        run: RunArgs,
        /// One `host:port` per site, in site order.
        #[arg(long, env = "SDNUM_ENDPOINTS", value_delimiter = ',', required = true)]
        endpoints: Vec<String>,
        /// Reconnect attempts per request.
        #[arg(long, default_value_t = 100)]
        retries: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config, or a manifest written by an earlier run.
    config: PathBuf,
    /// Output directory, overriding `output_dir`.
    #[arg(short, long, env = "SDNUM_OUT")]
    out: Option<PathBuf>,
    /// Root seed, overriding `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Replica count, overriding the one the command uses.
    #[arg(long)]
    replicas: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match sdnum::par::with_workers(cli.workers, || dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } => EXIT_CONFIG,
        Error::Io(_) | Error::Transport(_) | Error::Decode { .. } | Error::Version(_) => EXIT_IO,
        _ => EXIT_RUNTIME,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Evaluate(args) => {
            let (cfg, out) = prepare(&args, "evaluate", |cfg, n| cfg.evaluate.replicas = n)?;
            let rows = evaluate_sites(&cfg)?;
            write_csv(&out, "evaluate.csv", |w| write_evaluate_csv(&rows, w))
        }
        Command::Run(args) => {
            let (cfg, out) = prepare(&args, "run", |cfg, n| cfg.estimate.replicas = n)?;
            let agents = (0..cfg.site_count()).map(|l| cfg.agent(l)).collect::<Result<Vec<_>>>()?;
            run_market(&cfg, &mut LocalBus::new(agents), &out)
        }
        Command::ComparePolicies { run, policies } => {
            let (mut cfg, out) = prepare(&run, "compare-policies", |cfg, n| cfg.compare.replicas = n)?;
            if let Some(p) = policies {
                cfg.compare.policies = p;
                cfg.validate()?;
                write_manifest(&cfg, &out, "compare-policies")?;
            }
            let rows = compare_policies(&cfg)?;
            write_csv(&out, "compare.csv", |w| write_compare_csv(&rows, w))
        }
        Command::Fit { samples, out, fitted } => {
            let data = read_samples_csv(File::open(&samples)?)?;
            let fit = fit_concave_monotone(&data)?;
            match out {
                Some(p) => fs::write(p, fit.model.to_text())?,
                None => io::stdout().write_all(fit.model.to_text().as_bytes())?,
            }
            if let Some(p) = fitted {
                write_fitted_csv(&data, &fit, BufWriter::new(File::create(p)?))?;
            }
            Ok(())
        }
        Command::ServeSite { config, site, listen, seed, crash_after } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let mut agent = cfg.agent(site)?;
            let listener = TcpListener::bind(&listen)?;
            info!("site {site} listening on {}", listener.local_addr()?);
            match serve_site(agent.as_mut(), site, &listener, ServeOptions { crash_after })? {
                ServeExit::Shutdown => Ok(()),
                ServeExit::Crashed => Err(Error::Transport("simulated crash".into())),
            }
        }
        Command::Coordinate { run, endpoints, retries } => {
            let (cfg, out) = prepare(&run, "coordinate", |cfg, n| cfg.estimate.replicas = n)?;
            if endpoints.len() != cfg.site_count() {
                return Err(Error::Config(format!(
                    "{} endpoints given for {} sites",
                    endpoints.len(),
                    cfg.site_count()
                )));
            }
            let mut bus = RemoteBus::new(endpoints, RemoteOptions { retries, ..RemoteOptions::default() });
            run_market(&cfg, &mut bus, &out)?;
            bus.shutdown()
        }
    }
}

/// Loads a config or manifest; manifests are configs with comment headers.
fn load(path: &Path) -> Result<ExperimentConfig> {
    let mut text = String::new();
    File::open(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?
        .read_to_string(&mut text)?;
    ExperimentConfig::from_toml(&text)
}

/// Applies overrides, creates the output directory and writes the manifest.
fn prepare(
    args: &RunArgs,
    command: &str,
    set_replicas: impl FnOnce(&mut ExperimentConfig, usize),
) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.replicas {
        set_replicas(&mut cfg, n);
    }
    let out =
        args.out.clone().or_else(|| cfg.output_dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    // the manifest records where its outputs went but replays elsewhere
    cfg.output_dir = None;
    cfg.validate()?;
    fs::create_dir_all(&out)?;
    write_manifest(&cfg, &out, command)?;
    Ok((cfg, out))
}

/// Writes `manifest.toml`: the effective config, loadable as-is for replay,
/// preceded by comments naming the tool version, command and site seeds.
fn write_manifest(cfg: &ExperimentConfig, out: &Path, command: &str) -> Result<()> {
    let seeds: Vec<String> = (0..cfg.site_count()).map(|l| site_seed(cfg.seed, l).to_string()).collect();
    let text = format!(
        "# sdnum {}\n# command: {command}\n# site seeds: {}\n{}",
        env!("CARGO_PKG_VERSION"),
        seeds.join(", "),
        cfg.to_toml()
    );
    fs::write(out.join("manifest.toml"), text)?;
    Ok(())
}

fn write_csv(out: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let path = out.join(name);
    let mut w = BufWriter::new(File::create(&path)?);
    f(&mut w)?;
    w.flush()?;
    info!("wrote {}", path.display());
    Ok(())
}

fn run_market(cfg: &ExperimentConfig, bus: &mut dyn SiteBus, out: &Path) -> Result<()> {
    let trace: RunTrace = run_controller(bus, &cfg.controller())?;
    if !trace.feasible(cfg.market.z) {
        return Err(Error::Contract("an allocation exceeded the supply".into()));
    }
    write_csv(out, "controller.csv", |w| trace.write_controller_csv(w))?;
    write_csv(out, "market.csv", |w| trace.write_market_csv(w))?;
    write_csv(out, "surrogate.csv", |w| trace.write_surrogate_csv(w))?;
    write_csv(out, "outcome.csv", |w| trace.write_outcome_csv(w))
}
