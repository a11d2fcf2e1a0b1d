use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use parking_lot::Mutex;

use buoynet::geo::GeoPoint;
use buoynet::monitor::{Monitor, MonitorConfig, ReadingStore};
use buoynet::mqtt::broker::Broker;
use buoynet::mqtt::codec::QoS;
use buoynet::mqtt::tcp::{run_subscriber, serve_broker, SubscriberConfig, DEFAULT_BROKER_PORT};
use buoynet::pathloss::{fit_log_model, read_samples_csv, DEFAULT_DISTANCE_UNIT_M};
use buoynet::runner::{distance_grid, run, sweep_range};
use buoynet::Scenario;

#[derive(Parser)]
#[command(
    name = "buoynet",
    version,
    about = "Marine buoy LoRa/MQTT pipeline emulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write telemetry.jsonl, rssi_samples.csv, fit.json, stats.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep a single node outward from the gateway; writes delivery_curve.csv and fit.json.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long = "min-d")]
        min_d: f64,
        #[arg(long = "max-d")]
        max_d: f64,
        #[arg(long)]
        step: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the log-distance model to a distance_m,rssi_dbm CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long = "unit-m", default_value_t = DEFAULT_DISTANCE_UNIT_M)]
        unit_m: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Subscribe to a broker, persist readings and serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = buoynet::monitor::DEFAULT_HTTP_PORT)]
        port: u16,
        /// HOST:PORT of the MQTT broker.
        #[arg(long, default_value = "127.0.0.1:1883")]
        broker: String,
        /// Append-only telemetry log, replayed on start.
        #[arg(long)]
        log: PathBuf,
        /// Topic prefix to subscribe under.
        #[arg(long, default_value = buoynet::gateway::DEFAULT_TOPIC_PREFIX)]
        prefix: String,
        /// Known gateway position for the RSSI fit, as ID@LAT,LON. Repeatable.
        #[arg(long = "gateway", value_parser = parse_gateway)]
        gateways: Vec<(String, GeoPoint)>,
    },
    /// Run the embedded MQTT broker over TCP.
    Broker {
        #[arg(long, default_value_t = DEFAULT_BROKER_PORT)]
        port: u16,
    },
}

fn parse_gateway(s: &str) -> Result<(String, GeoPoint), String> {
    let (id, rest) = s.split_once('@').ok_or("expected ID@LAT,LON")?;
    let (lat, lon) = rest.split_once(',').ok_or("expected ID@LAT,LON")?;
    let p = GeoPoint::new(
        lat.trim().parse().map_err(|e| format!("lat: {e}"))?,
        lon.trim().parse().map_err(|e| format!("lon: {e}"))?,
    );
    if id.is_empty() || !p.is_valid() {
        return Err(format!("invalid gateway {s:?}"));
    }
    Ok((id.to_string(), p))
}

fn load(path: &PathBuf) -> Result<Scenario> {
    Scenario::load(path).with_context(|| format!("scenario {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            scenario,
            out,
            seed,
        } => {
            let mut s = load(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let report = run(&s);
            report
                .write_outputs(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            let c = report.stats.conservation;
            log::info!(
                "emitted {} frames, monitor stored {}, counters {}",
                c.frames_emitted,
                c.monitor_ingested,
                if c.balanced { "balanced" } else { "UNBALANCED" }
            );
            Ok(())
        }
        Command::Sweep {
            scenario,
            min_d,
            max_d,
            step,
            out,
        } => {
            let s = load(&scenario)?;
            let grid = distance_grid(min_d, max_d, step).map_err(anyhow::Error::msg)?;
            let report = sweep_range(&s, &grid).map_err(anyhow::Error::msg)?;
            report
                .write_outputs(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            match report.reliable_boundary(0.95) {
                Some(d) => log::info!("delivery >= 95% out to {d} m"),
                None => log::info!("delivery below 95% at every distance"),
            }
            Ok(())
        }
        Command::Fit { input, unit_m, out } => {
            let file = std::fs::File::open(&input)
                .with_context(|| format!("opening {}", input.display()))?;
            let samples =
                read_samples_csv(file).with_context(|| format!("reading {}", input.display()))?;
            let model = fit_log_model(&samples, unit_m)?;
            std::fs::write(&out, model.to_json() + "\n")
                .with_context(|| format!("writing {}", out.display()))?;
            Ok(())
        }
        Command::Serve {
            port,
            broker,
            log,
            prefix,
            gateways,
        } => serve(port, broker, log, prefix, gateways),
        Command::Broker { port } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
                log::info!("broker listening on {}", listener.local_addr()?);
                serve_broker(listener, Arc::new(Mutex::new(Broker::new()))).await?;
                Ok(())
            })
        }
    }
}

fn serve(
    port: u16,
    broker: String,
    log: PathBuf,
    prefix: String,
    gateways: Vec<(String, GeoPoint)>,
) -> Result<()> {
    if prefix.is_empty() || prefix.contains(['#', '+']) {
        bail!("invalid topic prefix {prefix:?}");
    }
    let store =
        ReadingStore::open(&log).with_context(|| format!("opening log {}", log.display()))?;
    let config = MonitorConfig {
        gateways: gateways.into_iter().collect(),
        ..MonitorConfig::default()
    };
    let monitor = Arc::new(Monitor::new(config, store));
    monitor.refresh();
    log::info!(
        "replayed {} readings from {}",
        monitor.read(|s| s.len()),
        log.display()
    );

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let (_stop_tx, stop_rx) = tokio::sync::watch::channel(false);
        let sub = SubscriberConfig {
            addr: broker,
            client_id: format!("monitor-{}", std::process::id()),
            keep_alive_s: buoynet::mqtt::session::DEFAULT_KEEP_ALIVE_S,
            filters: vec![(format!("{prefix}/+/+/telemetry"), QoS::AtLeastOnce)],
        };
        let m = monitor.clone();
        tokio::spawn(run_subscriber(
            sub,
            move |d| {
                if let Err(e) = m.ingest_json(&d.payload) {
                    log::warn!("rejected payload on {}: {e}", d.topic);
                }
            },
            stop_rx,
        ));
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
        log::info!("monitor listening on {}", listener.local_addr()?);
        buoynet::monitor::http::serve(listener, monitor).await?;
        Ok(())
    })
}
