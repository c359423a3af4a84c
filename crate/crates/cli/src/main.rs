use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use wncs_aoi_cli::commands::{self, csv_bytes, write_output, BlepAxis};
use wncs_aoi_cli::figures::{figure_csv, FigureId};
use wncs_aoi_cli::{CliResult, ExperimentConfig, Overrides};

#[derive(Parser, Debug)]
#[command(
    name = "wncs-aoi",
    version,
    about = "AoI, PAoI risk and EE-PAoI experiments for multi-connectivity links"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON configuration; omitted fields take the reference defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; each simulated point draws from its own stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Per-link transmit power(s) in dBm.
    #[arg(
        long = "pt-dbm",
        global = true,
        value_delimiter = ',',
        allow_hyphen_values = true
    )]
    pt_dbm: Option<Vec<f64>>,
    /// Connection count(s).
    #[arg(long, global = true, value_delimiter = ',')]
    k: Option<Vec<u32>>,
    /// PAoI threshold(s) in ms.
    #[arg(long = "zeta-ms", global = true, value_delimiter = ',')]
    zeta_ms: Option<Vec<f64>>,
    /// Arrival rate in packets per ms.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Noise power in dBm.
    #[arg(long = "sigma2-dbm", global = true, allow_hyphen_values = true)]
    sigma2_dbm: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form vs quadrature average block error probability.
    Blep {
        #[arg(long, value_enum, default_value_t = Axis::Gamma)]
        axis: Axis,
        /// Mean branch SNR values (linear); replaces the configured grid.
        #[arg(long = "gamma-bar", value_delimiter = ',')]
        gamma_bar: Option<Vec<f64>>,
    },
    /// Closed-form average AoI and PAoI for every scheme.
    Aoi,
    /// PAoI density, CDF and violation probability at one link.
    PaoiDist,
    /// Monte Carlo against the closed forms.
    Simulate,
    /// Optimal number of connections.
    Optimize,
    /// Plant driven by the age trace of the optimised link.
    Control,
    /// Data for one figure, or all of them.
    Figures {
        #[arg(long, default_value = "all")]
        figure: String,
    },
    /// Print the effective configuration as JSON.
    Config,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Axis {
    Gamma,
    Pt,
}

fn load(global: &GlobalArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: global.seed,
        output_dir: global.out.clone(),
        pt_dbm: global.pt_dbm.clone(),
        k: global.k.clone(),
        zeta_ms: global.zeta_ms.clone(),
        arrival_rate: global.lambda,
        noise_variance_dbm: global.sigma2_dbm,
    })?;
    Ok(cfg)
}

fn emit(cfg: &ExperimentConfig, name: &str, bytes: &[u8]) -> CliResult<()> {
    let path = write_output(&cfg.output_dir, name, bytes)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = load(&cli.global)?;
    match cli.command {
        Command::Blep { axis, gamma_bar } => {
            if let Some(g) = gamma_bar {
                cfg.sweep.gamma_bar = g;
            }
            let axis = match axis {
                Axis::Gamma => BlepAxis::MeanSnr,
                Axis::Pt => BlepAxis::TransmitPower,
            };
            let rows = commands::blep(&cfg, axis)?;
            let worst = rows.iter().map(|r| r.abs_diff).fold(0.0, f64::max);
            println!(
                "{} points, max |closed - quadrature| = {worst:.3e}",
                rows.len()
            );
            emit(&cfg, "blep.csv", &csv_bytes(&rows)?)
        }
        Command::Aoi => emit(&cfg, "aoi.csv", &csv_bytes(&commands::aoi(&cfg)?)?),
        Command::PaoiDist => emit(
            &cfg,
            "paoi_dist.csv",
            &csv_bytes(&commands::paoi_dist(&cfg)?)?,
        ),
        Command::Simulate => emit(
            &cfg,
            "simulate.csv",
            &csv_bytes(&commands::simulate(&cfg)?)?,
        ),
        Command::Optimize => {
            let out = commands::optimize(&cfg)?;
            print!("{}", out.report);
            emit(&cfg, "optimize.csv", &csv_bytes(&out.table())?)
        }
        Command::Control => {
            let out = commands::control(&cfg)?;
            print!("{}", out.report);
            emit(
                &cfg,
                "control_trace.csv",
                &commands::state_trace_csv(&out.trace)?,
            )
        }
        Command::Figures { figure } => {
            let ids = if figure.eq_ignore_ascii_case("all") {
                FigureId::ALL.to_vec()
            } else {
                vec![figure.parse()?]
            };
            for id in ids {
                info!("generating {id}");
                emit(&cfg, &format!("{id}.csv"), &figure_csv(&cfg, id)?)?;
            }
            Ok(())
        }
        Command::Config => {
            println!("{}", cfg.to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
