use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tsdf_cli::commands::{self, Overrides};
use tsdf_cli::config::parse_budget;
use tsdf_cli::CliError;
use tsdf_core::sampling::{FineMode, SamplerKind};

/// TSDF-bounded volume rendering of analytic SDF scenes.
///
/// Exit codes: 0 success, 1 runtime failure, 2 invalid config or
/// arguments, 3 missing artifact. `TSDF_THREADS` caps the worker count.
#[derive(Debug, Parser)]
#[command(name = "tsdf", version)]
struct Cli {
    /// Scene-config file (TOML).
    #[arg(long, global = true, default_value = "configs/room.toml")]
    config: PathBuf,
    /// Sampler kind: uniform, hierarchical, tsdf_naive or tsdf_full.
    #[arg(long, global = true, value_parser = parse_kind)]
    sampler: Option<SamplerKind>,
    /// Sample budget as <coarse>+<fine>.
    #[arg(long, global = true, value_parser = parse_budget)]
    budget: Option<(usize, usize)>,
    /// Grid resolution per axis.
    #[arg(long, global = true)]
    grid_res: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sampler seed for jittered fine samples.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Adaptive coarse spacing in meters; disables calibration.
    #[arg(long, global = true)]
    dt_target_m: Option<f64>,
    #[arg(long, global = true)]
    n_min: Option<usize>,
    #[arg(long, global = true)]
    n_max: Option<usize>,
    /// Weight-sum threshold for recovery; 0 disables it.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Recovery budget as <coarse>+<fine>.
    #[arg(long, global = true, value_parser = parse_budget)]
    recovery_budget: Option<(usize, usize)>,
    #[arg(long, global = true)]
    t_near_m: Option<f64>,
    #[arg(long, global = true)]
    t_far_m: Option<f64>,
    /// Jittered fine quantiles (true or false).
    #[arg(long, global = true)]
    jitter: Option<bool>,
    /// Fine pass placement: importance or uniform.
    #[arg(long, global = true, value_parser = parse_fine_mode)]
    fine_mode: Option<FineMode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render training depth maps and fuse them into volume.tsdf.
    Integrate,
    /// Render one test view and compare it with the dense reference.
    Render {
        #[arg(long, default_value_t = 0)]
        view: usize,
    },
    /// Sweep samplers and budgets over the test views.
    Bench,
    /// Dump the samples, bounds and profiles along one pixel's ray.
    RayDump {
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// Pixel as x,y.
        #[arg(long, value_parser = parse_pixel)]
        pixel: (usize, usize),
    },
}

fn parse_kind(s: &str) -> Result<SamplerKind, String> {
    s.parse().map_err(|e: tsdf_core::DomainError| e.0)
}

fn parse_fine_mode(s: &str) -> Result<FineMode, String> {
    match s {
        "importance" => Ok(FineMode::Importance),
        "uniform" => Ok(FineMode::Uniform),
        _ => Err(format!("unknown fine mode '{s}' (expected importance or uniform)")),
    }
}

fn parse_pixel(s: &str) -> Result<(usize, usize), String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("pixel '{s}' is not of the form x,y"))?;
    let x = x.trim().parse().map_err(|_| format!("bad x in pixel '{s}'"))?;
    let y = y.trim().parse().map_err(|_| format!("bad y in pixel '{s}'"))?;
    Ok((x, y))
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Ok(v) = std::env::var("TSDF_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("TSDF_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("TSDF_THREADS: {e}")))?;
    }
    let overrides = Overrides {
        sampler: cli.sampler,
        budget: cli.budget,
        grid_res: cli.grid_res,
        out: cli.out,
        seed: cli.seed,
        dt_target_m: cli.dt_target_m,
        n_min: cli.n_min,
        n_max: cli.n_max,
        tau: cli.tau,
        recovery_budget: cli.recovery_budget,
        t_near_m: cli.t_near_m,
        t_far_m: cli.t_far_m,
        jitter: cli.jitter,
        fine_mode: cli.fine_mode,
    };
    let settings = commands::load_settings(&cli.config, &overrides)?;
    match cli.command {
        Command::Integrate => commands::integrate(&settings),
        Command::Render { view } => commands::render(&settings, view),
        Command::Bench => commands::bench(&settings, cli.sampler, cli.budget),
        Command::RayDump { view, pixel } => commands::ray_dump(&settings, view, pixel),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
