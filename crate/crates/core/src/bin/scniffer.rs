use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scniffer::budget::{BudgetConstants, FitInputs};
use scniffer::calibrate::CalibrationPlan;
use scniffer::cli::{self, BackendSpec, BudgetSource, FullScanOptions, ScanMeasure, SniffOptions};
use scniffer::io::read_json;
use scniffer::measures::MeasureKind;

#[derive(Parser)]
#[command(name = "scniffer", version, about = "EM leakage localization and correlation attack on a simulated chip")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file or preset name (aes8bit, aes32bit, des, rsa, aes8bit_masked, two_bump)
    #[arg(long, default_value = "aes8bit")]
    scenario: String,
    /// Rescale the scenario to an N x N grid
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// `sim`, or `gcode:<path>` to also write the motion transcript
    #[arg(long, default_value = "sim")]
    backend: BackendSpec,
    /// Chip origin on the gantry, `X,Y` in mm
    #[arg(long, default_value = "0,0", value_parser = parse_origin)]
    origin: (f64, f64),
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Measure every cell of the grid
    FullScan {
        #[command(flatten)]
        common: Common,
        /// amplitude | tvla | snr | cema
        #[arg(long, default_value = "snr")]
        measure: ScanMeasure,
        #[arg(long)]
        traces_per_measure: Option<usize>,
        /// CEMA checkpoint spacing in traces (cema maps only)
        #[arg(long, default_value_t = scniffer::attack::DEFAULT_STRIDE)]
        stride: usize,
    },
    /// Gradient search for a leaky cell, then CEMA there
    Sniff {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "tvla")]
        measure: MeasureKind,
        #[arg(long)]
        init_grid: Option<usize>,
        #[arg(long)]
        step_cells: Option<f64>,
        #[arg(long)]
        no_improve: Option<usize>,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        traces_per_measure: Option<usize>,
        #[arg(long, default_value_t = cli::DEFAULT_CEMA_CAP)]
        cema_cap: usize,
        /// CEMA checkpoint spacing in traces
        #[arg(long, default_value_t = scniffer::attack::DEFAULT_STRIDE)]
        stride: usize,
    },
    /// Trace-budget curves for search-then-attack versus exhaustive CEMA
    Budget {
        /// Constants JSON {k0, k1, c0, c1}
        #[arg(long, conflicts_with = "fit")]
        constants: Option<PathBuf>,
        /// Measurements JSON to fit constants from
        #[arg(long)]
        fit: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        grid: usize,
        #[arg(long, default_value_t = 1e-3)]
        snr_min: f64,
        #[arg(long, default_value_t = 1.0)]
        snr_max: f64,
        #[arg(long, default_value_t = 31)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_origin(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or("expected X,Y")?;
    Ok((
        x.trim().parse().map_err(|e| format!("{e}"))?,
        y.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn scenario(c: &Common) -> scniffer::Result<scniffer::device::SimDeviceConfig> {
    let s = cli::load_scenario(&c.scenario)?;
    Ok(match c.grid {
        Some(n) => s.with_grid(n),
        None => s,
    })
}

fn run(cli: Cli) -> scniffer::Result<ExitCode> {
    match cli.command {
        Command::FullScan {
            common,
            measure,
            traces_per_measure,
            stride,
        } => {
            let sc = scenario(&common)?;
            let mut opts = FullScanOptions::new(measure, common.seed);
            opts.traces_per_cell = traces_per_measure.unwrap_or(opts.traces_per_cell);
            opts.stride = stride;
            opts.backend = common.backend.clone();
            opts.origin_mm = common.origin;
            let r = cli::cmd_full_scan(&sc, &opts)?;
            println!(
                "{} cells x {} traces = {} traces; best cell ({}, {})",
                r.cells, opts.traces_per_cell, r.total_traces, r.best_cell.i, r.best_cell.j
            );
            if let Some(out) = &common.out {
                cli::write_full_scan(out, &r)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sniff {
            common,
            measure,
            init_grid,
            step_cells,
            no_improve,
            max_iterations,
            traces_per_measure,
            cema_cap,
            stride,
        } => {
            let sc = scenario(&common)?;
            let mut opts = SniffOptions::new(sc.grid(), measure, common.seed);
            let p = &mut opts.params;
            p.initial_grid_size = init_grid.unwrap_or(p.initial_grid_size);
            p.step_size_cells = step_cells.unwrap_or(p.step_size_cells);
            p.no_improve_limit = no_improve.unwrap_or(p.no_improve_limit);
            p.max_iterations = max_iterations.unwrap_or(p.max_iterations);
            opts.traces_per_measure = traces_per_measure.unwrap_or(opts.traces_per_measure);
            opts.cema_cap = cema_cap;
            opts.stride = stride;
            opts.backend = common.backend.clone();
            opts.origin_mm = common.origin;
            let r = cli::cmd_sniff(&sc, &opts)?;
            println!(
                "best cell ({}, {}) after {} measurements ({} traces); true snr {:.4} of max {:.4}",
                r.search.best_cell.i,
                r.search.best_cell.j,
                r.search.measurements_made,
                r.search_traces,
                r.true_snr_at_best,
                r.global_max_snr
            );
            match r.key_mtd {
                Some(m) => println!("key disclosed after {m} traces; total {} traces", r.total_traces),
                None => println!(
                    "key not disclosed within {} traces; total {} traces",
                    r.attack_traces_captured, r.total_traces
                ),
            }
            if let Some(out) = &common.out {
                cli::write_sniff(out, &r)?;
            }
            Ok(if r.disclosed { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Budget {
            constants,
            fit,
            grid,
            snr_min,
            snr_max,
            points,
            out,
        } => {
            let source = match (constants, fit) {
                (Some(path), _) => BudgetSource::Constants(read_json::<BudgetConstants>(&path)?),
                (None, Some(path)) => BudgetSource::Fit(read_json::<FitInputs>(&path)?),
                (None, None) => BudgetSource::Calibrate(CalibrationPlan::default()),
            };
            let r = cli::cmd_budget(&source, grid, snr_min, snr_max, points)?;
            let c = r.curve.constants;
            println!("k0={:.4} k1={:.4} c0={:.4} c1={:.4}", c.k0, c.k1, c.c0, c.c1);
            if let Some(s) = r.curve.crossover_snr {
                println!("exhaustive CEMA costs more below snr {s:.4}");
            }
            match &out {
                Some(out) => cli::write_budget(out, &r)?,
                None => print!("{}", r.curve.to_csv()),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
