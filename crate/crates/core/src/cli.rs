//! Commands behind the `scniffer` binary: exhaustive scans, search-then-attack
//! runs and budget curves, plus the artifacts they write.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{attack_until_disclosed, AttackBudget, AttackResult, IncrementalAttack, DEFAULT_STRIDE};
use crate::budget::{fit_constants, BudgetConstants, BudgetCurve, FitInputs, FitReport};
use crate::calibrate::{calibrate, CalibrationPlan};
use crate::crypto::{to_hex, InputSet, TVLA_KEY};
use crate::device::{SimDevice, SimDeviceConfig};
use crate::error::{Error, Result};
use crate::instrument::{GcodeBackend, GcodeConfig, Instrument, SimBackend};
use crate::io::{heatmap_csv, heatmap_pgm, trajectory_csv, write_json};
use crate::measures::MeasureKind;
use crate::rng::mix64;
use crate::search::{self, CellMeter, SearchParams, SearchReport};
use crate::trace::Cell;

/// Where motion commands go.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum BackendSpec {
    Sim,
    /// Emit G-code to this file; captures still come from the simulator.
    Gcode(PathBuf),
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "sim" => Ok(BackendSpec::Sim),
            Some(("gcode", path)) if !path.is_empty() => Ok(BackendSpec::Gcode(PathBuf::from(path))),
            _ => Err(Error::invalid(format!("backend must be `sim` or `gcode:<path>`, got {s:?}"))),
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(b: BackendSpec) -> String {
        b.to_string()
    }
}

impl std::fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendSpec::Sim => f.write_str("sim"),
            BackendSpec::Gcode(p) => write!(f, "gcode:{}", p.display()),
        }
    }
}

/// A scenario file path, or the name of a shipped preset.
pub fn load_scenario(spec: &str) -> Result<SimDeviceConfig> {
    let path = Path::new(spec);
    if path.exists() {
        SimDeviceConfig::load(path)
    } else {
        SimDeviceConfig::preset(spec)
    }
}

/// Runs `f` against the instrument selected by `backend`, writing the G-code
/// transcript (homing preamble first) when asked for.
fn with_instrument<T>(
    backend: &BackendSpec,
    sim: SimBackend,
    origin_mm: (f64, f64),
    f: impl FnOnce(&mut dyn Instrument) -> Result<T>,
) -> Result<T> {
    match backend {
        BackendSpec::Sim => {
            let mut sim = sim;
            f(&mut sim)
        }
        BackendSpec::Gcode(path) => {
            let sink = BufWriter::new(File::create(path)?);
            let mut g = GcodeBackend::new(sink, sim, GcodeConfig::new(origin_mm));
            g.home()?;
            f(&mut g)
        }
    }
}

/// What an exhaustive scan evaluates at each cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanMeasure {
    Amplitude,
    Tvla,
    Snr,
    /// Full-key CEMA; the map holds the key MTD (infinite when not disclosed).
    Cema,
}

impl ScanMeasure {
    pub fn default_traces(self) -> usize {
        match self {
            ScanMeasure::Amplitude => MeasureKind::Amplitude.default_traces(),
            ScanMeasure::Tvla => MeasureKind::Tvla.default_traces(),
            ScanMeasure::Snr | ScanMeasure::Cema => 1000,
        }
    }

    fn leakage(self) -> Option<MeasureKind> {
        match self {
            ScanMeasure::Amplitude => Some(MeasureKind::Amplitude),
            ScanMeasure::Tvla => Some(MeasureKind::Tvla),
            ScanMeasure::Snr => Some(MeasureKind::Snr),
            ScanMeasure::Cema => None,
        }
    }
}

impl FromStr for ScanMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("cema") {
            return Ok(ScanMeasure::Cema);
        }
        Ok(match MeasureKind::from_str(s)? {
            MeasureKind::Amplitude => ScanMeasure::Amplitude,
            MeasureKind::Tvla => ScanMeasure::Tvla,
            MeasureKind::Snr => ScanMeasure::Snr,
        })
    }
}

fn default_stride() -> usize {
    DEFAULT_STRIDE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullScanOptions {
    pub measure: ScanMeasure,
    pub traces_per_cell: usize,
    /// Checkpoint spacing for CEMA maps.
    #[serde(default = "default_stride")]
    pub stride: usize,
    pub seed: u64,
    pub backend: BackendSpec,
    pub origin_mm: (f64, f64),
}

impl FullScanOptions {
    pub fn new(measure: ScanMeasure, seed: u64) -> Self {
        Self {
            measure,
            traces_per_cell: measure.default_traces(),
            stride: DEFAULT_STRIDE,
            seed,
            backend: BackendSpec::Sim,
            origin_mm: (0.0, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullScanReport {
    pub scenario: SimDeviceConfig,
    pub options: FullScanOptions,
    pub grid: usize,
    pub cells: usize,
    pub total_traces: usize,
    /// Row-major, rows along y.
    pub values: Vec<f64>,
    pub best_cell: Cell,
}

/// Measures every cell. On the simulator backend cells run in parallel; the
/// result does not depend on the order because each cell has its own noise
/// and plaintext streams.
pub fn cmd_full_scan(scenario: &SimDeviceConfig, opts: &FullScanOptions) -> Result<FullScanReport> {
    if opts.traces_per_cell < 2 {
        return Err(Error::invalid("need at least 2 traces per cell"));
    }
    let device = SimDevice::new(scenario.clone())?;
    let n = device.grid();
    let cells: Vec<Cell> = (0..n).flat_map(|j| (0..n).map(move |i| Cell::new(i, j))).collect();
    let fresh = || SimBackend::new(device.clone()).with_noise_seed(opts.seed);

    let measure_cell = |inst: &mut dyn Instrument, cell: Cell| -> Result<(f64, usize)> {
        match opts.measure.leakage() {
            Some(kind) => {
                let mut meter = CellMeter::new(inst, kind, opts.seed).with_traces(opts.traces_per_cell);
                let s = search::LeakageProbe::measure(&mut meter, cell)?;
                Ok((s.value, s.traces_used))
            }
            None => {
                inst.move_to(cell)?;
                let seed = mix64(opts.seed ^ mix64(cell.index(n) as u64 + 1));
                let inputs = InputSet::random(seed, opts.traces_per_cell, TVLA_KEY);
                let traces = inst.capture_batch(opts.traces_per_cell, &inputs)?;
                let r = crate::attack::attack_all_bytes(&traces, opts.stride, &TVLA_KEY)?;
                Ok((r.key_mtd().map_or(f64::INFINITY, |m| m as f64), traces.len()))
            }
        }
    };

    let results: Vec<(f64, usize)> = match &opts.backend {
        BackendSpec::Sim => cells
            .par_iter()
            .map(|&c| measure_cell(&mut fresh(), c))
            .collect::<Result<_>>()?,
        spec => with_instrument(spec, fresh(), opts.origin_mm, |inst| {
            cells.iter().map(|&c| measure_cell(inst, c)).collect()
        })?,
    };

    let values: Vec<f64> = results.iter().map(|r| r.0).collect();
    // best = highest leakage, or lowest MTD for CEMA maps; ties to the first
    let better = |a: f64, b: f64| if opts.measure == ScanMeasure::Cema { a < b } else { a > b };
    let mut best = 0;
    for k in 1..values.len() {
        if better(values[k], values[best]) {
            best = k;
        }
    }
    Ok(FullScanReport {
        scenario: scenario.clone(),
        options: opts.clone(),
        grid: n,
        cells: cells.len(),
        total_traces: results.iter().map(|r| r.1).sum(),
        values,
        best_cell: cells[best],
    })
}

/// Writes `heatmap.csv`, `heatmap.pgm` (when all values are finite) and
/// `report.json` into `out`.
pub fn write_full_scan(out: &Path, report: &FullScanReport) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("heatmap.csv"), heatmap_csv(&report.values, report.grid)?)?;
    if report.values.iter().all(|v| v.is_finite()) {
        fs::write(out.join("heatmap.pgm"), heatmap_pgm(&report.values, report.grid)?)?;
    }
    write_json(&out.join("report.json"), report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SniffOptions {
    pub params: SearchParams,
    pub traces_per_measure: usize,
    pub cema_cap: usize,
    pub stride: usize,
    pub seed: u64,
    pub backend: BackendSpec,
    pub origin_mm: (f64, f64),
}

pub const DEFAULT_CEMA_CAP: usize = 20_000;

impl SniffOptions {
    pub fn new(grid: usize, measure: MeasureKind, seed: u64) -> Self {
        Self {
            params: SearchParams::for_grid(grid, measure),
            traces_per_measure: measure.default_traces(),
            cema_cap: DEFAULT_CEMA_CAP,
            stride: DEFAULT_STRIDE,
            seed,
            backend: BackendSpec::Sim,
            origin_mm: (0.0, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SniffReport {
    pub scenario: SimDeviceConfig,
    pub options: SniffOptions,
    pub search: SearchReport,
    pub attack: AttackResult,
    pub key: String,
    pub disclosed: bool,
    pub key_mtd: Option<usize>,
    pub search_traces: usize,
    /// Traces the attack needed: the key MTD, or everything captured when
    /// the key was not disclosed.
    pub attack_traces: usize,
    pub attack_traces_captured: usize,
    pub total_traces: usize,
    pub true_snr_at_best: f64,
    pub global_max_snr: f64,
}

/// Searches for a strong cell, then attacks there until the whole key is
/// disclosed or the trace cap is hit.
pub fn cmd_sniff(scenario: &SimDeviceConfig, opts: &SniffOptions) -> Result<SniffReport> {
    let device = SimDevice::new(scenario.clone())?;
    let sim = SimBackend::new(device.clone()).with_noise_seed(opts.seed);
    let (search, attack) = with_instrument(&opts.backend, sim, opts.origin_mm, |inst| {
        let mut meter = CellMeter::new(&mut *inst, opts.params.measure, opts.seed).with_traces(opts.traces_per_measure);
        let search = search::run(&mut meter, &opts.params)?;
        let mut attack = IncrementalAttack::new(scenario.samples_per_trace, opts.stride)?;
        attack_until_disclosed(
            inst,
            search.best_cell,
            &mut attack,
            &TVLA_KEY,
            AttackBudget::new(opts.stride, opts.cema_cap),
            mix64(opts.seed ^ 0xa77a_c4ed),
        )?;
        Ok((search, attack.finish(&TVLA_KEY)?))
    })?;
    let key_mtd = attack.key_mtd();
    let attack_traces = key_mtd.unwrap_or(attack.traces_used);
    Ok(SniffReport {
        scenario: scenario.clone(),
        options: opts.clone(),
        key: to_hex(&TVLA_KEY),
        disclosed: key_mtd.is_some(),
        key_mtd,
        search_traces: search.traces_used,
        attack_traces,
        attack_traces_captured: attack.traces_used,
        total_traces: search.traces_used + attack_traces,
        true_snr_at_best: device.true_snr_at(search.best_cell)?,
        global_max_snr: device.global_max().1,
        search,
        attack,
    })
}

/// Writes `report.json` and one correlation CSV per key byte.
pub fn write_sniff(out: &Path, report: &SniffReport) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut slim = report.clone();
    slim.attack.trajectories.clear();
    write_json(&out.join("report.json"), &slim)?;
    for t in &report.attack.trajectories {
        fs::write(out.join(format!("cema_byte{:02}.csv", t.byte_index)), trajectory_csv(t))?;
    }
    Ok(())
}

/// Where budget constants come from.
#[derive(Clone, Debug, PartialEq)]
pub enum BudgetSource {
    Constants(BudgetConstants),
    Fit(FitInputs),
    Calibrate(CalibrationPlan),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitReport>,
    pub curve: BudgetCurve,
}

pub fn cmd_budget(source: &BudgetSource, n: usize, snr_lo: f64, snr_hi: f64, points: usize) -> Result<BudgetReport> {
    let fit = match source {
        BudgetSource::Constants(_) => None,
        BudgetSource::Fit(inputs) => Some(fit_constants(inputs)?),
        BudgetSource::Calibrate(plan) => Some(fit_constants(&calibrate(plan)?)?),
    };
    let constants = match (source, &fit) {
        (BudgetSource::Constants(c), _) => *c,
        (_, Some(f)) => f.constants,
        _ => unreachable!(),
    };
    Ok(BudgetReport {
        curve: BudgetCurve::new(n, snr_lo, snr_hi, points, &constants)?,
        fit,
    })
}

/// Writes `curve.csv` and `report.json` (with the fit, when there is one).
pub fn write_budget(out: &Path, report: &BudgetReport) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("curve.csv"), report.curve.to_csv())?;
    write_json(&out.join("report.json"), report)
}
