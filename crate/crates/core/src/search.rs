//! Two-phase greedy gradient search for a high-leakage cell.
//!
//! Phase one measures the centre cell of each block of an `M x M` partition
//! of the grid and starts from the best. Phase two repeatedly measures the
//! four neighbours of the current cell, sums `leakage * unit direction` over
//! them, and moves a fixed distance along that vector (towards higher
//! leakage). The continuous position is clamped to the chip; hitting the
//! edge ends the search, as do the iteration cap and a run of iterations
//! without a new best.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{generate_tvla_sets, InputSet, TVLA_FIXED_PLAINTEXT, TVLA_KEY};
use crate::error::{Error, Result};
use crate::instrument::Instrument;
use crate::measures::{self, LeakageScalar, MeasureKind};
use crate::rng::mix64;
use crate::trace::Cell;

/// Anything that can report a leakage scalar for a grid cell.
pub trait LeakageProbe {
    fn grid(&self) -> usize;
    fn measure(&mut self, cell: Cell) -> Result<LeakageScalar>;
}

impl<P: LeakageProbe + ?Sized> LeakageProbe for &mut P {
    fn grid(&self) -> usize {
        (**self).grid()
    }
    fn measure(&mut self, cell: Cell) -> Result<LeakageScalar> {
        (**self).measure(cell)
    }
}

/// Measures a cell by moving an instrument there and capturing a batch.
pub struct CellMeter<I: Instrument> {
    instrument: I,
    pub kind: MeasureKind,
    pub traces_per_measure: usize,
    pub key: [u8; 16],
    pub fixed_plaintext: [u8; 16],
    pub byte_index: usize,
    pub seed: u64,
}

impl<I: Instrument> CellMeter<I> {
    pub fn new(instrument: I, kind: MeasureKind, seed: u64) -> Self {
        Self {
            instrument,
            kind,
            traces_per_measure: kind.default_traces(),
            key: TVLA_KEY,
            fixed_plaintext: TVLA_FIXED_PLAINTEXT,
            byte_index: 0,
            seed,
        }
    }

    pub fn with_traces(mut self, traces: usize) -> Self {
        self.traces_per_measure = traces;
        self
    }

    pub fn instrument(&self) -> &I {
        &self.instrument
    }

    pub fn instrument_mut(&mut self) -> &mut I {
        &mut self.instrument
    }

    pub fn into_instrument(self) -> I {
        self.instrument
    }

    /// Plaintext seed for a cell: the same cell always sees the same inputs.
    fn inputs_seed(&self, cell: Cell) -> u64 {
        mix64(self.seed ^ mix64(cell.index(self.grid()) as u64 + 1))
    }
}

impl<I: Instrument> LeakageProbe for CellMeter<I> {
    fn grid(&self) -> usize {
        self.instrument.capabilities().grid_resolution
    }

    fn measure(&mut self, cell: Cell) -> Result<LeakageScalar> {
        self.instrument.move_to(cell)?;
        let seed = self.inputs_seed(cell);
        let n = self.traces_per_measure;
        match self.kind {
            MeasureKind::Amplitude => {
                let inputs = InputSet::random(seed, n, self.key);
                let traces = self.instrument.capture_batch(n, &inputs)?;
                measures::amplitude(&traces)
            }
            MeasureKind::Tvla => {
                let group = n / 2;
                let (fixed, random) = generate_tvla_sets(seed, group, self.key, self.fixed_plaintext)?;
                let a = self.instrument.capture_batch(group, &fixed)?;
                let b = self.instrument.capture_batch(group, &random)?;
                measures::tvla(&a, &b)
            }
            MeasureKind::Snr => {
                let inputs = InputSet::random(seed, n, self.key);
                let traces = self.instrument.capture_batch(n, &inputs)?;
                measures::snr(&traces, &self.key, self.byte_index)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub initial_grid_size: usize,
    pub step_size_cells: f64,
    pub max_iterations: usize,
    pub no_improve_limit: usize,
    pub measure: MeasureKind,
}

impl SearchParams {
    /// Defaults for an `n x n` grid: 2x2 initial grid, 2.8-cell steps and a
    /// no-improvement limit of `ceil(n / 3)`.
    pub fn for_grid(n: usize, measure: MeasureKind) -> Self {
        Self {
            initial_grid_size: 2.min(n.max(1)),
            step_size_cells: 2.8,
            max_iterations: 4 * n.max(1),
            no_improve_limit: n.div_ceil(3).max(1),
            measure,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.initial_grid_size == 0 || self.initial_grid_size > n {
            return Err(Error::invalid(format!(
                "initial grid size {} must be in 1..={n}",
                self.initial_grid_size
            )));
        }
        if !(self.step_size_cells > 0.0 && self.step_size_cells.is_finite()) {
            return Err(Error::invalid("step size must be positive"));
        }
        if self.max_iterations == 0 || self.no_improve_limit == 0 {
            return Err(Error::invalid("iteration limits must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    Neighbour,
    Step,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub cell: Cell,
    pub leakage: f64,
    pub traces_used: usize,
    pub phase: Phase,
    /// Best leakage after this measurement.
    pub best_so_far: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub grid: usize,
    pub continuous_pos: (f64, f64),
    pub current_cell: Cell,
    pub best_cell: Cell,
    pub best_leakage: f64,
    pub measurements_made: usize,
    /// Value of `measurements_made` when the current best was measured.
    pub measurements_at_best: usize,
    pub traces_used: usize,
    pub visited: BTreeMap<Cell, LeakageScalar>,
    pub trajectory: Vec<TrajectoryPoint>,
}

impl SearchState {
    fn new(grid: usize) -> Self {
        Self {
            grid,
            continuous_pos: (0.5, 0.5),
            current_cell: Cell::new(0, 0),
            best_cell: Cell::new(0, 0),
            best_leakage: f64::NEG_INFINITY,
            measurements_made: 0,
            measurements_at_best: 0,
            traces_used: 0,
            visited: BTreeMap::new(),
            trajectory: Vec::new(),
        }
    }

    /// Leakage at `cell`, measuring it only on the first visit.
    fn leakage_at<P: LeakageProbe>(&mut self, probe: &mut P, cell: Cell, phase: Phase) -> Result<f64> {
        if let Some(s) = self.visited.get(&cell) {
            return Ok(s.value);
        }
        let s = probe.measure(cell)?;
        self.measurements_made += 1;
        self.traces_used += s.traces_used;
        self.visited.insert(cell, s);
        if s.value > self.best_leakage {
            self.best_leakage = s.value;
            self.best_cell = cell;
            self.measurements_at_best = self.measurements_made;
        }
        self.trajectory.push(TrajectoryPoint {
            cell,
            leakage: s.value,
            traces_used: s.traces_used,
            phase,
            best_so_far: self.best_leakage,
        });
        Ok(s.value)
    }

    fn centre_of(cell: Cell) -> (f64, f64) {
        (cell.i as f64 + 0.5, cell.j as f64 + 0.5)
    }
}

/// Centre cell index of block `b` when `n` cells are split into `m` blocks.
pub fn block_centre(b: usize, m: usize, n: usize) -> usize {
    ((2 * b + 1) * n) / (2 * m)
}

pub fn initial_cells(m: usize, n: usize) -> Vec<Cell> {
    let mut cells = Vec::with_capacity(m * m);
    for bi in 0..m {
        for bj in 0..m {
            cells.push(Cell::new(block_centre(bi, m, n), block_centre(bj, m, n)));
        }
    }
    cells
}

/// Error from a search step, carrying the state reached before the failure.
#[derive(Debug)]
pub struct SearchError {
    pub source: Error,
    pub partial: Box<SearchReport>,
}

impl fmt::Display for SearchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "search failed after {} measurements: {}",
            self.partial.measurements_made, self.source
        )
    }
}

impl std::error::Error for SearchError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<SearchError> for Error {
    fn from(e: SearchError) -> Self {
        e.source
    }
}

/// Phase one: coarse `M x M` sampling; the state starts at the best block centre.
pub fn initial_phase<P: LeakageProbe>(
    probe: &mut P,
    params: &SearchParams,
) -> std::result::Result<SearchState, SearchError> {
    let n = probe.grid();
    let mut state = SearchState::new(n);
    let fail = |state: &SearchState, e: Error| SearchError {
        source: e,
        partial: Box::new(SearchReport::from_state(params, state, StopReason::Failed, 0)),
    };
    if let Err(e) = params.validate(n) {
        return Err(fail(&state, e));
    }
    for cell in initial_cells(params.initial_grid_size, n) {
        if let Err(e) = state.leakage_at(probe, cell, Phase::Initial) {
            return Err(fail(&state, e));
        }
    }
    state.current_cell = state.best_cell;
    state.continuous_pos = SearchState::centre_of(state.best_cell);
    Ok(state)
}

/// Neighbour offsets in the fixed evaluation order east, west, north, south.
const NEIGHBOURS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// Average of `leakage * unit direction` over the in-grid 4-neighbours.
pub fn estimate_gradient<P: LeakageProbe>(probe: &mut P, state: &mut SearchState) -> Result<(f64, f64)> {
    let n = state.grid;
    if n < 2 {
        return Err(Error::DegenerateGrid(n));
    }
    let c = state.current_cell;
    let mut g = (0.0, 0.0);
    for (dx, dy) in NEIGHBOURS {
        let (i, j) = (c.i as isize + dx, c.j as isize + dy);
        if i < 0 || j < 0 || i >= n as isize || j >= n as isize {
            continue;
        }
        let l = state.leakage_at(probe, Cell::new(i as usize, j as usize), Phase::Neighbour)?;
        g.0 += l * dx as f64;
        g.1 += l * dy as f64;
    }
    Ok((g.0 / 4.0, g.1 / 4.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepOutcome {
    pub moved: bool,
    /// The step was clamped to the chip boundary.
    pub edge_stop: bool,
}

/// Moves `step_size_cells` along the unit gradient, clamps to `[0, N]^2`,
/// maps the position to a cell and measures it.
pub fn step<P: LeakageProbe>(
    probe: &mut P,
    state: &mut SearchState,
    gradient: (f64, f64),
    params: &SearchParams,
) -> Result<StepOutcome> {
    if !(gradient.0.is_finite() && gradient.1.is_finite()) {
        return Err(Error::invalid("gradient is not finite"));
    }
    let norm = gradient.0.hypot(gradient.1);
    if norm == 0.0 {
        return Ok(StepOutcome {
            moved: false,
            edge_stop: false,
        });
    }
    let n = state.grid as f64;
    let (x, y) = (
        state.continuous_pos.0 + params.step_size_cells * gradient.0 / norm,
        state.continuous_pos.1 + params.step_size_cells * gradient.1 / norm,
    );
    let (cx, cy) = (x.clamp(0.0, n), y.clamp(0.0, n));
    let edge_stop = cx != x || cy != y;
    state.continuous_pos = (cx, cy);
    let last = state.grid - 1;
    let cell = Cell::new((cx.floor() as usize).min(last), (cy.floor() as usize).min(last));
    state.current_cell = cell;
    state.leakage_at(probe, cell, Phase::Step)?;
    Ok(StepOutcome {
        moved: true,
        edge_stop,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    NoImprovement,
    Edge,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub params: SearchParams,
    pub grid: usize,
    pub best_cell: Cell,
    pub best_leakage: f64,
    pub measurements_made: usize,
    pub measurements_at_best: usize,
    pub traces_used: usize,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub trajectory: Vec<TrajectoryPoint>,
}

impl SearchReport {
    fn from_state(params: &SearchParams, s: &SearchState, stop_reason: StopReason, iterations: usize) -> Self {
        Self {
            params: *params,
            grid: s.grid,
            best_cell: s.best_cell,
            best_leakage: s.best_leakage,
            measurements_made: s.measurements_made,
            measurements_at_best: s.measurements_at_best,
            traces_used: s.traces_used,
            iterations,
            stop_reason,
            trajectory: s.trajectory.clone(),
        }
    }

    /// Traces spent up to and including the measurement that found the best cell.
    pub fn traces_to_best(&self) -> usize {
        self.trajectory[..self.measurements_at_best]
            .iter()
            .map(|p| p.traces_used)
            .sum()
    }
}

/// Runs both phases until a stopping rule fires.
pub fn run<P: LeakageProbe>(probe: &mut P, params: &SearchParams) -> std::result::Result<SearchReport, SearchError> {
    let mut state = initial_phase(probe, params)?;
    let mut stale = 0;
    let mut iterations = 0;
    let reason = loop {
        if iterations == params.max_iterations {
            break StopReason::MaxIterations;
        }
        iterations += 1;
        let before = state.best_leakage;
        let outcome = estimate_gradient(probe, &mut state)
            .and_then(|g| step(probe, &mut state, g, params));
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                return Err(SearchError {
                    source: e,
                    partial: Box::new(SearchReport::from_state(params, &state, StopReason::Failed, iterations)),
                })
            }
        };
        if state.best_leakage > before {
            stale = 0;
        } else {
            stale += 1;
        }
        if outcome.edge_stop {
            break StopReason::Edge;
        }
        if stale >= params.no_improve_limit {
            break StopReason::NoImprovement;
        }
    };
    Ok(SearchReport::from_state(params, &state, reason, iterations))
}
