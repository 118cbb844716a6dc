//! Probe positioning and trace capture behind one contract.
//!
//! A backend must be moved to a cell before it captures; captures report the
//! cell they were taken at. [`SimBackend`] captures from a [`SimDevice`];
//! [`GcodeBackend`] drives a 3-D printer gantry with G-code written to any
//! byte sink and delegates capture to an inner backend.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::crypto::InputSet;
use crate::device::SimDevice;
use crate::error::{Error, Result};
use crate::rng::{purpose, stream_id, NoiseStream};
use crate::trace::{Cell, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub grid_resolution: usize,
    pub chip_origin_mm: (f64, f64),
    pub cell_pitch_mm: f64,
}

impl Capabilities {
    /// Physical position of a cell center.
    pub fn cell_center_mm(&self, cell: Cell) -> (f64, f64) {
        (
            self.chip_origin_mm.0 + (cell.i as f64 + 0.5) * self.cell_pitch_mm,
            self.chip_origin_mm.1 + (cell.j as f64 + 0.5) * self.cell_pitch_mm,
        )
    }
}

/// Gantry resolution of the scanner.
pub const MOTION_STEP_MM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveAck {
    pub cell: Cell,
    /// Commanded cell-center position.
    pub position_mm: (f64, f64),
    /// Where the gantry actually lands, on the 0.1 mm step lattice.
    pub reachable_mm: (f64, f64),
    /// The commanded position was not on the step lattice.
    pub quantized: bool,
}

impl MoveAck {
    fn new(cell: Cell, position_mm: (f64, f64)) -> Self {
        let snap = |v: f64| (v / MOTION_STEP_MM).round() * MOTION_STEP_MM;
        let reachable_mm = (snap(position_mm.0), snap(position_mm.1));
        let off = |a: f64, b: f64| (a - b).abs() > 1e-9;
        Self {
            cell,
            position_mm,
            reachable_mm,
            quantized: off(position_mm.0, reachable_mm.0) || off(position_mm.1, reachable_mm.1),
        }
    }
}

pub trait Instrument {
    fn capabilities(&self) -> Capabilities;

    fn home(&mut self) -> Result<()>;

    fn move_to(&mut self, cell: Cell) -> Result<MoveAck>;

    /// Captures `count` traces at the current cell, one per plaintext in `inputs`.
    fn capture_batch(&mut self, count: usize, inputs: &InputSet) -> Result<Vec<Trace>>;

    /// Cell of the last successful move, if any since construction or homing.
    fn position(&self) -> Option<Cell>;
}

fn check_batch(count: usize, inputs: &InputSet) -> Result<()> {
    if count == 0 {
        return Err(Error::invalid("capture batch of zero traces"));
    }
    if inputs.len() != count {
        return Err(Error::invalid(format!(
            "batch of {count} traces but {} plaintexts supplied",
            inputs.len()
        )));
    }
    Ok(())
}

/// Backend that captures from a simulated device.
///
/// Capture noise for the k-th batch taken at a cell comes from its own
/// stream, addressed by `(cell, k)`, so replays and per-cell parallel scans
/// are reproducible.
#[derive(Clone, Debug)]
pub struct SimBackend {
    device: SimDevice,
    origin_mm: (f64, f64),
    current: Cell,
    moved: bool,
    batches_at: HashMap<Cell, u64>,
    silent: bool,
    noise_seed: u64,
}

impl SimBackend {
    pub fn new(device: SimDevice) -> Self {
        Self {
            noise_seed: device.config().seed,
            device,
            origin_mm: (0.0, 0.0),
            current: Cell::new(0, 0),
            moved: false,
            batches_at: HashMap::new(),
            silent: false,
        }
    }

    pub fn with_origin(mut self, origin_mm: (f64, f64)) -> Self {
        self.origin_mm = origin_mm;
        self
    }

    /// Draws capture noise from `seed` instead of the scenario seed, so one
    /// frozen field can be measured under many independent runs.
    pub fn with_noise_seed(mut self, seed: u64) -> Self {
        self.noise_seed = seed;
        self
    }

    /// Captures without additive noise: the zero-noise limit.
    pub fn noiseless(mut self) -> Self {
        self.silent = true;
        self
    }

    pub fn device(&self) -> &SimDevice {
        &self.device
    }
}

impl Instrument for SimBackend {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            grid_resolution: self.device.grid(),
            chip_origin_mm: self.origin_mm,
            cell_pitch_mm: self.device.config().geometry.cell_pitch_mm(),
        }
    }

    fn home(&mut self) -> Result<()> {
        self.current = Cell::new(0, 0);
        self.moved = false;
        Ok(())
    }

    fn move_to(&mut self, cell: Cell) -> Result<MoveAck> {
        let n = self.device.grid();
        if !cell.within(n) {
            return Err(Error::OutOfGrid { cell, n });
        }
        self.current = cell;
        self.moved = true;
        Ok(MoveAck::new(cell, self.capabilities().cell_center_mm(cell)))
    }

    fn capture_batch(&mut self, count: usize, inputs: &InputSet) -> Result<Vec<Trace>> {
        if !self.moved {
            return Err(Error::ProtocolViolation("capture before any move"));
        }
        check_batch(count, inputs)?;
        let cell = self.current;
        let k = self.batches_at.entry(cell).or_insert(0);
        let payload = ((cell.index(self.device.grid()) as u64) << 24) | *k;
        *k += 1;
        let mut noise = if self.silent {
            NoiseStream::Silent
        } else {
            NoiseStream::seeded(
                self.noise_seed,
                stream_id(purpose::CAPTURE_NOISE, payload),
            )
        };
        inputs
            .plaintexts
            .iter()
            .map(|pt| self.device.capture_trace(cell, pt, &inputs.key, &mut noise))
            .collect()
    }

    fn position(&self) -> Option<Cell> {
        self.moved.then_some(self.current)
    }
}

/// One emitted line of G-code.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GcodeCommand {
    /// `G21`: millimetre units.
    Millimetres,
    /// `G90`: absolute positioning.
    Absolute,
    /// `G28`: home all axes.
    Home,
    /// `G0`/`G1` in the XY plane.
    Move {
        rapid: bool,
        x: f64,
        y: f64,
        feed_mm_per_min: u32,
    },
    /// `M400`: wait for queued moves to finish.
    WaitForMoves,
}

impl fmt::Display for GcodeCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            GcodeCommand::Millimetres => f.write_str("G21"),
            GcodeCommand::Absolute => f.write_str("G90"),
            GcodeCommand::Home => f.write_str("G28"),
            GcodeCommand::Move {
                rapid,
                x,
                y,
                feed_mm_per_min,
            } => write!(
                f,
                "{} X{:.2} Y{:.2} F{}",
                if rapid { "G0" } else { "G1" },
                x,
                y,
                feed_mm_per_min
            ),
            GcodeCommand::WaitForMoves => f.write_str("M400"),
        }
    }
}

/// Default feed rate for probe moves.
pub const DEFAULT_FEED_MM_PER_MIN: u32 = 3000;
/// 180 mm/s, the gantry's top speed.
pub const MAX_FEED_MM_PER_MIN: u32 = 10_800;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcodeConfig {
    pub chip_origin_mm: (f64, f64),
    pub feed_mm_per_min: u32,
}

impl GcodeConfig {
    pub fn new(chip_origin_mm: (f64, f64)) -> Self {
        Self {
            chip_origin_mm,
            feed_mm_per_min: DEFAULT_FEED_MM_PER_MIN,
        }
    }
}

/// Gantry backend emitting G-code to `sink`; captures come from `inner`.
///
/// Z is never commanded: probe height is set by hand before a scan.
pub struct GcodeBackend<W: Write, I: Instrument> {
    sink: W,
    inner: I,
    config: GcodeConfig,
}

impl<W: Write, I: Instrument> GcodeBackend<W, I> {
    pub fn new(sink: W, inner: I, mut config: GcodeConfig) -> Self {
        config.feed_mm_per_min = config.feed_mm_per_min.min(MAX_FEED_MM_PER_MIN);
        Self {
            sink,
            inner,
            config,
        }
    }

    pub fn feed_mm_per_min(&self) -> u32 {
        self.config.feed_mm_per_min
    }

    pub fn inner(&self) -> &I {
        &self.inner
    }

    pub fn into_sink(self) -> W {
        self.sink
    }

    fn emit(&mut self, cmd: GcodeCommand) -> Result<()> {
        writeln!(self.sink, "{cmd}")?;
        Ok(())
    }
}

impl<W: Write, I: Instrument> Instrument for GcodeBackend<W, I> {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            chip_origin_mm: self.config.chip_origin_mm,
            ..self.inner.capabilities()
        }
    }

    fn home(&mut self) -> Result<()> {
        self.emit(GcodeCommand::Millimetres)?;
        self.emit(GcodeCommand::Absolute)?;
        self.emit(GcodeCommand::Home)?;
        self.sink.flush()?;
        self.inner.home()
    }

    fn move_to(&mut self, cell: Cell) -> Result<MoveAck> {
        let caps = self.capabilities();
        if !cell.within(caps.grid_resolution) {
            return Err(Error::OutOfGrid {
                cell,
                n: caps.grid_resolution,
            });
        }
        let (x, y) = caps.cell_center_mm(cell);
        self.emit(GcodeCommand::Move {
            rapid: false,
            x,
            y,
            feed_mm_per_min: self.config.feed_mm_per_min,
        })?;
        self.emit(GcodeCommand::WaitForMoves)?;
        self.sink.flush()?;
        self.inner.move_to(cell)?;
        Ok(MoveAck::new(cell, (x, y)))
    }

    fn capture_batch(&mut self, count: usize, inputs: &InputSet) -> Result<Vec<Trace>> {
        self.inner.capture_batch(count, inputs)
    }

    fn position(&self) -> Option<Cell> {
        self.inner.position()
    }
}

impl<T: Instrument + ?Sized> Instrument for &mut T {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn home(&mut self) -> Result<()> {
        (**self).home()
    }
    fn move_to(&mut self, cell: Cell) -> Result<MoveAck> {
        (**self).move_to(cell)
    }
    fn capture_batch(&mut self, count: usize, inputs: &InputSet) -> Result<Vec<Trace>> {
        (**self).capture_batch(count, inputs)
    }
    fn position(&self) -> Option<Cell> {
        (**self).position()
    }
}

impl<T: Instrument + ?Sized> Instrument for Box<T> {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn home(&mut self) -> Result<()> {
        (**self).home()
    }
    fn move_to(&mut self, cell: Cell) -> Result<MoveAck> {
        (**self).move_to(cell)
    }
    fn capture_batch(&mut self, count: usize, inputs: &InputSet) -> Result<Vec<Trace>> {
        (**self).capture_batch(count, inputs)
    }
    fn position(&self) -> Option<Cell> {
        (**self).position()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::TVLA_KEY;
    use crate::device::SimDeviceConfig;

    fn sim() -> SimBackend {
        let dev = SimDevice::new(SimDeviceConfig::preset("aes8bit").unwrap()).unwrap();
        SimBackend::new(dev)
    }

    fn gcode() -> GcodeBackend<Vec<u8>, SimBackend> {
        GcodeBackend::new(Vec::new(), sim(), GcodeConfig::new((50.0, 50.0)))
    }

    fn text(b: GcodeBackend<Vec<u8>, SimBackend>) -> String {
        String::from_utf8(b.into_sink()).unwrap()
    }

    #[test]
    fn move_formats_cell_centres() {
        let mut b = gcode();
        let ack = b.move_to(Cell::new(0, 0)).unwrap();
        assert_eq!(ack.position_mm, (50.15, 50.15));
        assert!(ack.quantized);
        let ack = b.move_to(Cell::new(29, 29)).unwrap();
        // 50 + 29.5 * 0.3
        assert!((ack.position_mm.0 - 58.85).abs() < 1e-9);
        assert_eq!(
            text(b),
            "G1 X50.15 Y50.15 F3000\nM400\nG1 X58.85 Y58.85 F3000\nM400\n"
        );
    }

    #[test]
    fn out_of_grid_move_emits_nothing() {
        let mut b = gcode();
        assert!(matches!(
            b.move_to(Cell::new(30, 29)),
            Err(Error::OutOfGrid { n: 30, .. })
        ));
        assert!(b.position().is_none());
        assert_eq!(text(b), "");
    }

    #[test]
    fn home_preamble_is_exact_and_idempotent() {
        let mut b = gcode();
        b.home().unwrap();
        assert_eq!(String::from_utf8(b.sink.clone()).unwrap(), "G21\nG90\nG28\n");
        b.home().unwrap();
        assert!(b.position().is_none());
        assert_eq!(text(b), "G21\nG90\nG28\nG21\nG90\nG28\n");
    }

    #[test]
    fn capture_requires_a_move() {
        let mut b = sim();
        let inputs = InputSet::random(1, 4, TVLA_KEY);
        assert!(matches!(
            b.capture_batch(4, &inputs),
            Err(Error::ProtocolViolation(_))
        ));
        b.home().unwrap();
        assert!(matches!(
            b.capture_batch(4, &inputs),
            Err(Error::ProtocolViolation(_))
        ));
        b.move_to(Cell::new(3, 3)).unwrap();
        assert!(matches!(b.capture_batch(0, &inputs), Err(Error::InvalidArgument(_))));
        let traces = b.capture_batch(4, &inputs).unwrap();
        assert_eq!(traces.len(), 4);
        assert!(traces.iter().all(|t| t.cell == Cell::new(3, 3)));
    }

    #[test]
    fn batches_replay_identically() {
        let inputs = InputSet::random(9, 1000, TVLA_KEY);
        let run = || {
            let mut b = sim();
            b.move_to(Cell::new(10, 12)).unwrap();
            b.capture_batch(1000, &inputs).unwrap()
        };
        let (a, c) = (run(), run());
        assert_eq!(a.len(), 1000);
        assert!(a.iter().all(|t| t.cell == Cell::new(10, 12)));
        assert_eq!(a, c);
    }

    #[test]
    fn feed_is_capped() {
        let mut cfg = GcodeConfig::new((0.0, 0.0));
        cfg.feed_mm_per_min = 20_000;
        let b = GcodeBackend::new(Vec::new(), sim(), cfg);
        assert_eq!(b.feed_mm_per_min(), MAX_FEED_MM_PER_MIN);
    }

    #[test]
    fn no_z_motion_ever() {
        let mut b = gcode();
        b.home().unwrap();
        for k in 0..30 {
            b.move_to(Cell::new(k, 29 - k)).unwrap();
        }
        assert!(!text(b).contains('Z'));
    }
}
