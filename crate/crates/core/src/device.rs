//! Synthetic device under test.
//!
//! The chip surface carries a frozen ground-truth SNR field. A capture at a
//! cell injects `gain * alpha(cell) * HW(S(pt_b ^ k_b))` into one sample slot
//! per key byte, on top of white Gaussian noise, with `alpha` chosen so that
//! the signal-to-noise variance ratio at that slot equals the cell's true SNR.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crypto::{leakage_model, MODEL_VARIANCE};
use crate::error::{Error, Result};
use crate::rng::{purpose, stream_id, NoiseStream, SeededStream};
use crate::trace::{Cell, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChipGeometry {
    pub side_length_mm: f64,
    pub grid_resolution: usize,
}

impl ChipGeometry {
    pub fn new(side_length_mm: f64, grid_resolution: usize) -> Result<Self> {
        let g = Self {
            side_length_mm,
            grid_resolution,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn cell_pitch_mm(&self) -> f64 {
        self.side_length_mm / self.grid_resolution as f64
    }

    /// Physical length of a step expressed in cells.
    pub fn cells_to_mm(&self, cells: f64) -> f64 {
        cells * self.cell_pitch_mm()
    }

    pub fn mm_to_cells(&self, mm: f64) -> f64 {
        mm / self.cell_pitch_mm()
    }

    fn validate(&self) -> Result<()> {
        if !(self.side_length_mm > 0.0 && self.side_length_mm.is_finite()) {
            return Err(Error::invalid("chip side length must be positive"));
        }
        if self.grid_resolution == 0 {
            return Err(Error::invalid("grid resolution must be positive"));
        }
        Ok(())
    }
}

/// Gaussian hot spot of leakage, in cell-index coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: (f64, f64),
    pub peak_snr: f64,
    pub radius_cells: f64,
}

impl Bump {
    fn at(&self, x: f64, y: f64) -> f64 {
        let d2 = (x - self.center.0).powi(2) + (y - self.center.1).powi(2);
        self.peak_snr * (-d2 / (2.0 * self.radius_cells * self.radius_cells)).exp()
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageField {
    pub bumps: Vec<Bump>,
    /// Standard deviation of the per-cell log-normal perturbation.
    #[serde(default)]
    pub roughness_sigma: f64,
    pub floor_snr: f64,
    /// Global multiplier; values below 1 model a masked implementation.
    #[serde(default = "one")]
    pub snr_scale: f64,
}

/// Data-independent emission (clock tree, I/O drivers) that raises the raw
/// signal amplitude without carrying key information. It is added to every
/// sample as an offset measured in units of the noise standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarrierField {
    pub base_level: f64,
    #[serde(default)]
    pub bumps: Vec<CarrierBump>,
    #[serde(default)]
    pub roughness_sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarrierBump {
    pub center: (f64, f64),
    pub peak: f64,
    pub radius_cells: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimDeviceConfig {
    #[serde(default)]
    pub name: String,
    pub geometry: ChipGeometry,
    pub field: LeakageField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrier: Option<CarrierField>,
    pub samples_per_trace: usize,
    pub leaky_sample_index: usize,
    pub signal_gain: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be positive and finite, got {v}")))
    }
}

impl SimDeviceConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        positive(self.field.floor_snr, "floor_snr")?;
        positive(self.field.snr_scale, "snr_scale")?;
        positive(self.signal_gain, "signal_gain")?;
        positive(self.noise_sigma, "noise_sigma")?;
        if !(self.field.roughness_sigma >= 0.0 && self.field.roughness_sigma.is_finite()) {
            return Err(Error::invalid("roughness_sigma must be nonnegative"));
        }
        for b in &self.field.bumps {
            positive(b.peak_snr, "bump peak_snr")?;
            positive(b.radius_cells, "bump radius_cells")?;
        }
        if let Some(c) = &self.carrier {
            if !(c.base_level >= 0.0 && c.roughness_sigma >= 0.0) {
                return Err(Error::invalid("carrier levels must be nonnegative"));
            }
            for b in &c.bumps {
                positive(b.radius_cells, "carrier bump radius_cells")?;
            }
        }
        // one leaky slot per key byte
        if self.leaky_sample_index + 16 > self.samples_per_trace {
            return Err(Error::invalid(format!(
                "leaky slots {}..{} do not fit in {} samples",
                self.leaky_sample_index,
                self.leaky_sample_index + 16,
                self.samples_per_trace
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.geometry.grid_resolution
    }

    /// The same chip scanned at resolution `n`: field features keep their
    /// physical position and size.
    pub fn with_grid(&self, n: usize) -> Self {
        let old = self.grid() as f64;
        let s = n as f64 / old;
        let map = |(x, y): (f64, f64)| ((x + 0.5) * s - 0.5, (y + 0.5) * s - 0.5);
        let mut out = self.clone();
        out.geometry.grid_resolution = n;
        for b in &mut out.field.bumps {
            b.center = map(b.center);
            b.radius_cells *= s;
        }
        if let Some(c) = &mut out.carrier {
            for b in &mut c.bumps {
                b.center = map(b.center);
                b.radius_cells *= s;
            }
        }
        out
    }

    /// A single-cell chip whose leaky samples have exactly `snr`.
    pub fn uniform(snr: f64, seed: u64) -> Self {
        Self {
            name: format!("uniform-{snr}"),
            geometry: ChipGeometry {
                side_length_mm: 0.3,
                grid_resolution: 1,
            },
            field: LeakageField {
                bumps: Vec::new(),
                roughness_sigma: 0.0,
                floor_snr: snr,
                snr_scale: 1.0,
            },
            carrier: None,
            samples_per_trace: 24,
            leaky_sample_index: 4,
            signal_gain: 1.0,
            noise_sigma: 1.0,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_snr_scale(&self, scale: f64) -> Self {
        let mut out = self.clone();
        out.field.snr_scale = scale;
        out
    }

    pub fn from_json_str(text: &str, source_name: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    /// Looks up a shipped preset by name (`aes8bit`, `aes32bit`, `des`, `rsa`,
    /// `aes8bit_masked`, `two_bump`).
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name.trim_end_matches(".json") {
            "aes8bit" => include_str!("../scenarios/aes8bit.json"),
            "aes32bit" => include_str!("../scenarios/aes32bit.json"),
            "des" => include_str!("../scenarios/des.json"),
            "rsa" => include_str!("../scenarios/rsa.json"),
            "aes8bit_masked" => include_str!("../scenarios/aes8bit_masked.json"),
            "two_bump" => include_str!("../scenarios/two_bump.json"),
            other => return Err(Error::invalid(format!("unknown preset {other:?}"))),
        };
        Self::from_json_str(text, name)
    }

    pub const PRESETS: [&'static str; 6] = ["aes8bit", "aes32bit", "des", "rsa", "aes8bit_masked", "two_bump"];
}

/// A configured device with its per-seed fields realized.
#[derive(Clone, Debug)]
pub struct SimDevice {
    config: SimDeviceConfig,
    snr: Vec<f64>,
    /// Per-cell signal scale such that `VAR[gain * alpha * HW] = snr * sigma^2`.
    alpha: Vec<f64>,
    carrier: Vec<f64>,
}

fn log_normal_grid(seed: u64, purpose_tag: u8, n: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0; n * n];
    }
    let mut s = SeededStream::new(seed, stream_id(purpose_tag, n as u64));
    (0..n * n).map(|_| (sigma * s.standard_normal()).exp()).collect()
}

impl SimDevice {
    pub fn new(config: SimDeviceConfig) -> Result<Self> {
        config.validate()?;
        let n = config.grid();
        let f = &config.field;
        let rough = log_normal_grid(config.seed, purpose::FIELD_ROUGHNESS, n, f.roughness_sigma);
        let mut snr = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let (x, y) = (i as f64, j as f64);
                let sum: f64 = f.bumps.iter().map(|b| b.at(x, y)).sum();
                snr.push(f.snr_scale * sum.max(f.floor_snr) * rough[j * n + i]);
            }
        }
        let sigma2 = config.noise_sigma * config.noise_sigma;
        let alpha = snr
            .iter()
            .map(|s| (s * sigma2 / MODEL_VARIANCE).sqrt() / config.signal_gain)
            .collect();
        let carrier = match &config.carrier {
            None => vec![0.0; n * n],
            Some(c) => {
                let rough =
                    log_normal_grid(config.seed, purpose::CARRIER_ROUGHNESS, n, c.roughness_sigma);
                let mut out = Vec::with_capacity(n * n);
                for j in 0..n {
                    for i in 0..n {
                        let (x, y) = (i as f64, j as f64);
                        let level: f64 = c
                            .bumps
                            .iter()
                            .map(|b| {
                                let d2 = (x - b.center.0).powi(2) + (y - b.center.1).powi(2);
                                b.peak * (-d2 / (2.0 * b.radius_cells * b.radius_cells)).exp()
                            })
                            .sum::<f64>()
                            + c.base_level;
                        out.push(level * rough[j * n + i] * config.noise_sigma);
                    }
                }
                out
            }
        };
        Ok(Self {
            config,
            snr,
            alpha,
            carrier,
        })
    }

    pub fn config(&self) -> &SimDeviceConfig {
        &self.config
    }

    pub fn grid(&self) -> usize {
        self.config.grid()
    }

    fn index(&self, cell: Cell) -> Result<usize> {
        let n = self.grid();
        if cell.within(n) {
            Ok(cell.index(n))
        } else {
            Err(Error::OutOfGrid { cell, n })
        }
    }

    /// Ground-truth `VAR[signal] / VAR[noise]` at the cell's leaky samples.
    pub fn true_snr_at(&self, cell: Cell) -> Result<f64> {
        Ok(self.snr[self.index(cell)?])
    }

    pub fn alpha_at(&self, cell: Cell) -> Result<f64> {
        Ok(self.alpha[self.index(cell)?])
    }

    /// Row-major (rows along y) ground-truth SNR grid.
    pub fn snr_grid(&self) -> &[f64] {
        &self.snr
    }

    pub fn carrier_grid(&self) -> &[f64] {
        &self.carrier
    }

    /// Cell with the highest ground-truth SNR; ties go to the lowest (i, j).
    pub fn global_max(&self) -> (Cell, f64) {
        let n = self.grid();
        let mut best = (Cell::new(0, 0), f64::NEG_INFINITY);
        for i in 0..n {
            for j in 0..n {
                let v = self.snr[j * n + i];
                if v > best.1 {
                    best = (Cell::new(i, j), v);
                }
            }
        }
        best
    }

    pub fn capture_trace(
        &self,
        cell: Cell,
        plaintext: &[u8; 16],
        key: &[u8; 16],
        noise: &mut NoiseStream,
    ) -> Result<Trace> {
        let idx = self.index(cell)?;
        let cfg = &self.config;
        let offset = self.carrier[idx];
        let mut samples: Vec<f32> = (0..cfg.samples_per_trace)
            .map(|_| (offset + noise.sample(cfg.noise_sigma)) as f32)
            .collect();
        let scale = cfg.signal_gain * self.alpha[idx];
        for b in 0..16 {
            let s = &mut samples[cfg.leaky_sample_index + b];
            let signal = scale * leakage_model(plaintext[b], key[b]) as f64;
            *s = (*s as f64 + signal) as f32;
        }
        Ok(Trace {
            samples,
            plaintext: *plaintext,
            key: *key,
            cell,
        })
    }
}

pub fn true_snr_at(config: &SimDeviceConfig, cell: Cell) -> Result<f64> {
    SimDevice::new(config.clone())?.true_snr_at(cell)
}

pub fn capture_trace(
    config: &SimDeviceConfig,
    cell: Cell,
    plaintext: &[u8; 16],
    key: &[u8; 16],
    noise: &mut NoiseStream,
) -> Result<Trace> {
    SimDevice::new(config.clone())?.capture_trace(cell, plaintext, key, noise)
}
