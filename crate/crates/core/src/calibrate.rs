//! Measurement-cost and MTD sweeps on uniform simulated cells, used to fit
//! the budget constants.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{attack_until_disclosed, AttackBudget, IncrementalAttack};
use crate::budget::{fit_constants, FitInputs, FitReport};
use crate::crypto::{generate_tvla_sets, InputSet, TVLA_FIXED_PLAINTEXT, TVLA_KEY};
use crate::device::{SimDevice, SimDeviceConfig};
use crate::error::Result;
use crate::instrument::{Instrument, SimBackend};
use crate::measures::{snr, TvlaAccumulator, TVLA_THRESHOLD};
use crate::rng::mix64;
use crate::stats::median;
use crate::trace::{Cell, Trace};

/// Trace counts at which a measurement is re-evaluated: 10, then +10%.
fn count_grid(cap: usize) -> Vec<usize> {
    let mut out = vec![10];
    while *out.last().unwrap() < cap {
        let n = *out.last().unwrap();
        out.push(((n as f64 * 1.1).ceil() as usize).min(cap));
    }
    out
}

/// Smallest grid count `n` such that `ok` holds at every grid count in
/// `[n, horizon * n]`; `None` if that cannot be established within the grid.
fn persistent_from(grid: &[usize], horizon: usize, mut ok: impl FnMut(usize) -> Result<bool>) -> Result<Option<usize>> {
    let mut start: Option<usize> = None;
    for &n in grid {
        if ok(n)? {
            let s = *start.get_or_insert(n);
            if n >= horizon * s {
                return Ok(Some(s));
            }
        } else {
            start = None;
        }
    }
    Ok(None)
}

const HORIZON: usize = 4;

fn backend(snr: f64, seed: u64) -> Result<SimBackend> {
    let mut b = SimBackend::new(SimDevice::new(SimDeviceConfig::uniform(snr, 0))?).with_noise_seed(seed);
    b.move_to(Cell::new(0, 0))?;
    Ok(b)
}

/// Total traces (both groups) after which fixed-vs-random max |t| stays
/// above the detection threshold, at a cell of the given SNR.
pub fn tvla_traces_needed(snr: f64, seed: u64, cap: usize) -> Result<Option<usize>> {
    let mut dev = backend(snr, seed)?;
    let group_cap = cap / 2;
    let (fixed, random) = generate_tvla_sets(mix64(seed), group_cap.max(2), TVLA_KEY, TVLA_FIXED_PLAINTEXT)?;
    let a = dev.capture_batch(fixed.len(), &fixed)?;
    let b = dev.capture_batch(random.len(), &random)?;
    let mut acc = TvlaAccumulator::new(a[0].len());
    let mut fed = 0;
    let found = persistent_from(&count_grid(group_cap), HORIZON, |n| {
        while fed < n {
            acc.push_fixed(&a[fed]);
            acc.push_random(&b[fed]);
            fed += 1;
        }
        Ok(acc.max_abs_t().is_some_and(|t| t > TVLA_THRESHOLD))
    })?;
    Ok(found.map(|g| 2 * g))
}

/// Traces after which the SNR estimate stays within `tolerance` (relative)
/// of the true SNR.
pub fn snr_traces_needed(snr_true: f64, seed: u64, cap: usize, tolerance: f64) -> Result<Option<usize>> {
    let mut dev = backend(snr_true, seed)?;
    let inputs = InputSet::random(mix64(seed), cap, TVLA_KEY);
    let traces: Vec<Trace> = dev.capture_batch(cap, &inputs)?;
    persistent_from(&count_grid(cap), HORIZON, |n| {
        let est = snr(&traces[..n], &TVLA_KEY, 0)?.value;
        Ok((est / snr_true - 1.0).abs() <= tolerance)
    })
}

/// Per-byte (byte 0) and whole-key MTD at a uniform cell of the given SNR.
pub fn mtd_at_snr(snr: f64, seed: u64, cap: usize) -> Result<(Option<usize>, Option<usize>)> {
    let mut dev = backend(snr, seed)?;
    let mut attack = IncrementalAttack::new(24, crate::attack::DEFAULT_STRIDE)?;
    let m = attack_until_disclosed(
        &mut dev,
        Cell::new(0, 0),
        &mut attack,
        &TVLA_KEY,
        AttackBudget::new(crate::attack::DEFAULT_STRIDE, cap),
        seed,
    )?;
    let key = m.iter().try_fold(0, |w, b| b.map(|b| w.max(b)));
    Ok((m[0], key))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    pub snrs: Vec<f64>,
    pub seeds: usize,
    /// Caps expressed as `traces * snr`, so they scale with difficulty.
    pub measure_cap_snr_traces: f64,
    pub attack_cap_snr_traces: f64,
}

impl Default for CalibrationPlan {
    fn default() -> Self {
        Self {
            snrs: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0],
            seeds: 8,
            measure_cap_snr_traces: 2000.0,
            attack_cap_snr_traces: 1500.0,
        }
    }
}

/// Median over seeds; `None` counts as larger than every value.
fn median_opt(values: &[Option<usize>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().map(|v| v.map_or(f64::INFINITY, |v| v as f64)).collect();
    median(&v).ok().filter(|m| m.is_finite())
}

/// Runs the sweeps and returns the medians as fit inputs.
pub fn calibrate(plan: &CalibrationPlan) -> Result<FitInputs> {
    let rows: Vec<(f64, [Option<f64>; 4])> = plan
        .snrs
        .par_iter()
        .map(|&s| {
            let measure_cap = (plan.measure_cap_snr_traces / s).ceil() as usize;
            let attack_cap = (plan.attack_cap_snr_traces / s).ceil() as usize;
            let runs: Vec<[Option<usize>; 4]> = (0..plan.seeds as u64)
                .into_par_iter()
                .map(|k| {
                    let seed = mix64(k ^ s.to_bits());
                    let t = tvla_traces_needed(s, seed, measure_cap)?;
                    let r = snr_traces_needed(s, seed ^ 1, measure_cap, 0.2)?;
                    let (b, key) = mtd_at_snr(s, seed ^ 2, attack_cap)?;
                    Ok([b, key, t, r])
                })
                .collect::<Result<_>>()?;
            let col = |c: usize| median_opt(&runs.iter().map(|r| r[c]).collect::<Vec<_>>());
            Ok((s, [col(0), col(1), col(2), col(3)]))
        })
        .collect::<Result<_>>()?;
    let pick = |c: usize| rows.iter().filter_map(|(s, v)| v[c].map(|v| (*s, v))).collect();
    Ok(FitInputs {
        byte_mtd: pick(0),
        key_mtd: pick(1),
        tvla_cost: pick(2),
        snr_cost: pick(3),
    })
}

pub fn calibrate_and_fit(plan: &CalibrationPlan) -> Result<FitReport> {
    fit_constants(&calibrate(plan)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_grows_to_cap() {
        let g = count_grid(100);
        assert_eq!(g[0], 10);
        assert_eq!(*g.last().unwrap(), 100);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn persistence_resets_on_failure() {
        let grid = [1, 2, 3, 4, 5, 6, 8, 12, 16, 24];
        let ok = |n: usize| Ok(n != 4 && n >= 2);
        assert_eq!(persistent_from(&grid, 2, ok).unwrap(), Some(5));
        assert_eq!(persistent_from(&grid, 4, |_| Ok(false)).unwrap(), None);
        // never reaches 4 x start within the grid
        assert_eq!(persistent_from(&grid, 4, |n| Ok(n >= 8)).unwrap(), None);
    }

    #[test]
    fn strong_cells_are_cheap() {
        let t = tvla_traces_needed(2.0, 1, 4000).unwrap().unwrap();
        assert!(t < 200, "tvla {t}");
        let r = snr_traces_needed(2.0, 1, 4000, 0.2).unwrap().unwrap();
        assert!(r < 1000, "snr {r}");
        let (b, k) = mtd_at_snr(2.0, 1, 2000).unwrap();
        assert!(b.unwrap() <= k.unwrap());
        assert!(k.unwrap() < 500);
    }
}
