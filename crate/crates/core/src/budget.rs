//! Trace budgets: gradient search followed by CEMA versus CEMA at every cell.
//!
//! ```text
//! n_scn_tvla = N c0 / snr + k1 / snr^2
//! n_scn_snr  = N c1 / snr + k1 / snr^2
//! n_exh      = N^2 k1 / snr^2
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::log_space;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetConstants {
    /// Per-byte MTD proportionality constant.
    pub k0: f64,
    /// Whole-key MTD proportionality constant, used by the budgets.
    pub k1: f64,
    /// TVLA measurement cost constant.
    pub c0: f64,
    /// SNR measurement cost constant.
    pub c1: f64,
}

impl BudgetConstants {
    pub fn new(k0: f64, k1: f64, c0: f64, c1: f64) -> Result<Self> {
        let c = Self { k0, k1, c0, c1 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k0", self.k0), ("k1", self.k1), ("c0", self.c0), ("c1", self.c1)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("budget constant {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

fn check(n: usize, snr: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("grid size must be at least 1"));
    }
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(Error::invalid(format!("snr must be positive and finite, got {snr}")));
    }
    Ok(())
}

pub fn n_scn_tvla(n: usize, snr: f64, c: &BudgetConstants) -> Result<f64> {
    check(n, snr)?;
    Ok(n as f64 * c.c0 / snr + c.k1 / (snr * snr))
}

pub fn n_scn_snr(n: usize, snr: f64, c: &BudgetConstants) -> Result<f64> {
    check(n, snr)?;
    Ok(n as f64 * c.c1 / snr + c.k1 / (snr * snr))
}

pub fn n_exh(n: usize, snr: f64, c: &BudgetConstants) -> Result<f64> {
    check(n, snr)?;
    let n = n as f64;
    Ok(n * n * c.k1 / (snr * snr))
}

/// The snr below which exhaustive CEMA costs more than TVLA-guided search.
///
/// Solves `N^2 k1 / s^2 = N c0 / s + k1 / s^2`; `None` for `N = 1`, where the
/// exhaustive scan is always cheaper.
pub fn crossover_tvla(n: usize, c: &BudgetConstants) -> Option<f64> {
    let nf = n as f64;
    (n > 1).then(|| (nf * nf - 1.0) * c.k1 / (nf * c.c0))
}

/// `(snr, value)` pairs for one fitted relation.
pub type Series = Vec<(f64, f64)>;

/// Raw measurements a fit is made from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitInputs {
    /// snr vs single key byte MTD.
    pub byte_mtd: Series,
    /// snr vs whole-key MTD; when empty, `k1 = k0`.
    #[serde(default)]
    pub key_mtd: Series,
    /// snr vs traces a TVLA measurement needs.
    pub tvla_cost: Series,
    /// snr vs traces an SNR measurement needs.
    pub snr_cost: Series,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub constants: BudgetConstants,
    /// RMS residual of each fit in natural-log units: k0, k1, c0, c1.
    pub log_rms: [f64; 4],
    pub inputs: FitInputs,
}

/// Least-squares constant `a` of `y = a x^slope` in log-log space with the
/// slope held fixed; also returns the RMS log residual.
pub fn fit_fixed_slope(points: &[(f64, f64)], slope: f64) -> Result<(f64, f64)> {
    if points.len() < 3 {
        return Err(Error::IllConditionedFit(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::IllConditionedFit("non-positive or non-finite point".into()));
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(0.0, f64::max);
    if hi / lo < 10.0 * (1.0 - 1e-12) {
        return Err(Error::IllConditionedFit(format!(
            "snr span [{lo}, {hi}] is less than a decade"
        )));
    }
    let resid: Vec<f64> = points.iter().map(|&(x, y)| y.ln() - slope * x.ln()).collect();
    let log_a = resid.iter().sum::<f64>() / resid.len() as f64;
    let rms = (resid.iter().map(|r| (r - log_a).powi(2)).sum::<f64>() / resid.len() as f64).sqrt();
    Ok((log_a.exp(), rms))
}

pub fn fit_constants(inputs: &FitInputs) -> Result<FitReport> {
    let (k0, r0) = fit_fixed_slope(&inputs.byte_mtd, -2.0)?;
    let (k1, r1) = if inputs.key_mtd.is_empty() {
        (k0, r0)
    } else {
        fit_fixed_slope(&inputs.key_mtd, -2.0)?
    };
    let (c0, r2) = fit_fixed_slope(&inputs.tvla_cost, -1.0)?;
    let (c1, r3) = fit_fixed_slope(&inputs.snr_cost, -1.0)?;
    Ok(FitReport {
        constants: BudgetConstants::new(k0, k1, c0, c1)?,
        log_rms: [r0, r1, r2, r3],
        inputs: inputs.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetCurve {
    pub grid_resolution: usize,
    pub constants: BudgetConstants,
    pub snr_grid: Vec<f64>,
    pub n_scn_tvla: Vec<f64>,
    pub n_scn_snr: Vec<f64>,
    pub n_exh: Vec<f64>,
    pub crossover_snr: Option<f64>,
}

impl BudgetCurve {
    pub fn new(n: usize, snr_lo: f64, snr_hi: f64, points: usize, c: &BudgetConstants) -> Result<Self> {
        c.validate()?;
        let snr_grid = log_space(snr_lo, snr_hi, points)?;
        let eval = |f: fn(usize, f64, &BudgetConstants) -> Result<f64>| {
            snr_grid.iter().map(|&s| f(n, s, c)).collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            grid_resolution: n,
            constants: *c,
            n_scn_tvla: eval(n_scn_tvla)?,
            n_scn_snr: eval(n_scn_snr)?,
            n_exh: eval(n_exh)?,
            crossover_snr: crossover_tvla(n, c),
            snr_grid,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("snr,n_scn_tvla,n_scn_snr,n_exh\n");
        for k in 0..self.snr_grid.len() {
            out += &format!(
                "{:e},{:e},{:e},{:e}\n",
                self.snr_grid[k], self.n_scn_tvla[k], self.n_scn_snr[k], self.n_exh[k]
            );
        }
        out
    }
}
