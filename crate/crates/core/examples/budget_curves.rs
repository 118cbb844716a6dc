//! Trace budgets of search-then-attack against attacking every cell, from
//! fixed constants. See `calibration` for fitting the constants.

use scniffer::budget::{crossover_tvla, BudgetConstants, BudgetCurve};

fn main() -> scniffer::Result<()> {
    let c = BudgetConstants::new(2.15, 3.94, 18.6, 131.0)?;
    for n in [10, 30] {
        let curve = BudgetCurve::new(n, 1e-3, 1.0, 7, &c)?;
        println!("N = {n}");
        println!("{:>10} {:>14} {:>14} {:>14} {:>8}", "snr", "tvla-guided", "snr-guided", "exhaustive", "ratio");
        for k in 0..curve.snr_grid.len() {
            println!(
                "{:>10.4} {:>14.0} {:>14.0} {:>14.0} {:>8.1}",
                curve.snr_grid[k],
                curve.n_scn_tvla[k],
                curve.n_scn_snr[k],
                curve.n_exh[k],
                curve.n_exh[k] / curve.n_scn_tvla[k]
            );
        }
        if let Some(s) = crossover_tvla(n, &c) {
            println!("exhaustive is cheaper only above snr {s:.2}\n");
        }
    }
    Ok(())
}
