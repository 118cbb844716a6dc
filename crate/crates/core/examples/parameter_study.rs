//! Step size and initial grid size on a field with a broad strong bump and
//! a narrow weak one. Small steps get trapped on whichever slope they start
//! on; the default 2.8-cell step hops over the weak bump.

use rayon::prelude::*;
use scniffer::device::{SimDevice, SimDeviceConfig};
use scniffer::instrument::SimBackend;
use scniffer::measures::MeasureKind;
use scniffer::search::{self, CellMeter, SearchParams};
use scniffer::stats::median;

const SEEDS: u64 = 40;

fn main() -> scniffer::Result<()> {
    let cfg = SimDeviceConfig::preset("two_bump")?;
    let (big, small) = (cfg.field.bumps[0].center, cfg.field.bumps[1].center);
    let dev = SimDevice::new(cfg)?;
    let gmax = dev.global_max().1;

    println!("{:>2} {:>5} {:>9} {:>9} {:>10}", "M", "step", "at small", "near max", "m to best");
    for m in [1, 2, 3] {
        for step in [0.5, 0.9, 1.5, 2.8, 3.8] {
            let mut p = SearchParams::for_grid(dev.grid(), MeasureKind::Snr);
            p.initial_grid_size = m;
            p.step_size_cells = step;
            let runs: Vec<_> = (0..SEEDS)
                .into_par_iter()
                .map(|seed| {
                    let mut meter = CellMeter::new(SimBackend::new(dev.clone()).with_noise_seed(seed), p.measure, seed);
                    search::run(&mut meter, &p).unwrap()
                })
                .collect();
            let stuck = runs.iter().filter(|r| r.best_cell.distance(small.0, small.1) < r.best_cell.distance(big.0, big.1)).count();
            let near = runs.iter().filter(|r| dev.true_snr_at(r.best_cell).unwrap() >= 0.9 * gmax).count();
            let mb = median(&runs.iter().map(|r| r.measurements_at_best as f64).collect::<Vec<_>>())?;
            println!("{m:>2} {step:>5} {stuck:>8}/{SEEDS} {near:>8}/{SEEDS} {mb:>10}");
        }
    }
    Ok(())
}
