//! One two-phase gradient search, with its path.

use scniffer::device::{SimDevice, SimDeviceConfig};
use scniffer::instrument::SimBackend;
use scniffer::measures::MeasureKind;
use scniffer::search::{self, CellMeter, SearchParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dev = SimDevice::new(SimDeviceConfig::preset("aes8bit")?)?;
    let params = SearchParams::for_grid(dev.grid(), MeasureKind::Snr);
    let mut meter = CellMeter::new(SimBackend::new(dev.clone()), params.measure, 3);
    let r = search::run(&mut meter, &params)?;

    for (k, p) in r.trajectory.iter().enumerate() {
        println!(
            "{:>3} {:?} ({:>2},{:>2}) measured {:.3} true {:.3}",
            k + 1,
            p.phase,
            p.cell.i,
            p.cell.j,
            p.leakage,
            dev.true_snr_at(p.cell)?
        );
    }
    let (g, gmax) = dev.global_max();
    println!(
        "stopped ({:?}) after {} measurements / {} traces; best ({},{}) found at measurement {}",
        r.stop_reason, r.measurements_made, r.traces_used, r.best_cell.i, r.best_cell.j, r.measurements_at_best
    );
    println!(
        "true snr there {:.3}; global max {:.3} at ({},{})",
        dev.true_snr_at(r.best_cell)?,
        gmax,
        g.i,
        g.j
    );
    Ok(())
}
