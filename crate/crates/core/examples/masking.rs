//! A masked implementation modelled as a tenfold SNR reduction: the search
//! still finds the hot spot, the attack just needs more traces.

use scniffer::cli::{cmd_sniff, SniffOptions};
use scniffer::device::SimDeviceConfig;
use scniffer::measures::MeasureKind;

fn main() -> scniffer::Result<()> {
    for name in ["aes8bit", "aes8bit_masked"] {
        let sc = SimDeviceConfig::preset(name)?;
        let mut o = SniffOptions::new(sc.grid(), MeasureKind::Snr, 1);
        o.stride = 10;
        let r = cmd_sniff(&sc, &o)?;
        println!(
            "{name:>15}: best ({},{}) at measurement {}, snr {:.3} of max {:.3}; key MTD {:?}, total {} traces",
            r.search.best_cell.i,
            r.search.best_cell.j,
            r.search.measurements_at_best,
            r.true_snr_at_best,
            r.global_max_snr,
            r.key_mtd,
            r.total_traces
        );
    }
    Ok(())
}
