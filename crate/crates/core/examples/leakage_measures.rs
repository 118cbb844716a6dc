//! Amplitude, TVLA and SNR at the strongest cell of a preset and at a quiet
//! corner. Amplitude follows the carrier, not the key-dependent signal.

use scniffer::device::{SimDevice, SimDeviceConfig};
use scniffer::instrument::SimBackend;
use scniffer::measures::MeasureKind;
use scniffer::search::{CellMeter, LeakageProbe};
use scniffer::Cell;

fn main() -> scniffer::Result<()> {
    let dev = SimDevice::new(SimDeviceConfig::preset("aes8bit")?)?;
    let (hot, peak) = dev.global_max();
    let carrier_peak = Cell::new(6, 6);
    let quiet = Cell::new(1, 28);

    println!("{:>10} {:>10} {:>12} {:>10} {:>10}", "cell", "true snr", "amplitude", "max|t|", "snr");
    for cell in [hot, carrier_peak, quiet] {
        let mut row = format!("{:>10} {:>10.4}", format!("({},{})", cell.i, cell.j), dev.true_snr_at(cell)?);
        for kind in [MeasureKind::Amplitude, MeasureKind::Tvla, MeasureKind::Snr] {
            let mut meter = CellMeter::new(SimBackend::new(dev.clone()), kind, 7);
            let s = meter.measure(cell)?;
            let flag = if s.leak_detected { "*" } else { " " };
            row += &format!(" {:>10.3}{flag}", s.value);
        }
        println!("{row}");
    }
    println!("global max snr {peak:.3}; * marks |t| above the detection threshold");
    Ok(())
}
