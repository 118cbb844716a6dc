//! G-code a 3 x 3 raster scan sends to the gantry. Captures still come from
//! the simulator.

use std::io::Write;

use scniffer::crypto::{InputSet, TVLA_KEY};
use scniffer::device::{SimDevice, SimDeviceConfig};
use scniffer::instrument::{GcodeBackend, GcodeConfig, Instrument, SimBackend};
use scniffer::measures::amplitude;
use scniffer::Cell;

fn main() -> scniffer::Result<()> {
    let dev = SimDevice::new(SimDeviceConfig::preset("aes8bit")?.with_grid(3))?;
    let mut g = GcodeBackend::new(Vec::new(), SimBackend::new(dev), GcodeConfig::new((100.0, 80.0)));
    g.home()?;
    for j in 0..3 {
        // serpentine, so the probe never travels back across the chip
        let row: Vec<usize> = if j % 2 == 0 { (0..3).collect() } else { (0..3).rev().collect() };
        for i in row {
            let ack = g.move_to(Cell::new(i, j))?;
            let traces = g.capture_batch(10, &InputSet::random(1, 10, TVLA_KEY))?;
            eprintln!(
                "({i},{j}) at {:?} mm{} amplitude {:.2}",
                ack.position_mm,
                if ack.quantized { " (off the 0.1 mm lattice)" } else { "" },
                amplitude(&traces)?.value
            );
        }
    }
    std::io::stdout().write_all(&g.into_sink())?;
    Ok(())
}
