//! Correlation attack on all 16 key bytes at a strong and a weak cell.

use scniffer::attack::{attack_all_bytes, mtd};
use scniffer::crypto::{to_hex, InputSet, TVLA_KEY};
use scniffer::device::{SimDevice, SimDeviceConfig};
use scniffer::instrument::{Instrument, SimBackend};
use scniffer::io::trajectory_csv;
use scniffer::Cell;

fn main() -> scniffer::Result<()> {
    let dev = SimDevice::new(SimDeviceConfig::preset("aes8bit")?)?;
    let (hot, _) = dev.global_max();
    for cell in [hot, Cell::new(8, 21)] {
        let mut inst = SimBackend::new(dev.clone());
        inst.move_to(cell)?;
        let traces = inst.capture_batch(3000, &InputSet::random(11, 3000, TVLA_KEY))?;
        let r = attack_all_bytes(&traces, 10, &TVLA_KEY)?;
        println!("cell ({},{}) true snr {:.3}", cell.i, cell.j, dev.true_snr_at(cell)?);
        println!("  recovered {}", to_hex(&r.recovered_key));
        println!("  true      {}", to_hex(&TVLA_KEY));
        println!("  per-byte MTD {:?}", r.mtd);
        match r.key_mtd() {
            Some(m) => println!("  key disclosed after {m} traces"),
            None => println!("  key not disclosed within {} traces", r.traces_used),
        }
        // the correlation trajectory of byte 0, ready for plotting
        let t = &r.trajectories[0];
        let csv = trajectory_csv(t);
        println!("  byte 0 trajectory: {} checkpoints, {} csv bytes; mtd {:?}", t.checkpoints.len(), csv.len(), mtd(t, Some(TVLA_KEY[0]))?);
    }
    Ok(())
}
