//! Capture a batch, store it as a binary container plus JSON sidecar, read
//! it back.

use scniffer::crypto::{InputSet, TVLA_KEY};
use scniffer::device::{SimDevice, SimDeviceConfig};
use scniffer::instrument::{Instrument, SimBackend};
use scniffer::io::{read_container, write_container};
use scniffer::measures::snr;

fn main() -> scniffer::Result<()> {
    let dev = SimDevice::new(SimDeviceConfig::preset("aes8bit")?)?;
    let cell = dev.global_max().0;
    let mut inst = SimBackend::new(dev);
    inst.move_to(cell)?;
    let traces = inst.capture_batch(1000, &InputSet::random(5, 1000, TVLA_KEY))?;

    let dir = tempfile_dir();
    let path = dir.join("capture.emtr");
    write_container(&path, &traces, "sim", 5)?;
    let (back, sidecar) = read_container(&path)?;
    println!(
        "{} traces x {} samples at ({},{}), {} bytes on disk + sidecar {}",
        sidecar.trace_count,
        sidecar.samples_per_trace,
        sidecar.cell.i,
        sidecar.cell.j,
        std::fs::metadata(&path)?.len(),
        path.with_extension("json").display()
    );
    assert_eq!(back, traces);
    println!("snr from the stored traces: {:.3}", snr(&back, &TVLA_KEY, 0)?.value);
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join("scniffer-container");
    std::fs::create_dir_all(&d).unwrap();
    d
}
