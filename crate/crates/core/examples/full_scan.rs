//! Exhaustive SNR map of a preset, written as CSV, 16-bit PGM and JSON.
//!
//!     cargo run --release --example full_scan -- [preset] [out-dir]

use std::path::PathBuf;

use scniffer::cli::{cmd_full_scan, load_scenario, write_full_scan, FullScanOptions, ScanMeasure};

fn main() -> scniffer::Result<()> {
    let mut args = std::env::args().skip(1);
    let scenario = load_scenario(&args.next().unwrap_or_else(|| "aes8bit".into()))?;
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("scniffer-full-scan"));

    let report = cmd_full_scan(&scenario, &FullScanOptions::new(ScanMeasure::Snr, 1))?;
    write_full_scan(&out, &report)?;

    let n = report.grid;
    // coarse ASCII preview, darkest to brightest
    let ramp = b" .:-=+*#%@";
    let max = report.values.iter().cloned().fold(0.0, f64::max);
    for j in (0..n).rev() {
        let line: String = (0..n)
            .map(|i| {
                let v = report.values[j * n + i] / max;
                ramp[((v * (ramp.len() - 1) as f64).round() as usize).min(ramp.len() - 1)] as char
            })
            .collect();
        println!("{line}");
    }
    println!(
        "{} cells, {} traces, best ({}, {}); written to {}",
        report.cells,
        report.total_traces,
        report.best_cell.i,
        report.best_cell.j,
        out.display()
    );
    Ok(())
}
