//! Fits the budget constants from simulator sweeps: TVLA and SNR
//! measurement cost and attack MTD against true SNR.

use scniffer::budget::{n_exh, n_scn_tvla, Series};
use scniffer::calibrate::{calibrate_and_fit, CalibrationPlan};

fn main() -> scniffer::Result<()> {
    let plan = CalibrationPlan {
        seeds: 4,
        ..CalibrationPlan::default()
    };
    let fit = calibrate_and_fit(&plan)?;
    let inp = &fit.inputs;
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "snr", "byte MTD", "key MTD", "TVLA", "SNR est");
    let at = |v: &Series, s: f64| v.iter().find(|p| p.0 == s).map(|p| p.1);
    for &s in &plan.snrs {
        println!(
            "{s:>6} {:>10} {:>10} {:>10} {:>10}",
            fmt(at(&inp.byte_mtd, s)),
            fmt(at(&inp.key_mtd, s)),
            fmt(at(&inp.tvla_cost, s)),
            fmt(at(&inp.snr_cost, s))
        );
    }
    let c = fit.constants;
    println!("k0 {:.2}  k1 {:.2}  c0 {:.1}  c1 {:.1}", c.k0, c.k1, c.c0, c.c1);
    println!("log-space rms of the four fits: {:.2?}", fit.log_rms);
    println!(
        "N=10, snr 0.01: exhaustive / tvla-guided = {:.0}",
        n_exh(10, 0.01, &c)? / n_scn_tvla(10, 0.01, &c)?
    );
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.0}"))
}
