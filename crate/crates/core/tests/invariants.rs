//! Property tests for invariants that cut across modules.

use proptest::prelude::*;

use scniffer::attack::{cema, checkpoints_by_stride, mtd, pearson, CemaAccumulator};
use scniffer::budget::{crossover_tvla, n_exh, n_scn_snr, n_scn_tvla, BudgetConstants};
use scniffer::crypto::{leakage_model, InputSet, TVLA_KEY};
use scniffer::device::{SimDevice, SimDeviceConfig};
use scniffer::instrument::{Instrument, SimBackend};
use scniffer::measures::{welch_t, MeasureKind};
use scniffer::search::{self, LeakageProbe, SearchParams};
use scniffer::stats::{average_ranks, spearman};
use scniffer::{Cell, Trace};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn group() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 3..60)
}

proptest! {
    #[test]
    fn welch_is_antisymmetric_and_shift_scale_invariant(a in group(), b in group(), c in -1e3f64..1e3, k in 0.01f64..100.0) {
        prop_assume!(welch_t(&a, &b).is_ok());
        let t = welch_t(&a, &b).unwrap();
        prop_assert!(close(welch_t(&b, &a).unwrap(), -t, 1e-9));
        let shift = |g: &[f64]| g.iter().map(|v| k * v + c).collect::<Vec<_>>();
        prop_assert!(close(welch_t(&shift(&a), &shift(&b)).unwrap(), t, 1e-6));
    }

    #[test]
    fn pearson_bounded_symmetric_affine_invariant(
        pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..80),
        k in 0.1f64..10.0,
        c in -100.0f64..100.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(pearson(&x, &y).is_ok());
        let r = pearson(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert!(close(pearson(&y, &x).unwrap(), r, 1e-12));
        let xs: Vec<f64> = x.iter().map(|v| k * v + c).collect();
        prop_assert!(close(pearson(&xs, &y).unwrap(), r, 1e-9));
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        prop_assert!(close(pearson(&x, &neg).unwrap(), -r, 1e-12));
    }

    #[test]
    fn spearman_bounded_and_monotone_invariant(x in prop::collection::vec(-10.0f64..10.0, 3..40)) {
        let ranks = average_ranks(&x);
        let n = x.len() as f64;
        prop_assert!(close(ranks.iter().sum::<f64>(), n * (n + 1.0) / 2.0, 1e-12));
        let y: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
        if let Ok(r) = spearman(&x, &y) {
            prop_assert!(close(r, 1.0, 1e-12));
            let z: Vec<f64> = x.iter().map(|v| -v.exp()).collect();
            prop_assert!(close(spearman(&x, &z).unwrap(), -1.0, 1e-12));
        }
    }

    /// The running-sum correlations agree with brute-force Pearson per sample.
    #[test]
    fn cema_accumulator_matches_brute_force(seed in any::<u64>(), count in 5usize..60, byte in 0usize..16, offset in -1e3f32..1e3) {
        let dev = SimDevice::new(SimDeviceConfig::uniform(0.5, 0)).unwrap();
        let mut b = SimBackend::new(dev).with_noise_seed(seed);
        b.move_to(Cell::new(0, 0)).unwrap();
        let mut traces = b.capture_batch(count, &InputSet::random(seed, count, TVLA_KEY)).unwrap();
        traces.iter_mut().for_each(|t| t.samples.iter_mut().for_each(|s| *s += offset));
        let mut acc = CemaAccumulator::new(byte, 24).unwrap();
        traces.iter().for_each(|t| acc.push(t).unwrap());
        let got = acc.max_abs_correlations();
        for k in [0u8, 0x5a, TVLA_KEY[byte], 0xff] {
            let h: Vec<f64> = traces.iter().map(|t| leakage_model(t.plaintext[byte], k) as f64).collect();
            let want = (0..24)
                .filter_map(|s| {
                    let x: Vec<f64> = traces.iter().map(|t| t.samples[s] as f64).collect();
                    pearson(&x, &h).ok()
                })
                .fold(0.0f64, |m, r| m.max(r.abs()));
            prop_assert!((got[k as usize] - want).abs() < 1e-6, "k={k}: {} vs {want}", got[k as usize]);
        }
    }

    /// From the MTD on, the true key leads at every checkpoint, and not just
    /// before it.
    #[test]
    fn mtd_is_start_of_final_lead(seed in any::<u64>(), snr in 0.05f64..2.0) {
        let dev = SimDevice::new(SimDeviceConfig::uniform(snr, 0)).unwrap();
        let mut b = SimBackend::new(dev).with_noise_seed(seed);
        b.move_to(Cell::new(0, 0)).unwrap();
        let traces: Vec<Trace> = b.capture_batch(400, &InputSet::random(seed, 400, TVLA_KEY)).unwrap();
        let cps = checkpoints_by_stride(400, 20);
        let t = cema(&traces, 0, &cps).unwrap();
        match mtd(&t, Some(TVLA_KEY[0])).unwrap() {
            Some(m) => {
                let c0 = cps.iter().position(|&c| c == m).unwrap();
                prop_assert!((c0..cps.len()).all(|c| t.leads(c, TVLA_KEY[0])));
                prop_assert!(c0 == 0 || !t.leads(c0 - 1, TVLA_KEY[0]));
            }
            None => prop_assert!(!t.leads(cps.len() - 1, TVLA_KEY[0])),
        }
    }

    #[test]
    fn search_report_is_consistent(seed in any::<u64>(), n in 3usize..25, m in 1usize..4, step in 0.3f64..4.0) {
        prop_assume!(m <= n);
        let dev = SimDevice::new(SimDeviceConfig::preset("aes8bit").unwrap().with_grid(n)).unwrap();
        let mut params = SearchParams::for_grid(n, MeasureKind::Amplitude);
        params.initial_grid_size = m;
        params.step_size_cells = step;
        let mut meter = search::CellMeter::new(SimBackend::new(dev), MeasureKind::Amplitude, seed);
        prop_assert_eq!(meter.grid(), n);
        let r = search::run(&mut meter, &params).unwrap();
        prop_assert_eq!(r.measurements_made, r.trajectory.len());
        prop_assert!(r.measurements_at_best >= 1 && r.measurements_at_best <= r.measurements_made);
        prop_assert!(r.trajectory.iter().all(|p| p.cell.within(n) && p.leakage <= r.best_leakage));
        prop_assert_eq!(r.trajectory[r.measurements_at_best - 1].cell, r.best_cell);
        // each cell is measured once
        let mut cells: Vec<Cell> = r.trajectory.iter().map(|p| p.cell).collect();
        cells.sort();
        cells.dedup();
        prop_assert_eq!(cells.len(), r.measurements_made);
        prop_assert_eq!(r.traces_used, 10 * r.measurements_made);
    }

    #[test]
    fn device_alpha_reproduces_snr(seed in any::<u64>(), n in 1usize..40, scale in 0.01f64..5.0) {
        let cfg = SimDeviceConfig::preset("des").unwrap().with_grid(n).with_seed(seed).with_snr_scale(scale);
        let dev = SimDevice::new(cfg.clone()).unwrap();
        for j in 0..n {
            for i in 0..n {
                let c = Cell::new(i, j);
                let s = dev.true_snr_at(c).unwrap();
                prop_assert!(s > 0.0 && s.is_finite());
                let a = dev.alpha_at(c).unwrap() * cfg.signal_gain;
                prop_assert!(close(2.0 * a * a / (cfg.noise_sigma * cfg.noise_sigma), s, 1e-12));
            }
        }
    }

    #[test]
    fn moves_land_inside_the_chip(n in 1usize..60, i in 0usize..60, j in 0usize..60, ox in -50.0f64..200.0, oy in -50.0f64..200.0) {
        prop_assume!(i < n && j < n);
        let cfg = SimDeviceConfig::preset("aes8bit").unwrap().with_grid(n);
        let side = cfg.geometry.side_length_mm;
        let mut b = SimBackend::new(SimDevice::new(cfg).unwrap()).with_origin((ox, oy));
        let ack = b.move_to(Cell::new(i, j)).unwrap();
        let (x, y) = ack.position_mm;
        prop_assert!(x > ox && x < ox + side && y > oy && y < oy + side);
        prop_assert!((ack.reachable_mm.0 - x).abs() <= 0.05 + 1e-9);
    }

    #[test]
    fn budgets_order_and_cross(n in 2usize..50, lo in 1e-4f64..1.0, k1 in 0.1f64..50.0, c0 in 1.0f64..100.0, extra in 0.0f64..200.0) {
        let c = BudgetConstants::new(k1, k1, c0, c0 + extra).unwrap();
        let hi = lo * 1.5;
        prop_assert!(n_scn_tvla(n, lo, &c).unwrap() > n_scn_tvla(n, hi, &c).unwrap());
        prop_assert!(n_scn_snr(n, lo, &c).unwrap() >= n_scn_tvla(n, lo, &c).unwrap());
        prop_assert!(n_exh(n, lo, &c).unwrap() / n_scn_tvla(n, lo, &c).unwrap() < (n * n) as f64);
        let s = crossover_tvla(n, &c).unwrap();
        prop_assert!(close(n_exh(n, s, &c).unwrap(), n_scn_tvla(n, s, &c).unwrap(), 1e-9));
        // below the crossover the exhaustive scan is the more expensive one
        prop_assert!(n_exh(n, 0.5 * s, &c).unwrap() > n_scn_tvla(n, 0.5 * s, &c).unwrap());
    }
}
