//! Correlation EM analysis on first-round S-box Hamming weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crypto::{leakage_model, to_hex};
use crate::error::{Error, Result};
use crate::trace::Trace;

/// Default spacing of correlation checkpoints, in traces.
pub const DEFAULT_STRIDE: usize = 50;

/// Sample Pearson correlation, accumulated in one pass with co-moments.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid("pearson inputs differ in length"));
    }
    if x.len() < 2 {
        return Err(Error::invalid("pearson needs at least 2 points"));
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (&a, &b)) in x.iter().zip(y).enumerate() {
        let n = (k + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedStatistic("pearson with a constant input"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Running sums for all 256 hypotheses of one key byte.
///
/// Samples are shifted by the first trace so that large common offsets do
/// not cancel catastrophically in the variance terms.
#[derive(Clone, Debug)]
pub struct CemaAccumulator {
    byte_index: usize,
    len: usize,
    count: usize,
    shift: Vec<f64>,
    sum_x: Vec<f64>,
    sum_xx: Vec<f64>,
    sum_h: [f64; 256],
    sum_hh: [f64; 256],
    /// `sum_hx[k * len + s]`
    sum_hx: Vec<f64>,
    x: Vec<f64>,
}

impl CemaAccumulator {
    pub fn new(byte_index: usize, samples_per_trace: usize) -> Result<Self> {
        if byte_index >= 16 {
            return Err(Error::invalid(format!("key byte index {byte_index} >= 16")));
        }
        let len = samples_per_trace;
        Ok(Self {
            byte_index,
            len,
            count: 0,
            shift: Vec::new(),
            sum_x: vec![0.0; len],
            sum_xx: vec![0.0; len],
            sum_h: [0.0; 256],
            sum_hh: [0.0; 256],
            sum_hx: vec![0.0; 256 * len],
            x: vec![0.0; len],
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, trace: &Trace) -> Result<()> {
        if trace.len() != self.len {
            return Err(Error::invalid("trace length differs from accumulator"));
        }
        if self.shift.is_empty() {
            self.shift = trace.samples.iter().map(|&v| v as f64).collect();
        }
        for s in 0..self.len {
            let v = trace.samples[s] as f64 - self.shift[s];
            self.x[s] = v;
            self.sum_x[s] += v;
            self.sum_xx[s] += v * v;
        }
        let p = trace.plaintext[self.byte_index];
        for k in 0..256 {
            let h = leakage_model(p, k as u8) as f64;
            self.sum_h[k] += h;
            self.sum_hh[k] += h * h;
            if h != 0.0 {
                let row = &mut self.sum_hx[k * self.len..(k + 1) * self.len];
                for (acc, &v) in row.iter_mut().zip(&self.x) {
                    *acc += h * v;
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Max over samples of |rho| per hypothesis; undefined correlations count as 0.
    pub fn max_abs_correlations(&self) -> Vec<f64> {
        let n = self.count as f64;
        let var_x: Vec<f64> = (0..self.len)
            .map(|s| n * self.sum_xx[s] - self.sum_x[s] * self.sum_x[s])
            .collect();
        (0..256)
            .map(|k| {
                let var_h = n * self.sum_hh[k] - self.sum_h[k] * self.sum_h[k];
                if var_h <= 0.0 {
                    return 0.0;
                }
                let row = &self.sum_hx[k * self.len..(k + 1) * self.len];
                (0..self.len)
                    .filter(|&s| var_x[s] > 0.0)
                    .map(|s| {
                        let cov = n * row[s] - self.sum_h[k] * self.sum_x[s];
                        (cov / (var_h * var_x[s]).sqrt()).abs().min(1.0)
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

/// Per-hypothesis max |rho| recorded at increasing trace counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTrajectory {
    pub byte_index: usize,
    pub checkpoints: Vec<usize>,
    /// `rho[c][k]`: hypothesis `k` at checkpoint `c`.
    pub rho: Vec<Vec<f64>>,
}

impl CorrelationTrajectory {
    fn new(byte_index: usize) -> Self {
        Self {
            byte_index,
            checkpoints: Vec::new(),
            rho: Vec::new(),
        }
    }

    fn record(&mut self, acc: &CemaAccumulator) {
        self.checkpoints.push(acc.count());
        self.rho.push(acc.max_abs_correlations());
    }

    /// Hypothesis with the highest correlation at checkpoint `c`; ties go to
    /// the lowest value.
    pub fn leader(&self, c: usize) -> u8 {
        let row = &self.rho[c];
        let mut best = 0;
        for k in 1..256 {
            if row[k] > row[best] {
                best = k;
            }
        }
        best as u8
    }

    /// `key` strictly out-correlates every other hypothesis at checkpoint `c`.
    pub fn leads(&self, c: usize, key: u8) -> bool {
        let row = &self.rho[c];
        let v = row[key as usize];
        row.iter().enumerate().all(|(k, &r)| k == key as usize || r < v)
    }

    /// Hypotheses ordered by decreasing correlation at checkpoint `c`.
    pub fn ranking(&self, c: usize) -> Vec<u8> {
        let row = &self.rho[c];
        let mut order: Vec<u8> = (0..=255).collect();
        order.sort_by(|&a, &b| row[b as usize].total_cmp(&row[a as usize]).then(a.cmp(&b)));
        order
    }
}

/// `stride, 2*stride, ...` up to `total`, always ending at `total`; counts
/// below 2 are dropped.
pub fn checkpoints_by_stride(total: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut out: Vec<usize> = (1..=total / stride).map(|k| k * stride).filter(|&c| c >= 2).collect();
    if total >= 2 && out.last() != Some(&total) {
        out.push(total);
    }
    out
}

/// Correlation trajectory for one key byte at the given checkpoints.
pub fn cema(traces: &[Trace], byte_index: usize, checkpoints: &[usize]) -> Result<CorrelationTrajectory> {
    if traces.len() < 2 {
        return Err(Error::invalid("cema needs at least 2 traces"));
    }
    if checkpoints.is_empty()
        || checkpoints[0] < 2
        || checkpoints.windows(2).any(|w| w[0] >= w[1])
        || *checkpoints.last().unwrap() > traces.len()
    {
        return Err(Error::invalid(
            "checkpoints must be strictly increasing within 2..=trace count",
        ));
    }
    let mut acc = CemaAccumulator::new(byte_index, traces[0].len())?;
    let mut traj = CorrelationTrajectory::new(byte_index);
    let mut next = 0;
    for t in traces {
        acc.push(t)?;
        if acc.count() == checkpoints[next] {
            traj.record(&acc);
            next += 1;
            if next == checkpoints.len() {
                break;
            }
        }
    }
    Ok(traj)
}

/// Smallest checkpoint from which the correct hypothesis stays strictly on
/// top through the last checkpoint; `None` when it never separates.
pub fn mtd(trajectory: &CorrelationTrajectory, correct: Option<u8>) -> Result<Option<usize>> {
    let key = correct.ok_or_else(|| Error::invalid("minimum traces to disclosure needs the true key"))?;
    if trajectory.checkpoints.is_empty() {
        return Err(Error::invalid("empty correlation trajectory"));
    }
    let mut from = None;
    for c in (0..trajectory.checkpoints.len()).rev() {
        if trajectory.leads(c, key) {
            from = Some(trajectory.checkpoints[c]);
        } else {
            break;
        }
    }
    Ok(from)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    #[serde(with = "hex_key")]
    pub recovered_key: [u8; 16],
    /// Per key byte; `None` means not disclosed within `traces_used`.
    pub mtd: Vec<Option<usize>>,
    pub traces_used: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trajectories: Vec<CorrelationTrajectory>,
}

impl AttackResult {
    /// Traces needed to disclose the whole key: the worst byte.
    pub fn key_mtd(&self) -> Option<usize> {
        self.mtd.iter().try_fold(0, |m, b| b.map(|b| m.max(b)))
    }

    pub fn disclosed(&self) -> bool {
        self.key_mtd().is_some()
    }
}

mod hex_key {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &[u8; 16], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::to_hex(k))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 16], D::Error> {
        let s = String::deserialize(d)?;
        crate::crypto::from_hex16(&s).map_err(serde::de::Error::custom)
    }
}

/// Attacks all 16 key bytes in parallel and scores them against `true_key`.
pub fn attack_all_bytes(traces: &[Trace], stride: usize, true_key: &[u8; 16]) -> Result<AttackResult> {
    let checkpoints = checkpoints_by_stride(traces.len(), stride);
    let trajectories: Vec<CorrelationTrajectory> = (0..16)
        .into_par_iter()
        .map(|b| cema(traces, b, &checkpoints))
        .collect::<Result<_>>()?;
    finish(trajectories, traces.len(), true_key)
}

pub(crate) fn finish(
    trajectories: Vec<CorrelationTrajectory>,
    traces_used: usize,
    true_key: &[u8; 16],
) -> Result<AttackResult> {
    let mut recovered_key = [0u8; 16];
    let mut mtds = Vec::with_capacity(16);
    for (b, t) in trajectories.iter().enumerate() {
        recovered_key[b] = t.leader(t.checkpoints.len() - 1);
        mtds.push(mtd(t, Some(true_key[b]))?);
    }
    Ok(AttackResult {
        recovered_key,
        mtd: mtds,
        traces_used,
        trajectories,
    })
}

/// Attack whose traces arrive in batches, with every tracked byte's
/// accumulator fed as they come; checkpoints are recorded every `stride`
/// traces.
pub struct IncrementalAttack {
    accs: Vec<CemaAccumulator>,
    trajectories: Vec<CorrelationTrajectory>,
    stride: usize,
}

impl IncrementalAttack {
    pub fn new(samples_per_trace: usize, stride: usize) -> Result<Self> {
        Self::for_bytes(samples_per_trace, stride, &(0..16).collect::<Vec<_>>())
    }

    pub fn for_bytes(samples_per_trace: usize, stride: usize, bytes: &[usize]) -> Result<Self> {
        if stride < 2 {
            return Err(Error::invalid("checkpoint stride must be at least 2"));
        }
        if bytes.is_empty() {
            return Err(Error::invalid("no key bytes to attack"));
        }
        Ok(Self {
            accs: bytes
                .iter()
                .map(|&b| CemaAccumulator::new(b, samples_per_trace))
                .collect::<Result<_>>()?,
            trajectories: bytes.iter().map(|&b| CorrelationTrajectory::new(b)).collect(),
            stride,
        })
    }

    pub fn count(&self) -> usize {
        self.accs[0].count()
    }

    pub fn bytes(&self) -> Vec<usize> {
        self.accs.iter().map(|a| a.byte_index).collect()
    }

    pub fn push_batch(&mut self, traces: &[Trace]) -> Result<()> {
        let stride = self.stride;
        self.accs
            .par_iter_mut()
            .zip(self.trajectories.par_iter_mut())
            .try_for_each(|(acc, traj)| {
                for t in traces {
                    acc.push(t)?;
                    if acc.count() % stride == 0 {
                        traj.record(acc);
                    }
                }
                Ok(())
            })
    }

    /// MTD of each tracked byte given the checkpoints recorded so far.
    pub fn mtd(&self, true_key: &[u8; 16]) -> Result<Vec<Option<usize>>> {
        self.trajectories
            .iter()
            .map(|t| {
                if t.checkpoints.is_empty() {
                    Ok(None)
                } else {
                    mtd(t, Some(true_key[t.byte_index]))
                }
            })
            .collect()
    }

    /// Records a final checkpoint and scores the attack; requires all 16
    /// bytes to be tracked.
    pub fn finish(mut self, true_key: &[u8; 16]) -> Result<AttackResult> {
        if self.accs.len() != 16 || self.accs.iter().enumerate().any(|(k, a)| a.byte_index != k) {
            return Err(Error::invalid("a full attack result needs all 16 key bytes"));
        }
        let n = self.count();
        if n < 2 {
            return Err(Error::invalid("cema needs at least 2 traces"));
        }
        for (acc, traj) in self.accs.iter().zip(self.trajectories.iter_mut()) {
            if traj.checkpoints.last() != Some(&n) {
                traj.record(acc);
            }
        }
        finish(self.trajectories, n, true_key)
    }
}

/// Stop rule for [`attack_until_disclosed`]: every tracked byte is
/// persistently top-ranked and at least `margin` times the worst MTD has
/// been captured, or the cap is reached.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackBudget {
    pub stride: usize,
    pub cap: usize,
    pub margin: f64,
}

impl AttackBudget {
    pub fn new(stride: usize, cap: usize) -> Self {
        Self {
            stride,
            cap,
            margin: 2.0,
        }
    }
}

/// Moves to `cell` and captures CEMA traces in stride-sized batches of
/// random plaintexts until the budget's stop rule fires.
pub fn attack_until_disclosed<I: crate::instrument::Instrument + ?Sized>(
    instrument: &mut I,
    cell: crate::trace::Cell,
    attack: &mut IncrementalAttack,
    key: &[u8; 16],
    budget: AttackBudget,
    seed: u64,
) -> Result<Vec<Option<usize>>> {
    if budget.cap < 2 {
        return Err(Error::invalid("attack cap must be at least 2 traces"));
    }
    instrument.move_to(cell)?;
    let mut batch = 0u64;
    loop {
        let have = attack.count();
        if have >= budget.cap {
            break;
        }
        let take = budget.stride.min(budget.cap - have);
        let inputs = crate::crypto::InputSet::random(crate::rng::mix64(seed ^ crate::rng::mix64(batch)), take, *key);
        batch += 1;
        let traces = instrument.capture_batch(take, &inputs)?;
        attack.push_batch(&traces)?;
        let m = attack.mtd(key)?;
        if let Some(worst) = m.iter().try_fold(0, |w, b| b.map(|b| w.max(b))) {
            if attack.count() as f64 >= budget.margin * worst as f64 {
                break;
            }
        }
    }
    attack.mtd(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Cell;

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedStatistic(_))
        ));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    fn synthetic(rows: &[(u8, f32)]) -> Vec<Trace> {
        rows.iter()
            .map(|&(p, x)| {
                let mut plaintext = [0u8; 16];
                plaintext[0] = p;
                Trace {
                    samples: vec![x, 1.0],
                    plaintext,
                    key: [0; 16],
                    cell: Cell::new(0, 0),
                }
            })
            .collect()
    }

    #[test]
    fn noiseless_model_is_recovered() {
        let key = 0x3c;
        let rows: Vec<(u8, f32)> = (0..32u8)
            .map(|p| {
                let p = p.wrapping_mul(37).wrapping_add(11);
                (p, leakage_model(p, key) as f32)
            })
            .collect();
        let traces = synthetic(&rows);
        let t = cema(&traces, 0, &[32]).unwrap();
        assert_eq!(t.leader(0), key);
        assert!((t.rho[0][key as usize] - 1.0).abs() < 1e-12);
        assert_eq!(t.ranking(0)[0], key);
        assert_eq!(mtd(&t, Some(key)).unwrap(), Some(32));
    }

    #[test]
    fn cema_preconditions() {
        let traces = synthetic(&[(1, 1.0)]);
        assert!(cema(&traces, 0, &[1]).is_err());
        let traces = synthetic(&[(1, 1.0), (2, 2.0), (3, 0.5)]);
        assert!(cema(&traces, 0, &[3, 2]).is_err());
        assert!(cema(&traces, 0, &[4]).is_err());
        assert!(cema(&traces, 16, &[3]).is_err());
    }

    fn trajectory_with_leaders(leaders: &[(usize, u8)]) -> CorrelationTrajectory {
        let mut t = CorrelationTrajectory::new(0);
        for &(c, k) in leaders {
            let mut row = vec![0.1; 256];
            row[k as usize] = 0.5;
            t.checkpoints.push(c);
            t.rho.push(row);
        }
        t
    }

    #[test]
    fn mtd_requires_persistent_lead() {
        let t = trajectory_with_leaders(&[(100, 9), (200, 9), (250, 7), (300, 7), (350, 7)]);
        assert_eq!(mtd(&t, Some(7)).unwrap(), Some(250));

        let t = trajectory_with_leaders(&[(300, 7), (400, 9), (500, 7), (600, 7)]);
        assert_eq!(mtd(&t, Some(7)).unwrap(), Some(500));

        let t = trajectory_with_leaders(&[(100, 9), (200, 9)]);
        assert_eq!(mtd(&t, Some(7)).unwrap(), None);

        assert!(matches!(mtd(&t, None), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn ties_do_not_disclose() {
        let mut t = trajectory_with_leaders(&[(100, 7)]);
        t.rho[0][8] = 0.5;
        assert_eq!(mtd(&t, Some(7)).unwrap(), None);
    }

    #[test]
    fn stride_checkpoints() {
        assert_eq!(checkpoints_by_stride(120, 50), vec![50, 100, 120]);
        assert_eq!(checkpoints_by_stride(100, 50), vec![50, 100]);
        assert_eq!(checkpoints_by_stride(32, 50), vec![32]);
        assert_eq!(checkpoints_by_stride(6, 1), vec![2, 3, 4, 5, 6]);
    }

    #[test]
    fn key_mtd_is_worst_byte() {
        let r = AttackResult {
            recovered_key: [0; 16],
            mtd: (0..16).map(|b| Some(50 + b * 10)).collect(),
            traces_used: 1000,
            trajectories: vec![],
        };
        assert_eq!(r.key_mtd(), Some(200));
        let mut r2 = r.clone();
        r2.mtd[3] = None;
        assert_eq!(r2.key_mtd(), None);
        let json = serde_json::to_string(&r).unwrap();
        let back: AttackResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
