//! Scalar leakage measures computed from a batch of traces at one cell.

use serde::{Deserialize, Serialize};

use crate::crypto::leakage_model;
use crate::error::{Error, Result};
use crate::trace::Trace;

/// |t| above this flags leakage with 99.999% confidence per sample.
pub const TVLA_THRESHOLD: f64 = 4.5;

/// Reported SNR when the noise variance at a leaking sample is exactly zero.
pub const SNR_SATURATION: f64 = 1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Amplitude,
    Tvla,
    Snr,
}

impl MeasureKind {
    /// Traces per measurement used by the reference rig.
    pub fn default_traces(self) -> usize {
        match self {
            MeasureKind::Amplitude => 10,
            MeasureKind::Tvla => 400,
            MeasureKind::Snr => 1000,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::Amplitude => "amplitude",
            MeasureKind::Tvla => "tvla",
            MeasureKind::Snr => "snr",
        }
    }
}

impl std::str::FromStr for MeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "amplitude" => Ok(MeasureKind::Amplitude),
            "tvla" => Ok(MeasureKind::Tvla),
            "snr" => Ok(MeasureKind::Snr),
            other => Err(Error::invalid(format!("unknown measure {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageScalar {
    pub kind: MeasureKind,
    pub value: f64,
    pub traces_used: usize,
    /// TVLA only: `value > 4.5`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub leak_detected: bool,
    /// SNR only: some leaking sample had zero noise variance.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub saturated: bool,
}

impl LeakageScalar {
    fn new(kind: MeasureKind, value: f64, traces_used: usize) -> Self {
        Self {
            kind,
            value,
            traces_used,
            leak_detected: false,
            saturated: false,
        }
    }
}

/// Mean over traces of the mean square sample value.
pub fn amplitude(traces: &[Trace]) -> Result<LeakageScalar> {
    if traces.is_empty() {
        return Err(Error::invalid("amplitude of an empty batch"));
    }
    let total: f64 = traces
        .iter()
        .map(|t| {
            let ss: f64 = t.samples.iter().map(|&x| (x as f64) * (x as f64)).sum();
            if t.samples.is_empty() {
                0.0
            } else {
                ss / t.samples.len() as f64
            }
        })
        .sum();
    Ok(LeakageScalar::new(
        MeasureKind::Amplitude,
        total / traces.len() as f64,
        traces.len(),
    ))
}

/// Running mean and sum of squared deviations (Welford).
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    #[inline]
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        self.m2 / (self.n - 1) as f64
    }
}

fn welch_from_moments(a: &Moments, b: &Moments) -> Result<f64> {
    let (va, vb) = (a.variance(), b.variance());
    if va == 0.0 && vb == 0.0 {
        return Err(Error::UndefinedStatistic("welch t with two constant groups"));
    }
    Ok((a.mean - b.mean) / (va / a.n as f64 + vb / b.n as f64).sqrt())
}

/// Welch's t statistic between two groups of values, with unbiased variances.
pub fn welch_t(group_a: &[f64], group_b: &[f64]) -> Result<f64> {
    if group_a.len() < 2 || group_b.len() < 2 {
        return Err(Error::invalid("welch t needs at least 2 values per group"));
    }
    let mut a = Moments::default();
    let mut b = Moments::default();
    group_a.iter().for_each(|&x| a.push(x));
    group_b.iter().for_each(|&x| b.push(x));
    welch_from_moments(&a, &b)
}

fn per_sample_moments(traces: &[Trace], len: usize) -> Vec<Moments> {
    let mut acc = vec![Moments::default(); len];
    for t in traces {
        for (m, &x) in acc.iter_mut().zip(&t.samples) {
            m.push(x as f64);
        }
    }
    acc
}

fn common_length(traces: &[Trace]) -> Result<usize> {
    let len = traces.first().map(|t| t.len()).unwrap_or(0);
    if traces.iter().any(|t| t.len() != len) {
        return Err(Error::invalid("traces in a batch differ in length"));
    }
    Ok(len)
}

/// Per-sample Welch t between a fixed-input and a random-input group.
///
/// Samples where both groups are constant yield `None`.
/// Fixed-vs-random moments updated one trace at a time.
#[derive(Clone, Debug)]
pub struct TvlaAccumulator {
    fixed: Vec<Moments>,
    random: Vec<Moments>,
}

impl TvlaAccumulator {
    pub fn new(samples_per_trace: usize) -> Self {
        Self {
            fixed: vec![Moments::default(); samples_per_trace],
            random: vec![Moments::default(); samples_per_trace],
        }
    }

    pub fn push_fixed(&mut self, t: &Trace) {
        for (m, &x) in self.fixed.iter_mut().zip(&t.samples) {
            m.push(x as f64);
        }
    }

    pub fn push_random(&mut self, t: &Trace) {
        for (m, &x) in self.random.iter_mut().zip(&t.samples) {
            m.push(x as f64);
        }
    }

    /// Current max |t| over samples; `None` while undefined everywhere.
    pub fn max_abs_t(&self) -> Option<f64> {
        if self.fixed.first().is_none_or(|m| m.n < 2) || self.random.first().is_none_or(|m| m.n < 2) {
            return None;
        }
        self.fixed
            .iter()
            .zip(&self.random)
            .filter_map(|(a, b)| welch_from_moments(a, b).ok())
            .map(f64::abs)
            .reduce(f64::max)
    }
}

pub fn t_curve(fixed: &[Trace], random: &[Trace]) -> Result<Vec<Option<f64>>> {
    if fixed.len() < 2 || random.len() < 2 {
        return Err(Error::invalid("tvla needs at least 2 traces per group"));
    }
    let len = common_length(fixed)?;
    if common_length(random)? != len {
        return Err(Error::invalid("tvla groups differ in sample count"));
    }
    let a = per_sample_moments(fixed, len);
    let b = per_sample_moments(random, len);
    Ok(a.iter()
        .zip(&b)
        .map(|(a, b)| welch_from_moments(a, b).ok())
        .collect())
}

/// Non-specific fixed-versus-random TVLA reduced to max |t| over samples.
pub fn tvla(fixed: &[Trace], random: &[Trace]) -> Result<LeakageScalar> {
    let curve = t_curve(fixed, random)?;
    let value = curve
        .iter()
        .flatten()
        .map(|t| t.abs())
        .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))))
        .ok_or(Error::UndefinedStatistic("every sample is constant in both groups"))?;
    let mut out = LeakageScalar::new(MeasureKind::Tvla, value, fixed.len() + random.len());
    out.leak_detected = value > TVLA_THRESHOLD;
    Ok(out)
}

/// Per-sample SNR: weighted variance of Hamming-weight class means over the
/// pooled within-class variance. Samples with no variance at all are `None`.
pub fn snr_curve(traces: &[Trace], key: &[u8; 16], byte_index: usize) -> Result<Vec<Option<f64>>> {
    if byte_index >= 16 {
        return Err(Error::invalid(format!("key byte index {byte_index} >= 16")));
    }
    let len = common_length(traces)?;
    let classes: Vec<usize> = traces
        .iter()
        .map(|t| leakage_model(t.plaintext[byte_index], key[byte_index]) as usize)
        .collect();
    let mut counts = [0usize; 9];
    classes.iter().for_each(|&c| counts[c] += 1);
    let populated = counts.iter().filter(|&&c| c > 0).count();
    if traces.len() < 2 || populated < 2 {
        return Err(Error::InsufficientClasses { found: populated });
    }
    let n = traces.len();
    if n <= populated {
        return Err(Error::UndefinedStatistic("no within-class degrees of freedom"));
    }

    let mut sums = vec![[0.0f64; 9]; len];
    for (t, &c) in traces.iter().zip(&classes) {
        for (s, &x) in sums.iter_mut().zip(&t.samples) {
            s[c] += x as f64;
        }
    }
    let means: Vec<[f64; 9]> = sums
        .iter()
        .map(|s| core::array::from_fn(|c| if counts[c] > 0 { s[c] / counts[c] as f64 } else { 0.0 }))
        .collect();
    let mut within = vec![0.0f64; len];
    for (t, &c) in traces.iter().zip(&classes) {
        for ((w, m), &x) in within.iter_mut().zip(&means).zip(&t.samples) {
            *w += (x as f64 - m[c]).powi(2);
        }
    }

    Ok((0..len)
        .map(|s| {
            let grand = sums[s].iter().sum::<f64>() / n as f64;
            let between: f64 = (0..9)
                .filter(|&c| counts[c] > 0)
                .map(|c| counts[c] as f64 * (means[s][c] - grand).powi(2))
                .sum();
            let signal = between / (n - 1) as f64;
            let noise = within[s] / (n - populated) as f64;
            if noise > 0.0 {
                Some(signal / noise)
            } else if signal > 0.0 {
                Some(f64::INFINITY)
            } else {
                None
            }
        })
        .collect())
}

/// SNR of the first-round S-box Hamming weight for one key byte, reduced to
/// the maximum over samples.
pub fn snr(traces: &[Trace], key: &[u8; 16], byte_index: usize) -> Result<LeakageScalar> {
    let curve = snr_curve(traces, key, byte_index)?;
    let best = curve.iter().flatten().copied().fold(0.0f64, f64::max);
    let mut out = LeakageScalar::new(MeasureKind::Snr, best, traces.len());
    if best.is_infinite() {
        out.value = SNR_SATURATION;
        out.saturated = true;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Cell;

    fn trace(samples: Vec<f32>, pt0: u8) -> Trace {
        let mut plaintext = [0u8; 16];
        plaintext[0] = pt0;
        Trace {
            samples,
            plaintext,
            key: [0; 16],
            cell: Cell::new(0, 0),
        }
    }

    #[test]
    fn amplitude_examples() {
        let t = trace(vec![2.0; 8], 0);
        assert_eq!(amplitude(&[t]).unwrap().value, 4.0);
        let z = trace(vec![0.0; 8], 0);
        assert_eq!(amplitude(&[z.clone(), z]).unwrap().value, 0.0);
        assert!(amplitude(&[]).is_err());
        assert_eq!(MeasureKind::Amplitude.default_traces(), 10);
    }

    #[test]
    fn welch_examples() {
        let t = welch_t(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((t - (-3.674_234_614_174_767)).abs() < 1e-4);
        assert_eq!(welch_t(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let s = welch_t(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s, -t);
    }

    #[test]
    fn welch_rejects_degenerate_groups() {
        assert!(matches!(
            welch_t(&[1.0, 1.0], &[2.0, 2.0]),
            Err(Error::UndefinedStatistic(_))
        ));
        assert!(matches!(welch_t(&[1.0], &[2.0, 3.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn tvla_skips_constant_samples() {
        let fixed: Vec<Trace> = (0..4).map(|k| trace(vec![1.0, k as f32], 0)).collect();
        let random: Vec<Trace> = (0..4).map(|k| trace(vec![1.0, 10.0 + k as f32], 0)).collect();
        let r = tvla(&fixed, &random).unwrap();
        assert!(r.value > TVLA_THRESHOLD && r.leak_detected);
        assert_eq!(r.traces_used, 8);

        let flat: Vec<Trace> = (0..4).map(|_| trace(vec![1.0, 1.0], 0)).collect();
        assert!(matches!(tvla(&flat, &flat), Err(Error::UndefinedStatistic(_))));
    }

    #[test]
    fn tvla_rejects_mismatched_lengths() {
        let a: Vec<Trace> = (0..3).map(|k| trace(vec![k as f32; 2], 0)).collect();
        let b: Vec<Trace> = (0..3).map(|k| trace(vec![k as f32; 3], 0)).collect();
        assert!(tvla(&a, &b).is_err());
    }

    #[test]
    fn snr_needs_two_classes() {
        // plaintext 0 with key 0 -> S = 0x63, always the same class
        let ts: Vec<Trace> = (0..5).map(|k| trace(vec![k as f32], 0)).collect();
        assert!(matches!(
            snr(&ts, &[0; 16], 0),
            Err(Error::InsufficientClasses { found: 1 })
        ));
    }

    #[test]
    fn snr_saturates_without_noise() {
        // sample equals the model exactly
        let ts: Vec<Trace> = (0..64u8)
            .map(|p| trace(vec![leakage_model(p, 0) as f32, 3.0], p))
            .collect();
        let r = snr(&ts, &[0; 16], 0).unwrap();
        assert!(r.saturated);
        assert_eq!(r.value, SNR_SATURATION);
    }

    #[test]
    fn measure_names_parse() {
        for k in [MeasureKind::Amplitude, MeasureKind::Tvla, MeasureKind::Snr] {
            assert_eq!(k.name().parse::<MeasureKind>().unwrap(), k);
        }
        assert!("rms".parse::<MeasureKind>().is_err());
    }
}
