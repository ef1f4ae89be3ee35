//! Monte Carlo accumulation, deterministic parallel driving, and the small
//! statistical toolbox used by the verification suites.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::rng::CounterRng;

/// Samples per RNG stream. Fixed so that estimates depend only on the
/// master seed, never on thread count.
pub const MC_CHUNK: u64 = 1 << 16;

/// Mean / standard-error pair from a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// Kahan-compensated accumulator for one weight channel.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    #[inline]
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Running sums for `K` weight channels evaluated on a common sample stream.
#[derive(Debug, Clone, Copy)]
pub struct MultiAccum<const K: usize> {
    sum: [Kahan; K],
    sum_sq: [Kahan; K],
    pub samples: u64,
}

impl<const K: usize> Default for MultiAccum<K> {
    fn default() -> Self {
        MultiAccum {
            sum: [Kahan::default(); K],
            sum_sq: [Kahan::default(); K],
            samples: 0,
        }
    }
}

impl<const K: usize> MultiAccum<K> {
    #[inline]
    pub fn push(&mut self, w: [f64; K]) {
        for i in 0..K {
            self.sum[i].add(w[i]);
            self.sum_sq[i].add(w[i] * w[i]);
        }
        self.samples += 1;
    }

    /// Merge in stream order; exact for the integer-valued channels and
    /// deterministic for all of them because chunk boundaries are fixed.
    pub fn merge(&mut self, other: &Self) {
        for i in 0..K {
            self.sum[i].add(other.sum[i].sum);
            self.sum[i].add(other.sum[i].carry * -1.0);
            self.sum_sq[i].add(other.sum_sq[i].sum);
            self.sum_sq[i].add(other.sum_sq[i].carry * -1.0);
        }
        self.samples += other.samples;
    }

    /// Compensated running sum of one channel; exact for indicator-valued
    /// channels (integer counts below 2^53).
    pub fn sum(&self, channel: usize) -> f64 {
        self.sum[channel].sum
    }

    pub fn estimate(&self, channel: usize) -> McEstimate {
        let n = self.samples as f64;
        if self.samples == 0 {
            return McEstimate {
                value: 0.0,
                stderr: 0.0,
                samples: 0,
            };
        }
        let mean = self.sum[channel].sum / n;
        let var = (self.sum_sq[channel].sum / n - mean * mean).max(0.0);
        McEstimate {
            value: mean,
            stderr: (var / n).sqrt(),
            samples: self.samples,
        }
    }
}

/// Run `samples` evaluations of `f`, one independent RNG stream per
/// `MC_CHUNK`-sized block, in parallel. Partial accumulators are merged in
/// block order, so the result is a pure function of `(master_seed, samples)`.
pub fn parallel_mc<const K: usize, F>(master_seed: u64, samples: u64, f: F) -> MultiAccum<K>
where
    F: Fn(&mut CounterRng) -> [f64; K] + Sync,
{
    let chunks = samples.div_ceil(MC_CHUNK);
    let partials: Vec<MultiAccum<K>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = CounterRng::new(master_seed, chunk);
            let lo = chunk * MC_CHUNK;
            let hi = (lo + MC_CHUNK).min(samples);
            let mut acc = MultiAccum::<K>::default();
            for _ in lo..hi {
                acc.push(f(&mut rng));
            }
            acc
        })
        .collect();
    let mut total = MultiAccum::<K>::default();
    for p in &partials {
        total.merge(p);
    }
    total
}

/// Ordinary least-squares slope of y against x.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2);
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Result of a chi-square comparison.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn chi_square_p(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("dof > 0");
    1.0 - dist.cdf(statistic)
}

/// Goodness of fit of observed counts against expected counts. Bins with
/// expected count below `min_expected` are pooled into their left neighbor
/// before the statistic is formed.
pub fn chi_square_gof(observed: &[u64], expected: &[f64], min_expected: f64) -> ChiSquare {
    assert_eq!(observed.len(), expected.len());
    let mut obs: Vec<f64> = Vec::new();
    let mut exp: Vec<f64> = Vec::new();
    for (&o, &e) in observed.iter().zip(expected) {
        if !exp.is_empty() && *exp.last().unwrap() < min_expected {
            *obs.last_mut().unwrap() += o as f64;
            *exp.last_mut().unwrap() += e;
        } else {
            obs.push(o as f64);
            exp.push(e);
        }
    }
    // A trailing under-filled bin pools backwards.
    while exp.len() >= 2 && *exp.last().unwrap() < min_expected {
        let o = obs.pop().unwrap();
        let e = exp.pop().unwrap();
        *obs.last_mut().unwrap() += o;
        *exp.last_mut().unwrap() += e;
    }
    let statistic: f64 = obs
        .iter()
        .zip(&exp)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum();
    let dof = exp.len().saturating_sub(1);
    ChiSquare {
        statistic,
        dof,
        p_value: chi_square_p(statistic, dof),
    }
}

/// Two-sample chi-square homogeneity test on count histograms of possibly
/// different totals. Bins where the pooled count is below `min_pooled` are
/// merged into their left neighbor.
pub fn chi_square_two_sample(a: &[u64], b: &[u64], min_pooled: f64) -> ChiSquare {
    assert_eq!(a.len(), b.len());
    let mut xa: Vec<f64> = Vec::new();
    let mut xb: Vec<f64> = Vec::new();
    for (&ca, &cb) in a.iter().zip(b) {
        let pooled = (ca + cb) as f64;
        if !xa.is_empty() && xa.last().unwrap() + xb.last().unwrap() < min_pooled {
            *xa.last_mut().unwrap() += ca as f64;
            *xb.last_mut().unwrap() += cb as f64;
        } else {
            let _ = pooled;
            xa.push(ca as f64);
            xb.push(cb as f64);
        }
    }
    while xa.len() >= 2 && xa.last().unwrap() + xb.last().unwrap() < min_pooled {
        let (ra, rb) = (xa.pop().unwrap(), xb.pop().unwrap());
        *xa.last_mut().unwrap() += ra;
        *xb.last_mut().unwrap() += rb;
    }
    let na: f64 = xa.iter().sum();
    let nb: f64 = xb.iter().sum();
    assert!(na > 0.0 && nb > 0.0);
    let k1 = (nb / na).sqrt();
    let k2 = (na / nb).sqrt();
    let mut statistic = 0.0;
    let mut dof = 0usize;
    for (&ca, &cb) in xa.iter().zip(&xb) {
        let tot = ca + cb;
        if tot > 0.0 {
            let d = k1 * ca - k2 * cb;
            statistic += d * d / tot;
            dof += 1;
        }
    }
    dof = dof.saturating_sub(1);
    ChiSquare {
        statistic,
        dof,
        p_value: chi_square_p(statistic, dof),
    }
}
