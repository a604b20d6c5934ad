//! Empirical gap distributions and a histogram proxy for total variation.

use serde::Serialize;

use crate::engine::{RecordKind, Trajectory};
use crate::ranking::gaps;
use crate::{Error, Result};

pub const DEFAULT_BINS: usize = 200;
const LOWER_QUANTILE: f64 = 0.001;
const UPPER_QUANTILE: f64 = 0.999;

/// Equal-width bins on `[lo, hi)`. Values outside the range are counted in
/// the first or last bin, so every observation lands somewhere.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Binning {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Binning {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi && bins > 0) {
            return Err(Error::Config(format!("invalid binning [{lo}, {hi}) with {bins} bins")));
        }
        Ok(Binning { lo, hi, bins })
    }

    /// Spans the 0.1%–99.9% quantiles of `samples`.
    pub fn from_quantiles(samples: &[f64], bins: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySample("no samples to bin".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
        let (mut lo, mut hi) = (q(LOWER_QUANTILE), q(UPPER_QUANTILE));
        if hi <= lo {
            lo -= 0.5;
            hi += 0.5;
        }
        Binning::new(lo, hi, bins)
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn index(&self, v: f64) -> usize {
        let b = ((v - self.lo) / self.width()).floor();
        if b < 0.0 {
            0
        } else {
            (b as usize).min(self.bins - 1)
        }
    }

    /// Bin probabilities of a distribution given its CDF, with the tails
    /// folded into the end bins.
    pub fn probabilities<F: Fn(f64) -> f64>(&self, cdf: F) -> Vec<f64> {
        let w = self.width();
        (0..self.bins)
            .map(|b| {
                let left = if b == 0 { 0.0 } else { cdf(self.lo + b as f64 * w) };
                let right = if b + 1 == self.bins { 1.0 } else { cdf(self.lo + (b + 1) as f64 * w) };
                right - left
            })
            .collect()
    }
}

/// Pooled post-burn-in histogram of each gap coordinate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapHistogram {
    pub binnings: Vec<Binning>,
    /// `counts[k][b]` for gap `k`.
    pub counts: Vec<Vec<u64>>,
    /// Exact sample mean of each gap.
    pub means: Vec<f64>,
    /// Standard deviation of each gap sample.
    pub std_devs: Vec<f64>,
    pub samples: u64,
    pub burn_in: f64,
}

impl GapHistogram {
    pub fn from_samples(samples: &[Vec<f64>], binnings: Vec<Binning>, burn_in: f64) -> Result<Self> {
        if samples.len() != binnings.len() {
            return Err(Error::BinningMismatch);
        }
        let count = samples.first().map_or(0, Vec::len);
        if count == 0 {
            return Err(Error::EmptySample("no gap samples after burn-in".into()));
        }
        let mut counts = Vec::with_capacity(samples.len());
        let mut means = Vec::with_capacity(samples.len());
        let mut std_devs = Vec::with_capacity(samples.len());
        for (s, b) in samples.iter().zip(&binnings) {
            let mut c = vec![0u64; b.bins];
            for &v in s {
                c[b.index(v)] += 1;
            }
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s.len() as f64;
            counts.push(c);
            means.push(mean);
            std_devs.push(var.sqrt());
        }
        Ok(GapHistogram { binnings, counts, means, std_devs, samples: count as u64, burn_in })
    }

    pub fn n_gaps(&self) -> usize {
        self.counts.len()
    }

    pub fn frequencies(&self, gap: usize) -> Vec<f64> {
        let total = self.samples as f64;
        self.counts[gap].iter().map(|&c| c as f64 / total).collect()
    }
}

/// Gap vectors at grid records with `t >= burn_in`, one sample list per gap
/// coordinate, pooled over trajectories.
pub fn gap_samples(trajs: &[Trajectory], burn_in: f64) -> Result<Vec<Vec<f64>>> {
    let n = trajs.first().ok_or_else(|| Error::EmptySample("no trajectories".into()))?.n_particles();
    let mut out = vec![Vec::new(); n - 1];
    for traj in trajs {
        if burn_in >= traj.end_time() {
            return Err(Error::EmptySample(format!("burn-in {burn_in} is not before the horizon {}", traj.end_time())));
        }
        for (j, x) in traj.states().enumerate() {
            if traj.kinds()[j] == RecordKind::Grid && traj.times()[j] >= burn_in {
                for (o, z) in out.iter_mut().zip(gaps(x)) {
                    o.push(z);
                }
            }
        }
    }
    if out[0].is_empty() {
        return Err(Error::EmptySample("no gap samples after burn-in".into()));
    }
    Ok(out)
}

/// How to bin a gap histogram.
#[derive(Clone, Debug, PartialEq)]
pub enum BinSpec {
    /// Per-gap quantile range of the pooled sample.
    Quantiles(usize),
    Fixed(Vec<Binning>),
}

pub fn quantile_binnings(samples: &[Vec<f64>], bins: usize) -> Result<Vec<Binning>> {
    samples.iter().map(|s| Binning::from_quantiles(s, bins)).collect()
}

pub fn gap_histogram(trajs: &[Trajectory], burn_in: f64, bins: &BinSpec) -> Result<GapHistogram> {
    let samples = gap_samples(trajs, burn_in)?;
    let binnings = match bins {
        BinSpec::Quantiles(b) => quantile_binnings(&samples, *b)?,
        BinSpec::Fixed(b) => b.clone(),
    };
    GapHistogram::from_samples(&samples, binnings, burn_in)
}

fn half_l1(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `½ Σ_b |p̂_b − q̂_b|` per gap coordinate, maximised over coordinates.
pub fn tv_distance(h1: &GapHistogram, h2: &GapHistogram) -> Result<f64> {
    if h1.binnings != h2.binnings {
        return Err(Error::BinningMismatch);
    }
    Ok((0..h1.n_gaps()).map(|k| half_l1(&h1.frequencies(k), &h2.frequencies(k))).fold(0.0, f64::max))
}

/// TV proxy between one gap's histogram and reference bin probabilities.
pub fn tv_to_reference(h: &GapHistogram, gap: usize, reference: &[f64]) -> Result<f64> {
    if reference.len() != h.binnings[gap].bins {
        return Err(Error::BinningMismatch);
    }
    Ok(half_l1(&h.frequencies(gap), reference))
}

/// TV between the cross-replication gap distribution at each time in
/// `times` and a reference histogram (typically the pooled stationary one).
pub fn tv_vs_time(trajs: &[Trajectory], reference: &GapHistogram, times: &[f64]) -> Result<Vec<(f64, f64)>> {
    times
        .iter()
        .map(|&t| {
            let mut samples = vec![Vec::new(); reference.n_gaps()];
            for traj in trajs {
                if let Some(x) = traj.state_at(t) {
                    for (s, z) in samples.iter_mut().zip(gaps(x)) {
                        s.push(z);
                    }
                }
            }
            let h = GapHistogram::from_samples(&samples, reference.binnings.clone(), t)?;
            Ok((t, tv_distance(&h, reference)?))
        })
        .collect()
}
