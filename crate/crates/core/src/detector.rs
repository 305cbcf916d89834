//! Unsupervised part-detector fitting.
//!
//! Each database image is sum-pooled to a `C`-vector; the per-channel
//! population variance of those vectors across the database ranks channels,
//! and the top `N` become the part detectors whose activation maps weight the
//! aggregation.

use std::borrow::Borrow;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::store::{to_u32, ByteReader, ByteWriter};
use crate::tensor::FeatureMapTensor;

pub const DETECTOR_MAGIC: [u8; 4] = *b"PWAS";

/// Per-channel spatial sum, accumulated in `f64`.
pub fn sum_pool(tensor: &FeatureMapTensor) -> Vec<f64> {
    (0..tensor.channels())
        .map(|c| tensor.channel(c).iter().map(|&v| f64::from(v)).sum())
        .collect()
}

/// Streaming, mergeable accumulator for per-channel mean and variance.
///
/// Keeps the running mean and the sum of squared deviations per channel
/// (Welford updates, Chan et al. merges), so it never holds more than one
/// pooled vector and never forms `sum(g^2) - sum(g)^2 / D`.
#[derive(Debug, Clone, Default)]
pub struct ChannelAccumulator {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl ChannelAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn check_channels(&mut self, channels: usize) -> Result<()> {
        if self.count == 0 && self.mean.is_empty() {
            self.mean = vec![0.0; channels];
            self.m2 = vec![0.0; channels];
        } else if self.mean.len() != channels {
            return Err(Error::DimMismatch {
                expected: self.mean.len(),
                found: channels,
            });
        }
        Ok(())
    }

    /// Adds one sum-pooled vector.
    pub fn push_pooled(&mut self, pooled: &[f64]) -> Result<()> {
        self.check_channels(pooled.len())?;
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &g) in self.mean.iter_mut().zip(&mut self.m2).zip(pooled) {
            let delta = g - *mean;
            *mean += delta / n;
            *m2 += delta * (g - *mean);
        }
        Ok(())
    }

    pub fn push_tensor(&mut self, tensor: &FeatureMapTensor) -> Result<()> {
        self.push_pooled(&sum_pool(tensor))
    }

    /// Folds another partial accumulator into this one.
    pub fn merge(&mut self, other: &ChannelAccumulator) -> Result<()> {
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        self.check_channels(other.mean.len())?;
        let (na, nb) = (self.count as f64, other.count as f64);
        let total = na + nb;
        for c in 0..self.mean.len() {
            let delta = other.mean[c] - self.mean[c];
            self.mean[c] += delta * nb / total;
            self.m2[c] += other.m2[c] + delta * delta * na * nb / total;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn finish(self) -> Result<ChannelStats> {
        if self.count < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: self.count,
            });
        }
        let d = self.count as f64;
        let variance = self.m2.iter().map(|&m2| (m2 / d).max(0.0)).collect();
        Ok(ChannelStats {
            mean: self.mean,
            variance,
            sample_count: self.count,
        })
    }
}

/// Database statistics of the sum-pooled channel responses.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    /// Population variance (divided by `D`), one per channel.
    pub variance: Vec<f64>,
    pub sample_count: usize,
}

impl ChannelStats {
    pub fn channel_count(&self) -> usize {
        self.variance.len()
    }
}

/// Fits channel statistics from a stream of tensors, one at a time.
pub fn fit_channel_stats<I, T>(tensors: I) -> Result<ChannelStats>
where
    I: IntoIterator<Item = T>,
    T: Borrow<FeatureMapTensor>,
{
    let mut acc = ChannelAccumulator::new();
    for t in tensors {
        acc.push_tensor(t.borrow())?;
    }
    acc.finish()
}

/// Batch variant: pooling fans out per `exec`, accumulation runs in input
/// order so the result is identical to [`fit_channel_stats`].
pub fn fit_channel_stats_batch(
    tensors: &[FeatureMapTensor],
    exec: Execution,
) -> Result<ChannelStats> {
    let pooled = exec.map(tensors, sum_pool);
    let mut acc = ChannelAccumulator::new();
    for g in &pooled {
        acc.push_pooled(g)?;
    }
    acc.finish()
}

/// The fitted part detectors: channel indices ordered by descending
/// variance, ties by ascending index.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSet {
    source_channels: usize,
    selected: Vec<usize>,
    variances: Vec<f64>,
}

impl DetectorSet {
    /// Validates the ordering invariants; used by loaders and by callers
    /// that assemble a set by hand.
    pub fn new(source_channels: usize, selected: Vec<usize>, variances: Vec<f64>) -> Result<Self> {
        let n = selected.len();
        if n == 0 || n > source_channels {
            return Err(Error::DetectorCountOutOfRange {
                n,
                channels: source_channels,
            });
        }
        if variances.len() != n {
            return Err(Error::DimMismatch {
                expected: n,
                found: variances.len(),
            });
        }
        let mut seen = vec![false; source_channels];
        for &c in &selected {
            if c >= source_channels {
                return Err(Error::ChannelOutOfRange {
                    channel: c,
                    channels: source_channels,
                });
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::Malformed {
                    what: "detector set",
                    detail: format!("channel {c} selected twice"),
                });
            }
        }
        if variances.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Malformed {
                what: "detector set",
                detail: "variances must be finite and non-negative".into(),
            });
        }
        if variances.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Malformed {
                what: "detector set",
                detail: "variances must be non-increasing".into(),
            });
        }
        Ok(Self {
            source_channels,
            selected,
            variances,
        })
    }

    pub fn source_channels(&self) -> usize {
        self.source_channels
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

fn variance_order(variance: &[f64], channels: &mut [usize]) {
    channels.sort_by(|&a, &b| variance[b].total_cmp(&variance[a]).then(a.cmp(&b)));
}

/// Picks the `n` channels with the largest variance.
pub fn select_detectors(stats: &ChannelStats, n: usize) -> Result<DetectorSet> {
    let channels = stats.channel_count();
    if n == 0 || n > channels {
        return Err(Error::DetectorCountOutOfRange { n, channels });
    }
    let mut order: Vec<usize> = (0..channels).collect();
    variance_order(&stats.variance, &mut order);
    order.truncate(n);
    let variances = order.iter().map(|&c| stats.variance[c]).collect();
    DetectorSet::new(channels, order, variances)
}

/// Picks `n` channels uniformly at random (seeded), for comparison against
/// the variance ranking. The result is still listed in variance order.
pub fn select_random_detectors(stats: &ChannelStats, n: usize, seed: u64) -> Result<DetectorSet> {
    let channels = stats.channel_count();
    if n == 0 || n > channels {
        return Err(Error::DetectorCountOutOfRange { n, channels });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, channels, n).into_vec();
    variance_order(&stats.variance, &mut picked);
    let variances = picked.iter().map(|&c| stats.variance[c]).collect();
    DetectorSet::new(channels, picked, variances)
}

pub fn encode_detector_set(set: &DetectorSet) -> Result<Vec<u8>> {
    let mut w = ByteWriter::with_header(DETECTOR_MAGIC);
    w.u32(to_u32(set.source_channels, "channels")?);
    w.u32(to_u32(set.len(), "detector count")?);
    for (&c, &v) in set.selected.iter().zip(&set.variances) {
        w.u32(to_u32(c, "channel index")?);
        w.f64(v);
    }
    Ok(w.finish())
}

pub fn decode_detector_set(bytes: &[u8]) -> Result<DetectorSet> {
    let mut r = ByteReader::with_header(bytes, DETECTOR_MAGIC)?;
    let channels = r.u32("channels")? as usize;
    let n = r.u32("detector count")? as usize;
    if n.saturating_mul(12) > r.remaining() {
        return Err(Error::Truncated("detector entries"));
    }
    let mut selected = Vec::with_capacity(n);
    let mut variances = Vec::with_capacity(n);
    for _ in 0..n {
        selected.push(r.u32("channel index")? as usize);
        variances.push(r.f64("variance")?);
    }
    r.finish()?;
    DetectorSet::new(channels, selected, variances)
}

pub fn save_detector_set(path: impl AsRef<Path>, set: &DetectorSet) -> Result<()> {
    fs::write(path, encode_detector_set(set)?)?;
    Ok(())
}

pub fn load_detector_set(path: impl AsRef<Path>) -> Result<DetectorSet> {
    decode_detector_set(&fs::read(path)?)
}
