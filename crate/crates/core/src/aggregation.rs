//! Weighted aggregation of a feature map into the raw PWA descriptor.
//!
//! Each selected detector channel `n` becomes a spatial weight map
//!
//! ```text
//! w_n(x, y) = ( v_n(x, y) / (sum_xy v_n(x, y)^alpha)^(1/alpha) )^(1/beta)
//! ```
//!
//! which then weights a sum pooling over every channel:
//! `psi_n[c] = sum_xy w_n(x, y) * f(c, x, y)`. The raw descriptor is the
//! concatenation `[psi_1, ..., psi_N]` in detector order, `N * C` long.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::detector::{sum_pool, DetectorSet};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::store::DescriptorRecord;
use crate::tensor::FeatureMapTensor;

/// Power-normalization (`alpha`) and power-scaling (`beta`) exponents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PwaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for PwaParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 2.0,
        }
    }
}

impl PwaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    detail: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        Ok(Self { alpha, beta })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub height: usize,
    pub width: usize,
    pub source_channel: usize,
    /// Row-major `H * W` weights.
    pub weights: Vec<f64>,
}

impl WeightMap {
    pub fn uniform(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            source_channel: 0,
            weights: vec![value; height * width],
        }
    }
}

/// Raw concatenated descriptor, block `n` at `[n*C, (n+1)*C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDescriptor {
    pub image_id: String,
    pub channel_count: usize,
    pub values: Vec<f64>,
}

impl RawDescriptor {
    pub fn detector_count(&self) -> usize {
        self.values
            .len()
            .checked_div(self.channel_count)
            .unwrap_or(0)
    }

    pub fn block(&self, n: usize) -> &[f64] {
        &self.values[n * self.channel_count..(n + 1) * self.channel_count]
    }

    /// Narrows to `f32` for storage.
    pub fn to_record(&self) -> DescriptorRecord {
        DescriptorRecord::new(
            self.image_id.clone(),
            self.values.iter().map(|&v| v as f32).collect(),
        )
    }

    /// Widens a stored record. Block structure is not kept on disk, so the
    /// result is a single block spanning the whole vector.
    pub fn from_record(record: &DescriptorRecord) -> Self {
        Self {
            image_id: record.image_id.clone(),
            channel_count: record.dim(),
            values: record.values.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

impl AsRef<[f64]> for RawDescriptor {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

#[inline]
fn pow_fast(v: f64, p: f64) -> f64 {
    if p == 2.0 {
        v * v
    } else if p == 1.0 {
        v
    } else {
        v.powf(p)
    }
}

#[inline]
fn root_fast(v: f64, p: f64) -> f64 {
    if p == 2.0 {
        v.sqrt()
    } else if p == 1.0 {
        v
    } else {
        v.powf(1.0 / p)
    }
}

/// Weight map of one detector channel. An identically zero channel yields
/// all-zero weights.
pub fn compute_weights(
    tensor: &FeatureMapTensor,
    channel: usize,
    params: PwaParams,
) -> Result<WeightMap> {
    if channel >= tensor.channels() {
        return Err(Error::ChannelOutOfRange {
            channel,
            channels: tensor.channels(),
        });
    }
    let plane = tensor.channel(channel);
    let norm = root_fast(
        plane
            .iter()
            .map(|&v| pow_fast(f64::from(v), params.alpha))
            .sum(),
        params.alpha,
    );
    let weights = if norm > 0.0 && norm.is_finite() {
        plane
            .iter()
            .map(|&v| root_fast(f64::from(v) / norm, params.beta))
            .collect()
    } else {
        vec![0.0; plane.len()]
    };
    Ok(WeightMap {
        height: tensor.height(),
        width: tensor.width(),
        source_channel: channel,
        weights,
    })
}

/// Weighted sum pooling of every channel under one weight map.
pub fn aggregate_region(tensor: &FeatureMapTensor, weights: &WeightMap) -> Result<Vec<f64>> {
    if weights.height != tensor.height() || weights.width != tensor.width() {
        return Err(Error::InvalidShape(format!(
            "weight map {}x{} does not match tensor {}x{}",
            weights.height,
            weights.width,
            tensor.height(),
            tensor.width()
        )));
    }
    if weights.weights.len() != tensor.plane_len() {
        return Err(Error::DimMismatch {
            expected: tensor.plane_len(),
            found: weights.weights.len(),
        });
    }
    Ok((0..tensor.channels())
        .map(|c| {
            tensor
                .channel(c)
                .iter()
                .zip(&weights.weights)
                .map(|(&f, &w)| w * f64::from(f))
                .sum()
        })
        .collect())
}

fn check_channels(tensor: &FeatureMapTensor, detectors: &DetectorSet) -> Result<()> {
    if detectors.source_channels() != tensor.channels() {
        return Err(Error::DimMismatch {
            expected: detectors.source_channels(),
            found: tensor.channels(),
        });
    }
    Ok(())
}

fn region_block(tensor: &FeatureMapTensor, channel: usize, params: PwaParams) -> Result<Vec<f64>> {
    aggregate_region(tensor, &compute_weights(tensor, channel, params)?)
}

/// Raw PWA descriptor of one image.
pub fn aggregate_pwa(
    image_id: impl Into<String>,
    tensor: &FeatureMapTensor,
    detectors: &DetectorSet,
    params: PwaParams,
) -> Result<RawDescriptor> {
    aggregate_pwa_with(image_id, tensor, detectors, params, Execution::Sequential)
}

/// Like [`aggregate_pwa`] with per-detector blocks computed under `exec`.
pub fn aggregate_pwa_with(
    image_id: impl Into<String>,
    tensor: &FeatureMapTensor,
    detectors: &DetectorSet,
    params: PwaParams,
    exec: Execution,
) -> Result<RawDescriptor> {
    check_channels(tensor, detectors)?;
    let blocks = exec.try_map(detectors.selected(), |&ch| region_block(tensor, ch, params))?;
    Ok(RawDescriptor {
        image_id: image_id.into(),
        channel_count: tensor.channels(),
        values: blocks.concat(),
    })
}

/// Aggregates many images; parallel across images under `exec`.
pub fn aggregate_batch(
    items: &[(String, FeatureMapTensor)],
    detectors: &DetectorSet,
    params: PwaParams,
    exec: Execution,
) -> Result<Vec<RawDescriptor>> {
    exec.try_map(items, |(id, t)| {
        aggregate_pwa(id.clone(), t, detectors, params)
    })
}

/// Unweighted baseline: plain sum pooling as a one-block raw descriptor.
pub fn sum_pool_descriptor(
    image_id: impl Into<String>,
    tensor: &FeatureMapTensor,
) -> RawDescriptor {
    RawDescriptor {
        image_id: image_id.into(),
        channel_count: tensor.channels(),
        values: sum_pool(tensor),
    }
}

/// Renders a weight map as an ASCII (P2) 8-bit PGM, min-max scaled.
pub fn encode_pgm(map: &WeightMap) -> String {
    let (lo, hi) = map
        .weights
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| {
            (lo.min(w), hi.max(w))
        });
    let span = hi - lo;
    let mut out = format!("P2\n{} {}\n255\n", map.width, map.height);
    for row in map.weights.chunks(map.width.max(1)) {
        let line: Vec<String> = row
            .iter()
            .map(|&w| {
                let level = if span > 0.0 {
                    ((w - lo) / span * 255.0).round()
                } else {
                    0.0
                };
                (level as u8).to_string()
            })
            .collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn write_pgm(path: impl AsRef<Path>, map: &WeightMap) -> Result<()> {
    fs::write(path, encode_pgm(map))?;
    Ok(())
}
