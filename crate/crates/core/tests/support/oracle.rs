//! Naive reference implementations written straight from the definitions,
//! with plain index loops and no shared code with the library.

#![allow(dead_code)]

use std::collections::BTreeSet;

use pwa_core::FeatureMapTensor;
use rand::Rng;

pub fn at(t: &FeatureMapTensor, c: usize, y: usize, x: usize) -> f64 {
    f64::from(t.values()[c * t.height() * t.width() + y * t.width() + x])
}

pub fn sum_pool(t: &FeatureMapTensor) -> Vec<f64> {
    let mut g = vec![0.0; t.channels()];
    for (c, slot) in g.iter_mut().enumerate() {
        for y in 0..t.height() {
            for x in 0..t.width() {
                *slot += at(t, c, y, x);
            }
        }
    }
    g
}

/// Two-pass population variance of each channel's pooled response.
pub fn channel_variance(tensors: &[FeatureMapTensor]) -> Vec<f64> {
    let pooled: Vec<Vec<f64>> = tensors.iter().map(sum_pool).collect();
    let n = pooled.len() as f64;
    (0..pooled[0].len())
        .map(|c| {
            let mean = pooled.iter().map(|g| g[c]).sum::<f64>() / n;
            pooled.iter().map(|g| (g[c] - mean).powi(2)).sum::<f64>() / n
        })
        .collect()
}

pub fn weights(t: &FeatureMapTensor, ch: usize, alpha: f64, beta: f64) -> Vec<f64> {
    let (h, w) = (t.height(), t.width());
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            total += at(t, ch, y, x).powf(alpha);
        }
    }
    let norm = total.powf(1.0 / alpha);
    let mut out = vec![0.0; h * w];
    if norm == 0.0 {
        return out;
    }
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (at(t, ch, y, x) / norm).powf(1.0 / beta);
        }
    }
    out
}

pub fn region(t: &FeatureMapTensor, weights: &[f64]) -> Vec<f64> {
    let mut psi = vec![0.0; t.channels()];
    for (c, slot) in psi.iter_mut().enumerate() {
        for y in 0..t.height() {
            for x in 0..t.width() {
                *slot += weights[y * t.width() + x] * at(t, c, y, x);
            }
        }
    }
    psi
}

pub fn pwa(t: &FeatureMapTensor, detectors: &[usize], alpha: f64, beta: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for &d in detectors {
        out.extend(region(t, &weights(t, d, alpha, beta)));
    }
    out
}

/// Indices sorted by score descending, then id ascending.
pub fn ranking(ids: &[String], db: &[Vec<f32>], query: &[f32]) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = db
        .iter()
        .zip(ids)
        .map(|(v, id)| {
            let dot: f64 = v
                .iter()
                .zip(query)
                .map(|(a, b)| f64::from(*a) * f64::from(*b))
                .sum();
            (id.clone(), dot.clamp(-1.0, 1.0))
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored
}

/// Closed-form trapezoidal AP: with junk and the query image removed, the
/// k-th positive at rank r contributes ((k-1)/(r-1) + k/r) / 2 / n_pos,
/// taking (k-1)/(r-1) as 1 at r = 1.
pub fn average_precision(
    ranked: &[String],
    positives: &BTreeSet<String>,
    junk: &BTreeSet<String>,
    query_image: Option<&str>,
) -> f64 {
    let n_pos = positives
        .iter()
        .filter(|p| Some(p.as_str()) != query_image)
        .count() as f64;
    let filtered: Vec<&String> = ranked
        .iter()
        .filter(|id| !junk.contains(*id) && Some(id.as_str()) != query_image)
        .collect();
    let mut ap = 0.0;
    let mut k = 0.0;
    for (i, id) in filtered.iter().enumerate() {
        if positives.contains(*id) {
            let r = (i + 1) as f64;
            k += 1.0;
            let before = if r == 1.0 { 1.0 } else { (k - 1.0) / (r - 1.0) };
            ap += (before + k / r) / 2.0 / n_pos;
        }
    }
    ap
}

/// Mean of precision at each positive's rank.
pub fn rectangular_ap(ranked: &[String], positives: &BTreeSet<String>) -> f64 {
    let mut ap = 0.0;
    let mut k = 0.0;
    for (i, id) in ranked.iter().enumerate() {
        if positives.contains(id) {
            k += 1.0;
            ap += k / (i + 1) as f64;
        }
    }
    ap / positives.len() as f64
}

pub fn random_tensor<R: Rng>(rng: &mut R, c: usize, h: usize, w: usize) -> FeatureMapTensor {
    // Sparse like post-ReLU activations: about a third of cells are zero.
    let values = (0..c * h * w)
        .map(|_| {
            if rng.gen_bool(0.35) {
                0.0
            } else {
                rng.gen_range(0.0f32..10.0)
            }
        })
        .collect();
    FeatureMapTensor::new(c, h, w, values).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || a == b
}

pub fn assert_all_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!(rel_close(*g, *w, tol), "{what}[{i}]: got {g}, want {w}");
    }
}
