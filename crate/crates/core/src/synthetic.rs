//! Seeded synthetic corpora with planted part-detector channels.
//!
//! Every class owns a layout: each discriminative channel fires as a small
//! blob at a class-specific position with a class-specific amplitude. The
//! whole layout is translated per image, and every channel carries
//! low-level clutter. The remaining channels respond only to clutter, so
//! their pooled responses barely vary across the database.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::evaluation::{CropBox, GroundTruthEntry};
use crate::pipeline::NamedTensor;
use crate::tensor::FeatureMapTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedSpec {
    pub classes: usize,
    pub per_class: usize,
    pub queries_per_class: usize,
    pub channels: usize,
    pub discriminative: usize,
    pub height: usize,
    pub width: usize,
    /// Maximum per-image translation of a class layout, in cells.
    pub max_shift: usize,
    /// Relative per-image amplitude jitter of planted blobs.
    pub amplitude_jitter: f32,
    /// Upper bound of the uniform clutter on every channel.
    pub clutter: f32,
    /// Relative spread of the clutter level between classes (0 = none).
    pub clutter_class_spread: f32,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            per_class: 6,
            queries_per_class: 1,
            channels: 16,
            discriminative: 4,
            height: 8,
            width: 8,
            max_shift: 2,
            amplitude_jitter: 0.15,
            clutter: 0.3,
            clutter_class_spread: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub database: Vec<NamedTensor>,
    pub queries: Vec<NamedTensor>,
    pub ground_truth: Vec<GroundTruthEntry>,
    /// Indices of the planted discriminative channels.
    pub planted: Vec<usize>,
}

struct Part {
    y: usize,
    x: usize,
    amplitude: f32,
}

struct ClassLayout {
    parts: Vec<(usize, Part)>,
    /// Per-channel clutter ceiling for this class.
    clutter: Vec<f32>,
}

fn render(spec: &PlantedSpec, layout: &ClassLayout, rng: &mut ChaCha8Rng) -> FeatureMapTensor {
    let (h, w) = (spec.height, spec.width);
    let plane = h * w;
    let mut values = vec![0.0f32; spec.channels * plane];
    for (c, chunk) in values.chunks_exact_mut(plane).enumerate() {
        let ceiling = layout.clutter[c];
        if ceiling > 0.0 {
            chunk
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(0.0..ceiling));
        }
    }
    let dy = rng.gen_range(0..=spec.max_shift);
    let dx = rng.gen_range(0..=spec.max_shift);
    for (channel, part) in &layout.parts {
        let jitter = 1.0 + rng.gen_range(-spec.amplitude_jitter..=spec.amplitude_jitter);
        let amp = part.amplitude * jitter;
        let (cy, cx) = ((part.y + dy).min(h - 1), (part.x + dx).min(w - 1));
        // Plus-shaped blob: full amplitude at the center, half on the 4-neighbours.
        for (oy, ox, f) in [
            (0i32, 0i32, 1.0f32),
            (-1, 0, 0.5),
            (1, 0, 0.5),
            (0, -1, 0.5),
            (0, 1, 0.5),
        ] {
            let (y, x) = (cy as i32 + oy, cx as i32 + ox);
            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                values[channel * plane + y as usize * w + x as usize] += amp * f;
            }
        }
    }
    FeatureMapTensor::new(spec.channels, h, w, values).expect("generated activations are valid")
}

/// Draws which channels are the planted detectors.
pub fn planted_channels(spec: &PlantedSpec, seed: u64) -> Vec<usize> {
    assert!(spec.discriminative <= spec.channels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..spec.channels).collect();
    order.shuffle(&mut rng);
    let mut planted = order[..spec.discriminative].to_vec();
    planted.sort_unstable();
    planted
}

/// Generates a corpus deterministically from `seed`, with the planted
/// channels also drawn from `seed`.
pub fn planted_corpus(spec: &PlantedSpec, seed: u64) -> PlantedCorpus {
    planted_corpus_with(spec, &planted_channels(spec, seed), seed)
}

/// Generates a corpus of fresh classes over a fixed set of planted
/// channels, so several corpora can share one "network".
pub fn planted_corpus_with(spec: &PlantedSpec, planted: &[usize], seed: u64) -> PlantedCorpus {
    assert!(spec.height > spec.max_shift && spec.width > spec.max_shift);
    assert!(planted.iter().all(|&c| c < spec.channels));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);

    let layouts: Vec<ClassLayout> = (0..spec.classes)
        .map(|_| {
            let parts = planted
                .iter()
                .map(|&c| {
                    let part = Part {
                        y: rng.gen_range(0..spec.height - spec.max_shift),
                        x: rng.gen_range(0..spec.width - spec.max_shift),
                        amplitude: rng.gen_range(0.5..4.0),
                    };
                    (c, part)
                })
                .collect();
            let clutter = (0..spec.channels)
                .map(|_| {
                    let u: f32 = rng.gen_range(-1.0..=1.0);
                    spec.clutter * (1.0 + spec.clutter_class_spread * u)
                })
                .collect();
            ClassLayout { parts, clutter }
        })
        .collect();

    let mut database = Vec::new();
    let mut queries = Vec::new();
    let mut ground_truth = Vec::new();
    for (class, layout) in layouts.iter().enumerate() {
        let mut members = BTreeSet::new();
        for i in 0..spec.per_class {
            let id = format!("c{class:03}_{i:03}");
            database.push((id.clone(), render(spec, layout, &mut rng)));
            members.insert(id);
        }
        for i in 0..spec.queries_per_class {
            let id = format!("q{class:03}_{i:03}");
            queries.push((id.clone(), render(spec, layout, &mut rng)));
            ground_truth.push(GroundTruthEntry {
                query_id: id.clone(),
                query_image_id: id,
                crop_box: CropBox {
                    x1: 0.0,
                    y1: 0.0,
                    x2: spec.width as f64,
                    y2: spec.height as f64,
                },
                good: members.clone(),
                ok: BTreeSet::new(),
                junk: BTreeSet::new(),
            });
        }
    }
    PlantedCorpus {
        database,
        queries,
        ground_truth,
        planted: planted.to_vec(),
    }
}
