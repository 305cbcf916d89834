//! Exhaustive cosine ranking over unit descriptors, with average query
//! expansion.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::store::DescriptorRecord;

/// Entries per scan chunk when scoring in parallel.
const SCAN_CHUNK: usize = 2048;

#[derive(Debug, Clone, Default)]
pub struct DescriptorIndex {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
}

impl DescriptorIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Records in insertion order.
    pub fn records(&self) -> Vec<DescriptorRecord> {
        (0..self.len())
            .map(|i| DescriptorRecord::new(self.ids[i].clone(), self.vector(i).to_vec()))
            .collect()
    }
}

/// Builds an index, keeping insertion order. Every record must be
/// unit-norm, share one dimension, and carry a unique id.
pub fn build_index(records: &[DescriptorRecord]) -> Result<DescriptorIndex> {
    let dim = records.first().map_or(0, DescriptorRecord::dim);
    let mut seen = HashSet::with_capacity(records.len());
    let mut data = Vec::with_capacity(records.len() * dim);
    let mut ids = Vec::with_capacity(records.len());
    for rec in records {
        if rec.dim() != dim {
            return Err(Error::MixedDims {
                first: dim,
                other: rec.dim(),
            });
        }
        if !rec.is_normalized() {
            return Err(Error::NotNormalized(rec.image_id.clone()));
        }
        if !seen.insert(rec.image_id.as_str()) {
            return Err(Error::DuplicateId(rec.image_id.clone()));
        }
        ids.push(rec.image_id.clone());
        data.extend_from_slice(&rec.values);
    }
    Ok(DescriptorIndex { dim, ids, data })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub image_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

impl RankedList {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.image_id.as_str())
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Descending score, then ascending id.
fn rank_order(ids: &[String]) -> impl Fn(&(usize, f64), &(usize, f64)) -> Ordering + '_ {
    move |a, b| b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0]))
}

/// Scores every entry against `query` and returns the top `k` (all when
/// `None`).
pub fn search(
    index: &DescriptorIndex,
    query_id: &str,
    query: &[f32],
    k: Option<usize>,
    exec: Execution,
) -> Result<RankedList> {
    let scored = top_k(index, query, k, exec)?;
    Ok(RankedList {
        query_id: query_id.to_owned(),
        hits: scored
            .into_iter()
            .map(|(i, score)| Hit {
                image_id: index.ids[i].clone(),
                score,
            })
            .collect(),
    })
}

fn top_k(
    index: &DescriptorIndex,
    query: &[f32],
    k: Option<usize>,
    exec: Execution,
) -> Result<Vec<(usize, f64)>> {
    if !index.is_empty() && query.len() != index.dim {
        return Err(Error::DimMismatch {
            expected: index.dim,
            found: query.len(),
        });
    }
    let n = index.len();
    let chunks = n.div_ceil(SCAN_CHUNK);
    let mut scored: Vec<(usize, f64)> = exec
        .map_range(chunks, |c| {
            (c * SCAN_CHUNK..((c + 1) * SCAN_CHUNK).min(n))
                .map(|i| (i, dot(index.vector(i), query).clamp(-1.0, 1.0)))
                .collect::<Vec<_>>()
        })
        .concat();
    let cmp = rank_order(&index.ids);
    let k = k.unwrap_or(n).min(n);
    if k < n && k > 0 {
        scored.select_nth_unstable_by(k - 1, &cmp);
    }
    scored.truncate(k);
    scored.sort_by(&cmp);
    Ok(scored)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryExpansion {
    /// Number of top results averaged in; 0 disables expansion.
    pub k: usize,
    pub include_query: bool,
}

impl Default for QueryExpansion {
    fn default() -> Self {
        Self {
            k: 10,
            include_query: true,
        }
    }
}

/// Normalized mean of the query and its top-`k` neighbours. `k` larger
/// than the index uses every entry.
pub fn average_query_expansion(
    index: &DescriptorIndex,
    query: &[f32],
    qe: QueryExpansion,
    exec: Execution,
) -> Result<Vec<f32>> {
    if index.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let top = top_k(index, query, Some(qe.k), exec)?;
    let mut acc = vec![0.0f64; index.dim];
    if qe.include_query {
        acc.iter_mut()
            .zip(query)
            .for_each(|(a, &q)| *a += f64::from(q));
    }
    for &(i, _) in &top {
        acc.iter_mut()
            .zip(index.vector(i))
            .for_each(|(a, &v)| *a += f64::from(v));
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm.is_nan() || norm <= 1e-12 {
        return Err(Error::ZeroExpansion);
    }
    Ok(acc.into_iter().map(|v| (v / norm) as f32).collect())
}

/// Searches once, or twice with an expanded query when `qe.k > 0`.
pub fn search_expanded(
    index: &DescriptorIndex,
    query_id: &str,
    query: &[f32],
    k: Option<usize>,
    qe: QueryExpansion,
    exec: Execution,
) -> Result<RankedList> {
    if qe.k == 0 {
        return search(index, query_id, query, k, exec);
    }
    let expanded = average_query_expansion(index, query, qe, exec)?;
    search(index, query_id, &expanded, k, exec)
}

/// Runs every query; parallel across queries under `exec`, each scan
/// sequential so nested pools are not needed.
pub fn search_batch(
    index: &DescriptorIndex,
    queries: &[DescriptorRecord],
    k: Option<usize>,
    qe: QueryExpansion,
    exec: Execution,
) -> Result<Vec<RankedList>> {
    exec.try_map(queries, |q| {
        search_expanded(index, &q.image_id, &q.values, k, qe, Execution::Sequential)
    })
}

/// One line per hit: `query_id<TAB>image_id<TAB>rank<TAB>score`, rank
/// starting at 1, score with six decimals.
pub fn format_rankings(lists: &[RankedList]) -> String {
    let mut out = String::new();
    for list in lists {
        for (rank, hit) in list.hits.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6}",
                list.query_id,
                hit.image_id,
                rank + 1,
                hit.score
            );
        }
    }
    out
}

/// Parses [`format_rankings`] output. Blank lines and `#` comments are
/// skipped; each query's lines must be contiguous with consecutive ranks.
pub fn parse_rankings(text: &str) -> Result<Vec<RankedList>> {
    let malformed = |line: usize, detail: &str| Error::Malformed {
        what: "rankings",
        detail: format!("line {line}: {detail}"),
    };
    let mut lists: Vec<RankedList> = Vec::new();
    let mut seen = HashSet::new();
    for (no, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [query, image, rank, score] = fields[..] else {
            return Err(malformed(no, "expected 4 tab-separated fields"));
        };
        let rank: usize = rank.parse().map_err(|_| malformed(no, "bad rank"))?;
        let score: f64 = score.parse().map_err(|_| malformed(no, "bad score"))?;
        let continuing = lists.last().is_some_and(|l| l.query_id == query);
        if !continuing {
            if !seen.insert(query.to_owned()) {
                return Err(malformed(no, "query lines are not contiguous"));
            }
            lists.push(RankedList {
                query_id: query.to_owned(),
                hits: Vec::new(),
            });
        }
        let list = lists.last_mut().unwrap();
        if rank != list.hits.len() + 1 {
            return Err(malformed(no, "ranks must be consecutive from 1"));
        }
        list.hits.push(Hit {
            image_id: image.to_owned(),
            score,
        });
    }
    Ok(lists)
}
