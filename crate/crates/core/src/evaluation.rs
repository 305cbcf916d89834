//! Oxford/Paris-style ground truth and average precision.
//!
//! A ground-truth directory holds, per query `q`, the files
//! `q_query.txt` (`name x1 y1 x2 y2`), `q_good.txt`, `q_ok.txt` and
//! `q_junk.txt` (one image name per line). Positives are `good ∪ ok`; junk
//! images are skipped in the ranking as if absent.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::retrieval::RankedList;

/// Prefix on image names inside Oxford query files.
const OXFORD_QUERY_PREFIX: &str = "oxc1_";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthEntry {
    pub query_id: String,
    pub query_image_id: String,
    pub crop_box: CropBox,
    pub good: BTreeSet<String>,
    pub ok: BTreeSet<String>,
    pub junk: BTreeSet<String>,
}

impl GroundTruthEntry {
    pub fn is_positive(&self, id: &str) -> bool {
        self.good.contains(id) || self.ok.contains(id)
    }
}

fn gt_err(query: &str, detail: impl fmt::Display) -> Error {
    Error::GroundTruth(format!("{query}: {detail}"))
}

fn parse_list(query: &str, which: &str, text: &str) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for line in text.lines() {
        let mut tokens = line.split_whitespace();
        match (tokens.next(), tokens.next()) {
            (None, _) => {}
            (Some(name), None) => {
                out.insert(name.to_owned());
            }
            (Some(_), Some(_)) => {
                return Err(gt_err(
                    query,
                    format!("{which} list line {line:?} has more than one name"),
                ))
            }
        }
    }
    Ok(out)
}

/// Builds one entry from the text of its four files.
pub fn parse_entry(
    query_id: &str,
    query: &str,
    good: &str,
    ok: &str,
    junk: &str,
) -> Result<GroundTruthEntry> {
    let mut lines = query.lines().filter(|l| !l.trim().is_empty());
    let line = lines
        .next()
        .ok_or_else(|| gt_err(query_id, "empty query file"))?;
    if lines.next().is_some() {
        return Err(gt_err(query_id, "query file has more than one line"));
    }
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let [name, x1, y1, x2, y2] = tokens[..] else {
        return Err(gt_err(query_id, format!("malformed query line {line:?}")));
    };
    let coord = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| gt_err(query_id, format!("bad coordinate {s:?}")))
    };
    let crop_box = CropBox {
        x1: coord(x1)?,
        y1: coord(y1)?,
        x2: coord(x2)?,
        y2: coord(y2)?,
    };
    if !(crop_box.x1 < crop_box.x2 && crop_box.y1 < crop_box.y2) {
        return Err(gt_err(
            query_id,
            "crop box must satisfy x1 < x2 and y1 < y2",
        ));
    }
    let entry = GroundTruthEntry {
        query_id: query_id.to_owned(),
        query_image_id: name
            .strip_prefix(OXFORD_QUERY_PREFIX)
            .unwrap_or(name)
            .to_owned(),
        crop_box,
        good: parse_list(query_id, "good", good)?,
        ok: parse_list(query_id, "ok", ok)?,
        junk: parse_list(query_id, "junk", junk)?,
    };
    for (a, b, sa, sb) in [
        (&entry.good, &entry.ok, "good", "ok"),
        (&entry.good, &entry.junk, "good", "junk"),
        (&entry.ok, &entry.junk, "ok", "junk"),
    ] {
        if let Some(id) = a.intersection(b).next() {
            return Err(gt_err(query_id, format!("{id:?} is in both {sa} and {sb}")));
        }
    }
    Ok(entry)
}

/// Reads every `*_query.txt` in `dir` (sorted by query id).
pub fn parse_ground_truth(dir: impl AsRef<Path>) -> Result<Vec<GroundTruthEntry>> {
    let dir = dir.as_ref();
    let mut queries = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        if let Some(q) = name.to_str().and_then(|n| n.strip_suffix("_query.txt")) {
            queries.push(q.to_owned());
        }
    }
    queries.sort();
    let read = |q: &str, kind: &str| -> Result<String> {
        let path = dir.join(format!("{q}_{kind}.txt"));
        fs::read_to_string(&path)
            .map_err(|e| gt_err(q, format!("cannot read {}: {e}", path.display())))
    };
    queries
        .iter()
        .map(|q| {
            parse_entry(
                q,
                &read(q, "query")?,
                &read(q, "good")?,
                &read(q, "ok")?,
                &read(q, "junk")?,
            )
        })
        .collect()
}

/// Writes `entries` in the layout [`parse_ground_truth`] reads.
pub fn write_ground_truth(dir: impl AsRef<Path>, entries: &[GroundTruthEntry]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for e in entries {
        let b = &e.crop_box;
        let query = format!(
            "{OXFORD_QUERY_PREFIX}{} {} {} {} {}\n",
            e.query_image_id, b.x1, b.y1, b.x2, b.y2
        );
        fs::write(dir.join(format!("{}_query.txt", e.query_id)), query)?;
        for (kind, set) in [("good", &e.good), ("ok", &e.ok), ("junk", &e.junk)] {
            let text: String = set.iter().map(|id| format!("{id}\n")).collect();
            fs::write(dir.join(format!("{}_{kind}.txt", e.query_id)), text)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApVariant {
    /// Original Oxford benchmark script: precision averaged between
    /// consecutive recall steps, starting from precision 1.
    #[default]
    Trapezoidal,
    /// Mean of the precision at each positive's rank.
    Rectangular,
}

impl fmt::Display for ApVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ApVariant::Trapezoidal => "trapezoidal",
            ApVariant::Rectangular => "rectangular",
        })
    }
}

impl FromStr for ApVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trapezoidal" => Ok(ApVariant::Trapezoidal),
            "rectangular" => Ok(ApVariant::Rectangular),
            other => Err(Error::InvalidParameter {
                name: "ap_variant",
                detail: format!("expected trapezoidal or rectangular, got {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApOptions {
    pub variant: ApVariant,
    /// Drop the query's own source image from its ranking and positives.
    pub exclude_query_image: bool,
}

impl Default for ApOptions {
    fn default() -> Self {
        Self {
            variant: ApVariant::Trapezoidal,
            exclude_query_image: true,
        }
    }
}

/// Average precision of one ranking. Positives missing from the ranking
/// count as never retrieved.
pub fn average_precision(
    ranked: &RankedList,
    entry: &GroundTruthEntry,
    opts: ApOptions,
) -> Result<f64> {
    let skip_self = |id: &str| opts.exclude_query_image && id == entry.query_image_id;
    let n_pos = entry
        .good
        .iter()
        .chain(&entry.ok)
        .filter(|id| !skip_self(id))
        .count();
    if n_pos == 0 {
        return Err(Error::NoPositives(entry.query_id.clone()));
    }
    let n_pos = n_pos as f64;

    let mut ap = 0.0;
    let mut hits = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut prev_precision = 1.0;
    for id in ranked.ids() {
        if entry.junk.contains(id) || skip_self(id) {
            continue;
        }
        seen += 1;
        let positive = entry.is_positive(id);
        if positive {
            hits += 1;
        }
        let recall = hits as f64 / n_pos;
        let precision = hits as f64 / seen as f64;
        match opts.variant {
            ApVariant::Trapezoidal => {
                ap += (recall - prev_recall) * (prev_precision + precision) / 2.0;
            }
            ApVariant::Rectangular => {
                if positive {
                    ap += precision / n_pos;
                }
            }
        }
        prev_recall = recall;
        prev_precision = precision;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub variant: ApVariant,
    pub per_query: Vec<(String, f64)>,
    pub map: f64,
}

impl MapReport {
    /// Per-query table followed by the machine-readable `mAP` line.
    pub fn to_text(&self) -> String {
        let mut out = format!("# ap_variant={}\nquery\tAP\n", self.variant);
        for (q, ap) in &self.per_query {
            let _ = writeln!(out, "{q}\t{ap:.6}");
        }
        let _ = writeln!(out, "mAP {:.6}", self.map);
        out
    }
}

/// Unweighted mean AP over the ground-truth queries, in ground-truth order.
pub fn mean_average_precision(
    rankings: &[RankedList],
    gts: &[GroundTruthEntry],
    opts: ApOptions,
) -> Result<MapReport> {
    if gts.is_empty() {
        return Err(Error::GroundTruth("no queries".into()));
    }
    let by_query: HashMap<&str, &RankedList> =
        rankings.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let per_query = gts
        .iter()
        .map(|gt| {
            let ranked = by_query
                .get(gt.query_id.as_str())
                .ok_or_else(|| Error::MissingQuery(gt.query_id.clone()))?;
            Ok((gt.query_id.clone(), average_precision(ranked, gt, opts)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let map = per_query.iter().map(|(_, ap)| ap).sum::<f64>() / per_query.len() as f64;
    Ok(MapReport {
        variant: opts.variant,
        per_query,
        map,
    })
}
