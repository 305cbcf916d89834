//! Flat `key=value` pipeline configuration.
//!
//! Values come from defaults, then an optional config file, then
//! command-line flags (one `--key` flag per entry, underscores spelled as
//! dashes). The effective configuration is echoed to stderr and into the
//! header of every text artifact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pwa_core::evaluation::ApOptions;
use pwa_core::pipeline::{PipelineParams, Selection};
use pwa_core::postprocess::DEFAULT_EPSILON;
use pwa_core::{ApVariant, Execution, PwaParams, QueryExpansion};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblateAxis {
    Detectors,
    Dims,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub alpha: f64,
    pub beta: f64,
    pub n_detectors: usize,
    pub target_dim: usize,
    pub epsilon: f64,
    pub renormalize: bool,
    pub selection: String,
    pub seed: u64,
    pub fit_with_queries: bool,
    pub qe_k: usize,
    pub qe_include_query: bool,
    pub top_k: usize,
    pub ap_variant: ApVariant,
    pub exclude_query_image: bool,
    pub parallel: bool,
    pub ablate_axis: AblateAxis,
    pub ablate_grid: Vec<usize>,

    pub tensors: Option<PathBuf>,
    pub query_tensors: Option<PathBuf>,
    pub train_tensors: Option<PathBuf>,
    pub tensor: Option<PathBuf>,
    pub detectors: Option<PathBuf>,
    pub raw: Option<PathBuf>,
    pub whitening: Option<PathBuf>,
    pub descriptors: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub rankings: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 2.0,
            n_detectors: 25,
            target_dim: 4096,
            epsilon: DEFAULT_EPSILON,
            renormalize: true,
            selection: "variance".into(),
            seed: 0,
            fit_with_queries: false,
            qe_k: 10,
            qe_include_query: true,
            top_k: 0,
            ap_variant: ApVariant::Trapezoidal,
            exclude_query_image: true,
            parallel: true,
            ablate_axis: AblateAxis::Detectors,
            ablate_grid: Vec::new(),
            tensors: None,
            query_tensors: None,
            train_tensors: None,
            tensor: None,
            detectors: None,
            raw: None,
            whitening: None,
            descriptors: None,
            queries: None,
            index: None,
            rankings: None,
            ground_truth: None,
            report: None,
            output: None,
        }
    }
}

/// Every recognised key with a one-line description, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("alpha", "power-normalization exponent"),
    ("beta", "power-scaling exponent"),
    ("n_detectors", "number of part detectors N"),
    (
        "target_dim",
        "output dimension M (capped by what the training set supports)",
    ),
    ("epsilon", "relative floor on singular values"),
    ("renormalize", "l2-normalize after whitening (true/false)"),
    ("selection", "detector selection: variance or random"),
    ("seed", "seed for random selection"),
    (
        "fit_with_queries",
        "include query tensors when fitting detectors",
    ),
    ("qe_k", "average query expansion depth (0 = off)"),
    (
        "qe_include_query",
        "include the query itself in the expansion average",
    ),
    ("top_k", "hits written per query (0 = whole database)"),
    ("ap_variant", "trapezoidal or rectangular"),
    (
        "exclude_query_image",
        "drop each query's source image from its ranking",
    ),
    ("parallel", "use the data-parallel kernels"),
    ("ablate_axis", "ablation axis: n or m"),
    ("ablate_grid", "comma-separated grid values"),
    ("tensors", "directory of database .pwat tensors"),
    ("query_tensors", "directory of query .pwat tensors"),
    (
        "train_tensors",
        "directory of .pwat tensors for fitting whitening (default: database)",
    ),
    ("tensor", "single .pwat tensor"),
    ("detectors", "detector set file (.pwas)"),
    ("raw", "raw descriptor file (.pwad)"),
    ("whitening", "whitening model file (.pwaw)"),
    ("descriptors", "post-processed descriptor file (.pwad)"),
    ("queries", "post-processed query descriptor file (.pwad)"),
    ("index", "index file (.pwad)"),
    ("rankings", "rankings text file"),
    (
        "ground_truth",
        "directory of Oxford-style ground-truth files",
    ),
    ("report", "evaluation report file"),
    ("output", "output file or directory"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| ConfigError(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(ConfigError(format!("invalid boolean {other:?} for {key}"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "n_detectors" => self.n_detectors = parse(key, value)?,
            "target_dim" => self.target_dim = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "renormalize" => self.renormalize = parse_bool(key, value)?,
            "selection" => {
                let v = value.trim();
                if v != "variance" && v != "random" {
                    return Err(ConfigError(format!(
                        "selection must be variance or random, got {v:?}"
                    )));
                }
                self.selection = v.to_owned();
            }
            "seed" => self.seed = parse(key, value)?,
            "fit_with_queries" => self.fit_with_queries = parse_bool(key, value)?,
            "qe_k" => self.qe_k = parse(key, value)?,
            "qe_include_query" => self.qe_include_query = parse_bool(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            "ap_variant" => {
                self.ap_variant = value
                    .trim()
                    .parse()
                    .map_err(|e: pwa_core::Error| ConfigError(e.to_string()))?
            }
            "exclude_query_image" => self.exclude_query_image = parse_bool(key, value)?,
            "parallel" => self.parallel = parse_bool(key, value)?,
            "ablate_axis" => {
                self.ablate_axis = match value.trim() {
                    "n" | "N" => AblateAxis::Detectors,
                    "m" | "M" => AblateAxis::Dims,
                    other => {
                        return Err(ConfigError(format!(
                            "ablate_axis must be n or m, got {other:?}"
                        )))
                    }
                }
            }
            "ablate_grid" => {
                self.ablate_grid = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_, _>>()?
            }
            "tensors" => self.tensors = opt_path(value),
            "query_tensors" => self.query_tensors = opt_path(value),
            "train_tensors" => self.train_tensors = opt_path(value),
            "tensor" => self.tensor = opt_path(value),
            "detectors" => self.detectors = opt_path(value),
            "raw" => self.raw = opt_path(value),
            "whitening" => self.whitening = opt_path(value),
            "descriptors" => self.descriptors = opt_path(value),
            "queries" => self.queries = opt_path(value),
            "index" => self.index = opt_path(value),
            "rankings" => self.rankings = opt_path(value),
            "ground_truth" => self.ground_truth = opt_path(value),
            "report" => self.report = opt_path(value),
            "output" => self.output = opt_path(value),
            other => return Err(ConfigError(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file: blank lines and `#` comments ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key=value", no + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "alpha" => self.alpha.to_string(),
            "beta" => self.beta.to_string(),
            "n_detectors" => self.n_detectors.to_string(),
            "target_dim" => self.target_dim.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "renormalize" => self.renormalize.to_string(),
            "selection" => self.selection.clone(),
            "seed" => self.seed.to_string(),
            "fit_with_queries" => self.fit_with_queries.to_string(),
            "qe_k" => self.qe_k.to_string(),
            "qe_include_query" => self.qe_include_query.to_string(),
            "top_k" => self.top_k.to_string(),
            "ap_variant" => self.ap_variant.to_string(),
            "exclude_query_image" => self.exclude_query_image.to_string(),
            "parallel" => self.parallel.to_string(),
            "ablate_axis" => match self.ablate_axis {
                AblateAxis::Detectors => "n".into(),
                AblateAxis::Dims => "m".into(),
            },
            "ablate_grid" => self
                .ablate_grid
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "tensors" => show_path(&self.tensors),
            "query_tensors" => show_path(&self.query_tensors),
            "train_tensors" => show_path(&self.train_tensors),
            "tensor" => show_path(&self.tensor),
            "detectors" => show_path(&self.detectors),
            "raw" => show_path(&self.raw),
            "whitening" => show_path(&self.whitening),
            "descriptors" => show_path(&self.descriptors),
            "queries" => show_path(&self.queries),
            "index" => show_path(&self.index),
            "rankings" => show_path(&self.rankings),
            "ground_truth" => show_path(&self.ground_truth),
            "report" => show_path(&self.report),
            "output" => show_path(&self.output),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Effective configuration as `key=value` lines, each prefixed.
    pub fn echo(&self, prefix: &str) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            let _ = writeln!(out, "{prefix}{key}={}", self.value_of(key));
        }
        out
    }

    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn pwa_params(&self) -> pwa_core::Result<PwaParams> {
        PwaParams::new(self.alpha, self.beta)
    }

    pub fn query_expansion(&self) -> QueryExpansion {
        QueryExpansion {
            k: self.qe_k,
            include_query: self.qe_include_query,
        }
    }

    pub fn ap_options(&self) -> ApOptions {
        ApOptions {
            variant: self.ap_variant,
            exclude_query_image: self.exclude_query_image,
        }
    }

    pub fn selection(&self) -> Selection {
        if self.selection == "random" {
            Selection::Random { seed: self.seed }
        } else {
            Selection::Variance
        }
    }

    pub fn pipeline_params(&self) -> pwa_core::Result<PipelineParams> {
        Ok(PipelineParams {
            pwa: self.pwa_params()?,
            n_detectors: self.n_detectors,
            target_dim: self.target_dim,
            epsilon: self.epsilon,
            renormalize: self.renormalize,
            selection: self.selection(),
            qe: self.query_expansion(),
            ap: self.ap_options(),
        })
    }
}
