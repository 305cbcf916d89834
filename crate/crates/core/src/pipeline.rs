//! End-to-end composition of the retrieval pipeline.
//!
//! Mirrors the file-based command sequence exactly: raw descriptors pass
//! through `f32` the way they do when written to and read back from disk,
//! so an in-process run and a chained CLI run rank identically.

use crate::aggregation::{aggregate_batch, PwaParams, RawDescriptor};
use crate::detector::{
    fit_channel_stats_batch, select_detectors, select_random_detectors, ChannelStats, DetectorSet,
};
use crate::error::Result;
use crate::evaluation::{mean_average_precision, ApOptions, GroundTruthEntry, MapReport};
use crate::exec::Execution;
use crate::postprocess::{apply_postprocess_batch, fit_whitening, WhiteningModel, DEFAULT_EPSILON};
use crate::retrieval::{build_index, search_batch, QueryExpansion, RankedList};
use crate::store::DescriptorRecord;
use crate::tensor::FeatureMapTensor;

pub type NamedTensor = (String, FeatureMapTensor);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Top-variance channels.
    Variance,
    /// Seeded uniform random channels.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub pwa: PwaParams,
    pub n_detectors: usize,
    /// Requested output dimension; capped at what the training set supports.
    pub target_dim: usize,
    pub epsilon: f64,
    pub renormalize: bool,
    pub selection: Selection,
    pub qe: QueryExpansion,
    pub ap: ApOptions,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            pwa: PwaParams::default(),
            n_detectors: 25,
            target_dim: 4096,
            epsilon: DEFAULT_EPSILON,
            renormalize: true,
            selection: Selection::Variance,
            qe: QueryExpansion {
                k: 0,
                include_query: true,
            },
            ap: ApOptions::default(),
        }
    }
}

/// Largest output dimension a training set of `count` vectors of length
/// `dim` supports.
pub fn max_feasible_dim(dim: usize, count: usize) -> usize {
    dim.min(count.saturating_sub(1))
}

/// Database tensors, query tensors and ground truth for one evaluation.
/// `training` is the corpus the whitening is fitted on; `None` means the
/// database itself.
#[derive(Debug, Clone, Copy)]
pub struct Corpus<'a> {
    pub database: &'a [NamedTensor],
    pub queries: &'a [NamedTensor],
    pub training: Option<&'a [NamedTensor]>,
    pub ground_truth: &'a [GroundTruthEntry],
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub detectors: DetectorSet,
    pub output_dim: usize,
    pub rankings: Vec<RankedList>,
    pub report: MapReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub n_detectors: usize,
    pub output_dim: usize,
    pub map: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Pipeline {
    pub params: PipelineParams,
    pub exec: Execution,
}

impl Pipeline {
    pub fn new(params: PipelineParams, exec: Execution) -> Self {
        Self { params, exec }
    }

    pub fn channel_stats(&self, tensors: &[NamedTensor]) -> Result<ChannelStats> {
        let plain: Vec<FeatureMapTensor> = tensors.iter().map(|(_, t)| t.clone()).collect();
        fit_channel_stats_batch(&plain, self.exec)
    }

    pub fn select(&self, stats: &ChannelStats, n: usize) -> Result<DetectorSet> {
        match self.params.selection {
            Selection::Variance => select_detectors(stats, n),
            Selection::Random { seed } => select_random_detectors(stats, n, seed),
        }
    }

    /// Raw descriptors rounded through `f32`, as stored in `PWAD` files.
    pub fn raw_descriptors(
        &self,
        items: &[NamedTensor],
        detectors: &DetectorSet,
    ) -> Result<Vec<RawDescriptor>> {
        let raws = aggregate_batch(items, detectors, self.params.pwa, self.exec)?;
        Ok(raws
            .iter()
            .map(|r| RawDescriptor::from_record(&r.to_record()))
            .collect())
    }

    pub fn whitening(&self, training: &[RawDescriptor], m: usize) -> Result<WhiteningModel> {
        Ok(fit_whitening(training, m, self.params.epsilon, self.exec)?.model)
    }

    pub fn descriptors(
        &self,
        raws: &[RawDescriptor],
        model: &WhiteningModel,
    ) -> Result<Vec<DescriptorRecord>> {
        apply_postprocess_batch(raws, model, self.params.renormalize, self.exec)
    }

    pub fn rankings(
        &self,
        database: &[DescriptorRecord],
        queries: &[DescriptorRecord],
    ) -> Result<Vec<RankedList>> {
        let index = build_index(database)?;
        search_batch(&index, queries, None, self.params.qe, self.exec)
    }

    fn evaluate_with(
        &self,
        corpus: &Corpus<'_>,
        db_raw: &[RawDescriptor],
        q_raw: &[RawDescriptor],
        model: &WhiteningModel,
    ) -> Result<(Vec<RankedList>, MapReport)> {
        let db = self.descriptors(db_raw, model)?;
        let qs = self.descriptors(q_raw, model)?;
        let rankings = self.rankings(&db, &qs)?;
        let report = mean_average_precision(&rankings, corpus.ground_truth, self.params.ap)?;
        Ok((rankings, report))
    }

    /// Raw descriptors for database, queries and whitening training set.
    fn raw_all(
        &self,
        corpus: &Corpus<'_>,
        detectors: &DetectorSet,
    ) -> Result<(Vec<RawDescriptor>, Vec<RawDescriptor>, Vec<RawDescriptor>)> {
        let db = self.raw_descriptors(corpus.database, detectors)?;
        let q = self.raw_descriptors(corpus.queries, detectors)?;
        let train = match corpus.training {
            Some(t) => self.raw_descriptors(t, detectors)?,
            None => db.clone(),
        };
        Ok((db, q, train))
    }

    fn capped_dim(&self, train: &[RawDescriptor]) -> usize {
        let dim = train.first().map_or(0, |r| r.values.len());
        self.params
            .target_dim
            .min(max_feasible_dim(dim, train.len()))
            .max(1)
    }

    pub fn run(&self, corpus: &Corpus<'_>) -> Result<RunOutput> {
        let stats = self.channel_stats(corpus.database)?;
        let detectors = self.select(&stats, self.params.n_detectors)?;
        let (db, q, train) = self.raw_all(corpus, &detectors)?;
        let model = self.whitening(&train, self.capped_dim(&train))?;
        let (rankings, report) = self.evaluate_with(corpus, &db, &q, &model)?;
        Ok(RunOutput {
            detectors,
            output_dim: model.output_dim(),
            rankings,
            report,
        })
    }

    /// One row per detector count; every other parameter held fixed.
    pub fn ablate_detectors(
        &self,
        corpus: &Corpus<'_>,
        grid: &[usize],
    ) -> Result<Vec<AblationRow>> {
        let stats = self.channel_stats(corpus.database)?;
        grid.iter()
            .map(|&n| {
                let detectors = self.select(&stats, n)?;
                let (db, q, train) = self.raw_all(corpus, &detectors)?;
                let model = self.whitening(&train, self.capped_dim(&train))?;
                let (_, report) = self.evaluate_with(corpus, &db, &q, &model)?;
                Ok(AblationRow {
                    n_detectors: n,
                    output_dim: model.output_dim(),
                    map: report.map,
                })
            })
            .collect()
    }

    /// One row per output dimension, from a single fit truncated per row.
    /// Dimensions above what the training set supports are capped.
    pub fn ablate_dims(&self, corpus: &Corpus<'_>, grid: &[usize]) -> Result<Vec<AblationRow>> {
        let stats = self.channel_stats(corpus.database)?;
        let detectors = self.select(&stats, self.params.n_detectors)?;
        let (db, q, train) = self.raw_all(corpus, &detectors)?;
        let dim = train.first().map_or(0, |r| r.values.len());
        let max = max_feasible_dim(dim, train.len());
        let largest = grid.iter().copied().max().unwrap_or(1).min(max).max(1);
        let full = self.whitening(&train, largest)?;
        grid.iter()
            .map(|&m| {
                let model = full.truncate(m.min(full.output_dim()).max(1))?;
                let (_, report) = self.evaluate_with(corpus, &db, &q, &model)?;
                Ok(AblationRow {
                    n_detectors: detectors.len(),
                    output_dim: model.output_dim(),
                    map: report.map,
                })
            })
            .collect()
    }
}
