use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use pwa_core::aggregation::{aggregate_pwa, compute_weights, write_pgm, RawDescriptor};
use pwa_core::detector::{
    load_detector_set, save_detector_set, select_random_detectors, sum_pool, ChannelAccumulator,
};
use pwa_core::evaluation::parse_ground_truth;
use pwa_core::pipeline::{max_feasible_dim, Corpus, NamedTensor, Pipeline};
use pwa_core::postprocess::{apply_postprocess_batch, load_whitening, save_whitening};
use pwa_core::retrieval::{format_rankings, parse_rankings, search_batch};
use pwa_core::store::{read_descriptors, read_tensor, write_descriptors};
use pwa_core::{build_index, fit_whitening, mean_average_precision, select_detectors, Execution};

use crate::config::{AblateAxis, PipelineConfig};
use crate::error::{AtPath, CliError, CliResult};

/// Tensors are read and reduced this many at a time, so memory stays
/// bounded by the chunk rather than the collection.
const CHUNK: usize = 64;

fn require<'a>(value: &'a Option<PathBuf>, key: &'static str) -> CliResult<&'a Path> {
    value.as_deref().ok_or(CliError::MissingKey(key))
}

/// `.pwat` files in `dir`, sorted by file name; the stem is the image id.
fn tensor_files(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if path.extension().is_some_and(|e| e == "pwat") && path.is_file() {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| CliError::Core {
                    path: path.clone(),
                    source: pwa_core::Error::InvalidId,
                })?
                .to_owned();
            out.push((stem, path));
        }
    }
    out.sort();
    Ok(out)
}

fn load_tensors(dir: &Path, exec: Execution) -> CliResult<Vec<NamedTensor>> {
    let files = tensor_files(dir)?;
    exec.map(&files, |(id, path)| {
        read_tensor(path).at(path).map(|t| (id.clone(), t))
    })
    .into_iter()
    .collect()
}

fn write_text(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).at(p),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).at(Path::new("<stdout>"))
        }
    }
}

fn note(msg: impl AsRef<str>) {
    eprintln!("pwa: {}", msg.as_ref());
}

pub fn fit_detectors(cfg: &PipelineConfig) -> CliResult<()> {
    let exec = cfg.execution();
    let mut dirs = vec![require(&cfg.tensors, "tensors")?];
    if cfg.fit_with_queries {
        dirs.push(require(&cfg.query_tensors, "query_tensors")?);
    }
    let out = require(&cfg.detectors, "detectors")?;

    let mut acc = ChannelAccumulator::new();
    for dir in dirs {
        let files = tensor_files(dir)?;
        for chunk in files.chunks(CHUNK) {
            let pooled =
                exec.try_map(chunk, |(_, p)| read_tensor(p).at(p).map(|t| sum_pool(&t)))?;
            for ((_, path), p) in chunk.iter().zip(&pooled) {
                acc.push_pooled(p).at(path)?;
            }
        }
    }
    let stats = acc.finish()?;
    let set = if cfg.selection == "random" {
        select_random_detectors(&stats, cfg.n_detectors, cfg.seed)?
    } else {
        select_detectors(&stats, cfg.n_detectors)?
    };
    save_detector_set(out, &set).at(out)?;
    note(format!(
        "selected {} of {} channels from {} tensors: {:?}",
        set.len(),
        set.source_channels(),
        stats.sample_count,
        set.selected()
    ));
    Ok(())
}

pub fn aggregate(cfg: &PipelineConfig) -> CliResult<()> {
    let exec = cfg.execution();
    let dir = require(&cfg.tensors, "tensors")?;
    let det_path = require(&cfg.detectors, "detectors")?;
    let out = require(&cfg.raw, "raw")?;
    let params = cfg.pwa_params()?;
    let detectors = load_detector_set(det_path).at(det_path)?;

    let files = tensor_files(dir)?;
    let mut records = Vec::with_capacity(files.len());
    for chunk in files.chunks(CHUNK) {
        let raws = exec.try_map(chunk, |(id, p)| {
            let t = read_tensor(p).at(p)?;
            aggregate_pwa(id.clone(), &t, &detectors, params).at(p)
        })?;
        records.extend(raws.iter().map(RawDescriptor::to_record));
    }
    write_descriptors(out, &records).at(out)?;
    note(format!(
        "aggregated {} images into {}-dimensional raw descriptors",
        records.len(),
        detectors.len() * detectors.source_channels()
    ));
    Ok(())
}

fn read_raw(path: &Path) -> CliResult<Vec<RawDescriptor>> {
    let records = read_descriptors(path).at(path)?;
    Ok(records.iter().map(RawDescriptor::from_record).collect())
}

pub fn fit_whitening_cmd(cfg: &PipelineConfig) -> CliResult<()> {
    let raw_path = require(&cfg.raw, "raw")?;
    let out = require(&cfg.whitening, "whitening")?;
    let training = read_raw(raw_path)?;
    let dim = training.first().map_or(0, |r| r.values.len());
    let max = max_feasible_dim(dim, training.len());
    let m = cfg.target_dim.min(max);
    if m < cfg.target_dim {
        note(format!(
            "target_dim {} capped to {} ({} training vectors of dimension {})",
            cfg.target_dim,
            m,
            training.len(),
            dim
        ));
    }
    let fit = fit_whitening(&training, m, cfg.epsilon, cfg.execution()).at(raw_path)?;
    if fit.truncated() {
        note(format!(
            "kept {} of {} directions; the rest fell below the singular value floor",
            fit.model.output_dim(),
            fit.requested_dim
        ));
    }
    save_whitening(out, &fit.model).at(out)?;
    note(format!(
        "whitening {} -> {} dimensions",
        fit.model.input_dim(),
        fit.model.output_dim()
    ));
    Ok(())
}

pub fn postprocess(cfg: &PipelineConfig) -> CliResult<()> {
    let raw_path = require(&cfg.raw, "raw")?;
    let model_path = require(&cfg.whitening, "whitening")?;
    let out = require(&cfg.descriptors, "descriptors")?;
    let raws = read_raw(raw_path)?;
    let model = load_whitening(model_path).at(model_path)?;
    let records =
        apply_postprocess_batch(&raws, &model, cfg.renormalize, cfg.execution()).at(raw_path)?;
    write_descriptors(out, &records).at(out)?;
    note(format!("post-processed {} descriptors", records.len()));
    Ok(())
}

pub fn index(cfg: &PipelineConfig) -> CliResult<()> {
    let input = require(&cfg.descriptors, "descriptors")?;
    let out = require(&cfg.index, "index")?;
    let records = read_descriptors(input).at(input)?;
    let index = build_index(&records).at(input)?;
    write_descriptors(out, &index.records()).at(out)?;
    note(format!(
        "indexed {} descriptors of dimension {}",
        index.len(),
        index.dim()
    ));
    Ok(())
}

pub fn search(cfg: &PipelineConfig) -> CliResult<()> {
    let index_path = require(&cfg.index, "index")?;
    let query_path = require(&cfg.queries, "queries")?;
    let records = read_descriptors(index_path).at(index_path)?;
    let index = build_index(&records).at(index_path)?;
    let queries = read_descriptors(query_path).at(query_path)?;
    let k = (cfg.top_k > 0).then_some(cfg.top_k);
    let lists =
        search_batch(&index, &queries, k, cfg.query_expansion(), cfg.execution()).at(query_path)?;
    let text = cfg.echo("# ") + &format_rankings(&lists);
    write_text(cfg.rankings.as_deref(), &text)?;
    note(format!(
        "ranked {} queries against {} images",
        lists.len(),
        index.len()
    ));
    Ok(())
}

pub fn eval(cfg: &PipelineConfig) -> CliResult<()> {
    let rank_path = require(&cfg.rankings, "rankings")?;
    let gt_dir = require(&cfg.ground_truth, "ground_truth")?;
    let text = fs::read_to_string(rank_path).at(rank_path)?;
    let rankings = parse_rankings(&text).at(rank_path)?;
    let gts = parse_ground_truth(gt_dir).at(gt_dir)?;
    let report = mean_average_precision(&rankings, &gts, cfg.ap_options()).at(rank_path)?;
    if let Some(path) = cfg.report.as_deref() {
        fs::write(path, cfg.echo("# ") + &report.to_text()).at(path)?;
    }
    println!("mAP {:.6}", report.map);
    Ok(())
}

pub fn ablate(cfg: &PipelineConfig) -> CliResult<()> {
    let exec = cfg.execution();
    let db_dir = require(&cfg.tensors, "tensors")?;
    let q_dir = require(&cfg.query_tensors, "query_tensors")?;
    let gt_dir = require(&cfg.ground_truth, "ground_truth")?;
    if cfg.ablate_grid.is_empty() {
        return Err(crate::config::ConfigError("ablate_grid is empty".into()).into());
    }
    let database = load_tensors(db_dir, exec)?;
    let queries = load_tensors(q_dir, exec)?;
    let training = match cfg.train_tensors.as_deref() {
        Some(dir) => Some(load_tensors(dir, exec)?),
        None => None,
    };
    let ground_truth = parse_ground_truth(gt_dir).at(gt_dir)?;
    let corpus = Corpus {
        database: &database,
        queries: &queries,
        training: training.as_deref(),
        ground_truth: &ground_truth,
    };
    let pipeline = Pipeline::new(cfg.pipeline_params()?, exec);
    let rows = match cfg.ablate_axis {
        AblateAxis::Detectors => pipeline.ablate_detectors(&corpus, &cfg.ablate_grid)?,
        AblateAxis::Dims => pipeline.ablate_dims(&corpus, &cfg.ablate_grid)?,
    };
    let mut text = cfg.echo("# ") + "n_detectors\toutput_dim\tmAP\n";
    for row in &rows {
        text += &format!("{}\t{}\t{:.6}\n", row.n_detectors, row.output_dim, row.map);
    }
    write_text(cfg.output.as_deref(), &text)
}

pub fn dump_weights(cfg: &PipelineConfig) -> CliResult<()> {
    let tensor_path = require(&cfg.tensor, "tensor")?;
    let det_path = require(&cfg.detectors, "detectors")?;
    let out_dir = require(&cfg.output, "output")?;
    let params = cfg.pwa_params()?;
    let tensor = read_tensor(tensor_path).at(tensor_path)?;
    let detectors = load_detector_set(det_path).at(det_path)?;
    if tensor.channels() != detectors.source_channels() {
        return Err(CliError::Core {
            path: tensor_path.to_owned(),
            source: pwa_core::Error::DimMismatch {
                expected: detectors.source_channels(),
                found: tensor.channels(),
            },
        });
    }
    fs::create_dir_all(out_dir).at(out_dir)?;
    let stem = tensor_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("tensor");
    for (rank, &channel) in detectors.selected().iter().enumerate() {
        let map = compute_weights(&tensor, channel, params).at(tensor_path)?;
        let path = out_dir.join(format!("{stem}_d{rank:03}_c{channel:04}.pgm"));
        write_pgm(&path, &map).at(&path)?;
    }
    note(format!(
        "wrote {} weight maps to {}",
        detectors.len(),
        out_dir.display()
    ));
    Ok(())
}
