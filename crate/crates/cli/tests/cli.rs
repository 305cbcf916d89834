mod common;

use std::fs;

use common::*;
use pwa_core::detector::load_detector_set;
use pwa_core::pipeline::{Corpus, Pipeline, PipelineParams};
use pwa_core::retrieval::QueryExpansion;
use pwa_core::store::write_tensor;
use pwa_core::synthetic::{planted_corpus, PlantedSpec};
use pwa_core::{Execution, FeatureMapTensor};

fn default_fixture() -> (
    tempfile::TempDir,
    Layout,
    pwa_core::synthetic::PlantedCorpus,
) {
    let dir = tempfile::tempdir().unwrap();
    let corpus = planted_corpus(&PlantedSpec::default(), 9);
    let layout = write_corpus(dir.path(), &corpus);
    (dir, layout, corpus)
}

#[test]
fn fit_detectors_recovers_planted_channels() {
    let (_dir, l, corpus) = default_fixture();
    let det = l.path("det.pwas");
    pwa_ok(&[
        "fit-detectors",
        "--tensors",
        s(&l.db),
        "--detectors",
        &det,
        "--n-detectors",
        "4",
    ]);
    let set = load_detector_set(&det).unwrap();
    let mut picked = set.selected().to_vec();
    picked.sort_unstable();
    assert_eq!(picked, corpus.planted);
    assert_eq!(set.source_channels(), 16);
}

#[test]
fn four_tensors_two_planted_channels() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("db");
    fs::create_dir_all(&db).unwrap();
    // Channels 3 and 1 swing across images (3 the most); the rest barely move.
    for (i, (a, b)) in [(0.0f32, 1.0f32), (4.0, 9.0), (1.0, 0.0), (6.0, 5.0)]
        .into_iter()
        .enumerate()
    {
        let mut v = Vec::new();
        for c in 0..5 {
            let level = match c {
                1 => a,
                3 => b * 2.0,
                _ => 1.0 + 0.01 * i as f32,
            };
            v.extend([level; 4]);
        }
        write_tensor(
            db.join(format!("img{i}.pwat")),
            &FeatureMapTensor::new(5, 2, 2, v).unwrap(),
        )
        .unwrap();
    }
    let det = dir.path().join("det.pwas");
    pwa_ok(&[
        "fit-detectors",
        "--tensors",
        s(&db),
        "--detectors",
        s(&det),
        "--n-detectors",
        "2",
    ]);
    let first = fs::read(&det).unwrap();
    assert_eq!(load_detector_set(&det).unwrap().selected(), &[3, 1]);
    pwa_ok(&[
        "fit-detectors",
        "--tensors",
        s(&db),
        "--detectors",
        s(&det),
        "--n-detectors",
        "2",
    ]);
    assert_eq!(fs::read(&det).unwrap(), first);
}

#[test]
fn effective_config_goes_to_stderr() {
    let (_dir, l, _) = default_fixture();
    let cfg = l.root.join("run.cfg");
    fs::write(&cfg, "n_detectors=3\nalpha=1.5\n").unwrap();
    let out = pwa_ok(&[
        "fit-detectors",
        "--config",
        s(&cfg),
        "--alpha",
        "3",
        "--tensors",
        s(&l.db),
        "--detectors",
        &l.path("d.pwas"),
    ]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("# n_detectors=3\n"), "{err}");
    assert!(err.contains("# alpha=3\n"), "{err}");
    assert_eq!(load_detector_set(l.path("d.pwas")).unwrap().len(), 3);
}

#[test]
fn too_many_detectors_is_a_usage_error() {
    let (_dir, l, _) = default_fixture();
    let out = pwa(&[
        "fit-detectors",
        "--tensors",
        s(&l.db),
        "--detectors",
        &l.path("d.pwas"),
        "--n-detectors",
        "17",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!l.root.join("d.pwas").exists());
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let (_dir, l, _) = default_fixture();
    // Bad flag value and missing required setting are usage errors.
    assert_eq!(
        pwa(&["fit-detectors", "--n-detectors", "many"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        pwa(&["fit-detectors", "--tensors", s(&l.db)]).status.code(),
        Some(2)
    );
    assert_eq!(pwa(&["bogus-command"]).status.code(), Some(2));

    // Unreadable input is an i/o error.
    let missing = l.path("nope");
    let out = pwa(&[
        "fit-detectors",
        "--tensors",
        &missing,
        "--detectors",
        &l.path("d.pwas"),
        "--n-detectors",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(1));

    // A corrupt tensor is a data-format error.
    let bad = l.root.join("bad");
    fs::create_dir_all(&bad).unwrap();
    fs::write(bad.join("x.pwat"), b"PWAX\x01\0\0\0").unwrap();
    fs::write(bad.join("y.pwat"), b"PWAX\x01\0\0\0").unwrap();
    let out = pwa(&[
        "fit-detectors",
        "--tensors",
        s(&bad),
        "--detectors",
        &l.path("d.pwas"),
        "--n-detectors",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(3));

    // Identical tensors leave nothing to whiten: a numeric error.
    let flat = l.root.join("flat");
    fs::create_dir_all(&flat).unwrap();
    let t = FeatureMapTensor::new(2, 2, 2, vec![1.0; 8]).unwrap();
    for i in 0..3 {
        write_tensor(flat.join(format!("i{i}.pwat")), &t).unwrap();
    }
    let (det, raw) = (l.path("fd.pwas"), l.path("fraw.pwad"));
    pwa_ok(&[
        "fit-detectors",
        "--tensors",
        s(&flat),
        "--detectors",
        &det,
        "--n-detectors",
        "1",
    ]);
    pwa_ok(&[
        "aggregate",
        "--tensors",
        s(&flat),
        "--detectors",
        &det,
        "--raw",
        &raw,
    ]);
    let out = pwa(&[
        "fit-whitening",
        "--raw",
        &raw,
        "--whitening",
        &l.path("w.pwaw"),
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn chain_matches_in_process_pipeline() {
    let (_dir, l, corpus) = default_fixture();
    let cli_map = run_chain(&l, &["--n-detectors", "4", "--qe-k", "2"]);

    let params = PipelineParams {
        n_detectors: 4,
        qe: QueryExpansion {
            k: 2,
            include_query: true,
        },
        ..PipelineParams::default()
    };
    let run = Pipeline::new(params, Execution::Sequential)
        .run(&Corpus {
            database: &corpus.database,
            queries: &corpus.queries,
            training: None,
            ground_truth: &corpus.ground_truth,
        })
        .unwrap();
    assert_eq!(format!("{cli_map:.6}"), format!("{:.6}", run.report.map));

    let rankings = fs::read_to_string(l.root.join("rankings.txt")).unwrap();
    let cli_lists = pwa_core::retrieval::parse_rankings(&rankings).unwrap();
    let cli_ids: Vec<Vec<&str>> = cli_lists.iter().map(|r| r.ids().collect()).collect();
    let lib_ids: Vec<Vec<&str>> = run.rankings.iter().map(|r| r.ids().collect()).collect();
    assert_eq!(cli_ids, lib_ids);
    assert!(rankings.starts_with("# alpha=2\n"));
}

#[test]
fn separable_fixture_scores_perfect_map() {
    let spec = PlantedSpec {
        clutter: 0.0,
        amplitude_jitter: 0.0,
        max_shift: 0,
        ..PlantedSpec::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let l = write_corpus(dir.path(), &planted_corpus(&spec, 5));
    let map = run_chain(&l, &["--n-detectors", "4"]);
    assert_eq!(map, 1.0);
}

#[test]
fn reruns_are_byte_identical_in_both_execution_modes() {
    let (_dir, l, _) = default_fixture();
    run_chain(&l, &["--n-detectors", "4"]);
    let first = snapshot(&l);
    run_chain(&l, &["--n-detectors", "4"]);
    assert_eq!(first, snapshot(&l));

    run_chain(&l, &["--n-detectors", "4", "--parallel", "false"]);
    let sequential = snapshot(&l);
    for (name, (a, b)) in CHAIN_ARTIFACTS.iter().zip(first.iter().zip(&sequential)) {
        if name.ends_with(".txt") {
            // Text artifacts echo the config, which records the mode.
            let strip = |t: &[u8]| {
                String::from_utf8_lossy(t)
                    .lines()
                    .filter(|l| !l.starts_with("# parallel="))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            assert_eq!(strip(a), strip(b), "{name}");
        } else {
            assert_eq!(a, b, "{name}");
        }
    }
}

#[test]
fn ablate_emits_one_row_per_grid_point() {
    let (_dir, l, _) = default_fixture();
    let table = l.path("ablate.txt");
    pwa_ok(&[
        "ablate",
        "--tensors",
        s(&l.db),
        "--query-tensors",
        s(&l.queries),
        "--ground-truth",
        s(&l.gt),
        "--ablate-axis",
        "n",
        "--ablate-grid",
        "1,16",
        "--output",
        &table,
    ]);
    let text = fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect();
    assert_eq!(rows.len(), 2, "{text}");
    assert!(rows[0].starts_with("1\t") && rows[1].starts_with("16\t"));

    let out = pwa(&[
        "ablate",
        "--tensors",
        s(&l.db),
        "--query-tensors",
        s(&l.queries),
        "--ground-truth",
        s(&l.gt),
        "--ablate-grid",
        "1,17",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_over_dims_caps_infeasible_values() {
    let (_dir, l, _) = default_fixture();
    let out = pwa_ok(&[
        "ablate",
        "--tensors",
        s(&l.db),
        "--query-tensors",
        s(&l.queries),
        "--ground-truth",
        s(&l.gt),
        "--n-detectors",
        "4",
        "--ablate-axis",
        "m",
        "--ablate-grid",
        "2,8,100000",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let dims: Vec<usize> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(dims[..2], [2, 8]);
    assert!(dims[2] <= 47, "{dims:?}");
}

#[test]
fn eval_rejects_rankings_missing_a_query() {
    let (_dir, l, _) = default_fixture();
    run_chain(&l, &["--n-detectors", "4"]);
    let rank = l.root.join("rankings.txt");
    let text = fs::read_to_string(&rank).unwrap();
    let trimmed: String = text
        .lines()
        .filter(|line| !line.starts_with("q000_000\t"))
        .map(|line| format!("{line}\n"))
        .collect();
    fs::write(&rank, trimmed).unwrap();
    let out = pwa(&["eval", "--rankings", s(&rank), "--ground-truth", s(&l.gt)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("q000_000"));
}

#[test]
fn dump_weights_writes_one_pgm_per_detector() {
    let (_dir, l, corpus) = default_fixture();
    let det = l.path("det.pwas");
    pwa_ok(&[
        "fit-detectors",
        "--tensors",
        s(&l.db),
        "--detectors",
        &det,
        "--n-detectors",
        "3",
    ]);
    let tensor = l.db.join(format!("{}.pwat", corpus.database[0].0));
    let out_dir = l.root.join("maps");
    pwa_ok(&[
        "dump-weights",
        "--tensor",
        s(&tensor),
        "--detectors",
        &det,
        "--output",
        s(&out_dir),
    ]);
    let mut names: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 3);
    let pgm = fs::read_to_string(out_dir.join(&names[0])).unwrap();
    assert!(pgm.starts_with("P2\n8 8\n255\n"));
}
