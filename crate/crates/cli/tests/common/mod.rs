#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pwa_core::evaluation::write_ground_truth;
use pwa_core::pipeline::NamedTensor;
use pwa_core::store::write_tensor;
use pwa_core::synthetic::PlantedCorpus;

pub fn pwa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwa"))
        .args(args)
        .output()
        .expect("pwa binary runs")
}

/// Runs `pwa` and panics with its stderr unless it succeeded.
pub fn pwa_ok(args: &[&str]) -> Output {
    let out = pwa(args);
    assert!(
        out.status.success(),
        "pwa {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn write_tensors(dir: &Path, items: &[NamedTensor]) {
    fs::create_dir_all(dir).unwrap();
    for (id, t) in items {
        write_tensor(dir.join(format!("{id}.pwat")), t).unwrap();
    }
}

pub struct Layout {
    pub root: PathBuf,
    pub db: PathBuf,
    pub queries: PathBuf,
    pub gt: PathBuf,
}

impl Layout {
    pub fn path(&self, name: &str) -> String {
        self.root.join(name).to_str().unwrap().to_owned()
    }
}

pub fn write_corpus(root: &Path, corpus: &PlantedCorpus) -> Layout {
    let layout = Layout {
        root: root.to_owned(),
        db: root.join("db"),
        queries: root.join("queries"),
        gt: root.join("gt"),
    };
    write_tensors(&layout.db, &corpus.database);
    write_tensors(&layout.queries, &corpus.queries);
    write_ground_truth(&layout.gt, &corpus.ground_truth).unwrap();
    layout
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs the file-based chain from tensors to an evaluation report and
/// returns the printed `mAP` value.
pub fn run_chain(l: &Layout, extra: &[&str]) -> f64 {
    let with = |mut args: Vec<String>| {
        args.extend(extra.iter().map(|a| a.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        pwa_ok(&refs)
    };
    let v = |a: &[&str]| a.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let (det, raw, qraw, white) = (
        l.path("det.pwas"),
        l.path("raw.pwad"),
        l.path("qraw.pwad"),
        l.path("white.pwaw"),
    );
    let (desc, qdesc, index, rank, report) = (
        l.path("desc.pwad"),
        l.path("qdesc.pwad"),
        l.path("index.pwad"),
        l.path("rankings.txt"),
        l.path("report.txt"),
    );
    with(v(&[
        "fit-detectors",
        "--tensors",
        s(&l.db),
        "--detectors",
        &det,
    ]));
    with(v(&[
        "aggregate",
        "--tensors",
        s(&l.db),
        "--detectors",
        &det,
        "--raw",
        &raw,
    ]));
    with(v(&[
        "aggregate",
        "--tensors",
        s(&l.queries),
        "--detectors",
        &det,
        "--raw",
        &qraw,
    ]));
    with(v(&["fit-whitening", "--raw", &raw, "--whitening", &white]));
    with(v(&[
        "postprocess",
        "--raw",
        &raw,
        "--whitening",
        &white,
        "--descriptors",
        &desc,
    ]));
    with(v(&[
        "postprocess",
        "--raw",
        &qraw,
        "--whitening",
        &white,
        "--descriptors",
        &qdesc,
    ]));
    with(v(&["index", "--descriptors", &desc, "--index", &index]));
    with(v(&[
        "search",
        "--index",
        &index,
        "--queries",
        &qdesc,
        "--rankings",
        &rank,
    ]));
    let out = with(v(&[
        "eval",
        "--rankings",
        &rank,
        "--ground-truth",
        s(&l.gt),
        "--report",
        &report,
    ]));
    let stdout = String::from_utf8(out.stdout).unwrap();
    stdout
        .lines()
        .find_map(|line| line.strip_prefix("mAP "))
        .expect("eval prints an mAP line")
        .trim()
        .parse()
        .unwrap()
}

/// Artifacts written by [`run_chain`].
pub const CHAIN_ARTIFACTS: &[&str] = &[
    "det.pwas",
    "raw.pwad",
    "qraw.pwad",
    "white.pwaw",
    "desc.pwad",
    "qdesc.pwad",
    "index.pwad",
    "rankings.txt",
    "report.txt",
];

pub fn snapshot(l: &Layout) -> Vec<Vec<u8>> {
    CHAIN_ARTIFACTS
        .iter()
        .map(|a| fs::read(l.root.join(a)).unwrap())
        .collect()
}
