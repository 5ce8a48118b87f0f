use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_dsvis");

/// 20 labeled 8x8 RGB images with masks; returns the manifest path.
fn toy_dataset(root: &Path) -> PathBuf {
    let mut lines = String::new();
    for i in 0..20u32 {
        let label = ["cat", "dog"][i as usize % 2];
        let img = image::RgbImage::from_fn(8, 8, |x, y| {
            let v = (x * 31 + y * 17 + i * 13) % 256;
            image::Rgb([
                v as u8,
                ((v * 7) % 256) as u8,
                ((x * y * 9 + i) % 256) as u8,
            ])
        });
        img.save(root.join(format!("img{i}.png"))).unwrap();
        let mask = image::GrayImage::from_fn(8, 8, |x, y| {
            image::Luma([if x + i % 3 < 5 && y >= i % 2 { 255 } else { 0 }])
        });
        mask.save(root.join(format!("mask{i}.png"))).unwrap();
        let split = if i % 4 == 0 { "val" } else { "train" };
        lines.push_str(&format!(
            "{{\"id\":\"s{i:02}\",\"image\":\"img{i}.png\",\"split\":\"{split}\",\"label\":\"{label}\",\"mask\":\"mask{i}.png\",\"metadata\":{{\"tags\":\"{label},pet\"}}}}\n"
        ));
    }
    let path = root.join("manifest.jsonl");
    fs::write(&path, lines).unwrap();
    path
}

fn dsvis(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("DSVIS_JOBS")
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(dir_files(&path));
        } else {
            out.push((
                path.strip_prefix(dir).unwrap().to_path_buf(),
                fs::read(&path).unwrap(),
            ));
        }
    }
    out.sort();
    out
}

#[test]
fn pca_smoke_writes_grid_and_eigenvalues() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = toy_dataset(tmp.path());
    let out = tmp.path().join("out");
    let res = dsvis(&[
        "pca",
        "--manifest",
        s(&manifest),
        "-o",
        s(&out),
        "--size",
        "8x8",
        "--top-k",
        "15",
    ]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );

    let grid = image::open(out.join("pca_grid.png")).unwrap();
    let (w, h) = dsvis_core::render::grid_dimensions(15, dsvis_core::Shape::new(8, 8, 3), 4);
    assert_eq!((grid.width() as usize, grid.height() as usize), (w, h));

    let eig = json(&out.join("pca_eigenvalues.json"));
    let values = eig["eigenvalues"].as_array().unwrap();
    assert_eq!(values.len(), 15);
    let v: Vec<f64> = values.iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(v.windows(2).all(|w| w[0] >= w[1]));

    let basis = dsvis_core::ComponentBasis::load(&out.join("pca_basis.json")).unwrap();
    assert_eq!(basis.k(), 15);
    assert_eq!(basis.eigenvalues(), v.as_slice());

    let run = json(&out.join("run.json"));
    assert_eq!(run["exit_code"], 0);
    assert_eq!(run["command"], "pca");
    assert!(run["outputs"].as_array().unwrap().len() >= 3);
}

#[test]
fn ica_without_pre_pca_k_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = toy_dataset(tmp.path());
    let out = tmp.path().join("out");
    let res = dsvis(&[
        "ica",
        "--manifest",
        s(&manifest),
        "-o",
        s(&out),
        "--size",
        "4x4",
        "--k",
        "2",
    ]);
    assert_eq!(res.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("--pre-pca-k"), "{stderr}");
    let run = json(&out.join("run.json"));
    assert_eq!(run["exit_code"], 1);
    assert!(run["error"].as_str().unwrap().contains("--pre-pca-k"));
}

#[test]
fn missing_manifest_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let missing = tmp.path().join("nope.jsonl");
    let res = dsvis(&[
        "pca",
        "--manifest",
        s(&missing),
        "-o",
        s(&out),
        "--size",
        "4x4",
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(json(&out.join("run.json"))["exit_code"], 2);
}

#[test]
fn bad_flag_still_records_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let res = dsvis(&["pca", "-o", s(&out), "--no-such-flag"]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(json(&out.join("run.json"))["exit_code"], 1);

    let res = dsvis(&[
        "spatial",
        "-o",
        s(&out),
        "--split",
        "a",
        "--compare",
        "a",
        "b",
    ]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(dsvis(&["--help"]).status.code(), Some(0));
    let v = dsvis(&["--version"]);
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains(dsvis_core::VERSION));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = toy_dataset(tmp.path());
    let mut trees = Vec::new();
    for (run, jobs) in [("a", "1"), ("b", "2")] {
        let out = tmp.path().join(run);
        for args in [
            vec![
                "pca",
                "--size",
                "8x8",
                "--top-k",
                "5",
                "--method",
                "randomized",
            ],
            vec![
                "patch-pca",
                "--patch",
                "3x3",
                "--count",
                "200",
                "--top-k",
                "4",
            ],
            vec!["spatial", "--category", "cat", "--size", "4x4"],
        ] {
            let mut full = args.clone();
            full.extend([
                "--manifest",
                s(&manifest),
                "-o",
                s(&out),
                "--seed",
                "11",
                "--jobs",
                jobs,
            ]);
            let res = dsvis(&full);
            assert_eq!(
                res.status.code(),
                Some(0),
                "{}",
                String::from_utf8_lossy(&res.stderr)
            );
        }
        let files: Vec<_> = dir_files(&out)
            .into_iter()
            .filter(|(p, _)| p != Path::new("run.json"))
            .collect();
        trees.push(files);
    }
    assert!(!trees[0].is_empty());
    assert_eq!(trees[0], trees[1]);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    toy_dataset(tmp.path());
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        "manifest = \"manifest.jsonl\"\noutput_dir = \"cfg-out\"\nseed = 5\n\n[load]\nsize = \"4x4\"\n\n[pca]\ntop_k = 3\n",
    )
    .unwrap();
    let res = dsvis(&["pca", "--config", s(&cfg)]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let out = tmp.path().join("cfg-out");
    assert_eq!(
        json(&out.join("pca_eigenvalues.json"))["eigenvalues"]
            .as_array()
            .unwrap()
            .len(),
        3
    );
    assert_eq!(json(&out.join("run.json"))["seed"], 5);

    let res = dsvis(&["pca", "--config", s(&cfg), "--top-k", "2", "--seed", "9"]);
    assert_eq!(res.status.code(), Some(0));
    assert_eq!(
        json(&out.join("pca_eigenvalues.json"))["eigenvalues"]
            .as_array()
            .unwrap()
            .len(),
        2
    );
    assert_eq!(json(&out.join("run.json"))["seed"], 9);

    fs::write(&cfg, "[pca]\nbogus = 1\n").unwrap();
    assert_eq!(dsvis(&["pca", "--config", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn analyses_feed_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let manifest = toy_dataset(root);
    let m = s(&manifest);
    let run = |args: &[&str]| {
        let res = dsvis(args);
        assert_eq!(
            res.status.code(),
            Some(0),
            "{args:?}: {}",
            String::from_utf8_lossy(&res.stderr)
        );
    };
    let pca = root.join("pca");
    let spatial = root.join("spatial");
    let average = root.join("average");
    let ablated = root.join("ablated");
    let score = root.join("score");
    run(&[
        "pca",
        "--manifest",
        m,
        "-o",
        s(&pca),
        "--size",
        "4x4",
        "--top-k",
        "6",
    ]);
    run(&[
        "ica",
        "--manifest",
        m,
        "-o",
        s(&pca),
        "--size",
        "4x4",
        "--k",
        "2",
        "--pre-pca-k",
        "4",
    ]);
    run(&[
        "spatial",
        "--manifest",
        m,
        "-o",
        s(&spatial),
        "--category",
        "cat",
        "--size",
        "8x8",
        "--compare",
        "train",
        "val",
        "--categories-key",
        "tags",
        "--colormap",
        "viridis",
    ]);
    run(&[
        "average",
        "--manifest",
        m,
        "-o",
        s(&average),
        "--size",
        "4x4",
    ]);
    run(&[
        "ablate",
        "--manifest",
        m,
        "-o",
        s(&ablated),
        "--channel",
        "green",
        "--strategy",
        "gray",
    ]);

    let ablated_manifest =
        dsvis_core::ingest::load_manifest(&ablated.join("manifest.jsonl")).unwrap();
    assert_eq!(ablated_manifest.len(), 20);
    let first = image::open(ablated.join(&ablated_manifest.samples()[0].image))
        .unwrap()
        .to_rgb8();
    let orig = image::open(root.join("img0.png")).unwrap().to_rgb8();
    for (a, o) in first.pixels().zip(orig.pixels()) {
        assert_eq!((a[0], a[2]), (o[0], o[2]));
        let mean = (o[0] as f64 + o[1] as f64 + o[2] as f64) / 3.0;
        assert!((a[1] as f64 - mean).abs() <= 0.5 + 1e-9);
    }

    let mut base = String::from("sample_id,prediction\n");
    let mut worse = base.clone();
    for i in 0..20 {
        let label = ["cat", "dog"][i % 2];
        base.push_str(&format!("s{i:02},{label}\n"));
        worse.push_str(&format!("s{i:02},{}\n", if i < 6 { "fox" } else { label }));
    }
    fs::write(root.join("base.csv"), base).unwrap();
    fs::write(root.join("worse.csv"), worse).unwrap();
    let variant = format!("green:gray={}", s(&root.join("worse.csv")));
    run(&[
        "score",
        "--manifest",
        m,
        "-o",
        s(&score),
        "--predictions",
        s(&root.join("base.csv")),
        "--variant",
        &variant,
    ]);
    let table = fs::read_to_string(score.join("ablation_table.txt")).unwrap();
    assert!(table.contains("70.00%"), "{table}");
    assert!(
        table.contains("Baseline accuracy: 100.00% (n = 20)"),
        "{table}"
    );

    let report = root.join("report");
    run(&[
        "report",
        "--manifest",
        m,
        "-o",
        s(&report),
        "--metadata",
        "--title",
        "toy",
        "--inputs",
        s(&pca),
        s(&spatial),
        s(&average),
        s(&score),
    ]);
    let doc = json(&report.join("report.json"));
    assert_eq!(doc["format"], "dsvis-report");
    for key in ["pca", "ica", "spatial", "average", "ablation", "metadata"] {
        assert!(doc.get(key).is_some(), "missing {key}");
    }
    assert_eq!(doc["spatial"]["comparisons"].as_array().unwrap().len(), 1);
    assert!(fs::read_to_string(report.join("report.html"))
        .unwrap()
        .contains("<html"));

    let empty = root.join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(
        dsvis(&["report", "-o", s(&root.join("r2")), "--inputs", s(&empty)])
            .status
            .code(),
        Some(1)
    );
}
