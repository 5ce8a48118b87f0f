mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use common::*;
use dsvis_core::ablation::{ablation_report, AblationSpec, Channel, Strategy};
use dsvis_core::average::{average_images, AverageOptions};
use dsvis_core::components::{fit_ica, fit_pca};
use dsvis_core::ingest::{build_data_matrix, load_manifest};
use dsvis_core::render::{
    dataset_stats, render_component_grid, render_report, RenderSpec, ReportBundle, REPORT_SCHEMA,
};
use dsvis_core::spatial::{
    aggregate_masks, compare_heatmaps, cooccurrence, CategorySource, MaskSource,
};
use dsvis_core::{IcaParams, LoadOptions, PcaMethod, SampleRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LABELS: [&str; 3] = ["a", "b", "c"];

/// 24 labeled 8x8 RGB images with masks, written under `root`.
fn dataset(root: &Path) -> Vec<SampleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    (0..24)
        .map(|i| {
            let label = LABELS[i % 3];
            let tint = [0.2, 0.5, 0.8][i % 3];
            let vals: Vec<f64> = (0..8 * 8 * 3)
                .map(|j| (tint * (j % 3) as f64 / 2.0 + 0.3 * rng.random::<f64>()).min(1.0))
                .collect();
            write_png(&root.join(format!("img{i}.png")), 8, 8, 3, &vals);
            let on: Vec<bool> = (0..64)
                .map(|p| (p % 8) < 4 + i % 4 && p / 8 >= i % 3)
                .collect();
            write_mask(&root.join(format!("mask{i}.png")), 8, 8, &on, 200);
            let mut r = SampleRecord::new(
                format!("s{i:02}"),
                format!("img{i}.png"),
                if i % 4 == 0 { "val" } else { "train" },
            );
            r.label = Some(label.into());
            r.mask = Some(format!("mask{i}.png").into());
            r.metadata
                .insert("objects".into(), format!("{label},{}", LABELS[(i + 1) % 3]));
            r
        })
        .collect()
}

fn write_manifest(path: &Path, records: &[SampleRecord]) {
    let mut f = std::fs::File::create(path).unwrap();
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r).unwrap()).unwrap();
    }
}

fn write_predictions(path: &Path, records: &[SampleRecord], wrong_every: usize) {
    let mut body = String::from("sample_id,prediction\n");
    for (i, r) in records.iter().enumerate() {
        let label = r.label.as_deref().unwrap();
        let pred = if wrong_every > 0 && i % wrong_every == 0 {
            "zzz"
        } else {
            label
        };
        body.push_str(&format!("{},{pred}\n", r.id));
    }
    std::fs::write(path, body).unwrap();
}

#[test]
fn full_report_validates_against_schema() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let records = dataset(root);
    write_manifest(&root.join("manifest.jsonl"), &records);
    let manifest = load_manifest(&root.join("manifest.jsonl")).unwrap();

    let x = build_data_matrix(&manifest, &LoadOptions::sized(8, 8), None).unwrap();
    let pca = fit_pca(&x, 10, PcaMethod::Exact, 0).unwrap();
    let ica = fit_ica(&x, &IcaParams::new(2, 6)).unwrap();

    let train = aggregate_masks(&manifest, "a", Some("train"), (8, 8), &MaskSource::Field).unwrap();
    let val = aggregate_masks(&manifest, "a", Some("val"), (8, 8), &MaskSource::Field).unwrap();
    let cmp = compare_heatmaps(&train, &val).unwrap();

    let mut opts = AverageOptions::new(LoadOptions::sized(8, 8));
    opts.min_n = 9;
    assert!(matches!(
        average_images(&manifest, "label", &opts),
        Err(dsvis_core::Error::EmptySelection(_))
    ));
    opts.min_n = 2;
    let average = average_images(&manifest, "label", &opts).unwrap();
    assert_eq!(average.entries.len(), 3);

    write_predictions(&root.join("base.csv"), &records, 0);
    let mut variants = BTreeMap::new();
    for (k, ch) in Channel::ALL.into_iter().enumerate() {
        for s in [Strategy::MeanOfOthers, Strategy::Gray] {
            let path = root.join(format!("{ch}_{s:?}.csv"));
            write_predictions(&path, &records, 2 + k);
            variants.insert(AblationSpec::new(ch, s), path);
        }
    }
    let ablation = ablation_report(&root.join("base.csv"), &variants, &manifest).unwrap();
    assert_eq!(ablation.baseline, 1.0);
    let stats = dataset_stats(&manifest, None);
    assert_eq!(stats.n_images, 24);

    let bundle = ReportBundle {
        title: Some("toy <dataset>".into()),
        pca: Some(&pca),
        ica: Some(&ica.basis),
        heatmaps: vec![&train, &val],
        comparisons: vec![("train".into(), "val".into(), &cmp)],
        average: Some(&average),
        ablation: Some(&ablation),
        metadata: Some(&stats),
        seed: Some(0),
        render: RenderSpec {
            top_k: 3,
            ..RenderSpec::default()
        },
    };
    let out = root.join("report");
    let files = render_report(&bundle, &out).unwrap();

    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&files.json).unwrap()).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(&report)
        .map(|e| e.to_string())
        .collect();
    assert!(errors.is_empty(), "{errors:#?}");
    for key in ["pca", "ica", "spatial", "average", "ablation", "metadata"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }

    let mut extra = report.clone();
    extra["unexpected"] = serde_json::json!(1);
    assert!(!validator.is_valid(&extra));

    let html = std::fs::read_to_string(&files.html).unwrap();
    assert!(html.contains("data:image/png;base64,"));
    assert!(html.contains("toy &lt;dataset&gt;"));
}

#[test]
fn manifest_order_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let records = dataset(root);
    let mut reversed = records.clone();
    reversed.reverse();
    write_manifest(&root.join("fwd.jsonl"), &records);
    write_manifest(&root.join("rev.jsonl"), &reversed);
    let fwd = load_manifest(&root.join("fwd.jsonl")).unwrap();
    let rev = load_manifest(&root.join("rev.jsonl")).unwrap();

    let opts = LoadOptions::sized(8, 8);
    let pa = fit_pca(
        &build_data_matrix(&fwd, &opts, None).unwrap(),
        5,
        PcaMethod::Exact,
        3,
    )
    .unwrap();
    let pb = fit_pca(
        &build_data_matrix(&rev, &opts, None).unwrap(),
        5,
        PcaMethod::Exact,
        3,
    )
    .unwrap();
    assert_eq!(pa.eigenvalues(), pb.eigenvalues());
    assert!(pa.components().zip(pb.components()).all(|(a, b)| a == b));
    let spec = RenderSpec {
        top_k: 5,
        ..RenderSpec::default()
    };
    assert_eq!(
        render_component_grid(&pa, &spec)
            .unwrap()
            .encode_png()
            .unwrap(),
        render_component_grid(&pb, &spec)
            .unwrap()
            .encode_png()
            .unwrap()
    );

    for cat in LABELS {
        let ha = aggregate_masks(&fwd, cat, None, (4, 4), &MaskSource::Field).unwrap();
        let hb = aggregate_masks(&rev, cat, None, (4, 4), &MaskSource::Field).unwrap();
        assert_eq!(ha.counts, hb.counts);
        assert_eq!(ha.normalized, hb.normalized);
    }

    let source = CategorySource::Metadata("objects".into());
    let ca = cooccurrence(&fwd, &source).unwrap();
    let cb = cooccurrence(&rev, &source).unwrap();
    assert_eq!(ca.categories, cb.categories);
    assert_eq!(ca.counts, cb.counts);
    assert_eq!(ca.get("a", "b"), Some(8));
    assert_eq!(ca.get("a", "a"), Some(16));

    let mut avg = AverageOptions::new(opts);
    avg.min_n = 1;
    let aa = average_images(&fwd, "label", &avg).unwrap();
    let ab = average_images(&rev, "label", &avg).unwrap();
    for (x, y) in aa.entries.iter().zip(&ab.entries) {
        assert_eq!(x.value, y.value);
        for (p, q) in x.mean.pixels().iter().zip(y.mean.pixels()) {
            assert!((p - q).abs() <= 1e-12);
        }
    }
}

#[test]
fn data_matrix_rows_follow_manifest_and_unflatten() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let records = dataset(root);
    write_manifest(&root.join("m.jsonl"), &records);
    let manifest = load_manifest(&root.join("m.jsonl")).unwrap();
    let x = build_data_matrix(&manifest, &LoadOptions::sized(8, 8), Some("val")).unwrap();
    assert_eq!(x.rows(), 6);
    assert_eq!(x.dims(), 8 * 8 * 3);
    let (_, _, px) = read_png(&root.join("img0.png"));
    let row = x.unflatten_row(0).unwrap();
    for (a, b) in row.pixels().iter().zip(&px) {
        assert!((a - b).abs() <= 1e-12);
    }
}
