use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use dsvis_core::ablation::{
    ablation_report, emit_ablated_dataset, score_predictions, AblationReport, AblationSpec,
};
use dsvis_core::average::{average_images, AverageImageSet, AverageOptions};
use dsvis_core::components::{fit_ica, fit_pca};
use dsvis_core::ingest::{build_data_matrix, load_manifest, sample_patches, PatchOptions};
use dsvis_core::render::{
    dataset_stats, render_average_sheet, render_component_grid, render_difference, render_heatmap,
    render_report, Colormap, RenderSpec, ReportBundle,
};
use dsvis_core::spatial::{
    aggregate_masks, compare_heatmaps, cooccurrence, CategorySource, MaskSource, SpatialHeatmap,
};
use dsvis_core::{
    ComponentBasis, DataMatrix, DatasetManifest, IcaParams, ImageBuffer, LoadOptions, PcaMethod,
};

use crate::config::{parse_size, RunConfig, Validation};

/// Subcommand inputs that are not part of [`RunConfig`].
#[derive(Debug, Default)]
pub(crate) struct Extra {
    pub compare: Option<Vec<String>>,
    pub predictions: Option<PathBuf>,
    pub variants: Vec<String>,
    pub inputs: Vec<PathBuf>,
    pub metadata: bool,
    pub title: Option<String>,
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Validation(msg.into()))
}

fn size_or(value: &Option<String>, default: (usize, usize), flag: &str) -> Result<(usize, usize)> {
    match value {
        Some(s) => parse_size(s).map_err(|e| invalid(format!("{flag}: {e}"))),
        None => Ok(default),
    }
}

fn parsed<T: std::str::FromStr<Err = dsvis_core::Error>>(
    value: Option<&str>,
    default: T,
) -> Result<T> {
    match value {
        Some(s) => Ok(s.parse::<T>()?),
        None => Ok(default),
    }
}

/// Output writer that remembers every file it produced.
struct Out<'a> {
    dir: &'a Path,
    files: &'a mut Vec<PathBuf>,
}

impl Out<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let path = self.path(name);
        let bytes = serde_json::to_vec_pretty(value)?;
        std::fs::write(&path, bytes).map_err(|e| dsvis_core::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        self.files.push(path);
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| dsvis_core::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        self.files.push(path);
        Ok(())
    }

    fn png(&mut self, name: &str, img: &ImageBuffer) -> Result<()> {
        let path = self.path(name);
        img.save_png(&path)?;
        self.files.push(path);
        Ok(())
    }

    fn basis(&mut self, name: &str, basis: &ComponentBasis) -> Result<()> {
        let path = self.path(name);
        basis.save(&path)?;
        self.files.push(path.clone());
        self.files.push(path.with_extension("bin"));
        Ok(())
    }
}

pub(crate) fn dispatch(
    name: &str,
    cfg: &RunConfig,
    extra: &Extra,
    dir: &Path,
    files: &mut Vec<PathBuf>,
) -> Result<()> {
    let mut out = Out { dir, files };
    match name {
        "pca" => pca(cfg, &mut out),
        "patch-pca" => patch_pca(cfg, &mut out),
        "ica" => ica(cfg, &mut out),
        "spatial" => spatial(cfg, extra, &mut out),
        "average" => average(cfg, &mut out),
        "ablate" => ablate(cfg, &mut out),
        "score" => score(cfg, extra, &mut out),
        "report" => report(cfg, extra, &mut out),
        other => bail!(invalid(format!("unknown command {other}"))),
    }
}

fn manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = cfg.manifest()?;
    Ok(load_manifest(path)?)
}

fn load_options(cfg: &RunConfig, default_size: (usize, usize)) -> Result<LoadOptions> {
    Ok(LoadOptions {
        crop_to_bbox: cfg.load.crop_bbox.unwrap_or(false),
        target_size: Some(size_or(&cfg.load.size, default_size, "--size")?),
        force_rgb: cfg.load.force_rgb.unwrap_or(false),
    })
}

fn render_spec(cfg: &RunConfig, top_k: usize) -> Result<RenderSpec> {
    let spec = RenderSpec {
        top_k,
        cell_scale: cfg.render.cell_scale.unwrap_or(4),
        colormap: parsed::<Colormap>(cfg.render.colormap.as_deref(), Colormap::Grayscale)?,
    };
    spec.validate()?;
    Ok(spec)
}

fn check_k(flag: &str, k: usize, x: &DataMatrix) -> Result<()> {
    let max = (x.rows().saturating_sub(1)).min(x.dims());
    if k == 0 || k > max {
        bail!(invalid(format!(
            "{flag} {k} is out of range: {} samples of dimension {} allow 1..={max}",
            x.rows(),
            x.dims()
        )));
    }
    Ok(())
}

fn pca_outputs(
    prefix: &str,
    cfg: &RunConfig,
    x: &DataMatrix,
    method: PcaMethod,
    basis: &ComponentBasis,
    out: &mut Out<'_>,
) -> Result<()> {
    out.basis(&format!("{prefix}_basis.json"), basis)?;
    let grid = render_component_grid(basis, &render_spec(cfg, basis.k())?)?;
    out.png(&format!("{prefix}_grid.png"), &grid)?;
    let ratios = basis.explained_variance_ratio();
    let cumulative: Vec<f64> = ratios
        .iter()
        .scan(0.0, |acc, r| {
            *acc += r;
            Some(*acc)
        })
        .collect();
    out.json(
        &format!("{prefix}_eigenvalues.json"),
        &json!({
            "seed": cfg.seed(),
            "method": format!("{:?}", method.resolve(x.dims())).to_lowercase(),
            "n_samples": x.rows(),
            "dims": x.dims(),
            "shape": basis.shape(),
            "eigenvalues": basis.eigenvalues(),
            "explained_variance_ratio": ratios,
            "cumulative_ratio": cumulative,
            "total_variance": basis.total_variance(),
        }),
    )
}

fn pca(cfg: &RunConfig, out: &mut Out<'_>) -> Result<()> {
    let m = manifest(cfg)?;
    let opts = load_options(cfg, (40, 40))?;
    let x = build_data_matrix(&m, &opts, cfg.load.split.as_deref())?;
    let k = cfg.pca.top_k.unwrap_or(15);
    check_k("--top-k", k, &x)?;
    let method = parsed(cfg.pca.method.as_deref(), PcaMethod::Auto)?;
    let basis = fit_pca(&x, k, method, cfg.seed())?;
    pca_outputs("pca", cfg, &x, method, &basis, out)
}

fn patch_pca(cfg: &RunConfig, out: &mut Out<'_>) -> Result<()> {
    let m = manifest(cfg)?;
    let (w, h) = size_or(&cfg.patch.size, (11, 11), "--patch")?;
    let count = cfg.patch.count.unwrap_or(10_000);
    let mut opts = PatchOptions::new(h, w, count, cfg.seed());
    opts.split = cfg.load.split.clone();
    opts.force_rgb = cfg.load.force_rgb.unwrap_or(false);
    let sample = sample_patches(&m, &opts)?;
    if sample.skipped_images > 0 {
        log::warn!(
            "{} images are smaller than the patch and were skipped",
            sample.skipped_images
        );
    }
    let x = sample.matrix;
    let k = cfg.pca.top_k.unwrap_or(15);
    check_k("--top-k", k, &x)?;
    let method = parsed(cfg.pca.method.as_deref(), PcaMethod::Auto)?;
    let basis = fit_pca(&x, k, method, cfg.seed())?;
    pca_outputs("patch_pca", cfg, &x, method, &basis, out)
}

fn ica(cfg: &RunConfig, out: &mut Out<'_>) -> Result<()> {
    let Some(k) = cfg.ica.k else {
        bail!(invalid(
            "ica requires --k (number of independent components)"
        ));
    };
    let Some(pre) = cfg.ica.pre_pca_k else {
        bail!(invalid(
            "ica requires --pre-pca-k (PCA dimensions to whiten before FastICA, at least --k)"
        ));
    };
    let m = manifest(cfg)?;
    let opts = load_options(cfg, (40, 40))?;
    let x = build_data_matrix(&m, &opts, cfg.load.split.as_deref())?;
    let mut params = IcaParams::new(k, pre);
    params.seed = cfg.seed();
    if let Some(t) = cfg.ica.tol {
        params.tol = t;
    }
    if let Some(i) = cfg.ica.max_iter {
        params.max_iter = i;
    }
    let fit = fit_ica(&x, &params)?;
    if !fit.converged {
        log::warn!(
            "FastICA stopped after {} iterations without converging",
            fit.iterations
        );
    }
    out.basis("ica_basis.json", &fit.basis)?;
    let grid = render_component_grid(&fit.basis, &render_spec(cfg, fit.basis.k())?)?;
    out.png("ica_grid.png", &grid)?;
    out.json(
        "ica_summary.json",
        &json!({
            "seed": cfg.seed(),
            "params": params,
            "n_samples": x.rows(),
            "dims": x.dims(),
            "converged": fit.converged,
            "iterations": fit.iterations,
            "variances": fit.basis.eigenvalues(),
            "explained_variance_ratio": fit.basis.explained_variance_ratio(),
        }),
    )
}

fn file_part(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn save_heatmap(h: &SpatialHeatmap, spec: &RenderSpec, out: &mut Out<'_>) -> Result<String> {
    let stem = match &h.split {
        Some(s) => format!("heatmap_{}_{}", file_part(&h.category), file_part(s)),
        None => format!("heatmap_{}", file_part(&h.category)),
    };
    let png = out.path(&format!("{stem}.png"));
    h.save(&png)?;
    out.files.push(png.clone());
    out.files.push(png.with_extension("json"));
    out.files.push(png.with_extension("bin"));
    if spec.colormap != Colormap::Grayscale {
        out.png(
            &format!("{stem}_{}.png", spec.colormap),
            &render_heatmap(h, spec),
        )?;
    }
    Ok(stem)
}

fn spatial(cfg: &RunConfig, extra: &Extra, out: &mut Out<'_>) -> Result<()> {
    let m = manifest(cfg)?;
    let Some(category) = cfg.spatial.category.as_deref() else {
        bail!(invalid("spatial requires --category"));
    };
    let size = size_or(&cfg.spatial.size, (640, 640), "--size")?;
    let source = match &cfg.spatial.mask_dir {
        Some(d) => MaskSource::Directory(d.clone()),
        None => MaskSource::Field,
    };
    let spec = render_spec(cfg, 1)?;
    match &extra.compare {
        Some(pair) => {
            let [a, b] = pair.as_slice() else {
                bail!(invalid("--compare takes exactly two split names"));
            };
            let ha = aggregate_masks(&m, category, Some(a), size, &source)?;
            let hb = aggregate_masks(&m, category, Some(b), size, &source)?;
            let sa = save_heatmap(&ha, &spec, out)?;
            let sb = save_heatmap(&hb, &spec, out)?;
            let cmp = compare_heatmaps(&ha, &hb)?;
            let stem = format!(
                "comparison_{}_{}_vs_{}",
                file_part(category),
                file_part(a),
                file_part(b)
            );
            out.png(&format!("{stem}.png"), &render_difference(&cmp))?;
            out.json(
                &format!("{stem}.json"),
                &json!({
                    "seed": cfg.seed(),
                    "category": category,
                    "a": a,
                    "b": b,
                    "a_file": format!("{sa}.json"),
                    "b_file": format!("{sb}.json"),
                    "l1": cmp.l1,
                    "correlation": cmp.correlation,
                }),
            )?;
            println!(
                "{category}: L1 = {:.6}, correlation = {}",
                cmp.l1,
                cmp.correlation
                    .map(|r| format!("{r:.6}"))
                    .unwrap_or_else(|| "undefined".into())
            );
        }
        None => {
            let h = aggregate_masks(&m, category, cfg.load.split.as_deref(), size, &source)?;
            save_heatmap(&h, &spec, out)?;
        }
    }
    if let Some(key) = &cfg.spatial.categories_key {
        let src = if key == "label" {
            CategorySource::Label
        } else {
            CategorySource::Metadata(key.clone())
        };
        let c = cooccurrence(&m, &src)?;
        out.json(
            "cooccurrence.json",
            &json!({ "seed": cfg.seed(), "key": key, "categories": c.categories, "counts": c.counts }),
        )?;
    }
    Ok(())
}

fn average(cfg: &RunConfig, out: &mut Out<'_>) -> Result<()> {
    let m = manifest(cfg)?;
    let mut opts = AverageOptions::new(load_options(cfg, (64, 64))?);
    opts.split = cfg.load.split.clone();
    if let Some(n) = cfg.average.min_n {
        opts.min_n = n;
    }
    let key = cfg.average.group_key.as_deref().unwrap_or("label");
    let set = average_images(&m, key, &opts)?;
    let dir = out.path("average");
    out.files.extend(set.save(&dir)?);
    out.files.push(dir.join("index.json"));
    out.png(
        "average_sheet.png",
        &render_average_sheet(&set, &render_spec(cfg, 1)?)?,
    )?;
    out.json(
        "average_summary.json",
        &json!({
            "seed": cfg.seed(),
            "group_key": key,
            "groups": set.entries.iter().map(|e| json!({"value": e.value, "n": e.n})).collect::<Vec<_>>(),
            "omitted": set.omitted,
            "skipped_missing_key": set.skipped_missing_key,
        }),
    )
}

fn ablation_spec(cfg: &RunConfig) -> Result<AblationSpec> {
    let Some(channel) = cfg.ablation.channel.as_deref() else {
        bail!(invalid("ablate requires --channel (red, green or blue)"));
    };
    let Some(strategy) = cfg.ablation.strategy.as_deref() else {
        bail!(invalid(
            "ablate requires --strategy (mean_of_others or gray)"
        ));
    };
    Ok(AblationSpec::new(channel.parse()?, strategy.parse()?))
}

fn ablate(cfg: &RunConfig, out: &mut Out<'_>) -> Result<()> {
    let spec = ablation_spec(cfg)?;
    let m = manifest(cfg)?;
    let ablated = emit_ablated_dataset(&m, spec, out.dir)?;
    out.files.push(out.path("manifest.jsonl"));
    out.json(
        "ablation.json",
        &json!({
            "seed": cfg.seed(),
            "channel": spec.channel,
            "strategy": spec.strategy,
            "n_images": ablated.len(),
            "manifest": "manifest.jsonl",
        }),
    )
}

fn parse_variant(s: &str) -> Result<(AblationSpec, PathBuf)> {
    let bad = || {
        invalid(format!(
            "--variant expects CHANNEL:STRATEGY=PATH, got {s:?}"
        ))
    };
    let (spec, path) = s.split_once('=').ok_or_else(bad)?;
    let (channel, strategy) = spec.split_once(':').ok_or_else(bad)?;
    Ok((
        AblationSpec::new(channel.trim().parse()?, strategy.trim().parse()?),
        PathBuf::from(path),
    ))
}

fn score(cfg: &RunConfig, extra: &Extra, out: &mut Out<'_>) -> Result<()> {
    let Some(predictions) = &extra.predictions else {
        bail!(invalid(
            "score requires --predictions (CSV with header sample_id,prediction)"
        ));
    };
    let m = manifest(cfg)?;
    if extra.variants.is_empty() {
        let s = score_predictions(&m, predictions)?;
        println!(
            "top-1 accuracy: {:.4} ({} / {})",
            s.accuracy, s.correct, s.n_scored
        );
        return out.json("score.json", &json!({ "seed": cfg.seed(), "score": s }));
    }
    let mut variants = BTreeMap::new();
    for v in &extra.variants {
        let (spec, path) = parse_variant(v)?;
        if variants.insert(spec, path).is_some() {
            bail!(invalid(format!("--variant {spec} given twice")));
        }
    }
    let report = ablation_report(predictions, &variants, &m)?;
    let table = report.to_table();
    print!("{table}");
    out.text("ablation_table.txt", &table)?;
    let mut value = report.to_json();
    value["seed"] = json!(cfg.seed());
    out.json("ablation_report.json", &value)
}

/// Earlier outputs found in one directory.
#[derive(Default)]
struct Found {
    pca: Option<ComponentBasis>,
    ica: Option<ComponentBasis>,
    heatmaps: Vec<SpatialHeatmap>,
    comparisons: Vec<(String, String, dsvis_core::spatial::HeatmapComparison)>,
    average: Option<AverageImageSet>,
    ablation: Option<AblationReport>,
}

fn scan(dir: &Path, found: &mut Found) -> Result<()> {
    let basis = |name: &str| -> Result<Option<ComponentBasis>> {
        let p = dir.join(name);
        Ok(if p.is_file() {
            Some(ComponentBasis::load(&p)?)
        } else {
            None
        })
    };
    if found.pca.is_none() {
        found.pca = match basis("pca_basis.json")? {
            Some(b) => Some(b),
            None => basis("patch_pca_basis.json")?,
        };
    }
    if found.ica.is_none() {
        found.ica = basis("ica_basis.json")?;
    }
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in &names {
        if name.starts_with("heatmap_") && name.ends_with(".json") {
            found.heatmaps.push(SpatialHeatmap::load(&dir.join(name))?);
        }
        if name.starts_with("comparison_") && name.ends_with(".json") {
            let p = dir.join(name);
            let v: serde_json::Value =
                serde_json::from_slice(&std::fs::read(&p).map_err(|e| dsvis_core::Error::Io {
                    path: p.clone(),
                    source: e,
                })?)?;
            let field = |k: &str| {
                v[k].as_str()
                    .map(str::to_string)
                    .ok_or_else(|| invalid(format!("{}: missing {k}", p.display())))
            };
            let a = SpatialHeatmap::load(&dir.join(field("a_file")?))?;
            let b = SpatialHeatmap::load(&dir.join(field("b_file")?))?;
            found
                .comparisons
                .push((field("a")?, field("b")?, compare_heatmaps(&a, &b)?));
        }
    }
    let avg = dir.join("average");
    if found.average.is_none() && avg.join("index.json").is_file() {
        found.average = Some(AverageImageSet::load(&avg)?);
    }
    let abl = dir.join("ablation_report.json");
    if found.ablation.is_none() && abl.is_file() {
        let bytes = std::fs::read(&abl).map_err(|e| dsvis_core::Error::Io {
            path: abl.clone(),
            source: e,
        })?;
        found.ablation = Some(serde_json::from_slice(&bytes)?);
    }
    Ok(())
}

fn report(cfg: &RunConfig, extra: &Extra, out: &mut Out<'_>) -> Result<()> {
    let inputs = if extra.inputs.is_empty() {
        vec![out.dir.to_path_buf()]
    } else {
        extra.inputs.clone()
    };
    let mut found = Found::default();
    for dir in &inputs {
        if !dir.is_dir() {
            return Err(anyhow::Error::new(dsvis_core::Error::Io {
                path: dir.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
            }));
        }
        scan(dir, &mut found)?;
    }
    let stats = if extra.metadata {
        let m = manifest(cfg)?;
        Some(dataset_stats(&m, cfg.load.split.as_deref()))
    } else {
        None
    };
    let bundle = ReportBundle {
        title: extra.title.clone(),
        pca: found.pca.as_ref(),
        ica: found.ica.as_ref(),
        heatmaps: found.heatmaps.iter().collect(),
        comparisons: found
            .comparisons
            .iter()
            .map(|(a, b, c)| (a.clone(), b.clone(), c))
            .collect(),
        average: found.average.as_ref(),
        ablation: found.ablation.as_ref(),
        metadata: stats.as_ref(),
        seed: Some(cfg.seed()),
        render: render_spec(cfg, cfg.render.top_k.unwrap_or(15))?,
    };
    if bundle.is_empty() {
        bail!(invalid(format!(
            "nothing to report: no analysis outputs found in {} (run pca, ica, spatial, average or score first, or pass --metadata)",
            inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
        )));
    }
    let files = render_report(&bundle, out.dir)?;
    out.files.push(files.html);
    out.files.push(files.json);
    Ok(())
}
