use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

/// Everything a run depends on. Loaded from a TOML file, then overridden by
/// command-line flags; the resolved value is recorded in `run.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub load: LoadSection,
    pub pca: PcaSection,
    pub patch: PatchSection,
    pub ica: IcaSection,
    pub render: RenderSection,
    pub spatial: SpatialSection,
    pub average: AverageSection,
    pub ablation: AblationSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadSection {
    pub crop_bbox: Option<bool>,
    /// `WxH`
    pub size: Option<String>,
    pub force_rgb: Option<bool>,
    pub split: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaSection {
    pub top_k: Option<usize>,
    pub method: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSection {
    /// `WxH`
    pub size: Option<String>,
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcaSection {
    pub k: Option<usize>,
    pub pre_pca_k: Option<usize>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    pub top_k: Option<usize>,
    pub cell_scale: Option<usize>,
    pub colormap: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialSection {
    pub category: Option<String>,
    /// `WxH`
    pub size: Option<String>,
    pub mask_dir: Option<PathBuf>,
    /// `label` or a metadata key holding comma-separated categories.
    pub categories_key: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AverageSection {
    pub group_key: Option<String>,
    pub min_n: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub channel: Option<String>,
    pub strategy: Option<String>,
}

impl RunConfig {
    /// Parses a TOML config. Relative paths inside it resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Validation(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.manifest,
            &mut cfg.output_dir,
            &mut cfg.spatial.mask_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(crate::DEFAULT_OUTPUT_DIR))
    }

    pub fn manifest(&self) -> anyhow::Result<&Path> {
        match &self.manifest {
            Some(p) => Ok(p),
            None => bail!(Validation(
                "this command needs --manifest (or `manifest` in the config file)".into()
            )),
        }
    }
}

/// A user-facing validation failure (exit code 1).
#[derive(Debug)]
pub struct Validation(pub String);

impl std::fmt::Display for Validation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Validation {}

/// Parses `WxH` into `(width, height)`.
pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("expected positive integers in {s:?}"))
    };
    Ok((parse(w)?, parse(h)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("40x30"), Ok((40, 30)));
        assert_eq!(parse_size("11X11"), Ok((11, 11)));
        assert!(parse_size("40").is_err());
        assert!(parse_size("0x4").is_err());
    }

    #[test]
    fn config_paths_resolve_against_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "manifest = \"data/m.jsonl\"\nseed = 3\n[load]\nsize = \"8x8\"\n[ica]\nk = 2\n",
        )
        .unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.manifest, Some(dir.path().join("data/m.jsonl")));
        assert_eq!(cfg.seed(), 3);
        assert_eq!(cfg.ica.k, Some(2));
        std::fs::write(&path, "bogus = 1\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
    }
}
