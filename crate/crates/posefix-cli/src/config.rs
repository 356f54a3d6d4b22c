//! The global configuration file: one TOML document that carries every
//! module's knobs plus paths to the skeleton and distribution-table files.
//! Missing sections fall back to library defaults; referenced files must
//! exist at load time.

use anyhow::{bail, Context, Result};
use posefix_core::evaluator::EvalParams;
use posefix_core::model::SkeletonSpec;
use posefix_core::refiner::{AblationParams, RefinerConfig, ToyConfig};
use posefix_core::synthesis::{ErrorDistributionTable, SynthesisConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecSection {
    /// Gaussian sigma (px) for coarse input heatmaps.
    pub sigma: f64,
    /// Heatmap resolution as a fraction of the input crop (1/downscale).
    pub downscale: u32,
}

impl Default for CodecSection {
    fn default() -> Self {
        CodecSection {
            sigma: 2.0,
            downscale: 4,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GlobalConfig {
    pub log_level: Option<String>,
    /// Skeleton TOML path; embedded COCO-17 when absent.
    pub skeleton: Option<PathBuf>,
    /// Error-distribution table path; embedded defaults when absent.
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub codec: CodecSection,
    #[serde(default)]
    pub refiner: RefinerConfig,
    #[serde(default)]
    pub toy: ToyConfig,
    #[serde(default)]
    pub eval: EvalParams,
    #[serde(default)]
    pub ablation: AblationParams,
}

impl GlobalConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(GlobalConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: GlobalConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for referenced in [&config.skeleton, &config.table].into_iter().flatten() {
            let resolved = base.join(referenced);
            if !resolved.exists() && !referenced.exists() {
                bail!(
                    "config references {} which does not exist",
                    referenced.display()
                );
            }
        }
        Ok(config)
    }

    fn resolve(&self, config_path: Option<&Path>, p: &Path) -> PathBuf {
        if p.is_absolute() || p.exists() {
            return p.to_path_buf();
        }
        config_path
            .and_then(|c| c.parent())
            .map(|base| base.join(p))
            .unwrap_or_else(|| p.to_path_buf())
    }

    /// Effective skeleton: flag > config > embedded COCO-17.
    pub fn skeleton(
        &self,
        flag: Option<&Path>,
        config_path: Option<&Path>,
    ) -> Result<SkeletonSpec> {
        let path = flag.map(Path::to_path_buf).or_else(|| {
            self.skeleton
                .as_deref()
                .map(|p| self.resolve(config_path, p))
        });
        match path {
            Some(p) => {
                SkeletonSpec::load(&p).with_context(|| format!("loading skeleton {}", p.display()))
            }
            None => Ok(SkeletonSpec::coco17()),
        }
    }

    /// Effective table: flag > config > embedded default for this skeleton
    /// size (COCO-17 table for 17 joints, the jitter-heavy toy table
    /// otherwise).
    pub fn table(
        &self,
        flag: Option<&Path>,
        config_path: Option<&Path>,
        spec: &SkeletonSpec,
    ) -> Result<ErrorDistributionTable> {
        let path = flag
            .map(Path::to_path_buf)
            .or_else(|| self.table.as_deref().map(|p| self.resolve(config_path, p)));
        match path {
            Some(p) => ErrorDistributionTable::load(&p, spec)
                .with_context(|| format!("loading table {}", p.display())),
            None if spec.num_joints() == 17 => Ok(ErrorDistributionTable::default_coco17(spec)),
            None => Ok(ErrorDistributionTable::toy_jitter_heavy(spec)),
        }
    }
}
