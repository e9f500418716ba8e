use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use emoanno_core::annotator::PromptTemplate;
use emoanno_core::corpus::PriceTable;

/// Settings read from the TOML file given with `--config`. Every field is
/// optional; command-line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub strategies: Option<Vec<String>>,
    pub model: Option<String>,
    pub backend: BackendSection,
    pub annotate: AnnotateSection,
    pub prompts: Option<PromptTemplate>,
    pub prices: Option<PriceTable>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    /// `live` or `simulated`.
    pub kind: Option<String>,
    pub endpoint: Option<String>,
    pub timeout_secs: Option<u64>,
    pub image_detail: Option<String>,
    pub labeler: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateSection {
    pub workers: Option<usize>,
    pub requests_per_second: Option<f64>,
    pub burst: Option<u32>,
    pub max_attempts: Option<u32>,
    pub max_output_tokens: Option<u32>,
    pub composite_format: Option<String>,
    pub jpeg_quality: Option<u8>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: FileConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(0) = config.annotate.workers {
            bail!("annotate.workers must be at least 1");
        }
        Ok(config)
    }
}

/// First present value, or an error naming the missing setting.
pub fn required<T: Clone>(flag: &Option<T>, file: &Option<T>, name: &str) -> Result<T> {
    match flag.as_ref().or(file.as_ref()) {
        Some(v) => Ok(v.clone()),
        None => bail!("missing --{name} (or `{}` in the config file)", name.replace('-', "_")),
    }
}
