use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::Protocol;
use crate::fisher::FvOptions;
use crate::gmm::EmConfig;
use crate::pca::PcaConfig;
use crate::pooling::PoolingSpec;
use crate::svm::SvmConfig;
use crate::trajectory::WindowSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    /// Whole sequences for categorical manifests, windows for multilabel ones.
    #[default]
    Auto,
    Whole,
    Windows,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub mode: WindowMode,
    pub length: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        let w = WindowSpec::default();
        WindowConfig {
            mode: WindowMode::Auto,
            length: w.length,
            stride: w.stride,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmSection {
    #[serde(flatten)]
    pub em: EmConfig,
    /// Fit one mixture per class and concatenate the per-class encodings.
    pub per_class: bool,
}

impl Default for GmmSection {
    fn default() -> Self {
        GmmSection {
            em: EmConfig::default(),
            per_class: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmSection {
    pub c: f64,
    pub alpha: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub bias_feature: f64,
    /// JSON action-unit region table; the built-in 68-point grouping otherwise.
    pub au_regions: Option<PathBuf>,
    /// Encode each unit from its region's landmarks only.
    pub trajectory_selection: bool,
    pub cooccurrence: bool,
}

impl Default for SvmSection {
    fn default() -> Self {
        let s = SvmConfig::default();
        SvmSection {
            c: s.c,
            alpha: 0.5,
            max_epochs: s.max_epochs,
            tolerance: s.tolerance,
            seed: s.seed,
            bias_feature: s.bias_feature,
            au_regions: None,
            trajectory_selection: true,
            cooccurrence: true,
        }
    }
}

impl SvmSection {
    pub fn solver(&self) -> SvmConfig {
        SvmConfig {
            c: self.c,
            max_epochs: self.max_epochs,
            tolerance: self.tolerance,
            seed: self.seed,
            bias_feature: self.bias_feature,
        }
    }
}

/// One experiment. Relative paths are resolved against the config file's
/// directory when loaded with [`RunConfig::load`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    /// Extra manifests whose videos join every training split.
    pub augment_manifests: Vec<PathBuf>,
    pub output: Option<PathBuf>,
    pub pooling: PoolingSpec,
    pub window: WindowConfig,
    pub pca: PcaConfig,
    pub gmm: GmmSection,
    pub fv: FvOptions,
    pub svm: SvmSection,
    pub protocol: Protocol,
    /// Also score videos by the strict frame-majority rule over their windows.
    pub frame_majority: bool,
    /// Render `confusion.png` next to the report.
    pub heatmap: bool,
}

fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_error("<config>", format!("{}: {e}", origin.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| config_error("--config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.manifest = self.manifest.as_deref().map(|p| absolute(base, p));
        self.output = self.output.as_deref().map(|p| absolute(base, p));
        self.augment_manifests = self.augment_manifests.iter().map(|p| absolute(base, p)).collect();
        self.svm.au_regions = self.svm.au_regions.as_deref().map(|p| absolute(base, p));
    }

    /// Replace every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        self.pca.seed = seed;
        self.gmm.em.seed = seed;
        self.svm.seed = seed;
        match &mut self.protocol {
            Protocol::Loao => {}
            Protocol::Kfold { seed: s, .. } | Protocol::Fixed { seed: s, .. } => *s = seed,
        }
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| config_error("manifest", "no manifest path given"))
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output
            .as_deref()
            .ok_or_else(|| config_error("output", "no output directory given (set it or pass --out)"))
    }

    pub fn window_spec(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.window.length, self.window.stride)
            .map_err(|e| config_error("window", e.to_string()))
    }

    /// Referenced paths exist and numeric fields are in range.
    pub fn validate(&self) -> Result<()> {
        let manifest = self.manifest_path()?;
        if !manifest.is_file() {
            return Err(config_error("manifest", format!("{} does not exist", manifest.display())));
        }
        self.output_dir()?;
        for p in &self.augment_manifests {
            if !p.is_file() {
                return Err(config_error("augment_manifests", format!("{} does not exist", p.display())));
            }
        }
        if let Some(p) = &self.svm.au_regions {
            if !p.is_file() {
                return Err(config_error("svm.au_regions", format!("{} does not exist", p.display())));
            }
        }
        let (rh, rw) = self.pooling.region;
        if rh == 0 || rw == 0 {
            return Err(config_error("pooling.region", "region sides must be positive"));
        }
        self.window_spec()?;
        if self.pca.d == 0 {
            return Err(config_error("pca.d", "must be >= 1"));
        }
        if self.pca.max_samples == 0 {
            return Err(config_error("pca.max_samples", "must be >= 1"));
        }
        let em = &self.gmm.em;
        if em.k == 0 {
            return Err(config_error("gmm.k", "must be >= 1"));
        }
        if !(em.rel_tol > 0.0) {
            return Err(config_error("gmm.rel_tol", "must be positive"));
        }
        if !(em.variance_floor > 0.0) {
            return Err(config_error("gmm.variance_floor", "must be positive"));
        }
        let svm = &self.svm;
        if !(svm.c > 0.0 && svm.c.is_finite()) {
            return Err(config_error("svm.c", "must be positive and finite"));
        }
        if !(svm.alpha >= 0.0 && svm.alpha.is_finite()) {
            return Err(config_error("svm.alpha", "must be non-negative and finite"));
        }
        if !(svm.tolerance > 0.0) {
            return Err(config_error("svm.tolerance", "must be positive"));
        }
        if svm.max_epochs == 0 {
            return Err(config_error("svm.max_epochs", "must be >= 1"));
        }
        if !(svm.bias_feature >= 0.0 && svm.bias_feature.is_finite()) {
            return Err(config_error("svm.bias_feature", "must be non-negative and finite"));
        }
        match self.protocol {
            Protocol::Kfold { k, .. } if k < 2 => Err(config_error("protocol.k", "must be >= 2")),
            Protocol::Fixed { train, test, .. } if train == 0 || test == 0 => {
                Err(config_error("protocol", "train and test groups must be non-empty"))
            }
            _ => Ok(()),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
