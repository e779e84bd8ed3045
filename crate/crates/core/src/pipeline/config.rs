use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::ClassifierTrainConfig;
use crate::dataset::{ImageFormat, ProposalConfig, SyntheticConfig};
use crate::detector::{DetectConfig, DetectorTrainConfig, RoiBands};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::mil::MilConfig;
use crate::mining::MiningConfig;
use crate::refine::RefineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Every artifact and stage manifest is written here.
    pub workdir: PathBuf,
    /// External training manifest; synthetic data is generated when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// External proposal CSVs; generated when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposals: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_proposals: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            workdir: PathBuf::from("wsolkit-work"),
            train: None,
            test: None,
            proposals: None,
            test_proposals: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub synthetic: SyntheticConfig,
    /// Size of the held-out synthetic test split.
    pub test_images: usize,
    pub format: ImageFormat,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synthetic: SyntheticConfig {
                num_images: 200,
                ..SyntheticConfig::default()
            },
            test_images: 100,
            format: ImageFormat::Raw,
        }
    }
}

/// Ablation switches of the main chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageToggles {
    /// Without MIL the top mined proposal of each positive image is kept.
    pub mil: bool,
    /// Without segmentation refined boxes equal the selected boxes.
    pub seg: bool,
    pub dump_masks: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            mil: true,
            seg: true,
            dump_masks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    /// Recompute the ablation rows (CS / AS / MIL / Seg / FT).
    pub ablation: bool,
    /// Also train a detector per FT row.
    pub ft_rows: bool,
    /// Score the training set under every mask-out strategy and report
    /// CorLoc@M for each. Costs three extra scoring passes.
    pub strategies: bool,
    pub corloc_m: Vec<usize>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            ablation: true,
            ft_rows: true,
            strategies: false,
            corloc_m: vec![1, 10, 50],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Every stage seed is derived from this one.
    pub seed: u64,
    pub paths: Paths,
    pub data: DataConfig,
    pub proposals: ProposalConfig,
    pub classifier: ClassifierTrainConfig,
    pub mining: MiningConfig,
    pub mil: MilConfig,
    pub refine: RefineConfig,
    pub stages: StageToggles,
    pub detector: DetectorTrainConfig,
    pub bands: RoiBands,
    pub detect: DetectConfig,
    pub eval: EvalConfig,
    pub report: ReportConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            paths: Paths::default(),
            data: DataConfig::default(),
            proposals: ProposalConfig::default(),
            classifier: ClassifierTrainConfig::default(),
            mining: MiningConfig::default(),
            mil: MilConfig::default(),
            refine: RefineConfig::default(),
            stages: StageToggles::default(),
            detector: DetectorTrainConfig::default(),
            bands: RoiBands::default(),
            detect: DetectConfig::default(),
            eval: EvalConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Sub-seed for one consumer of the global seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let d = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(tag.as_bytes()).finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Dotted keys of `input` missing from `known`.
fn unknown_keys(input: &toml::Value, known: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    if let (toml::Value::Table(a), toml::Value::Table(b)) = (input, known) {
        for (k, v) in a {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match b.get(k) {
                Some(kv) => unknown_keys(v, kv, &key, out),
                None => out.push(key),
            }
        }
    }
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_literal(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(config_err)?;
        Self::from_value(value)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn from_value(value: toml::Value) -> Result<Self> {
        let cfg: PipelineConfig = value.clone().try_into().map_err(config_err)?;
        let mut unknown = Vec::new();
        unknown_keys(&value, &cfg.to_value()?, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown key(s): {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn to_value(&self) -> Result<toml::Value> {
        toml::Value::try_from(self).map_err(config_err)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(config_err)
    }

    /// Applies `key=value` overrides (dotted keys, TOML literals).
    pub fn with_overrides<S: AsRef<str>>(&self, sets: &[S]) -> Result<Self> {
        let mut root = self.to_value()?;
        for s in sets {
            let s = s.as_ref();
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
            let parts: Vec<&str> = key.trim().split('.').collect();
            let mut node = &mut root;
            for (i, part) in parts.iter().enumerate() {
                let table = node
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{key}`: `{}` is not a section", parts[..i].join("."))))?;
                if i + 1 == parts.len() {
                    table.insert(part.to_string(), parse_literal(value.trim()));
                    break;
                }
                node = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        Self::from_value(root)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synthetic.validate()?;
        self.mining.validate()?;
        self.mil.validate()?;
        self.refine.validate()?;
        self.eval.validate()?;
        let chk = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.into())) };
        chk(self.data.test_images > 0, "data.test_images must be at least 1")?;
        chk(
            !self.proposals.scales.is_empty() && !self.proposals.aspects.is_empty(),
            "proposals need at least one scale and aspect",
        )?;
        chk(self.classifier.iterations > 0 && self.classifier.batch_size > 0, "classifier iterations and batch_size must be positive")?;
        chk(self.classifier.learning_rate > 0.0, "classifier learning_rate must be positive")?;
        chk(self.detector.iterations > 0 && self.detector.batch_size > 0, "detector iterations and batch_size must be positive")?;
        chk(
            self.detector.fg_fraction > 0.0 && self.detector.fg_fraction < 1.0,
            "detector fg_fraction must lie in (0, 1)",
        )?;
        chk(
            0.0 <= self.bands.background && self.bands.background < self.bands.foreground && self.bands.foreground <= 1.0,
            "bands must satisfy 0 <= background < foreground <= 1",
        )?;
        chk((0.0..=1.0).contains(&self.detect.score_threshold), "detect.score_threshold must lie in [0, 1]")?;
        chk(self.detect.nms_iou > 0.0 && self.detect.nms_iou <= 1.0, "detect.nms_iou must lie in (0, 1]")?;
        chk(self.report.corloc_m.iter().all(|&m| m >= 1), "report.corloc_m entries must be at least 1")?;
        Ok(())
    }

    /// Copy with every module seed derived from the global seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let s = self.seed;
        c.data.synthetic.seed = derive_seed(s, "train-data");
        c.classifier.seed = derive_seed(s, "classifier");
        c.mil.seed = derive_seed(s, "mil");
        c.detector.seed = derive_seed(s, "detector");
        c
    }

    pub fn test_synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            num_images: self.data.test_images,
            id_prefix: "test".into(),
            seed: derive_seed(self.seed, "test-data"),
            ..self.data.synthetic.clone()
        }
    }

    pub fn proposal_seed(&self, split: &str) -> u64 {
        derive_seed(self.seed, &format!("proposals-{split}"))
    }

    pub fn workdir(&self) -> &Path {
        &self.paths.workdir
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.paths.workdir.join(name)
    }

    pub fn train_manifest(&self) -> PathBuf {
        self.paths.train.clone().unwrap_or_else(|| self.artifact("data/train/manifest.json"))
    }

    pub fn test_manifest(&self) -> PathBuf {
        self.paths.test.clone().unwrap_or_else(|| self.artifact("data/test/manifest.json"))
    }

    pub fn train_proposals(&self) -> PathBuf {
        self.paths.proposals.clone().unwrap_or_else(|| self.artifact("proposals.csv"))
    }

    pub fn test_proposals(&self) -> PathBuf {
        self.paths
            .test_proposals
            .clone()
            .unwrap_or_else(|| self.artifact("proposals_test.csv"))
    }
}
