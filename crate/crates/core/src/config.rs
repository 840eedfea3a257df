//! Run configuration: one TOML file with a section per pipeline stage,
//! `section.key=value` overrides, and per-stage content hashes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::interpret::{OcclusionConfig, VolumeBaseline};
use crate::model::layers::Activation;
use crate::model::{Modality, ModelConfig, Task};
use crate::preprocess::SelectionConfig;
use crate::synth::SynthConfig;
use crate::training::TrainConfig;

/// Network architecture. Input shape, task, modality and initialization seed
/// are not set here: they follow `synth.volume_shape`, the top-level `task`
/// and `variant`, and `train.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureConfig {
    pub vision_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub vision_embed_dim: usize,
    pub tabular_hidden: Vec<usize>,
    pub tabular_embed_dim: usize,
    pub fusion_hidden: Vec<usize>,
    pub vision_activation: Activation,
    pub tabular_activation: Activation,
    pub fusion_activation: Activation,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        ArchitectureConfig {
            vision_channels: m.vision_channels,
            blocks_per_stage: m.blocks_per_stage,
            vision_embed_dim: m.vision_embed_dim,
            tabular_hidden: m.tabular_hidden,
            tabular_embed_dim: m.tabular_embed_dim,
            fusion_hidden: m.fusion_hidden,
            vision_activation: m.vision_activation,
            tabular_activation: m.tabular_activation,
            fusion_activation: m.fusion_activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    pub volume_baseline: VolumeBaseline,
    /// Number of test records (relapses first) that get a saliency map.
    pub saliency_cases: usize,
    /// Fraction of voxels kept when scoring saliency against a lesion mask;
    /// 0 means "use the mask's own density".
    pub top_fraction: f64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            volume_baseline: VolumeBaseline::ConstantMean,
            saliency_cases: 4,
            top_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub model_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: "data".into(),
            model_dir: "models".into(),
            report_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub variant: Modality,
    pub task: Task,
    /// F-beta weight used by the threshold sweep.
    pub beta: f64,
    pub synth: SynthConfig,
    pub selection: SelectionConfig,
    pub model: ArchitectureConfig,
    pub train: TrainConfig,
    pub occlusion: OcclusionConfig,
    pub explain: ExplainConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Modality::Multimodal,
            task: Task::Regress,
            beta: 1.0,
            synth: SynthConfig::default(),
            selection: SelectionConfig::default(),
            model: ArchitectureConfig::default(),
            train: TrainConfig::default(),
            occlusion: OcclusionConfig::default(),
            explain: ExplainConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML text, applies `section.key=value` overrides, validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.selection.validate()?;
        self.train.validate()?;
        self.model_config().validate()?;
        self.occlusion.validate(self.synth.volume_shape)?;
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be a positive number, got {}", self.beta)));
        }
        let t = self.explain.top_fraction;
        if !(0.0..1.0).contains(&t) {
            return Err(Error::Config(format!("explain: top_fraction must lie in [0, 1), got {t}")));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let a = &self.model;
        ModelConfig {
            input_shape: self.synth.volume_shape,
            vision_channels: a.vision_channels.clone(),
            blocks_per_stage: a.blocks_per_stage,
            vision_embed_dim: a.vision_embed_dim,
            tabular_hidden: a.tabular_hidden.clone(),
            tabular_embed_dim: a.tabular_embed_dim,
            fusion_hidden: a.fusion_hidden.clone(),
            task: self.task,
            modality: self.variant,
            vision_activation: a.vision_activation,
            tabular_activation: a.tabular_activation,
            fusion_activation: a.fusion_activation,
            init_seed: self.train.seed,
        }
    }

    /// Canonical TOML: every field spelled out, fixed order.
    pub fn to_canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `<variant>_<task>`, the per-model artifact directory name.
    pub fn run_name(&self) -> String {
        format!("{}_{}", self.variant.name(), self.task.name())
    }

    pub fn cohort_dir(&self) -> PathBuf {
        self.paths.data_dir.join("cohort")
    }

    pub fn run_model_dir(&self) -> PathBuf {
        self.paths.model_dir.join(self.run_name())
    }

    pub fn run_report_dir(&self) -> PathBuf {
        self.paths.report_dir.join(self.run_name())
    }

    /// Hash of the configuration an artifact of `stage` depends on. Each stage
    /// hashes its own settings plus everything upstream of it, so editing a
    /// later section never invalidates earlier artifacts.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let mut h = Sha256::new();
        hash_section(&mut h, "synth", &self.synth);
        if stage >= Stage::Train {
            hash_section(&mut h, "selection", &self.selection);
            hash_section(&mut h, "model", &self.model_config());
            hash_section(&mut h, "train", &self.train);
        }
        if matches!(stage, Stage::Sweep | Stage::Eval) {
            hash_section(&mut h, "beta", &self.beta);
        }
        if stage == Stage::Explain {
            hash_section(&mut h, "occlusion", &self.occlusion);
            hash_section(&mut h, "explain", &self.explain);
        }
        hex::encode(h.finalize())
    }
}

/// Pipeline stages in dependency order. `Explain` needs a trained model but
/// not a threshold, so its hash leaves out `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Train,
    Sweep,
    Eval,
    Explain,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Train => "train",
            Stage::Sweep => "sweep",
            Stage::Eval => "eval",
            Stage::Explain => "explain",
        }
    }
}

fn hash_section<T: Serialize>(h: &mut Sha256, label: &str, value: &T) {
    // wrapped so bare scalars serialize too
    #[derive(Serialize)]
    struct W<'a, T> {
        v: &'a T,
    }
    h.update(label.as_bytes());
    h.update(toml::to_string(&W { v: value }).expect("config serializes").as_bytes());
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not of the form section.key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    // TOML literal if it parses as one, bare string otherwise
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?}: {p} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults_and_round_trips() {
        let c = RunConfig::parse("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        let canon = c.to_canonical();
        let again = RunConfig::parse(&canon, &[]).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_canonical(), canon);
    }

    #[test]
    fn kappa_ordering_is_named() {
        let text = "[selection]\nkappa_low = 1900.0\nkappa_high = 1825.0\n";
        let err = RunConfig::parse(text, &[]).unwrap_err().to_string();
        assert!(err.contains("kappa ordering"), "{err}");
    }

    #[test]
    fn typo_is_rejected_by_name() {
        let err = RunConfig::parse("[selection]\nkapa_low = 1600.0\n", &[]).unwrap_err().to_string();
        assert!(err.contains("kapa_low"), "{err}");
        let err = RunConfig::parse("", &["selection.kapa_low=1600".into()]).unwrap_err().to_string();
        assert!(err.contains("kapa_low"), "{err}");
    }

    #[test]
    fn overrides() {
        let c = RunConfig::parse(
            "[train]\nepochs = 3\n",
            &[
                "train.epochs=5".into(),
                "variant=tabular_only".into(),
                "synth.volume_shape=[16,16,16]".into(),
                "model.vision_channels = [2, 4]".into(),
                "occlusion.fill=zero".into(),
                "paths.data_dir=/tmp/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.variant, Modality::TabularOnly);
        assert_eq!(c.model_config().input_shape, [16, 16, 16]);
        assert_eq!(c.model.vision_channels, vec![2, 4]);
        assert_eq!(c.paths.data_dir, PathBuf::from("/tmp/x"));
        assert!(RunConfig::parse("", &["train.epochs".into()]).is_err());
        assert!(RunConfig::parse("", &["train..epochs=1".into()]).is_err());
    }

    #[test]
    fn nested_validation_applies() {
        assert!(RunConfig::parse("", &["train.epochs=0".into()]).is_err());
        assert!(RunConfig::parse("", &["beta=0".into()]).is_err());
        assert!(RunConfig::parse("", &["occlusion.patch=30".into()]).is_err());
        assert!(RunConfig::parse("", &["synth.volume_shape=[4,24,24]".into()]).is_err());
    }

    #[test]
    fn stage_hashes_only_cover_upstream() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.beta = 2.0;
        assert_eq!(a.stage_hash(Stage::Synth), b.stage_hash(Stage::Synth));
        assert_eq!(a.stage_hash(Stage::Train), b.stage_hash(Stage::Train));
        assert_ne!(a.stage_hash(Stage::Sweep), b.stage_hash(Stage::Sweep));
        assert_eq!(a.stage_hash(Stage::Explain), b.stage_hash(Stage::Explain));
        let mut c = a.clone();
        c.synth.seed += 1;
        assert_ne!(a.stage_hash(Stage::Synth), c.stage_hash(Stage::Synth));
        let mut d = a.clone();
        d.paths.report_dir = "elsewhere".into();
        assert_eq!(a.stage_hash(Stage::Explain), d.stage_hash(Stage::Explain));
        assert_eq!(a.stage_hash(Stage::Train).len(), 64);
    }
}
