//! Post-hoc interpretation: per-attribute / per-modality contribution by
//! ablation, and 3D occlusion-sensitivity saliency.
//!
//! The contribution of attribute `a` is `u_a`, the mean absolute change of the
//! model output when `a` is replaced by its training-set baseline, normalized
//! so the five attributes sum to one. This is a reconstruction: it satisfies
//! the usual properties of a modality-contribution metric (range [0, 1], unit
//! sum, per-modality breakdown, 1.00 for single-modality models) but is not
//! claimed to be identical to any published formula.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, FusionModelParams, Modality};
use crate::preprocess::{FeatureVector, PreparedRecord, VolumeStats};
use crate::volume::{Mask, Shape3, Volume};

/// Modalities whose total contribution falls below this are flagged as
/// collapsed.
pub const COLLAPSE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Attribute {
    Volume,
    Age,
    Gender,
    Chd,
    Pad,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::Volume,
        Attribute::Age,
        Attribute::Gender,
        Attribute::Chd,
        Attribute::Pad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Volume => "volume",
            Attribute::Age => "age",
            Attribute::Gender => "gender",
            Attribute::Chd => "chd",
            Attribute::Pad => "pad",
        }
    }

    pub fn is_vision(self) -> bool {
        self == Attribute::Volume
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown attribute {s:?} (expected volume, age, gender, chd or pad)")))
    }
}

/// How the volume is neutralized when ablated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeBaseline {
    /// Every voxel set to the training mean intensity.
    #[default]
    ConstantMean,
    /// Voxelwise mean of the training volumes.
    VoxelwiseMean,
}

/// Replacement values used by [`ablate_attribute`], all in the model's input
/// space (standardized volume, encoded features).
#[derive(Debug, Clone, PartialEq)]
pub struct Baselines {
    pub volume: Volume,
    pub gender: (f64, f64),
    pub chd: f64,
    pub pad: f64,
}

impl Baselines {
    pub fn fit(train: &[PreparedRecord], kind: VolumeBaseline) -> Result<Baselines> {
        let first = train
            .first()
            .ok_or_else(|| Error::InsufficientData("baselines need at least one training record".into()))?;
        let shape = first.volume.shape();
        let n = train.len() as f64;
        let mut acc = vec![0.0f64; first.volume.data().len()];
        for r in train {
            if r.volume.shape() != shape {
                return Err(Error::Shape(format!("record {} has shape {:?}, expected {shape:?}", r.id, r.volume.shape())));
            }
            for (a, &v) in acc.iter_mut().zip(r.volume.data()) {
                *a += v as f64;
            }
        }
        let volume = match kind {
            VolumeBaseline::ConstantMean => {
                let mean = acc.iter().sum::<f64>() / (n * acc.len() as f64);
                Volume::filled(shape, mean as f32)
            }
            VolumeBaseline::VoxelwiseMean => Volume::from_vec(shape, acc.iter().map(|&a| (a / n) as f32).collect())?,
        };
        let mean_of = |i: usize| train.iter().map(|r| r.features.0[i]).sum::<f64>() / n;
        Ok(Baselines {
            volume,
            gender: (mean_of(FeatureVector::FEMALE), mean_of(FeatureVector::MALE)),
            chd: mean_of(FeatureVector::CHD),
            pad: mean_of(FeatureVector::PAD),
        })
    }
}

fn ablate_features(features: &FeatureVector, attribute: Attribute, b: &Baselines) -> FeatureVector {
    let mut f = *features;
    match attribute {
        Attribute::Volume => {}
        Attribute::Age => f.0[FeatureVector::AGE] = 0.0,
        Attribute::Gender => {
            f.0[FeatureVector::FEMALE] = b.gender.0;
            f.0[FeatureVector::MALE] = b.gender.1;
        }
        Attribute::Chd => f.0[FeatureVector::CHD] = b.chd,
        Attribute::Pad => f.0[FeatureVector::PAD] = b.pad,
    }
    f
}

/// Replaces one attribute by its baseline; everything else is unchanged.
pub fn ablate_attribute(
    volume: &Volume,
    features: &FeatureVector,
    attribute: &str,
    baselines: &Baselines,
) -> Result<(Volume, FeatureVector)> {
    let attribute: Attribute = attribute.parse()?;
    let v = if attribute == Attribute::Volume {
        if baselines.volume.shape() != volume.shape() {
            return Err(Error::Shape(format!(
                "baseline volume {:?} vs input {:?}",
                baselines.volume.shape(),
                volume.shape()
            )));
        }
        baselines.volume.clone()
    } else {
        volume.clone()
    };
    Ok((v, ablate_features(features, attribute, baselines)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContributionReport {
    pub modality: Modality,
    /// Indexed by `Attribute as usize`.
    pub absolute: [f64; 5],
    /// Share within the attribute's own modality; `None` when that modality
    /// contributes nothing at all.
    pub relative: [Option<f64>; 5],
    pub vision_total: f64,
    pub tabular_total: f64,
    pub collapse_flag: bool,
}

impl ContributionReport {
    pub fn absolute(&self, a: Attribute) -> f64 {
        self.absolute[a.index()]
    }

    pub fn relative(&self, a: Attribute) -> Option<f64> {
        self.relative[a.index()]
    }

    /// Whether the attribute is wired into the model at all.
    pub fn connected(&self, a: Attribute) -> bool {
        if a.is_vision() {
            self.modality.uses_vision()
        } else {
            self.modality.uses_tabular()
        }
    }

    fn from_raw(modality: Modality, u: [f64; 5]) -> Result<ContributionReport> {
        let total: f64 = u.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateContribution(
                "the model output does not change under any ablation".into(),
            ));
        }
        let absolute = u.map(|x| x / total);
        let vision_u = u[0];
        let tabular_u: f64 = u[1..].iter().sum();
        let mut relative = [None; 5];
        for a in Attribute::ALL {
            let denom = if a.is_vision() { vision_u } else { tabular_u };
            if denom > 0.0 {
                relative[a.index()] = Some(u[a.index()] / denom);
            }
        }
        let vision_total = absolute[0];
        let tabular_total: f64 = absolute[1..].iter().sum();
        Ok(ContributionReport {
            modality,
            absolute,
            relative,
            vision_total,
            tabular_total,
            collapse_flag: vision_total.min(tabular_total) < COLLAPSE_THRESHOLD,
        })
    }
}

/// Mean absolute output change per ablated attribute over `records`,
/// normalized to unit sum.
pub fn modality_contribution(
    params: &FusionModelParams,
    records: &[PreparedRecord],
    baselines: &Baselines,
) -> Result<ContributionReport> {
    if records.is_empty() {
        return Err(Error::InsufficientData("contribution needs a non-empty cohort".into()));
    }
    let modality = params.config.modality;
    let mut u = [0.0f64; 5];
    for r in records {
        let base = forward(params, &r.volume, &r.features)?.output;
        for a in Attribute::ALL {
            let out = if a.is_vision() {
                if !modality.uses_vision() {
                    continue;
                }
                forward(params, &baselines.volume, &r.features)?.output
            } else {
                if !modality.uses_tabular() {
                    continue;
                }
                forward(params, &r.volume, &ablate_features(&r.features, a, baselines))?.output
            };
            u[a.index()] += (out - base).abs();
        }
    }
    let n = records.len() as f64;
    ContributionReport::from_raw(modality, u.map(|x| x / n))
}

pub const CONTRIBUTION_CSV_HEADER: &str = "variant,3d_cta,age,gender,chd,pad";

/// One CSV table in the layout `variant,3d_cta,age,gender,chd,pad`. With
/// `relative` set the within-modality shares are written instead of absolute
/// values. Attributes not wired into a variant show as `-`.
pub fn contribution_csv(rows: &[(String, ContributionReport)], relative: bool) -> String {
    let mut s = String::from(CONTRIBUTION_CSV_HEADER);
    s.push('\n');
    for (variant, r) in rows {
        s.push_str(variant);
        for a in Attribute::ALL {
            let v = if relative { r.relative(a) } else { Some(r.absolute(a)) };
            match v {
                Some(x) if r.connected(a) => write!(s, ",{x:.4}").unwrap(),
                _ => s.push_str(",-"),
            }
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionFill {
    #[default]
    TrainMeanIntensity,
    /// Raw intensity zero, expressed in standardized units.
    Zero,
}

impl OcclusionFill {
    pub fn name(self) -> &'static str {
        match self {
            OcclusionFill::TrainMeanIntensity => "train_mean_intensity",
            OcclusionFill::Zero => "zero",
        }
    }

    /// Fill value in the standardized space the model sees.
    pub fn value(self, stats: &VolumeStats) -> f64 {
        match self {
            OcclusionFill::TrainMeanIntensity => 0.0,
            OcclusionFill::Zero => -stats.mean / stats.sd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcclusionConfig {
    pub patch: usize,
    pub stride: usize,
    pub fill: OcclusionFill,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig {
            patch: 6,
            stride: 3,
            fill: OcclusionFill::TrainMeanIntensity,
        }
    }
}

impl OcclusionConfig {
    pub fn validate(&self, shape: Shape3) -> Result<()> {
        let min_side = shape.iter().copied().min().unwrap_or(0);
        if self.patch == 0 || self.patch > min_side {
            return Err(Error::Config(format!(
                "occlusion: need 0 < patch <= min volume side ({min_side}), got {}",
                self.patch
            )));
        }
        if self.stride == 0 || self.stride > self.patch {
            return Err(Error::Config(format!(
                "occlusion: need 0 < stride <= patch, got stride {} with patch {}",
                self.stride, self.patch
            )));
        }
        Ok(())
    }
}

/// Patch start positions along an axis of length `len`. Patches are clipped at
/// the far edge; a start is dropped once the previous patch already reached it.
fn starts(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut s = 0;
    while s + patch < len {
        s += stride;
        out.push(s);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyVolume {
    pub grid: Volume,
    pub config: OcclusionConfig,
}

/// Occlusion sensitivity of the model output for one record.
pub fn occlusion_saliency(
    params: &FusionModelParams,
    record: &PreparedRecord,
    config: &OcclusionConfig,
    stats: &VolumeStats,
) -> Result<SaliencyVolume> {
    let fill = config.fill.value(stats) as f32;
    if !params.config.modality.uses_vision() {
        // the volume never reaches the output
        config.validate(record.volume.shape())?;
        return Ok(SaliencyVolume {
            grid: Volume::zeros(record.volume.shape()),
            config: *config,
        });
    }
    let grid = occlusion_map(&record.volume, config, fill, |v| {
        forward(params, v, &record.features).map(|o| o.output)
    })?;
    Ok(SaliencyVolume { grid, config: *config })
}

/// Occlusion map of an arbitrary scalar function of the volume: per voxel,
/// the mean |f(occluded) − f(original)| over every placement covering it,
/// scaled to a maximum of one (all zeros if nothing changes).
pub fn occlusion_map<F>(volume: &Volume, config: &OcclusionConfig, fill: f32, mut f: F) -> Result<Volume>
where
    F: FnMut(&Volume) -> Result<f64>,
{
    let shape = volume.shape();
    config.validate(shape)?;
    let n = volume.data().len();
    let base = f(volume)?;
    let mut sum = vec![0.0f64; n];
    let mut cover = vec![0u32; n];
    let axes: Vec<Vec<usize>> = (0..3).map(|a| starts(shape[a], config.patch, config.stride)).collect();
    let mut occluded = volume.clone();
    let mut idx = Vec::with_capacity(config.patch.pow(3));
    for &s0 in &axes[0] {
        for &s1 in &axes[1] {
            for &s2 in &axes[2] {
                idx.clear();
                for i in s0..(s0 + config.patch).min(shape[0]) {
                    for j in s1..(s1 + config.patch).min(shape[1]) {
                        for k in s2..(s2 + config.patch).min(shape[2]) {
                            idx.push((i * shape[1] + j) * shape[2] + k);
                        }
                    }
                }
                for &x in &idx {
                    occluded.data_mut()[x] = fill;
                }
                let d = (f(&occluded)? - base).abs();
                for &x in &idx {
                    sum[x] += d;
                    cover[x] += 1;
                    occluded.data_mut()[x] = volume.data()[x];
                }
            }
        }
    }
    let raw: Vec<f64> = sum.iter().zip(&cover).map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let max = raw.iter().copied().fold(0.0f64, f64::max);
    let data = if max < 1e-9 {
        vec![0.0f32; n]
    } else {
        raw.iter().map(|&v| (v / max) as f32).collect()
    };
    Volume::from_vec(shape, data)
}

fn top_threshold(values: &[f32], top_fraction: f64) -> f32 {
    let k = ((top_fraction * values.len() as f64).round() as usize).clamp(1, values.len());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[k - 1]
}

fn iou(selected: impl Iterator<Item = bool>, mask: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (s, &m) in selected.zip(mask) {
        inter += (s && m) as usize;
        union += (s || m) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Binarizes the saliency at its `1 − top_fraction` quantile and scores it
/// against the mask. Returns the IoU and whether the most salient voxel lies
/// inside the mask.
pub fn saliency_hit(saliency: &SaliencyVolume, mask: &Mask, top_fraction: f64) -> Result<(f64, bool)> {
    let grid = &saliency.grid;
    if grid.shape() != mask.shape() {
        return Err(Error::Shape(format!("saliency {:?} vs mask {:?}", grid.shape(), mask.shape())));
    }
    if !(top_fraction > 0.0 && top_fraction < 1.0) {
        return Err(Error::Argument(format!("top_fraction must lie in (0, 1), got {top_fraction}")));
    }
    if mask.count() == 0 {
        return Err(Error::Argument("empty lesion mask".into()));
    }
    let values = grid.data();
    let t = top_threshold(values, top_fraction);
    let score = iou(values.iter().map(|&v| v >= t), mask.data());
    // lowest index among maxima
    let argmax = values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > values[best] { i } else { best });
    Ok((score, mask.data()[argmax]))
}

/// Expected IoU of a uniformly random top-`top_fraction` selection against
/// `mask`, estimated by Monte Carlo.
pub fn random_iou_baseline(mask: &Mask, top_fraction: f64, trials: usize, seed: u64) -> Result<f64> {
    if mask.count() == 0 {
        return Err(Error::Argument("empty lesion mask".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = mask.data().len();
    let mut values = vec![0.0f32; n];
    let mut total = 0.0;
    for _ in 0..trials.max(1) {
        for v in values.iter_mut() {
            *v = rng.gen();
        }
        let t = top_threshold(&values, top_fraction);
        total += iou(values.iter().map(|&v| v >= t), mask.data());
    }
    Ok(total / trials.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};

    const S: Shape3 = [8, 8, 8];

    fn record(i: usize) -> PreparedRecord {
        let data = (0..512).map(|k| ((k * 7 + i * 13) % 17) as f32 / 17.0 - 0.5).collect();
        let x = i as f64 * 0.3 - 1.0;
        PreparedRecord {
            id: format!("r{i}"),
            volume: Volume::from_vec(S, data).unwrap(),
            features: FeatureVector([x, (i % 2) as f64, 1.0 - (i % 2) as f64, (i % 3 == 0) as u8 as f64, 0.0]),
            relapse: i % 2 == 0,
            rfs_days: Some(1000.0),
            lesion_mask: None,
        }
    }

    fn model(modality: Modality) -> FusionModelParams {
        init_model(&ModelConfig {
            input_shape: S,
            vision_channels: vec![2, 4],
            vision_embed_dim: 4,
            tabular_hidden: vec![4],
            tabular_embed_dim: 3,
            fusion_hidden: vec![4],
            modality,
            init_seed: 5,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn stats() -> VolumeStats {
        VolumeStats { mean: 0.5, sd: 2.0 }
    }

    #[test]
    fn ablate_age_and_unknown() {
        let recs: Vec<_> = (0..4).map(record).collect();
        let b = Baselines::fit(&recs, VolumeBaseline::ConstantMean).unwrap();
        let f = FeatureVector([1.3, 0.0, 1.0, 1.0, 0.0]);
        let v = Volume::zeros(S);
        let (v2, f2) = ablate_attribute(&v, &f, "age", &b).unwrap();
        assert_eq!(f2.0, [0.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(v2, v);
        assert!(matches!(ablate_attribute(&v, &f, "weight", &b), Err(Error::Argument(_))));
    }

    #[test]
    fn gender_baseline_is_mean_one_hot() {
        // 664 of 1000 male
        let recs: Vec<_> = (0..1000)
            .map(|i| {
                let mut r = record(0);
                r.volume = Volume::zeros([2, 2, 2]);
                let male = i < 664;
                r.features = FeatureVector([0.0, (!male) as u8 as f64, male as u8 as f64, 0.0, 0.0]);
                r
            })
            .collect();
        let b = Baselines::fit(&recs, VolumeBaseline::ConstantMean).unwrap();
        assert!((b.gender.0 - 0.336).abs() < 1e-12 && (b.gender.1 - 0.664).abs() < 1e-12);
        let (_, f) = ablate_attribute(&recs[0].volume, &recs[0].features, "gender", &b).unwrap();
        assert_eq!((f.0[1], f.0[2]), b.gender);
    }

    #[test]
    fn volume_baselines() {
        let recs: Vec<_> = (0..3).map(record).collect();
        let c = Baselines::fit(&recs, VolumeBaseline::ConstantMean).unwrap();
        let first = c.volume.data()[0];
        assert!(c.volume.data().iter().all(|&v| v == first));
        let w = Baselines::fit(&recs, VolumeBaseline::VoxelwiseMean).unwrap();
        let expect = recs.iter().map(|r| r.volume.data()[5] as f64).sum::<f64>() / 3.0;
        assert!((w.volume.data()[5] as f64 - expect).abs() < 1e-6);
        assert!((w.volume.mean() - c.volume.mean()).abs() < 1e-5);
    }

    #[test]
    fn tabular_only_ignores_volume_ablation() {
        let recs: Vec<_> = (0..6).map(record).collect();
        let b = Baselines::fit(&recs, VolumeBaseline::ConstantMean).unwrap();
        let p = model(Modality::TabularOnly);
        let r = &recs[1];
        let (v, f) = ablate_attribute(&r.volume, &r.features, "volume", &b).unwrap();
        assert_eq!(forward(&p, &v, &f).unwrap().output, forward(&p, &r.volume, &r.features).unwrap().output);
    }

    #[test]
    fn contributions_normalize() {
        let recs: Vec<_> = (0..6).map(record).collect();
        let b = Baselines::fit(&recs, VolumeBaseline::ConstantMean).unwrap();
        for m in [Modality::TabularOnly, Modality::VisionOnly, Modality::Multimodal] {
            let r = modality_contribution(&model(m), &recs, &b).unwrap();
            assert!((r.absolute.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((r.vision_total + r.tabular_total - 1.0).abs() < 1e-9);
            let tab: f64 = Attribute::ALL[1..].iter().filter_map(|&a| r.relative(a)).sum();
            match m {
                Modality::VisionOnly => {
                    assert_eq!(r.vision_total, 1.0);
                    assert_eq!(r.relative(Attribute::Volume), Some(1.0));
                    assert!(Attribute::ALL[1..].iter().all(|&a| r.absolute(a) == 0.0));
                    assert!(r.collapse_flag);
                }
                Modality::TabularOnly => {
                    assert_eq!(r.absolute(Attribute::Volume), 0.0);
                    assert!((r.tabular_total - 1.0).abs() < 1e-12);
                    assert!((tab - 1.0).abs() < 1e-9);
                }
                Modality::Multimodal => {
                    assert!((tab - 1.0).abs() < 1e-9);
                    assert_eq!(r.relative(Attribute::Volume), Some(1.0));
                }
            }
        }
    }

    #[test]
    fn constant_model_is_degenerate() {
        let recs: Vec<_> = (0..3).map(record).collect();
        let b = Baselines::fit(&recs, VolumeBaseline::ConstantMean).unwrap();
        let mut p = model(Modality::Multimodal);
        let spec = p.layout.find("fusion.out.weight").unwrap().clone();
        p.values[spec.offset..spec.offset + spec.len()].fill(0.0);
        assert!(matches!(
            modality_contribution(&p, &recs, &b),
            Err(Error::DegenerateContribution(_))
        ));
        assert!(matches!(modality_contribution(&p, &[], &b), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn csv_marks_excised_attributes() {
        let recs: Vec<_> = (0..4).map(record).collect();
        let b = Baselines::fit(&recs, VolumeBaseline::ConstantMean).unwrap();
        let rows = vec![
            ("vision_only".to_string(), modality_contribution(&model(Modality::VisionOnly), &recs, &b).unwrap()),
            ("tabular_only".to_string(), modality_contribution(&model(Modality::TabularOnly), &recs, &b).unwrap()),
        ];
        let csv = contribution_csv(&rows, false);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], CONTRIBUTION_CSV_HEADER);
        assert_eq!(lines[1], "vision_only,1.0000,-,-,-,-");
        assert!(lines[2].starts_with("tabular_only,-,"));
        let rel = contribution_csv(&rows, true);
        assert_eq!(rel.lines().nth(1).unwrap(), "vision_only,1.0000,-,-,-,-");
    }

    #[test]
    fn occlusion_config_validation() {
        assert!(OcclusionConfig::default().validate([24; 3]).is_ok());
        let bad = |patch, stride| OcclusionConfig { patch, stride, fill: OcclusionFill::Zero }.validate([8, 8, 8]);
        assert!(bad(0, 1).is_err());
        assert!(bad(9, 3).is_err());
        assert!(bad(4, 5).is_err());
        assert!(bad(4, 0).is_err());
        assert!(bad(8, 8).is_ok());
    }

    #[test]
    fn placements_are_clipped() {
        assert_eq!(starts(24, 6, 3), vec![0, 3, 6, 9, 12, 15, 18]);
        assert_eq!(starts(8, 8, 8), vec![0]);
        assert_eq!(starts(10, 4, 3), vec![0, 3, 6]);
        assert_eq!(starts(10, 4, 4), vec![0, 4, 8]);
    }

    #[test]
    fn tabular_model_has_zero_saliency() {
        let p = model(Modality::TabularOnly);
        let s = occlusion_saliency(&p, &record(2), &OcclusionConfig { patch: 4, stride: 2, ..Default::default() }, &stats())
            .unwrap();
        assert!(s.grid.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saliency_is_deterministic_and_normalized() {
        let p = model(Modality::VisionOnly);
        let cfg = OcclusionConfig { patch: 4, stride: 2, ..Default::default() };
        let a = occlusion_saliency(&p, &record(3), &cfg, &stats()).unwrap();
        let b = occlusion_saliency(&p, &record(3), &cfg, &stats()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.grid.max(), 1.0);
        assert!(a.grid.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    /// Analytic model: output = mean intensity over a fixed box R.
    #[test]
    fn region_mean_model_peaks_inside_region() {
        let shape = [12, 12, 12];
        let inside = |i: usize, j: usize, k: usize| (5..8).contains(&i) && (4..8).contains(&j) && (6..9).contains(&k);
        let data = (0..1728).map(|x| 1.0 + (x % 5) as f32 * 0.1).collect();
        let vol = Volume::from_vec(shape, data).unwrap();
        let region_mean = |v: &Volume| -> Result<f64> {
            let mut s = 0.0;
            for i in 5..8 {
                for j in 4..8 {
                    for k in 6..9 {
                        s += v.get(i, j, k) as f64;
                    }
                }
            }
            Ok(s / 36.0)
        };
        let cfg = OcclusionConfig { patch: 4, stride: 2, fill: OcclusionFill::TrainMeanIntensity };
        let map = occlusion_map(&vol, &cfg, 0.0, region_mean).unwrap();
        assert_eq!(map.max(), 1.0);
        let mut max_inside = 0.0f32;
        for i in 0..12 {
            for j in 0..12 {
                for k in 0..12 {
                    let v = map.get(i, j, k);
                    if inside(i, j, k) {
                        max_inside = max_inside.max(v);
                    } else {
                        assert!(v < 1.0, "maximum outside the region at {:?}", (i, j, k));
                    }
                }
            }
        }
        assert_eq!(max_inside, 1.0);
        // voxels whose every covering patch misses R carry nothing
        assert_eq!(map.get(0, 0, 0), 0.0);
        assert_eq!(map.get(11, 11, 0), 0.0);
    }

    #[test]
    fn hit_examples() {
        let mut mask = Mask::empty([4, 4, 4]);
        for k in 0..4 {
            mask.set(1, 1, k, true);
        }
        let grid = Volume::from_vec([4, 4, 4], mask.data().iter().map(|&m| m as u8 as f32).collect()).unwrap();
        let sal = SaliencyVolume { grid, config: OcclusionConfig::default() };
        let (iou, hit) = saliency_hit(&sal, &mask, 4.0 / 64.0).unwrap();
        assert_eq!((iou, hit), (1.0, true));

        let mut grid = Volume::zeros([4, 4, 4]);
        for k in 0..4 {
            grid.set(3, 3, k, 1.0);
        }
        let sal = SaliencyVolume { grid, config: OcclusionConfig::default() };
        assert_eq!(saliency_hit(&sal, &mask, 4.0 / 64.0).unwrap(), (0.0, false));

        assert!(matches!(saliency_hit(&sal, &Mask::empty([4, 4, 4]), 0.1), Err(Error::Argument(_))));
        assert!(saliency_hit(&sal, &mask, 1.0).is_err());
    }

    #[test]
    fn random_baseline_near_density() {
        let mut mask = Mask::empty([24, 24, 24]);
        let n = (0.02 * 13824.0) as usize;
        for i in 0..n {
            mask.set(i / 24 / 24, (i / 24) % 24, i % 24, true);
        }
        let b = random_iou_baseline(&mask, 0.02, 50, 1).unwrap();
        assert!((b - 0.0101).abs() < 0.004, "{b}");
    }
}
