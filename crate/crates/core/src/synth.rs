//! Synthetic multimodal cohorts with a known generative model.
//!
//! Each patient gets a latent risk `logistic(offset + Σ wᵢ·zᵢ)` over the
//! standardized tabular attributes and a latent lesion severity. The risk
//! drives both the RFS time and the brightness of a lesion planted on a tube
//! phantom, so attribute weights and lesion masks serve as ground truth for
//! the interpretability checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Gender, PatientRecord, Provenance};
use crate::error::{Error, Result};
use crate::preprocess::{DEFAULT_KAPPA_LOW, DEFAULT_RFS_CAP};
use crate::volume::{Mask, Shape3, Volume};

pub const AGE_MEAN: f64 = 69.10;
pub const AGE_SD: f64 = 10.18;
const AGE_CLIP: (f64, f64) = (30.0, 95.0);

const BACKGROUND_LEVEL: f32 = 0.2;
const HEAD_LEVEL: f32 = 1.0;
const TUBE_LEVEL: f32 = 2.0;

/// Generative weights on the latent risk score, keyed by attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskWeights {
    pub age_z: f64,
    pub gender: f64,
    pub chd: f64,
    pub pad: f64,
    pub lesion: f64,
}

impl Default for RiskWeights {
    fn default() -> Self {
        RiskWeights {
            age_z: 1.0,
            gender: 0.6,
            chd: 0.5,
            pad: 0.7,
            lesion: 1.5,
        }
    }
}

impl RiskWeights {
    pub fn zero() -> Self {
        RiskWeights {
            age_z: 0.0,
            gender: 0.0,
            chd: 0.0,
            pad: 0.0,
            lesion: 0.0,
        }
    }

    fn all(&self) -> [f64; 5] {
        [self.age_z, self.gender, self.chd, self.pad, self.lesion]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub volume_shape: Shape3,
    pub risk_weights: RiskWeights,
    /// Intercept of the risk score; shifts the relapse share.
    pub risk_offset: f64,
    pub lesion_intensity_scale: f64,
    /// Per-voxel Gaussian noise on the phantom.
    pub volume_noise_sd: f64,
    pub rfs_scale: f64,
    pub rfs_noise_sd: f64,
    pub frac_unknown_rfs: f64,
    pub male_fraction: f64,
    pub chd_prevalence: f64,
    pub pad_prevalence: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 119,
            volume_shape: [24, 24, 24],
            risk_weights: RiskWeights::default(),
            risk_offset: -0.6,
            lesion_intensity_scale: 2.0,
            volume_noise_sd: 0.1,
            rfs_scale: 3200.0,
            rfs_noise_sd: 150.0,
            frac_unknown_rfs: 0.44,
            male_fraction: 0.664,
            chd_prevalence: 0.252,
            pad_prevalence: 0.218,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.n_patients == 0 {
            return bad("n_patients must be > 0");
        }
        if self.volume_shape.iter().any(|&d| d < 8) {
            return bad("every volume axis must be >= 8 voxels");
        }
        if !(0.0..=1.0).contains(&self.frac_unknown_rfs) {
            return bad("frac_unknown_rfs must lie in [0, 1]");
        }
        for (name, p) in [
            ("male_fraction", self.male_fraction),
            ("chd_prevalence", self.chd_prevalence),
            ("pad_prevalence", self.pad_prevalence),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.rfs_scale > 0.0) {
            return bad("rfs_scale must be > 0");
        }
        if !(self.rfs_noise_sd >= 0.0) || !(self.volume_noise_sd >= 0.0) {
            return bad("noise standard deviations must be >= 0");
        }
        if !self.lesion_intensity_scale.is_finite()
            || !self.risk_offset.is_finite()
            || self.risk_weights.all().iter().any(|w| !w.is_finite())
        {
            return bad("weights and scales must be finite");
        }
        Ok(())
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Standardizes a Bernoulli indicator by its population mean and sd.
fn standardized_flag(flag: bool, p: f64) -> f64 {
    let sd = (p * (1.0 - p)).sqrt();
    if sd == 0.0 {
        0.0
    } else {
        (flag as u8 as f64 - p) / sd
    }
}

fn patient_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `clamp(rfs_scale·(1 − risk) + N(0, rfs_noise_sd), 1, 2555)`.
pub fn rfs_from_risk<R: Rng + ?Sized>(risk: f64, config: &SynthConfig, rng: &mut R) -> f64 {
    let noise = if config.rfs_noise_sd > 0.0 {
        Normal::new(0.0, config.rfs_noise_sd).unwrap().sample(rng)
    } else {
        0.0
    };
    (config.rfs_scale * (1.0 - risk) + noise).clamp(1.0, DEFAULT_RFS_CAP)
}

/// Phantom volume: smooth background, ellipsoidal head, a vertical tube
/// along axis 0, and an ellipsoidal lesion centred on the tube whose
/// brightness above the tube is `lesion_intensity_scale · risk`.
pub fn synth_volume<R: Rng + ?Sized>(risk: f64, config: &SynthConfig, rng: &mut R) -> (Volume, Mask) {
    let shape = config.volume_shape;
    let [d0, d1, d2] = shape;
    let (f0, f1, f2) = (d0 as f64, d1 as f64, d2 as f64);

    let tube_c = (0.5 * f1, 0.42 * f2);
    let tube_r = (0.07 * f1.min(f2)).max(1.5);
    let head_c = (0.72 * f0, 0.5 * f1, 0.5 * f2);
    let head_r = (0.25 * f0, 0.38 * f1, 0.38 * f2);

    // lesion position: somewhere in the lower band of the tube
    let lesion_axial = rng.gen_range(0.22..0.45) * f0;
    let lesion_r = (0.16 * f0, 0.12 * f1, 0.12 * f2);
    let lesion_level = TUBE_LEVEL + (config.lesion_intensity_scale * risk) as f32;

    let mut volume = Volume::zeros(shape);
    let mut mask = Mask::empty(shape);
    let noise = Normal::new(0.0, config.volume_noise_sd.max(f64::MIN_POSITIVE)).unwrap();
    let two_pi = std::f64::consts::TAU;

    for i in 0..d0 {
        let a = i as f64 + 0.5;
        for j in 0..d1 {
            let b = j as f64 + 0.5;
            for k in 0..d2 {
                let c = k as f64 + 0.5;
                let mut v = BACKGROUND_LEVEL
                    + (0.1 * (two_pi * a / f0).sin() * (two_pi * b / f1).cos()) as f32;
                let head = ((a - head_c.0) / head_r.0).powi(2)
                    + ((b - head_c.1) / head_r.1).powi(2)
                    + ((c - head_c.2) / head_r.2).powi(2);
                if head <= 1.0 {
                    v += HEAD_LEVEL;
                }
                let tube = ((b - tube_c.0).powi(2) + (c - tube_c.1).powi(2)).sqrt();
                if tube <= tube_r && a <= head_c.0 {
                    v = TUBE_LEVEL;
                }
                let lesion = ((a - lesion_axial) / lesion_r.0).powi(2)
                    + ((b - tube_c.0) / lesion_r.1).powi(2)
                    + ((c - tube_c.1) / lesion_r.2).powi(2);
                if lesion <= 1.0 {
                    v = lesion_level;
                    mask.set(i, j, k, true);
                }
                if config.volume_noise_sd > 0.0 {
                    v += noise.sample(rng) as f32;
                }
                volume.set(i, j, k, v);
            }
        }
    }
    (volume, mask)
}

/// Generates the full cohort. Deterministic for a fixed config: each patient
/// draws from its own ChaCha stream, and the unknown-RFS subset from a
/// dedicated cohort-level stream.
pub fn synth_cohort(config: &SynthConfig) -> Result<Cohort> {
    config.validate()?;
    let w = &config.risk_weights;
    let age_dist = Normal::new(AGE_MEAN, AGE_SD).unwrap();
    let mut records: Vec<PatientRecord> = (0..config.n_patients)
        .map(|i| {
            let mut rng = patient_rng(config.seed, i as u64);
            let age = age_dist.sample(&mut rng).clamp(AGE_CLIP.0, AGE_CLIP.1);
            let male = rng.gen_bool(config.male_fraction);
            let chd = rng.gen_bool(config.chd_prevalence);
            let pad = rng.gen_bool(config.pad_prevalence);
            let severity: f64 = rng.sample(rand_distr::StandardNormal);
            let score = config.risk_offset
                + w.age_z * (age - AGE_MEAN) / AGE_SD
                + w.gender * standardized_flag(male, config.male_fraction)
                + w.chd * standardized_flag(chd, config.chd_prevalence)
                + w.pad * standardized_flag(pad, config.pad_prevalence)
                + w.lesion * severity;
            let risk = logistic(score);
            let rfs = rfs_from_risk(risk, config, &mut rng);
            let (volume, mask) = synth_volume(risk, config, &mut rng);
            PatientRecord {
                id: format!("P{i:04}"),
                volume,
                age,
                gender: if male { Gender::Male } else { Gender::Female },
                chd,
                pad,
                relapse: rfs < DEFAULT_KAPPA_LOW,
                rfs_days: Some(rfs),
                max_possible_rfs_days: None,
                lesion_mask: Some(mask),
                latent_risk: Some(risk),
            }
        })
        .collect();

    let mut relapse_idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].relapse).collect();
    let n_hidden = (config.frac_unknown_rfs * relapse_idx.len() as f64).round() as usize;
    let mut rng = patient_rng(config.seed, u64::MAX);
    relapse_idx.shuffle(&mut rng);
    let mut hidden = relapse_idx[..n_hidden].to_vec();
    hidden.sort_unstable();
    for i in hidden {
        let rec = &mut records[i];
        let rfs = rec.rfs_days.take().expect("generated records carry RFS");
        let slack: f64 = rng.gen_range(0.0..1.0);
        rec.max_possible_rfs_days = Some(rfs + slack * (DEFAULT_KAPPA_LOW - rfs));
    }
    Cohort::new(records, Provenance::Synthetic, Some(config.clone()))
}
