//! Cohort selection, tabular encoding, volume standardization and the
//! stratified train/test split.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Gender, PatientRecord};
use crate::error::{Error, Result};
use crate::volume::{Mask, Volume};

pub const DEFAULT_KAPPA_LOW: f64 = 1642.0;
pub const DEFAULT_KAPPA_HIGH: f64 = 1825.0;
pub const DEFAULT_RFS_CAP: f64 = 2555.0;

/// How non-relapse RFS values beyond `rfs_cap` are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffMode {
    #[default]
    Cap,
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub kappa_low: f64,
    pub kappa_high: f64,
    pub rfs_cap: f64,
    pub cutoff_mode: CutoffMode,
    pub split_ratio: f64,
    pub split_seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            kappa_low: DEFAULT_KAPPA_LOW,
            kappa_high: DEFAULT_KAPPA_HIGH,
            rfs_cap: DEFAULT_RFS_CAP,
            cutoff_mode: CutoffMode::Cap,
            split_ratio: 0.8,
            split_seed: 11,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_low < self.kappa_high && self.kappa_high <= self.rfs_cap) {
            return Err(Error::Config(format!(
                "selection: kappa ordering violated, need kappa_low < kappa_high <= rfs_cap \
                 (got {} / {} / {})",
                self.kappa_low, self.kappa_high, self.rfs_cap
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "selection: split_ratio must lie in (0, 1), got {}",
                self.split_ratio
            )));
        }
        Ok(())
    }

    /// Stand-in true time for test records whose RFS was never observed.
    pub fn missing_rfs_substitute(&self) -> f64 {
        0.5 * self.kappa_low
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeStats {
    pub mu: f64,
    pub sigma: f64,
}

/// Sample mean and `N − 1` standard deviation of training ages.
pub fn compute_age_stats(train_records: &[PatientRecord]) -> Result<AgeStats> {
    let n = train_records.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "age statistics need at least 2 records, got {n}"
        )));
    }
    let mu = train_records.iter().map(|r| r.age).sum::<f64>() / n as f64;
    let ss: f64 = train_records.iter().map(|r| (r.age - mu).powi(2)).sum();
    let sigma = (ss / (n - 1) as f64).sqrt();
    if !(sigma > 1e-12) {
        return Err(Error::DegenerateStatistics("all training ages are identical".into()));
    }
    Ok(AgeStats { mu, sigma })
}

/// `[age_z, female, male, chd, pad]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; 5]);

impl FeatureVector {
    pub const LEN: usize = 5;
    pub const AGE: usize = 0;
    pub const FEMALE: usize = 1;
    pub const MALE: usize = 2;
    pub const CHD: usize = 3;
    pub const PAD: usize = 4;

    pub fn values(&self) -> &[f64; 5] {
        &self.0
    }
}

pub fn encode_tabular(record: &PatientRecord, stats: &AgeStats) -> FeatureVector {
    let (female, male) = match record.gender {
        Gender::Female => (1.0, 0.0),
        Gender::Male => (0.0, 1.0),
    };
    FeatureVector([
        (record.age - stats.mu) / stats.sigma,
        female,
        male,
        record.chd as u8 as f64,
        record.pad as u8 as f64,
    ])
}

/// Applies the RFS inclusion bounds. Relapses must lie strictly below
/// `kappa_low` (or, when unobserved, be bounded below it); non-relapses must
/// lie strictly above `kappa_high`.
pub fn select_cohort(cohort: &Cohort, config: &SelectionConfig) -> Result<Cohort> {
    let kept = cohort
        .records
        .iter()
        .filter_map(|r| {
            if r.relapse {
                let keep = match (r.rfs_days, r.max_possible_rfs_days) {
                    (Some(rfs), _) => rfs < config.kappa_low,
                    (None, Some(max_possible)) => max_possible < config.kappa_low,
                    (None, None) => false,
                };
                keep.then(|| r.clone())
            } else {
                let rfs = r.rfs_days?;
                if rfs <= config.kappa_high {
                    return None;
                }
                if rfs > config.rfs_cap {
                    match config.cutoff_mode {
                        CutoffMode::Exclude => return None,
                        CutoffMode::Cap => {
                            let mut capped = r.clone();
                            capped.rfs_days = Some(config.rfs_cap);
                            return Some(capped);
                        }
                    }
                }
                Some(r.clone())
            }
        })
        .collect();
    cohort.with_records(kept)
}

/// Stratified (by relapse flag), seeded split. Record order within each
/// output follows the input order.
pub fn split_cohort(cohort: &Cohort, config: &SelectionConfig) -> Result<(Cohort, Cohort)> {
    if cohort.is_empty() {
        return Err(Error::InsufficientData("cannot split an empty cohort".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.split_seed);
    let mut in_train = vec![false; cohort.len()];
    for stratum in [true, false] {
        let mut idx: Vec<usize> = (0..cohort.len())
            .filter(|&i| cohort.records[i].relapse == stratum)
            .collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            warn!(
                "stratum relapse={stratum} has {} member(s); assigning to train",
                idx.len()
            );
            idx.iter().for_each(|&i| in_train[i] = true);
            continue;
        }
        idx.shuffle(&mut rng);
        let n_train = (config.split_ratio * idx.len() as f64).round() as usize;
        idx[..n_train].iter().for_each(|&i| in_train[i] = true);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in cohort.records.iter().zip(&in_train) {
        if *t {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    Ok((cohort.with_records(train)?, cohort.with_records(test)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeStats {
    pub mean: f64,
    pub sd: f64,
}

/// Global voxel mean and (population) sd over all training volumes.
pub fn compute_volume_stats(train_records: &[PatientRecord]) -> Result<VolumeStats> {
    let n: usize = train_records.iter().map(|r| r.volume.data().len()).sum();
    if n == 0 {
        return Err(Error::InsufficientData("no training voxels".into()));
    }
    let mean = train_records
        .iter()
        .flat_map(|r| r.volume.data())
        .map(|&v| v as f64)
        .sum::<f64>()
        / n as f64;
    let var = train_records
        .iter()
        .flat_map(|r| r.volume.data())
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    Ok(VolumeStats { mean, sd: var.sqrt() })
}

pub fn normalize_volume(volume: &Volume, stats: &VolumeStats) -> Result<Volume> {
    if !(stats.sd > 0.0) {
        return Err(Error::DegenerateStatistics("volume sd is zero".into()));
    }
    let mut out = volume.clone();
    for v in out.data_mut() {
        *v = ((*v as f64 - stats.mean) / stats.sd) as f32;
    }
    Ok(out)
}

/// Statistics fitted on the training split and applied unchanged to any
/// other split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub age: AgeStats,
    pub volume: VolumeStats,
}

impl TrainStats {
    pub fn fit(train: &Cohort) -> Result<TrainStats> {
        Ok(TrainStats {
            age: compute_age_stats(&train.records)?,
            volume: compute_volume_stats(&train.records)?,
        })
    }
}

/// A record with training statistics applied: standardized volume and
/// encoded features, plus the labels needed downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecord {
    pub id: String,
    pub volume: Volume,
    pub features: FeatureVector,
    pub relapse: bool,
    pub rfs_days: Option<f64>,
    pub lesion_mask: Option<Mask>,
}

impl PreparedRecord {
    pub fn unknown_rfs_relapse(&self) -> bool {
        self.relapse && self.rfs_days.is_none()
    }
}

pub fn prepare(cohort: &Cohort, stats: &TrainStats) -> Result<Vec<PreparedRecord>> {
    cohort
        .records
        .iter()
        .map(|r| {
            Ok(PreparedRecord {
                id: r.id.clone(),
                volume: normalize_volume(&r.volume, &stats.volume)?,
                features: encode_tabular(r, &stats.age),
                relapse: r.relapse,
                rfs_days: r.rfs_days,
                lesion_mask: r.lesion_mask.clone(),
            })
        })
        .collect()
}
