//! Patient records, cohorts and the cohort manifest format.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::SynthConfig;
use crate::volume::{Mask, Volume};

pub const MANIFEST_HEADER: &str = "id,age,gender,chd,pad,relapse,rfs_days,max_possible_rfs_days";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub volume: Volume,
    pub age: f64,
    pub gender: Gender,
    pub chd: bool,
    pub pad: bool,
    pub relapse: bool,
    pub rfs_days: Option<f64>,
    pub max_possible_rfs_days: Option<f64>,
    /// Synthetic ground truth only.
    pub lesion_mask: Option<Mask>,
    /// Synthetic ground truth only.
    pub latent_risk: Option<f64>,
}

impl PatientRecord {
    pub fn validate(&self) -> Result<()> {
        if self.relapse {
            if let Some(rfs) = self.rfs_days {
                if rfs <= 0.0 {
                    return Err(Error::Argument(format!(
                        "record {}: relapse RFS must be positive, got {rfs}",
                        self.id
                    )));
                }
            }
        }
        if self.rfs_days.is_none() && self.max_possible_rfs_days.is_none() {
            return Err(Error::Argument(format!(
                "record {}: unknown RFS requires max_possible_rfs_days",
                self.id
            )));
        }
        if let Some(mask) = &self.lesion_mask {
            if mask.shape() != self.volume.shape() {
                return Err(Error::Shape(format!(
                    "record {}: mask {:?} vs volume {:?}",
                    self.id,
                    mask.shape(),
                    self.volume.shape()
                )));
            }
        }
        Ok(())
    }

    /// Relapse record whose RFS was never observed.
    pub fn unknown_rfs_relapse(&self) -> bool {
        self.relapse && self.rfs_days.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub records: Vec<PatientRecord>,
    pub provenance: Provenance,
    pub generator_config: Option<SynthConfig>,
}

impl Cohort {
    pub fn new(
        records: Vec<PatientRecord>,
        provenance: Provenance,
        generator_config: Option<SynthConfig>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Argument(format!("duplicate patient id {}", r.id)));
            }
        }
        Ok(Cohort {
            records,
            provenance,
            generator_config,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_relapse(&self) -> usize {
        self.records.iter().filter(|r| r.relapse).count()
    }

    /// Same provenance and generator, different records.
    pub fn with_records(&self, records: Vec<PatientRecord>) -> Result<Cohort> {
        Cohort::new(records, self.provenance, self.generator_config.clone())
    }

    pub fn manifest_text(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.id,
                r.age,
                r.gender,
                r.chd as u8,
                r.pad as u8,
                r.relapse as u8,
                opt(r.rfs_days),
                opt(r.max_possible_rfs_days),
            ));
        }
        out
    }

    /// Writes `manifest.csv`, `volumes/<id>.vol` and, where present, `masks/<id>.mask`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let vol_dir = dir.join("volumes");
        let mask_dir = dir.join("masks");
        fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
        fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;
        let manifest = dir.join("manifest.csv");
        fs::write(&manifest, self.manifest_text()).map_err(|e| Error::io(&manifest, e))?;
        for r in &self.records {
            r.volume.save(&vol_dir.join(format!("{}.vol", r.id)))?;
            if let Some(mask) = &r.lesion_mask {
                mask.save(&mask_dir.join(format!("{}.mask", r.id)))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path, provenance: Provenance, generator_config: Option<SynthConfig>) -> Result<Cohort> {
        let manifest = dir.join("manifest.csv");
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == MANIFEST_HEADER => {}
            _ => return Err(Error::format(&manifest, "missing or unexpected header row")),
        }
        let mut records = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ctx = |what: &str| Error::format(&manifest, format!("line {}: {what}", lineno + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(ctx("expected 8 fields"));
            }
            let id = f[0].to_string();
            let age: f64 = f[1].parse().map_err(|_| ctx("bad age"))?;
            let gender = match f[2] {
                "female" => Gender::Female,
                "male" => Gender::Male,
                _ => return Err(ctx("gender must be female or male")),
            };
            let flag = |s: &str, name: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(ctx(&format!("{name} must be 0 or 1"))),
            };
            let chd = flag(f[3], "chd")?;
            let pad = flag(f[4], "pad")?;
            let relapse = flag(f[5], "relapse")?;
            let parse_opt = |s: &str, name: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| ctx(&format!("bad {name}")))
                }
            };
            let rfs_days = parse_opt(f[6], "rfs_days")?;
            let max_possible_rfs_days = parse_opt(f[7], "max_possible_rfs_days")?;
            let volume = Volume::load(&dir.join("volumes").join(format!("{id}.vol")))?;
            let mask_path = dir.join("masks").join(format!("{id}.mask"));
            let lesion_mask = if mask_path.exists() {
                Some(Mask::load(&mask_path)?)
            } else {
                None
            };
            let record = PatientRecord {
                id,
                volume,
                age,
                gender,
                chd,
                pad,
                relapse,
                rfs_days,
                max_possible_rfs_days,
                lesion_mask,
                latent_risk: None,
            };
            record.validate()?;
            records.push(record);
        }
        Cohort::new(records, provenance, generator_config)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(id: &str, relapse: bool, rfs: Option<f64>, max_possible: Option<f64>) -> PatientRecord {
        PatientRecord {
            id: id.into(),
            volume: Volume::zeros([2, 2, 2]),
            age: 70.0,
            gender: Gender::Male,
            chd: false,
            pad: true,
            relapse,
            rfs_days: rfs,
            max_possible_rfs_days: max_possible,
            lesion_mask: None,
            latent_risk: None,
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = vec![record("a", true, Some(10.0), None), record("a", false, Some(2000.0), None)];
        assert!(Cohort::new(r, Provenance::External, None).is_err());
    }

    #[test]
    fn unknown_rfs_needs_bound() {
        assert!(record("a", true, None, None).validate().is_err());
        assert!(record("a", true, None, Some(1000.0)).validate().is_ok());
        assert!(record("a", true, Some(0.0), None).validate().is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = record("p0", true, None, Some(1234.5));
        a.lesion_mask = Some(Mask::empty([2, 2, 2]));
        a.age = 71.123456789;
        let b = record("p1", false, Some(2555.0), None);
        let c = Cohort::new(vec![a, b], Provenance::External, None).unwrap();
        c.save(dir.path()).unwrap();
        let back = Cohort::load(dir.path(), Provenance::External, None).unwrap();
        assert_eq!(back, c);
        let text = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
        assert!(text.contains("p0,71.123456789,male,0,1,1,,1234.5"));
    }
}
