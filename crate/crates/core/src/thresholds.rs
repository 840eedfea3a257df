//! F-beta scores and threshold sweeps.
//!
//! Two decision rules are supported: a classifier score counts as a relapse
//! when it is strictly above θ, and a predicted RFS counts as a relapse when
//! it is at or below κ. Sweeps evaluate every distinct confusion matrix the
//! data admits (midpoints between sorted unique values plus the domain
//! endpoints) and keep the lowest threshold attaining the maximum.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn ratio(num: usize, den: usize) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    /// `tp / (tp + fp)`, 0 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    /// Sensitivity, `tp / (tp + fn)`.
    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        Self::ratio(self.tn, self.tn + self.fp)
    }

    pub fn f_beta(&self, beta: f64) -> f64 {
        f_beta_score(self.precision(), self.recall(), beta)
    }

    fn tally(predicted: impl Iterator<Item = bool>, labels: &[bool]) -> Self {
        let mut c = ConfusionCounts::default();
        for (p, &l) in predicted.zip(labels) {
            match (p, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }
}

/// `(1 + β²)·P·R / (β²·P + R)`, defined as 0 when the denominator vanishes.
pub fn f_beta_score(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

fn check_aligned(n_values: usize, n_labels: usize) -> Result<()> {
    if n_values != n_labels {
        return Err(Error::Shape(format!(
            "{n_values} values but {n_labels} labels"
        )));
    }
    Ok(())
}

/// Relapse predicted iff `score > theta`.
pub fn confusion_at_theta(scores: &[f64], labels: &[bool], theta: f64) -> Result<ConfusionCounts> {
    check_aligned(scores.len(), labels.len())?;
    Ok(ConfusionCounts::tally(scores.iter().map(|&s| s > theta), labels))
}

/// Relapse predicted iff `pred_rfs <= kappa`; `kappa` must lie in
/// `[kappa_low, kappa_high]`.
pub fn confusion_at_kappa(
    pred_rfs: &[f64],
    labels: &[bool],
    kappa: f64,
    kappa_low: f64,
    kappa_high: f64,
) -> Result<ConfusionCounts> {
    check_aligned(pred_rfs.len(), labels.len())?;
    if !(kappa >= kappa_low && kappa <= kappa_high) {
        return Err(Error::Range(format!(
            "kappa {kappa} outside [{kappa_low}, {kappa_high}]"
        )));
    }
    Ok(ConfusionCounts::tally(pred_rfs.iter().map(|&p| p <= kappa), labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ThresholdDomain {
    ThetaUnitInterval,
    KappaDays { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    LowestArgmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub beta: f64,
    pub domain: ThresholdDomain,
    pub rule: TieBreak,
    pub grid: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub scores: Vec<f64>,
    pub chosen_index: usize,
    pub chosen: f64,
}

impl ThresholdReport {
    pub fn best_score(&self) -> f64 {
        self.scores[self.chosen_index]
    }

    /// `threshold,precision,recall,f_beta` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall,f_beta\n");
        for i in 0..self.grid.len() {
            writeln!(
                out,
                "{:.6},{:.6},{:.6},{:.6}",
                self.grid[i], self.precision[i], self.recall[i], self.scores[i]
            )
            .unwrap();
        }
        out
    }
}

fn sorted_unique(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    v
}

fn midpoints(sorted: &[f64]) -> impl Iterator<Item = f64> + '_ {
    sorted.windows(2).map(|w| 0.5 * (w[0] + w[1]))
}

/// Candidate thresholds covering every distinct confusion matrix reachable
/// within the domain.
pub fn threshold_grid(values: &[f64], domain: ThresholdDomain) -> Vec<f64> {
    let uniq = sorted_unique(values);
    let mut grid: Vec<f64> = match domain {
        ThresholdDomain::ThetaUnitInterval => {
            let mut g = vec![0.0, 1.0];
            g.extend(midpoints(&uniq));
            g
        }
        ThresholdDomain::KappaDays { low, high } => {
            let mut g = vec![low, high];
            g.extend(midpoints(&uniq).filter(|m| *m >= low && *m <= high));
            g
        }
    };
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    grid
}

pub fn sweep_threshold(values: &[f64], labels: &[bool], beta: f64, domain: ThresholdDomain) -> Result<ThresholdReport> {
    check_aligned(values.len(), labels.len())?;
    if !(beta >= 0.0) {
        return Err(Error::Argument(format!("beta must be >= 0, got {beta}")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::UndefinedOptimum(
            "threshold sweep needs both relapse and non-relapse labels".into(),
        ));
    }
    let grid = threshold_grid(values, domain);
    let counts: Vec<ConfusionCounts> = grid
        .iter()
        .map(|&t| match domain {
            ThresholdDomain::ThetaUnitInterval => confusion_at_theta(values, labels, t),
            ThresholdDomain::KappaDays { low, high } => confusion_at_kappa(values, labels, t, low, high),
        })
        .collect::<Result<_>>()?;
    let precision: Vec<f64> = counts.iter().map(|c| c.precision()).collect();
    let recall: Vec<f64> = counts.iter().map(|c| c.recall()).collect();
    let scores: Vec<f64> = counts.iter().map(|c| c.f_beta(beta)).collect();
    // strict ">" keeps the first (lowest) maximizer
    let mut chosen_index = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[chosen_index] {
            chosen_index = i;
        }
    }
    Ok(ThresholdReport {
        beta,
        domain,
        rule: TieBreak::LowestArgmax,
        chosen: grid[chosen_index],
        grid,
        precision,
        recall,
        scores,
        chosen_index,
    })
}
