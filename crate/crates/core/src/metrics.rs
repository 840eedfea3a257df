//! Ranking metrics and evaluation reports.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, FusionModelParams, Task};
use crate::preprocess::{PreparedRecord, SelectionConfig};
use crate::thresholds::{confusion_at_kappa, confusion_at_theta, ConfusionCounts};

/// Mann–Whitney AUC: the fraction of (relapse, non-relapse) pairs ranked
/// correctly, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the credit, kept integral so the result is exact
    let mut credit2: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        credit2 += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        i = j;
    }
    Ok(credit2 as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CIndexMode {
    /// Harrell: pairs anchored on an observed event with the strictly
    /// shorter true time; the partner may be censored.
    All,
    /// Only pairs in which both patients relapsed.
    RelapsesOnly,
}

/// Fenwick tree over prediction ranks.
struct RankCounter {
    tree: Vec<u64>,
    total: u64,
}

impl RankCounter {
    fn new(n: usize) -> Self {
        RankCounter {
            tree: vec![0; n + 1],
            total: 0,
        }
    }

    fn insert(&mut self, rank: usize) {
        self.total += 1;
        let mut i = rank + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted ranks `<= rank`.
    fn at_most(&self, rank: usize) -> u64 {
        let mut i = rank + 1;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Concordance of predicted times with true times. A comparable pair
/// `(i, j)` has `true_i < true_j` with `i` an observed relapse; it is
/// concordant when `pred_i < pred_j` (half credit for equal predictions).
pub fn c_index(pred_times: &[f64], true_times: &[f64], event: &[bool], mode: CIndexMode) -> Result<f64> {
    let n = pred_times.len();
    if true_times.len() != n || event.len() != n {
        return Err(Error::Shape("c-index inputs must have equal length".into()));
    }
    if mode == CIndexMode::RelapsesOnly && event.iter().filter(|&&e| e).count() < 2 {
        return Err(Error::UndefinedMetric("relapse-only c-index needs at least 2 relapses".into()));
    }
    let mut uniq = pred_times.to_vec();
    uniq.sort_by(|a, b| a.total_cmp(b));
    uniq.dedup();
    let rank = |p: f64| uniq.partition_point(|&u| u.total_cmp(&p) == Ordering::Less);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| true_times[b].total_cmp(&true_times[a]));
    let mut counter = RankCounter::new(uniq.len());
    let (mut credit2, mut comparable) = (0u64, 0u64);
    let mut g = 0;
    while g < n {
        let mut h = g;
        while h < n && true_times[order[h]] == true_times[order[g]] {
            h += 1;
        }
        // partners already in the counter have strictly longer true times
        for &i in &order[g..h] {
            if !event[i] {
                continue;
            }
            let r = rank(pred_times[i]);
            let le = counter.at_most(r);
            let lt = if r == 0 { 0 } else { counter.at_most(r - 1) };
            let greater = counter.total - le;
            let tied = le - lt;
            credit2 += 2 * greater + tied;
            comparable += counter.total;
        }
        for &j in &order[g..h] {
            if mode == CIndexMode::All || event[j] {
                counter.insert(rank(pred_times[j]));
            }
        }
        g = h;
    }
    if comparable == 0 {
        return Err(Error::UndefinedMetric("no comparable pairs".into()));
    }
    Ok(credit2 as f64 / (2 * comparable) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub auc: f64,
    pub f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub c_index: Option<f64>,
    pub c_index_relapses: Option<f64>,
    pub threshold_used: f64,
    pub n_test: usize,
    pub confusion: ConfusionCounts,
}

pub const EVAL_CSV_HEADER: &str =
    "variant,task,n_test,threshold,auc,f1,sensitivity,specificity,c_index,c_index_relapses,tp,fp,tn,fn";

impl EvalReport {
    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "none".into());
        writeln!(s, "task: {}", self.task.name()).unwrap();
        writeln!(s, "n_test: {}", self.n_test).unwrap();
        writeln!(s, "threshold_used: {:.6}", self.threshold_used).unwrap();
        writeln!(s, "auc: {:.6}", self.auc).unwrap();
        writeln!(s, "f1: {:.6}", self.f1).unwrap();
        writeln!(s, "sensitivity: {:.6}", self.sensitivity).unwrap();
        writeln!(s, "specificity: {:.6}", self.specificity).unwrap();
        writeln!(s, "c_index: {}", opt(self.c_index)).unwrap();
        writeln!(s, "c_index_relapses: {}", opt(self.c_index_relapses)).unwrap();
        let c = &self.confusion;
        writeln!(s, "tp: {}\nfp: {}\ntn: {}\nfn: {}", c.tp, c.fp, c.tn, c.fn_).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<EvalReport> {
        let bad = |m: String| Error::Argument(format!("eval report: {m}"));
        let mut kv = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(':').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).cloned().ok_or_else(|| bad(format!("missing key {k}")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("bad number for {k}"))) };
        let count = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad count for {k}"))) };
        let opt = |k: &str| -> Result<Option<f64>> {
            let v = get(k)?;
            if v == "none" {
                Ok(None)
            } else {
                v.parse().map(Some).map_err(|_| bad(format!("bad number for {k}")))
            }
        };
        let task = match get("task")?.as_str() {
            "classify" => Task::Classify,
            "regress" => Task::Regress,
            other => return Err(bad(format!("unknown task {other}"))),
        };
        Ok(EvalReport {
            task,
            n_test: count("n_test")?,
            threshold_used: num("threshold_used")?,
            auc: num("auc")?,
            f1: num("f1")?,
            sensitivity: num("sensitivity")?,
            specificity: num("specificity")?,
            c_index: opt("c_index")?,
            c_index_relapses: opt("c_index_relapses")?,
            confusion: ConfusionCounts {
                tp: count("tp")?,
                fp: count("fp")?,
                tn: count("tn")?,
                fn_: count("fn")?,
            },
        })
    }

    pub fn csv_row(&self, variant: &str) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let c = &self.confusion;
        format!(
            "{variant},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{},{}",
            self.task.name(),
            self.n_test,
            self.threshold_used,
            self.auc,
            self.f1,
            self.sensitivity,
            self.specificity,
            opt(self.c_index),
            opt(self.c_index_relapses),
            c.tp,
            c.fp,
            c.tn,
            c.fn_
        )
    }
}

pub fn predict(params: &FusionModelParams, records: &[PreparedRecord]) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| forward(params, &r.volume, &r.features).map(|o| o.output))
        .collect()
}

/// Regression outputs in days, clamped to `[0, rfs_cap]`.
pub fn predict_rfs_days(params: &FusionModelParams, records: &[PreparedRecord], rfs_cap: f64) -> Result<Vec<f64>> {
    Ok(predict(params, records)?
        .into_iter()
        .map(|o| o.clamp(0.0, 1.0) * rfs_cap)
        .collect())
}

pub fn classifier_report(scores: &[f64], labels: &[bool], theta: f64) -> Result<EvalReport> {
    let confusion = confusion_at_theta(scores, labels, theta)?;
    Ok(EvalReport {
        task: Task::Classify,
        auc: roc_auc(scores, labels)?,
        f1: confusion.f_beta(1.0),
        sensitivity: confusion.recall(),
        specificity: confusion.specificity(),
        c_index: None,
        c_index_relapses: None,
        threshold_used: theta,
        n_test: scores.len(),
        confusion,
    })
}

pub fn evaluate_classifier(params: &FusionModelParams, test: &[PreparedRecord], theta: f64) -> Result<EvalReport> {
    let scores = predict(params, test)?;
    let labels: Vec<bool> = test.iter().map(|r| r.relapse).collect();
    classifier_report(&scores, &labels, theta)
}

/// Metrics for predicted RFS days. Records without an observed RFS use the
/// configured substitute (half of `kappa_low`) as their true time.
pub fn regressor_report(
    pred_days: &[f64],
    records: &[PreparedRecord],
    kappa: f64,
    selection: &SelectionConfig,
) -> Result<EvalReport> {
    let labels: Vec<bool> = records.iter().map(|r| r.relapse).collect();
    let true_days: Vec<f64> = records
        .iter()
        .map(|r| r.rfs_days.unwrap_or_else(|| selection.missing_rfs_substitute()))
        .collect();
    let confusion = confusion_at_kappa(pred_days, &labels, kappa, selection.kappa_low, selection.kappa_high)?;
    let risk: Vec<f64> = pred_days.iter().map(|p| -p).collect();
    Ok(EvalReport {
        task: Task::Regress,
        auc: roc_auc(&risk, &labels)?,
        f1: confusion.f_beta(1.0),
        sensitivity: confusion.recall(),
        specificity: confusion.specificity(),
        c_index: Some(c_index(pred_days, &true_days, &labels, CIndexMode::All)?),
        c_index_relapses: Some(c_index(pred_days, &true_days, &labels, CIndexMode::RelapsesOnly)?),
        threshold_used: kappa,
        n_test: records.len(),
        confusion,
    })
}

pub fn evaluate_regressor(
    params: &FusionModelParams,
    test: &[PreparedRecord],
    kappa: f64,
    selection: &SelectionConfig,
) -> Result<EvalReport> {
    let pred = predict_rfs_days(params, test, selection.rfs_cap)?;
    regressor_report(&pred, test, kappa, selection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut s, mut n) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    n += 1.0;
                    if scores[i] > scores[j] {
                        s += 1.0;
                    } else if scores[i] == scores[j] {
                        s += 0.5;
                    }
                }
            }
        }
        s / n
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.2, 0.8], &[false, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.8, 0.2], &[false, true]).unwrap(), 0.0);
        let a = roc_auc(&[0.1, 0.6, 0.6, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(a, 0.875);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn c_index_examples() {
        let ev = [true, true, true];
        assert_eq!(c_index(&[100.0, 200.0, 300.0], &[1.0, 2.0, 3.0], &ev, CIndexMode::All).unwrap(), 1.0);
        assert_eq!(c_index(&[300.0, 200.0, 100.0], &[1.0, 2.0, 3.0], &ev, CIndexMode::All).unwrap(), 0.0);
        let c = c_index(&[150.0, 120.0], &[100.0, 200.0], &[true, false], CIndexMode::All).unwrap();
        assert_eq!(c, 0.0);
        // censored anchor gives no comparable pair
        let r = c_index(&[1.0, 2.0], &[100.0, 200.0], &[false, true], CIndexMode::All);
        assert!(matches!(r, Err(Error::UndefinedMetric(_))));
        let r = c_index(&[1.0, 2.0], &[100.0, 200.0], &[true, false], CIndexMode::RelapsesOnly);
        assert!(matches!(r, Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn relapse_only_ignores_censored_partners() {
        let pred = [1.0, 5.0, 3.0];
        let t = [10.0, 20.0, 30.0];
        let ev = [true, true, false];
        // pairs (0,1) concordant; (0,2),(1,2) only in All mode: (0,2) conc, (1,2) disc
        assert_eq!(c_index(&pred, &t, &ev, CIndexMode::RelapsesOnly).unwrap(), 1.0);
        assert!((c_index(&pred, &t, &ev, CIndexMode::All).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_classifier_at_table_theta() {
        let scores = [0.5; 4];
        let labels = [true, false, true, false];
        let r = classifier_report(&scores, &labels, 0.23).unwrap();
        assert_eq!(r.sensitivity, 1.0);
        assert_eq!(r.specificity, 0.0);
        assert_eq!(r.auc, 0.5);
    }

    #[test]
    fn perfect_classifier() {
        let labels = [true, false, false, true];
        let scores: Vec<f64> = labels.iter().map(|&l| l as u8 as f64).collect();
        let r = classifier_report(&scores, &labels, 0.5).unwrap();
        assert_eq!((r.auc, r.f1), (1.0, 1.0));
    }

    #[test]
    fn report_text_round_trip() {
        let r = EvalReport {
            task: Task::Regress,
            auc: 0.75,
            f1: 0.5,
            sensitivity: 0.25,
            specificity: 1.0,
            c_index: Some(0.625),
            c_index_relapses: None,
            threshold_used: 1668.125,
            n_test: 24,
            confusion: ConfusionCounts { tp: 1, fp: 0, tn: 20, fn_: 3 },
        };
        assert_eq!(EvalReport::from_text(&r.to_text()).unwrap(), r);
        assert_eq!(r.csv_row("m").split(',').count(), EVAL_CSV_HEADER.split(',').count());
    }

    proptest! {
        #[test]
        fn auc_matches_pairs_and_is_rank_invariant(
            data in prop::collection::vec((0u8..6, any::<bool>()), 2..30),
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 5.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let a = roc_auc(&scores, &labels).unwrap();
            prop_assert_eq!(a, pair_auc(&scores, &labels));
            let warped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 - 1.0).collect();
            prop_assert_eq!(roc_auc(&warped, &labels).unwrap(), a);
        }
    }
}
