//! The stages behind the command-line tool. Each stage reads the artifacts
//! of the previous one, checks the config hash recorded next to them, and
//! writes its own artifacts plus a `<file>.hash` sidecar.
//!
//! Layout:
//! - `data_dir/cohort/`                      synth
//! - `model_dir/<variant>_<task>/`           train, sweep
//! - `report_dir/<variant>_<task>/`          eval, explain
//! - `report_dir/*.csv`                      report

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::cohort::{Cohort, Provenance};
use crate::config::{RunConfig, Stage};
use crate::error::{Error, Result};
use crate::interpret::{
    contribution_csv, modality_contribution, occlusion_saliency, saliency_hit, Baselines, CONTRIBUTION_CSV_HEADER,
};
use crate::metrics::{evaluate_classifier, evaluate_regressor, predict, EvalReport, EVAL_CSV_HEADER};
use crate::model::{checkpoint, init_model, FusionModelParams, Task};
use crate::preprocess::{prepare, select_cohort, split_cohort, PreparedRecord, TrainStats};
use crate::synth::synth_cohort;
use crate::thresholds::{sweep_threshold, ThresholdDomain};
use crate::training::train;
use crate::volume::pgm_bytes;

/// Which split a threshold sweep reads. Only `Train` is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    Train,
    Test,
}

fn hash_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".hash");
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes an artifact together with its config-hash sidecar.
fn write_artifact(path: &Path, bytes: impl AsRef<[u8]>, hash: &str) -> Result<()> {
    write_file(path, bytes)?;
    write_file(&hash_path(path), format!("{hash}\n"))
}

/// Fails unless `path` exists and was produced under the expected config.
fn require(path: &Path, expected: &str, hint: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Prerequisite(format!("{} not found; run `{hint}` first", path.display())));
    }
    let sidecar = hash_path(path);
    let found = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let found = found.trim();
    if found != expected {
        return Err(Error::HashMismatch {
            artifact: format!("{} (rerun `{hint}` with the current config)", path.display()),
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

fn log_config(cfg: &RunConfig, label: &str, stage: Stage) {
    info!(
        "{label}: seeds synth={} split={} train={}; config hash {}",
        cfg.synth.seed,
        cfg.selection.split_seed,
        cfg.train.seed,
        cfg.stage_hash(stage)
    );
    info!("effective config:\n{}", cfg.to_canonical());
}

fn manifest_path(cfg: &RunConfig) -> PathBuf {
    cfg.cohort_dir().join("manifest.csv")
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.run_model_dir().join("checkpoint.bin")
}

fn threshold_path(cfg: &RunConfig) -> PathBuf {
    cfg.run_model_dir().join("threshold.txt")
}

pub fn run_synth(cfg: &RunConfig) -> Result<()> {
    log_config(cfg, "synth", Stage::Synth);
    let cohort = synth_cohort(&cfg.synth)?;
    let dir = cfg.cohort_dir();
    cohort.save(&dir)?;
    write_file(&hash_path(&manifest_path(cfg)), format!("{}\n", cfg.stage_hash(Stage::Synth)))?;
    info!(
        "synth: {} patients ({} relapses) written to {}",
        cohort.len(),
        cohort.n_relapse(),
        dir.display()
    );
    Ok(())
}

/// Selected cohort split into prepared train and test records.
pub struct Prepared {
    pub stats: TrainStats,
    pub train: Vec<PreparedRecord>,
    pub test: Vec<PreparedRecord>,
}

pub fn load_prepared(cfg: &RunConfig) -> Result<Prepared> {
    require(&manifest_path(cfg), &cfg.stage_hash(Stage::Synth), "relapse synth")?;
    let cohort = Cohort::load(&cfg.cohort_dir(), Provenance::Synthetic, Some(cfg.synth.clone()))?;
    let selected = select_cohort(&cohort, &cfg.selection)?;
    let (train, test) = split_cohort(&selected, &cfg.selection)?;
    let stats = TrainStats::fit(&train)?;
    Ok(Prepared {
        stats,
        train: prepare(&train, &stats)?,
        test: prepare(&test, &stats)?,
    })
}

fn load_model(cfg: &RunConfig) -> Result<FusionModelParams> {
    let path = checkpoint_path(cfg);
    require(&path, &cfg.stage_hash(Stage::Train), "relapse train")?;
    checkpoint::load(&path)
}

pub fn run_train(cfg: &RunConfig) -> Result<()> {
    log_config(cfg, "train", Stage::Train);
    let data = load_prepared(cfg)?;
    info!("train: {} train / {} test records", data.train.len(), data.test.len());
    let params = init_model(&cfg.model_config())?;
    let (params, history) = train(params, &data.train, &cfg.train, &cfg.selection)?;
    let hash = cfg.stage_hash(Stage::Train);
    let dir = cfg.run_model_dir();
    write_artifact(&dir.join("checkpoint.bin"), checkpoint::encode(&params), &hash)?;
    write_artifact(&dir.join("history.csv"), history.to_csv(), &hash)?;
    let mut split = String::from("id,split\n");
    for (records, name) in [(&data.train, "train"), (&data.test, "test")] {
        for r in records.iter() {
            writeln!(split, "{},{name}", r.id).unwrap();
        }
    }
    write_artifact(&dir.join("split.csv"), split, &hash)?;
    write_artifact(
        &dir.join("stats.toml"),
        toml::to_string(&data.stats).expect("stats serialize"),
        &hash,
    )?;
    if let Some(last) = history.last() {
        info!("train: final epoch {} loss {:.6}", last.epoch, last.loss);
    }
    Ok(())
}

pub fn run_sweep(cfg: &RunConfig, split: SplitChoice) -> Result<()> {
    log_config(cfg, "sweep", Stage::Sweep);
    if split == SplitChoice::Test {
        return Err(Error::Argument(
            "thresholds are chosen on the training split only; sweeping the test split would leak it".into(),
        ));
    }
    let params = load_model(cfg)?;
    let data = load_prepared(cfg)?;
    let labels: Vec<bool> = data.train.iter().map(|r| r.relapse).collect();
    let out = predict(&params, &data.train)?;
    let (values, domain) = match cfg.task {
        Task::Classify => (out, ThresholdDomain::ThetaUnitInterval),
        Task::Regress => (
            out.iter().map(|o| o.clamp(0.0, 1.0) * cfg.selection.rfs_cap).collect(),
            ThresholdDomain::KappaDays {
                low: cfg.selection.kappa_low,
                high: cfg.selection.kappa_high,
            },
        ),
    };
    let report = sweep_threshold(&values, &labels, cfg.beta, domain)?;
    let hash = cfg.stage_hash(Stage::Sweep);
    let dir = cfg.run_model_dir();
    write_artifact(&dir.join("threshold_sweep.csv"), report.to_csv(), &hash)?;
    let text = format!(
        "threshold: {}\nbeta: {}\nf_beta: {:.6}\n",
        report.chosen,
        cfg.beta,
        report.best_score()
    );
    write_artifact(&threshold_path(cfg), text, &hash)?;
    info!(
        "sweep: chose {} (F{} = {:.4}) on {} training records",
        report.chosen,
        cfg.beta,
        report.best_score(),
        labels.len()
    );
    Ok(())
}

fn load_threshold(cfg: &RunConfig) -> Result<f64> {
    let path = threshold_path(cfg);
    require(&path, &cfg.stage_hash(Stage::Sweep), "relapse sweep")?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .find_map(|l| l.strip_prefix("threshold:"))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::format(&path, "no `threshold:` line"))
}

pub fn run_eval(cfg: &RunConfig) -> Result<()> {
    log_config(cfg, "eval", Stage::Eval);
    let params = load_model(cfg)?;
    let threshold = load_threshold(cfg)?;
    let data = load_prepared(cfg)?;
    let report = match cfg.task {
        Task::Classify => evaluate_classifier(&params, &data.test, threshold)?,
        Task::Regress => evaluate_regressor(&params, &data.test, threshold, &cfg.selection)?,
    };
    let hash = cfg.stage_hash(Stage::Eval);
    let dir = cfg.run_report_dir();
    write_artifact(&dir.join("eval.txt"), report.to_text(), &hash)?;
    write_artifact(
        &dir.join("eval.csv"),
        format!("{EVAL_CSV_HEADER}\n{}\n", report.csv_row(cfg.variant.name())),
        &hash,
    )?;
    info!(
        "eval: AUC {:.4}, F1 {:.4}, sensitivity {:.4}, specificity {:.4} on {} test records",
        report.auc, report.f1, report.sensitivity, report.specificity, report.n_test
    );
    Ok(())
}

pub fn run_explain(cfg: &RunConfig) -> Result<()> {
    log_config(cfg, "explain", Stage::Explain);
    let params = load_model(cfg)?;
    let data = load_prepared(cfg)?;
    let hash = cfg.stage_hash(Stage::Explain);
    let dir = cfg.run_report_dir();

    let baselines = Baselines::fit(&data.train, cfg.explain.volume_baseline)?;
    let contribution = modality_contribution(&params, &data.test, &baselines)?;
    let rows = vec![(cfg.variant.name().to_string(), contribution.clone())];
    write_artifact(&dir.join("contribution.csv"), contribution_csv(&rows, false), &hash)?;
    write_artifact(&dir.join("contribution_relative.csv"), contribution_csv(&rows, true), &hash)?;
    info!(
        "explain: vision {:.4}, tabular {:.4}{}",
        contribution.vision_total,
        contribution.tabular_total,
        if contribution.collapse_flag { " (unimodal collapse)" } else { "" }
    );

    // relapses first, each group in split order
    let mut cases: Vec<&PreparedRecord> = data.test.iter().filter(|r| r.relapse).collect();
    cases.extend(data.test.iter().filter(|r| !r.relapse));
    cases.truncate(cfg.explain.saliency_cases);
    let mut table = String::from("id,relapse,output,iou,hit\n");
    for r in cases {
        let sal = occlusion_saliency(&params, r, &cfg.occlusion, &data.stats.volume)?;
        let out = predict(&params, std::slice::from_ref(r))?[0];
        let base = dir.join("saliency").join(&r.id);
        write_artifact(&base.with_extension("vol"), sal.grid.to_bytes(), &hash)?;
        for axis in 0..3 {
            let (rows, cols, values) = sal.grid.mid_slice(axis);
            let path = dir.join("saliency").join(format!("{}_axis{axis}.pgm", r.id));
            write_artifact(&path, pgm_bytes(rows, cols, &values, 0.0, 1.0), &hash)?;
        }
        let (iou, hit) = match &r.lesion_mask {
            Some(m) if m.count() > 0 => {
                let frac = if cfg.explain.top_fraction > 0.0 {
                    cfg.explain.top_fraction
                } else {
                    m.count() as f64 / m.data().len() as f64
                };
                let (iou, hit) = saliency_hit(&sal, m, frac)?;
                (format!("{iou:.6}"), (hit as u8).to_string())
            }
            _ => (String::new(), String::new()),
        };
        writeln!(table, "{},{},{out:.6},{iou},{hit}", r.id, r.relapse as u8).unwrap();
    }
    write_artifact(&dir.join("saliency.csv"), table, &hash)?;
    Ok(())
}

/// Run directories under `report_dir`, sorted by name.
fn run_dirs(report_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = match fs::read_dir(report_dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
        Err(e) => return Err(Error::io(report_dir, e)),
    };
    let mut dirs = Vec::new();
    for e in entries {
        let e = e.map_err(|err| Error::io(report_dir, err))?;
        if e.path().is_dir() {
            dirs.push(e.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Consolidates every run's evaluation and contribution files into
/// `classification.csv`, `regression.csv`, `contribution.csv` and
/// `contribution_relative.csv`.
pub fn run_report(cfg: &RunConfig) -> Result<()> {
    log_config(cfg, "report", Stage::Synth);
    let root = &cfg.paths.report_dir;
    let mut classification = format!("{EVAL_CSV_HEADER}\n");
    let mut regression = format!("{EVAL_CSV_HEADER}\n");
    let mut contribution = format!("{CONTRIBUTION_CSV_HEADER}\n");
    let mut relative = format!("{CONTRIBUTION_CSV_HEADER}\n");
    let mut n_eval = 0;
    for dir in run_dirs(root)? {
        let eval = dir.join("eval.txt");
        if eval.exists() {
            let text = fs::read_to_string(&eval).map_err(|e| Error::io(&eval, e))?;
            let report = EvalReport::from_text(&text)?;
            let variant = dir
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(&format!("_{}", report.task.name())))
                .unwrap_or("unknown")
                .to_string();
            let row = format!("{}\n", report.csv_row(&variant));
            match report.task {
                Task::Classify => classification.push_str(&row),
                Task::Regress => regression.push_str(&row),
            }
            n_eval += 1;
        }
        for (name, out) in [("contribution.csv", &mut contribution), ("contribution_relative.csv", &mut relative)] {
            let path = dir.join(name);
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let dir_name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("");
                for line in text.lines().skip(1) {
                    // prefix the task so classifier and regressor rows stay apart
                    let task = dir_name.rsplit('_').next().unwrap_or("");
                    match line.split_once(',') {
                        Some((variant, rest)) => writeln!(out, "{variant} ({task}),{rest}").unwrap(),
                        None => return Err(Error::format(&path, "malformed row")),
                    }
                }
            }
        }
    }
    if n_eval == 0 {
        return Err(Error::Prerequisite(format!(
            "no evaluation reports under {}; run `relapse eval` first",
            root.display()
        )));
    }
    write_file(&root.join("classification.csv"), classification)?;
    write_file(&root.join("regression.csv"), regression)?;
    write_file(&root.join("contribution.csv"), contribution)?;
    write_file(&root.join("contribution_relative.csv"), relative)?;
    info!("report: consolidated {n_eval} evaluation report(s) into {}", root.display());
    Ok(())
}
