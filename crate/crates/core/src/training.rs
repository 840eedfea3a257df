//! Minibatch SGD for both tasks, with per-epoch imputation of regression
//! targets for relapses whose RFS was never observed.
//!
//! Imputation: at the start of every epoch the model predicts RFS for all
//! training relapses with known RFS, and the mean of those predictions
//! becomes the shared target of every unknown-RFS relapse for that epoch.
//! Before any prediction exists (epoch 0) the mean of the known ground-truth
//! relapse RFS values is used instead.

use std::fmt::Write as _;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, init_model, loss_and_grad, FusionModelParams, Modality, ModelConfig, Sample, Task};
use crate::preprocess::{PreparedRecord, SelectionConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 23,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train: epochs and batch_size must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("train: learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("train: momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Target assigned to unknown-RFS relapses during this epoch (days).
    pub imputed_rfs_value: Option<f64>,
    /// Mean prediction over known-RFS training relapses, from the
    /// parameters at the start of the epoch (days).
    pub mean_predicted_rfs_known_relapses: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,imputed_rfs_value,mean_predicted_rfs_known_relapses\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for e in &self.epochs {
            writeln!(
                out,
                "{},{:.9},{},{}",
                e.epoch,
                e.loss,
                opt(e.imputed_rfs_value),
                opt(e.mean_predicted_rfs_known_relapses)
            )
            .unwrap();
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Mean of the current RFS predictions for known-RFS relapses. Falls back to
/// `fallback` (half of `kappa_low`) with a warning when there are none.
pub fn impute_unknown_rfs(predicted_rfs_known_relapses: &[f64], fallback: f64) -> f64 {
    if predicted_rfs_known_relapses.is_empty() {
        warn!("no known-RFS relapses in the training split; imputing {fallback} days");
        return fallback;
    }
    predicted_rfs_known_relapses.iter().sum::<f64>() / predicted_rfs_known_relapses.len() as f64
}

fn target_for(record: &PreparedRecord, task: Task, rfs_cap: f64, imputed_days: f64) -> Result<f64> {
    match task {
        Task::Classify => Ok(record.relapse as u8 as f64),
        Task::Regress => match record.rfs_days {
            Some(d) => Ok(d / rfs_cap),
            None if record.relapse => Ok(imputed_days / rfs_cap),
            None => Err(Error::Argument(format!(
                "record {} has neither an RFS target nor a relapse flag",
                record.id
            ))),
        },
    }
}

pub fn train(
    params: FusionModelParams,
    records: &[PreparedRecord],
    config: &TrainConfig,
    selection: &SelectionConfig,
) -> Result<(FusionModelParams, TrainHistory)> {
    train_impl(params, records, config, selection, true)
}

fn train_impl(
    mut params: FusionModelParams,
    records: &[PreparedRecord],
    config: &TrainConfig,
    selection: &SelectionConfig,
    impute: bool,
) -> Result<(FusionModelParams, TrainHistory)> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let task = params.config.task;
    let rfs_cap = selection.rfs_cap;
    let fallback = selection.missing_rfs_substitute();
    let known: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].relapse && records[i].rfs_days.is_some())
        .collect();
    let unknown: Vec<usize> = (0..records.len()).filter(|&i| records[i].unknown_rfs_relapse()).collect();

    let seed_value = if known.is_empty() {
        fallback
    } else {
        known.iter().map(|&i| records[i].rfs_days.unwrap()).sum::<f64>() / known.len() as f64
    };
    let mut samples: Vec<Sample> = records
        .iter()
        .map(|r| {
            Ok(Sample {
                id: r.id.clone(),
                volume: r.volume.clone(),
                features: r.features,
                target: target_for(r, task, rfs_cap, seed_value)?,
            })
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut velocity = vec![0.0; params.len()];
    let mut history = TrainHistory::default();

    for epoch in 0..config.epochs {
        let (imputed, mean_pred) = if task == Task::Regress {
            let preds = known
                .iter()
                .map(|&i| forward(&params, &records[i].volume, &records[i].features).map(|o| o.output * rfs_cap))
                .collect::<Result<Vec<f64>>>()?;
            let mean_pred = (!preds.is_empty()).then(|| preds.iter().sum::<f64>() / preds.len() as f64);
            let imputed = if epoch == 0 { seed_value } else { impute_unknown_rfs(&preds, fallback) };
            if impute {
                for &i in &unknown {
                    samples[i].target = imputed / rfs_cap;
                }
            }
            (Some(imputed), mean_pred)
        } else {
            (None, None)
        };

        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grad) = match loss_and_grad(&params, &batch) {
                Ok(v) => v,
                Err(Error::NonFiniteLoss { .. }) => return Err(Error::Diverged { epoch }),
                Err(e) => return Err(e),
            };
            epoch_loss += loss * batch.len() as f64;
            for ((p, v), g) in params.values.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = config.momentum * *v + g;
                *p -= config.learning_rate * *v;
            }
        }
        let loss = epoch_loss / samples.len() as f64;
        if !loss.is_finite() || params.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        history.epochs.push(EpochRecord {
            epoch,
            loss,
            imputed_rfs_value: imputed,
            mean_predicted_rfs_known_relapses: mean_pred,
        });
    }
    Ok((params, history))
}

/// Builds a fresh model for the given modality variant and trains it.
pub fn train_variant(
    modality: Modality,
    model: &ModelConfig,
    records: &[PreparedRecord],
    config: &TrainConfig,
    selection: &SelectionConfig,
) -> Result<(FusionModelParams, TrainHistory)> {
    let cfg = ModelConfig {
        modality,
        ..model.clone()
    };
    train(init_model(&cfg)?, records, config, selection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{predict, roc_auc};
    use crate::preprocess::FeatureVector;
    use crate::volume::Volume;

    fn tab_model(task: Task) -> ModelConfig {
        ModelConfig {
            input_shape: [8, 8, 8],
            vision_channels: vec![2],
            modality: Modality::TabularOnly,
            task,
            ..ModelConfig::default()
        }
    }

    fn toy_records(n: usize, unknown_every: Option<usize>) -> Vec<PreparedRecord> {
        (0..n)
            .map(|i| {
                let x = i as f64 / n as f64 * 2.0 - 1.0;
                let relapse = x > 0.0;
                let rfs = if relapse { 600.0 + 400.0 * (1.0 - x) } else { 2000.0 + 300.0 * -x };
                let hidden = relapse && unknown_every.is_some_and(|k| i % k == 0);
                PreparedRecord {
                    id: format!("t{i}"),
                    volume: Volume::zeros([8, 8, 8]),
                    features: FeatureVector([x, (i % 2) as f64, 1.0 - (i % 2) as f64, relapse as u8 as f64 * 0.0, 0.0]),
                    relapse,
                    rfs_days: (!hidden).then_some(rfs),
                    lesion_mask: None,
                }
            })
            .collect()
    }

    #[test]
    fn imputation_mean_and_fallback() {
        assert_eq!(impute_unknown_rfs(&[400.0, 600.0], 821.0), 500.0);
        assert_eq!(impute_unknown_rfs(&[821.0], 0.0), 821.0);
        assert_eq!(impute_unknown_rfs(&[], 821.0), 821.0);
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let recs = toy_records(20, None);
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 4,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let (p, h) = train_variant(
            Modality::TabularOnly,
            &tab_model(Task::Classify),
            &recs,
            &cfg,
            &SelectionConfig::default(),
        )
        .unwrap();
        assert_eq!(h.epochs.len(), 200);
        let scores = predict(&p, &recs).unwrap();
        let labels: Vec<bool> = recs.iter().map(|r| r.relapse).collect();
        assert!(roc_auc(&scores, &labels).unwrap() >= 0.95);
    }

    #[test]
    fn history_is_deterministic() {
        let recs = toy_records(16, Some(3));
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let run = || {
            train_variant(
                Modality::TabularOnly,
                &tab_model(Task::Regress),
                &recs,
                &cfg,
                &SelectionConfig::default(),
            )
            .unwrap()
        };
        let (pa, ha) = run();
        let (pb, hb) = run();
        assert_eq!(ha, hb);
        assert_eq!(pa, pb);
        assert_eq!(ha.to_csv(), hb.to_csv());
    }

    #[test]
    fn imputed_target_tracks_start_of_epoch_predictions() {
        let recs = toy_records(24, Some(2));
        assert!(recs.iter().any(|r| r.unknown_rfs_relapse()));
        let cfg = TrainConfig {
            epochs: 6,
            ..TrainConfig::default()
        };
        let sel = SelectionConfig::default();
        let (_, h) = train_variant(Modality::TabularOnly, &tab_model(Task::Regress), &recs, &cfg, &sel).unwrap();
        let known: Vec<f64> = recs.iter().filter(|r| r.relapse).filter_map(|r| r.rfs_days).collect();
        let gt_mean = known.iter().sum::<f64>() / known.len() as f64;
        assert_eq!(h.epochs[0].imputed_rfs_value, Some(gt_mean));
        for e in &h.epochs[1..] {
            assert_eq!(e.imputed_rfs_value, e.mean_predicted_rfs_known_relapses);
        }
    }

    #[test]
    fn imputation_is_noop_without_unknowns() {
        let recs = toy_records(16, None);
        let cfg = TrainConfig {
            epochs: 4,
            ..TrainConfig::default()
        };
        let sel = SelectionConfig::default();
        let p = init_model(&tab_model(Task::Regress)).unwrap();
        let (pa, ha) = train_impl(p.clone(), &recs, &cfg, &sel, true).unwrap();
        let (pb, hb) = train_impl(p, &recs, &cfg, &sel, false).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(pa, pb);
    }

    #[test]
    fn diverging_run_reports_epoch() {
        let recs = toy_records(8, None);
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e6,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let r = train_variant(
            Modality::TabularOnly,
            &tab_model(Task::Regress),
            &recs,
            &cfg,
            &SelectionConfig::default(),
        );
        assert!(matches!(r, Err(Error::Diverged { .. })));
    }

    #[test]
    fn excised_modalities_ignore_their_input() {
        let cfg = ModelConfig {
            input_shape: [8, 8, 8],
            vision_channels: vec![2, 2],
            task: Task::Regress,
            ..ModelConfig::default()
        };
        let tab = init_model(&ModelConfig { modality: Modality::TabularOnly, ..cfg.clone() }).unwrap();
        let vis = init_model(&ModelConfig { modality: Modality::VisionOnly, ..cfg.clone() }).unwrap();
        let f = FeatureVector([0.4, 1.0, 0.0, 1.0, 0.0]);
        let g = FeatureVector([-1.4, 0.0, 1.0, 0.0, 1.0]);
        let v = Volume::filled([8, 8, 8], 0.5);
        let mut w = v.clone();
        w.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x += (i % 7) as f32);
        assert_eq!(forward(&tab, &v, &f).unwrap().output, forward(&tab, &w, &f).unwrap().output);
        assert_eq!(forward(&vis, &v, &f).unwrap().output, forward(&vis, &v, &g).unwrap().output);
    }

    #[test]
    fn multimodal_with_constant_tabular_path_is_shifted_vision_only() {
        let base = ModelConfig {
            input_shape: [8, 8, 8],
            vision_channels: vec![2, 3],
            vision_embed_dim: 4,
            tabular_embed_dim: 3,
            fusion_hidden: vec![5],
            task: Task::Regress,
            ..ModelConfig::default()
        };
        let mut multi = init_model(&ModelConfig { modality: Modality::Multimodal, ..base.clone() }).unwrap();
        // zero every tabular weight matrix; the embedding collapses to a constant
        let names: Vec<String> = multi.layout.tensors.iter().map(|t| t.name.clone()).collect();
        for n in names.iter().filter(|n| n.starts_with("tabular.") && n.ends_with(".weight")) {
            multi.tensor_mut(n).unwrap().iter_mut().for_each(|v| *v = 0.0);
        }
        let probe = FeatureVector([0.0; 5]);
        let tab_const = forward(&multi, &Volume::zeros([8, 8, 8]), &probe).unwrap().tabular_embedding.unwrap();

        let mut vis = init_model(&ModelConfig { modality: Modality::VisionOnly, ..base }).unwrap();
        for t in vis.layout.tensors.clone() {
            if t.name == "fusion.hidden0.weight" {
                continue;
            }
            let src = multi.tensor(&t.name).unwrap().to_vec();
            vis.tensor_mut(&t.name).unwrap().copy_from_slice(&src);
        }
        let w = multi.tensor("fusion.hidden0.weight").unwrap().to_vec();
        let (rows, cols) = (5, 7);
        let mut w_vis = Vec::new();
        let mut shift = vec![0.0; rows];
        for r in 0..rows {
            w_vis.extend_from_slice(&w[r * cols..r * cols + 4]);
            shift[r] = (0..3).map(|k| w[r * cols + 4 + k] * tab_const[k]).sum();
        }
        vis.tensor_mut("fusion.hidden0.weight").unwrap().copy_from_slice(&w_vis);
        vis.tensor_mut("fusion.hidden0.bias").unwrap().iter_mut().zip(&shift).for_each(|(b, s)| *b += s);

        for salt in 0..4 {
            let mut v = Volume::zeros([8, 8, 8]);
            v.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = ((i * (salt + 3)) % 11) as f32 / 5.0 - 1.0);
            let f = FeatureVector([salt as f64 - 1.5, 1.0, 0.0, 0.0, 1.0]);
            let a = forward(&multi, &v, &f).unwrap().output;
            let b = forward(&vis, &v, &f).unwrap().output;
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
