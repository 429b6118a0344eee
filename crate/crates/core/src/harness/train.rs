//! Training loop, evaluation, and variant ablation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{TrainConfig, Variant};
use crate::dataio::Example;
use crate::error::{Error, Result};
use crate::model::{forward, predict, Batch, Parameters, StepIndex};
use crate::params::Adam;
use crate::predictor::LossBreakdown;
use crate::rng::{substream, Stream};

use super::metrics::{rank_of, RankingReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub steps: Vec<StepLog>,
    /// Test-set reports after each epoch, when a test set was given.
    pub reports: Vec<RankingReport>,
    pub epochs_run: usize,
}

/// Scores `examples` in batches and ranks each target against the whole
/// catalog.
pub fn evaluate(
    params: &Parameters,
    cfg: &TrainConfig,
    examples: &[Example],
    ks: &[usize],
    epoch: usize,
) -> Result<RankingReport> {
    let n = params.num_items();
    if let Some(bad) = examples
        .iter()
        .find(|e| e.target >= n || e.prefix.iter().any(|&i| i >= n))
    {
        return Err(Error::Data(format!(
            "example {:?} -> {} indexes past a catalog of {n} items",
            bad.prefix, bad.target
        )));
    }
    let mut ranks = Vec::with_capacity(examples.len());
    for (c, chunk) in examples.chunks(cfg.batch_size.max(1)).enumerate() {
        let refs: Vec<&Example> = chunk.iter().collect();
        let ids: Vec<u64> = (0..chunk.len()).map(|i| (c * cfg.batch_size + i) as u64).collect();
        let batch = Batch::new(&refs, &ids, cfg.normalize_adjacency);
        let probs = predict(params, cfg, &batch);
        for (row, ex) in probs.rows().into_iter().zip(chunk) {
            ranks.push((rank_of(row, ex.target), ex.prefix.len()));
        }
    }
    Ok(RankingReport::from_ranks(&ranks, ks, epoch))
}

/// Cut-off used for validation-based early stopping.
const VALIDATION_K: usize = 20;

/// Trains with Adam from a fresh initialization.
///
/// `test`, when given, is evaluated after every epoch. With early stopping
/// enabled, the last `validation_fraction` of `train` is held out and the
/// parameters with the best validation P@20 are returned.
pub fn train(
    cfg: &TrainConfig,
    train: &[Example],
    num_items: usize,
    test: Option<&[Example]>,
    ks: &[usize],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training examples".into()));
    }
    let (fit, validation) = match cfg.early_stopping_patience {
        Some(_) => {
            let held = ((train.len() as f64) * cfg.validation_fraction).round() as usize;
            let held = held.min(train.len() - 1);
            train.split_at(train.len() - held)
        }
        None => (train, &train[..0]),
    };

    let mut params = Parameters::init(cfg, num_items)?;
    let mut opt = Adam::new(cfg.lr);
    let mut steps = Vec::new();
    let mut reports = Vec::new();
    let mut best: Option<(f64, Parameters)> = None;
    let mut stale = 0;
    let mut epochs_run = 0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..fit.len()).collect();
        order.shuffle(&mut substream(cfg.seed, Stream::Shuffle, &[epoch as u64]));
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&Example> = idx.iter().map(|&i| &fit[i]).collect();
            let ids: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
            let batch = Batch::new(&refs, &ids, cfg.normalize_adjacency);
            let at = StepIndex {
                epoch: epoch as u64,
                batch: step as u64,
            };
            let f = forward(&params, cfg, &batch, at, true);
            let loss = f.breakdown(cfg).expect("losses requested");
            if !loss.total.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch} step {step}: {loss:?}"
                )));
            }
            let total = f.losses.expect("losses requested").total;
            let grads = f.tape.backward(total);
            let g = params.collect_grads(&grads, &f.vars);
            if let Some(bad) = g.iter().position(|t| t.iter().any(|x| !x.is_finite())) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for {} at epoch {epoch} step {step}",
                    params.named_tensors()[bad].0
                )));
            }
            opt.step(params.named_tensors_mut().into_iter().map(|(_, t)| t).collect(), &g);
            log::debug!("epoch {epoch} step {step} loss {:.6}", loss.total);
            steps.push(StepLog { epoch, step, loss });
        }
        epochs_run = epoch + 1;

        if let Some(test) = test {
            let r = evaluate(&params, cfg, test, ks, epoch)?;
            log::info!(
                "epoch {epoch}: {}",
                r.ks.iter()
                    .map(|&k| format!("P@{k} {:.4} M@{k} {:.4}", r.precision_at(k).unwrap(), r.mrr_at(k).unwrap()))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
            reports.push(r);
        }

        if let (Some(patience), false) = (cfg.early_stopping_patience, validation.is_empty()) {
            let v = evaluate(&params, cfg, validation, &[VALIDATION_K], epoch)?
                .precision_at(VALIDATION_K)
                .expect("requested cut-off");
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, params.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    log::info!("early stop after epoch {epoch}: validation P@{VALIDATION_K} {v:.4}");
                    break;
                }
            }
        }
    }

    if let Some((_, p)) = best {
        params = p;
    }
    Ok(TrainOutcome {
        params,
        steps,
        reports,
        epochs_run,
    })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub report: RankingReport,
}

/// Trains and evaluates each variant under `seeds`, all other settings
/// equal.
pub fn ablate(
    cfg: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    train_set: &[Example],
    test: &[Example],
    num_items: usize,
    ks: &[usize],
) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::Config("no variants to compare".into()));
    }
    let mut rows = Vec::new();
    for &variant in variants {
        for &seed in seeds {
            let c = TrainConfig {
                variant,
                seed,
                ..cfg.clone()
            };
            let out = train(&c, train_set, num_items, None, ks)?;
            let report = evaluate(&out.params, &c, test, ks, out.epochs_run.saturating_sub(1))?;
            rows.push(AblationRow { variant, seed, report });
        }
    }
    if let Some(&k) = ks.iter().max() {
        let mut means: Vec<(Variant, f64)> = variants
            .iter()
            .map(|&v| {
                let ps: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.variant == v)
                    .filter_map(|r| r.report.precision_at(k))
                    .collect();
                (v, ps.iter().sum::<f64>() / ps.len().max(1) as f64)
            })
            .collect();
        means.sort_by(|a, b| b.1.total_cmp(&a.1));
        log::info!(
            "variant ordering by P@{k}: {}",
            means
                .iter()
                .map(|(v, p)| format!("{v} {p:.4}"))
                .collect::<Vec<_>>()
                .join(" > ")
        );
    }
    Ok(rows)
}
