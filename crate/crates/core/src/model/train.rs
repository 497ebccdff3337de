use rayon::prelude::*;
use sa_numerics::{AdamConfig, AdamState, ParamStore, Tape, Tensor};
use serde::Serialize;

use super::network::{HeadKind, SaModel, SaModelConfig, OUTPUTS};
use crate::data::balance::{balance_resample, BalanceMode};
use crate::data::window::SequenceSample;
use crate::error::{CoreError, Result};
use crate::evaluation::{classification_metrics, ClassificationReport};
use crate::labels::{accumulate_ternary, NUM_TERNARY_CLASSES};
use crate::optim::{collect_grads, permutation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Wait,
    Stop,
}

/// Stops once the monitored loss has not improved for `patience` epochs in a row.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Wait
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch whose weights were kept (0 = initialization).
    pub best_epoch: usize,
}

pub(crate) fn stack_batch(samples: &[&SequenceSample], head: HeadKind) -> Result<(Tensor, Tensor)> {
    let s = samples[0].features.shape().to_vec();
    let mut x = Vec::with_capacity(samples.len() * s[0] * s[1]);
    let mut y = Vec::with_capacity(samples.len() * OUTPUTS);
    for sample in samples {
        if sample.features.shape() != s.as_slice() {
            return Err(CoreError::invalid(format!(
                "sequence {}@{} has shape {:?}, expected {s:?}",
                sample.video_id,
                sample.start_frame,
                sample.features.shape()
            )));
        }
        x.extend_from_slice(sample.features.data());
        match head {
            HeadKind::Binary => y.extend(sample.target_binary.iter().map(|&b| f64::from(b))),
            HeadKind::Ternary => {
                y.extend((0..OUTPUTS).map(|c| f64::from(u8::from(c == usize::from(sample.target_ternary)))))
            }
        }
    }
    Ok((
        Tensor::new(vec![samples.len(), s[0], s[1]], x)?,
        Tensor::new(vec![samples.len(), OUTPUTS], y)?,
    ))
}

/// Mean inference-mode loss over `samples`.
fn mean_loss(model: &SaModel, samples: &[SequenceSample]) -> Result<f64> {
    let mut total = 0.0;
    let mut rng = sa_numerics::RngSeed(0).rng();
    for chunk in samples.chunks(256) {
        let refs: Vec<&SequenceSample> = chunk.iter().collect();
        let (x, y) = stack_batch(&refs, model.config.head)?;
        let mut tape = Tape::new();
        let vars: Vec<_> = model.params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
        let l = model.loss_on(&mut tape, &vars, &x, &y, false, &mut rng)?;
        total += tape.value(l).data()[0] * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Trains with Adam and early stopping on the validation loss.
///
/// Returns the weights of the best validation epoch. With no validation
/// samples the training loss is monitored instead.
pub fn train(
    mut model: SaModel,
    train_samples: &[SequenceSample],
    val_samples: &[SequenceSample],
) -> Result<(SaModel, TrainHistory)> {
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
    };
    let cfg = model.config.clone();
    if cfg.max_epochs == 0 {
        return Ok((model, history));
    }
    if train_samples.is_empty() {
        return Err(CoreError::invalid("no training sequences"));
    }
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate), &model.params);
    let mut shuffle_rng = cfg.seed.derive(1).rng();
    let mut dropout_rng = cfg.seed.derive(2).rng();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: ParamStore = model.params.clone();

    for epoch in 1..=cfg.max_epochs {
        let abort = |e: CoreError| CoreError::Training { epoch, msg: e.to_string() };
        let order = permutation(train_samples.len(), &mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&SequenceSample> = chunk.iter().map(|&i| &train_samples[i]).collect();
            let (x, y) = stack_batch(&refs, cfg.head)?;
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape);
            let loss = model
                .loss_on(&mut tape, &vars, &x, &y, true, &mut dropout_rng)
                .map_err(abort)?;
            total += tape.value(loss).data()[0] * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            let grads = collect_grads(&grads, &vars, &model.params);
            adam.step(&mut model.params, &grads).map_err(|e| abort(e.into()))?;
        }
        let train_loss = total / train_samples.len() as f64;
        let monitored = if val_samples.is_empty() {
            train_loss
        } else {
            mean_loss(&model, val_samples).map_err(abort)?
        };
        if !train_loss.is_finite() || !monitored.is_finite() {
            return Err(CoreError::Training {
                epoch,
                msg: format!("loss became non-finite (train {train_loss}, val {monitored})"),
            });
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} val {monitored:.5}");
        history.train_loss.push(train_loss);
        if !val_samples.is_empty() {
            history.val_loss.push(monitored);
        }
        match stopper.observe(epoch, monitored) {
            StopDecision::Improved => best = model.params.clone(),
            StopDecision::Wait => {}
            StopDecision::Stop => break,
        }
    }
    history.best_epoch = stopper.best_epoch;
    model.params = best;
    Ok((model, history))
}

/// Classification quality of a model on labeled sequences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelEvaluation {
    /// On the three accumulated classes. Binary heads map their bits through
    /// the prefix rule and carry no scores (so no AUC).
    pub ternary: ClassificationReport,
    /// Binary head only: Perception, Comprehension, Projection.
    pub per_level: Option<Vec<ClassificationReport>>,
}

pub fn evaluate(model: &SaModel, samples: &[SequenceSample]) -> Result<ModelEvaluation> {
    if samples.is_empty() {
        return Err(CoreError::invalid("no sequences to evaluate"));
    }
    let mut probs: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let refs: Vec<&SequenceSample> = chunk.iter().collect();
        let (x, _) = stack_batch(&refs, model.config.head)?;
        let p = model.predict_batch(&x)?;
        probs.extend(p.data().chunks(OUTPUTS).map(<[f64]>::to_vec));
    }
    let truth: Vec<usize> = samples.iter().map(|s| usize::from(s.target_ternary)).collect();
    match model.config.head {
        HeadKind::Ternary => {
            let pred = Tensor::new(vec![probs.len(), OUTPUTS], probs.concat())?.argmax_rows();
            Ok(ModelEvaluation {
                ternary: classification_metrics(&truth, &pred, Some(&probs), NUM_TERNARY_CLASSES)?,
                per_level: None,
            })
        }
        HeadKind::Binary => {
            let bits: Vec<[u8; 3]> = probs.iter().map(|p| [0, 1, 2].map(|i| u8::from(p[i] >= 0.5))).collect();
            let pred: Vec<usize> = bits.iter().map(|b| usize::from(accumulate_ternary(*b).1)).collect();
            let mut per_level = Vec::with_capacity(3);
            for level in 0..3 {
                let t: Vec<usize> = samples.iter().map(|s| usize::from(s.target_binary[level])).collect();
                let p: Vec<usize> = bits.iter().map(|b| usize::from(b[level])).collect();
                let scores: Vec<Vec<f64>> = probs.iter().map(|r| vec![1.0 - r[level], r[level]]).collect();
                per_level.push(classification_metrics(&t, &p, Some(&scores), 2)?);
            }
            Ok(ModelEvaluation {
                ternary: classification_metrics(&truth, &pred, None, NUM_TERNARY_CLASSES)?,
                per_level: Some(per_level),
            })
        }
    }
}

/// Seeded fold index for each of `n` samples; fold sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: sa_numerics::RngSeed) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(CoreError::Config(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    if folds > n {
        return Err(CoreError::Config(format!("{folds} folds requested for {n} samples")));
    }
    let order = permutation(n, &mut seed.rng());
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub history: TrainHistory,
    pub evaluation: ModelEvaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
}

impl CvReport {
    pub fn ternary_reports(&self) -> Vec<ClassificationReport> {
        self.folds.iter().map(|f| f.evaluation.ternary.clone()).collect()
    }
}

/// k-fold cross-validation; training folds are class-balanced when `balance` is set.
///
/// Folds train independently (in parallel on the current rayon pool) with
/// their own derived seeds, so results do not depend on the thread count.
pub fn cross_validate(
    samples: &[SequenceSample],
    config: &SaModelConfig,
    balance: Option<BalanceMode>,
) -> Result<CvReport> {
    config.validate()?;
    let assignment = fold_assignment(samples.len(), config.folds, config.seed.derive(3))?;
    let folds: Result<Vec<FoldResult>> = (0..config.folds)
        .into_par_iter()
        .map(|k| {
            let (mut tr, mut va) = (Vec::new(), Vec::new());
            for (s, &f) in samples.iter().zip(&assignment) {
                if f == k { va.push(s.clone()) } else { tr.push(s.clone()) }
            }
            let fold_seed = config.seed.derive(100 + k as u64);
            if let Some(mode) = balance {
                tr = balance_training(&tr, mode, fold_seed.derive(1))?;
            }
            let cfg = SaModelConfig { seed: fold_seed, ..config.clone() };
            let (model, history) = train(SaModel::new(cfg)?, &tr, &va)?;
            Ok(FoldResult {
                fold: k,
                train_size: tr.len(),
                val_size: va.len(),
                history,
                evaluation: evaluate(&model, &va)?,
            })
        })
        .collect();
    Ok(CvReport { folds: folds? })
}

/// Balances on the ternary class; falls back to the unbalanced set (with a
/// warning) when a class has no samples.
pub fn balance_training(
    samples: &[SequenceSample],
    mode: BalanceMode,
    seed: sa_numerics::RngSeed,
) -> Result<Vec<SequenceSample>> {
    match balance_resample(samples, NUM_TERNARY_CLASSES, |s| usize::from(s.target_ternary), mode, seed) {
        Ok(b) => Ok(b),
        Err(CoreError::Invalid(msg)) => {
            log::warn!("training set left unbalanced: {msg}");
            Ok(samples.to_vec())
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_trace() {
        let mut es = EarlyStopping::new(5);
        let losses = [1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95];
        let mut stopped = None;
        for (i, &l) in losses.iter().enumerate() {
            if es.observe(i + 1, l) == StopDecision::Stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(7));
        assert_eq!(es.best_epoch, 2);
    }

    #[test]
    fn folds_partition() {
        let f = fold_assignment(100, 10, sa_numerics::RngSeed(5)).unwrap();
        for k in 0..10 {
            assert_eq!(f.iter().filter(|&&x| x == k).count(), 10);
        }
        assert_eq!(f, fold_assignment(100, 10, sa_numerics::RngSeed(5)).unwrap());
        assert!(fold_assignment(5, 10, sa_numerics::RngSeed(5)).is_err());
    }

    #[test]
    fn zero_epochs_returns_init() {
        let cfg = SaModelConfig { input_dim: 4, max_epochs: 0, ..SaModelConfig::default() };
        let m = SaModel::new(cfg).unwrap();
        let init = m.params.clone();
        let (m, h) = train(m, &[], &[]).unwrap();
        assert_eq!(m.params.tensors(), init.tensors());
        assert!(h.train_loss.is_empty() && h.val_loss.is_empty());
    }
}
