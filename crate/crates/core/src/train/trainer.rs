use std::fmt::Write as _;
use std::time::Instant;

use super::{cross_entropy_loss, l2_targets, Checkpoint, OptimState, TrainConfig, TrainError};
use crate::data::{PatchSample, PcaModel, SplitSpec};
use crate::metrics::{overall_accuracy, ConfusionMatrix};
use crate::model::{DiffFormer, ModelConfig, ParamStore};
use crate::tensor::{Graph, Rng64};

/// One row of the training history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_oa: f64,
    /// Step size of the last update in the epoch.
    pub lr_t: f64,
    pub seconds: f64,
}

/// Renders records as `epoch,train_loss,val_oa,lr_t,seconds` CSV.
pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_oa,lr_t,seconds\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_oa, r.lr_t, r.seconds
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Snapshot with the highest validation OA (earliest on ties).
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_val_oa: f64,
    /// State after the final epoch.
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

pub struct Trainer {
    model: DiffFormer,
    cfg: TrainConfig,
    params: ParamStore,
    optim: OptimState,
    rng: Rng64,
    epoch: usize,
    penalized: Vec<String>,
    timing: bool,
    threads: usize,
    pca: Option<PcaModel>,
    split: Option<SplitSpec>,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let model = DiffFormer::new(model_cfg)?;
        let params = model.init_params()?;
        let optim = OptimState::new(params.tensors(), cfg.lr, cfg.decay);
        let rng = Rng64::derive(cfg.seed, 0x7EA1);
        Ok(Self::assemble(model, cfg, params, optim, rng, 0))
    }

    /// Continues from a saved state. Missing optimizer or random state is
    /// started fresh.
    pub fn from_checkpoint(ck: Checkpoint, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let model = DiffFormer::new(ck.config)?;
        let optim = ck
            .optim
            .unwrap_or_else(|| OptimState::new(ck.params.tensors(), cfg.lr, cfg.decay));
        let rng = ck.rng.unwrap_or_else(|| Rng64::derive(cfg.seed, 0x7EA1));
        let mut t = Self::assemble(model, cfg, ck.params, optim, rng, ck.epoch);
        t.pca = ck.pca;
        t.split = ck.split;
        Ok(t)
    }

    fn assemble(
        model: DiffFormer,
        cfg: TrainConfig,
        params: ParamStore,
        optim: OptimState,
        rng: Rng64,
        epoch: usize,
    ) -> Self {
        let penalized = l2_targets(&params, cfg.l2_all_weights);
        Self {
            model,
            cfg,
            params,
            optim,
            rng,
            epoch,
            penalized,
            timing: true,
            threads: 1,
            pca: None,
            split: None,
        }
    }

    /// Band-reduction model and split recorded in every checkpoint.
    pub fn set_metadata(&mut self, pca: Option<PcaModel>, split: Option<SplitSpec>) {
        self.pca = pca;
        self.split = split;
    }

    /// With timing off, history and reports carry `0` seconds so reruns
    /// produce identical bytes.
    pub fn set_timing(&mut self, on: bool) {
        self.timing = on;
    }

    /// Worker threads for evaluation passes.
    pub fn set_threads(&mut self, threads: usize) {
        self.threads = threads.max(1);
    }

    pub fn model(&self) -> &DiffFormer {
        &self.model
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn optim(&self) -> &OptimState {
        &self.optim
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.config().clone(),
            params: self.params.clone(),
            epoch: self.epoch,
            rng: Some(self.rng.clone()),
            optim: Some(self.optim.clone()),
            pca: self.pca.clone(),
            split: self.split,
        }
    }

    /// Eval-mode loss of a batch, penalty included.
    pub fn batch_loss(&self, batch: &[&PatchSample]) -> Result<f64, TrainError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let x = g.constant(self.model.batch_tensor(batch)?);
        let out = self.model.forward(&mut g, &bound, x, None)?;
        let labels: Vec<u16> = batch.iter().map(|s| s.label).collect();
        let loss = cross_entropy_loss(&mut g, out.logits, &labels, &bound, &self.penalized, self.cfg.l2)?;
        Ok(g.value(loss).data()[0])
    }

    /// One optimizer update on `batch` in training mode; returns the loss
    /// before the update.
    pub fn step(&mut self, batch: &[&PatchSample]) -> Result<f64, TrainError> {
        self.step_at(batch, 0)
    }

    fn step_at(&mut self, batch: &[&PatchSample], batch_index: usize) -> Result<f64, TrainError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, true);
        let x = g.constant(self.model.batch_tensor(batch)?);
        let out = self.model.forward(&mut g, &bound, x, Some(&mut self.rng))?;
        let labels: Vec<u16> = batch.iter().map(|s| s.label).collect();
        let loss = cross_entropy_loss(&mut g, out.logits, &labels, &bound, &self.penalized, self.cfg.l2)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(TrainError::NonFinite {
                epoch: self.epoch + 1,
                batch: batch_index,
                loss: value,
            });
        }
        g.backward(loss)?;
        let grads = bound.grads(&g);
        self.optim.step(self.params.tensors_mut(), &grads)?;
        Ok(value)
    }

    /// Shuffles (if configured) and sweeps `train` once; returns the
    /// sample-weighted mean loss.
    pub fn run_epoch(&mut self, train: &[PatchSample]) -> Result<f64, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptySplit("train"));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        if self.cfg.shuffle {
            self.rng.shuffle(&mut order);
        }
        let mut total = 0.0;
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch: Vec<&PatchSample> = chunk.iter().map(|&i| &train[i]).collect();
            total += self.step_at(&batch, b)? * batch.len() as f64;
        }
        self.epoch += 1;
        Ok(total / train.len() as f64)
    }

    /// Confusion matrix of eval-mode predictions.
    pub fn evaluate(&self, samples: &[PatchSample]) -> Result<ConfusionMatrix, TrainError> {
        let preds = self.model.predict(&self.params, samples, self.threads)?;
        let mut cm = ConfusionMatrix::new(self.model.config().n_classes);
        for (s, p) in samples.iter().zip(preds) {
            cm.accumulate(s.label as usize, p as usize)?;
        }
        Ok(cm)
    }

    /// Trains up to `cfg.epochs` total epochs, keeping the snapshot with
    /// the best validation OA.
    pub fn fit(&mut self, train: &[PatchSample], val: &[PatchSample]) -> Result<TrainOutcome, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptySplit("train"));
        }
        if val.is_empty() {
            return Err(TrainError::EmptySplit("validation"));
        }
        let mut history = Vec::new();
        let mut best: Option<(f64, usize, Checkpoint)> = None;
        while self.epoch < self.cfg.epochs {
            let start = Instant::now();
            let train_loss = self.run_epoch(train)?;
            let val_oa = overall_accuracy(&self.evaluate(val)?)?;
            let seconds = if self.timing {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            };
            log::info!("epoch {} loss {train_loss:.5} val OA {val_oa:.4}", self.epoch);
            history.push(EpochRecord {
                epoch: self.epoch,
                train_loss,
                val_oa,
                lr_t: self.optim.current_lr(),
                seconds,
            });
            if best.as_ref().is_none_or(|(oa, _, _)| val_oa > *oa) {
                best = Some((val_oa, self.epoch, self.checkpoint()));
            }
        }
        let last = self.checkpoint();
        let (best_val_oa, best_epoch, best) = best.unwrap_or_else(|| (f64::NAN, self.epoch, last.clone()));
        Ok(TrainOutcome {
            best,
            best_epoch,
            best_val_oa,
            last,
            history,
        })
    }
}
