use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::architecture::{build_bagnet3d, compute_receptive_field, ForwardOptions, Mode, Model};
use crate::data::{center_crop, random_crop, whiten_with, Volume, WhitenScope};
use crate::error::{Error, Result};
use crate::optim::{adam_step, lr_at, Accumulator, AdamState};
use crate::rng;
use crate::tape::Tape;
use crate::task::Task;
use crate::tensor::Tensor;

use super::checkpoint::{Best, Checkpoint};
use super::config::TrainConfig;
use super::metrics::{accuracy, argmax, mae, EpochRecord, EvalReport, TargetScaler};

pub const LATEST_CHECKPOINT: &str = "latest.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const METRICS_LOG: &str = "metrics.jsonl";

/// A whitened volume with its label in task units.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub volume: Volume,
    pub target: f64,
}

/// Label of `v` for `task`, read from its subject annotations.
pub fn target_of(v: &Volume, task: Task) -> Result<f64> {
    let label = match task {
        Task::Age => v.meta.age,
        Task::Sex => v.meta.sex.map(f64::from),
    };
    let label = label.ok_or_else(|| Error::data(format!("volume `{}` has no {task} label", v.meta.id)))?;
    if task == Task::Sex && label != 0.0 && label != 1.0 {
        return Err(Error::data(format!("volume `{}` has sex label {label}, expected 0 or 1", v.meta.id)));
    }
    Ok(label)
}

/// Whitens each volume and attaches its label.
pub fn prepare_samples(volumes: &[Volume], task: Task, scope: WhitenScope) -> Result<Vec<Sample>> {
    volumes
        .iter()
        .map(|v| {
            Ok(Sample {
                target: target_of(v, task)?,
                volume: whiten_with(v, scope)?,
            })
        })
        .collect()
}

fn stack(volumes: &[Volume]) -> Result<Tensor<f32>> {
    let [d, h, w] = volumes[0].dims();
    let mut data = Vec::with_capacity(volumes.len() * d * h * w);
    for v in volumes {
        if v.dims() != [d, h, w] {
            return Err(Error::shape(format!("batch mixes shapes {:?} and {:?}", [d, h, w], v.dims())));
        }
        data.extend_from_slice(v.voxels().data());
    }
    Tensor::new([volumes.len(), 1, d, h, w], data)
}

/// Raw network outputs (one row per sample) on center crops.
pub fn predict_outputs(model: &Model<f32>, samples: &[Sample], crop: [usize; 3]) -> Result<Vec<Vec<f64>>> {
    samples
        .iter()
        .map(|s| {
            let x = center_crop(&s.volume, crop)?.to_input::<f32>();
            Ok(model.predict(x)?.data().iter().map(|&v| v as f64).collect())
        })
        .collect()
}

/// Validation/test metric: MAE in target units or argmax accuracy.
pub fn evaluate(
    model: &Model<f32>,
    scaler: &TargetScaler,
    task: Task,
    samples: &[Sample],
    crop: [usize; 3],
) -> Result<EvalReport> {
    if model.output_dim() != task.output_dim() {
        return Err(Error::config(format!(
            "model has {} outputs, task {task} needs {}",
            model.output_dim(),
            task.output_dim()
        )));
    }
    let outputs = predict_outputs(model, samples, crop)?;
    let targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
    let metric = match task {
        Task::Age => {
            let preds: Vec<f64> = outputs.iter().map(|o| scaler.decode(o[0])).collect();
            mae(&preds, &targets)?
        }
        Task::Sex => {
            let labels: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
            accuracy(&outputs, &labels)?
        }
    };
    Ok(EvalReport {
        task,
        rf: compute_receptive_field(model.config()).rf,
        n: samples.len(),
        metric_name: task.metric_name().to_string(),
        metric,
    })
}

/// Predicted labels in task units: years for age, argmax class for sex.
pub fn decode_predictions(outputs: &[Vec<f64>], task: Task, scaler: &TargetScaler) -> Vec<f64> {
    outputs
        .iter()
        .map(|o| match task {
            Task::Age => scaler.decode(o[0]),
            Task::Sex => argmax(o) as f64,
        })
        .collect()
}

pub struct Trainer {
    config: TrainConfig,
    model: Model<f32>,
    adam: AdamState<f32>,
    scaler: TargetScaler,
    epoch: usize,
    best: Option<Best>,
    names: Vec<String>,
    decay: Vec<bool>,
}

impl Trainer {
    /// Fresh run; the target scaler is fitted on `train` labels.
    pub fn new(config: TrainConfig, train: &[Sample]) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::data("training set is empty"));
        }
        let model: Model<f32> = build_bagnet3d(&config.model_config()?, config.task.output_dim(), config.seed)?;
        let targets: Vec<f64> = train.iter().map(|s| s.target).collect();
        let scaler = if config.task == Task::Age && config.standardize_targets {
            TargetScaler::fit(&targets)
        } else {
            TargetScaler::IDENTITY
        };
        let adam = AdamState::for_params(&model.param_values());
        Ok(Self::assemble(config, model, adam, scaler, 0, None))
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let model = ck.model()?;
        if ck.names.iter().ne(model.params().iter().map(|p| &p.name)) {
            return Err(Error::config("checkpoint parameter names do not match the model"));
        }
        Ok(Self::assemble(ck.config, model, ck.adam, ck.scaler, ck.epoch, ck.best))
    }

    fn assemble(
        config: TrainConfig,
        model: Model<f32>,
        adam: AdamState<f32>,
        scaler: TargetScaler,
        epoch: usize,
        best: Option<Best>,
    ) -> Self {
        let names = model.params().iter().map(|p| p.name.clone()).collect();
        let decay = model
            .params()
            .iter()
            .map(|p| config.decay_all_params || p.kind.is_weight())
            .collect();
        Self {
            config,
            model,
            adam,
            scaler,
            epoch,
            best,
            names,
            decay,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn scaler(&self) -> TargetScaler {
        self.scaler
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn best(&self) -> Option<Best> {
        self.best
    }

    /// Changes the total epoch budget, e.g. to extend a resumed run.
    pub fn set_epochs(&mut self, epochs: usize) -> Result<()> {
        if epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        self.config.epochs = epochs;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            config_hash: self.model.config_hash(),
            epoch: self.epoch,
            names: self.names.clone(),
            params: self.model.param_values(),
            adam: self.adam.clone(),
            scaler: self.scaler,
            best: self.best,
        }
    }

    fn apply(&mut self, acc: &mut Accumulator<f32>, partial: bool, lr: f64) -> Result<()> {
        let grads = acc.flush(partial)?;
        let mut params: Vec<&mut Tensor<f32>> = self.model.values_mut().collect();
        adam_step(&mut params, &grads, &self.decay, &self.names, &mut self.adam, &self.config.hyper, lr)
    }

    /// One shuffled pass over `train` followed by validation.
    pub fn run_epoch(&mut self, train: &[Sample], val: &[Sample]) -> Result<EpochRecord> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::data("training and validation sets must be non-empty"));
        }
        let cfg = &self.config;
        let epoch = self.epoch;
        let lr = lr_at(epoch, cfg.hyper.eta);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::indexed_stream(cfg.seed, rng::SHUFFLE, epoch as u64));
        let mut crop_rng = rng::indexed_stream(cfg.seed, rng::CROP, epoch as u64);
        let shapes: Vec<Vec<usize>> = self.model.params().iter().map(|p| p.value.shape().to_vec()).collect();
        let mut acc = Accumulator::new(shapes.iter().map(Vec::as_slice), cfg.accum_steps)?;
        if !cfg.average_accumulated {
            acc = acc.summing();
        }
        let (task, crop, batch_size) = (cfg.task, cfg.crop, cfg.batch_size);
        let mut steps = 0;
        let mut loss_sum = 0.0;
        for batch in order.chunks(batch_size) {
            let crops = batch
                .iter()
                .map(|&i| random_crop(&train[i].volume, crop, &mut crop_rng))
                .collect::<Result<Vec<_>>>()?;
            let x = stack(&crops)?;
            let mut tape = Tape::new();
            let out = self.model.forward_with(&mut tape, x, ForwardOptions::new(Mode::Train))?;
            let loss = match task {
                Task::Age => {
                    let t: Vec<f32> = batch.iter().map(|&i| self.scaler.encode(train[i].target) as f32).collect();
                    let target = tape.constant(Tensor::new([batch.len(), 1], t)?);
                    tape.mse_loss(out.logits, target)?
                }
                Task::Sex => {
                    let labels: Vec<usize> = batch.iter().map(|&i| train[i].target as usize).collect();
                    tape.softmax_cross_entropy(out.logits, &labels)?
                }
            };
            let value = tape.value(loss).item()? as f64;
            if !value.is_finite() {
                return Err(Error::Numerics {
                    param: "loss".into(),
                    detail: format!("loss is {value} at epoch {epoch}"),
                });
            }
            loss_sum += value * batch.len() as f64;
            let mut grads = tape.backward(loss)?;
            let grads = out
                .params
                .iter()
                .map(|&p| grads.take(p).ok_or_else(|| Error::config("parameter without gradient")))
                .collect::<Result<Vec<_>>>()?;
            acc.accumulate(&grads)?;
            if acc.is_ready() {
                self.apply(&mut acc, false, lr)?;
                steps += 1;
            }
        }
        if !acc.is_empty() {
            self.apply(&mut acc, true, lr)?;
            steps += 1;
        }

        let report = evaluate(&self.model, &self.scaler, task, val, crop)?;
        let improved = self.best.is_none_or(|b| task.improves(report.metric, b.metric));
        if improved {
            self.best = Some(Best {
                metric: report.metric,
                epoch,
            });
        }
        self.epoch += 1;
        let best = self.best.expect("set above");
        Ok(EpochRecord {
            epoch,
            lr,
            steps,
            train_loss: loss_sum / train.len() as f64,
            metric: task.metric_name().to_string(),
            val_metric: report.metric,
            best_metric: best.metric,
            best_epoch: best.epoch,
        })
    }

    /// Trains until `config.epochs`, writing checkpoints and the metrics log
    /// into `config.checkpoint_dir` when set.
    pub fn fit(&mut self, train: &[Sample], val: &[Sample]) -> Result<Vec<EpochRecord>> {
        self.fit_with(train, val, |_| {})
    }

    /// [`Trainer::fit`] with a callback after each persisted epoch.
    pub fn fit_with(
        &mut self,
        train: &[Sample],
        val: &[Sample],
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<Vec<EpochRecord>> {
        let dir = self.config.checkpoint_dir.clone();
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let mut history = Vec::new();
        while self.epoch < self.config.epochs {
            let record = self.run_epoch(train, val)?;
            if let Some(d) = &dir {
                self.persist(d, &record)?;
            }
            on_epoch(&record);
            history.push(record);
        }
        Ok(history)
    }

    fn persist(&self, dir: &Path, record: &EpochRecord) -> Result<()> {
        let ck = self.checkpoint();
        ck.save(&dir.join(LATEST_CHECKPOINT))?;
        if record.best_epoch == record.epoch {
            ck.save(&dir.join(BEST_CHECKPOINT))?;
        }
        append_record(&dir.join(METRICS_LOG), record)
    }
}

pub fn append_record(path: &Path, record: &EpochRecord) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(record)?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

pub fn read_metrics_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
