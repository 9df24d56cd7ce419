//! Adam training loop with step-decayed learning rate, Bayar re-projection
//! after every update, periodic validation and resumable checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod sampler;

use mvss_tensor::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::augment::augment_random;
use crate::data::{make_batch, Sample};
use crate::error::{Error, Result};
use crate::losses::combined_loss;
use crate::metrics::{evaluate, score_samples, EvalOptions, MetricsReport};
use crate::model::Model;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use sampler::{Sampler, SamplerState};

/// First generator stream used for augmentation; streams below belong to
/// the sampler.
const AUGMENT_STREAM_BASE: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    /// Completed steps, counting this one.
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub seg: Option<f64>,
    pub edge: Option<f64>,
    pub clf: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub bayar_resets: usize,
}

/// Progress notifications passed to the observer of [`Trainer::run`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step(&'a StepRecord),
    Validation { step: u64, report: &'a MetricsReport, improved: bool },
    ValidationFailed { step: u64, error: &'a Error },
    NewBest(&'a Checkpoint),
    Diverged { step: u64, detail: &'a str },
}

impl TrainEvent<'_> {
    /// Training-log line, if the event is logged.
    pub fn log_line(&self) -> Option<String> {
        let value = match self {
            TrainEvent::Step(r) => serde_json::json!({ "event": "step", "record": r }),
            TrainEvent::Validation { step, report, improved } => serde_json::json!({
                "event": "validation", "step": step, "improved": improved, "report": report,
            }),
            TrainEvent::ValidationFailed { step, error } => serde_json::json!({
                "event": "validation_failed", "step": step, "error": error.to_string(),
            }),
            TrainEvent::Diverged { step, detail } => serde_json::json!({
                "event": "diverged", "step": step, "detail": detail,
            }),
            TrainEvent::NewBest(_) => return None,
        };
        Some(value.to_string())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    /// Checkpoint with the highest validation Com-F1, if any was defined.
    pub best: Option<Checkpoint>,
    pub final_train_report: Option<MetricsReport>,
    /// Most recent validation report.
    pub final_val_report: Option<MetricsReport>,
}

/// Scores `samples` and evaluates them. Leaves the model untouched.
pub fn validate(model: &Model, samples: &[Sample], options: &EvalOptions, batch_size: usize) -> Result<MetricsReport> {
    let scored = score_samples(model, samples, batch_size)?;
    evaluate(&scored, options)
}

pub struct Trainer<'d> {
    config: TrainConfig,
    model: Model,
    adam: Adam,
    sampler: Sampler,
    step: u64,
    best_val_com_f1: Option<f64>,
    best: Option<Checkpoint>,
    last_val: Option<MetricsReport>,
    train: &'d [Sample],
    val: Option<&'d [Sample]>,
}

impl<'d> Trainer<'d> {
    pub fn new(config: TrainConfig, train: &'d [Sample], val: Option<&'d [Sample]>) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone())?;
        let adam = Adam::new(model.params());
        let sampler = Sampler::new(train.len(), config.seed)?;
        Ok(Self {
            config,
            model,
            adam,
            sampler,
            step: 0,
            best_val_com_f1: None,
            best: None,
            last_val: None,
            train,
            val,
        })
    }

    /// Continues from `checkpoint` with the same data.
    pub fn resume(checkpoint: &Checkpoint, train: &'d [Sample], val: Option<&'d [Sample]>) -> Result<Self> {
        checkpoint.config.validate()?;
        let model = checkpoint.model()?;
        if checkpoint.adam.m.len() != model.params().len() {
            return Err(Error::Checkpoint("optimizer state does not match the parameters".into()));
        }
        if checkpoint.sampler.order.len() != train.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained on {} samples but {} were given",
                checkpoint.sampler.order.len(),
                train.len()
            )));
        }
        Ok(Self {
            config: checkpoint.config.clone(),
            model,
            adam: checkpoint.adam.clone(),
            sampler: Sampler::from_state(&checkpoint.sampler)?,
            step: checkpoint.step,
            best_val_com_f1: checkpoint.best_val_com_f1,
            best: None,
            last_val: None,
            train,
            val,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            config: self.config.clone(),
            best_val_com_f1: self.best_val_com_f1,
            sampler: self.sampler.state(),
            params: self
                .model
                .params()
                .iter()
                .map(|(_, name, t)| (name.to_string(), t.clone()))
                .collect(),
            adam: self.adam.clone(),
        }
    }

    fn augmented_batch(&mut self) -> Result<Vec<Sample>> {
        let bs = self.config.batch_size;
        let indices = self.sampler.next_batch(bs);
        let (seed, step, policy, train) = (self.config.seed, self.step, &self.config.augment, self.train);
        indices
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(AUGMENT_STREAM_BASE + step * bs as u64 + slot as u64);
                augment_random(&train[i], policy, &mut rng)
            })
            .collect()
    }

    /// One optimizer update.
    pub fn step(&mut self) -> Result<StepRecord> {
        let lr = self.config.lr_at(self.step);
        let batch = self.augmented_batch()?;
        let (x, labels) = make_batch(&batch)?;
        let step_no = self.step + 1;

        let tape = Tape::new();
        let bound = self.model.params().bind(&tape);
        let out = self.model.forward(&bound, &x)?;
        let loss = combined_loss(out.seg_map, out.edge_map, out.image_score, &labels, self.config.loss_weights)?;
        let value = loss.value();
        if !value.is_finite() {
            return Err(Error::Diverged {
                step: step_no,
                detail: format!("loss is {value} (seg {:?}, edge {:?}, clf {})", loss.seg, loss.edge, loss.clf),
            });
        }
        let mut grads = tape.backward(loss.total);
        let mut grads: Vec<Tensor> = bound
            .vars()
            .iter()
            .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect();
        let grad_norm = adam::clip_global_norm(&mut grads, self.config.grad_clip);
        if !grad_norm.is_finite() {
            return Err(Error::Diverged {
                step: step_no,
                detail: format!("gradient norm is {grad_norm} at loss {value}"),
            });
        }
        self.adam.step(self.model.params_mut(), &grads, lr);
        let resets = self.model.project_bayar()?;
        self.step = step_no;
        Ok(StepRecord {
            step: step_no,
            lr,
            loss: value,
            seg: loss.seg,
            edge: loss.edge,
            clf: loss.clf,
            grad_norm,
            bayar_resets: resets.len(),
        })
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            aggregation: self.config.pixel_aggregation,
            ..EvalOptions::default()
        }
    }

    pub fn validate_on(&self, samples: &[Sample]) -> Result<MetricsReport> {
        validate(&self.model, samples, &self.eval_options(), self.config.eval_batch_size)
    }

    fn run_validation(&mut self, observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>) -> Result<Option<MetricsReport>> {
        let Some(val) = self.val else { return Ok(None) };
        match self.validate_on(val) {
            Ok(report) => {
                let improved = report
                    .com_f1
                    .is_some_and(|c| self.best_val_com_f1.is_none_or(|b| c > b));
                if improved {
                    self.best_val_com_f1 = report.com_f1;
                }
                observer(TrainEvent::Validation {
                    step: self.step,
                    report: &report,
                    improved,
                })?;
                if improved {
                    let best = self.checkpoint();
                    observer(TrainEvent::NewBest(&best))?;
                    self.best = Some(best);
                }
                self.last_val = Some(report.clone());
                Ok(Some(report))
            }
            Err(error) => {
                observer(TrainEvent::ValidationFailed { step: self.step, error: &error })?;
                Ok(None)
            }
        }
    }

    /// Steps until `last_step` updates are done, validating on schedule.
    /// Returns the last validation report produced.
    pub fn run_until(
        &mut self,
        last_step: u64,
        observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
    ) -> Result<Option<MetricsReport>> {
        let mut last_report = None;
        while self.step < last_step {
            let record = match self.step() {
                Ok(r) => r,
                Err(Error::Diverged { step, detail }) => {
                    observer(TrainEvent::Diverged { step, detail: &detail })?;
                    return Err(Error::Diverged { step, detail });
                }
                Err(e) => return Err(e),
            };
            observer(TrainEvent::Step(&record))?;
            let every = self.config.val_every;
            let scheduled = every > 0 && self.step % every == 0;
            if scheduled || self.step == self.config.max_steps {
                last_report = self.run_validation(observer)?;
            }
        }
        Ok(last_report)
    }

    /// Trains to `max_steps` and evaluates the final model.
    pub fn run(mut self, observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>) -> Result<TrainOutcome> {
        self.run_until(self.config.max_steps, observer)?;
        let final_train_report = if self.config.final_train_eval {
            self.validate_on(self.train).ok()
        } else {
            None
        };
        Ok(TrainOutcome {
            last: self.checkpoint(),
            best: self.best,
            final_train_report,
            final_val_report: self.last_val,
        })
    }
}

/// Trains from scratch without observing progress.
pub fn train(config: TrainConfig, train: &[Sample], val: Option<&[Sample]>) -> Result<TrainOutcome> {
    Trainer::new(config, train, val)?.run(&mut |_| Ok(()))
}
