//! Alternating training of a backbone on focal loss and a γ-Net on
//! validation SECE through a one-step unrolled update, plus the CE and
//! fixed-γ baselines.

mod backbone;
mod config;
mod eval;
mod step;

use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use backbone::{forward, Backbone, Forward};
pub use config::{MetaTrainConfig, Mode};
pub use eval::{evaluate, predictions, Evaluation};
pub use step::{meta_gradient, meta_step, Learner, StepStats, DIVERGENCE_LIMIT};

use crate::data::{split, Dataset, Splits};
use crate::error::{Error, Result};
use crate::gammanet::{gamma_forward, init_gamma_params, mean_std, rescale_to_mean_gamma};
use crate::metrics::{self, BinningScheme, PredictionSet, DEFAULT_SWEEP};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::report::{CalibrationReport, ReportOptions};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const LOG_HEADER: &str = "epoch,train_loss,val_error,test_error,test_ece,gamma_mean,gamma_std";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_error: f64,
    pub test_error: f64,
    pub test_ece: f64,
    /// γ statistics over the test set.
    pub gamma_mean: f64,
    pub gamma_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
    pub report: CalibrationReport,
}

pub fn write_log_csv(mut w: impl Write, rows: &[EpochRow]) -> std::io::Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_error, r.test_error, r.test_ece, r.gamma_mean, r.gamma_std
        )?;
    }
    Ok(())
}

/// Parameters of the epoch with the lowest validation error so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: usize,
    pub val_error: f64,
    pub backbone: Backbone,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: MetaTrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub learner: Learner,
    pub rng: ChaCha8Rng,
    pub best: Option<Snapshot>,
    pub log: Vec<EpochRow>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Input(format!(
                "{}: checkpoint version {} is not supported",
                path.display(),
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub evaluation: Evaluation,
    pub test_predictions: PredictionSet,
    pub checkpoint: Checkpoint,
}

struct SplitData {
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

impl SplitData {
    fn new(data: &Dataset, config: &MetaTrainConfig) -> Result<Self> {
        let Splits { train, val, test, .. } = split(data.len(), config.ratios, config.seed)?;
        if config.batch_size > train.len() || config.meta_batch_size > val.len() {
            return Err(Error::Config(format!(
                "batch sizes {}/{} exceed the train ({}) or validation ({}) split",
                config.batch_size,
                config.meta_batch_size,
                train.len(),
                val.len()
            )));
        }
        Ok(Self {
            train: data.subset(&train),
            val: data.subset(&val),
            test: data.subset(&test),
        })
    }
}

/// A training run that can be advanced one epoch at a time and
/// checkpointed between epochs.
pub struct Trainer {
    data: SplitData,
    state: Checkpoint,
}

impl Trainer {
    pub fn new(config: MetaTrainConfig, data: &Dataset) -> Result<Self> {
        config.validate()?;
        let splits = SplitData::new(data, &config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let backbone = Backbone::init(data.dim(), &config.hidden, data.classes, rng.random())?;
        let mut gamma_net = init_gamma_params(
            backbone.feature_dim(),
            data.classes,
            rng.random(),
            config.gamma_init,
            config.tau,
        )?;
        if config.mode.uses_gamma_net() {
            let (features, _) = backbone.predict(&splits.train.features)?;
            rescale_to_mean_gamma(&mut gamma_net, &features, config.gamma_init)?;
        }
        let inner = OptimizerState::new(
            OptimizerKind::Sgd {
                momentum: config.momentum,
                weight_decay: config.weight_decay,
            },
            config.lr,
            &backbone.params,
        );
        let outer = OptimizerState::new(OptimizerKind::adam(), config.meta_lr, &gamma_net.tensors().map(Clone::clone));
        Ok(Self {
            data: splits,
            state: Checkpoint {
                version: CHECKPOINT_VERSION,
                config,
                epoch: 0,
                learner: Learner {
                    backbone,
                    gamma_net,
                    inner,
                    outer,
                },
                rng,
                best: None,
                log: Vec::new(),
            },
        })
    }

    /// Continues from `checkpoint`; `data` must be the dataset the run
    /// started with.
    pub fn resume(checkpoint: Checkpoint, data: &Dataset) -> Result<Self> {
        checkpoint.config.validate()?;
        let splits = SplitData::new(data, &checkpoint.config)?;
        if checkpoint.learner.backbone.input_dim() != data.dim() || checkpoint.learner.backbone.classes() != data.classes {
            return Err(Error::Input("checkpoint does not match the dataset shape".into()));
        }
        Ok(Self {
            data: splits,
            state: checkpoint,
        })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.state
    }

    pub fn config(&self) -> &MetaTrainConfig {
        &self.state.config
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.state.config.epochs
    }

    /// γ the current model assigns to every row of `data`.
    fn gammas(&self, data: &Dataset) -> Result<Vec<f64>> {
        let c = &self.state.config;
        Ok(match c.mode {
            Mode::Ce => vec![0.0; data.len()],
            Mode::FocalFixed => vec![c.focal_gamma; data.len()],
            Mode::FlGammaSece | Mode::FlGammaNone => {
                let (features, _) = self.state.learner.backbone.predict(&data.features)?;
                gamma_forward(&features, &self.state.learner.gamma_net)?
            }
        })
    }

    pub fn run_epoch(&mut self) -> Result<EpochRow> {
        let epoch = self.state.epoch;
        let config = self.state.config.clone();
        self.state.learner.inner.lr = config.lr_at(epoch);

        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        order.shuffle(&mut self.state.rng);
        let mut total = 0.0;
        for (s, batch) in order.chunks(config.batch_size).enumerate() {
            let val_idx = index::sample(&mut self.state.rng, self.data.val.len(), config.meta_batch_size).into_vec();
            let x = self.data.train.features.select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| self.data.train.labels[i]).collect();
            let xv = self.data.val.features.select_rows(&val_idx);
            let yv: Vec<usize> = val_idx.iter().map(|&i| self.data.val.labels[i]).collect();
            let stats = meta_step(&mut self.state.learner, (&x, &y), Some((&xv, &yv)), &config).map_err(|e| match e {
                Error::Divergence(msg) => Error::Divergence(format!("epoch {}, step {}: {msg}", epoch + 1, s + 1)),
                other => other,
            })?;
            total += stats.train_loss * batch.len() as f64;
        }

        let backbone = &self.state.learner.backbone;
        let val_error = metrics::error_rate(&predictions(backbone, &self.data.val)?);
        let test = predictions(backbone, &self.data.test)?;
        let (gamma_mean, gamma_std) = mean_std(&self.gammas(&self.data.test)?);
        let row = EpochRow {
            epoch: epoch + 1,
            train_loss: total / order.len() as f64,
            val_error,
            test_error: metrics::error_rate(&test),
            test_ece: metrics::ece(&test, BinningScheme::equal_width(config.eval_bins)?),
            gamma_mean,
            gamma_std,
        };
        log::info!(
            "epoch {}: loss {:.4} val_err {:.4} test_err {:.4} test_ece {:.4} gamma {:.3}±{:.3}",
            row.epoch,
            row.train_loss,
            row.val_error,
            row.test_error,
            row.test_ece,
            row.gamma_mean,
            row.gamma_std
        );
        if self.state.best.as_ref().is_none_or(|b| val_error < b.val_error) {
            self.state.best = Some(Snapshot {
                epoch: row.epoch,
                val_error,
                backbone: backbone.clone(),
            });
        }
        self.state.log.push(row);
        self.state.epoch += 1;
        Ok(row)
    }

    /// Evaluates the best-validation snapshot on the test split.
    pub fn finish(self, opts: &ReportOptions) -> Result<TrainOutcome> {
        let backbone = match &self.state.best {
            Some(b) => &b.backbone,
            None => &self.state.learner.backbone,
        };
        let evaluation = evaluate(backbone, &self.data.test, opts, &DEFAULT_SWEEP)?;
        let test_predictions = predictions(backbone, &self.data.test)?;
        Ok(TrainOutcome {
            log: TrainLog {
                rows: self.state.log.clone(),
                report: evaluation.report.clone(),
            },
            evaluation,
            test_predictions,
            checkpoint: self.state,
        })
    }
}

/// Runs all epochs and evaluates with `eval_bins` equal-width bins.
pub fn train(config: MetaTrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    let opts = ReportOptions::with_bins(BinningScheme::equal_width(config.eval_bins)?);
    let mut trainer = Trainer::new(config, data)?;
    while !trainer.is_done() {
        trainer.run_epoch()?;
    }
    trainer.finish(&opts)
}
