//! Discounted multi-step prediction loss, auxiliary encoder loss, and the
//! optimization loop.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_batch, Dataset, TrainingSample, HORIZON, OBSERVED, WINDOW};
use crate::models::{Model, ModelError, ModelVariant, Observation, HISTORY, STATE_DIM};
use crate::numeric::{AdamConfig, AdamState, NumericError, Scalar, Tape, Tensor, Var};
use crate::render::FRAME_BYTES;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("non-finite loss at step {step}")]
    NonFinite { step: u64 },
    #[error("config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Time constant of the horizon discount `d = 1 - exp(-t / beta)`.
    pub discount_beta: f64,
    pub aux_weight: f64,
    pub seed: u64,
    /// Steps between checkpoints; 0 keeps only the initial and final ones.
    pub checkpoint_every: u64,
    /// Batches prepared ahead of the optimizer on a helper thread; 0 samples
    /// inline.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 4,
            adam: AdamConfig::default(),
            discount_beta: 2.5e4,
            aux_weight: 1.0,
            seed: 0,
            checkpoint_every: 0,
            prefetch: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            self.adam.base_lr,
            self.adam.decay,
            self.discount_beta,
            self.adam.epsilon,
        ];
        if self.batch_size == 0 || positive.iter().any(|&v| !(v > 0.0)) || self.aux_weight < 0.0 {
            return Err(TrainError::Config(
                "batch size, learning rate, decay and beta must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Dataset sizes and training settings for one named scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub train_simulations: usize,
    pub test_simulations: usize,
    pub train: TrainConfig,
}

impl Profile {
    pub fn builtin(name: &str) -> Result<Self, TrainError> {
        let text = match name {
            "desk" => include_str!("../../profiles/desk.toml"),
            "paper" => include_str!("../../profiles/paper.toml"),
            other => return Err(TrainError::Config(format!("unknown profile {other:?}"))),
        };
        toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))
    }
}

/// Normalized weights of the `horizon` prediction terms at step `t`.
///
/// Raw weight of step `k` (from 1) is `d^(k-1)` with `d = 1 - exp(-t / beta)`
/// and `0^0 = 1`; weights are divided by their sum.
pub fn horizon_weights(t: u64, horizon: usize, beta: f64) -> Vec<f64> {
    let d = discount(t, beta);
    let raw: Vec<f64> = (0..horizon)
        .map(|k| if k == 0 { 1.0 } else { d.powi(k as i32) })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

pub fn discount(t: u64, beta: f64) -> f64 {
    1.0 - (-(t as f64) / beta).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Unweighted MSE of every predicted step.
    pub per_step: Vec<f64>,
    pub prediction: f64,
    pub auxiliary: f64,
    pub total: f64,
}

/// Model inputs and targets assembled from a batch of windows.
pub struct BatchTensors {
    pub batch: usize,
    pub frames: Vec<u8>,
    pub states: Vec<f32>,
    /// `[batch * n, 4]` state at every window frame.
    pub targets: Vec<Tensor<f64>>,
}

impl BatchTensors {
    pub fn new(samples: &[TrainingSample], n_objects: usize) -> Self {
        let batch = samples.len();
        let per = n_objects * STATE_DIM;
        let mut frames = Vec::with_capacity(batch * OBSERVED * FRAME_BYTES);
        let mut states = Vec::with_capacity(batch * HISTORY * per);
        for s in samples {
            frames.extend_from_slice(&s.frames[..OBSERVED * FRAME_BYTES]);
            states.extend_from_slice(&s.states[(OBSERVED - HISTORY) * per..OBSERVED * per]);
        }
        let targets = (0..WINDOW)
            .map(|t| {
                let data: Vec<f64> = samples
                    .iter()
                    .flat_map(|s| s.states[t * per..(t + 1) * per].iter().map(|&v| v as f64))
                    .collect();
                Tensor::new(&[batch * n_objects, STATE_DIM], data).expect("target shape")
            })
            .collect();
        Self {
            batch,
            frames,
            states,
            targets,
        }
    }

    pub fn observation(&self, variant: ModelVariant) -> Observation<'_> {
        if variant.is_visual() {
            Observation::Frames {
                data: &self.frames,
                batch: self.batch,
            }
        } else {
            Observation::States {
                data: &self.states,
                batch: self.batch,
            }
        }
    }
}

fn target<T: Scalar>(tape: &Tape<'_, T>, t: &Tensor<f64>) -> Var {
    tape.constant(t.cast())
}

/// Builds the training loss on `tape` and returns it with its breakdown.
///
/// Visual models are supervised on the decoded code of every observed
/// three-frame window (auxiliary loss, targets at the window's last frame)
/// and on `HORIZON` rolled-out steps weighted by [`horizon_weights`]. The
/// ground-truth-dynamics variant instead predicts the last observed state.
pub fn compute_loss<T: Scalar>(
    tape: &Tape<'_, T>,
    model: &Model<T>,
    batch: &BatchTensors,
    step: u64,
    config: &TrainConfig,
) -> Result<(Var, LossBreakdown), TrainError> {
    let variant = model.variant();
    let codes = model.observe(tape, &batch.observation(variant))?;
    let mut aux_terms = Vec::new();
    if variant.is_visual() {
        for (w, &code) in codes.iter().enumerate() {
            let decoded = model.decode(tape, code)?;
            aux_terms.push(tape.mse(decoded, target(tape, &batch.targets[w + 2]))?);
        }
    }

    let (pred_terms, weights) = if variant == ModelVariant::VisionGroundTruthDynamics {
        let current = model.decode(tape, model.estimate_current(tape, &codes)?)?;
        (
            vec![tape.mse(current, target(tape, &batch.targets[OBSERVED - 1]))?],
            vec![1.0],
        )
    } else {
        let predicted = model.rollout_codes(tape, &codes, HORIZON)?;
        let terms = predicted
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                Ok(tape.mse(
                    model.decode(tape, c)?,
                    target(tape, &batch.targets[OBSERVED + k]),
                )?)
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        (terms, horizon_weights(step, HORIZON, config.discount_beta))
    };

    let weighted: Vec<Var> = pred_terms
        .iter()
        .zip(&weights)
        .map(|(&v, &w)| tape.scale(v, w))
        .collect();
    let prediction = sum_vars(tape, &weighted)?;
    let mut total = prediction;
    let mut auxiliary_value = 0.0;
    if !aux_terms.is_empty() {
        let aux = tape.scale(sum_vars(tape, &aux_terms)?, 1.0 / aux_terms.len() as f64);
        auxiliary_value = tape.value(aux).item().as_f64();
        total = tape.add(total, tape.scale(aux, config.aux_weight))?;
    }
    let breakdown = LossBreakdown {
        per_step: pred_terms
            .iter()
            .map(|&v| tape.value(v).item().as_f64())
            .collect(),
        prediction: tape.value(prediction).item().as_f64(),
        auxiliary: auxiliary_value,
        total: tape.value(total).item().as_f64(),
    };
    if !breakdown.total.is_finite() {
        return Err(TrainError::NonFinite { step });
    }
    Ok((total, breakdown))
}

fn sum_vars<T: Scalar>(tape: &Tape<'_, T>, vars: &[Var]) -> Result<Var, NumericError> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub total: f64,
    pub prediction: f64,
    pub auxiliary: f64,
    pub lr: f64,
    pub d: f64,
}

pub const LOG_HEADER: &str = "step,total,prediction,auxiliary,lr,d";

impl LossRecord {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.total, self.prediction, self.auxiliary, self.lr, self.d
        )
    }
}

/// Where checkpoints and the loss log go.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub checkpoint_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step-{step:07}.ckpt"))
}

/// Runs `config.steps` Adam updates on batches drawn from `dataset`.
///
/// Batches come from a ChaCha stream seeded by `config.seed`, so the sample
/// order and the loss log are identical across runs with the same seed,
/// whether or not prefetching is enabled.
pub fn train(
    model: &mut Model<f32>,
    dataset: &Dataset,
    config: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<Vec<LossRecord>, TrainError> {
    config.validate()?;
    if dataset.n_objects() != model.n_objects() {
        return Err(TrainError::Config(format!(
            "dataset has {} objects, model expects {}",
            dataset.n_objects(),
            model.n_objects()
        )));
    }
    if dataset.is_empty() {
        return Err(TrainError::Config("empty dataset".into()));
    }
    let mut log = match &outputs.log_path {
        Some(p) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(p)?);
            writeln!(f, "{LOG_HEADER}")?;
            Some(f)
        }
        None => None,
    };
    if let Some(dir) = &outputs.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        model.to_checkpoint().save(checkpoint_path(dir, 0))?;
    }

    let mut adam = AdamState::new(config.adam, &model.params);
    let mut records = Vec::with_capacity(config.steps as usize);
    let n = model.n_objects();
    std::thread::scope(|scope| -> Result<(), TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (tx, rx) = sync_channel::<BatchTensors>(config.prefetch.max(1));
        if config.prefetch > 0 {
            let mut rng = rng.clone();
            let steps = config.steps;
            scope.spawn(move || {
                for _ in 0..steps {
                    let b =
                        BatchTensors::new(&sample_batch(dataset, config.batch_size, &mut rng), n);
                    if tx.send(b).is_err() {
                        break;
                    }
                }
            });
        }
        for step in 0..config.steps {
            let batch = if config.prefetch > 0 {
                rx.recv()
                    .map_err(|_| TrainError::Config("batch producer stopped".into()))?
            } else {
                BatchTensors::new(&sample_batch(dataset, config.batch_size, &mut rng), n)
            };
            let grads = {
                let tape = Tape::with_params(&model.params);
                let (loss, breakdown) = compute_loss(&tape, model, &batch, step, config)?;
                let record = LossRecord {
                    step,
                    total: breakdown.total,
                    prediction: breakdown.prediction,
                    auxiliary: breakdown.auxiliary,
                    lr: config.adam.learning_rate(step),
                    d: discount(step, config.discount_beta),
                };
                if let Some(f) = log.as_mut() {
                    writeln!(f, "{}", record.csv())?;
                }
                records.push(record);
                tape.backward(loss)?.into_params()
            };
            adam.update(&mut model.params, &grads)?;
            let done = step + 1;
            if let Some(dir) = &outputs.checkpoint_dir {
                if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0)
                    || done == config.steps
                {
                    model
                        .to_checkpoint()
                        .with_meta("step", done)
                        .save(checkpoint_path(dir, done))?;
                }
            }
        }
        Ok(())
    })?;
    if let Some(f) = log.as_mut() {
        f.flush()?;
    }
    Ok(records)
}

/// Trailing moving average over `window` values.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, &v) in values.iter().enumerate() {
        acc += v;
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}
