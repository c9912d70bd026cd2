//! Rollout metrics, evaluation reports and rollout rendering.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetError, HORIZON, OBSERVED};
use crate::models::{Model, ModelError, ModelVariant, Observation, HISTORY, STATE_DIM};
use crate::numeric::Tape;
use crate::physics::{run, PhysicsError};
use crate::render::{max_composite, render_frame, Frame, Palette, FRAME_BYTES, FRAME_SIZE};

/// Rollout length of the standard evaluation.
pub const EVAL_HORIZON: usize = 50;
/// Uniform bins over `[0, 1]` framewidths of distance traveled.
pub const DISTANCE_BINS: usize = 20;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
/// Sequences per model call; bounds the encoder's working memory.
const CHUNK: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("png: {0}")]
    Png(String),
    #[error("{0}")]
    Input(String),
    #[error("degenerate: {0}")]
    Degenerate(String),
}

/// Predicted or true kinematics `[step][object]`, step 1 being the frame
/// after the last observed one.
pub type Rollout = Vec<Vec<[f64; 4]>>;

/// `L_bound / L_model`; 1 means as good as the ground-truth-dynamics bound.
pub fn inverse_normalized_loss(bound: f64, model: f64) -> Result<f64, EvalError> {
    if model == 0.0 {
        return Err(EvalError::Degenerate("model loss is zero".into()));
    }
    if !(bound > 0.0 && model > 0.0) {
        return Err(EvalError::Input(format!(
            "losses must be positive, got {bound} and {model}"
        )));
    }
    Ok(bound / model)
}

fn check_shapes(pred: &Rollout, truth: &Rollout) -> Result<(), EvalError> {
    if pred.len() != truth.len() || pred.iter().zip(truth).any(|(p, t)| p.len() != t.len()) {
        return Err(EvalError::Input(format!(
            "rollout of {} steps against {} true steps",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn position_error(p: &[f64; 4], t: &[f64; 4]) -> f64 {
    (p[0] - t[0]).hypot(p[1] - t[1])
}

/// Mean over objects of the position error at every step.
pub fn euclidean_prediction_error(pred: &Rollout, truth: &Rollout) -> Result<Vec<f64>, EvalError> {
    check_shapes(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            p.iter()
                .zip(t)
                .map(|(a, b)| position_error(a, b))
                .sum::<f64>()
                / p.len().max(1) as f64
        })
        .collect())
}

/// Per-object position errors tagged with the true path length covered since
/// `origin` (the last observed state).
pub fn errors_by_distance(
    pred: &Rollout,
    truth: &Rollout,
    origin: &[[f64; 4]],
) -> Result<Vec<(f64, f64)>, EvalError> {
    check_shapes(pred, truth)?;
    let mut traveled = vec![0.0; origin.len()];
    let mut last: Vec<[f64; 4]> = origin.to_vec();
    let mut out = Vec::new();
    for (p, t) in pred.iter().zip(truth) {
        if t.len() != origin.len() {
            return Err(EvalError::Input("object count differs from origin".into()));
        }
        for (i, (a, b)) in p.iter().zip(t).enumerate() {
            traveled[i] += position_error(b, &last[i]);
            out.push((traveled[i], position_error(a, b)));
        }
        last.clone_from(t);
    }
    Ok(out)
}

/// Bin index over `bins` uniform bins of `[0, 1]`; `None` past the range.
pub fn distance_bin(distance: f64, bins: usize) -> Option<usize> {
    if !(0.0..=1.0).contains(&distance) {
        return None;
    }
    Some(((distance * bins as f64) as usize).min(bins - 1))
}

/// Mean with a percentile-bootstrap 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Percentile bootstrap of the mean. Samples are sorted first so the result
/// does not depend on their order.
pub fn bootstrap_ci(samples: &[f64], resamples: usize, seed: u64) -> Option<Interval> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| sorted[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (means.len() - 1) as f64).round()) as usize];
    Some(Interval {
        mean,
        lower: at(0.025),
        upper: at(0.975),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub error: Option<Interval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub system: String,
    pub sequences: usize,
    pub horizon: usize,
    /// Mean squared state error over the first `HORIZON` predicted steps.
    pub prediction_loss: f64,
    pub inverse_normalized_loss: Option<f64>,
    pub error_by_step: Vec<Interval>,
    pub error_by_distance: Vec<DistanceBin>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::Input(e.to_string()))
    }

    /// `step,mean,lower,upper` rows.
    pub fn step_csv(&self) -> String {
        let mut s = String::from("step,mean,lower,upper\n");
        for (k, i) in self.error_by_step.iter().enumerate() {
            s.push_str(&format!("{},{},{},{}\n", k + 1, i.mean, i.lower, i.upper));
        }
        s
    }

    /// `lower,upper,count,mean,ci_lower,ci_upper` rows; empty bins leave the
    /// statistics blank.
    pub fn distance_csv(&self) -> String {
        let mut s = String::from("lower,upper,count,mean,ci_lower,ci_upper\n");
        for b in &self.error_by_distance {
            match b.error {
                Some(i) => s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    b.lower, b.upper, b.count, i.mean, i.lower, i.upper
                )),
                None => s.push_str(&format!("{},{},0,,,\n", b.lower, b.upper)),
            }
        }
        s
    }
}

/// Anything that turns a test sequence's observed prefix into a rollout.
pub trait Predictor: Sync {
    fn label(&self) -> String;

    /// One rollout of `horizon` steps per simulation index, starting after
    /// frame `OBSERVED - 1`.
    fn predict(
        &self,
        dataset: &Dataset,
        sims: &[usize],
        horizon: usize,
    ) -> Result<Vec<Rollout>, EvalError>;
}

/// Re-simulates each sequence from its stored spec; the error floor.
pub struct GroundTruth;

impl Predictor for GroundTruth {
    fn label(&self) -> String {
        "ground-truth".into()
    }

    fn predict(
        &self,
        dataset: &Dataset,
        sims: &[usize],
        horizon: usize,
    ) -> Result<Vec<Rollout>, EvalError> {
        sims.iter()
            .map(|&sim| {
                let mut spec = dataset.sim_spec(sim)?;
                spec.frames = OBSERVED + horizon;
                let traj = crate::physics::simulate(&spec)?;
                Ok(traj.frames[OBSERVED..]
                    .iter()
                    .map(|s| s.kinematics())
                    .collect())
            })
            .collect()
    }
}

fn to_rows(data: &[f32], n: usize) -> Vec<[f64; 4]> {
    (0..n)
        .map(|i| std::array::from_fn(|d| data[i * STATE_DIM + d] as f64))
        .collect()
}

impl Predictor for Model<f32> {
    fn label(&self) -> String {
        self.variant().name().into()
    }

    fn predict(
        &self,
        dataset: &Dataset,
        sims: &[usize],
        horizon: usize,
    ) -> Result<Vec<Rollout>, EvalError> {
        let n = self.n_objects();
        if dataset.n_objects() != n {
            return Err(EvalError::Input(format!(
                "dataset has {} objects, model {n}",
                dataset.n_objects()
            )));
        }
        if horizon == 0 {
            return Ok(vec![Vec::new(); sims.len()]);
        }
        let per = n * STATE_DIM;
        let mut out = Vec::with_capacity(sims.len());
        for chunk in sims.chunks(CHUNK) {
            let windows: Vec<_> = chunk
                .iter()
                .map(|&s| dataset.window(s, 0, OBSERVED))
                .collect();
            let frames: Vec<u8> = windows
                .iter()
                .flat_map(|w| w.frames.iter().copied())
                .collect();
            let states: Vec<f32> = windows
                .iter()
                .flat_map(|w| w.states[(OBSERVED - HISTORY) * per..].iter().copied())
                .collect();
            let obs = if self.variant().is_visual() {
                Observation::Frames {
                    data: &frames,
                    batch: chunk.len(),
                }
            } else {
                Observation::States {
                    data: &states,
                    batch: chunk.len(),
                }
            };
            if self.variant() == ModelVariant::VisionGroundTruthDynamics {
                let current = {
                    let tape = Tape::with_params(&self.params);
                    let codes = self.observe(&tape, &obs)?;
                    let decoded = self.decode(&tape, self.estimate_current(&tape, &codes)?)?;
                    let value = tape.value(decoded).data().to_vec();
                    value
                };
                for (b, &sim) in chunk.iter().enumerate() {
                    let kin = to_rows(&current[b * per..(b + 1) * per], n);
                    let start = dataset.initial_state(sim)?.with_kinematics(&kin);
                    let traj = run(&start, &dataset.sim_spec(sim)?, horizon)?;
                    out.push(traj.frames[1..].iter().map(|s| s.kinematics()).collect());
                }
            } else {
                let steps = self.rollout(&obs, horizon)?;
                for b in 0..chunk.len() {
                    out.push(
                        steps
                            .iter()
                            .map(|t| to_rows(&t.data()[b * per..(b + 1) * per], n))
                            .collect(),
                    );
                }
            }
        }
        Ok(out)
    }
}

/// True kinematics of `sims` for `horizon` steps after the observed prefix.
pub fn true_rollouts(
    dataset: &Dataset,
    sims: &[usize],
    horizon: usize,
) -> Result<Vec<Rollout>, EvalError> {
    if OBSERVED + horizon > dataset.frames_per_sim() {
        return Err(EvalError::Input(format!(
            "horizon {horizon} needs {} frames, dataset has {}",
            OBSERVED + horizon,
            dataset.frames_per_sim()
        )));
    }
    let n = dataset.n_objects();
    Ok(sims
        .iter()
        .map(|&sim| {
            (OBSERVED..OBSERVED + horizon)
                .map(|t| to_rows(dataset.state(sim, t), n))
                .collect()
        })
        .collect())
}

/// Runs `predictor` over `sims`, split across worker threads; the output
/// keeps the order of `sims`.
pub fn predict_parallel<P: Predictor + ?Sized>(
    predictor: &P,
    dataset: &Dataset,
    sims: &[usize],
    horizon: usize,
) -> Result<Vec<Rollout>, EvalError> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(sims.len().max(1));
    if workers <= 1 {
        return predictor.predict(dataset, sims, horizon);
    }
    let per = sims.len().div_ceil(workers);
    let parts: Vec<Result<Vec<Rollout>, EvalError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sims
            .chunks(per)
            .map(|part| scope.spawn(move || predictor.predict(dataset, part, horizon)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(sims.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Mean squared error over every state dimension of the first `steps` steps.
pub fn state_loss(pred: &[Rollout], truth: &[Rollout], steps: usize) -> Result<f64, EvalError> {
    let (mut sum, mut count) = (0.0, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        check_shapes(p, t)?;
        for (ps, ts) in p.iter().zip(t).take(steps) {
            for (a, b) in ps.iter().zip(ts) {
                sum += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
                count += STATE_DIM;
            }
        }
    }
    if count == 0 {
        return Err(EvalError::Input("no predicted steps".into()));
    }
    Ok(sum / count as f64)
}

/// Aggregates rollouts against the truth. `origins` are the last observed
/// states; `bound` is the ground-truth-dynamics loss for the inverse
/// normalized loss.
pub fn build_report(
    label: &str,
    system: &str,
    pred: &[Rollout],
    truth: &[Rollout],
    origins: &[Vec<[f64; 4]>],
    bound: Option<f64>,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if pred.len() != truth.len() || pred.len() != origins.len() || pred.is_empty() {
        return Err(EvalError::Input(format!(
            "{} rollouts for {} sequences",
            pred.len(),
            truth.len()
        )));
    }
    let horizon = truth[0].len();
    let per_seq: Vec<Vec<f64>> = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| euclidean_prediction_error(p, t))
        .collect::<Result<_, _>>()?;
    let error_by_step = (0..horizon)
        .map(|k| {
            let samples: Vec<f64> = per_seq.iter().map(|e| e[k]).collect();
            bootstrap_ci(&samples, BOOTSTRAP_RESAMPLES, seed ^ k as u64).expect("non-empty")
        })
        .collect();
    let mut binned = vec![Vec::new(); DISTANCE_BINS];
    for ((p, t), o) in pred.iter().zip(truth).zip(origins) {
        for (d, e) in errors_by_distance(p, t, o)? {
            if let Some(b) = distance_bin(d, DISTANCE_BINS) {
                binned[b].push(e);
            }
        }
    }
    let width = 1.0 / DISTANCE_BINS as f64;
    let error_by_distance = binned
        .iter()
        .enumerate()
        .map(|(b, samples)| DistanceBin {
            lower: b as f64 * width,
            upper: (b + 1) as f64 * width,
            count: samples.len(),
            error: bootstrap_ci(samples, BOOTSTRAP_RESAMPLES, seed ^ (1 << 32) ^ b as u64),
        })
        .collect();
    let prediction_loss = state_loss(pred, truth, HORIZON)?;
    let inverse_normalized_loss = bound
        .map(|b| inverse_normalized_loss(b, prediction_loss))
        .transpose()?;
    Ok(EvalReport {
        model: label.into(),
        system: system.into(),
        sequences: pred.len(),
        horizon,
        prediction_loss,
        inverse_normalized_loss,
        error_by_step,
        error_by_distance,
    })
}

/// Rolls `predictor` out from the start of every simulation in `dataset` and
/// reports both metrics.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    dataset: &Dataset,
    horizon: usize,
    bound: Option<f64>,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if horizon == 0 {
        return Err(EvalError::Input(
            "evaluation horizon must be positive".into(),
        ));
    }
    let sims: Vec<usize> = (0..dataset.len()).collect();
    let truth = true_rollouts(dataset, &sims, horizon)?;
    let pred = predict_parallel(predictor, dataset, &sims, horizon)?;
    let n = dataset.n_objects();
    let origins: Vec<_> = sims
        .iter()
        .map(|&s| to_rows(dataset.state(s, OBSERVED - 1), n))
        .collect();
    build_report(
        &predictor.label(),
        dataset.manifest.system.name(),
        &pred,
        &truth,
        &origins,
        bound,
        seed,
    )
}

/// Mean position error of the decoded state codes of the observed windows
/// against the state at each window's last frame.
pub fn auxiliary_position_error(
    model: &Model<f32>,
    dataset: &Dataset,
    sims: &[usize],
) -> Result<f64, EvalError> {
    if !model.variant().is_visual() {
        return Err(EvalError::Input(format!(
            "{} has no visual encoder",
            model.variant()
        )));
    }
    let n = model.n_objects();
    let per = n * STATE_DIM;
    let (mut sum, mut count) = (0.0, 0usize);
    for chunk in sims.chunks(CHUNK) {
        let windows: Vec<_> = chunk
            .iter()
            .map(|&s| dataset.window(s, 0, OBSERVED))
            .collect();
        let frames: Vec<u8> = windows
            .iter()
            .flat_map(|w| w.frames.iter().copied())
            .collect();
        let tape = Tape::with_params(&model.params);
        let codes = model.encode_frames(&tape, &frames, chunk.len(), OBSERVED)?;
        for (w, &code) in codes.iter().enumerate() {
            let decoded = model.decode(&tape, code)?;
            let value = tape.value(decoded);
            for (b, win) in windows.iter().enumerate() {
                let truth = &win.states[(w + 2) * per..(w + 3) * per];
                for i in 0..n {
                    let p = &value.data()[(b * n + i) * STATE_DIM..];
                    let t = &truth[i * STATE_DIM..];
                    sum += ((p[0] - t[0]) as f64).hypot((p[1] - t[1]) as f64);
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(EvalError::Input("no sequences".into()));
    }
    Ok(sum / count as f64)
}

/// Writes an RGB image as a PNG file.
pub fn write_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<(), EvalError> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc
        .write_header()
        .map_err(|e| EvalError::Png(e.to_string()))?;
    w.write_image_data(rgb)
        .map_err(|e| EvalError::Png(e.to_string()))?;
    w.finish().map_err(|e| EvalError::Png(e.to_string()))
}

/// Truth on the left, prediction on the right.
pub fn side_by_side(left: &Frame, right: &Frame) -> Vec<u8> {
    let row = FRAME_SIZE * 3;
    let mut out = Vec::with_capacity(2 * FRAME_BYTES);
    for r in 0..FRAME_SIZE {
        out.extend_from_slice(&left.bytes()[r * row..(r + 1) * row]);
        out.extend_from_slice(&right.bytes()[r * row..(r + 1) * row]);
    }
    out
}

/// Renders the observed frames followed by `predicted` next to the true
/// sequence as numbered `frame_NNN.png` files (64x32). With `trail`, also
/// writes `trail.png`: the per-pixel maximum over all frames drawn on a black
/// background.
pub fn render_rollout(
    dataset: &Dataset,
    sim: usize,
    predicted: &Rollout,
    out_dir: &Path,
    trail: bool,
) -> Result<Vec<PathBuf>, EvalError> {
    let horizon = predicted.len();
    let truth = true_rollouts(dataset, &[sim], horizon)?.remove(0);
    std::fs::create_dir_all(out_dir)?;
    let base = dataset.initial_state(sim)?;
    let supersample = dataset.manifest.spec.render.supersample;
    let background = dataset.background(sim)?;
    let black = Frame::solid([0, 0, 0]);
    let palette = Palette::default();
    let n = dataset.n_objects();
    let observed: Vec<Vec<[f64; 4]>> = (0..OBSERVED)
        .map(|t| to_rows(dataset.state(sim, t), n))
        .collect();
    let draw = |kin: &[[f64; 4]], bg: &Frame| {
        render_frame(&base.with_kinematics(kin), bg, &palette, supersample)
    };

    let mut paths = Vec::new();
    let (mut trail_true, mut trail_pred) = (Vec::new(), Vec::new());
    let sequence = observed
        .iter()
        .map(|k| (k, k))
        .chain(truth.iter().zip(predicted));
    for (i, (t, p)) in sequence.enumerate() {
        let path = out_dir.join(format!("frame_{i:03}.png"));
        write_png(
            &path,
            2 * FRAME_SIZE,
            FRAME_SIZE,
            &side_by_side(&draw(t, &background), &draw(p, &background)),
        )?;
        paths.push(path);
        if trail {
            trail_true.push(draw(t, &black));
            trail_pred.push(draw(p, &black));
        }
    }
    if trail {
        let (l, r) = (max_composite(&trail_true), max_composite(&trail_pred));
        if let (Some(l), Some(r)) = (l, r) {
            let path = out_dir.join("trail.png");
            write_png(&path, 2 * FRAME_SIZE, FRAME_SIZE, &side_by_side(&l, &r))?;
            paths.push(path);
        }
    }
    Ok(paths)
}

#[cfg(test)]
mod tests;
