//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs without the libtest harness so every line reaches the terminal.
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 3 9`.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vinlab::dataset::{generate, read_dataset, write_dataset, Dataset, OBSERVED};
use vinlab::eval::{
    auxiliary_position_error, euclidean_prediction_error, evaluate, inverse_normalized_loss,
    GroundTruth, EVAL_HORIZON,
};
use vinlab::models::{Model, ModelVariant, Observation, CODE, HISTORY, PAIR_CODE};
use vinlab::numeric::gradcheck::{check_all, FD_STEP};
use vinlab::numeric::{AdamConfig, Tape, Tensor};
use vinlab::physics::{
    audit_billiards, integrator_deviation, momentum_drift, ForceLaw, ObjectState, SimSpec,
    SystemState,
};
use vinlab::render::{render_frame, CifarSplit, Palette, FRAME_BYTES};
use vinlab::train::{horizon_weights, smoothed, train, Profile, TrainConfig, TrainOutputs};

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    check(
        elapsed < limit,
        format!(
            "{detail}; {:.1}s of {}s",
            elapsed.as_secs_f64(),
            limit.as_secs()
        ),
    )
}

// ---- 1

fn gradients() -> Outcome {
    let start = Instant::now();
    let checks = check_all(20, 2024).map_err(|e| e.to_string())?;
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let failing: Vec<_> = checks
        .iter()
        .filter(|c| !c.passed(1e-4))
        .map(|c| c.op)
        .collect();
    if !failing.is_empty() {
        return Err(format!("ops over 1e-4: {failing:?}"));
    }
    let min_instances = checks.iter().map(|c| c.instances).min().unwrap_or(0);
    if min_instances < 20 || FD_STEP != 1e-5 {
        return Err(format!("{min_instances} instances at step {FD_STEP}"));
    }
    within(
        start.elapsed(),
        Duration::from_secs(60),
        format!("{} ops x 20 instances, worst {worst:.1e}", checks.len()),
    )
}

// ---- 2

fn conservation() -> Outcome {
    let start = Instant::now();
    let a = audit_billiards(&SimSpec::builtin(ForceLaw::Billiards), 1000, 2_000_000)
        .map_err(|e| e.to_string())?;
    if a.pair_collisions < 1000 || a.energy_drift >= 1e-6 || a.pair_momentum_error >= 1e-6 {
        return Err(format!("billiards {a:?}"));
    }
    let mut details = vec![format!(
        "billiards {} collisions energy {:.1e} momentum {:.1e}",
        a.pair_collisions, a.energy_drift, a.pair_momentum_error
    )];
    for law in [ForceLaw::Spring, ForceLaw::Gravity, ForceLaw::Drift] {
        let d = momentum_drift(&SimSpec::builtin(law), 300).map_err(|e| e.to_string())?;
        if d >= 1e-9 {
            return Err(format!("{} momentum drift {d:.1e} per frame", law.name()));
        }
        details.push(format!("{} {d:.1e}/frame", law.name()));
    }
    within(start.elapsed(), Duration::from_secs(60), details.join(", "))
}

// ---- 3

fn integrator() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for law in [ForceLaw::Spring, ForceLaw::Gravity] {
        let dev =
            integrator_deviation(&SimSpec::builtin(law), 20, 300).map_err(|e| e.to_string())?;
        ok &= dev < 1.0 / 32.0;
        details.push(format!("{} {dev:.2e}", law.name()));
    }
    let detail = format!(
        "worst of 20 seeds over 300 frames vs 3.1e-2: {}",
        details.join(", ")
    );
    if !ok {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(60), detail)
}

// ---- 4

fn random_codes(rng: &mut ChaCha8Rng, rows: usize) -> Tensor<f64> {
    Tensor::new(
        &[rows, CODE],
        (0..rows * CODE).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn permute(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let w = t.last_dim();
    let data = perm
        .iter()
        .flat_map(|&i| t.data()[i * w..(i + 1) * w].iter().copied())
        .collect();
    Tensor::new(t.shape(), data).unwrap()
}

fn max_gap(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for n in [1usize, 3, 6] {
        let model: Model<f64> = Model::new(ModelVariant::Vin, n, 40 + n as u64);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(1);
        if n > 2 {
            perm.swap(0, 1);
        }
        let history: Vec<Tensor<f64>> = (0..HISTORY).map(|_| random_codes(&mut rng, n)).collect();
        let permuted: Vec<_> = history.iter().map(|h| permute(h, &perm)).collect();
        let run = |codes: &[Tensor<f64>]| {
            let tape = Tape::with_params(&model.params);
            let vars: Vec<_> = codes.iter().map(|c| tape.constant(c.clone())).collect();
            let core = model.interaction_core(&tape, vars[HISTORY - 1], 1).unwrap();
            let pred = model.predict(&tape, &vars).unwrap();
            let dec = model.decode(&tape, vars[0]).unwrap();
            [core, pred, dec].map(|v| tape.value(v).clone())
        };
        let base = run(&history);
        let moved = run(&permuted);
        for (b, m) in base.iter().zip(&moved) {
            worst = worst.max(max_gap(&permute(b, &perm), m));
        }
    }
    if worst >= 1e-6 {
        return Err(format!("permutation gap {worst:.1e}"));
    }

    // cross-slot gradients of one predicted slot
    let n = 4;
    let cross = |variant| {
        let model: Model<f64> = Model::new(variant, n, 9);
        let tape = Tape::with_params(&model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let vars: Vec<_> = (0..HISTORY)
            .map(|_| tape.variable(random_codes(&mut rng, n)))
            .collect();
        let pred = model.predict(&tape, &vars).unwrap();
        let slot = tape.sum(tape.gather_rows(pred, &[0]).unwrap());
        let grads = tape.backward(slot).unwrap();
        let mut total = 0.0f64;
        for &v in &vars {
            if let Some(g) = grads.wrt(v) {
                total += g.data()[CODE..].iter().map(|x| x.abs()).sum::<f64>();
            }
        }
        total
    };
    let isolated = cross(ModelVariant::VinNoRelations);
    let coupled = cross(ModelVariant::Vin);
    check(
        isolated == 0.0 && coupled > 0.0,
        format!("N in {{1,3,6}} gap {worst:.1e}; cross-slot gradient {isolated} without relations, {coupled:.1e} with"),
    )
}

// ---- 5

fn dense(i: usize, o: usize) -> usize {
    i * o + o
}

fn mlp(input: usize, sizes: &[usize]) -> usize {
    let mut w = input;
    sizes
        .iter()
        .map(|&s| {
            let c = dense(w, s);
            w = s;
            c
        })
        .sum()
}

fn conv(k: usize, i: usize, o: usize) -> usize {
    k * k * i * o + o
}

fn expected_params(variant: ModelVariant, n: usize) -> usize {
    let pair = conv(10, 6, 4)
        + conv(10, 4, 4)
        + conv(3, 6, 16)
        + conv(3, 16, 16)
        + conv(3, 20, 16)
        + conv(3, 16, 16)
        + conv(3, 18, 16)
        + conv(3, 16, 16)
        + conv(3, 16, 16)
        + conv(3, 16, 32)
        + conv(3, 32, 32);
    let encoder = pair + dense(32, n * 64) + mlp(128, &[64, 64]);
    let core = |relations: bool| {
        mlp(64, &[64, 64])
            + if relations {
                mlp(128, &[64, 64, 64])
            } else {
                0
            }
            + mlp(64, &[64, 64, 64])
            + mlp(128, &[32, 64])
    };
    let aggregator = mlp(192, &[32, 64]);
    let lstm = mlp(n * 64, &[64, 64])
        + 64 * 512
        + 512
        + 128 * 512
        + mlp(128, &[32, n * 32])
        + mlp(32, &[32, 64]);
    let decoder = dense(64, 4);
    let embed = dense(4, 64);
    decoder
        + match variant {
            ModelVariant::Vin => encoder + 3 * core(true) + aggregator,
            ModelVariant::VinNoRelations => encoder + 3 * core(false) + aggregator,
            ModelVariant::VisualRnn => {
                encoder + 3 * mlp(n * 64, &[64, 64, 64, 64, n * 64]) + aggregator
            }
            ModelVariant::VisualLstm => encoder + lstm,
            ModelVariant::VisionGroundTruthDynamics => encoder + core(true),
            ModelVariant::InFromState => embed + 3 * core(true) + aggregator,
            ModelVariant::LstmFromState => embed + lstm,
        }
}

fn architecture() -> Outcome {
    let mut counts = Vec::new();
    for n in [3usize, 6] {
        for variant in ModelVariant::ALL {
            let model: Model<f32> = Model::new(variant, n, 0);
            let want = expected_params(variant, n);
            if model.param_count() != want {
                return Err(format!(
                    "{variant} N={n}: {} parameters, closed form {want}",
                    model.param_count()
                ));
            }
            if n == 3 {
                counts.push(format!("{variant} {want}"));
            }
        }
    }
    let n = 3;
    let model: Model<f64> = Model::new(ModelVariant::Vin, n, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frames: Vec<u8> = (0..2 * 6 * FRAME_BYTES).map(|_| rng.gen()).collect();
    let tape = Tape::with_params(&model.params);
    let three = model
        .encode_frames(&tape, &frames[..3 * FRAME_BYTES], 1, 3)
        .map_err(|e| e.to_string())?;
    let six = model
        .observe(
            &tape,
            &Observation::Frames {
                data: &frames,
                batch: 2,
            },
        )
        .map_err(|e| e.to_string())?;
    if three.len() != 1 || tape.shape(three[0]) != [n, CODE] {
        return Err(format!(
            "3 frames gave {} codes of {:?}",
            three.len(),
            tape.shape(three[0])
        ));
    }
    if six.len() != 4 || six.iter().any(|&c| tape.shape(c) != [2 * n, CODE]) {
        return Err(format!("6 frames gave {} codes", six.len()));
    }
    let ok4 = model.predict(&tape, &six).is_ok();
    let bad3 = model.predict(&tape, &six[..3]).is_err();
    let bad5 = model
        .predict(&tape, &[six.clone(), vec![six[0]]].concat())
        .is_err();
    check(
        ok4 && bad3 && bad5 && PAIR_CODE == 32,
        format!("counts match closed form ({}); 3 frames -> {n}x64, 6 frames -> 4 codes, predictor takes 4", counts.join(", ")),
    )
}

// ---- 6

fn loss_schedule() -> Outcome {
    let beta = TrainConfig::default().discount_beta;
    let start = horizon_weights(0, 8, beta);
    let late = horizon_weights((20.0 * beta) as u64, 8, beta);
    let late_gap = late.iter().map(|w| (w - 0.125).abs()).fold(0.0, f64::max);
    let lr = AdamConfig::default().learning_rate(150_000);
    let exact = 5e-4 * (-1.0f64).exp();
    check(
        start == [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0] && late_gap < 1e-6 && lr == exact,
        format!("w(0) = {start:?}; max |w(20 beta) - 1/8| = {late_gap:.1e}; lr(1.5e5) = {lr:e}"),
    )
}

// ---- 7 and 8

fn desk_data(profile: &Profile) -> Result<(Dataset, Dataset), String> {
    let spec = SimSpec::builtin(ForceLaw::Drift);
    let train = generate(&spec, CifarSplit::Train, profile.train_simulations, 0)
        .map_err(|e| e.to_string())?;
    let test = generate(&spec, CifarSplit::Test, profile.test_simulations, 0)
        .map_err(|e| e.to_string())?;
    Ok((train, test))
}

fn desk_state_learning(train_set: &Dataset, test_set: &Dataset, profile: &Profile) -> Outcome {
    let start = Instant::now();
    let cfg = &profile.train;
    if cfg.steps < 20_000 || train_set.len() < 1000 {
        return Err(format!(
            "desk profile too small: {} steps, {} simulations",
            cfg.steps,
            train_set.len()
        ));
    }
    let untrained: Model<f32> = Model::new(ModelVariant::InFromState, 3, cfg.seed);
    let mut model = untrained.clone();
    let log =
        train(&mut model, train_set, cfg, &TrainOutputs::default()).map_err(|e| e.to_string())?;
    let s = smoothed(&log.iter().map(|r| r.total).collect::<Vec<_>>(), 100);
    // first full window against the last
    let (first, last) = (s[99], s[s.len() - 1]);
    let before =
        evaluate(&untrained, test_set, EVAL_HORIZON, None, 0).map_err(|e| e.to_string())?;
    let after = evaluate(&model, test_set, EVAL_HORIZON, None, 0).map_err(|e| e.to_string())?;
    let better = before
        .error_by_step
        .iter()
        .zip(&after.error_by_step)
        .filter(|(b, a)| a.mean < b.mean)
        .count();
    let detail = format!(
        "{} steps on {} sims: smoothed loss {first:.2e} -> {last:.2e} ({:.0}x); 50-step error better at {better}/{} steps \
         (step 50: {:.4} vs {:.4})",
        cfg.steps,
        train_set.len(),
        first / last,
        EVAL_HORIZON,
        after.error_by_step[EVAL_HORIZON - 1].mean,
        before.error_by_step[EVAL_HORIZON - 1].mean,
    );
    if last >= 0.1 * first || better < EVAL_HORIZON {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(30 * 60), detail)
}

/// Steps for the visual run, about as many as fit in the two-hour budget at
/// ~0.16 s per step on one core; the desk profile is reused otherwise.
const VISUAL_STEPS: u64 = 36_000;

fn desk_visual_learning(train_set: &Dataset, test_set: &Dataset, profile: &Profile) -> Outcome {
    let start = Instant::now();
    let cfg = TrainConfig {
        steps: VISUAL_STEPS,
        ..profile.train.clone()
    };
    let mut model: Model<f32> = Model::new(ModelVariant::Vin, 3, cfg.seed);
    train(&mut model, train_set, &cfg, &TrainOutputs::default()).map_err(|e| e.to_string())?;
    let sims: Vec<usize> = (0..test_set.len()).collect();
    let err = auxiliary_position_error(&model, test_set, &sims).map_err(|e| e.to_string())?;
    let detail = format!(
        "VIN {} steps on {} sims: decoded position error {:.2}% of framewidth on {} held-out sequences (limit 5%)",
        cfg.steps,
        train_set.len(),
        100.0 * err,
        sims.len()
    );
    if err >= 0.05 {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(2 * 3600), detail)
}

// ---- 9

fn rendering() -> Outcome {
    let palette = Palette::default();
    let background = vinlab::render::procedural_background(5);
    let empty = render_frame(&SystemState { objects: vec![] }, &background, &palette, 15);
    if empty != background {
        return Err("empty scene differs from background".into());
    }
    let ball = |x: f64| SystemState {
        objects: vec![ObjectState {
            pos: [x, 0.5],
            vel: [0.0; 2],
            mass: 1.0,
            radius: 0.0625,
            charge: 0.0,
            visible: true,
            color: 0,
        }],
    };
    let shift = 1.0 / (15.0 * 32.0);
    let mut moved = 0;
    let positions = 40;
    for k in 0..positions {
        let x = 0.3 + 0.4 * k as f64 / positions as f64;
        let a = render_frame(&ball(x), &background, &palette, 15);
        let b = render_frame(&ball(x + shift), &background, &palette, 15);
        moved += usize::from(a != b);
    }
    if moved < positions {
        return Err(format!(
            "1/480 shift changed pixels at {moved}/{positions} positions"
        ));
    }
    let spec = SimSpec::builtin(ForceLaw::Spring);
    let a = generate(&spec, CifarSplit::Train, 4, 77).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_dataset(&a, dir.path().join("a")).map_err(|e| e.to_string())?;
    let back = read_dataset(dir.path().join("a")).map_err(|e| e.to_string())?;
    let b = generate(&spec, CifarSplit::Train, 4, 77).map_err(|e| e.to_string())?;
    write_dataset(&b, dir.path().join("b")).map_err(|e| e.to_string())?;
    let bytes =
        |d: &str| std::fs::read(dir.path().join(d).join("frames.bin")).map_err(|e| e.to_string());
    let (fa, fb) = (bytes("a")?, bytes("b")?);
    let bit_exact = back == a
        && back
            .state_values()
            .iter()
            .zip(a.state_values())
            .all(|(x, y)| x.to_bits() == y.to_bits());
    check(
        bit_exact && fa == fb,
        format!(
            "empty frame = background; 1/480 shift visible at {moved}/{positions} positions; round trip bit-exact; \
             frames.bin reproduced ({} bytes)",
            fa.len()
        ),
    )
}

// ---- 10

fn metrics() -> Outcome {
    let inl = inverse_normalized_loss(0.042, 0.042).map_err(|e| e.to_string())?;
    let e = euclidean_prediction_error(
        &vec![vec![[0.53, 0.54, 0.0, 0.0]]],
        &vec![vec![[0.5, 0.5, 0.0, 0.0]]],
    )
    .map_err(|e| e.to_string())?[0];
    let mut spec = SimSpec::builtin(ForceLaw::Spring);
    spec.frames = OBSERVED + EVAL_HORIZON;
    let test = generate(&spec, CifarSplit::Test, 10, 3).map_err(|e| e.to_string())?;
    let report = evaluate(&GroundTruth, &test, EVAL_HORIZON, None, 0).map_err(|e| e.to_string())?;
    let worst = report
        .error_by_step
        .iter()
        .map(|i| i.mean)
        .fold(0.0, f64::max);
    check(
        inl == 1.0 && (e - 0.05).abs() < 1e-12 && worst < 1e-6 && report.error_by_step.len() == EVAL_HORIZON,
        format!("INL(self) = {inl}; (0.03, 0.04) -> {e:.6}; ground truth worst error over 50 steps {worst:.1e}"),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let selected = |k: usize| wanted.is_empty() || wanted.contains(&k);
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |k: usize, name: &'static str, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("criterion {k:>2} {name}: PASS ({d})"),
            Err(d) => println!("criterion {k:>2} {name}: FAIL ({d})"),
        }
        results.push((k, name, outcome));
    };
    let quick: [(usize, &'static str, Criterion); 6] = [
        (1, "gradient correctness", gradients),
        (2, "physics conservation", conservation),
        (3, "integrator fidelity", integrator),
        (4, "equivariance", equivariance),
        (5, "architecture audit", architecture),
        (6, "loss schedule", loss_schedule),
    ];
    for (k, name, f) in quick {
        if selected(k) {
            report(k, name, f());
        }
    }
    if selected(7) || selected(8) {
        let profile = Profile::builtin("desk").expect("desk profile");
        match desk_data(&profile) {
            Ok((train_set, test_set)) => {
                if selected(7) {
                    report(
                        7,
                        "desk learning (state)",
                        desk_state_learning(&train_set, &test_set, &profile),
                    );
                }
                if selected(8) {
                    report(
                        8,
                        "desk learning (visual)",
                        desk_visual_learning(&train_set, &test_set, &profile),
                    );
                }
            }
            Err(e) => {
                for k in [7, 8].into_iter().filter(|&k| selected(k)) {
                    report(k, "desk learning", Err(format!("dataset: {e}")));
                }
            }
        }
    }
    if selected(9) {
        report(9, "rendering", rendering());
    }
    if selected(10) {
        report(10, "metric identities", metrics());
    }
    let failed: Vec<usize> = results
        .iter()
        .filter(|r| r.2.is_err())
        .map(|r| r.0)
        .collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
