use proptest::prelude::*;

use super::*;
use crate::dataset::generate;
use crate::physics::{ForceLaw, SimSpec};
use crate::render::CifarSplit;

fn drift_dataset(sims: usize, law: ForceLaw) -> Dataset {
    let mut spec = SimSpec::builtin(law);
    spec.render.supersample = 3;
    generate(&spec, CifarSplit::Test, sims, 8).unwrap()
}

fn single(p: [f64; 2]) -> Rollout {
    vec![vec![[p[0], p[1], 0.0, 0.0]]]
}

#[test]
fn inl_of_self_is_one() {
    assert_eq!(inverse_normalized_loss(0.37, 0.37).unwrap(), 1.0);
    assert_eq!(inverse_normalized_loss(0.5, 1.0).unwrap(), 0.5);
    assert!(matches!(
        inverse_normalized_loss(0.5, 0.0),
        Err(EvalError::Degenerate(_))
    ));
}

#[test]
fn three_four_five_offset() {
    let e = euclidean_prediction_error(&single([0.33, 0.54]), &single([0.3, 0.5])).unwrap();
    assert!((e[0] - 0.05).abs() < 1e-12);
}

#[test]
fn error_is_mean_over_objects() {
    let pred = vec![vec![[0.05, 0.0, 0.0, 0.0], [0.0, 0.15, 0.0, 0.0]]];
    let truth = vec![vec![[0.0; 4], [0.0; 4]]];
    let e = euclidean_prediction_error(&pred, &truth).unwrap();
    assert!((e[0] - 0.10).abs() < 1e-12);
    assert_eq!(
        euclidean_prediction_error(&truth, &truth).unwrap(),
        vec![0.0]
    );
}

#[test]
fn length_mismatch_is_an_error() {
    let a = single([0.0, 0.0]);
    let mut b = a.clone();
    b.push(a[0].clone());
    assert!(euclidean_prediction_error(&a, &b).is_err());
}

#[test]
fn distance_accumulates_true_path() {
    let truth = vec![vec![[0.1, 0.0, 0.0, 0.0]], vec![[0.1, 0.3, 0.0, 0.0]]];
    let pred = vec![vec![[0.1, 0.0, 0.0, 0.0]], vec![[0.1, 0.2, 0.0, 0.0]]];
    let out = errors_by_distance(&pred, &truth, &[[0.0; 4]]).unwrap();
    assert!((out[0].0 - 0.1).abs() < 1e-12 && out[0].1 == 0.0);
    assert!((out[1].0 - 0.4).abs() < 1e-12 && (out[1].1 - 0.1).abs() < 1e-12);
    assert_eq!(distance_bin(0.0, 20), Some(0));
    assert_eq!(distance_bin(0.4, 20), Some(8));
    assert_eq!(distance_bin(1.0, 20), Some(19));
    assert_eq!(distance_bin(1.01, 20), None);
}

#[test]
fn bootstrap_brackets_the_mean() {
    let samples: Vec<f64> = (0..200).map(|i| (i % 17) as f64).collect();
    let ci = bootstrap_ci(&samples, 500, 1).unwrap();
    assert!(ci.lower <= ci.mean && ci.mean <= ci.upper);
    assert!(ci.upper - ci.lower < 2.0);
    assert_eq!(bootstrap_ci(&[], 10, 1), None);
    let same = bootstrap_ci(&[2.0; 5], 10, 1).unwrap();
    assert_eq!((same.mean, same.lower, same.upper), (2.0, 2.0, 2.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bootstrap_ignores_sample_order(mut xs in prop::collection::vec(-10.0f64..10.0, 1..40), seed in 0u64..100) {
        let a = bootstrap_ci(&xs, 200, seed).unwrap();
        xs.reverse();
        let b = bootstrap_ci(&xs, 200, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn error_invariant_under_joint_translation(
        pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..6),
        shift in (-2.0f64..2.0, -2.0f64..2.0),
    ) {
        let pred: Rollout = vec![pts.iter().map(|p| [p.0, p.1, 0.0, 0.0]).collect()];
        let truth: Rollout = vec![pts.iter().map(|p| [p.2, p.3, 0.0, 0.0]).collect()];
        let mv = |r: &Rollout| -> Rollout {
            r.iter().map(|s| s.iter().map(|k| [k[0] + shift.0, k[1] + shift.1, k[2], k[3]]).collect()).collect()
        };
        let a = euclidean_prediction_error(&pred, &truth).unwrap()[0];
        let b = euclidean_prediction_error(&mv(&pred), &mv(&truth)).unwrap()[0];
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!(a >= 0.0);
    }
}

#[test]
fn report_is_invariant_to_sequence_order() {
    let ds = drift_dataset(6, ForceLaw::Drift);
    let sims: Vec<usize> = (0..6).collect();
    let model: Model<f32> = Model::new(ModelVariant::InFromState, 3, 1);
    let pred = Predictor::predict(&model, &ds, &sims, 10).unwrap();
    let truth = true_rollouts(&ds, &sims, 10).unwrap();
    let origins: Vec<_> = sims
        .iter()
        .map(|&s| to_rows(ds.state(s, OBSERVED - 1), 3))
        .collect();
    let a = build_report("m", "drift", &pred, &truth, &origins, None, 3).unwrap();
    let rev = |v: &[Rollout]| v.iter().rev().cloned().collect::<Vec<_>>();
    let o: Vec<_> = origins.iter().rev().cloned().collect();
    let b = build_report("m", "drift", &rev(&pred), &rev(&truth), &o, None, 3).unwrap();
    assert_eq!(a.error_by_step, b.error_by_step);
    assert_eq!(a.error_by_distance, b.error_by_distance);
    assert!((a.prediction_loss - b.prediction_loss).abs() < 1e-15 * a.prediction_loss.max(1.0));
}

#[test]
fn ground_truth_model_has_no_error() {
    for law in [ForceLaw::Drift, ForceLaw::Spring, ForceLaw::Billiards] {
        let ds = drift_dataset(3, law);
        let report = evaluate(&GroundTruth, &ds, EVAL_HORIZON, None, 1).unwrap();
        assert_eq!(report.error_by_step.len(), EVAL_HORIZON);
        // states are stored as f32
        assert!(
            report.error_by_step.iter().all(|i| i.upper < 1e-6),
            "{law:?}"
        );
    }
}

#[test]
fn report_round_trips_through_json() {
    let ds = drift_dataset(3, ForceLaw::Drift);
    let model: Model<f32> = Model::new(ModelVariant::LstmFromState, 3, 1);
    let report = evaluate(&model, &ds, 12, Some(1e-3), 1).unwrap();
    assert_eq!(EvalReport::from_json(&report.to_json()).unwrap(), report);
    assert!(report.inverse_normalized_loss.unwrap() > 0.0);
    assert_eq!(report.step_csv().lines().count(), 13);
    assert_eq!(report.distance_csv().lines().count(), DISTANCE_BINS + 1);
}

#[test]
fn ground_truth_dynamics_bound_is_one_against_itself() {
    let ds = drift_dataset(2, ForceLaw::Drift);
    let model: Model<f32> = Model::new(ModelVariant::VisionGroundTruthDynamics, 3, 1);
    let r = evaluate(&model, &ds, 8, None, 1).unwrap();
    let again = evaluate(&model, &ds, 8, Some(r.prediction_loss), 1).unwrap();
    assert_eq!(again.inverse_normalized_loss, Some(1.0));
}

#[test]
fn parallel_prediction_matches_serial() {
    let ds = drift_dataset(5, ForceLaw::Drift);
    let sims: Vec<usize> = (0..5).collect();
    let model: Model<f32> = Model::new(ModelVariant::Vin, 3, 1);
    assert_eq!(
        predict_parallel(&model, &ds, &sims, 4).unwrap(),
        Predictor::predict(&model, &ds, &sims, 4).unwrap()
    );
}

#[test]
fn auxiliary_error_of_untrained_encoder_is_finite() {
    let ds = drift_dataset(2, ForceLaw::Drift);
    let model: Model<f32> = Model::new(ModelVariant::Vin, 3, 1);
    let e = auxiliary_position_error(&model, &ds, &[0, 1]).unwrap();
    assert!(e.is_finite() && e > 0.0);
    let state: Model<f32> = Model::new(ModelVariant::InFromState, 3, 1);
    assert!(auxiliary_position_error(&state, &ds, &[0]).is_err());
}

fn read_png(path: &Path) -> (u32, u32, Vec<u8>) {
    let dec = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(path).unwrap()));
    let mut reader = dec.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    buf.truncate(info.buffer_size());
    (info.width, info.height, buf)
}

fn halves(rgb: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let row = FRAME_SIZE * 3;
    let (mut l, mut r) = (Vec::new(), Vec::new());
    for chunk in rgb.chunks(2 * row) {
        l.extend_from_slice(&chunk[..row]);
        r.extend_from_slice(&chunk[row..]);
    }
    (l, r)
}

#[test]
fn zero_horizon_renders_observed_frames_only() {
    let ds = drift_dataset(1, ForceLaw::Drift);
    let dir = tempfile::tempdir().unwrap();
    let paths = render_rollout(&ds, 0, &Vec::new(), dir.path(), false).unwrap();
    assert_eq!(paths.len(), OBSERVED);
    for (t, p) in paths.iter().enumerate() {
        let (w, h, rgb) = read_png(p);
        assert_eq!((w, h), (64, 32));
        let (l, r) = halves(&rgb);
        assert_eq!(l, r);
        assert_eq!(l, ds.frame(0, t));
    }
}

#[test]
fn true_states_give_identical_panels_and_trail_is_max() {
    let ds = drift_dataset(1, ForceLaw::Drift);
    let truth = true_rollouts(&ds, &[0], 5).unwrap().remove(0);
    let dir = tempfile::tempdir().unwrap();
    let paths = render_rollout(&ds, 0, &truth, dir.path(), true).unwrap();
    assert_eq!(paths.len(), OBSERVED + 5 + 1);
    for p in &paths[..OBSERVED + 5] {
        let (_, _, rgb) = read_png(p);
        let (l, r) = halves(&rgb);
        assert_eq!(l, r);
    }
    let (_, _, trail) = read_png(paths.last().unwrap());
    let (l, r) = halves(&trail);
    assert_eq!(l, r);
    // every single black-background frame is dominated by the trail
    let base = ds.initial_state(0).unwrap();
    let black = Frame::solid([0, 0, 0]);
    let mut lit = 0;
    for t in 0..OBSERVED + 5 {
        let kin = to_rows(ds.state(0, t), 3);
        let f = render_frame(&base.with_kinematics(&kin), &black, &Palette::default(), 3);
        assert!(f.bytes().iter().zip(&l).all(|(a, b)| a <= b));
        lit = lit.max(f.bytes().iter().filter(|&&v| v > 0).count());
    }
    assert!(
        l.iter().filter(|&&v| v > 0).count() > lit,
        "trail spans more pixels than any frame"
    );
}

#[test]
fn horizon_longer_than_dataset_is_rejected() {
    let ds = drift_dataset(1, ForceLaw::Drift);
    assert!(true_rollouts(&ds, &[0], 64).is_err());
}
