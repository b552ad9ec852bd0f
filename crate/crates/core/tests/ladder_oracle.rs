use ladder_core::evaluation::{match_detections, report};
use ladder_core::geometry::{Frame, Quad};
use ladder_core::ladder::{run_ladder, DetectionFile, LadderConfig, OraclePredictor};
use ladder_core::synth::{generate_dataset, ChainSpecRange};
use ladder_core::{ErrorKind, GrayImage};

#[test]
fn oracle_reproduces_random_chains() {
    for (preset, seed) in [("lumbar", 11u64), ("wholespine", 12)] {
        let set = generate_dataset(6, &ChainSpecRange::preset(preset).unwrap(), seed).unwrap();
        for s in &set {
            let truth = &s.annotation.quads;
            let oracle = OraclePredictor::new(truth.clone(), 56).unwrap();
            let state = run_ladder(&s.image, &truth[0], &oracle, &LadderConfig::new(truth.len(), 56)).unwrap();
            assert_eq!(state.detections.len(), truth.len());
            for (d, t) in state.detections.iter().zip(truth) {
                assert!(d.max_corner_distance(t) < 1e-6, "{}: {d:?} vs {t:?}", s.name);
            }
            let r = report(&match_detections(&state.detections, truth), None).unwrap();
            assert_eq!((r.recall, r.precision), (1.0, 1.0));
        }
    }
}

#[test]
fn seed_outside_image_is_a_data_error() {
    let img = GrayImage::filled(100, 100, 0.5);
    let far = Quad::from_xy(
        [[500.0, 500.0], [520.0, 500.0], [520.0, 510.0], [500.0, 510.0]],
        Frame::Image,
    )
    .unwrap();
    let oracle = OraclePredictor::new(vec![far], 56).unwrap();
    let err = run_ladder(&img, &far, &oracle, &LadderConfig::new(3, 56)).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Data, "{err}");
}

#[test]
fn zero_iterations_is_a_usage_error() {
    let set = generate_dataset(1, &ChainSpecRange::lumbar_like(), 3).unwrap();
    let truth = &set[0].annotation.quads;
    let oracle = OraclePredictor::new(truth.clone(), 56).unwrap();
    let err = run_ladder(&set[0].image, &truth[0], &oracle, &LadderConfig::new(0, 56)).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Usage);
}

#[test]
fn detection_file_round_trip() {
    let set = generate_dataset(1, &ChainSpecRange::lumbar_like(), 4).unwrap();
    let truth = &set[0].annotation.quads;
    let oracle = OraclePredictor::new(truth.clone(), 56).unwrap();
    let state = run_ladder(&set[0].image, &truth[0], &oracle, &LadderConfig::lumbar(56)).unwrap();
    let file = DetectionFile::from_state(&set[0].name, &truth[0], "S1", 6, &state);
    assert_eq!(file.labels, ["S1", "L5", "L4", "L3", "L2", "L1"]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.json");
    file.save(&path).unwrap();
    let back = DetectionFile::load(&path).unwrap();
    assert_eq!(back.quads().unwrap(), state.detections);
}
