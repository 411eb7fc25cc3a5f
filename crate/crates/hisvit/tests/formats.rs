use hisvit::checkpoint::Checkpoint;
use hisvit::config::{format_train_config, parse_train_config};
use hisvit::pipeline::{evaluate_scenes, held_out_videos};
use hisvit::report::{read_rows, write_rows, EvalRow, MacsRow};
use hisvit::vstc::{self, read_tensor, write_tensor, Dtype};
use hisvit_core::analysis::{analytic_macs, ComplexityQuery, MsaKind};
use hisvit_core::rng::Philox;
use hisvit_core::train::{TrainConfig, Trainer};
use hisvit_core::Tensor;

fn tiny_train_config(steps: usize) -> TrainConfig {
    let mut cfg = TrainConfig::toy();
    cfg.model = hisvit_core::net::ModelConfig::tiny();
    cfg.frames = 2;
    cfg.height = 16;
    cfg.width = 16;
    cfg.steps = steps;
    cfg.eval_interval = 2;
    cfg
}

#[test]
fn vstc_round_trips_every_dtype() {
    let mut rng = Philox::new(5);
    let t = Tensor::from_fn(&[2, 3, 4, 5], |_| rng.normal()).unwrap();
    let mut buf = Vec::new();
    write_tensor(&mut buf, &t, Dtype::F64).unwrap();
    assert_eq!(buf.len(), 7 + 4 * 4 + 8 * t.len());
    let (back, dtype) = read_tensor(buf.as_slice()).unwrap();
    assert_eq!(dtype, Dtype::F64);
    assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let narrow = t.map(|v| f64::from(v as f32));
    let mut buf = Vec::new();
    write_tensor(&mut buf, &narrow, Dtype::F32).unwrap();
    assert_eq!(read_tensor(buf.as_slice()).unwrap().0, narrow);

    let scalar = Tensor::scalar(3.0);
    let mut buf = Vec::new();
    write_tensor(&mut buf, &scalar, Dtype::U8).unwrap();
    assert_eq!(buf, [b'V', b'S', b'T', b'C', 1, 3, 1, 1, 0, 0, 0, 3]);
    assert_eq!(read_tensor(buf.as_slice()).unwrap().0, scalar);
}

#[test]
fn vstc_rejects_corruption() {
    let t = Tensor::ones(&[2, 2]);
    let mut buf = Vec::new();
    write_tensor(&mut buf, &t, Dtype::F64).unwrap();
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(read_tensor(bad.as_slice()).is_err());
    let mut bad = buf.clone();
    bad[5] = 9;
    assert!(read_tensor(bad.as_slice()).is_err());
    assert!(read_tensor(&buf[..buf.len() - 1]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.vstc");
    let mut long = buf.clone();
    long.push(0);
    std::fs::write(&path, long).unwrap();
    assert!(vstc::load(&path).is_err());
    std::fs::write(&path, &buf).unwrap();
    assert_eq!(vstc::load(&path).unwrap(), t);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut t = Trainer::new(tiny_train_config(3)).unwrap();
    t.run(|_| {}).unwrap();
    let ckpt = Checkpoint::from_trainer(&t);
    let bytes = ckpt.to_bytes();
    let back = Checkpoint::read(bytes.as_slice()).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.history.len(), 3);
    assert!(back.history[0].psnr.is_some() && back.history[1].psnr.is_none());
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let mut straight = Trainer::new(tiny_train_config(4)).unwrap();
    straight.run(|_| {}).unwrap();

    let mut first = Trainer::new(tiny_train_config(2)).unwrap();
    first.run(|_| {}).unwrap();
    let bytes = Checkpoint::from_trainer(&first).to_bytes();
    let mut resumed = Checkpoint::read(bytes.as_slice()).unwrap().into_trainer().unwrap();
    resumed.config.steps = 4;
    resumed.run(|_| {}).unwrap();

    let mut a = Checkpoint::from_trainer(&straight);
    let b = Checkpoint::from_trainer(&resumed);
    a.config.steps = 4;
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn checkpoint_rejects_mismatched_config() {
    let t = Trainer::new(tiny_train_config(1)).unwrap();
    let mut bytes = Checkpoint::from_trainer(&t).to_bytes();
    // widen the extractor in the embedded config text: tensor shapes no longer fit
    let text = format_train_config(&t.config);
    let edited = text.replace("extractor_channels = 4", "extractor_channels = 6");
    assert_eq!(text.len(), edited.len());
    let start = bytes.windows(text.len()).position(|w| w == text.as_bytes()).unwrap();
    bytes[start..start + text.len()].copy_from_slice(edited.as_bytes());
    assert!(Checkpoint::read(bytes.as_slice()).is_err());
}

#[test]
fn config_file_round_trip() {
    let cfg = tiny_train_config(7);
    let text = format_train_config(&cfg);
    assert_eq!(parse_train_config(&text).unwrap(), cfg);
    assert!(parse_train_config(&format!("{text}\n[adam]\nmomentum = 0.9\n")).is_err());
}

#[test]
fn ground_truth_scores_full_marks_and_csv_round_trips() {
    let t = Trainer::new(tiny_train_config(1)).unwrap();
    let ckpt = Checkpoint::from_trainer(&t);
    let videos = held_out_videos(&ckpt, 3).unwrap();
    let one = evaluate_scenes(&ckpt, &videos, 1).unwrap();
    let three = evaluate_scenes(&ckpt, &videos, 3).unwrap();
    assert_eq!(one, three);

    let truth = hisvit_core::analysis::fidelity(&videos[0].1, &videos[0].1).unwrap();
    assert_eq!(truth.psnr_db, 100.0);
    assert!((truth.ssim - 1.0).abs() < 1e-12);

    let rows: Vec<EvalRow> = one.iter().map(Into::into).collect();
    let mut buf = Vec::new();
    write_rows(&mut buf, &rows).unwrap();
    let back: Vec<EvalRow> = read_rows(buf.as_slice()).unwrap();
    assert_eq!(back, rows);
}

#[test]
fn macs_csv_round_trips() {
    let q = ComplexityQuery::new(MsaKind::Sw, 2, 4, 4, 3).window(2, 2);
    let rows = vec![MacsRow::new(&q, analytic_macs(&q).unwrap(), Some(2688), Some(36))];
    let mut buf = Vec::new();
    write_rows(&mut buf, &rows).unwrap();
    let back: Vec<MacsRow> = read_rows(buf.as_slice()).unwrap();
    assert_eq!(back, rows);
}
